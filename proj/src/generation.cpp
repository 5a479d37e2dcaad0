#include "imagerag/generation.hpp"

#include "imagerag/error.hpp"
#include "imagerag/http.hpp"

namespace imagerag {

using nlohmann::json;

namespace {

constexpr std::string_view kTemplateHead = "According to these examples of ";
constexpr std::string_view kTemplateTail = ", generate ";
constexpr std::string_view kSubjectHead = "The subject is ";

void append_groups(std::string& text, std::vector<ImageRef>& images,
                   const std::vector<ReferenceGroup>& groups, PlaceholderStyle style) {
    text += kTemplateHead;
    bool first_group = true;
    for (const auto& group : groups) {
        if (!first_group) text += ", ";
        first_group = false;
        text += group.caption;
        text += ':';
        bool first_image = true;
        for (const auto& image : group.images) {
            if (!first_image) text += ", ";
            first_image = false;
            images.push_back(image);
            text += placeholder(images.size(), style);
        }
    }
}

std::size_t count_images(const std::vector<ReferenceGroup>& groups) {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.images.size();
    return n;
}

void check_groups(const std::vector<ReferenceGroup>& groups) {
    if (groups.empty()) throw UsageError("augmented prompt needs at least one reference group");
    for (const auto& g : groups) {
        if (g.images.empty()) throw UsageError("reference group '" + g.caption + "' has no images");
        if (trim(g.caption).empty()) throw UsageError("reference group caption is empty");
    }
}

} // namespace

void GenerationParams::validate() const {
    if (width <= 0 || height <= 0) throw UsageError("width and height must be positive");
    if (adapter_scale && (*adapter_scale < 0.0 || *adapter_scale > 1.0)) {
        throw UsageError("adapter_scale must lie in [0, 1]");
    }
}

json to_json(const GenerationParams& p) {
    json j{{"guidance_scale", p.guidance_scale}, {"width", p.width}, {"height", p.height}};
    if (p.image_guidance_scale) j["image_guidance_scale"] = *p.image_guidance_scale;
    if (p.adapter_scale) j["adapter_scale"] = *p.adapter_scale;
    if (p.seed) j["seed"] = *p.seed;
    return j;
}

GenerationParams params_from_json(const json& j, const GenerationParams& base) {
    if (!j.is_object()) throw FormatError("generation params must be a JSON object");
    GenerationParams p = base;
    try {
        if (j.contains("guidance_scale")) p.guidance_scale = j["guidance_scale"].get<double>();
        if (j.contains("image_guidance_scale")) p.image_guidance_scale = j["image_guidance_scale"].get<double>();
        if (j.contains("width")) p.width = j["width"].get<int>();
        if (j.contains("height")) p.height = j["height"].get<int>();
        if (j.contains("adapter_scale")) p.adapter_scale = j["adapter_scale"].get<double>();
        if (j.contains("seed")) p.seed = j["seed"].get<std::int64_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad generation params: ") + e.what());
    }
    p.validate();
    return p;
}

PlaceholderStyle placeholder_style_from_string(std::string_view s) {
    if (s == "indexed") return PlaceholderStyle::indexed;
    if (s == "omnigen") return PlaceholderStyle::omnigen;
    throw FormatError("unknown placeholder style '" + std::string(s) + "'");
}

std::string placeholder(std::size_t one_based_index, PlaceholderStyle style) {
    const auto k = std::to_string(one_based_index);
    switch (style) {
    case PlaceholderStyle::indexed: return "<img" + k + ">";
    case PlaceholderStyle::omnigen: return "<img><|image_" + k + "|></img>";
    }
    return {};
}

void BackendCapabilities::validate() const {
    if (max_reference_images < 0) throw FormatError("max_reference_images must be >= 0");
    if (supports_personal_subject && max_reference_images < 2) {
        throw FormatError("personalization needs max_reference_images >= 2");
    }
    default_params.validate();
}

BackendProfile backend_profile_from_json(const json& j) {
    BackendProfile profile;
    try {
        profile.name = j.at("name").get<std::string>();
        profile.endpoint = j.value("endpoint", "");
        profile.capabilities.max_reference_images = j.at("max_reference_images").get<int>();
        profile.capabilities.supports_personal_subject = j.value("supports_personal_subject", false);
        profile.capabilities.default_params =
            params_from_json(j.value("default_params", json::object()));
        profile.placeholder_style =
            placeholder_style_from_string(j.value("placeholder_style", "indexed"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad backend profile: ") + e.what());
    }
    profile.capabilities.validate();
    return profile;
}

BackendProfile load_backend_profile(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw UsageError("backend profile not found: " + path.string());
    }
    auto j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw FormatError("backend profile is not valid JSON: " + path.string());
    return backend_profile_from_json(j);
}

AugmentedPrompt render_template(std::string_view prompt, const std::vector<ReferenceGroup>& groups,
                                std::size_t max_images, PlaceholderStyle style) {
    check_groups(groups);
    const std::size_t n = count_images(groups);
    if (n > max_images) {
        throw CapabilityError(std::to_string(n) + " reference images exceed the backend limit of " +
                              std::to_string(max_images));
    }
    AugmentedPrompt out;
    out.groups = groups;
    append_groups(out.text, out.images, groups, style);
    out.text += kTemplateTail;
    out.text += prompt;
    return out;
}

AugmentedPrompt render_personalized(std::string_view prompt, const ImageRef& subject,
                                    const std::vector<ReferenceGroup>& groups,
                                    const BackendCapabilities& capabilities,
                                    PlaceholderStyle style) {
    if (!capabilities.supports_personal_subject) {
        throw CapabilityError("backend does not support a personal subject image");
    }
    check_groups(groups);
    const std::size_t n = 1 + count_images(groups);
    const auto cap = static_cast<std::size_t>(capabilities.max_reference_images);
    if (n > cap) {
        throw CapabilityError("subject plus " + std::to_string(n - 1) +
                              " references exceed the backend limit of " + std::to_string(cap));
    }
    AugmentedPrompt out;
    out.groups = groups;
    out.subject = subject;
    out.images.push_back(subject);
    out.text = std::string(kSubjectHead) + placeholder(1, style) + ". ";
    append_groups(out.text, out.images, groups, style);
    out.text += kTemplateTail;
    out.text += prompt;
    return out;
}

std::string extract_base_prompt(std::string_view text) {
    std::string_view body = text;
    if (body.starts_with(kSubjectHead)) {
        const auto dot = body.find(". ");
        if (dot != std::string_view::npos) body.remove_prefix(dot + 2);
    }
    if (!body.starts_with(kTemplateHead)) return std::string(text);
    const auto tail = body.rfind(kTemplateTail);
    if (tail == std::string_view::npos) return std::string(text);
    return std::string(body.substr(tail + kTemplateTail.size()));
}

json to_json(const T2iRequest& request, bool inline_images) {
    json images = json::array();
    for (const auto& img : request.images) {
        images.push_back(inline_images ? image_payload(img) : img.uri);
    }
    return {{"prompt", request.prompt}, {"images", std::move(images)},
            {"params", to_json(request.params)}};
}

// ---------------------------------------------------------------------------

MockT2iClient::MockT2iClient(std::filesystem::path artifact_dir,
                             std::optional<ConditioningWorld> world)
    : dir_(std::move(artifact_dir)), world_(std::move(world)) {}

ImageRef MockT2iClient::submit(const T2iRequest& request) {
    const json wire = to_json(request);
    const std::string hash = sha256_hex(wire.dump());

    json manifest{{"backend", "mock"}, {"request_hash", hash}, {"request", wire}};
    if (world_) {
        const auto prompt_vec =
            embed_text(*world_->prompt_space, extract_base_prompt(request.prompt));
        std::vector<double> sum(prompt_vec.begin(), prompt_vec.end());
        for (const auto& img : request.images) {
            const auto ref = embed_image(*world_->reference_space, img, prompt_vec.size());
            for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += ref[i];
        }
        std::vector<float> mean(sum.size());
        const double count = 1.0 + static_cast<double>(request.images.size());
        for (std::size_t i = 0; i < sum.size(); ++i) mean[i] = static_cast<float>(sum[i] / count);
        manifest["embedding"] = normalized(mean);
    }

    const auto path = dir_ / (hash + ".json");
    write_file(path, manifest.dump(2) + "\n");
    {
        std::lock_guard lock(mu_);
        requests_.push_back(request);
    }
    return ImageRef{path.string()};
}

std::vector<T2iRequest> MockT2iClient::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

// ---------------------------------------------------------------------------

HttpT2iClient::HttpT2iClient(std::string endpoint, std::filesystem::path artifact_dir,
                             std::chrono::milliseconds timeout, int transport_retries)
    : endpoint_(std::move(endpoint)), dir_(std::move(artifact_dir)), timeout_(timeout),
      transport_retries_(transport_retries) {
    if (timeout_.count() <= 0) throw UsageError("T2I timeout must be positive");
}

ImageRef HttpT2iClient::submit(const T2iRequest& request) {
    const std::string body = to_json(request, true).dump();
    for (int attempt = 0;; ++attempt) {
        try {
            auto res = http_post_json(endpoint_, body, {}, timeout_);
            if (res.status >= 500) throw TransportError("T2I HTTP " + std::to_string(res.status));
            auto j = json::parse(res.body, nullptr, false);
            if (res.status != 200 || j.is_discarded() || !j.contains("image") || !j["image"].is_string()) {
                std::string why = "T2I backend failure (HTTP " + std::to_string(res.status) + ")";
                if (!j.is_discarded() && j.contains("error")) why += ": " + j["error"].dump();
                throw ResponseError(why, res.body);
            }
            std::string image = j["image"].get<std::string>();
            if (is_remote_uri(image) || image.starts_with("/")) return ImageRef{image};
            if (is_data_uri(image)) {
                const auto comma = image.find(',');
                if (comma == std::string::npos) throw ResponseError("malformed data URI", res.body);
                image = image.substr(comma + 1);
            }
            const std::string bytes = base64_decode(image);
            const auto path = dir_ / (sha256_hex(bytes) + ".png");
            write_file(path, bytes);
            return ImageRef{path.string()};
        } catch (const TransportError&) {
            if (attempt >= transport_retries_) throw;
        }
    }
}

// ---------------------------------------------------------------------------

GenerationResult generate(T2iClient& client, const BackendCapabilities& capabilities,
                          const AugmentedPrompt& prompt, const GenerationParams& params) {
    params.validate();
    if (prompt.images.size() > static_cast<std::size_t>(capabilities.max_reference_images)) {
        throw CapabilityError(std::to_string(prompt.images.size()) +
                              " attachments exceed the backend limit of " +
                              std::to_string(capabilities.max_reference_images));
    }
    T2iRequest request{prompt.text, prompt.images, params};
    GenerationResult result;
    result.backend_request = to_json(request);
    result.params_used = params;
    result.image = client.submit(request);
    return result;
}

GenerationResult generate(T2iClient& client, const BackendCapabilities& capabilities,
                          std::string_view prompt, const GenerationParams& params) {
    if (trim(prompt).empty()) throw UsageError("generation prompt must be non-empty");
    AugmentedPrompt plain;
    plain.text = std::string(prompt);
    return generate(client, capabilities, plain, params);
}

} // namespace imagerag
