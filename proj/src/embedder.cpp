#include "imagerag/embedder.hpp"

#include "imagerag/error.hpp"
#include "imagerag/http.hpp"

#include <json.hpp>

#include <filesystem>

namespace imagerag {

using nlohmann::json;

namespace {

std::vector<float> checked_unit(std::vector<float> raw, std::optional<std::size_t> expected,
                                std::string_view what) {
    if (expected && raw.size() != *expected) {
        throw UsageError("embedder returned dimension " + std::to_string(raw.size()) +
                         " for " + std::string(what) + ", expected " +
                         std::to_string(*expected));
    }
    if (raw.empty() || !(l2_norm(raw) > 0.0)) {
        throw UsageError("embedder returned a zero vector for " + std::string(what));
    }
    return normalized(raw);
}

std::string mime_for(const std::filesystem::path& p) {
    const auto ext = to_lower(p.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    if (ext == ".webp") return "image/webp";
    if (ext == ".json") return "application/json";
    return "application/octet-stream";
}

} // namespace

std::vector<float> embed_text(EmbedderClient& embedder, std::string_view text,
                              std::optional<std::size_t> expected_dimension) {
    if (trim(text).empty()) throw UsageError("cannot embed empty text");
    return checked_unit(embedder.embed_text(text), expected_dimension, "text");
}

std::vector<float> embed_image(EmbedderClient& embedder, const ImageRef& image,
                               std::optional<std::size_t> expected_dimension) {
    if (image.uri.empty()) throw UsageError("cannot embed an empty image reference");
    return checked_unit(embedder.embed_image(image), expected_dimension, image.uri);
}

std::string image_payload(const ImageRef& image) {
    if (is_remote_uri(image.uri) || is_data_uri(image.uri)) return image.uri;
    const std::filesystem::path path(image.uri);
    return "data:" + mime_for(path) + ";base64," + base64_encode(read_file(path));
}

// ---------------------------------------------------------------------------

void MockEmbedder::set_text(std::string text, std::vector<float> vector) {
    std::lock_guard lock(mu_);
    texts_[std::move(text)] = std::move(vector);
}

void MockEmbedder::set_image(std::string uri, std::vector<float> vector) {
    std::lock_guard lock(mu_);
    images_[std::move(uri)] = std::move(vector);
}

std::vector<float> MockEmbedder::embed_text(std::string_view text) {
    std::lock_guard lock(mu_);
    ++text_calls_;
    if (auto it = texts_.find(text); it != texts_.end()) return it->second;
    if (!dimension_) throw TransportError("mock embedder has no vector for text '" + std::string(text) + "'");
    return hashed_unit_vector("text:" + std::string(text), *dimension_);
}

std::vector<float> MockEmbedder::embed_image(const ImageRef& image) {
    {
        std::lock_guard lock(mu_);
        ++image_calls_;
        if (auto it = images_.find(image.uri); it != images_.end()) return it->second;
    }
    std::error_code ec;
    if (!is_remote_uri(image.uri) && std::filesystem::is_regular_file(image.uri, ec)) {
        auto j = json::parse(read_file(image.uri), nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("embedding")) {
            return j["embedding"].get<std::vector<float>>();
        }
    }
    if (!dimension_) throw TransportError("mock embedder has no vector for image '" + image.uri + "'");
    return hashed_unit_vector("image:" + image.uri, *dimension_);
}

std::size_t MockEmbedder::text_calls() const {
    std::lock_guard lock(mu_);
    return text_calls_;
}

std::size_t MockEmbedder::image_calls() const {
    std::lock_guard lock(mu_);
    return image_calls_;
}

// ---------------------------------------------------------------------------

HttpEmbedder::HttpEmbedder(std::string endpoint, std::string model_tag,
                           std::chrono::milliseconds timeout, int transport_retries)
    : endpoint_(std::move(endpoint)), model_(std::move(model_tag)), timeout_(timeout),
      transport_retries_(transport_retries) {
    if (timeout_.count() <= 0) throw UsageError("embedder timeout must be positive");
}

std::vector<float> HttpEmbedder::embed_text(std::string_view text) {
    return request(json{{"model", model_}, {"text", text}}.dump());
}

std::vector<float> HttpEmbedder::embed_image(const ImageRef& image) {
    return request(json{{"model", model_}, {"image", image_payload(image)}}.dump());
}

std::vector<float> HttpEmbedder::request(const std::string& body) {
    for (int attempt = 0;; ++attempt) {
        try {
            auto res = http_post_json(endpoint_, body, {}, timeout_);
            if (res.status >= 500) throw TransportError("embedder HTTP " + std::to_string(res.status));
            if (res.status != 200) {
                throw ResponseError("embedder HTTP " + std::to_string(res.status), res.body);
            }
            auto j = json::parse(res.body, nullptr, false);
            if (j.is_discarded() || !j.contains("embedding") || !j["embedding"].is_array()) {
                throw ResponseError("embedder response lacks an \"embedding\" array", res.body);
            }
            return j["embedding"].get<std::vector<float>>();
        } catch (const TransportError&) {
            if (attempt >= transport_retries_) throw;
        }
    }
}

} // namespace imagerag
