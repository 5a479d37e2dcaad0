#pragma once

#include "imagerag/common.hpp"
#include "imagerag/embedder.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace imagerag {

struct GenerationParams {
    double guidance_scale = 2.5;
    std::optional<double> image_guidance_scale;
    int width = 1024;
    int height = 1024;
    std::optional<double> adapter_scale;
    std::optional<std::int64_t> seed;

    void validate() const;
    bool operator==(const GenerationParams&) const = default;
};

nlohmann::json to_json(const GenerationParams& params);

/// Reads params from `j`, taking any field it lacks from `base`.
GenerationParams params_from_json(const nlohmann::json& j, const GenerationParams& base = {});

enum class PlaceholderStyle {
    indexed, // <img1>, <img2>, ...
    omnigen, // <img><|image_1|></img>, ...
};

PlaceholderStyle placeholder_style_from_string(std::string_view s);
std::string placeholder(std::size_t one_based_index, PlaceholderStyle style);

struct BackendCapabilities {
    int max_reference_images = 0;
    bool supports_personal_subject = false;
    GenerationParams default_params;

    void validate() const;
};

struct BackendProfile {
    std::string name;
    std::string endpoint;
    BackendCapabilities capabilities;
    PlaceholderStyle placeholder_style = PlaceholderStyle::indexed;
};

/// Profile JSON: {name, endpoint, max_reference_images,
/// supports_personal_subject, default_params, placeholder_style?}.
BackendProfile load_backend_profile(const std::filesystem::path& path);
BackendProfile backend_profile_from_json(const nlohmann::json& j);

struct ReferenceGroup {
    std::string caption;
    std::vector<ImageRef> images;
};

struct AugmentedPrompt {
    std::string text;
    std::vector<ImageRef> images; // in placeholder order
    std::vector<ReferenceGroup> groups;
    std::optional<ImageRef> subject;
};

/// "According to these examples of <c1>:<img1>, <img2>, <c2>:<img3>, generate <p>".
/// Throws UsageError on empty groups, CapabilityError past `max_images`.
AugmentedPrompt render_template(std::string_view prompt, const std::vector<ReferenceGroup>& groups,
                                std::size_t max_images,
                                PlaceholderStyle style = PlaceholderStyle::indexed);

/// Subject image first, then the concept groups:
/// "The subject is <img1>. According to these examples of <c1>:<img2>, generate <p>".
AugmentedPrompt render_personalized(std::string_view prompt, const ImageRef& subject,
                                    const std::vector<ReferenceGroup>& groups,
                                    const BackendCapabilities& capabilities,
                                    PlaceholderStyle style = PlaceholderStyle::indexed);

/// Recovers <p> from a rendered template; returns the text unchanged if it
/// is not one.
std::string extract_base_prompt(std::string_view text);

struct T2iRequest {
    std::string prompt;
    std::vector<ImageRef> images;
    GenerationParams params;
};

/// Wire body {prompt, images, params}. With `inline_images`, local files are
/// sent as base64 data URIs.
nlohmann::json to_json(const T2iRequest& request, bool inline_images = false);

struct GenerationResult {
    ImageRef image;
    nlohmann::json backend_request;
    GenerationParams params_used;
};

class T2iClient {
public:
    virtual ~T2iClient() = default;
    /// Produces one image. Throws TransportError or ResponseError.
    virtual ImageRef submit(const T2iRequest& request) = 0;
};

/// Lets the mock backend react to its inputs: the output embedding is the
/// normalized mean of the prompt embedding and every reference embedding.
struct ConditioningWorld {
    std::shared_ptr<EmbedderClient> prompt_space;
    std::shared_ptr<EmbedderClient> reference_space;
};

/// Offline backend. Each request becomes `<artifact_dir>/<sha256>.json`, a
/// manifest echoing the request; identical requests produce byte-identical
/// files. With a ConditioningWorld the manifest also carries "embedding".
class MockT2iClient : public T2iClient {
public:
    explicit MockT2iClient(std::filesystem::path artifact_dir,
                           std::optional<ConditioningWorld> world = std::nullopt);

    ImageRef submit(const T2iRequest& request) override;

    std::vector<T2iRequest> requests() const;

private:
    std::filesystem::path dir_;
    std::optional<ConditioningWorld> world_;
    mutable std::mutex mu_;
    std::vector<T2iRequest> requests_;
};

/// HTTP backend: POST {prompt, images, params} -> {image: uri | base64}.
/// Base64 payloads are written under `artifact_dir`.
class HttpT2iClient : public T2iClient {
public:
    HttpT2iClient(std::string endpoint, std::filesystem::path artifact_dir,
                  std::chrono::milliseconds timeout = std::chrono::minutes(5),
                  int transport_retries = 1);

    ImageRef submit(const T2iRequest& request) override;

private:
    std::string endpoint_;
    std::filesystem::path dir_;
    std::chrono::milliseconds timeout_;
    int transport_retries_;
};

/// Sends `prompt` with its attachments. Rejects requests carrying more images
/// than the backend accepts.
GenerationResult generate(T2iClient& client, const BackendCapabilities& capabilities,
                          const AugmentedPrompt& prompt, const GenerationParams& params);

GenerationResult generate(T2iClient& client, const BackendCapabilities& capabilities,
                          std::string_view prompt, const GenerationParams& params);

} // namespace imagerag
