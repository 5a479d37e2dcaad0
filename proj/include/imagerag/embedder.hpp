#pragma once

#include "imagerag/common.hpp"

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace imagerag {

/// Maps text and images into one embedding space. Implementations must
/// tolerate concurrent calls.
class EmbedderClient {
public:
    virtual ~EmbedderClient() = default;

    virtual std::vector<float> embed_text(std::string_view text) = 0;
    virtual std::vector<float> embed_image(const ImageRef& image) = 0;

    /// Names the embedding space, e.g. "clip-vit-b32".
    virtual std::string tag() const = 0;
};

/// Embeds `text` and normalizes the result. Throws UsageError on empty text,
/// a zero vector, or (when `expected_dimension` is given) a dimension mismatch.
std::vector<float> embed_text(EmbedderClient& embedder, std::string_view text,
                              std::optional<std::size_t> expected_dimension = std::nullopt);

std::vector<float> embed_image(EmbedderClient& embedder, const ImageRef& image,
                               std::optional<std::size_t> expected_dimension = std::nullopt);

/// Scripted embedder for offline runs. Lookups go, in order, through the
/// explicit text/image tables; for images, a JSON manifest on disk carrying an
/// "embedding" array (what the mock T2I backend writes); and finally a
/// hash-derived pseudo-random unit vector when `dimension` is set.
class MockEmbedder : public EmbedderClient {
public:
    explicit MockEmbedder(std::string tag, std::optional<std::size_t> dimension = std::nullopt)
        : tag_(std::move(tag)), dimension_(dimension) {}

    void set_text(std::string text, std::vector<float> vector);
    void set_image(std::string uri, std::vector<float> vector);

    std::vector<float> embed_text(std::string_view text) override;
    std::vector<float> embed_image(const ImageRef& image) override;
    std::string tag() const override { return tag_; }

    std::size_t text_calls() const;
    std::size_t image_calls() const;

private:
    std::string tag_;
    std::optional<std::size_t> dimension_;
    mutable std::mutex mu_;
    std::map<std::string, std::vector<float>, std::less<>> texts_;
    std::map<std::string, std::vector<float>, std::less<>> images_;
    std::size_t text_calls_ = 0;
    std::size_t image_calls_ = 0;
};

/// Embedding service over HTTP. Request body:
///   {"model": <tag>, "text": "..."}  or  {"model": <tag>, "image": <url or data URI>}
/// Response: {"embedding": [float, ...]}. Local image paths are sent inline as
/// base64 data URIs.
class HttpEmbedder : public EmbedderClient {
public:
    HttpEmbedder(std::string endpoint, std::string model_tag,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30),
                 int transport_retries = 2);

    std::vector<float> embed_text(std::string_view text) override;
    std::vector<float> embed_image(const ImageRef& image) override;
    std::string tag() const override { return model_; }

private:
    std::vector<float> request(const std::string& body);

    std::string endpoint_;
    std::string model_;
    std::chrono::milliseconds timeout_;
    int transport_retries_;
};

/// Returns the image as something a remote service can fetch: URLs and data
/// URIs pass through, local files become base64 data URIs.
std::string image_payload(const ImageRef& image);

} // namespace imagerag
