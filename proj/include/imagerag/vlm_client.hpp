#pragma once

#include "imagerag/common.hpp"

#include <json.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace imagerag {

struct ContentPart {
    enum class Kind { text, image };

    Kind kind = Kind::text;
    std::string text;
    ImageRef image;

    static ContentPart of_text(std::string t) { return {Kind::text, std::move(t), {}}; }
    static ContentPart of_image(ImageRef img) { return {Kind::image, {}, std::move(img)}; }
};

struct ChatMessage {
    std::string role;
    std::vector<ContentPart> content;

    static ChatMessage user(std::vector<ContentPart> parts) { return {"user", std::move(parts)}; }
    static ChatMessage assistant(std::string text) {
        return {"assistant", {ContentPart::of_text(std::move(text))}};
    }
};

using Conversation = std::vector<ChatMessage>;

struct ChatRequest {
    std::string model;
    double temperature = 0.0;
    Conversation messages;
};

/// Chat-completion request body. Text parts become {"type":"text","text":...};
/// image parts become {"type":"image_url","image_url":{"url":...}}. With
/// `inline_images`, local files are embedded as base64 data URIs; otherwise
/// the reference is written as given.
nlohmann::json to_json(const ChatRequest& request, bool inline_images = false);

/// Extracts choices[0].message.content. Throws ResponseError on any other shape.
std::string parse_chat_response(const std::string& body);

/// One round trip to a chat model. Throws TransportError on failure.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
};

/// OpenAI-compatible chat-completion endpoint.
class HttpChatTransport : public ChatTransport {
public:
    HttpChatTransport(std::string endpoint, std::string api_key,
                      std::chrono::milliseconds timeout);

    std::string complete(const ChatRequest& request) override;

private:
    std::string endpoint_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
};

/// Replays scripted replies in order and records every request it receives.
/// A reply with `transport_error` set simulates a failed round trip. Running
/// past the end of the script is a transport error.
class ScriptedChatTransport : public ChatTransport {
public:
    struct Reply {
        std::string content;
        bool transport_error = false;
    };

    ScriptedChatTransport() = default;
    explicit ScriptedChatTransport(std::vector<Reply> replies);

    /// Reads the "vlm" / "vlm_error" lines of a JSON-lines transcript; other
    /// keys are ignored so one transcript can also script the embedders.
    static std::shared_ptr<ScriptedChatTransport> from_transcript(const std::filesystem::path& path);

    void push(std::string content);
    void push_transport_error();

    std::string complete(const ChatRequest& request) override;

    std::vector<ChatRequest> requests() const;
    std::size_t remaining() const;

private:
    mutable std::mutex mu_;
    std::deque<Reply> replies_;
    std::vector<ChatRequest> requests_;
};

struct VlmClientConfig {
    std::string model_name = "gpt-4o-2024-08-06";
    std::chrono::milliseconds timeout = std::chrono::seconds(60);
    int transport_retries = 2;
};

/// Model name, timeout and transport retry budget wrapped around a transport.
/// Shareable across threads when the transport is.
class VlmClient {
public:
    VlmClient(std::shared_ptr<ChatTransport> transport, VlmClientConfig config = {});

    /// Sends the conversation; retries transport failures up to
    /// `transport_retries` extra times before rethrowing.
    std::string complete(const Conversation& messages, double temperature);

    const VlmClientConfig& config() const noexcept { return config_; }

private:
    std::shared_ptr<ChatTransport> transport_;
    VlmClientConfig config_;
};

} // namespace imagerag
