#include "imagerag/vlm_client.hpp"

#include "imagerag/embedder.hpp"
#include "imagerag/error.hpp"
#include "imagerag/http.hpp"

#include <fstream>

namespace imagerag {

using nlohmann::json;

json to_json(const ChatRequest& request, bool inline_images) {
    json messages = json::array();
    for (const auto& msg : request.messages) {
        json parts = json::array();
        for (const auto& part : msg.content) {
            if (part.kind == ContentPart::Kind::text) {
                parts.push_back({{"type", "text"}, {"text", part.text}});
            } else {
                const std::string url = inline_images ? image_payload(part.image) : part.image.uri;
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
            }
        }
        messages.push_back({{"role", msg.role}, {"content", std::move(parts)}});
    }
    return {{"model", request.model},
            {"temperature", request.temperature},
            {"messages", std::move(messages)}};
}

std::string parse_chat_response(const std::string& body) {
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw ResponseError("chat response is not JSON", body);
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        if (content.is_array()) {
            std::string text;
            for (const auto& part : content) {
                if (part.value("type", "") == "text") text += part.value("text", "");
            }
            return text;
        }
    } catch (const json::exception&) {
    }
    throw ResponseError("chat response lacks choices[0].message.content", body);
}

// ---------------------------------------------------------------------------

HttpChatTransport::HttpChatTransport(std::string endpoint, std::string api_key,
                                     std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {
    if (timeout_.count() <= 0) throw UsageError("VLM timeout must be positive");
}

std::string HttpChatTransport::complete(const ChatRequest& request) {
    std::vector<std::pair<std::string, std::string>> headers;
    if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
    auto res = http_post_json(endpoint_, to_json(request, true).dump(), headers, timeout_);
    if (res.status == 429 || res.status >= 500) {
        throw TransportError("chat endpoint returned HTTP " + std::to_string(res.status));
    }
    if (res.status != 200) {
        throw ResponseError("chat endpoint returned HTTP " + std::to_string(res.status), res.body);
    }
    return parse_chat_response(res.body);
}

// ---------------------------------------------------------------------------

ScriptedChatTransport::ScriptedChatTransport(std::vector<Reply> replies)
    : replies_(replies.begin(), replies.end()) {}

std::shared_ptr<ScriptedChatTransport>
ScriptedChatTransport::from_transcript(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open mock transcript " + path.string());
    auto transport = std::make_shared<ScriptedChatTransport>();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a JSON object");
        }
        if (j.contains("vlm")) transport->push(j["vlm"].get<std::string>());
        if (j.contains("vlm_error")) transport->push_transport_error();
    }
    return transport;
}

void ScriptedChatTransport::push(std::string content) {
    std::lock_guard lock(mu_);
    replies_.push_back({std::move(content), false});
}

void ScriptedChatTransport::push_transport_error() {
    std::lock_guard lock(mu_);
    replies_.push_back({{}, true});
}

std::string ScriptedChatTransport::complete(const ChatRequest& request) {
    std::lock_guard lock(mu_);
    requests_.push_back(request);
    if (replies_.empty()) throw TransportError("scripted transcript exhausted");
    Reply reply = std::move(replies_.front());
    replies_.pop_front();
    if (reply.transport_error) throw TransportError("scripted transport failure");
    return reply.content;
}

std::vector<ChatRequest> ScriptedChatTransport::requests() const {
    std::lock_guard lock(mu_);
    return requests_;
}

std::size_t ScriptedChatTransport::remaining() const {
    std::lock_guard lock(mu_);
    return replies_.size();
}

// ---------------------------------------------------------------------------

VlmClient::VlmClient(std::shared_ptr<ChatTransport> transport, VlmClientConfig config)
    : transport_(std::move(transport)), config_(std::move(config)) {
    if (!transport_) throw UsageError("VLM client needs a transport");
    if (config_.timeout.count() <= 0) throw UsageError("VLM timeout must be positive");
    if (config_.transport_retries < 0) throw UsageError("transport_retries must be >= 0");
}

std::string VlmClient::complete(const Conversation& messages, double temperature) {
    const ChatRequest request{config_.model_name, temperature, messages};
    for (int attempt = 0;; ++attempt) {
        try {
            return transport_->complete(request);
        } catch (const TransportError&) {
            if (attempt >= config_.transport_retries) throw;
        }
    }
}

} // namespace imagerag
