#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace imagerag {

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// POSTs `body` as application/json to an absolute http(s) URL. Throws
/// TransportError when the connection fails; HTTP error statuses are returned
/// to the caller untouched.
HttpResponse http_post_json(const std::string& url, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            std::chrono::milliseconds timeout);

} // namespace imagerag
