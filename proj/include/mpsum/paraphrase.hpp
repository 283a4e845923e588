#pragma once

// Paraphrasing of selected sentences. Identity is the default; the remote
// client speaks a small JSON-over-HTTP protocol:
//   POST {"sentences": [...]}  ->  200 {"paraphrases": [...]}  (same length)

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "mpsum/error.hpp"

namespace mpsum {

class Paraphraser {
public:
    virtual ~Paraphraser() = default;
    virtual std::vector<std::string> paraphrase(const std::vector<std::string>& sentences) const = 0;
};

class IdentityParaphraser final : public Paraphraser {
public:
    std::vector<std::string> paraphrase(const std::vector<std::string>& sentences) const override { return sentences; }
};

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // at least "/"
};

inline ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorCode::ConfigError, "paraphrase URL needs a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class RemoteParaphraser final : public Paraphraser {
public:
    RemoteParaphraser(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30))
        : endpoint_(std::move(endpoint)), url_(parse_url(endpoint_)), timeout_(timeout) {}

    std::vector<std::string> paraphrase(const std::vector<std::string>& sentences) const override {
        if (sentences.empty()) return {};
        httplib::Client client(url_.origin);
        if (!client.is_valid()) fail(ErrorCode::ParaphraseError, "unsupported endpoint '" + endpoint_ + "'");
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());

        const nlohmann::json body = {{"sentences", sentences}};
        const auto res = client.Post(url_.path, body.dump(), "application/json");
        if (!res) fail(ErrorCode::ParaphraseError, "request to '" + endpoint_ + "' failed: " + httplib::to_string(res.error()));
        if (res->status != 200)
            fail(ErrorCode::ParaphraseError, "endpoint '" + endpoint_ + "' returned HTTP " + std::to_string(res->status));

        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ProtocolError, std::string("response is not JSON: ") + e.what());
        }
        if (!reply.is_object() || !reply.contains("paraphrases") || !reply["paraphrases"].is_array())
            fail(ErrorCode::ProtocolError, "response lacks a 'paraphrases' array");
        std::vector<std::string> out;
        for (const auto& item : reply["paraphrases"]) {
            if (!item.is_string()) fail(ErrorCode::ProtocolError, "paraphrases must be strings");
            out.push_back(item.get<std::string>());
        }
        if (out.size() != sentences.size())
            fail(ErrorCode::ProtocolError, "expected " + std::to_string(sentences.size()) + " paraphrases, got " +
                                               std::to_string(out.size()));
        return out;
    }

private:
    std::string endpoint_;
    ParsedUrl url_;
    std::chrono::milliseconds timeout_;
};

inline std::vector<std::string> remote_paraphrase(const std::vector<std::string>& sentences, const std::string& endpoint,
                                                  std::chrono::milliseconds timeout) {
    return RemoteParaphraser(endpoint, timeout).paraphrase(sentences);
}

inline std::unique_ptr<Paraphraser> make_paraphraser(const std::string& url, std::chrono::milliseconds timeout) {
    if (url.empty()) return std::make_unique<IdentityParaphraser>();
    return std::make_unique<RemoteParaphraser>(url, timeout);
}

}  // namespace mpsum
