#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

// Eigen must come before httplib: <resolv.h> defines a `_res` macro that
// collides with parameter names inside Eigen's product kernels.
#include "eqloop/errors.hpp"
#include "eqloop/propose.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace eqloop {

struct RemoteConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string api_key_env = "EQLOOP_API_KEY";
    int max_tokens = 2048;
    double timeout_s = 120.0;
    int retries = 2;
    int backoff_ms = 500;
};

/// Sampling temperature for a diversity setting in [0, 1].
inline double diversity_temperature(double diversity) {
    return 0.2 + std::clamp(diversity, 0.0, 1.0);
}

namespace detail {

struct Endpoint {
    std::string base; // scheme://host[:port]
    std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("remote endpoint must include a scheme: '" + url + "'");
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace detail

/// Chat-completion style client. One request per propose() call, retried
/// with exponential backoff on transport errors and 429/5xx responses.
class RemoteProposer : public Proposer {
public:
    /// Throws ProposerUnavailable when the credential variable is unset.
    explicit RemoteProposer(RemoteConfig cfg) : cfg_(std::move(cfg)), endpoint_(detail::split_endpoint(cfg_.endpoint)) {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key || !*key)
            throw ProposerUnavailable("remote proposer: environment variable " + cfg_.api_key_env + " is not set");
        key_ = key;
    }

    std::string name() const override { return "remote:" + cfg_.model; }

    nlohmann::json request_body(const ProposalRequest& req) const {
        return {
            {"model", cfg_.model},
            {"messages",
             nlohmann::json::array({
                 {{"role", "system"},
                  {"content", "You are an expert in dynamical systems. Reply with candidate ODE templates "
                              "inside a fenced json block, following the requested format exactly."}},
                 {{"role", "user"}, {"content", req.prompt}},
             })},
            {"temperature", diversity_temperature(req.diversity)},
            {"max_tokens", cfg_.max_tokens},
        };
    }

    ProposalBatch propose(const ProposalRequest& req) override {
        const std::string body = request_body(req).dump();
        std::string last_error;
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            if (attempt > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
            httplib::Client client(endpoint_.base);
            auto secs = std::chrono::duration<double>(cfg_.timeout_s);
            client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
            client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
            client.set_bearer_token_auth(key_);
            auto res = client.Post(endpoint_.path, body, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw ProposerUnavailable("remote proposer: HTTP " + std::to_string(res->status));
            return parse_response(res->body, req);
        }
        throw ProposerUnavailable("remote proposer: giving up after " + std::to_string(cfg_.retries + 1) +
                                  " attempts (" + last_error + ")");
    }

    /// Extracts the generated text and its fenced templates.
    ProposalBatch parse_response(const std::string& body, const ProposalRequest& req) const {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            throw MalformedResponse("remote proposer: response is not JSON");
        }
        std::string text;
        if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
            const auto& c = doc["choices"][0];
            if (c.contains("message") && c["message"].contains("content") && c["message"]["content"].is_string())
                text = c["message"]["content"].get<std::string>();
            else if (c.contains("text") && c["text"].is_string())
                text = c["text"].get<std::string>();
        }
        if (text.empty())
            throw MalformedResponse("remote proposer: response carries no generated text");
        ProposalBatch out;
        out.candidates = extract_fenced_templates(text);
        if (out.candidates.size() > req.count)
            out.candidates.resize(req.count);
        out.diversity = req.diversity;
        out.proposer = name();
        return out;
    }

private:
    RemoteConfig cfg_;
    detail::Endpoint endpoint_;
    std::string key_;
};

} // namespace eqloop
