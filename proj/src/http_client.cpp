#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "vdt/error.hpp"
#include "vdt/vdt_gen.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <cstdlib>
#include <thread>

namespace vdt {

using nlohmann::json;

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::IoError, "SHA-256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[md[i] >> 4];
        out += kHex[md[i] & 0xF];
    }
    return out;
}

void LlmEndpointConfig::validate() const {
    if (base_url.empty()) {
        throw Error(ErrorCode::InvalidArgument, "endpoint base_url is empty");
    }
    if (path.empty() || path.front() != '/') {
        throw Error(ErrorCode::InvalidArgument, "endpoint path must start with '/'");
    }
    if (!(temperature >= 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
    }
    if (timeout.count() <= 0) {
        throw Error(ErrorCode::InvalidArgument, "timeout must be positive");
    }
    if (!payload_template.empty()) {
        if (!json::accept(payload_template)) {
            throw Error(ErrorCode::InvalidArgument, "payload_template is not valid JSON");
        }
    }
    try {
        (void)json::json_pointer(response_pointer);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("response_pointer: ") + e.what());
    }
}

LlmEndpointConfig LlmEndpointConfig::from_json(std::string_view json_text) {
    LlmEndpointConfig c;
    try {
        const auto j = json::parse(json_text);
        c.base_url = j.value("base_url", c.base_url);
        c.path = j.value("path", c.path);
        c.model_id = j.value("model_id", c.model_id);
        c.token_env = j.value("token_env", c.token_env);
        c.temperature = j.value("temperature", c.temperature);
        if (j.contains("max_retries")) {
            const auto r = j.at("max_retries").get<long long>();
            if (r < 0) {
                throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
            }
            c.max_retries = static_cast<std::size_t>(r);
        }
        c.timeout = std::chrono::milliseconds(j.value("timeout_ms", c.timeout.count()));
        c.backoff_base = std::chrono::milliseconds(j.value("backoff_base_ms", c.backoff_base.count()));
        c.backoff_max = std::chrono::milliseconds(j.value("backoff_max_ms", c.backoff_max.count()));
        if (j.contains("payload_template")) {
            const auto& p = j.at("payload_template");
            c.payload_template = p.is_string() ? p.get<std::string>() : p.dump();
        }
        c.response_pointer = j.value("response_pointer", c.response_pointer);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("endpoint config: ") + e.what());
    }
    c.validate();
    return c;
}

HttpChatClient::HttpChatClient(LlmEndpointConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

namespace {

void substitute(json& node, const LlmEndpointConfig& cfg, const std::string& system, const std::string& user) {
    if (node.is_string()) {
        const auto& s = node.get_ref<const std::string&>();
        if (s == "{{model}}") {
            node = cfg.model_id;
        } else if (s == "{{temperature}}") {
            node = cfg.temperature;
        } else if (s == "{{system}}") {
            node = system;
        } else if (s == "{{user}}") {
            node = user;
        }
    } else if (node.is_structured()) {
        for (auto& child : node) {
            substitute(child, cfg, system, user);
        }
    }
}

bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

} // namespace

std::string HttpChatClient::build_payload(const std::string& system_prompt, const std::string& user_prompt) const {
    json body;
    if (cfg_.payload_template.empty()) {
        body = {{"model", cfg_.model_id},
                {"temperature", cfg_.temperature},
                {"messages",
                 json::array({{{"role", "system"}, {"content", system_prompt}},
                              {{"role", "user"}, {"content", user_prompt}}})}};
    } else {
        body = json::parse(cfg_.payload_template);
        substitute(body, cfg_, system_prompt, user_prompt);
    }
    return body.dump();
}

std::chrono::milliseconds HttpChatClient::backoff_delay(std::size_t retry_index) const {
    auto d = cfg_.backoff_base;
    for (std::size_t i = 0; i < retry_index && d < cfg_.backoff_max; ++i) {
        d *= 2;
    }
    return std::min(d, cfg_.backoff_max);
}

ChatResponse HttpChatClient::complete(const std::string& system_prompt, const std::string& user_prompt) {
    httplib::Headers headers;
    if (!cfg_.token_env.empty()) {
        const char* token = std::getenv(cfg_.token_env.c_str());
        if (token == nullptr || *token == '\0') {
            throw Error(ErrorCode::InvalidArgument, "auth token variable " + cfg_.token_env + " is not set");
        }
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    const auto payload = build_payload(system_prompt, user_prompt);

    httplib::Client cli(cfg_.base_url);
    const auto secs = cfg_.timeout.count() / 1000;
    const auto usecs = (cfg_.timeout.count() % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    ChatResponse out;
    std::string last_problem;
    int last_status = 0;
    for (std::size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        ++out.attempts;
        auto res = cli.Post(cfg_.path, headers, payload, "application/json");
        const int status = res ? res->status : 0;
        out.statuses.push_back(status);
        last_status = status;

        if (res && status >= 200 && status < 300) {
            json body;
            try {
                body = json::parse(res->body);
            } catch (const json::exception&) {
                throw Error(ErrorCode::EmptyResponse, "endpoint returned a non-JSON body");
            }
            const json::json_pointer ptr(cfg_.response_pointer);
            if (!body.contains(ptr) || !body.at(ptr).is_string()) {
                throw Error(ErrorCode::EmptyResponse, "no text at " + cfg_.response_pointer + " in the response");
            }
            out.content = body.at(ptr).get<std::string>();
            if (out.content.find_first_not_of(" \t\r\n") == std::string::npos) {
                throw Error(ErrorCode::EmptyResponse, "endpoint returned empty content");
            }
            return out;
        }

        last_problem = res ? "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200)
                           : "transport error: " + httplib::to_string(res.error());
        if (!retryable(status)) {
            throw Error(ErrorCode::HttpError, last_problem);
        }
        if (attempt == cfg_.max_retries) {
            break;
        }
        auto delay = backoff_delay(attempt);
        if (res && res->has_header("Retry-After")) {
            try {
                const auto after = std::chrono::milliseconds(std::stol(res->get_header_value("Retry-After")) * 1000);
                delay = std::min(std::max(delay, after), cfg_.backoff_max);
            } catch (const std::exception&) {
                // HTTP-date form; keep the computed delay
            }
        }
        std::this_thread::sleep_for(delay);
    }
    throw Error(last_status == 429 ? ErrorCode::RateLimited : ErrorCode::HttpError,
                "gave up after " + std::to_string(out.attempts) + " attempts; last " + last_problem);
}

} // namespace vdt
