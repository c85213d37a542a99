#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "aerovln/error.hpp"
#include "aerovln/landmark.hpp"
#include "aerovln/strings.hpp"

namespace aerovln {

// Network or HTTP-level failure talking to the model endpoint.
class TransportError : public Error {
public:
    using Error::Error;
};

// The model answered, but not in the expected shape.
class VlmReplyError : public Error {
public:
    VlmReplyError(const std::string& what, std::string raw) : Error(what), raw_(std::move(raw)) {}
    const std::string& raw_reply() const { return raw_; }

private:
    std::string raw_;
};

// Replay mode found no recorded reply for a request.
class ReplayMiss : public Error {
public:
    using Error::Error;
};

enum class VlmMode { live, mock, replay };

inline VlmMode parse_vlm_mode(std::string_view s) {
    if (s == "live") return VlmMode::live;
    if (s == "mock") return VlmMode::mock;
    if (s == "replay") return VlmMode::replay;
    throw ConfigError("unknown VLM mode '" + std::string(s) + "'");
}

inline std::string to_string(VlmMode m) {
    switch (m) {
        case VlmMode::live: return "live";
        case VlmMode::mock: return "mock";
        case VlmMode::replay: return "replay";
    }
    return "?";
}

struct ChatMessage {
    std::string role;
    std::string text;
    std::vector<std::string> image_refs;
};

enum class VlmTask { landmark_caption, sub_instruction, fusion };

struct VlmRequest {
    VlmTask task = VlmTask::landmark_caption;
    std::vector<ChatMessage> messages;
    // Ground truth the mock responder works from. Never sent over the wire.
    nlohmann::json mock_context = nlohmann::json::object();
};

// Synchronous POST; implementations throw TransportError on failure.
class Transport {
public:
    virtual ~Transport() = default;
    virtual std::string post(const std::string& url, const std::string& body,
                             const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s) = 0;
};

struct VlmConfig {
    VlmMode mode = VlmMode::mock;
    std::string endpoint;
    std::string model = "gpt-4o";
    std::string api_key;
    double timeout_s = 60.0;
    int max_retries = 2;
    int max_in_flight = 4;
    // Replay source in replay mode; record target in live mode when set.
    std::filesystem::path cache_dir;

    // AEROVLN_VLM_ENDPOINT, AEROVLN_VLM_API_KEY and AEROVLN_VLM_MODEL override the file values.
    void apply_env() {
        if (const char* v = std::getenv("AEROVLN_VLM_ENDPOINT"); v && *v) endpoint = v;
        if (const char* v = std::getenv("AEROVLN_VLM_API_KEY"); v && *v) api_key = v;
        if (const char* v = std::getenv("AEROVLN_VLM_MODEL"); v && *v) model = v;
    }
};

namespace prompts {

inline constexpr const char* kCaptionSystem =
    "You identify objects in aerial drone imagery. You receive the final frames of a flight segment. "
    "Concentrate on the last frame and describe the landmark the drone is heading for, emphasising what "
    "distinguishes it from its surroundings. Reply with JSON only.";
inline constexpr const char* kCaptionUser =
    "Describe the closest prominent landmark as a JSON object with the keys color, feature, size and type.";
inline constexpr const char* kSubInstructionSystem =
    "You write drone navigation clauses. Given the actions of one flight segment and the landmark visible "
    "at its end, answer with a single imperative clause that states the movement and names the landmark.";
inline constexpr const char* kFusionSystem =
    "You edit navigation text. Merge the numbered clauses into one fluent instruction that keeps every "
    "action and landmark in order. Prefer natural, varied wording. When neighbouring clauses mention the "
    "same or a very similar landmark, refer back to it with a pronoun.";

}  // namespace prompts

namespace mock {

/// Caption derived from a ground-truth label such as "blue glass tower, 30m":
/// first word is the color, last word the type, the words between the feature.
inline Caption caption_from_label(std::string_view label, double footprint_area) {
    const auto head = label.substr(0, label.find(','));
    auto words = split_whitespace(head);
    Caption c;
    c.size = size_bucket(footprint_area);
    if (words.empty()) {
        c.color = "gray";
        c.feature = "plain";
        c.type = "building";
    } else if (words.size() == 1) {
        c.color = "gray";
        c.feature = "plain";
        c.type = to_lower(words[0]);
    } else {
        c.color = to_lower(words.front());
        c.type = to_lower(words.back());
        std::string feature;
        for (std::size_t i = 1; i + 1 < words.size(); ++i) {
            if (!feature.empty()) feature += ' ';
            feature += to_lower(words[i]);
        }
        c.feature = feature.empty() ? "plain" : feature;
    }
    return c;
}

inline std::string strip_period(std::string s) {
    while (!s.empty() && (s.back() == '.' || s.back() == ' ')) s.pop_back();
    return s;
}

/// "First, a. Then, b. Finally, c." with the two- and one-clause shortcuts.
inline std::string ordinal_join(const std::vector<std::string>& clauses) {
    if (clauses.size() == 1) return clauses.front();
    std::string out;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        const auto c = strip_period(clauses[i]);
        if (clauses.size() == 2) {
            out += i == 0 ? c + ". " : "Then, " + c + ".";
            continue;
        }
        if (i == 0)
            out += "First, " + c + ".";
        else if (i + 1 == clauses.size())
            out += " Finally, " + c + ".";
        else
            out += " Then, " + c + ".";
    }
    return out;
}

inline std::string reply(const VlmRequest& req) {
    const auto& ctx = req.mock_context;
    switch (req.task) {
        case VlmTask::landmark_caption: {
            const auto c = caption_from_label(ctx.value("label", std::string{}), ctx.value("area", 0.0));
            return nlohmann::json{{"color", c.color}, {"feature", c.feature}, {"size", c.size}, {"type", c.type}}.dump();
        }
        case VlmTask::sub_instruction: {
            const auto& cap = ctx.at("caption");
            return ctx.at("verb").get<std::string>() + " " + ctx.at("connector").get<std::string>() + " the " +
                   cap.at("size").get<std::string>() + " " + cap.at("color").get<std::string>() + " " +
                   cap.at("type").get<std::string>();
        }
        case VlmTask::fusion:
            return ordinal_join(ctx.at("clauses").get<std::vector<std::string>>());
    }
    return {};
}

}  // namespace mock

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

/// Chat-completion client with three interchangeable backends. Shareable
/// across threads; at most max_in_flight requests run at once.
class VlmClient {
public:
    explicit VlmClient(VlmConfig cfg, std::shared_ptr<Transport> transport = nullptr)
        : cfg_(std::move(cfg)), transport_(std::move(transport)),
          slots_(std::max<std::ptrdiff_t>(1, std::min<std::ptrdiff_t>(cfg_.max_in_flight, 1024))) {
        if (cfg_.mode == VlmMode::live && !transport_) throw ConfigError("live VLM mode needs a transport");
        if (cfg_.mode == VlmMode::live && cfg_.endpoint.empty()) throw ConfigError("live VLM mode needs an endpoint");
        if (cfg_.mode == VlmMode::replay && cfg_.cache_dir.empty()) throw ConfigError("replay VLM mode needs a cache directory");
    }

    const VlmConfig& config() const { return cfg_; }
    VlmMode mode() const { return cfg_.mode; }
    std::uint64_t requests_sent() const { return sent_.load(); }

    nlohmann::json wire_body(const VlmRequest& req) const {
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& m : req.messages) {
            if (m.image_refs.empty()) {
                messages.push_back({{"role", m.role}, {"content", m.text}});
                continue;
            }
            nlohmann::json parts = nlohmann::json::array();
            parts.push_back({{"type", "text"}, {"text", m.text}});
            for (const auto& ref : m.image_refs) parts.push_back({{"type", "image_url"}, {"image_url", {{"url", ref}}}});
            messages.push_back({{"role", m.role}, {"content", std::move(parts)}});
        }
        return {{"model", cfg_.model}, {"messages", std::move(messages)}};
    }

    std::string request_key(const VlmRequest& req) const { return sha256_hex(wire_body(req).dump()); }

    std::string complete(const VlmRequest& req) {
        switch (cfg_.mode) {
            case VlmMode::mock: return mock::reply(req);
            case VlmMode::replay: return replay(req);
            case VlmMode::live: break;
        }
        const auto body = wire_body(req).dump();
        std::string raw;
        {
            slots_.acquire();
            struct Release {
                std::counting_semaphore<1024>& s;
                ~Release() { s.release(); }
            } release{slots_};
            raw = post_with_retries(body);
        }
        auto text = extract_reply_text(raw);
        if (!cfg_.cache_dir.empty()) record(req, text);
        return text;
    }

    static std::string extract_reply_text(const std::string& raw) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(raw);
            const auto& content = j.at("choices").at(0).at("message").at("content");
            if (content.is_string()) return content.get<std::string>();
            std::string text;
            for (const auto& part : content)
                if (part.value("type", "") == "text") text += part.at("text").get<std::string>();
            return text;
        } catch (const nlohmann::json::exception& e) {
            throw VlmReplyError(std::string("unexpected completion response: ") + e.what(), raw);
        }
    }

    std::filesystem::path cache_path(const VlmRequest& req) const { return cfg_.cache_dir / (request_key(req) + ".json"); }

    void record(const VlmRequest& req, const std::string& reply) const {
        std::lock_guard lock(cache_mutex_);
        std::filesystem::create_directories(cfg_.cache_dir);
        std::ofstream out(cache_path(req));
        out << nlohmann::json{{"request", wire_body(req)}, {"reply", reply}}.dump(2) << '\n';
    }

private:
    std::string replay(const VlmRequest& req) const {
        const auto path = cache_path(req);
        std::ifstream in(path);
        if (!in) throw ReplayMiss("no recorded reply " + path.filename().string());
        try {
            return nlohmann::json::parse(in).at("reply").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ReplayMiss("corrupt replay entry " + path.string() + ": " + e.what());
        }
    }

    std::string post_with_retries(const std::string& body) {
        std::vector<std::pair<std::string, std::string>> headers{{"Content-Type", "application/json"}};
        if (!cfg_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + cfg_.api_key);
        for (int attempt = 0;; ++attempt) {
            try {
                ++sent_;
                return transport_->post(cfg_.endpoint, body, headers, cfg_.timeout_s);
            } catch (const TransportError&) {
                if (attempt >= cfg_.max_retries) throw;
            }
        }
    }

    VlmConfig cfg_;
    std::shared_ptr<Transport> transport_;
    std::counting_semaphore<1024> slots_;
    std::atomic<std::uint64_t> sent_{0};
    mutable std::mutex cache_mutex_;
};

}  // namespace aerovln
