#pragma once

// Real HTTP(S) transport for the VLM client. Kept out of the umbrella header
// so only binaries that talk to a live endpoint pull in httplib and libssl.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "aerovln/vlm.hpp"

namespace aerovln {

class HttpTransport : public Transport {
public:
    std::string post(const std::string& url, const std::string& body,
                     const std::vector<std::pair<std::string, std::string>>& headers, double timeout_s) override {
        static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(url, m, kUrl)) throw TransportError("malformed endpoint URL: " + url);
        const std::string base = m[1].str();
        const std::string path = m[2].matched ? m[2].str() : "/";

        httplib::Client client(base);
        const auto secs = static_cast<time_t>(timeout_s);
        const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        httplib::Headers h;
        std::string content_type = "application/json";
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type")
                content_type = v;
            else
                h.emplace(k, v);
        }
        auto res = client.Post(path, h, body, content_type);
        if (!res) throw TransportError("POST " + base + path + " failed: " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw TransportError("POST " + base + path + " returned HTTP " + std::to_string(res->status));
        return res->body;
    }
};

}  // namespace aerovln
