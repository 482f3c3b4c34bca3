#pragma once
// Run manifests: a JSON record per CLI invocation naming the config snapshot,
// seeds, every artifact written, and the clustering K vs N accounting. A run
// is complete only if its manifest says so.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace lechpe {

constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
    std::string command;
    nlohmann::json config;
    std::uint64_t seed = 0;
    nlohmann::json artifacts = nlohmann::json::object();  // name -> path
    nlohmann::json extra = nlohmann::json::object();
    std::string started_at;
    std::string finished_at;
    bool complete = false;

    static std::string now_iso8601() {
        const auto now = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"tool_version", kToolVersion},
                         {"command", command},
                         {"seed", seed},
                         {"config", config},
                         {"artifacts", artifacts},
                         {"started_at", started_at},
                         {"finished_at", finished_at},
                         {"complete", complete}};
        for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("RunManifest: cannot write " + path);
        out << to_json().dump(2) << "\n";
    }
};

}  // namespace lechpe
