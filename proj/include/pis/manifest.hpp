#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pis/hash.hpp"

namespace pis {

inline constexpr const char* kToolVersion = "0.1.0";

// Written for every CLI run; re-running the stored command line must
// reproduce byte-identical outputs, verified via the recorded hashes.
struct RunManifest {
    std::vector<std::string> command;
    uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, std::string> outputs;        // label -> path
    std::map<std::string, std::string> output_hashes;  // label -> fnv1a hex
    std::string tool_version = kToolVersion;

    json to_json() const {
        return json{{"command", command},        {"seed", seed},
                    {"config_hash", config_hash}, {"outputs", outputs},
                    {"output_hashes", output_hashes}, {"tool_version", tool_version}};
    }

    static RunManifest from_json(const json& j) {
        RunManifest m;
        m.command = j.at("command").get<std::vector<std::string>>();
        m.seed = j.value("seed", static_cast<uint64_t>(0));
        m.config_hash = j.value("config_hash", "");
        if (j.contains("outputs")) m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        if (j.contains("output_hashes"))
            m.output_hashes = j.at("output_hashes").get<std::map<std::string, std::string>>();
        m.tool_version = j.value("tool_version", "");
        return m;
    }
};

inline uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("file_hash: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return fnv1a(bytes.data(), bytes.size());
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_manifest: cannot open " + path);
    f << m.to_json().dump(2) << "\n";
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_manifest: cannot open " + path);
    return RunManifest::from_json(json::parse(std::string((std::istreambuf_iterator<char>(f)),
                                                          std::istreambuf_iterator<char>())));
}

}  // namespace pis
