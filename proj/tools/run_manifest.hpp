// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-run manifest: written atomically when a run starts and rewritten when it
// ends, so every artifact directory records how it was produced.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace stg::cli {

inline constexpr const char* kManifestFile = "manifest.json";

// SHA-256 over the sorted (relative path, file hash) list of every regular
// file under each input; manifests are skipped so reruns hash identically.
std::string content_hash(const std::vector<std::filesystem::path>& inputs);

class RunManifest {
   public:
    RunManifest(std::filesystem::path dir, std::string subcommand, nlohmann::json config, std::uint64_t seed,
                std::vector<std::filesystem::path> inputs);

    void add_output(const std::filesystem::path& path);
    void set_result(const std::string& key, nlohmann::json value);
    // Writes the manifest with status "running".
    void start();
    // Rewrites it with the end timestamp and final status.
    void finish(const std::string& status);

    const std::filesystem::path& dir() const { return dir_; }

   private:
    void write() const;

    std::filesystem::path dir_;
    nlohmann::json doc_;
};

}  // namespace stg::cli
