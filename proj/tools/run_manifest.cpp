// SPDX-License-Identifier: Apache-2.0
#include "run_manifest.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>

#include "stg/io/binary.hpp"

namespace stg::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

std::string content_hash(const std::vector<fs::path>& inputs) {
    std::string listing;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<std::pair<std::string, fs::path>> files;
        if (fs::is_directory(inputs[i])) {
            for (const auto& entry : fs::recursive_directory_iterator(inputs[i]))
                if (entry.is_regular_file() && entry.path().filename() != kManifestFile)
                    files.emplace_back(fs::relative(entry.path(), inputs[i]).generic_string(), entry.path());
        } else {
            files.emplace_back(inputs[i].filename().generic_string(), inputs[i]);
        }
        std::sort(files.begin(), files.end());
        for (const auto& [rel, path] : files)
            listing += std::to_string(i) + "/" + rel + " " + io::sha256_hex(io::read_file(path)) + "\n";
    }
    return io::sha256_hex(listing);
}

RunManifest::RunManifest(fs::path dir, std::string subcommand, nlohmann::json config, std::uint64_t seed,
                         std::vector<fs::path> inputs)
    : dir_(std::move(dir)) {
    nlohmann::json in = nlohmann::json::array();
    for (const auto& p : inputs) in.push_back(p.string());
    doc_ = {{"subcommand", std::move(subcommand)},
            {"config", std::move(config)},
            {"seed", seed},
            {"inputs", in},
            {"input_hash", content_hash(inputs)},
            {"outputs", nlohmann::json::array()},
            {"results", nlohmann::json::object()},
            {"started_at", nullptr},
            {"finished_at", nullptr},
            {"status", "pending"}};
}

void RunManifest::add_output(const fs::path& path) { doc_["outputs"].push_back(path.string()); }

void RunManifest::set_result(const std::string& key, nlohmann::json value) { doc_["results"][key] = std::move(value); }

void RunManifest::start() {
    doc_["started_at"] = utc_now();
    doc_["status"] = "running";
    write();
}

void RunManifest::finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    write();
}

void RunManifest::write() const {
    fs::create_directories(dir_);
    io::write_text_atomic(dir_ / kManifestFile, doc_.dump(2) + "\n");
}

}  // namespace stg::cli
