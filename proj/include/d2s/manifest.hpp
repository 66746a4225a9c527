#pragma once

#include <chrono>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2s/io_util.hpp"

namespace d2s {

// Provenance record for one command invocation: configuration, input
// digests, output paths, timing. Written before outputs are produced and
// finalized with the elapsed time afterwards, so a crash leaves a manifest
// that names what was attempted.
class RunManifest {
  public:
    RunManifest(std::string command, nlohmann::json config)
        : start_(std::chrono::steady_clock::now()) {
        body_["tool"] = "d2s";
        body_["version"] = 1;
        body_["command"] = std::move(command);
        body_["config"] = std::move(config);
        body_["inputs"] = nlohmann::json::object();
        body_["outputs"] = nlohmann::json::array();
    }

    void record_input(const std::string& path) { body_["inputs"][path] = file_digest(path); }

    void record_output(const std::string& path) { body_["outputs"].push_back(path); }

    // First write: everything known up front, no timing yet. A manifest
    // still reading "pending" after the process exits marks a failed run.
    void write_pending(const std::string& path) {
        path_ = path;
        body_["status"] = "pending";
        write_text_atomic(body_.dump(2) + "\n", path_);
    }

    // Final write: adds elapsed wall-clock time.
    void finalize() {
        body_["status"] = "finalized";
        body_["elapsed_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  std::chrono::steady_clock::now() - start_)
                                  .count();
        write_text_atomic(body_.dump(2) + "\n", path_);
    }

    const nlohmann::json& body() const { return body_; }

  private:
    nlohmann::json body_;
    std::string path_;
    std::chrono::steady_clock::time_point start_;
};

}  // namespace d2s
