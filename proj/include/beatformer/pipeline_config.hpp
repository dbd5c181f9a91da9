#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "beatformer/dsp.hpp"
#include "beatformer/optimizer.hpp"
#include "beatformer/transformer.hpp"

namespace beatformer {

/// Every knob of the pipeline. Defaults are the full-size hyperparameters;
/// a config file overrides defaults and command-line flags override both.
///
/// File format: one `key=value` per line, `#` comments, keys prefixed with
/// their section (`model.`, `optim.`, `data.`) except the run-level `seed`,
/// `out_dir` and `workers`. Unknown keys are rejected.
struct PipelineConfig {
    ModelConfig model;
    OptimizerConfig optim;

    DetectorKind detector = DetectorKind::TwoAverage;
    DetectorParams detector_params;
    std::vector<std::string> leads;  // empty selects every lead
    std::string detect_lead;         // empty selects the first selected lead
    double target_fs = 500.0;
    double highpass_hz = 0.5;
    std::filesystem::path label_map;
    std::filesystem::path train_manifest;
    std::filesystem::path eval_manifest;
    std::filesystem::path pretrained;
    bool freeze_trunk = false;

    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    std::size_t workers = 0;  // 0 picks the hardware concurrency

    /// Throws std::invalid_argument for unknown keys or unparsable values.
    void set(const std::string& key, const std::string& value);
    void merge_text(const std::string& text, const std::string& origin = "config");
    void merge_file(const std::filesystem::path& path);

    /// Cross-field checks; keeps optim.d_model in step with model.d_model.
    void finalize();

    std::string dump() const;
    static std::vector<std::string> known_keys();
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace beatformer
