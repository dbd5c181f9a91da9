#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "beatformer/beat_tokenizer.hpp"
#include "beatformer/ecg_io.hpp"
#include "beatformer/pipeline_config.hpp"
#include "beatformer/training.hpp"

namespace beatformer {

struct ProcessedRecord {
    BeatSequence sequence;
    PeakList peaks;  // at the target sampling rate
    std::vector<double> fused;
};

/// Lead selection, high-pass, R-peak detection, resampling, peak rescaling,
/// RMS fusion and tokenization for one record.
ProcessedRecord preprocess_record(const EcgRecord& rec, const PipelineConfig& cfg);

struct SkipEntry {
    std::string file;
    std::string reason;
};

struct PreprocessReport {
    std::vector<ManifestEntry> manifest;
    std::vector<SkipEntry> skipped;
};

/// Processes every .csv/.hea file of input_dir (sorted by name) into
/// out_dir/tokens/*.btok, out_dir/manifest.txt and out_dir/skipped.txt.
PreprocessReport run_preprocess(const std::filesystem::path& input_dir, const PipelineConfig& cfg);

// Command entry points. Each returns the process exit code.
int cmd_preprocess(const std::filesystem::path& input_dir, const PipelineConfig& cfg, std::ostream& out,
                   std::ostream& err);
int cmd_train(const PipelineConfig& cfg, TrainMode mode, const std::optional<std::filesystem::path>& resume,
              std::ostream& out, std::ostream& err);
int cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& out,
                 std::ostream& err);
int cmd_predict(const PipelineConfig& cfg, const std::filesystem::path& checkpoint,
                const std::vector<std::filesystem::path>& inputs, std::ostream& out, std::ostream& err);
int cmd_inspect(const std::filesystem::path& cache, std::ostream& out, std::ostream& err);

}  // namespace beatformer
