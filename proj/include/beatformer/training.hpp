#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "beatformer/beat_tokenizer.hpp"
#include "beatformer/checkpoint.hpp"
#include "beatformer/optimizer.hpp"
#include "beatformer/transformer.hpp"

namespace beatformer {

/// One model input: tokens [rows, d_model] with the first n_real rows real,
/// plus a multi-hot label vector (empty for unlabeled data).
struct Example {
    std::string id;
    Tensor tokens;
    std::size_t n_real = 0;
    std::vector<double> labels;
};

Example example_from_sequence(const BeatSequence& seq, std::size_t rows, const std::vector<int>& classes,
                              std::size_t d_class, std::string id = {});

/// Teacher-forced next-beat targets: the input keeps beats 0..n_real-2 and
/// row i is supervised with beat i+1.
struct PretrainPair {
    Tensor input;
    std::size_t n_input = 0;
    Tensor target;
    std::vector<bool> target_mask;
};

/// nullopt when fewer than two real beats exist (sequence skipped).
std::optional<PretrainPair> make_pretrain_pairs(const Example& ex);
std::optional<PretrainPair> make_pretrain_pairs(const BeatSequence& seq, std::size_t rows = kMaxBeats);

/// Class c is positive iff probs[c] > threshold.
std::vector<int> threshold_predict(const std::vector<double>& probs, double threshold = 0.5);

struct ClassMetrics {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool scored = false;  // has a positive label or prediction
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_f1 = 0.0;  // over classes with any positive label or prediction
    std::size_t macro_classes = 0;
    double micro_f1 = 0.0;
    double exact_match = 0.0;
    double mean_bce = 0.0;
    double mean_mse = 0.0;  // generative models only
    std::size_t samples = 0;

    std::string to_json() const;
};

MetricsReport compute_metrics(const std::vector<std::vector<double>>& probs,
                              const std::vector<std::vector<double>>& labels, double threshold = 0.5);

/// Inference over a dataset. Classifier models produce classification
/// metrics; generative models produce the masked next-beat MSE.
MetricsReport evaluate(const TransformerModel& model, const std::vector<Example>& dataset, double threshold = 0.5);

enum class TrainMode { Pretrain, Classify };
std::string to_string(TrainMode mode);

struct EpochLog {
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainOptions {
    TrainMode mode = TrainMode::Classify;
    OptimizerConfig optim;
    std::uint64_t seed = 0;
    bool freeze_trunk = false;
    /// When set, checkpoints go to out_dir/checkpoints/epoch_NNNN.ckpt and
    /// out_dir/model.ckpt, the log to out_dir/train_log.jsonl.
    std::optional<std::filesystem::path> out_dir;
    /// Continue from a checkpoint written by a previous run.
    std::optional<std::filesystem::path> resume_from;
    /// Stop once this many optimizer steps have run in total.
    std::optional<std::uint64_t> max_steps;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::uint64_t steps = 0;
    std::size_t skipped = 0;  // pretrain sequences with fewer than two beats
};

/// Epoch loop with seeded shuffling and per-sample gradient accumulation.
/// Parameters and Adam moments are stored at float32 precision after every
/// step so a checkpoint captures the exact training state.
TrainResult train(TransformerModel& model, const std::vector<Example>& dataset, const TrainOptions& options,
                  AdamState* state = nullptr);

/// Per-sample training loss in the given mode (no dropout when ctx is not
/// training).
Tensor sample_loss(const TransformerModel& model, const Example& ex, TrainMode mode, ForwardContext& ctx);

struct ManifestEntry {
    std::filesystem::path cache;  // resolved against the manifest's directory
    std::vector<int> classes;
};

/// Text manifest, one `<cache path>\t<c1,c2,...>` per line; `-` marks an
/// unlabeled record. Relative cache paths are relative to the manifest.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

std::vector<Example> load_dataset(const std::vector<ManifestEntry>& entries, std::size_t rows, std::size_t d_class);

/// Deterministic train/validation split of indices [0, n): every k-th item
/// of a seeded permutation goes to validation.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, std::size_t folds,
                                                                            std::uint64_t seed);

}  // namespace beatformer
