#include "beatformer/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace beatformer {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kDropoutStream = 0x44524F50ULL;

void round_to_float(std::vector<double>& v) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
}

std::string epoch_name(std::uint64_t epoch) {
    std::ostringstream os;
    os << "epoch_";
    os.width(4);
    os.fill('0');
    os << epoch << ".ckpt";
    return os.str();
}

}  // namespace

std::string to_string(TrainMode mode) { return mode == TrainMode::Pretrain ? "pretrain" : "classify"; }

Example example_from_sequence(const BeatSequence& seq, std::size_t rows, const std::vector<int>& classes,
                              std::size_t d_class, std::string id) {
    if (seq.n_real == 0) throw std::invalid_argument("sequence has no beats");
    Example ex;
    ex.id = std::move(id);
    ex.tokens = sequence_tensor(seq, rows);
    ex.n_real = std::min(seq.n_real, rows);
    if (!classes.empty()) {
        ex.labels.assign(d_class, 0.0);
        for (int c : classes) ex.labels.at(static_cast<std::size_t>(c)) = 1.0;
    }
    return ex;
}

std::optional<PretrainPair> make_pretrain_pairs(const Example& ex) {
    if (ex.n_real < 2) return std::nullopt;
    const std::size_t rows = ex.tokens.dim(0);
    const std::size_t width = ex.tokens.dim(1);
    const auto& src = ex.tokens.data();

    PretrainPair pair;
    pair.n_input = ex.n_real - 1;
    std::vector<double> input(rows * width, 0.0);
    std::copy_n(src.begin(), pair.n_input * width, input.begin());
    std::vector<double> target(rows * width, 0.0);
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(width),
              src.begin() + static_cast<std::ptrdiff_t>(ex.n_real * width), target.begin());
    pair.input = Tensor::from({rows, width}, std::move(input));
    pair.target = Tensor::from({rows, width}, std::move(target));
    pair.target_mask.assign(rows, false);
    std::fill_n(pair.target_mask.begin(), pair.n_input, true);
    return pair;
}

std::optional<PretrainPair> make_pretrain_pairs(const BeatSequence& seq, std::size_t rows) {
    if (seq.n_real < 2) return std::nullopt;
    return make_pretrain_pairs(example_from_sequence(seq, rows, {}, 0));
}

std::vector<int> threshold_predict(const std::vector<double>& probs, double threshold) {
    std::vector<int> out(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c) out[c] = probs[c] > threshold ? 1 : 0;
    return out;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["samples"] = samples;
    j["macro_f1"] = macro_f1;
    j["macro_classes"] = macro_classes;
    j["micro_f1"] = micro_f1;
    j["exact_match"] = exact_match;
    j["mean_bce"] = mean_bce;
    j["mean_mse"] = mean_mse;
    auto& classes = j["per_class"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < per_class.size(); ++c) {
        const auto& m = per_class[c];
        classes.push_back({{"class", c}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"precision", m.precision},
                           {"recall", m.recall}, {"f1", m.f1}, {"scored", m.scored}});
    }
    return j.dump(2);
}

MetricsReport compute_metrics(const std::vector<std::vector<double>>& probs,
                              const std::vector<std::vector<double>>& labels, double threshold) {
    if (probs.size() != labels.size()) throw std::invalid_argument("probability and label counts differ");
    MetricsReport report;
    report.samples = probs.size();
    if (probs.empty()) return report;
    const std::size_t classes = probs.front().size();
    report.per_class.assign(classes, {});

    std::size_t exact = 0;
    double bce_total = 0.0;
    for (std::size_t s = 0; s < probs.size(); ++s) {
        if (probs[s].size() != classes || labels[s].size() != classes) {
            throw std::invalid_argument("sample " + std::to_string(s) + " has the wrong class count");
        }
        const auto pred = threshold_predict(probs[s], threshold);
        bool all_match = true;
        for (std::size_t c = 0; c < classes; ++c) {
            const bool truth = labels[s][c] > 0.5;
            const bool guess = pred[c] == 1;
            auto& m = report.per_class[c];
            if (truth && guess) ++m.tp;
            if (!truth && guess) ++m.fp;
            if (truth && !guess) ++m.fn;
            all_match = all_match && truth == guess;
        }
        exact += all_match ? 1 : 0;
        bce_total += bce_loss(Tensor::from({classes}, probs[s]), labels[s]).item();
    }

    std::size_t tp = 0, fp = 0, fn = 0;
    double f1_sum = 0.0;
    for (auto& m : report.per_class) {
        m.precision = m.tp + m.fp ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
        m.recall = m.tp + m.fn ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
        m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        m.scored = m.tp + m.fp + m.fn > 0;
        if (m.scored) {
            f1_sum += m.f1;
            ++report.macro_classes;
        }
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
    }
    report.macro_f1 = report.macro_classes ? f1_sum / static_cast<double>(report.macro_classes) : 0.0;
    report.micro_f1 = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
    report.exact_match = static_cast<double>(exact) / static_cast<double>(probs.size());
    report.mean_bce = bce_total / static_cast<double>(probs.size());
    return report;
}

MetricsReport evaluate(const TransformerModel& model, const std::vector<Example>& dataset, double threshold) {
    if (dataset.empty()) throw std::invalid_argument("cannot evaluate an empty dataset");
    if (model.config().head == HeadKind::Generative) {
        MetricsReport report;
        double total = 0.0;
        for (const auto& ex : dataset) {
            const auto pair = make_pretrain_pairs(ex);
            if (!pair) continue;
            const auto pred = model.forward(pair->input, pair->n_input);
            total += mse_loss(pred, pair->target, pair->target_mask).item();
            ++report.samples;
        }
        report.mean_mse = report.samples ? total / static_cast<double>(report.samples) : 0.0;
        return report;
    }
    std::vector<std::vector<double>> probs;
    std::vector<std::vector<double>> labels;
    for (const auto& ex : dataset) {
        if (ex.labels.size() != model.config().d_class) {
            throw std::invalid_argument("example " + ex.id + " has no labels for " +
                                        std::to_string(model.config().d_class) + " classes");
        }
        probs.push_back(model.forward(ex.tokens, ex.n_real).data());
        labels.push_back(ex.labels);
    }
    return compute_metrics(probs, labels, threshold);
}

Tensor sample_loss(const TransformerModel& model, const Example& ex, TrainMode mode, ForwardContext& ctx) {
    if (mode == TrainMode::Pretrain) {
        const auto pair = make_pretrain_pairs(ex);
        if (!pair) throw std::invalid_argument("pre-training needs at least two beats");
        return mse_loss(model.forward(pair->input, pair->n_input, ctx), pair->target, pair->target_mask);
    }
    if (ex.labels.size() != model.config().d_class) {
        throw std::invalid_argument("example " + ex.id + " lacks a label vector of length d_class");
    }
    return bce_loss(model.forward(ex.tokens, ex.n_real, ctx), ex.labels);
}

TrainResult train(TransformerModel& model, const std::vector<Example>& dataset, const TrainOptions& options,
                  AdamState* state_in) {
    const auto& optim = options.optim;
    optim.validate();
    const bool pretrain = options.mode == TrainMode::Pretrain;
    if (pretrain != (model.config().head == HeadKind::Generative)) {
        throw std::invalid_argument(to_string(options.mode) + " mode does not match the model's " +
                                    to_string(model.config().head) + " head");
    }

    TrainResult result;
    std::vector<const Example*> items;
    for (const auto& ex : dataset) {
        if (pretrain && ex.n_real < 2) {
            ++result.skipped;
            continue;
        }
        items.push_back(&ex);
    }
    if (items.empty()) throw std::invalid_argument("no usable training examples");

    AdamState local;
    AdamState& state = state_in ? *state_in : local;
    std::uint64_t first_epoch = 1;
    if (options.resume_from) {
        const auto info = load_checkpoint(*options.resume_from, model, &state, LoadScope::Full);
        first_epoch = info.epoch + 1;
    }
    model.set_trunk_trainable(!options.freeze_trunk);
    auto& params = model.parameters();
    for (auto& p : params) round_to_float(p.tensor.data());

    std::ofstream log;
    if (options.out_dir) {
        fs::create_directories(*options.out_dir / "checkpoints");
        const auto mode = options.resume_from ? std::ios::app : std::ios::trunc;
        log.open(*options.out_dir / "train_log.jsonl", std::ios::out | mode);
    }
    auto write_checkpoints = [&](std::uint64_t epoch) {
        if (!options.out_dir) return;
        save_checkpoint(*options.out_dir / "checkpoints" / epoch_name(epoch), model, &state, epoch);
        save_checkpoint(*options.out_dir / "model.ckpt", model, &state, epoch);
    };

    if (first_epoch > optim.epochs) {
        write_checkpoints(first_epoch - 1);
        return result;
    }

    const CounterRng shuffle_rng(options.seed, kShuffleStream);
    const CounterRng dropout_rng(options.seed, kDropoutStream);
    const auto start = std::chrono::steady_clock::now();
    bool budget_spent = false;

    for (std::uint64_t epoch = first_epoch; epoch <= optim.epochs && !budget_spent; ++epoch) {
        const auto order = seeded_permutation(items.size(), shuffle_rng.split(epoch));
        double epoch_loss = 0.0;
        double lr = 0.0;
        for (std::size_t b = 0; b < order.size(); b += optim.batch_size) {
            const std::size_t end = std::min(order.size(), b + optim.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - b);
            for (auto& p : params) {
                if (p.trainable) p.tensor.zero_grad();
            }
            const auto step_rng = dropout_rng.split(state.step_num);
            for (std::size_t i = b; i < end; ++i) {
                ForwardContext ctx(true, step_rng.split(i - b).key());
                const auto loss = sample_loss(model, *items[order[i]], options.mode, ctx);
                epoch_loss += loss.item();
                backward(scale(loss, inv_batch));
            }
            lr = adam_step(params, state, optim);
            for (auto& p : params) round_to_float(p.tensor.data());
            for (auto& [name, mom] : state.moments) {
                round_to_float(mom.m);
                round_to_float(mom.v);
            }
            ++result.steps;
            if (options.max_steps && state.step_num >= *options.max_steps) {
                budget_spent = true;
                break;
            }
        }
        for (auto& p : params) p.tensor.clear_grad();

        EpochLog entry;
        entry.epoch = epoch;
        entry.step = state.step_num;
        entry.lr = lr;
        entry.loss = epoch_loss / static_cast<double>(items.size());
        entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        result.epochs.push_back(entry);
        if (log.is_open()) {
            nlohmann::ordered_json j{{"epoch", entry.epoch}, {"step", entry.step}, {"lr", entry.lr},
                                     {"loss", entry.loss}, {"mode", to_string(options.mode)},
                                     {"seed", options.seed}, {"wall_ms", entry.wall_ms}};
            log << j.dump() << '\n';
            log.flush();
        }
        write_checkpoints(epoch);
        if (options.on_epoch) options.on_epoch(entry);
    }
    return result;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<ManifestEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + " lacks a tab separator");
        }
        ManifestEntry e;
        e.cache = fs::path(line.substr(0, tab));
        if (e.cache.is_relative()) e.cache = path.parent_path() / e.cache;
        const std::string classes = line.substr(tab + 1);
        if (classes != "-") {
            std::istringstream is(classes);
            for (std::string tok; std::getline(is, tok, ',');) {
                std::size_t used = 0;
                const int c = std::stoi(tok, &used);
                if (used != tok.size() || c < 0) {
                    throw std::runtime_error("bad class index '" + tok + "' on manifest line " +
                                             std::to_string(line_no));
                }
                e.classes.push_back(c);
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    for (const auto& e : entries) {
        const auto rel = e.cache.is_absolute() ? e.cache.lexically_relative(fs::absolute(path).parent_path()) : e.cache;
        out << rel.generic_string() << '\t';
        if (e.classes.empty()) {
            out << '-';
        } else {
            for (std::size_t i = 0; i < e.classes.size(); ++i) out << (i ? "," : "") << e.classes[i];
        }
        out << '\n';
    }
}

std::vector<Example> load_dataset(const std::vector<ManifestEntry>& entries, std::size_t rows, std::size_t d_class) {
    std::vector<Example> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        for (int c : e.classes) {
            if (static_cast<std::size_t>(c) >= d_class) {
                throw std::runtime_error("class index " + std::to_string(c) + " out of range in " + e.cache.string());
            }
        }
        out.push_back(example_from_sequence(read_token_cache(e.cache), rows, e.classes, d_class,
                                            e.cache.stem().string()));
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, std::size_t folds,
                                                                            std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("need at least two folds");
    const auto perm = seeded_permutation(n, CounterRng(seed, kShuffleStream).split(0xF01D));
    std::vector<std::size_t> train, validation;
    for (std::size_t i = 0; i < n; ++i) (i % folds == 0 ? validation : train).push_back(perm[i]);
    std::sort(train.begin(), train.end());
    std::sort(validation.begin(), validation.end());
    return {train, validation};
}

}  // namespace beatformer
