#include "beatformer/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

namespace beatformer {

namespace fs = std::filesystem;

namespace {

struct RecordOutcome {
    std::optional<BeatSequence> sequence;
    std::vector<int> classes;
    std::string skip_reason;
};

EcgRecord select_leads(const EcgRecord& rec, const std::vector<std::string>& wanted) {
    if (wanted.empty()) return rec;
    EcgRecord out = rec;
    out.leads.clear();
    out.lead_names.clear();
    for (const auto& name : wanted) {
        const auto it = std::find(rec.lead_names.begin(), rec.lead_names.end(), name);
        if (it == rec.lead_names.end()) throw std::runtime_error("record has no lead named " + name);
        const auto idx = static_cast<std::size_t>(it - rec.lead_names.begin());
        out.leads.push_back(rec.leads[idx]);
        out.lead_names.push_back(name);
    }
    return out;
}

std::optional<std::string> head_from_signature(const std::string& signature) {
    std::istringstream is(signature);
    for (std::string line; std::getline(is, line);) {
        if (line.rfind("head=", 0) == 0) return line.substr(5);
    }
    return std::nullopt;
}

fs::path default_manifest(const PipelineConfig& cfg) { return cfg.out_dir / "manifest.txt"; }

std::size_t sequence_rows(const PipelineConfig& cfg) { return std::min(kMaxBeats, cfg.model.max_pos); }

bool check_token_width(const PipelineConfig& cfg, std::ostream& err) {
    if (cfg.model.d_model == kTokenLength) return true;
    err << "model.d_model must equal the beat token length " << kTokenLength << " to train on token caches\n";
    return false;
}

// Builds a model whose head matches the checkpoint and loads it; prints the
// config diff and returns nullopt on mismatch.
std::optional<TransformerModel> load_model(const PipelineConfig& cfg, const fs::path& checkpoint, std::ostream& err) {
    const auto info = read_checkpoint_info(checkpoint);
    ModelConfig mc = cfg.model;
    if (auto head = head_from_signature(info.signature)) mc.head = parse_head(*head);
    TransformerModel model(mc, cfg.seed);
    try {
        load_checkpoint(checkpoint, model, nullptr, LoadScope::Full);
    } catch (const CheckpointMismatch& e) {
        err << "error: " << e.what() << '\n' << e.diff();
        return std::nullopt;
    }
    return model;
}

}  // namespace

ProcessedRecord preprocess_record(const EcgRecord& rec, const PipelineConfig& cfg) {
    rec.validate();
    EcgRecord work = select_leads(rec, cfg.leads);

    std::size_t detect_idx = 0;
    if (!cfg.detect_lead.empty()) {
        const auto it = std::find(work.lead_names.begin(), work.lead_names.end(), cfg.detect_lead);
        if (it == work.lead_names.end()) throw std::runtime_error("detection lead " + cfg.detect_lead + " not selected");
        detect_idx = static_cast<std::size_t>(it - work.lead_names.begin());
    }

    const auto hp = design_highpass(cfg.highpass_hz, work.fs);
    for (auto& lead : work.leads) lead = apply_filter(hp, lead);

    const auto raw_peaks = detect_peaks(cfg.detector, work.leads[detect_idx], work.fs, cfg.detector_params);
    const double src_fs = work.fs;
    work = resample_record(work, cfg.target_fs);

    ProcessedRecord out;
    out.peaks = rescale_peaks(raw_peaks, src_fs, cfg.target_fs);
    const auto n = static_cast<std::int64_t>(work.num_samples());
    std::erase_if(out.peaks, [n](std::int64_t p) { return p < 0 || p >= n; });
    out.fused = fuse_rms(work);
    out.sequence = build_sequence(out.fused, out.peaks);
    return out;
}

PreprocessReport run_preprocess(const fs::path& input_dir, const PipelineConfig& cfg) {
    if (!fs::is_directory(input_dir)) throw std::runtime_error(input_dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(input_dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".csv" || ext == ".hea")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    std::optional<LabelMap> labels;
    if (!cfg.label_map.empty()) labels = LabelMap::load(cfg.label_map, cfg.model.d_class);

    std::vector<RecordOutcome> outcomes(files.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++) {
            auto& o = outcomes[i];
            try {
                const auto rec = load_record(files[i]);
                if (labels) {
                    const auto classes = filter_labels(rec, *labels);
                    if (!classes) {
                        o.skip_reason = "no scored labels";
                        continue;
                    }
                    o.classes = *classes;
                }
                o.sequence = preprocess_record(rec, cfg).sequence;
            } catch (const std::exception& e) {
                o.skip_reason = e.what();
            }
        }
    };
    const std::size_t hw = cfg.workers ? cfg.workers : std::max(1u, std::thread::hardware_concurrency());
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(hw, files.size()); ++t) pool.emplace_back(worker);
    }

    fs::create_directories(cfg.out_dir / "tokens");
    PreprocessReport report;
    std::vector<std::string> used_ids;
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string id = files[i].stem().string();
        if (!outcomes[i].sequence) {
            report.skipped.push_back({files[i].filename().string(), outcomes[i].skip_reason});
            continue;
        }
        if (std::find(used_ids.begin(), used_ids.end(), id) != used_ids.end()) {
            report.skipped.push_back({files[i].filename().string(), "duplicate record id " + id});
            continue;
        }
        used_ids.push_back(id);
        const fs::path rel = fs::path("tokens") / (id + ".btok");
        write_token_cache(*outcomes[i].sequence, cfg.out_dir / rel);
        report.manifest.push_back({rel, outcomes[i].classes});
    }

    write_manifest(default_manifest(cfg), report.manifest);
    std::ofstream skip(cfg.out_dir / "skipped.txt");
    for (const auto& s : report.skipped) skip << s.file << '\t' << s.reason << '\n';
    return report;
}

int cmd_preprocess(const fs::path& input_dir, const PipelineConfig& cfg, std::ostream& out, std::ostream& err) {
    PreprocessReport report;
    try {
        report = run_preprocess(input_dir, cfg);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    for (const auto& s : report.skipped) err << "skipped " << s.file << ": " << s.reason << '\n';
    out << "wrote " << report.manifest.size() << " token caches, skipped " << report.skipped.size() << " record(s)\n";
    if (report.manifest.empty()) {
        err << "error: no usable records in " << input_dir.string() << '\n';
        return 2;
    }
    return 0;
}

int cmd_train(const PipelineConfig& cfg_in, TrainMode mode, const std::optional<fs::path>& resume, std::ostream& out,
              std::ostream& err) {
    PipelineConfig cfg = cfg_in;
    cfg.model.head = mode == TrainMode::Pretrain ? HeadKind::Generative : HeadKind::Classifier;
    try {
        cfg.finalize();
        if (!check_token_width(cfg, err)) return 1;
        const auto manifest = cfg.train_manifest.empty() ? default_manifest(cfg) : cfg.train_manifest;
        const auto dataset = load_dataset(read_manifest(manifest), sequence_rows(cfg), cfg.model.d_class);

        TransformerModel model(cfg.model, cfg.seed);
        if (mode == TrainMode::Classify && !cfg.pretrained.empty() && !resume) {
            load_checkpoint(cfg.pretrained, model, nullptr, LoadScope::TrunkOnly);
            out << "initialised encoder stack from " << cfg.pretrained.string() << '\n';
        }

        fs::create_directories(cfg.out_dir);
        std::ofstream(cfg.out_dir / "config.txt") << cfg.dump();

        TrainOptions opts;
        opts.mode = mode;
        opts.optim = cfg.optim;
        opts.seed = cfg.seed;
        opts.freeze_trunk = cfg.freeze_trunk;
        opts.out_dir = cfg.out_dir;
        opts.resume_from = resume;
        opts.on_epoch = [&out](const EpochLog& e) {
            out << "epoch " << e.epoch << " step " << e.step << " lr " << e.lr << " loss " << std::setprecision(8)
                << e.loss << '\n';
        };
        const auto result = train(model, dataset, opts);
        if (result.skipped) out << "skipped " << result.skipped << " sequence(s) with fewer than two beats\n";
        out << "checkpoint " << (cfg.out_dir / "model.ckpt").string() << '\n';
        return 0;
    } catch (const CheckpointMismatch& e) {
        err << "error: " << e.what() << '\n' << e.diff();
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_evaluate(const PipelineConfig& cfg_in, const fs::path& checkpoint, std::ostream& out, std::ostream& err) {
    PipelineConfig cfg = cfg_in;
    try {
        cfg.finalize();
        auto model = load_model(cfg, checkpoint, err);
        if (!model) return 3;
        fs::path manifest = cfg.eval_manifest;
        if (manifest.empty()) manifest = cfg.train_manifest.empty() ? default_manifest(cfg) : cfg.train_manifest;
        const auto dataset = load_dataset(read_manifest(manifest), sequence_rows(cfg), cfg.model.d_class);
        const auto report = evaluate(*model, dataset, cfg.optim.threshold);
        const auto json = report.to_json();
        fs::create_directories(cfg.out_dir);
        std::ofstream(cfg.out_dir / "metrics.json") << json << '\n';
        out << json << '\n';
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_predict(const PipelineConfig& cfg_in, const fs::path& checkpoint, const std::vector<fs::path>& inputs,
                std::ostream& out, std::ostream& err) {
    PipelineConfig cfg = cfg_in;
    try {
        cfg.finalize();
        auto model = load_model(cfg, checkpoint, err);
        if (!model) return 3;
        if (model->config().head != HeadKind::Classifier) {
            err << "error: predict needs a classifier checkpoint\n";
            return 1;
        }
        std::optional<LabelMap> labels;
        if (!cfg.label_map.empty()) labels = LabelMap::load(cfg.label_map, cfg.model.d_class);

        std::vector<fs::path> caches;
        for (const auto& in : inputs) {
            if (in.extension() == ".btok") {
                caches.push_back(in);
            } else {
                for (const auto& e : read_manifest(in)) caches.push_back(e.cache);
            }
        }
        if (caches.empty()) {
            err << "error: nothing to predict\n";
            return 1;
        }

        fs::create_directories(cfg.out_dir);
        std::ofstream file(cfg.out_dir / "predictions.txt");
        for (const auto& cache : caches) {
            const auto ex = example_from_sequence(read_token_cache(cache), sequence_rows(cfg), {}, cfg.model.d_class);
            const auto probs = model->forward(ex.tokens, ex.n_real).data();
            const auto pred = threshold_predict(probs, cfg.optim.threshold);
            std::ostringstream line;
            line << cache.stem().string() << '\t';
            bool first = true;
            for (std::size_t c = 0; c < pred.size(); ++c) {
                if (!pred[c]) continue;
                line << (first ? "" : " ") << (labels ? labels->code_for(static_cast<int>(c)) : std::to_string(c));
                first = false;
            }
            out << line.str() << '\n';
            file << line.str() << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

int cmd_inspect(const fs::path& cache, std::ostream& out, std::ostream& err) {
    try {
        const auto seq = read_token_cache(cache);
        out << "file " << cache.string() << '\n' << "n_real " << seq.n_real << '\n';
        out << "beat nonzero first last r_value max\n";
        for (std::size_t k = 0; k < seq.n_real; ++k) {
            const auto& v = seq.tokens[k].values;
            std::size_t nonzero = 0, first = v.size(), last = 0;
            double peak = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (v[i] == 0.0) continue;
                ++nonzero;
                first = std::min(first, i);
                last = i;
                peak = std::max(peak, std::abs(v[i]));
            }
            out << k << ' ' << nonzero << ' ' << (nonzero ? first : 0) << ' ' << last << ' ' << v[kRPeakAnchor] << ' '
                << peak << '\n';
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace beatformer
