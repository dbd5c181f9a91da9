// Command-line front end: preprocess -> pretrain/train -> evaluate -> predict.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "beatformer/pipeline.hpp"

namespace fs = std::filesystem;
using namespace beatformer;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> detector;
    std::optional<std::string> leads;
    std::optional<std::string> out_dir;
    std::vector<std::string> overrides;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "key=value config file");
    cmd->add_option("--seed", f.seed, "random seed");
    cmd->add_option("--detector", f.detector, "two_average or pan_tompkins");
    cmd->add_option("--leads", f.leads, "comma-separated lead names to use");
    cmd->add_option("--out", f.out_dir, "output directory");
    cmd->add_option("--set", f.overrides, "extra key=value override (repeatable)");
    cmd->add_flag("--print-config", f.print_config, "print the resolved configuration and exit");
}

// defaults < config file < --set < dedicated flags
PipelineConfig resolve(const CommonFlags& f) {
    PipelineConfig cfg;
    if (!f.config_path.empty()) cfg.merge_file(f.config_path);
    for (const auto& kv : f.overrides) cfg.merge_text(kv, "--set");
    if (f.seed) cfg.seed = *f.seed;
    if (f.detector) cfg.set("data.detector", *f.detector);
    if (f.leads) cfg.set("data.leads", *f.leads);
    if (f.out_dir) cfg.out_dir = *f.out_dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beatformer: heartbeat-token transformer for ECG abnormality classification"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string input_dir;
    std::string checkpoint;
    std::string resume;
    std::vector<std::string> inputs;
    std::string cache;

    auto* preprocess = app.add_subcommand("preprocess", "turn a directory of recordings into token caches");
    add_common(preprocess, flags);
    preprocess->add_option("input_dir", input_dir, "directory of .csv / .hea recordings")->required();

    auto* pretrain = app.add_subcommand("pretrain", "generative next-beat pre-training");
    add_common(pretrain, flags);
    pretrain->add_option("--resume", resume, "checkpoint to continue from");

    auto* train = app.add_subcommand("train", "multi-label classification training");
    add_common(train, flags);
    train->add_option("--resume", resume, "checkpoint to continue from");

    auto* evaluate = app.add_subcommand("evaluate", "metrics for a checkpoint on a manifest");
    add_common(evaluate, flags);
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    auto* predict = app.add_subcommand("predict", "predicted label codes per record");
    add_common(predict, flags);
    predict->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    predict->add_option("inputs", inputs, ".btok files or manifests")->required();

    auto* inspect = app.add_subcommand("inspect", "print token statistics of a cache file");
    inspect->add_option("cache", cache, ".btok file")->required();

    CLI11_PARSE(app, argc, argv);

    if (inspect->parsed()) return cmd_inspect(cache, std::cout, std::cerr);

    PipelineConfig cfg;
    try {
        cfg = resolve(flags);
        cfg.finalize();
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    }

    if (flags.print_config) {
        std::cout << cfg.dump();
        return 0;
    }

    const std::optional<fs::path> resume_path = resume.empty() ? std::nullopt : std::optional<fs::path>(resume);
    if (preprocess->parsed()) return cmd_preprocess(input_dir, cfg, std::cout, std::cerr);
    if (pretrain->parsed()) return cmd_train(cfg, TrainMode::Pretrain, resume_path, std::cout, std::cerr);
    if (train->parsed()) return cmd_train(cfg, TrainMode::Classify, resume_path, std::cout, std::cerr);
    if (evaluate->parsed()) return cmd_evaluate(cfg, checkpoint, std::cout, std::cerr);

    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    return cmd_predict(cfg, checkpoint, paths, std::cout, std::cerr);
}
