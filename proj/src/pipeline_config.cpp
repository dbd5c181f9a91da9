#include "beatformer/pipeline_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace beatformer {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw std::invalid_argument("invalid value '" + value + "' for " + key);
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw std::invalid_argument("invalid boolean '" + value + "' for " + key);
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const PipelineConfig&)>;

struct Field {
    Setter set;
    Getter get;
};

template <typename T>
std::string show(const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

template <typename T, typename Access>
Field number_field(Access access) {
    return {[access](PipelineConfig& c, const std::string& k, const std::string& v) {
                access(c) = parse_number<T>(k, v);
            },
            [access](const PipelineConfig& c) { return show(access(c)); }};
}

template <typename Access>
Field path_field(Access access) {
    return {[access](PipelineConfig& c, const std::string&, const std::string& v) { access(c) = v; },
            [access](const PipelineConfig& c) { return access(c).string(); }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> t;
        t["model.d_model"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.d_model; });
        t["model.n_encoders"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.n_encoders; });
        t["model.n_heads"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.n_heads; });
        t["model.dff"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.dff; });
        t["model.max_pos"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.max_pos; });
        t["model.d_class"] = number_field<std::size_t>([](auto& c) -> auto& { return c.model.d_class; });
        t["model.dropout"] = number_field<double>([](auto& c) -> auto& { return c.model.dropout_rate; });
        t["model.causal"] = {[](PipelineConfig& c, const std::string& k, const std::string& v) {
                                 c.model.causal = parse_bool(k, v);
                             },
                             [](const PipelineConfig& c) { return std::string(c.model.causal ? "true" : "false"); }};

        t["optim.beta1"] = number_field<double>([](auto& c) -> auto& { return c.optim.beta1; });
        t["optim.beta2"] = number_field<double>([](auto& c) -> auto& { return c.optim.beta2; });
        t["optim.epsilon"] = number_field<double>([](auto& c) -> auto& { return c.optim.epsilon; });
        t["optim.warmup_steps"] = number_field<std::uint64_t>([](auto& c) -> auto& { return c.optim.warmup_steps; });
        t["optim.batch_size"] = number_field<std::size_t>([](auto& c) -> auto& { return c.optim.batch_size; });
        t["optim.epochs"] = number_field<std::size_t>([](auto& c) -> auto& { return c.optim.epochs; });
        t["optim.threshold"] = number_field<double>([](auto& c) -> auto& { return c.optim.threshold; });
        t["optim.freeze_trunk"] = {[](PipelineConfig& c, const std::string& k, const std::string& v) {
                                       c.freeze_trunk = parse_bool(k, v);
                                   },
                                   [](const PipelineConfig& c) { return std::string(c.freeze_trunk ? "true" : "false"); }};

        t["data.detector"] = {[](PipelineConfig& c, const std::string&, const std::string& v) {
                                  c.detector = parse_detector(v);
                              },
                              [](const PipelineConfig& c) { return to_string(c.detector); }};
        t["data.leads"] = {[](PipelineConfig& c, const std::string&, const std::string& v) { c.leads = split_list(v); },
                           [](const PipelineConfig& c) {
                               std::string s;
                               for (std::size_t i = 0; i < c.leads.size(); ++i) s += (i ? "," : "") + c.leads[i];
                               return s;
                           }};
        t["data.detect_lead"] = {[](PipelineConfig& c, const std::string&, const std::string& v) { c.detect_lead = v; },
                                 [](const PipelineConfig& c) { return c.detect_lead; }};
        t["data.target_fs"] = number_field<double>([](auto& c) -> auto& { return c.target_fs; });
        t["data.highpass_hz"] = number_field<double>([](auto& c) -> auto& { return c.highpass_hz; });
        t["data.label_map"] = path_field([](auto& c) -> auto& { return c.label_map; });
        t["data.train_manifest"] = path_field([](auto& c) -> auto& { return c.train_manifest; });
        t["data.eval_manifest"] = path_field([](auto& c) -> auto& { return c.eval_manifest; });
        t["data.pretrained"] = path_field([](auto& c) -> auto& { return c.pretrained; });

        t["data.two_average.qrs_window_ms"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.two_average.qrs_window_ms; });
        t["data.two_average.beat_window_ms"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.two_average.beat_window_ms; });
        t["data.two_average.offset"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.two_average.offset; });
        t["data.two_average.refractory_ms"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.two_average.refractory_ms; });
        t["data.pan_tompkins.integration_ms"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.pan_tompkins.integration_ms; });
        t["data.pan_tompkins.threshold_blend"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.pan_tompkins.threshold_blend; });
        t["data.pan_tompkins.refractory_ms"] = number_field<double>([](auto& c) -> auto& { return c.detector_params.pan_tompkins.refractory_ms; });

        t["seed"] = number_field<std::uint64_t>([](auto& c) -> auto& { return c.seed; });
        t["out_dir"] = path_field([](auto& c) -> auto& { return c.out_dir; });
        t["workers"] = number_field<std::size_t>([](auto& c) -> auto& { return c.workers; });
        return t;
    }();
    return table;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string item; std::getline(is, item, sep);) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second.set(*this, key, trim(value));
}

void PipelineConfig::merge_text(const std::string& text, const std::string& origin) {
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": expected key=value");
        }
        try {
            set(trim(t.substr(0, eq)), t.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void PipelineConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
}

void PipelineConfig::finalize() {
    model.validate();
    optim.d_model = model.d_model;
    optim.validate();
    if (!(target_fs >= 100.0)) throw std::invalid_argument("data.target_fs must be at least 100 Hz");
    if (!(highpass_hz > 0.0)) throw std::invalid_argument("data.highpass_hz must be positive");
}

std::string PipelineConfig::dump() const {
    std::ostringstream os;
    for (const auto& [key, field] : fields()) os << key << '=' << field.get(*this) << '\n';
    return os.str();
}

std::vector<std::string> PipelineConfig::known_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, field] : fields()) keys.push_back(key);
    return keys;
}

}  // namespace beatformer
