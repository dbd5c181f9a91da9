#include "beatformer/ecg_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace beatformer {

namespace fs = std::filesystem;
using Kind = EcgIoError::Kind;

static_assert(std::endian::native == std::endian::little,
              "sample files are read with little-endian memcpy");

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    return out;
}

// Parses the leading number of a token such as "500", "1000(0)/mV" or "360/1".
std::optional<double> leading_number(std::string_view tok, std::size_t* consumed = nullptr) {
    double value = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
    if (res.ec != std::errc() || !std::isfinite(value)) return std::nullopt;
    if (consumed) *consumed = static_cast<std::size_t>(res.ptr - tok.data());
    return value;
}

double require_number(std::string_view tok, const std::string& what) {
    std::size_t used = 0;
    auto v = leading_number(tok, &used);
    if (!v || used != tok.size()) {
        throw EcgIoError(Kind::Format, "cannot parse " + what + " from '" + std::string(tok) + "'");
    }
    return *v;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EcgIoError(Kind::NotFound, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_gain(double gain, std::size_t lead) {
    if (gain == 0.0 || !std::isfinite(gain)) {
        throw EcgIoError(Kind::InvalidMetadata, "lead " + std::to_string(lead) + " has gain 0 or non-finite gain");
    }
}

struct WfdbSignal {
    std::string file;
    double gain = 0.0;
    double baseline = 0.0;
    std::size_t byte_offset = 0;
    std::string name;
};

EcgRecord load_wfdb(const fs::path& header_path) {
    const std::string text = read_text(header_path);
    std::istringstream lines(text);
    std::string line;

    std::vector<std::string> record_fields;
    std::vector<WfdbSignal> signals;
    std::vector<std::string> labels;
    std::size_t nsig = 0;

    while (std::getline(lines, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            std::string body = trim(std::string_view(t).substr(1));
            if (body.rfind("Dx:", 0) == 0) {
                for (auto& code : split(std::string_view(body).substr(3), ',')) {
                    if (!code.empty()) labels.push_back(code);
                }
            }
            continue;
        }
        if (record_fields.empty()) {
            record_fields = split_ws(t);
            if (record_fields.size() < 4) {
                throw EcgIoError(Kind::Format, "record line needs name, signal count, fs and sample count");
            }
            if (record_fields[0].find('/') != std::string::npos) {
                throw EcgIoError(Kind::Format, "multi-segment records are not supported");
            }
            nsig = static_cast<std::size_t>(require_number(record_fields[1], "signal count"));
            continue;
        }
        if (signals.size() == nsig) {
            throw EcgIoError(Kind::Format, "more signal lines than declared");
        }
        const auto f = split_ws(t);
        if (f.size() < 3) throw EcgIoError(Kind::Format, "signal line too short: " + t);

        WfdbSignal sig;
        sig.file = f[0];
        std::size_t used = 0;
        const auto fmt = leading_number(f[1], &used);
        if (!fmt || *fmt != 16.0) {
            throw EcgIoError(Kind::Format, "only WFDB format 16 is supported, got '" + f[1] + "'");
        }
        const std::string_view rest = std::string_view(f[1]).substr(used);
        if (!rest.empty()) {
            if (rest.front() != '+') throw EcgIoError(Kind::Format, "unsupported format modifier '" + f[1] + "'");
            sig.byte_offset = static_cast<std::size_t>(require_number(rest.substr(1), "byte offset"));
        }

        const std::string_view gain_tok = f[2];
        const auto gain = leading_number(gain_tok, &used);
        if (!gain) throw EcgIoError(Kind::Format, "cannot parse gain '" + f[2] + "'");
        sig.gain = *gain;
        if (used < gain_tok.size() && gain_tok[used] == '(') {
            const auto close = gain_tok.find(')', used);
            if (close == std::string_view::npos) throw EcgIoError(Kind::Format, "unterminated baseline in '" + f[2] + "'");
            sig.baseline = require_number(gain_tok.substr(used + 1, close - used - 1), "baseline");
        }
        sig.name = f.size() >= 9 ? f[8] : "sig" + std::to_string(signals.size());
        for (std::size_t k = 9; k < f.size(); ++k) sig.name += " " + f[k];
        signals.push_back(std::move(sig));
    }

    if (record_fields.empty()) throw EcgIoError(Kind::Format, "missing record line");
    if (signals.size() != nsig) throw EcgIoError(Kind::Format, "fewer signal lines than declared");
    if (nsig == 0) throw EcgIoError(Kind::EmptyInput, "record declares no signals");

    const double fs_value = leading_number(record_fields[2]).value_or(0.0);
    if (!(fs_value > 0.0)) throw EcgIoError(Kind::InvalidMetadata, "sampling frequency must be positive");
    const auto nsamp = static_cast<std::size_t>(require_number(record_fields[3], "sample count"));
    if (nsamp == 0) throw EcgIoError(Kind::EmptyInput, "record declares zero samples");

    for (std::size_t i = 0; i < nsig; ++i) {
        check_gain(signals[i].gain, i);
        if (signals[i].file != signals[0].file || signals[i].byte_offset != signals[0].byte_offset) {
            throw EcgIoError(Kind::Format, "all signals must share one interleaved sample file");
        }
    }

    const std::string blob = read_text(header_path.parent_path() / signals[0].file);
    const std::size_t needed = signals[0].byte_offset + nsamp * nsig * 2;
    if (blob.size() < needed) {
        throw EcgIoError(Kind::Inconsistency, "sample file holds " + std::to_string(blob.size()) +
                                                  " bytes, header requires " + std::to_string(needed));
    }

    EcgRecord rec;
    rec.fs = fs_value;
    rec.source_id = record_fields[0];
    rec.labels = std::move(labels);
    rec.leads.assign(nsig, std::vector<double>(nsamp));
    const char* base = blob.data() + signals[0].byte_offset;
    for (std::size_t t = 0; t < nsamp; ++t) {
        for (std::size_t l = 0; l < nsig; ++l) {
            std::int16_t raw = 0;
            std::memcpy(&raw, base + (t * nsig + l) * 2, 2);
            rec.leads[l][t] = (static_cast<double>(raw) - signals[l].baseline) / signals[l].gain;
        }
    }
    for (const auto& s : signals) rec.lead_names.push_back(s.name);
    return rec;
}

}  // namespace

void EcgRecord::validate() const {
    if (leads.empty() || leads.front().empty()) throw EcgIoError(Kind::EmptyInput, "record has no samples");
    for (const auto& lead : leads) {
        if (lead.size() != leads.front().size()) throw EcgIoError(Kind::Inconsistency, "leads differ in length");
    }
    if (!(fs > 0.0)) throw EcgIoError(Kind::InvalidMetadata, "sampling frequency must be positive");
}

EcgRecord parse_csv_record(const std::string& text, const std::string& source_id) {
    std::istringstream lines(text);
    std::string line;
    std::optional<double> fs_value;
    std::vector<double> gains;
    std::vector<std::string> labels;
    std::vector<std::string> names;
    std::vector<std::vector<double>> leads;
    std::size_t line_no = 0;

    while (std::getline(lines, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            const auto eq = t.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = trim(std::string_view(t).substr(1, eq - 1));
            const std::string value = trim(std::string_view(t).substr(eq + 1));
            if (key == "fs") {
                fs_value = require_number(value, "fs");
            } else if (key == "gain") {
                for (const auto& g : split(value, ',')) gains.push_back(require_number(g, "gain"));
            } else if (key == "labels") {
                for (auto& code : split(value, ';')) {
                    if (!code.empty()) labels.push_back(code);
                }
            }
            continue;
        }
        if (names.empty()) {
            names = split(t, ',');
            leads.assign(names.size(), {});
            continue;
        }
        const auto cells = split(t, ',');
        if (cells.size() != names.size()) {
            throw EcgIoError(Kind::Inconsistency, "line " + std::to_string(line_no) + " has " +
                                                      std::to_string(cells.size()) + " values for " +
                                                      std::to_string(names.size()) + " leads");
        }
        for (std::size_t l = 0; l < cells.size(); ++l) leads[l].push_back(require_number(cells[l], "sample"));
    }

    if (!fs_value) throw EcgIoError(Kind::Format, "missing #fs= line");
    if (gains.empty()) throw EcgIoError(Kind::Format, "missing #gain= line");
    if (names.empty()) throw EcgIoError(Kind::Format, "missing lead-name header row");
    if (!(*fs_value > 0.0)) throw EcgIoError(Kind::InvalidMetadata, "sampling frequency must be positive");
    if (gains.size() == 1) gains.resize(names.size(), gains.front());
    if (gains.size() != names.size()) {
        throw EcgIoError(Kind::InvalidMetadata, std::to_string(gains.size()) + " gains for " +
                                                    std::to_string(names.size()) + " leads");
    }
    if (leads.front().empty()) throw EcgIoError(Kind::EmptyInput, "record has no samples");

    for (std::size_t l = 0; l < leads.size(); ++l) {
        check_gain(gains[l], l);
        for (auto& v : leads[l]) v /= gains[l];
    }

    EcgRecord rec;
    rec.leads = std::move(leads);
    rec.fs = *fs_value;
    rec.lead_names = std::move(names);
    rec.labels = std::move(labels);
    rec.source_id = source_id;
    return rec;
}

EcgRecord load_record(const fs::path& path, RecordFormat format) {
    fs::path p = path;
    if (format == RecordFormat::Auto) {
        const auto ext = p.extension().string();
        if (ext == ".csv") {
            format = RecordFormat::Csv;
        } else if (ext == ".hea" || ext.empty() || ext == ".dat") {
            format = RecordFormat::Wfdb;
        } else {
            throw EcgIoError(Kind::Format, "unrecognised record extension '" + ext + "'");
        }
    }
    if (format == RecordFormat::Csv) {
        auto rec = parse_csv_record(read_text(p), p.stem().string());
        rec.validate();
        return rec;
    }
    if (p.extension() != ".hea") p.replace_extension(".hea");
    auto rec = load_wfdb(p);
    rec.validate();
    return rec;
}

void write_wfdb_record(const EcgRecord& rec, const std::vector<double>& gains, const fs::path& stem) {
    rec.validate();
    if (gains.size() != rec.num_leads()) throw std::invalid_argument("one gain per lead required");
    const std::string name = stem.filename().string();
    const std::size_t n = rec.num_samples();

    std::string blob(n * rec.num_leads() * 2, '\0');
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t l = 0; l < rec.num_leads(); ++l) {
            const double scaled = std::round(rec.leads[l][t] * gains[l]);
            const auto raw = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
            std::memcpy(blob.data() + (t * rec.num_leads() + l) * 2, &raw, 2);
        }
    }
    {
        std::ofstream dat(fs::path(stem).replace_extension(".dat"), std::ios::binary);
        dat.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }

    std::ofstream hea(fs::path(stem).replace_extension(".hea"));
    hea << name << ' ' << rec.num_leads() << ' ' << rec.fs << ' ' << n << '\n';
    for (std::size_t l = 0; l < rec.num_leads(); ++l) {
        const std::string lead = l < rec.lead_names.size() ? rec.lead_names[l] : "sig" + std::to_string(l);
        hea << name << ".dat 16 " << gains[l] << "/mV 16 0 0 0 0 " << lead << '\n';
    }
    if (!rec.labels.empty()) {
        hea << "#Dx: ";
        for (std::size_t i = 0; i < rec.labels.size(); ++i) hea << (i ? "," : "") << rec.labels[i];
        hea << '\n';
    }
}

void write_csv_record(const EcgRecord& rec, const std::vector<double>& gains, const fs::path& path) {
    rec.validate();
    if (gains.size() != rec.num_leads()) throw std::invalid_argument("one gain per lead required");
    std::ofstream out(path);
    out << "#fs=" << rec.fs << '\n' << "#gain=";
    for (std::size_t l = 0; l < gains.size(); ++l) out << (l ? "," : "") << gains[l];
    out << '\n';
    if (!rec.labels.empty()) {
        out << "#labels=";
        for (std::size_t i = 0; i < rec.labels.size(); ++i) out << (i ? ";" : "") << rec.labels[i];
        out << '\n';
    }
    for (std::size_t l = 0; l < rec.num_leads(); ++l) {
        out << (l ? "," : "") << (l < rec.lead_names.size() ? rec.lead_names[l] : "sig" + std::to_string(l));
    }
    out << '\n';
    for (std::size_t t = 0; t < rec.num_samples(); ++t) {
        for (std::size_t l = 0; l < rec.num_leads(); ++l) {
            out << (l ? "," : "") << static_cast<long long>(std::llround(rec.leads[l][t] * gains[l]));
        }
        out << '\n';
    }
}

std::vector<double> resample_linear(const std::vector<double>& x, double fs, double target_fs) {
    if (x.empty()) throw EcgIoError(Kind::EmptyInput, "cannot resample an empty signal");
    if (!(fs > 0.0) || !(target_fs > 0.0)) throw std::invalid_argument("sampling rates must be positive");
    if (fs == target_fs) return x;

    const auto n = x.size();
    const auto out_len = static_cast<std::size_t>(std::floor(static_cast<double>(n) * target_fs / fs));
    std::vector<double> y(out_len);
    const double step = fs / target_fs;
    for (std::size_t j = 0; j < out_len; ++j) {
        const double u = static_cast<double>(j) * step;
        if (n == 1) {
            y[j] = x[0];
            continue;
        }
        // Past the end the last segment is extended.
        const auto i0 = std::min(static_cast<std::size_t>(u), n - 2);
        const double frac = u - static_cast<double>(i0);
        y[j] = x[i0] + frac * (x[i0 + 1] - x[i0]);
    }
    return y;
}

EcgRecord resample_record(const EcgRecord& rec, double target_fs) {
    if (rec.leads.empty() || rec.num_samples() == 0) {
        throw EcgIoError(Kind::EmptyInput, "cannot resample an empty record");
    }
    EcgRecord out = rec;
    for (auto& lead : out.leads) lead = resample_linear(lead, rec.fs, target_fs);
    out.fs = target_fs;
    return out;
}

std::vector<std::int64_t> rescale_peaks(const std::vector<std::int64_t>& peaks, double src_fs, double dst_fs) {
    std::vector<std::int64_t> out;
    out.reserve(peaks.size());
    const double ratio = dst_fs / src_fs;
    for (auto p : peaks) out.push_back(static_cast<std::int64_t>(std::llround(static_cast<double>(p) * ratio)));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

LabelMap LabelMap::parse(const std::string& text, std::size_t expected_classes) {
    LabelMap map;
    std::istringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto where = " (line " + std::to_string(line_no) + ")";
        if (const auto arrow = t.find("=>"); arrow != std::string::npos) {
            const std::string from = trim(std::string_view(t).substr(0, arrow));
            const std::string to = trim(std::string_view(t).substr(arrow + 2));
            if (from.empty() || to.empty()) throw EcgIoError(Kind::Format, "empty code in equivalence" + where);
            if (!map.equivalences_.emplace(from, to).second) {
                throw EcgIoError(Kind::Format, "duplicate equivalence for " + from + where);
            }
            continue;
        }
        const auto comma = t.find(',');
        if (comma == std::string::npos) throw EcgIoError(Kind::Format, "expected code,class_index" + where);
        const std::string code = trim(std::string_view(t).substr(0, comma));
        const double idx = require_number(trim(std::string_view(t).substr(comma + 1)), "class index");
        if (code.empty() || idx < 0 || idx != std::floor(idx)) {
            throw EcgIoError(Kind::Format, "bad scored entry" + where);
        }
        if (!map.scored_.emplace(code, static_cast<int>(idx)).second) {
            throw EcgIoError(Kind::Format, "duplicate scored code " + code + where);
        }
    }

    map.by_index_.assign(map.scored_.size(), {});
    std::vector<bool> seen(map.scored_.size(), false);
    for (const auto& [code, idx] : map.scored_) {
        if (static_cast<std::size_t>(idx) >= seen.size() || seen[static_cast<std::size_t>(idx)]) {
            throw EcgIoError(Kind::InvalidMetadata, "class indices must be a permutation of 0..n-1");
        }
        seen[static_cast<std::size_t>(idx)] = true;
        map.by_index_[static_cast<std::size_t>(idx)] = code;
    }
    if (map.scored_.size() != expected_classes) {
        throw EcgIoError(Kind::InvalidMetadata, "label map defines " + std::to_string(map.scored_.size()) +
                                                    " classes, expected " + std::to_string(expected_classes));
    }
    for (const auto& [from, to] : map.equivalences_) {
        if (map.scored_.count(from)) {
            throw EcgIoError(Kind::InvalidMetadata, "scored code " + from + " cannot be an alias");
        }
        if (!map.scored_.count(to)) {
            throw EcgIoError(Kind::InvalidMetadata, "equivalence target " + to + " is not a scored code");
        }
    }
    return map;
}

LabelMap LabelMap::load(const fs::path& path, std::size_t expected_classes) {
    return parse(read_text(path), expected_classes);
}

std::string LabelMap::canonical(const std::string& code) const {
    const auto it = equivalences_.find(code);
    return it == equivalences_.end() ? code : it->second;
}

std::optional<int> LabelMap::class_index(const std::string& code) const {
    const auto it = scored_.find(canonical(code));
    if (it == scored_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::vector<int>> filter_labels(const EcgRecord& rec, const LabelMap& map) {
    std::set<int> classes;
    for (const auto& code : rec.labels) {
        if (auto idx = map.class_index(code)) classes.insert(*idx);
    }
    if (classes.empty()) return std::nullopt;
    return std::vector<int>(classes.begin(), classes.end());
}

}  // namespace beatformer
