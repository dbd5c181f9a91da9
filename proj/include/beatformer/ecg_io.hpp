#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace beatformer {

class EcgIoError : public std::runtime_error {
public:
    enum class Kind { Format, InvalidMetadata, Inconsistency, EmptyInput, NotFound };

    EcgIoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Multi-lead recording in physical units (raw ADC value / gain).
struct EcgRecord {
    std::vector<std::vector<double>> leads;  // [num_leads][num_samples]
    double fs = 0.0;
    std::vector<std::string> lead_names;
    std::vector<std::string> labels;  // diagnosis codes as found in the file
    std::string source_id;

    std::size_t num_leads() const { return leads.size(); }
    std::size_t num_samples() const { return leads.empty() ? 0 : leads.front().size(); }

    /// Throws EcgIoError if the lead matrix is ragged, empty or fs <= 0.
    void validate() const;
};

enum class RecordFormat { Auto, Wfdb, Csv };

/// Loads a recording. For WFDB pass the path of the `.hea` file (or the record
/// path without extension); for CSV the `.csv` file. Auto picks by extension.
EcgRecord load_record(const std::filesystem::path& path, RecordFormat format = RecordFormat::Auto);

EcgRecord parse_csv_record(const std::string& text, const std::string& source_id);

/// Writes a record as a format-16 WFDB pair (`<stem>.hea`, `<stem>.dat`).
/// Samples are converted back to ADC units with the given gains and rounded.
void write_wfdb_record(const EcgRecord& rec, const std::vector<double>& gains,
                       const std::filesystem::path& stem);

/// Writes a record in the CSV layout accepted by load_record.
void write_csv_record(const EcgRecord& rec, const std::vector<double>& gains,
                      const std::filesystem::path& path);

/// Linear interpolation onto a uniform grid at target_fs. Output length is
/// floor(n * target_fs / fs); positions past the last sample extend the final
/// segment's slope.
EcgRecord resample_record(const EcgRecord& rec, double target_fs);

std::vector<double> resample_linear(const std::vector<double>& x, double fs, double target_fs);

/// Maps R-peak indices between sampling rates: round(i * dst / src), sorted
/// and deduplicated.
std::vector<std::int64_t> rescale_peaks(const std::vector<std::int64_t>& peaks, double src_fs,
                                        double dst_fs);

/// Scored label codes with their class index plus an equivalence table that
/// folds alias codes onto a canonical scored code.
class LabelMap {
public:
    /// Parses `code,class_index` and `code=>canonical` lines. Blank lines and
    /// lines starting with '#' are ignored. The class indices must cover
    /// 0..expected_classes-1 exactly once.
    static LabelMap parse(const std::string& text, std::size_t expected_classes = 28);
    static LabelMap load(const std::filesystem::path& path, std::size_t expected_classes = 28);

    std::size_t num_classes() const { return by_index_.size(); }
    std::string canonical(const std::string& code) const;
    std::optional<int> class_index(const std::string& code) const;
    const std::string& code_for(int class_index) const { return by_index_.at(static_cast<std::size_t>(class_index)); }

private:
    std::map<std::string, int> scored_;
    std::map<std::string, std::string> equivalences_;
    std::vector<std::string> by_index_;
};

/// Applies equivalences then drops non-scored codes. Returns sorted class
/// indices, or nullopt when nothing scored remains.
std::optional<std::vector<int>> filter_labels(const EcgRecord& rec, const LabelMap& map);

}  // namespace beatformer
