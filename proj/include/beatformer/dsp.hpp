#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace beatformer {

class DesignError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Second-order IIR section, direct form II transposed. a[0] is always 1.
class IirFilter {
public:
    IirFilter(std::array<double, 3> b, std::array<double, 3> a);

    const std::array<double, 3>& b() const { return b_; }
    const std::array<double, 3>& a() const { return a_; }

    double step(double x);
    void reset() { z_ = {0.0, 0.0}; }

    /// H(e^{jw}) at frequency f for sampling rate fs.
    std::complex<double> response(double f, double fs) const;
    bool is_stable() const;

private:
    std::array<double, 3> b_;
    std::array<double, 3> a_;
    std::array<double, 2> z_{0.0, 0.0};
};

/// Butterworth designs via bilinear transform with frequency prewarping.
/// Require 0 < cutoff < fs/2.
IirFilter design_highpass(double cutoff_hz, double fs);
IirFilter design_lowpass(double cutoff_hz, double fs);

/// Causal filtering from a zeroed state; the filter's own state is untouched.
std::vector<double> apply_filter(const IirFilter& f, const std::vector<double>& x);

/// High-pass at low_hz cascaded with low-pass at high_hz.
std::vector<double> bandpass(const std::vector<double>& x, double fs, double low_hz, double high_hz);

using PeakList = std::vector<std::int64_t>;

enum class DetectorKind { TwoAverage, PanTompkins };

DetectorKind parse_detector(const std::string& name);
std::string to_string(DetectorKind kind);

struct TwoAverageParams {
    double low_hz = 8.0;
    double high_hz = 20.0;
    double qrs_window_ms = 120.0;
    double beat_window_ms = 600.0;
    double offset = 0.08;
    double refractory_ms = 200.0;
};

struct PanTompkinsParams {
    double low_hz = 5.0;
    double high_hz = 15.0;
    double integration_ms = 150.0;
    double threshold_blend = 0.25;
    double refractory_ms = 200.0;
    double learning_seconds = 2.0;
};

struct DetectorParams {
    TwoAverageParams two_average;
    PanTompkinsParams pan_tompkins;
};

/// Two-moving-average QRS detector. Returns strictly increasing indices with
/// gaps of at least the refractory period.
PeakList detect_two_average(const std::vector<double>& x, double fs, const TwoAverageParams& p = {});

/// Pan-Tompkins with adaptive signal/noise thresholds, no search-back.
PeakList detect_pan_tompkins(const std::vector<double>& x, double fs, const PanTompkinsParams& p = {});

PeakList detect_peaks(DetectorKind kind, const std::vector<double>& x, double fs,
                      const DetectorParams& params = {});

}  // namespace beatformer
