#include "beatformer/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace beatformer {

IirFilter::IirFilter(std::array<double, 3> b, std::array<double, 3> a) : b_(b), a_(a) {
    if (a_[0] == 0.0) throw DesignError("a[0] must be nonzero");
    for (auto& c : b_) c /= a[0];
    for (auto& c : a_) c /= a[0];
}

double IirFilter::step(double x) {
    const double y = b_[0] * x + z_[0];
    z_[0] = b_[1] * x - a_[1] * y + z_[1];
    z_[1] = b_[2] * x - a_[2] * y;
    return y;
}

std::complex<double> IirFilter::response(double f, double fs) const {
    const auto z1 = std::polar(1.0, -2.0 * std::numbers::pi * f / fs);
    const auto z2 = z1 * z1;
    return (b_[0] + b_[1] * z1 + b_[2] * z2) / (a_[0] + a_[1] * z1 + a_[2] * z2);
}

bool IirFilter::is_stable() const {
    // Jury conditions for z^2 + a1 z + a2.
    return std::abs(a_[2]) < 1.0 && std::abs(a_[1]) < 1.0 + a_[2];
}

namespace {

struct Prewarped {
    double k;
    double norm;
};

Prewarped prewarp(double cutoff_hz, double fs) {
    if (!(fs > 0.0)) throw DesignError("sampling rate must be positive");
    if (!(cutoff_hz > 0.0) || cutoff_hz >= fs / 2.0) {
        throw DesignError("cutoff must lie strictly between 0 and fs/2");
    }
    const double k = std::tan(std::numbers::pi * cutoff_hz / fs);
    return {k, 1.0 + std::numbers::sqrt2 * k + k * k};
}

std::array<double, 3> butterworth_denominator(const Prewarped& p) {
    return {1.0, 2.0 * (p.k * p.k - 1.0) / p.norm, (1.0 - std::numbers::sqrt2 * p.k + p.k * p.k) / p.norm};
}

// Zero-padded centered moving average of width w.
std::vector<double> centered_average(const std::vector<double>& x, std::size_t w) {
    const auto n = x.size();
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
    const std::size_t left = (w - 1) / 2;
    const std::size_t right = w / 2;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= left ? i - left : 0;
        const std::size_t hi = std::min(n, i + right + 1);
        out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(w);
    }
    return out;
}

std::vector<double> trailing_average(const std::vector<double>& x, std::size_t w) {
    std::vector<double> out(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i];
        if (i >= w) acc -= x[i - w];
        out[i] = acc / static_cast<double>(w);
    }
    return out;
}

std::size_t samples_for(double ms, double fs) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(ms * fs / 1000.0)));
}

std::size_t argmax_abs(const std::vector<double>& x, std::size_t lo, std::size_t hi) {
    std::size_t best = lo;
    for (std::size_t i = lo; i < hi; ++i) {
        if (std::abs(x[i]) > std::abs(x[best])) best = i;
    }
    return best;
}

}  // namespace

IirFilter design_highpass(double cutoff_hz, double fs) {
    const auto p = prewarp(cutoff_hz, fs);
    const double b0 = 1.0 / p.norm;
    return IirFilter({b0, -2.0 * b0, b0}, butterworth_denominator(p));
}

IirFilter design_lowpass(double cutoff_hz, double fs) {
    const auto p = prewarp(cutoff_hz, fs);
    const double b0 = p.k * p.k / p.norm;
    return IirFilter({b0, 2.0 * b0, b0}, butterworth_denominator(p));
}

std::vector<double> apply_filter(const IirFilter& f, const std::vector<double>& x) {
    IirFilter work = f;
    work.reset();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = work.step(x[i]);
    return y;
}

std::vector<double> bandpass(const std::vector<double>& x, double fs, double low_hz, double high_hz) {
    return apply_filter(design_lowpass(high_hz, fs), apply_filter(design_highpass(low_hz, fs), x));
}

DetectorKind parse_detector(const std::string& name) {
    if (name == "two_average") return DetectorKind::TwoAverage;
    if (name == "pan_tompkins") return DetectorKind::PanTompkins;
    throw std::invalid_argument("unknown detector '" + name + "' (expected two_average or pan_tompkins)");
}

std::string to_string(DetectorKind kind) {
    return kind == DetectorKind::TwoAverage ? "two_average" : "pan_tompkins";
}

PeakList detect_two_average(const std::vector<double>& x, double fs, const TwoAverageParams& p) {
    if (fs < 100.0) throw std::invalid_argument("detectors need fs >= 100 Hz");
    const std::size_t w_qrs = samples_for(p.qrs_window_ms, fs);
    const std::size_t w_beat = samples_for(p.beat_window_ms, fs);
    const auto refractory = static_cast<std::int64_t>(samples_for(p.refractory_ms, fs));
    if (x.size() < w_beat) return {};

    const auto filtered = bandpass(x, fs, p.low_hz, p.high_hz);
    std::vector<double> energy(filtered.size());
    std::transform(filtered.begin(), filtered.end(), energy.begin(), [](double v) { return v * v; });
    const double mean_energy = std::accumulate(energy.begin(), energy.end(), 0.0) / static_cast<double>(energy.size());
    if (!(mean_energy > 0.0)) return {};

    const auto ma_qrs = centered_average(energy, w_qrs);
    const auto ma_beat = centered_average(energy, w_beat);
    const double offset = p.offset * mean_energy;

    PeakList peaks;
    const std::size_t n = energy.size();
    std::size_t i = 0;
    while (i < n) {
        if (!(ma_qrs[i] > ma_beat[i] + offset)) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        while (i < n && ma_qrs[i] > ma_beat[i] + offset) ++i;
        if (i - start < w_qrs) continue;

        const auto peak = static_cast<std::int64_t>(argmax_abs(filtered, start, i));
        if (!peaks.empty() && peak - peaks.back() < refractory) {
            // Keep the stronger of two candidates inside one refractory period.
            if (std::abs(filtered[static_cast<std::size_t>(peak)]) >
                std::abs(filtered[static_cast<std::size_t>(peaks.back())])) {
                peaks.back() = peak;
            }
            continue;
        }
        peaks.push_back(peak);
    }
    return peaks;
}

PeakList detect_pan_tompkins(const std::vector<double>& x, double fs, const PanTompkinsParams& p) {
    if (fs < 100.0) throw std::invalid_argument("detectors need fs >= 100 Hz");
    const auto learning = static_cast<std::size_t>(std::lround(p.learning_seconds * fs));
    if (x.size() < learning || learning == 0) return {};

    const auto filtered = bandpass(x, fs, p.low_hz, p.high_hz);
    const std::size_t n = filtered.size();
    auto at = [&](std::size_t i, std::size_t back) { return i >= back ? filtered[i - back] : 0.0; };

    std::vector<double> energy(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (2.0 * at(i, 0) + at(i, 1) - at(i, 3) - 2.0 * at(i, 4)) * fs / 8.0;
        energy[i] = d * d;
    }
    const std::size_t w = samples_for(p.integration_ms, fs);
    const auto mwi = trailing_average(energy, w);
    const auto refractory = static_cast<std::int64_t>(samples_for(p.refractory_ms, fs));

    const auto learn_end = mwi.begin() + static_cast<std::ptrdiff_t>(learning);
    const double learn_max = *std::max_element(mwi.begin(), learn_end);
    if (!(learn_max > 0.0)) return {};
    double spki = 0.25 * learn_max;
    double npki = 0.5 * std::accumulate(mwi.begin(), learn_end, 0.0) / static_cast<double>(learning);
    double threshold = npki + p.threshold_blend * (spki - npki);

    PeakList peaks;
    std::int64_t last_mwi_peak = -refractory;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1])) continue;
        const auto idx = static_cast<std::int64_t>(i);
        if (idx - last_mwi_peak < refractory) continue;

        if (mwi[i] > threshold) {
            // The integrator lags the QRS; locate the R-peak in the band-passed signal.
            const std::size_t lo = i >= w + 2 ? i - w - 2 : 0;
            const auto r = static_cast<std::int64_t>(argmax_abs(filtered, lo, i + 1));
            if (peaks.empty() || r - peaks.back() >= refractory) {
                peaks.push_back(r);
                last_mwi_peak = idx;
                spki = 0.125 * mwi[i] + 0.875 * spki;
            }
        } else {
            npki = 0.125 * mwi[i] + 0.875 * npki;
        }
        threshold = npki + p.threshold_blend * (spki - npki);
    }
    return peaks;
}

PeakList detect_peaks(DetectorKind kind, const std::vector<double>& x, double fs, const DetectorParams& params) {
    return kind == DetectorKind::TwoAverage ? detect_two_average(x, fs, params.two_average)
                                            : detect_pan_tompkins(x, fs, params.pan_tompkins);
}

}  // namespace beatformer
