#include "beatformer/beat_tokenizer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace beatformer {

namespace {

constexpr char kMagic[4] = {'B', 'T', 'O', 'K'};
constexpr std::uint32_t kCacheVersion = 1;

static_assert(std::endian::native == std::endian::little, "token cache is written little-endian");

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated token cache");
    return v;
}

}  // namespace

std::vector<double> fuse_rms(const EcgRecord& rec) {
    const std::size_t n = rec.num_samples();
    std::vector<const std::vector<double>*> active;
    for (const auto& lead : rec.leads) {
        if (std::any_of(lead.begin(), lead.end(), [](double v) { return v != 0.0; })) active.push_back(&lead);
    }
    std::vector<double> out(n, 0.0);
    if (active.empty()) return out;
    const double inv = 1.0 / static_cast<double>(active.size());
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (const auto* lead : active) acc += (*lead)[t] * (*lead)[t];
        out[t] = std::sqrt(acc * inv);
    }
    return out;
}

BeatToken segment_beat(const std::vector<double>& fused, const PeakList& peaks, std::size_t k) {
    if (k >= peaks.size()) throw std::out_of_range("beat index out of range");

    std::int64_t before = static_cast<std::int64_t>(kRPeakAnchor);
    std::int64_t after = static_cast<std::int64_t>(kTokenLength - 1 - kRPeakAnchor);
    if (peaks.size() > 1) {
        const std::int64_t rr_prev = k > 0 ? peaks[k] - peaks[k - 1] : peaks[k + 1] - peaks[k];
        const std::int64_t rr_next = k + 1 < peaks.size() ? peaks[k + 1] - peaks[k] : rr_prev;
        before = std::min(before, rr_prev / 3);
        after = std::min(after, 2 * rr_next / 3);
    }

    const auto n = static_cast<std::int64_t>(fused.size());
    const std::int64_t peak = peaks[k];
    const std::int64_t first = std::max<std::int64_t>(0, peak - before);
    const std::int64_t last = std::min<std::int64_t>(n - 1, peak + after);

    BeatToken token;
    const auto anchor = static_cast<std::int64_t>(kRPeakAnchor);
    for (std::int64_t t = first; t <= last; ++t) {
        token.values[static_cast<std::size_t>(anchor + (t - peak))] = fused[static_cast<std::size_t>(t)];
    }
    return token;
}

BeatSequence build_sequence(const std::vector<double>& fused, const PeakList& peaks) {
    if (peaks.empty()) throw std::runtime_error("no beats detected");
    BeatSequence seq;
    seq.n_real = std::min(peaks.size(), kMaxBeats);
    for (std::size_t k = 0; k < seq.n_real; ++k) {
        seq.tokens[k] = segment_beat(fused, peaks, k);
        seq.mask[k] = true;
    }
    return seq;
}

void write_token_cache(const BeatSequence& seq, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCacheVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(seq.n_real));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(kTokenLength));
    for (const auto& tok : seq.tokens) {
        for (double v : tok.values) put<float>(out, static_cast<float>(v));
    }
    for (bool m : seq.mask) put<std::uint8_t>(out, m ? 1 : 0);
}

BeatSequence read_token_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error(path.string() + " is not a token cache");
    }
    if (get<std::uint32_t>(in) != kCacheVersion) throw std::runtime_error("unsupported token cache version");
    const auto n_real = get<std::uint32_t>(in);
    const auto d_model = get<std::uint32_t>(in);
    if (d_model != kTokenLength || n_real > kMaxBeats) throw std::runtime_error("token cache header out of range");

    BeatSequence seq;
    seq.n_real = n_real;
    for (auto& tok : seq.tokens) {
        for (double& v : tok.values) v = static_cast<double>(get<float>(in));
    }
    for (std::size_t k = 0; k < kMaxBeats; ++k) seq.mask[k] = get<std::uint8_t>(in) != 0;
    return seq;
}

}  // namespace beatformer
