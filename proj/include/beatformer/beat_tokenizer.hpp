#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "beatformer/dsp.hpp"
#include "beatformer/ecg_io.hpp"

namespace beatformer {

inline constexpr std::size_t kTokenLength = 1000;
inline constexpr std::size_t kRPeakAnchor = kTokenLength / 3;  // 333
inline constexpr std::size_t kMaxBeats = 50;

/// One heartbeat, R-peak aligned at kRPeakAnchor and zero padded to
/// kTokenLength samples.
struct BeatToken {
    std::vector<double> values = std::vector<double>(kTokenLength, 0.0);
    std::size_t r_index = kRPeakAnchor;
};

/// Exactly kMaxBeats tokens; the first n_real are beats, the rest all-zero.
struct BeatSequence {
    std::vector<BeatToken> tokens = std::vector<BeatToken>(kMaxBeats);
    std::vector<bool> mask = std::vector<bool>(kMaxBeats, false);
    std::size_t n_real = 0;
};

/// Per-sample RMS over the active (not identically zero) leads.
std::vector<double> fuse_rms(const EcgRecord& rec);

/// Window is floor(RR_prev/3) before and floor(2*RR_next/3) after the peak,
/// clipped to the anchor capacity and to the record bounds.
BeatToken segment_beat(const std::vector<double>& fused, const PeakList& peaks, std::size_t k);

/// Tokenizes the first kMaxBeats peaks. Throws std::runtime_error when no
/// peaks are given.
BeatSequence build_sequence(const std::vector<double>& fused, const PeakList& peaks);

/// Flat binary cache: "BTOK", u32 version, u32 n_real, u32 d_model, then
/// kMaxBeats*d_model little-endian float32 and kMaxBeats mask bytes.
void write_token_cache(const BeatSequence& seq, const std::filesystem::path& path);
BeatSequence read_token_cache(const std::filesystem::path& path);

}  // namespace beatformer
