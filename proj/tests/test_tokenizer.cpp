#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "beatformer/beat_tokenizer.hpp"
#include "support/test_support.hpp"

using namespace beatformer;
namespace bt = beatformer::testing;

namespace {

// Strictly positive ramp so "nonzero" exactly tracks the copied window.
std::vector<double> ramp(std::size_t n) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 + static_cast<double>(i);
    return x;
}

std::pair<std::size_t, std::size_t> support(const BeatToken& tok) {
    std::size_t lo = kTokenLength, hi = 0;
    for (std::size_t i = 0; i < kTokenLength; ++i) {
        if (tok.values[i] != 0.0) {
            lo = std::min(lo, i);
            hi = std::max(hi, i);
        }
    }
    return {lo, hi};
}

std::size_t zero_count(const BeatToken& tok) {
    return static_cast<std::size_t>(std::count(tok.values.begin(), tok.values.end(), 0.0));
}

}  // namespace

TEST(FuseRms, Examples) {
    EcgRecord rec;
    rec.fs = 500;
    rec.leads = {{3.0, 1.0}, {4.0, -1.0}};
    auto out = fuse_rms(rec);
    EXPECT_NEAR(out[0], 3.53553, 1e-5);
    EXPECT_NEAR(out[0], std::sqrt(12.5), 1e-15);

    rec.leads = {{-2.0, 5.0}, {0.0, 0.0}};  // second lead inactive
    out = fuse_rms(rec);
    EXPECT_EQ(out[0], 2.0);
    EXPECT_EQ(out[1], 5.0);

    rec.leads.assign(12, std::vector<double>(3, 0.0));
    out = fuse_rms(rec);
    EXPECT_EQ(out, std::vector<double>(3, 0.0));
}

TEST(SegmentBeat, InteriorBeat) {
    const auto fused = ramp(3000);
    const PeakList peaks = {1000, 1600, 2200};
    const auto tok = segment_beat(fused, peaks, 1);
    ASSERT_EQ(tok.values.size(), kTokenLength);
    EXPECT_EQ(tok.r_index, 333u);
    EXPECT_EQ(support(tok), (std::pair<std::size_t, std::size_t>{133, 733}));
    EXPECT_EQ(tok.values[333], fused[1600]);
    EXPECT_EQ(tok.values[133], fused[1400]);
    EXPECT_EQ(tok.values[733], fused[2000]);
}

TEST(SegmentBeat, SlowRhythmFillsToken) {
    const auto fused = ramp(12000);
    const PeakList peaks = {3000, 6000, 9000};
    const auto tok = segment_beat(fused, peaks, 1);
    EXPECT_EQ(zero_count(tok), 0u);
    EXPECT_EQ(tok.values[0], fused[6000 - 333]);
    EXPECT_EQ(tok.values[999], fused[6000 + 666]);
}

TEST(SegmentBeat, FirstBeatMirrorsNextInterval) {
    const auto fused = ramp(2000);
    const auto tok = segment_beat(fused, {500, 1100}, 0);
    EXPECT_EQ(support(tok), (std::pair<std::size_t, std::size_t>{133, 733}));
    EXPECT_EQ(tok.values[333], fused[500]);
}

TEST(SegmentBeat, LastBeatMirrorsPreviousInterval) {
    const auto fused = ramp(2000);
    const auto tok = segment_beat(fused, {500, 1100}, 1);
    EXPECT_EQ(support(tok), (std::pair<std::size_t, std::size_t>{133, 733}));
    EXPECT_EQ(tok.values[333], fused[1100]);
}

TEST(SegmentBeat, SinglePeakClippedToRecord) {
    const auto fused = ramp(800);
    const auto tok = segment_beat(fused, {100}, 0);
    // 333 before is clipped to the 100 available samples, 666 after to 699.
    EXPECT_EQ(support(tok), (std::pair<std::size_t, std::size_t>{233, 333 + 666}));
    EXPECT_EQ(tok.values[233], fused[0]);
    const auto tail = segment_beat(ramp(300), {250}, 0);
    EXPECT_EQ(support(tail), (std::pair<std::size_t, std::size_t>{333 - 250, 333 + 49}));
}

TEST(SegmentBeat, IndexOutOfRangeThrows) {
    EXPECT_THROW(segment_beat(ramp(100), {50}, 1), std::out_of_range);
}

TEST(SegmentBeat, RPeakSampleAtAnchor) {
    const auto fused = bt::random_vector(20000, 9, 0.5, 2.0);
    const PeakList peaks = {300, 700, 1500, 1800, 3000, 7000, 7300, 19900};
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        const auto tok = segment_beat(fused, peaks, k);
        EXPECT_EQ(tok.values[kRPeakAnchor], fused[static_cast<std::size_t>(peaks[k])]) << k;
    }
}

TEST(SegmentBeat, ShorterIntervalsPadMore) {
    const auto fused = ramp(6000);
    const auto fast = segment_beat(fused, {1000, 1400, 1800}, 1);
    const auto slow = segment_beat(fused, {1000, 1800, 2600}, 1);
    EXPECT_GT(zero_count(fast), zero_count(slow));
}

TEST(SegmentBeat, TranslationEquivariant) {
    const auto base = bt::random_vector(6000, 21, 0.1, 1.0);
    const PeakList peaks = {1200, 1650, 2300, 2800};
    const std::int64_t s = 311;
    std::vector<double> shifted(base.size() + s, 0.0);
    std::copy(base.begin(), base.end(), shifted.begin() + s);
    PeakList moved;
    for (auto p : peaks) moved.push_back(p + s);
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        EXPECT_EQ(segment_beat(base, peaks, k).values, segment_beat(shifted, moved, k).values) << k;
    }
}

TEST(BuildSequence, PadsShortSequences) {
    const auto fused = ramp(10000);
    PeakList peaks;
    for (int i = 0; i < 10; ++i) peaks.push_back(500 + 800 * i);
    const auto seq = build_sequence(fused, peaks);
    EXPECT_EQ(seq.n_real, 10u);
    ASSERT_EQ(seq.tokens.size(), kMaxBeats);
    ASSERT_EQ(seq.mask.size(), kMaxBeats);
    for (std::size_t i = 0; i < kMaxBeats; ++i) {
        EXPECT_EQ(seq.mask[i], i < 10);
        if (i >= 10) EXPECT_EQ(zero_count(seq.tokens[i]), kTokenLength);
    }
}

TEST(BuildSequence, TruncatesLongSequences) {
    const auto fused = ramp(50000);
    PeakList peaks;
    for (int i = 0; i < 80; ++i) peaks.push_back(300 + 600 * i);
    const auto seq = build_sequence(fused, peaks);
    EXPECT_EQ(seq.n_real, 50u);
    EXPECT_EQ(seq.tokens[49].values[333], fused[300 + 600 * 49]);
    // The last kept beat still sees its real successor.
    EXPECT_EQ(seq.tokens[49].values, segment_beat(fused, peaks, 49).values);
}

TEST(BuildSequence, NoPeaksThrows) {
    try {
        build_sequence(ramp(100), {});
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "no beats detected");
    }
}

TEST(BuildSequence, MatchesSegmentBeat) {
    const auto fused = bt::random_vector(9000, 4, 0.2, 1.0);
    const PeakList peaks = {400, 900, 1700, 2100, 3000, 3900, 4400, 5200};
    const auto seq = build_sequence(fused, peaks);
    for (std::size_t k = 0; k < seq.n_real; ++k) EXPECT_EQ(seq.tokens[k].values, segment_beat(fused, peaks, k).values);
}

TEST(TokenCache, RoundTripAtFloatPrecision) {
    const auto dir = bt::fresh_dir("btok");
    const auto fused = bt::random_vector(5000, 8);
    const auto seq = build_sequence(fused, {600, 1300, 2000, 2600});
    write_token_cache(seq, dir / "a.btok");
    EXPECT_EQ(std::filesystem::file_size(dir / "a.btok"), 16u + kMaxBeats * kTokenLength * 4 + kMaxBeats);
    const auto back = read_token_cache(dir / "a.btok");
    EXPECT_EQ(back.n_real, 4u);
    EXPECT_EQ(back.mask, seq.mask);
    for (std::size_t k = 0; k < kMaxBeats; ++k) {
        for (std::size_t i = 0; i < kTokenLength; ++i) {
            ASSERT_EQ(back.tokens[k].values[i], static_cast<double>(static_cast<float>(seq.tokens[k].values[i])));
        }
    }
    EXPECT_EQ(bt::slurp(dir / "a.btok").substr(0, 4), "BTOK");
}

TEST(TokenCache, RejectsCorruptFiles) {
    const auto dir = bt::fresh_dir("btok_bad");
    {
        std::ofstream out(dir / "magic.btok", std::ios::binary);
        out << "XXXX0000000000000000";
    }
    EXPECT_THROW(read_token_cache(dir / "magic.btok"), std::runtime_error);
    const auto seq = build_sequence(ramp(3000), {1000, 2000});
    write_token_cache(seq, dir / "ok.btok");
    auto bytes = bt::slurp(dir / "ok.btok");
    {
        std::ofstream out(dir / "short.btok", std::ios::binary);
        out << bytes.substr(0, bytes.size() - 10);
    }
    EXPECT_THROW(read_token_cache(dir / "short.btok"), std::runtime_error);
    EXPECT_THROW(read_token_cache(dir / "missing.btok"), std::runtime_error);
}
