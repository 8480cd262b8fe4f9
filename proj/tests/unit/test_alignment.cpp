#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "rvqtts/alignment/alignment.hpp"
#include "rvqtts/alignment/corpus_layout.hpp"
#include "rvqtts/dsp/mel.hpp"
#include "rvqtts/errors.hpp"

using namespace rvqtts;
using namespace rvqtts::alignment;
namespace fs = std::filesystem;

namespace {

std::vector<double> sine(double hz, double amp, std::size_t n, std::uint32_t sr = 24000) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sr);
    return x;
}

std::uint32_t total(const std::vector<FrameAllocation>& a) {
    std::uint32_t s = 0;
    for (const auto& f : a) s += f.frames;
    return s;
}

// Direct piecewise-linear interpolation of src (rate rs) at the centre of target frame t (rate rt).
double interp_oracle(const std::vector<double>& src, double rs, double rt, std::size_t t) {
    const double pos = (static_cast<double>(t) + 0.5) * rs / rt - 0.5;
    if (pos <= 0.0) return src.front();
    if (pos >= static_cast<double>(src.size() - 1)) return src.back();
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double w = pos - static_cast<double>(i);
    return src[i] * (1.0 - w) + src[i + 1] * w;
}

} // namespace

TEST_CASE("durations_to_frames examples") {
    const double a[] = {0.24};
    CHECK(durations_to_frames(a, 12.5, 3) == std::vector<FrameAllocation>{{3, false}});

    const double b[] = {0.03, 0.77};
    CHECK(durations_to_frames(b, 12.5, 10) == std::vector<FrameAllocation>{{1, true}, {9, false}});

    const double c[] = {0.1, 0.1, 0.1, 0.1};
    const auto r = durations_to_frames(c, 12.5, 5);
    CHECK(total(r) == 5);
    for (const auto& f : r) CHECK(f.frames >= 1);

    const double d[] = {0.1, 0.1, 0.1};
    CHECK_THROWS_AS(durations_to_frames(d, 12.5, 2), AlignmentError);
    const double neg[] = {-0.1};
    CHECK_THROWS_AS(durations_to_frames(neg, 12.5, 1), ContractError);
}

TEST_CASE("durations_to_frames always sums exactly and never drops below one frame") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> dur(0.0, 0.4);
    std::uniform_int_distribution<int> count(1, 15), drift(-3, 3);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<double> s(static_cast<std::size_t>(count(rng)));
        double sum = 0.0;
        for (auto& v : s) sum += (v = dur(rng));
        const long target = std::max<long>(static_cast<long>(s.size()), std::lround(sum * 12.5) + drift(rng));
        const auto r = durations_to_frames(s, 12.5, static_cast<std::size_t>(target));
        REQUIRE(r.size() == s.size());
        CHECK(total(r) == target);
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(r[i].frames >= 1);
            if (r[i].is_dummy) {
                CHECK(std::floor(s[i] * 12.5 + 0.5) == 0.0);
                CHECK(r[i].frames == 1);
            }
        }
    }
}

TEST_CASE("pool_mel examples") {
    Matrix m(3, 2, {1, 2, 3, 4, 5, 6});
    CHECK(pool_mel(m, 1) == m);

    Matrix ramp(8, 1, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(pool_mel(ramp, 8)(0, 0) == 4.5);

    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    Matrix hi(16, 80);
    for (auto& v : hi.data) v = g(rng);
    const auto p = pool_mel(hi, 8);
    REQUIRE(p.rows == 2);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t c = 0; c < 80; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < 8; ++k) s += hi(t * 8 + k, c);
            CHECK(std::abs(p(t, c) - s / 8) < 1e-12);
        }
    }

    Matrix ragged(10, 1, {1, 1, 1, 1, 1, 1, 1, 1, 2, 4});
    const auto q = pool_mel(ragged, 8);
    REQUIRE(q.rows == 2);
    CHECK(q(1, 0) == doctest::Approx((2.0 + 4.0 * 7) / 8));
    CHECK_THROWS_AS(pool_mel(m, 0), ContractError);
}

TEST_CASE("YIN on a pure tone, noise and silence") {
    const auto tone = extract_f0(sine(100.0, 0.5, 24000), 24000, 12.5);
    REQUIRE(tone.size() == 13);
    for (std::size_t t = 1; t + 1 < tone.size(); ++t) {
        CHECK(tone.voiced[t]);
        CHECK(std::abs(tone.f0_hz[t] - 100.0) <= 2.0);
    }

    std::mt19937_64 rng(42);
    std::normal_distribution<double> g(0.0, 0.3);
    std::vector<double> noise(48000);
    for (auto& v : noise) v = g(rng);
    const auto nt = extract_f0(noise, 24000, 12.5);
    std::size_t unvoiced = 0;
    for (bool v : nt.voiced) unvoiced += !v;
    CHECK(static_cast<double>(unvoiced) >= 0.9 * static_cast<double>(nt.size()));

    const auto quiet = extract_f0(std::vector<double>(24000, 0.0), 24000, 12.5);
    for (bool v : quiet.voiced) CHECK_FALSE(v);

    const auto tiny = extract_f0(std::vector<double>(100, 0.1), 24000, 12.5);
    CHECK(tiny.size() == 1);
    CHECK_FALSE(tiny.voiced[0]);
}

TEST_CASE("YIN stays inside its frequency bounds") {
    for (double hz : {55.0, 80.0, 175.0, 320.0, 480.0}) {
        const auto tr = extract_f0(sine(hz, 0.4, 36000), 24000, 12.5);
        for (std::size_t t = 1; t + 1 < tr.size(); ++t) {
            CHECK(tr.voiced[t]);
            CHECK(tr.f0_hz[t] >= 50.0);
            CHECK(tr.f0_hz[t] <= 500.0);
            CHECK(std::abs(tr.f0_hz[t] - hz) / hz < 0.03);
        }
    }
}

TEST_CASE("cumulative mean normalised difference matches its definition") {
    // Fixed integration length: window size minus the largest lag.
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g;
    std::vector<double> w(200);
    for (auto& v : w) v = g(rng);
    const auto d = cumulative_mean_normalized_difference(w, 60);
    CHECK(d[0] == 1.0);
    double running = 0.0;
    for (std::size_t tau = 1; tau <= 60; ++tau) {
        double diff = 0.0;
        for (std::size_t j = 0; j + 60 < w.size(); ++j) diff += (w[j] - w[j + tau]) * (w[j] - w[j + tau]);
        running += diff;
        CHECK(d[tau] == doctest::Approx(diff * static_cast<double>(tau) / running).epsilon(1e-10));
    }
}

TEST_CASE("energy examples") {
    const auto c = extract_energy(std::vector<double>(3840, 0.25), 24000, 12.5);
    REQUIRE(c.rms.size() == 2);
    CHECK(c.rms[0] == doctest::Approx(0.25).epsilon(1e-15));
    const auto s = extract_energy(sine(125.0, 0.8, 1920 * 4), 24000, 12.5);
    for (double v : s.rms) CHECK(std::abs(v - 0.8 / std::sqrt(2.0)) < 1e-6);
    for (double v : extract_energy(std::vector<double>(1920, 0.0), 24000, 12.5).rms) CHECK(v == 0.0);
}

TEST_CASE("variance track resampling") {
    F0Track f0{12.5, {100.0, 0.0, 200.0}, {true, false, true}};
    EnergyTrack en{12.5, {0.1, 0.2, 0.3}};
    const auto same = build_variance_track(f0, en, 12.5, 3);
    CHECK(same.log_f0[0] == std::log(100.0));
    CHECK(same.log_f0[1] == doctest::Approx((std::log(100.0) + std::log(200.0)) / 2).epsilon(1e-15));
    CHECK(same.log_f0[2] == std::log(200.0));
    CHECK(same.energy == std::vector<double>{0.1, 0.2, 0.3});
    CHECK(same.voiced == std::vector<bool>{true, false, true});

    F0Track none{12.5, {0, 0}, {false, false}};
    EnergyTrack e2{12.5, {0.0, 0.0}};
    for (double v : build_variance_track(none, e2, 12.5, 2).log_f0) CHECK(v == std::log(kUnvoicedFallbackHz));

    F0Track edges{12.5, {0.0, 120.0, 0.0, 0.0}, {false, true, false, false}};
    EnergyTrack e4{12.5, {1, 1, 1, 1}};
    for (double v : build_variance_track(edges, e4, 12.5, 4).log_f0) CHECK(v == std::log(120.0));

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(80.0, 300.0), e(0.0, 1.0);
    F0Track src{100.0, {}, {}};
    EnergyTrack esrc{100.0, {}};
    for (int i = 0; i < 37; ++i) {
        src.f0_hz.push_back(u(rng));
        src.voiced.push_back(true);
        esrc.rms.push_back(e(rng));
    }
    std::vector<double> lf;
    for (double f : src.f0_hz) lf.push_back(std::log(f));
    const auto out = build_variance_track(src, esrc, 12.5, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(std::abs(out.log_f0[t] - interp_oracle(lf, 100.0, 12.5, t)) < 1e-12);
        CHECK(std::abs(out.energy[t] - interp_oracle(esrc.rms, 100.0, 12.5, t)) < 1e-12);
    }
}

TEST_CASE("statistics exclude silence") {
    VarianceTrack tr{12.5, {5.0, 5.0, 5.0}, {true, true, true}, {0.5, 0.5, 0.5}};
    std::vector<StatsInput> in{{&tr, {false, false, false}}};
    const auto s = compute_stats(in);
    CHECK(s.energy_mean == 0.5);
    CHECK(s.energy_std == kStdFloor);

    VarianceTrack loud{12.5, {4.0, 99.0, 5.0, -50.0}, {true, true, true, true}, {0.1, 1e6, 0.3, -7.0}};
    VarianceTrack trimmed{12.5, {4.0, 5.0}, {true, true}, {0.1, 0.3}};
    std::vector<StatsInput> a{{&loud, {false, true, false, true}}};
    std::vector<StatsInput> b{{&trimmed, {false, false}}};
    CHECK(compute_stats(a) == compute_stats(b));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(5.0, 0.4);
    VarianceTrack r{12.5, {}, {}, {}};
    std::vector<bool> silent;
    for (int i = 0; i < 50; ++i) {
        r.log_f0.push_back(g(rng));
        r.energy.push_back(g(rng));
        r.voiced.push_back(true);
        silent.push_back(i % 7 == 0);
    }
    std::vector<StatsInput> c{{&r, silent}};
    const auto n = normalize(r, compute_stats(c));
    std::vector<StatsInput> d{{&n, silent}};
    const auto ns = compute_stats(d);
    CHECK(std::abs(ns.log_f0_mean) < 1e-9);
    CHECK(std::abs(ns.energy_mean) < 1e-9);
    CHECK(std::abs(ns.log_f0_std - 1.0) < 1e-9);
    CHECK(std::abs(ns.energy_std - 1.0) < 1e-9);

    std::vector<StatsInput> empty{{&tr, {true, true, true}}};
    CHECK_THROWS_AS(compute_stats(empty), InsufficientDataError);
}

TEST_CASE("silence mask follows regulated phonemes") {
    std::vector<PhonemeEntry> ph{{0, 2, false, true}, {3, 1, true, false}, {4, 3, false, false}};
    CHECK(silence_mask(ph) == std::vector<bool>{true, true, false, false, false, false});
}

TEST_CASE("synchronisation check and cache round trip") {
    AlignedUtterance u;
    u.id = "x";
    u.phonemes = {{0, 2, false, true}, {2, 1, true, false}};
    u.tokens = codec::TokenGrid(4, 3, 12.5);
    for (std::size_t i = 0; i < u.tokens.indices.size(); ++i) u.tokens.indices[i] = static_cast<std::uint32_t>(i % 7);
    u.variances = VarianceTrack{12.5, {0.1, -0.2, 0.3}, {true, false, true}, {1.0, 2.0, 3.0}};
    u.mel_aligned = Matrix(3, 80, 0.25);
    CHECK_NOTHROW(check_synchronized(u));
    CHECK(u.durations() == std::vector<std::uint32_t>{2, 1});
    CHECK(u.dummy_frame_mask() == std::vector<bool>{false, false, true});

    const auto dir = fs::temp_directory_path() / "rvqtts_align_test";
    fs::create_directories(dir);
    save_aligned(u, dir / "u.bin");
    const auto back = load_aligned(dir / "u.bin");
    CHECK(back.id == u.id);
    CHECK(back.phonemes == u.phonemes);
    CHECK(back.tokens == u.tokens);
    CHECK(back.variances == u.variances);
    CHECK(back.mel_aligned == u.mel_aligned);

    {
        std::ofstream out(dir / "u.bin", std::ios::binary | std::ios::app);
        out << 'x';
    }
    CHECK_THROWS_AS(load_aligned(dir / "u.bin"), FormatError);

    auto bad = u;
    bad.mel_aligned = Matrix(4, 80);
    CHECK_THROWS_AS(check_synchronized(bad), AlignmentError);
    bad = u;
    bad.phonemes[0].duration_frames = 3;
    CHECK_THROWS_AS(check_synchronized(bad), AlignmentError);
}

TEST_CASE("manifest and stats files round trip") {
    const auto dir = fs::temp_directory_path() / "rvqtts_manifest_test";
    fs::create_directories(dir);
    std::vector<ManifestEntry> m{{"a", {"sil", "a", "sil"}, {0.15, 0.031, 0.2}}, {"b", {"sil", "s"}, {0.1, 0.3}}};
    write_manifest(dir / "m.tsv", m);
    CHECK(read_manifest(dir / "m.tsv") == m);

    VarianceStats s{5.1, 0.2, 0.03, 0.01};
    save_stats(s, dir / "s.txt");
    CHECK(load_stats(dir / "s.txt") == s);
}

TEST_CASE("mel front end tiles the codec grid") {
    dsp::MelAnalyzer mel;
    CHECK(mel.config().hop == 240);
    const auto m = mel.log_mel(sine(300.0, 0.3, 1920 * 2), mel.frames_for(1920 * 2));
    CHECK(m.rows == 16);
    CHECK(m.cols == 80);
    CHECK(pool_mel(m, 8).rows == 2);
}
