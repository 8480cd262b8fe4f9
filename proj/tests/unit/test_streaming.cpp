#include <doctest.h>

#include <atomic>
#include <cmath>
#include <random>
#include <thread>

#include "../support/model_fixture.hpp"
#include "rvqtts/errors.hpp"
#include "rvqtts/streaming/streaming.hpp"

using namespace rvqtts;
using nn::Tensor;

namespace {

struct Setup {
    model::Checkpoint ckpt;
    codec::RvqCodebookSet codebooks;
};

Setup make_setup(std::uint64_t seed = 1) {
    const auto cfg = testing::tiny_model_config();
    Setup s{{cfg, Vocabulary({"sil", "a", "b", "c", "d", "e"}), model::init_parameters(cfg, seed), 0},
            testing::seeded_codebooks(cfg.num_quantizers, cfg.codebook_size, seed)};
    return s;
}

// Every phoneme lasts exactly `frames` frames.
void fix_durations(model::ModelParameters& p, std::uint32_t frames) {
    p.duration.out_w = Tensor::zeros(p.duration.out_w.rows(), 1);
    p.duration.out_b = Tensor::full(1, 1, std::log(frames + 1.0));
}

std::vector<std::uint32_t> random_ids(std::mt19937_64& rng, std::size_t n) {
    std::uniform_int_distribution<std::uint32_t> d(0, 5);
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

} // namespace

TEST_CASE("offline synthesis") {
    auto s = make_setup();
    CHECK(streaming::synthesize_offline({}, s.ckpt, s.codebooks).empty());
    const std::vector<std::uint32_t> ids{0, 2, 4, 1};
    const auto r = model::infer(ids, s.ckpt.params, s.ckpt.config);
    const auto wave = streaming::synthesize_offline(ids, s.ckpt, s.codebooks);
    CHECK(wave.size() == r.tokens.frames * 1920);
    CHECK(wave == streaming::synthesize_offline(ids, s.ckpt, s.codebooks));

    model::ForcedDurations forced{{2, 1, 3, 1}, {false, true, false, false}};
    const auto w2 = streaming::synthesize_offline(ids, s.ckpt, s.codebooks, &forced);
    REQUIRE(w2.size() == 7 * 1920);
    for (std::size_t i = 2 * 1920; i < 3 * 1920; ++i) CHECK(w2[i] == 0.0);
    double energy = 0.0;
    for (std::size_t i = 0; i < 2 * 1920; ++i) energy += w2[i] * w2[i];
    CHECK(energy > 0.0);

    auto other = s.codebooks;
    other.config.codebook_size += 1;
    CHECK_THROWS_AS(streaming::synthesize_offline(ids, s.ckpt, other), ConfigError);
}

TEST_CASE("placeholder frames render as silence") {
    const auto set = testing::seeded_codebooks(2, 3, 4);
    codec::TokenGrid g(2, 3, 12.5);
    g.indices = {1, 2, 0, 2, 1, 1};
    const auto full = codec::decode_tokens(g, set);
    const auto masked = streaming::render_frames(g, {false, true, false}, set);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(masked[i] == (i / 1920 == 1 ? 0.0 : full[i]));
    CHECK_THROWS_AS(streaming::render_frames(g, {false}, set), DimensionError);
}

TEST_CASE("one chunk of eight frames gives two blocks") {
    auto s = make_setup();
    fix_durations(s.ckpt.params, 2);
    const std::vector<std::vector<std::uint32_t>> chunks{{1, 2, 3, 4}};
    const auto r = streaming::stream(chunks, s.ckpt, s.codebooks);
    REQUIRE(r.blocks.size() == 2);
    CHECK(r.blocks[0].frame_begin == 0);
    CHECK(r.blocks[0].frame_end == 4);
    CHECK(r.blocks[1].frame_begin == 4);
    CHECK(r.blocks[1].frame_end == 8);
    CHECK(r.blocks[0].samples.size() == 4 * 1920);
    CHECK(r.report.ttfb_ms.size() == 1);
    CHECK(r.report.ttfb_ms[0] <= r.report.total_wall_ms);
    CHECK(r.report.rtf > 0.0);
    CHECK(r.report.audio_duration_ms == doctest::Approx(640.0));
}

TEST_CASE("streamed audio equals offline synthesis") {
    auto s = make_setup(2);
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> len(1, 12), blocks(1, 5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ids = random_ids(rng, len(rng));
        streaming::StreamOptions opt;
        opt.block_frames = blocks(rng);
        const std::vector<std::vector<std::uint32_t>> one{ids};
        const auto r = streaming::stream(one, s.ckpt, s.codebooks, opt);
        CHECK(r.concatenated() == streaming::synthesize_offline(ids, s.ckpt, s.codebooks));
        std::size_t next = 0;
        for (const auto& b : r.blocks) {
            CHECK(b.frame_begin == next);
            CHECK(b.frame_end - b.frame_begin <= opt.block_frames);
            CHECK(b.samples.size() == (b.frame_end - b.frame_begin) * 1920);
            next = b.frame_end;
        }
    }
}

TEST_CASE("each chunk streams exactly like its own offline synthesis") {
    auto s = make_setup(3);
    std::mt19937_64 rng(3);
    std::vector<std::vector<std::uint32_t>> chunks{random_ids(rng, 4), {}, random_ids(rng, 7), random_ids(rng, 2)};
    const auto r = streaming::stream(chunks, s.ckpt, s.codebooks);
    std::vector<double> expect;
    for (const auto& c : chunks) {
        const auto w = streaming::synthesize_offline(c, s.ckpt, s.codebooks);
        expect.insert(expect.end(), w.begin(), w.end());
    }
    CHECK(r.concatenated() == expect);
    CHECK(r.report.ttfb_ms.size() == 3);
    for (std::size_t i = 1; i < r.blocks.size(); ++i) {
        CHECK(r.blocks[i].frame_begin == r.blocks[i - 1].frame_end);
        CHECK(r.blocks[i].chunk >= r.blocks[i - 1].chunk);
        CHECK(r.blocks[i].emitted_at_ns >= r.blocks[i - 1].emitted_at_ns);
    }
}

TEST_CASE("stream contract errors") {
    auto s = make_setup();
    const std::vector<std::vector<std::uint32_t>> chunks{{1, 2}};
    streaming::StreamOptions bad;
    bad.block_frames = 0;
    CHECK_THROWS_AS(streaming::stream(chunks, s.ckpt, s.codebooks, bad), ContractError);
    const std::vector<std::vector<std::uint32_t>> oov{{1, 99}};
    CHECK_THROWS_AS(streaming::stream(oov, s.ckpt, s.codebooks), IndexError);
    const std::vector<std::vector<std::vector<std::uint32_t>>> req{chunks};
    CHECK_THROWS_AS(streaming::bench(req, s.ckpt, s.codebooks, 2), ContractError);
}

TEST_CASE("a slow consumer applies back-pressure without losing blocks") {
    auto s = make_setup();
    fix_durations(s.ckpt.params, 3);
    const std::vector<std::vector<std::uint32_t>> chunks{{1, 2, 3, 4, 5, 1, 2, 3}};
    streaming::StreamOptions opt;
    opt.block_frames = 1;
    opt.queue_capacity = 1;
    std::size_t seen = 0;
    opt.on_block = [&](const streaming::StreamBlock& b) {
        CHECK(b.frame_begin == seen);
        ++seen;
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    };
    const auto r = streaming::stream(chunks, s.ckpt, s.codebooks, opt);
    CHECK(seen == 24);
    CHECK(r.blocks.size() == 24);
}

TEST_CASE("bounded queue") {
    streaming::BoundedQueue<int> q(2);
    std::atomic<int> pushed{0};
    std::thread prod([&] {
        for (int i = 0; i < 50; ++i) {
            q.push(i);
            ++pushed;
        }
        q.close();
    });
    while (pushed.load() < 2) std::this_thread::yield();
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    CHECK(pushed.load() == 2);
    int expect = 0;
    while (auto v = q.pop()) CHECK(*v == expect++);
    prod.join();
    CHECK(expect == 50);
    CHECK(streaming::BoundedQueue<int>(0).capacity() == 1);
}

TEST_CASE("latency statistics") {
    CHECK(streaming::percentile({}, 50) == 0.0);
    CHECK(streaming::percentile({3, 1, 2}, 50) == 2.0);
    CHECK(streaming::percentile({1, 2, 3, 4}, 50) == 2.5);
    CHECK(streaming::percentile({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 90) == doctest::Approx(9.1));
    CHECK(streaming::percentile({5}, 90) == 5.0);

    streaming::LatencyReport r;
    r.total_wall_ms = 100.0;
    r.audio_duration_ms = 2000.0;
    r.ttfb_ms = {10, 30, 20, 90};
    streaming::summarize(r);
    CHECK(r.rtf == doctest::Approx(0.05));
    CHECK(r.ttfb_mean_ms == doctest::Approx(37.5));
    CHECK(r.ttfb_p90_ms >= r.ttfb_p50_ms);
    const auto tsv = streaming::format_report_tsv(r);
    CHECK(tsv.find("ttfb_mean_ms\tttfb_p50_ms\tttfb_p90_ms") != std::string::npos);
    CHECK(tsv.find("0.0033") != std::string::npos);
    CHECK(streaming::format_report_kv(r).find("rtf=0.05\n") != std::string::npos);
}

TEST_CASE("bench pools every repeat after the warm-up") {
    auto s = make_setup();
    fix_durations(s.ckpt.params, 1);
    const std::vector<std::vector<std::vector<std::uint32_t>>> req{{{1, 2}, {3}}, {{4, 5, 1}}};
    const auto r = streaming::bench(req, s.ckpt, s.codebooks, 3);
    CHECK(r.ttfb_ms.size() == 6);
    CHECK(r.audio_duration_ms == doctest::Approx(2 * 6 * 80.0));
    CHECK(r.rtf > 0.0);
    CHECK(r.ttfb_p90_ms >= r.ttfb_p50_ms);
}
