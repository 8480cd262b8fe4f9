#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>

#include "../support/grad_suite.hpp"
#include "../support/model_fixture.hpp"
#include "rvqtts/errors.hpp"
#include "rvqtts/training/training.hpp"

using namespace rvqtts;
using nn::Tensor;
namespace fs = std::filesystem;

namespace {

std::vector<alignment::AlignedUtterance> synthetic_corpus(std::size_t n, std::uint64_t seed) {
    const auto cfg = testing::tiny_model_config();
    std::mt19937_64 rng(seed);
    std::vector<alignment::AlignedUtterance> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(testing::synthetic_utterance(rng, cfg, 3 + i % 3));
        out.back().id = "u" + std::to_string(i);
    }
    return out;
}

Vocabulary tiny_vocab() { return Vocabulary({"sil", "a", "b", "c", "d", "e"}); }

training::TrainConfig quick_config(std::uint64_t steps) {
    training::TrainConfig t;
    t.batch_size = 2;
    t.warmup_steps = 10;
    t.peak_lr = 0.01;
    t.max_steps = steps;
    t.seed = 3;
    return t;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch() {
    const auto d = fs::temp_directory_path() / "rvqtts_training_test";
    fs::create_directories(d);
    return d;
}

} // namespace

TEST_CASE("staged weights follow the three bands") {
    for (std::size_t l = 1; l <= 32; ++l) {
        const double expect = l <= 4 ? 1.0 : l <= 16 ? 0.5 : 0.1;
        CHECK(training::staged_weight(l, 32) == expect);
    }
    CHECK(training::staged_weight(3, 32) == 1.0);
    CHECK(training::staged_weight(10, 32) == 0.5);
    CHECK(training::staged_weight(20, 32) == 0.1);
    CHECK(training::staged_weight(1, 8) == 1.0);
    for (std::size_t l = 2; l <= 4; ++l) CHECK(training::staged_weight(l, 8) == 0.5);
    for (std::size_t l = 5; l <= 8; ++l) CHECK(training::staged_weight(l, 8) == 0.1);
    for (std::size_t q = 1; q <= 40; ++q) CHECK(training::staged_weight(1, q) == 1.0);
    CHECK_THROWS_AS(training::staged_weight(0, 32), ContractError);
    CHECK_THROWS_AS(training::staged_weight(33, 32), ContractError);
}

TEST_CASE("token loss reduction") {
    std::unique_ptr<bool[]> keep(new bool[3]{true, true, true});
    const std::span<const bool> all(keep.get(), 3);

    SUBCASE("uniform logits give ln V") {
        codec::TokenGrid g(2, 3, 12.5);
        g.at(0, 1) = 3;
        g.at(1, 2) = 4;
        std::vector<Tensor> logits{Tensor::zeros(3, 5), Tensor::zeros(3, 5)};
        CHECK(training::token_loss(logits, g, all).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("confident correct logits give almost nothing") {
        codec::TokenGrid g(1, 3, 12.5);
        g.at(0, 0) = 1;
        std::vector<double> v(15, 0.0);
        for (std::size_t t = 0; t < 3; ++t) v[t * 5 + g.at(0, t)] = 50.0;
        std::vector<Tensor> logits{Tensor::from(3, 5, v)};
        CHECK(training::token_loss(logits, g, all).item() < 1e-20);
    }
    SUBCASE("two layers weighted 1 and 0.5") {
        std::mt19937_64 rng(4);
        codec::TokenGrid g(2, 3, 12.5);
        g.indices = {0, 1, 2, 3, 4, 0};
        std::vector<Tensor> logits{testing::random_tensor(rng, 3, 5), testing::random_tensor(rng, 3, 5)};
        const double a = nn::cross_entropy_rows(logits[0], g.layer(0)).item();
        const double b = nn::cross_entropy_rows(logits[1], g.layer(1)).item();
        // With Q=2 the second layer falls in the last band.
        const double got = training::token_loss(logits, g, all, {1.0, 0.25, 0.5}).item();
        CHECK(got == doctest::Approx((a + 0.5 * b) / 1.5).epsilon(1e-12));
    }
    SUBCASE("masked frames are ignored and an all-masked batch is rejected") {
        std::mt19937_64 rng(5);
        codec::TokenGrid g(1, 3, 12.5);
        std::vector<Tensor> logits{testing::random_tensor(rng, 3, 5)};
        std::unique_ptr<bool[]> some(new bool[3]{true, false, true});
        const double masked = training::token_loss(logits, g, std::span<const bool>(some.get(), 3)).item();
        double oracle = 0.0;
        for (std::size_t t : {0, 2}) {
            auto row = logits[0].data().subspan(t * 5, 5);
            double m = *std::max_element(row.begin(), row.end()), s = 0.0;
            for (double x : row) s += std::exp(x - m);
            oracle += m + std::log(s) - row[0];
        }
        CHECK(masked == doctest::Approx(oracle / 2).epsilon(1e-12));
        std::unique_ptr<bool[]> none(new bool[3]{false, false, false});
        CHECK_THROWS_AS(training::token_loss(logits, g, std::span<const bool>(none.get(), 3)), ContractError);
    }
}

TEST_CASE("duration loss") {
    std::unique_ptr<bool[]> keep(new bool[3]{true, true, true});
    const std::vector<std::uint32_t> one{1};
    CHECK(training::duration_loss(Tensor::zeros(1, 1), one, std::span<const bool>(keep.get(), 1)).item() ==
          doctest::Approx(std::log(2.0) * std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(std::log(2.0) * std::log(2.0) - 0.4805) < 1e-4);

    const std::vector<std::uint32_t> d{1, 4, 2};
    Tensor exact = Tensor::from(3, 1, {std::log(2.0), std::log(5.0), std::log(3.0)});
    CHECK(training::duration_loss(exact, d, std::span<const bool>(keep.get(), 3)).item() == 0.0);

    std::unique_ptr<bool[]> skip(new bool[3]{true, false, true});
    Tensor off = Tensor::from(3, 1, {std::log(2.0), 100.0, std::log(3.0)});
    CHECK(training::duration_loss(off, d, std::span<const bool>(skip.get(), 3)).item() == 0.0);

    std::mt19937_64 rng(6);
    const double err = nn::finite_diff_check(
        [&](const Tensor& p) { return training::duration_loss(p, d, std::span<const bool>(keep.get(), 3)); },
        testing::random_tensor(rng, 3, 1, 1.0, true), 1e-6);
    CHECK(err < 1e-4);
}

TEST_CASE("variance and mel losses match loop oracles") {
    std::mt19937_64 rng(7);
    const std::size_t t = 6;
    std::unique_ptr<bool[]> keep(new bool[t]{true, false, true, true, false, true});
    const std::span<const bool> k(keep.get(), t);
    Tensor p = testing::random_tensor(rng, t, 1), e = testing::random_tensor(rng, t, 1);
    std::vector<double> pt(t), et(t);
    std::normal_distribution<double> n;
    for (std::size_t i = 0; i < t; ++i) {
        pt[i] = n(rng);
        et[i] = n(rng);
    }
    auto [lp, le] = training::variance_losses(p, e, pt, et, k);
    double sp = 0, se = 0;
    int kept = 0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!keep[i]) continue;
        sp += (p.data()[i] - pt[i]) * (p.data()[i] - pt[i]);
        se += (e.data()[i] - et[i]) * (e.data()[i] - et[i]);
        ++kept;
    }
    CHECK(lp.item() == doctest::Approx(sp / kept).epsilon(1e-12));
    CHECK(le.item() == doctest::Approx(se / kept).epsilon(1e-12));

    std::vector<double> shifted(pt);
    for (auto& v : shifted) v += 0.3;
    auto [c2, zero] = training::variance_losses(Tensor::from(t, 1, shifted), Tensor::from(t, 1, et), pt, et, k);
    CHECK(c2.item() == doctest::Approx(0.09).epsilon(1e-12));
    CHECK(zero.item() == 0.0);

    Matrix target(t, 80);
    for (auto& v : target.data) v = n(rng);
    Tensor before = testing::random_tensor(rng, t, 80);
    Tensor after = Tensor::from(t, 80, target.data);
    auto [lm, lpost] = training::mel_losses(before, after, target, k);
    double sm = 0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!keep[i]) continue;
        for (std::size_t c = 0; c < 80; ++c) sm += std::abs(before.data()[i * 80 + c] - target(i, c));
    }
    CHECK(lm.item() == doctest::Approx(sm / (kept * 80)).epsilon(1e-12));
    CHECK(lpost.item() == 0.0);
    std::vector<double> half(target.data);
    for (auto& v : half) v -= 0.5;
    CHECK(training::mel_losses(Tensor::from(t, 80, half), after, target, k).first.item() ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule") {
    training::TrainConfig c;
    c.peak_lr = 2e-3;
    c.warmup_steps = 100;
    c.decay_rate = 0.99;
    CHECK(training::lr_schedule(0, c) == 0.0);
    CHECK(training::lr_schedule(50, c) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(training::lr_schedule(100, c) == 2e-3);
    for (std::uint64_t k : {1, 7, 250}) {
        CHECK(training::lr_schedule(100 + k, c) == doctest::Approx(2e-3 * std::pow(0.99, k)).epsilon(1e-13));
    }
}

TEST_CASE("Adam optimiser") {
    SUBCASE("zero gradient leaves parameters alone") {
        Tensor w = Tensor::from(1, 3, {1.0, -2.0, 3.0}, true);
        training::Adam adam;
        Tensor* ps[] = {&w};
        nn::backward(nn::scale(nn::sum(w), 0.0));
        adam.step(ps, 0.1);
        CHECK(w.data()[0] == 1.0);
        CHECK(w.data()[1] == -2.0);
        CHECK(w.data()[2] == 3.0);
    }
    SUBCASE("first step moves each coordinate by about lr against the gradient") {
        Tensor w = Tensor::from(1, 3, {1.0, -2.0, 3.0}, true);
        Tensor c = Tensor::from(1, 3, {0.5, -4.0, 1e-3});
        training::Adam adam;
        Tensor* ps[] = {&w};
        nn::backward(nn::sum(nn::mul(w, c)));
        adam.step(ps, 0.01);
        CHECK(w.data()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
        CHECK(w.data()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
        CHECK(w.data()[2] == doctest::Approx(3.0 - 0.01).epsilon(1e-6));
    }
    SUBCASE("a quadratic bowl decreases monotonically") {
        Tensor w = Tensor::from(1, 4, {3.0, -1.0, 2.0, 0.5}, true);
        training::Adam adam;
        Tensor* ps[] = {&w};
        double prev = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 100; ++i) {
            Tensor loss = nn::sum(nn::mul(w, w));
            CHECK(loss.item() < prev);
            prev = loss.item();
            nn::backward(loss);
            adam.step(ps, 0.01);
        }
    }
    SUBCASE("a non-finite gradient aborts before any update") {
        Tensor a = Tensor::from(1, 2, {1.0, 2.0}, true);
        Tensor b = Tensor::from(1, 1, {0.0}, true);
        training::Adam adam;
        Tensor* ps[] = {&a, &b};
        nn::backward(nn::add(nn::sum(a), nn::scale(nn::sum(b), std::numeric_limits<double>::infinity())));
        CHECK_THROWS_AS(adam.step(ps, 0.1), DivergenceError);
        CHECK(a.data()[0] == 1.0);
        CHECK(a.data()[1] == 2.0);
        CHECK(adam.steps() == 0);
    }
}

TEST_CASE("dummy entries receive no gradient from any loss") {
    const auto cfg = testing::tiny_model_config();
    auto params = model::init_parameters(cfg, 8);
    std::mt19937_64 rng(8);
    const auto utt = testing::synthetic_utterance(rng, cfg, 4);
    const auto ids = utt.symbol_ids();
    const auto durations = utt.durations();
    model::DropoutStream off;
    const auto out = model::forward(ids, training::teacher_inputs(utt, durations), params, cfg, off);
    const auto loss = training::utterance_loss(out, utt, training::TrainConfig{});
    nn::backward(loss.total);
    const auto mask = utt.dummy_frame_mask();
    auto rows_zero = [](const Tensor& t, std::size_t r) {
        const auto g = t.grad();
        for (std::size_t c = 0; c < t.cols(); ++c) {
            if (g[r * t.cols() + c] != 0.0) return false;
        }
        return true;
    };
    std::size_t dummies = 0;
    for (std::size_t f = 0; f < utt.frames(); ++f) {
        for (const auto& l : out.token_logits) CHECK(rows_zero(l, f) == mask[f]);
        CHECK(rows_zero(out.pitch, f) == mask[f]);
        CHECK(rows_zero(out.energy, f) == mask[f]);
        CHECK(rows_zero(out.mel_after, f) == mask[f]);
        dummies += mask[f];
    }
    CHECK(dummies == 1);
    for (std::size_t p = 0; p < utt.phonemes.size(); ++p) CHECK(rows_zero(out.log_duration, p) == utt.phonemes[p].is_dummy);
}

TEST_CASE("whole-model gradient spot checks") {
    const auto r = testing::model_grad_check(11, 5);
    INFO("worst tensor " << r.worst);
    CHECK(r.max_error < 1e-3);
}

TEST_CASE("training loop") {
    const auto dir = scratch();
    const auto corpus = synthetic_corpus(4, 9);
    const auto mcfg = testing::tiny_model_config();

    SUBCASE("loss falls and every logged line satisfies the weighted sum") {
        training::Trainer tr(corpus, tiny_vocab(), mcfg, quick_config(80));
        training::TrainOutputs outs;
        outs.log = dir / "loss.tsv";
        outs.checkpoint = dir / "a.ckpt";
        training::train(tr, outs);
        std::ifstream in(dir / "loss.tsv");
        std::vector<training::LossBreakdown> rows;
        std::uint64_t expect = 1;
        for (std::string line; std::getline(in, line);) {
            std::uint64_t step = 0;
            double lr = 0;
            rows.push_back(training::parse_log_line(line, &step, &lr));
            CHECK(step == expect++);
            CHECK(std::abs(rows.back().total - rows.back().weighted_sum(2.0, 10.0)) <= 1e-9);
        }
        REQUIRE(rows.size() == 80);
        CHECK(rows.back().total < 0.5 * rows.front().total);
        CHECK(model::load_checkpoint(dir / "a.ckpt").step == 80);
    }
    SUBCASE("same seed gives byte-identical checkpoints") {
        for (const char* name : {"x.ckpt", "y.ckpt"}) {
            training::Trainer tr(corpus, tiny_vocab(), mcfg, quick_config(15));
            training::TrainOutputs outs;
            outs.checkpoint = dir / name;
            training::train(tr, outs);
        }
        CHECK(slurp(dir / "x.ckpt") == slurp(dir / "y.ckpt"));
        auto other = quick_config(15);
        other.seed = 4;
        training::Trainer tr(corpus, tiny_vocab(), mcfg, other);
        training::TrainOutputs outs;
        outs.checkpoint = dir / "z.ckpt";
        training::train(tr, outs);
        CHECK(slurp(dir / "x.ckpt") != slurp(dir / "z.ckpt"));
    }
    SUBCASE("with no mel weight and zero mel targets the mel terms add nothing") {
        auto zeroed = corpus;
        for (auto& u : zeroed) std::fill(u.mel_aligned.data.begin(), u.mel_aligned.data.end(), 0.0);
        auto tc = quick_config(3);
        tc.lambda_mel = 0.0;
        training::Trainer tr(zeroed, tiny_vocab(), mcfg, tc);
        for (int i = 0; i < 3; ++i) {
            const auto l = tr.step();
            CHECK(l.mel > 0.0);
            CHECK(std::abs(l.total - (l.token + 2.0 * l.duration + l.pitch + l.energy)) <= 1e-12);
        }
    }
    SUBCASE("a NaN target aborts and leaves the last good checkpoint") {
        auto broken = corpus;
        for (auto& u : broken) u.mel_aligned(0, 0) = std::nan("");
        training::Trainer tr(broken, tiny_vocab(), mcfg, quick_config(5));
        training::TrainOutputs outs;
        outs.checkpoint = dir / "nan.ckpt";
        fs::remove(dir / "nan.ckpt");
        CHECK_THROWS_AS(training::train(tr, outs), DivergenceError);
        REQUIRE(fs::exists(dir / "nan.ckpt"));
        CHECK(model::load_checkpoint(dir / "nan.ckpt").step == 0);
    }
    SUBCASE("corpus and model must agree") {
        CHECK_THROWS_AS(training::Trainer({}, tiny_vocab(), mcfg, quick_config(1)), InsufficientDataError);
        auto wide = mcfg;
        wide.num_quantizers = 3;
        CHECK_THROWS_AS(training::Trainer(corpus, tiny_vocab(), wide, quick_config(1)), ConfigError);
        auto bad = corpus;
        bad[0].mel_aligned = Matrix(1, 80);
        CHECK_THROWS_AS(training::Trainer(bad, tiny_vocab(), mcfg, quick_config(1)), AlignmentError);
    }
}

TEST_CASE("loss log lines round-trip exactly") {
    const training::LossBreakdown l{0.1, 1.0 / 3.0, 2e-17, 12345.678, std::sqrt(2.0), 0.0, 99.5};
    std::uint64_t step = 0;
    double lr = 0;
    const auto back = training::parse_log_line(training::format_log_line(77, 1e-3 / 7, l), &step, &lr);
    CHECK(step == 77);
    CHECK(lr == 1e-3 / 7);
    CHECK(back.token == l.token);
    CHECK(back.duration == l.duration);
    CHECK(back.pitch == l.pitch);
    CHECK(back.energy == l.energy);
    CHECK(back.mel == l.mel);
    CHECK(back.postnet == l.postnet);
    CHECK(back.total == l.total);
    CHECK_THROWS_AS(training::parse_log_line("1\t2\t3"), FormatError);
}

TEST_CASE("config files") {
    const auto c = training::parse_config("# comment\nhidden_dim = 64\npeak_lr=0.002\n\ndecoding_mode=parallel\nseed=9 # tail\n");
    CHECK(c.model.hidden_dim == 64);
    CHECK(c.train.peak_lr == 0.002);
    CHECK(c.model.decoding_mode == model::DecodingMode::parallel);
    CHECK(c.train.seed == 9);
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.warmup_steps == 4000);
    CHECK(c.train.lambda_dur == 2.0);
    CHECK(c.train.lambda_mel == 10.0);

    CHECK_THROWS_AS(training::parse_config("hiden_dim=3\n"), ConfigError);
    CHECK_THROWS_AS(training::parse_config("hidden_dim\n"), ConfigError);
    CHECK_THROWS_AS(training::parse_config("warmup_steps=0\n"), ConfigError);
    CHECK_THROWS_AS(training::parse_config("lambda_mel=-1\n"), ConfigError);
    CHECK_THROWS_AS(training::parse_config("peak_lr=fast\n"), ConfigError);

    auto round = c;
    round.train.stage_weights = {1.0, 0.25, 0.125};
    round.train.decay_rate = 0.999;
    const auto back = training::parse_config(training::format_config(round));
    CHECK(back.model == round.model);
    CHECK(training::format_config(back) == training::format_config(round));
}
