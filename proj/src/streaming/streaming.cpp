#include "rvqtts/streaming/streaming.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include "rvqtts/errors.hpp"

namespace rvqtts::streaming {

using Clock = std::chrono::steady_clock;

namespace {

std::int64_t ns_since(Clock::time_point start) {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

} // namespace

std::vector<double> render_frames(const codec::TokenGrid& tokens, const std::vector<bool>& dummy_frame,
                                  const codec::RvqCodebookSet& codebooks) {
    if (dummy_frame.size() != tokens.frames) throw DimensionError("placeholder mask length differs from frame count");
    auto wave = codec::decode_tokens(tokens, codebooks);
    const std::size_t hop = codebooks.config.hop;
    for (std::size_t t = 0; t < tokens.frames; ++t) {
        if (dummy_frame[t]) std::fill_n(wave.begin() + static_cast<long>(t * hop), hop, 0.0);
    }
    return wave;
}

std::vector<double> synthesize_offline(std::span<const std::uint32_t> ids, const model::Checkpoint& ckpt,
                                       const codec::RvqCodebookSet& codebooks, const model::ForcedDurations* forced) {
    model::check_compatible(ckpt.config, codebooks);
    if (ids.empty()) return {};
    const auto r = model::infer(ids, ckpt.params, ckpt.config, forced);
    return render_frames(r.tokens, r.dummy_frame, codebooks);
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

void summarize(LatencyReport& r) {
    r.rtf = r.audio_duration_ms > 0.0 ? r.total_wall_ms / r.audio_duration_ms : 0.0;
    double sum = 0.0;
    for (double t : r.ttfb_ms) sum += t;
    r.ttfb_mean_ms = r.ttfb_ms.empty() ? 0.0 : sum / static_cast<double>(r.ttfb_ms.size());
    r.ttfb_p50_ms = percentile(r.ttfb_ms, 50.0);
    r.ttfb_p90_ms = percentile(r.ttfb_ms, 90.0);
}

std::vector<double> StreamResult::concatenated() const {
    std::vector<double> out;
    for (const auto& b : blocks) out.insert(out.end(), b.samples.begin(), b.samples.end());
    return out;
}

StreamResult stream(std::span<const std::vector<std::uint32_t>> chunks, const model::Checkpoint& ckpt,
                    const codec::RvqCodebookSet& codebooks, const StreamOptions& options) {
    if (options.block_frames < 1) throw ContractError("block_frames must be at least 1");
    model::check_compatible(ckpt.config, codebooks);
    const auto& cfg = ckpt.config;
    BoundedQueue<StreamBlock> queue(options.queue_capacity);
    std::exception_ptr failure;
    const auto start = Clock::now();

    std::thread producer([&] {
        try {
            std::size_t frame_offset = 0;
            for (std::size_t k = 0; k < chunks.size(); ++k) {
                const std::int64_t arrival = ns_since(start);
                if (chunks[k].empty()) continue;
                const auto bb = model::run_backbone(chunks[k], ckpt.params, cfg);
                nn::NoGradGuard guard;
                const std::size_t t_len = bb.h.rows();
                for (std::size_t b0 = 0; b0 < t_len; b0 += options.block_frames) {
                    const std::size_t n = std::min(options.block_frames, t_len - b0);
                    const auto tokens = model::depthwise_predict(nn::slice_rows(bb.h, b0, n), ckpt.params, cfg).tokens;
                    std::vector<bool> dummy(bb.dummy_frame.begin() + static_cast<long>(b0),
                                            bb.dummy_frame.begin() + static_cast<long>(b0 + n));
                    StreamBlock blk;
                    blk.samples = render_frames(tokens, dummy, codebooks);
                    blk.chunk = k;
                    blk.frame_begin = frame_offset + b0;
                    blk.frame_end = frame_offset + b0 + n;
                    blk.chunk_arrival_ns = arrival;
                    blk.emitted_at_ns = ns_since(start);
                    queue.push(std::move(blk));
                }
                frame_offset += t_len;
            }
        } catch (...) {
            failure = std::current_exception();
        }
        queue.close();
    });

    StreamResult result;
    std::vector<std::optional<double>> ttfb(chunks.size());
    std::size_t samples = 0;
    while (auto blk = queue.pop()) {
        if (!ttfb[blk->chunk]) ttfb[blk->chunk] = static_cast<double>(blk->emitted_at_ns - blk->chunk_arrival_ns) / 1e6;
        samples += blk->samples.size();
        if (options.on_block) options.on_block(*blk);
        result.blocks.push_back(std::move(*blk));
    }
    const double wall = static_cast<double>(ns_since(start)) / 1e6;
    producer.join();
    if (failure) std::rethrow_exception(failure);

    for (const auto& t : ttfb) {
        if (t) result.report.ttfb_ms.push_back(*t);
    }
    result.report.total_wall_ms = wall;
    result.report.audio_duration_ms = 1000.0 * static_cast<double>(samples) / codebooks.config.sample_rate;
    summarize(result.report);
    return result;
}

LatencyReport bench(std::span<const std::vector<std::vector<std::uint32_t>>> requests, const model::Checkpoint& ckpt,
                    const codec::RvqCodebookSet& codebooks, std::size_t repeats, std::size_t block_frames) {
    if (repeats < 3) throw ContractError("bench needs at least 3 repeats (the first is warm-up)");
    LatencyReport pooled;
    StreamOptions opts;
    opts.block_frames = block_frames;
    for (std::size_t rep = 0; rep < repeats; ++rep) {
        for (const auto& chunks : requests) {
            const auto r = stream(chunks, ckpt, codebooks, opts).report;
            if (rep == 0) continue;
            pooled.ttfb_ms.insert(pooled.ttfb_ms.end(), r.ttfb_ms.begin(), r.ttfb_ms.end());
            pooled.total_wall_ms += r.total_wall_ms;
            pooled.audio_duration_ms += r.audio_duration_ms;
        }
    }
    summarize(pooled);
    return pooled;
}

std::string format_report_tsv(const LatencyReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "# reference system (GPU): rtf %.4f, mean ttfb %.2f ms\n"
                  "chunks\tttfb_mean_ms\tttfb_p50_ms\tttfb_p90_ms\ttotal_wall_ms\taudio_ms\trtf\n"
                  "%zu\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\t%.6f\n",
                  kReferenceRtf, kReferenceTtfbMeanMs, r.ttfb_ms.size(), r.ttfb_mean_ms, r.ttfb_p50_ms, r.ttfb_p90_ms,
                  r.total_wall_ms, r.audio_duration_ms, r.rtf);
    return buf;
}

std::string format_report_kv(const LatencyReport& r) {
    std::ostringstream out;
    out << "reference_rtf=" << kReferenceRtf << "\nreference_ttfb_mean_ms=" << kReferenceTtfbMeanMs << "\nchunks=" << r.ttfb_ms.size()
        << "\nttfb_mean_ms=" << r.ttfb_mean_ms << "\nttfb_p50_ms=" << r.ttfb_p50_ms << "\nttfb_p90_ms=" << r.ttfb_p90_ms
        << "\ntotal_wall_ms=" << r.total_wall_ms << "\naudio_duration_ms=" << r.audio_duration_ms << "\nrtf=" << r.rtf
        << '\n';
    return out.str();
}

} // namespace rvqtts::streaming
