#pragma once

// Block-wise synthesis runtime with time-to-first-byte and real-time-factor
// instrumentation. A producer thread runs the acoustic model once per
// chunk, then predicts tokens and decodes audio block by block, pushing
// each block through a bounded FIFO to the consumer.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rvqtts/codec/codec.hpp"
#include "rvqtts/model/acoustic_model.hpp"

namespace rvqtts::streaming {

// Decodes tokens and writes zeros over placeholder frames.
std::vector<double> render_frames(const codec::TokenGrid& tokens, const std::vector<bool>& dummy_frame,
                                  const codec::RvqCodebookSet& codebooks);

std::vector<double> synthesize_offline(std::span<const std::uint32_t> ids, const model::Checkpoint& ckpt,
                                       const codec::RvqCodebookSet& codebooks,
                                       const model::ForcedDurations* forced = nullptr);

struct StreamBlock {
    std::vector<double> samples;
    std::size_t chunk = 0;
    std::size_t frame_begin = 0, frame_end = 0; // global codec frame range
    std::int64_t chunk_arrival_ns = 0;          // since request start
    std::int64_t emitted_at_ns = 0;             // since request start
};

struct LatencyReport {
    std::vector<double> ttfb_ms; // one per chunk
    double total_wall_ms = 0.0;
    double audio_duration_ms = 0.0;
    double rtf = 0.0;
    double ttfb_mean_ms = 0.0;
    double ttfb_p50_ms = 0.0;
    double ttfb_p90_ms = 0.0;
};

// Linear interpolation between closest ranks; p in [0, 100].
double percentile(std::vector<double> values, double p);

// Fills rtf and the TTFB summary statistics from the raw fields.
void summarize(LatencyReport& r);

struct StreamOptions {
    std::size_t block_frames = 4;
    std::size_t queue_capacity = 4;
    // Called on the consumer side for every block as it is dequeued.
    std::function<void(const StreamBlock&)> on_block;
};

struct StreamResult {
    std::vector<StreamBlock> blocks;
    LatencyReport report;

    std::vector<double> concatenated() const;
};

StreamResult stream(std::span<const std::vector<std::uint32_t>> chunks, const model::Checkpoint& ckpt,
                    const codec::RvqCodebookSet& codebooks, const StreamOptions& options = {});

// Runs the chunk lists `repeats` times, discards the first run as warm-up
// and pools the rest.
LatencyReport bench(std::span<const std::vector<std::vector<std::uint32_t>>> requests, const model::Checkpoint& ckpt,
                    const codec::RvqCodebookSet& codebooks, std::size_t repeats, std::size_t block_frames = 4);

inline constexpr double kReferenceRtf = 0.0033;
inline constexpr double kReferenceTtfbMeanMs = 48.99;

std::string format_report_tsv(const LatencyReport& r);
std::string format_report_kv(const LatencyReport& r);

template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    // Blocks while full.
    void push(T v) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_; });
        items_.push_back(std::move(v));
        not_empty_.notify_one();
    }

    // Empty optional once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return v;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
    }

    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::deque<T> items_;
    bool closed_ = false;
    std::mutex mu_;
    std::condition_variable not_full_, not_empty_;
};

} // namespace rvqtts::streaming
