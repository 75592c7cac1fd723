#pragma once

#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <vector>
#include <chrono>
#include <thread>

#include "posefuse/net/tcp.hpp"
#include "posefuse/pipeline.hpp"

namespace posefuse {

/// Seconds since the Unix epoch; the clock device timestamps are taken on.
inline double wall_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
}

struct LiveOptions {
  double max_seconds = 0.0;  // 0: no limit
  const std::atomic<bool>* stop = nullptr;
};

/// Ticks the aggregator at its configured rate on the wall clock, with t_a
/// taken at tick start. Returns once every device that connected has
/// disconnected and the queue is empty, on a stop request, or at the time
/// limit.
inline RunReport run_live(Aggregator& agg, const net::TcpListener& source, const FrameSink& sink = {},
                          const LiveOptions& opts = {}) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(agg.config().period()));
  ReportBuilder builder(agg.config().latency_budget_ms);
  auto deadline = start;
  while (true) {
    if (opts.stop && opts.stop->load()) break;
    if (opts.max_seconds > 0.0 && std::chrono::duration<double>(clock::now() - start).count() >= opts.max_seconds) break;
    if (source.drained() && agg.queue().size() == 0) break;
    if (agg.queue().size() > 0 || !agg.tracks().empty()) {
      auto frame = agg.tick(wall_seconds());
      builder.add(frame);
      if (sink) sink(frame);
    }
    deadline += period;
    const auto now = clock::now();
    if (deadline < now) deadline = now;  // overran: do not try to catch up
    std::this_thread::sleep_until(deadline);
  }
  const double wall = std::chrono::duration<double>(clock::now() - start).count();
  return builder.finish(source.stats().batches, agg.tracks_created(), wall);
}

/// Plays a recorded stream to an aggregator in real time, one sender thread
/// per device. Capture times are rebased so the stream starts at `epoch`.
inline void send_realtime(const std::vector<harness::TimedBatch>& stream, const std::string& host,
                          std::uint16_t port, double epoch) {
  std::map<std::uint32_t, std::vector<const harness::TimedBatch*>> per_device;
  for (const auto& tb : stream) per_device[tb.batch.device_id].push_back(&tb);
  const auto t0 = std::chrono::system_clock::time_point(
      std::chrono::duration_cast<std::chrono::system_clock::duration>(std::chrono::duration<double>(epoch)));
  std::vector<std::jthread> senders;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (auto& [device, batches] : per_device) {
    senders.emplace_back([&, b = batches]() {
      try {
        net::TcpSender tx(host, port);
        for (const auto* tb : b) {
          std::this_thread::sleep_until(
              t0 + std::chrono::duration_cast<std::chrono::system_clock::duration>(std::chrono::duration<double>(tb->arrival)));
          auto batch = tb->batch;
          batch.stamp = Timestamp::from_seconds(epoch + batch.stamp.seconds());
          tx.send(batch);
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  senders.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace posefuse
