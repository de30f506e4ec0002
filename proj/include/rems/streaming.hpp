#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <memory>
#include <mutex>
#include <netdb.h>
#include <optional>
#include <ostream>
#include <set>
#include <streambuf>
#include <string>
#include <sys/socket.h>
#include <thread>
#include <unistd.h>
#include <vector>

#include "rems/binio.hpp"
#include "rems/class_names.hpp"
#include "rems/error.hpp"
#include "rems/indrnn.hpp"
#include "rems/skeleton.hpp"

namespace rems {

struct StreamConfig {
  int sample_stride = 5;        // raw frames between sampled frames
  int window_len = 20;          // sampled frames per window
  int window_hop = 5;           // sampled frames between window starts (75% overlap)
  int nms_group = 5;            // windows consolidated per decision
  double score_threshold = 0.5; // minimum consolidated score
  double fps = 30.0;            // nominal raw frame rate

  void validate() const {
    if (sample_stride < 1 || window_len < 1 || window_hop < 1 || nms_group < 1)
      throw ValidationError("stream config fields must be positive");
    if (window_hop > window_len)
      throw ValidationError("window_hop must not exceed window_len");
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
      throw ValidationError("score_threshold must lie in [0, 1]");
    if (!(fps > 0.0)) throw ValidationError("fps must be positive");
  }

  // Raw frames from a group's first window start to its decision stamp.
  std::uint64_t decision_delay_raw() const {
    return static_cast<std::uint64_t>(window_len + (nms_group - 1) * window_hop) *
           static_cast<std::uint64_t>(sample_stride);
  }
};

struct WindowPrediction {
  std::vector<double> probabilities;  // index i = model class i (label i + 1)
  std::uint64_t start_raw_frame = 0;
  std::uint64_t end_raw_frame = 0;  // raw index of the window's last sampled frame
  std::uint64_t window_index = 0;
};

struct DetectionEvent {
  int class_id = 0;  // 1-based action label
  double score = 0.0;
  std::uint64_t start_raw_frame = 0;
  std::uint64_t end_raw_frame = 0;
  std::uint64_t decision_raw_frame = 0;  // stream position where the decision is stamped
};

struct AlarmEvent {
  DetectionEvent detection;
  std::string alarm_class_name;
  std::chrono::system_clock::time_point wall_time;
};

// ---------------------------------------------------------------------------
// Wire format. One SKW1 frame:
//   magic "SKW1", u32 raw frame index, 60 f32 (20 joints x x,y,z); 248 bytes.
// An SKR1 replay file is a plain concatenation of SKW1 frames.
// ---------------------------------------------------------------------------
inline constexpr char kWireMagic[4] = {'S', 'K', 'W', '1'};
inline constexpr std::size_t kWireFrameBytes = 4 + 4 + 60 * 4;

inline void write_wire_frame(std::ostream& os, const SkeletonFrame& frame) {
  os.write(kWireMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(frame.frame_index));
  for (const Joint3D& j : frame.joints) {
    put_f32(os, static_cast<float>(j.x));
    put_f32(os, static_cast<float>(j.y));
    put_f32(os, static_cast<float>(j.z));
  }
}

inline void write_replay_file(const std::filesystem::path& path,
                              const std::vector<SkeletonFrame>& frames) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& f : frames) write_wire_frame(os, f);
  if (!os) throw IoError("short write to " + path.string());
}

// Pull interface for raw frames. next() returns nothing at end of stream;
// malformed or non-finite frames are skipped and counted.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<SkeletonFrame> next() = 0;
  std::size_t malformed_frames() const { return malformed_; }

 protected:
  // Decodes frames off a byte stream, resynchronizing on the magic after a
  // framing error.
  std::optional<SkeletonFrame> next_from(std::istream& in) {
    for (;;) {
      unsigned char magic[4];
      if (!get_bytes(in, magic, 4)) return std::nullopt;
      if (std::memcmp(magic, kWireMagic, 4) != 0) {
        ++malformed_;
        // slide one byte at a time until the magic lines up again
        unsigned char window[4] = {magic[1], magic[2], magic[3], 0};
        std::size_t have = 3;
        for (;;) {
          int c = in.get();
          if (c < 0) return std::nullopt;
          window[have] = static_cast<unsigned char>(c);
          if (have == 3 && std::memcmp(window, kWireMagic, 4) == 0) break;
          if (have < 3) {
            ++have;
            continue;
          }
          window[0] = window[1];
          window[1] = window[2];
          window[2] = window[3];
        }
      }
      try {
        SkeletonFrame frame;
        frame.frame_index = get_u32(in, "SKW1 frame index");
        for (int j = 0; j < kJointCount; ++j) {
          frame.joints[j].x = static_cast<double>(get_f32(in, "SKW1 joint"));
          frame.joints[j].y = static_cast<double>(get_f32(in, "SKW1 joint"));
          frame.joints[j].z = static_cast<double>(get_f32(in, "SKW1 joint"));
        }
        frame.validate();
        return frame;
      } catch (const ParseError&) {
        return std::nullopt;  // truncated tail
      } catch (const ValidationError&) {
        ++malformed_;  // non-finite payload; try the next frame
      }
    }
  }

  std::size_t malformed_ = 0;
};

class ReplayFileSource : public FrameSource {
 public:
  explicit ReplayFileSource(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open replay file " + path.string());
  }
  std::optional<SkeletonFrame> next() override { return next_from(in_); }

 private:
  std::ifstream in_;
};

class VectorFrameSource : public FrameSource {
 public:
  explicit VectorFrameSource(std::vector<SkeletonFrame> frames) : frames_(std::move(frames)) {}
  std::optional<SkeletonFrame> next() override {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

 private:
  std::vector<SkeletonFrame> frames_;
  std::size_t pos_ = 0;
};

namespace detail {

// istream over a connected socket, enough for the frame decoder.
class SocketStreambuf : public std::streambuf {
 public:
  explicit SocketStreambuf(int fd) : fd_(fd) {}
  ~SocketStreambuf() override {
    if (fd_ >= 0) ::close(fd_);
  }

 protected:
  int_type underflow() override {
    if (gptr() < egptr()) return traits_type::to_int_type(*gptr());
    const ssize_t n = ::recv(fd_, buf_, sizeof buf_, 0);
    if (n <= 0) return traits_type::eof();
    setg(buf_, buf_, buf_ + n);
    return traits_type::to_int_type(*gptr());
  }

 private:
  int fd_;
  char buf_[4096];
};

}  // namespace detail

// Live source: connects to a sensor endpoint streaming SKW1 frames. A closed
// or failed connection simply ends the stream.
class TcpFrameSource : public FrameSource {
 public:
  TcpFrameSource(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    const std::string service = std::to_string(port);
    if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &result) != 0 || !result)
      throw IoError("cannot resolve " + host + ":" + service);
    int fd = -1;
    for (addrinfo* ai = result; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(result);
    if (fd < 0) throw IoError("cannot connect to " + host + ":" + service);
    buf_ = std::make_unique<detail::SocketStreambuf>(fd);
    in_ = std::make_unique<std::istream>(buf_.get());
  }

  std::optional<SkeletonFrame> next() override { return next_from(*in_); }

 private:
  std::unique_ptr<detail::SocketStreambuf> buf_;
  std::unique_ptr<std::istream> in_;
};

// ---------------------------------------------------------------------------
// Pipeline stages
// ---------------------------------------------------------------------------

// Keeps raw frames whose index is 0 mod stride, tagged with the raw index.
inline std::vector<SkeletonFrame> sample_stream(const std::vector<SkeletonFrame>& raw,
                                                int stride) {
  if (stride < 1) throw ValidationError("stride must be >= 1");
  std::vector<SkeletonFrame> out;
  for (const auto& f : raw)
    if (f.frame_index % static_cast<std::uint64_t>(stride) == 0) out.push_back(f);
  return out;
}

// Incremental sliding windows over the sampled stream: window k covers
// sampled indices [k*hop, k*hop + len) and is emitted as soon as its last
// frame arrives.
class WindowAssembler {
 public:
  explicit WindowAssembler(const StreamConfig& config) : cfg_(config) { cfg_.validate(); }

  std::optional<std::vector<SkeletonFrame>> push(const SkeletonFrame& sampled) {
    buffer_.push_back(sampled);
    if (buffer_.size() > static_cast<std::size_t>(cfg_.window_len)) buffer_.pop_front();
    ++count_;
    const std::uint64_t len = static_cast<std::uint64_t>(cfg_.window_len);
    if (count_ < len || (count_ - len) % static_cast<std::uint64_t>(cfg_.window_hop) != 0)
      return std::nullopt;
    return std::vector<SkeletonFrame>(buffer_.begin(), buffer_.end());
  }

  std::uint64_t windows_emitted() const {
    const std::uint64_t len = static_cast<std::uint64_t>(cfg_.window_len);
    if (count_ < len) return 0;
    return (count_ - len) / static_cast<std::uint64_t>(cfg_.window_hop) + 1;
  }

 private:
  StreamConfig cfg_;
  std::deque<SkeletonFrame> buffer_;
  std::uint64_t count_ = 0;
};

// Whole-vector windowing used by tests and by the closed-form geometry check.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> window_spans(
    std::size_t sampled_count, const StreamConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  const std::size_t len = static_cast<std::size_t>(cfg.window_len);
  if (sampled_count < len) return spans;
  for (std::size_t start = 0; start + len <= sampled_count;
       start += static_cast<std::size_t>(cfg.window_hop))
    spans.emplace_back(start, start + len);
  return spans;
}

// Features + eval-mode forward for one complete window.
inline WindowPrediction classify_window(const std::vector<SkeletonFrame>& window,
                                        const IndRNNModel& model, const FeatureConfig& features,
                                        std::uint64_t window_index = 0) {
  const FeatureClip clip = build_clip_features(window, features);
  WindowPrediction pred;
  pred.probabilities = network_forward(clip, model, RunMode::kEval);
  pred.start_raw_frame = window.front().frame_index;
  pred.end_raw_frame = window.back().frame_index;
  pred.window_index = window_index;
  return pred;
}

// Consolidates one disjoint group of nms_group consecutive window
// predictions: per-class mean probability, argmax (ties to the lower class),
// threshold. The decision is stamped at the group's first window start plus
// the fixed decision delay.
inline std::optional<DetectionEvent> nms_consolidate(
    const std::vector<WindowPrediction>& group, const StreamConfig& cfg) {
  cfg.validate();
  if (group.size() != static_cast<std::size_t>(cfg.nms_group))
    throw ValidationError("nms group must contain exactly " + std::to_string(cfg.nms_group) +
                          " predictions, got " + std::to_string(group.size()));
  const std::size_t classes = group.front().probabilities.size();
  for (const auto& p : group)
    if (p.probabilities.size() != classes)
      throw DimensionMismatch("inconsistent class counts inside an nms group");

  std::vector<double> mean(classes, 0.0);
  for (const auto& p : group)
    for (std::size_t c = 0; c < classes; ++c) mean[c] += p.probabilities[c];
  for (double& v : mean) v /= static_cast<double>(group.size());

  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c)
    if (mean[c] > mean[best]) best = c;
  if (!(mean[best] >= cfg.score_threshold)) return std::nullopt;

  DetectionEvent ev;
  ev.class_id = static_cast<int>(best) + 1;
  ev.score = mean[best];
  ev.start_raw_frame = group.front().start_raw_frame;
  ev.end_raw_frame = group.back().end_raw_frame;
  ev.decision_raw_frame = group.front().start_raw_frame + cfg.decision_delay_raw();
  return ev;
}

// Alarm iff the detected class belongs to the configured medical set.
inline std::optional<AlarmEvent> alarm_policy(const DetectionEvent& event,
                                              const std::set<int>& alarm_classes) {
  if (!alarm_classes.count(event.class_id)) return std::nullopt;
  AlarmEvent alarm;
  alarm.detection = event;
  alarm.alarm_class_name = action_name(event.class_id);
  alarm.wall_time = std::chrono::system_clock::now();
  return alarm;
}

// ---------------------------------------------------------------------------
// Event log: one tab-separated line per event,
//   event_type  class_id  class_name  score(6dp)  start  end  decision
// ---------------------------------------------------------------------------
inline std::string format_event_line(const char* type, const DetectionEvent& ev) {
  char score[32];
  std::snprintf(score, sizeof score, "%.6f", ev.score);
  std::string line(type);
  line += '\t';
  line += std::to_string(ev.class_id);
  line += '\t';
  line += action_name(ev.class_id);
  line += '\t';
  line += score;
  line += '\t';
  line += std::to_string(ev.start_raw_frame);
  line += '\t';
  line += std::to_string(ev.end_raw_frame);
  line += '\t';
  line += std::to_string(ev.decision_raw_frame);
  return line;
}

struct LoggedEvent {
  std::string type;  // DETECTION or ALARM
  DetectionEvent event;
};

inline std::vector<LoggedEvent> parse_event_log(std::istream& in) {
  std::vector<LoggedEvent> events;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 7)
      throw ParseError("event log line " + std::to_string(lineno) + ": expected 7 columns");
    LoggedEvent ev;
    ev.type = cols[0];
    try {
      ev.event.class_id = std::stoi(cols[1]);
      ev.event.score = std::stod(cols[3]);
      ev.event.start_raw_frame = std::stoull(cols[4]);
      ev.event.end_raw_frame = std::stoull(cols[5]);
      ev.event.decision_raw_frame = std::stoull(cols[6]);
    } catch (const std::exception&) {
      throw ParseError("event log line " + std::to_string(lineno) + ": bad numeric field");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

inline std::vector<LoggedEvent> parse_event_log_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return parse_event_log(is);
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct DecisionLatency {
  std::uint64_t start_raw_frame = 0;
  std::uint64_t end_raw_frame = 0;
  std::uint64_t decision_raw_frame = 0;
  double compute_ms = 0.0;  // wall time spent classifying the group's windows
};

struct PipelineStats {
  std::size_t raw_frames = 0;
  std::size_t sampled_frames = 0;
  std::size_t windows = 0;
  std::size_t detections = 0;
  std::size_t alarms = 0;
  std::size_t malformed_frames = 0;
  std::size_t dropped_frames = 0;     // live mode backpressure
  std::size_t degenerate_windows = 0; // feature extraction failed, prediction substituted
  std::size_t dropped_groups = 0;     // group discarded, no prediction available
  std::vector<DecisionLatency> latencies;

  double mean_latency_seconds(double fps) const {
    if (latencies.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& l : latencies)
      sum += static_cast<double>(l.decision_raw_frame - l.end_raw_frame);
    return sum / static_cast<double>(latencies.size()) / fps;
  }
};

struct PipelineOptions {
  bool threaded = false;       // three stages over bounded queues
  std::size_t queue_capacity = 128;
  bool live_drop = false;      // drop oldest on a full queue instead of blocking
};

// detection sink; alarm is non-null when the class is in the alarm set
using EventSink = std::function<void(const DetectionEvent&, const AlarmEvent*)>;

namespace detail {

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  // Returns the number of items dropped to make room (live mode only).
  std::size_t push(T item, bool drop_oldest) {
    std::unique_lock lock(mu_);
    std::size_t dropped = 0;
    if (drop_oldest) {
      while (q_.size() >= capacity_) {
        q_.pop_front();
        ++dropped;
      }
    } else {
      not_full_.wait(lock, [&] { return q_.size() < capacity_; });
    }
    q_.push_back(std::move(item));
    not_empty_.notify_one();
    return dropped;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T item = std::move(q_.front());
    q_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> q_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
};

// Window classification + group consolidation shared by both pipeline modes.
class DetectorState {
 public:
  DetectorState(const IndRNNModel& model, const StreamConfig& cfg, const FeatureConfig& features)
      : model_(model), cfg_(cfg), features_(features), assembler_(cfg) {}

  void on_sampled(const SkeletonFrame& frame, PipelineStats& stats, const EventSink& sink,
                  const std::set<int>& alarm_classes) {
    auto window = assembler_.push(frame);
    if (!window) return;
    ++stats.windows;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<WindowPrediction> pred;
    try {
      pred = classify_window(*window, model_, features_, next_window_index_);
    } catch (const DegenerateSkeleton&) {
      ++stats.degenerate_windows;
      if (last_good_) {
        pred = *last_good_;  // carry the previous window's belief
        pred->start_raw_frame = window->front().frame_index;
        pred->end_raw_frame = window->back().frame_index;
        pred->window_index = next_window_index_;
      }
    }
    ++next_window_index_;
    compute_ms_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                       .count();
    ++group_slots_;
    if (pred) {
      last_good_ = pred;
      group_.push_back(std::move(*pred));
    }

    if (group_slots_ == static_cast<std::size_t>(cfg_.nms_group)) {
      if (group_.size() != group_slots_) {
        ++stats.dropped_groups;
      } else {
        auto event = nms_consolidate(group_, cfg_);
        if (event) {
          ++stats.detections;
          DecisionLatency lat;
          lat.start_raw_frame = event->start_raw_frame;
          lat.end_raw_frame = event->end_raw_frame;
          lat.decision_raw_frame = event->decision_raw_frame;
          lat.compute_ms = compute_ms_;
          stats.latencies.push_back(lat);
          auto alarm = alarm_policy(*event, alarm_classes);
          if (alarm) ++stats.alarms;
          if (sink) sink(*event, alarm ? &*alarm : nullptr);
        }
      }
      group_.clear();
      group_slots_ = 0;
      compute_ms_ = 0.0;
    }
  }

 private:
  const IndRNNModel& model_;
  StreamConfig cfg_;
  FeatureConfig features_;
  WindowAssembler assembler_;
  std::vector<WindowPrediction> group_;
  std::size_t group_slots_ = 0;
  std::optional<WindowPrediction> last_good_;
  std::uint64_t next_window_index_ = 0;
  double compute_ms_ = 0.0;
};

}  // namespace detail

// Composes sample -> window -> classify -> consolidate -> alarm over a frame
// source. The single-threaded mode is the canonical reference; the threaded
// mode runs ingestion, inference and emission as separate stages connected by
// bounded queues and produces the same event sequence because every stage is
// an order-preserving function of its input stream.
inline PipelineStats run_pipeline(FrameSource& source, const IndRNNModel& model,
                                  const StreamConfig& cfg, const FeatureConfig& features,
                                  const std::set<int>& alarm_classes, const EventSink& sink,
                                  const PipelineOptions& options = {}) {
  cfg.validate();
  if (!model.trained()) throw ModelNotTrained("streaming requires a trained model");
  PipelineStats stats;
  detail::DetectorState detector(model, cfg, features);

  if (!options.threaded) {
    while (auto frame = source.next()) {
      ++stats.raw_frames;
      if (frame->frame_index % static_cast<std::uint64_t>(cfg.sample_stride) != 0) continue;
      ++stats.sampled_frames;
      detector.on_sampled(*frame, stats, sink, alarm_classes);
    }
    stats.malformed_frames = source.malformed_frames();
    return stats;
  }

  detail::BoundedQueue<SkeletonFrame> sampled_q(options.queue_capacity);
  detail::BoundedQueue<std::pair<DetectionEvent, std::optional<AlarmEvent>>> event_q(
      options.queue_capacity);
  std::mutex stats_mu;

  std::thread ingest([&] {
    while (auto frame = source.next()) {
      {
        std::lock_guard lock(stats_mu);
        ++stats.raw_frames;
      }
      if (frame->frame_index % static_cast<std::uint64_t>(cfg.sample_stride) != 0) continue;
      {
        std::lock_guard lock(stats_mu);
        ++stats.sampled_frames;
      }
      const std::size_t dropped = sampled_q.push(*frame, options.live_drop);
      if (dropped) {
        std::lock_guard lock(stats_mu);
        stats.dropped_frames += dropped;
      }
    }
    sampled_q.close();
  });

  std::thread infer([&] {
    PipelineStats local;  // windows/detections/latencies counted here
    EventSink forward = [&](const DetectionEvent& ev, const AlarmEvent* alarm) {
      event_q.push({ev, alarm ? std::optional<AlarmEvent>(*alarm) : std::nullopt},
                   /*drop_oldest=*/false);
    };
    while (auto frame = sampled_q.pop())
      detector.on_sampled(*frame, local, forward, alarm_classes);
    event_q.close();
    std::lock_guard lock(stats_mu);
    stats.windows += local.windows;
    stats.detections += local.detections;
    stats.alarms += local.alarms;
    stats.degenerate_windows += local.degenerate_windows;
    stats.dropped_groups += local.dropped_groups;
    for (auto& l : local.latencies) stats.latencies.push_back(l);
  });

  while (auto item = event_q.pop())
    if (sink) sink(item->first, item->second ? &*item->second : nullptr);

  ingest.join();
  infer.join();
  stats.malformed_frames = source.malformed_frames();
  return stats;
}

}  // namespace rems
