// rems: skeleton-stream action monitoring tool.
//
// Subcommands: prepare, train, stream, eval, eval-clips, gen-synth.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rems/rems.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool deterministic = false;
};

struct ScaleOptions {
  std::string mode = "reference-normalized";
  double reference_halfspine = 0.25;
  double min_spine_distance = 1e-6;

  rems::FeatureConfig feature_config() const {
    rems::FeatureConfig cfg;
    cfg.scale_mode = rems::scale_mode_from_name(mode);
    cfg.reference_halfspine = reference_halfspine;
    cfg.min_spine_distance = min_spine_distance;
    return cfg;
  }
};

void add_scale_options(CLI::App* cmd, ScaleOptions& opts) {
  cmd->add_option("--scale-mode", opts.mode, "reference-normalized or paper-literal")
      ->capture_default_str();
  cmd->add_option("--ref-halfspine", opts.reference_halfspine,
                  "Reference hip-to-mid-spine distance in meters")
      ->capture_default_str();
  cmd->add_option("--min-spine-dist", opts.min_spine_distance,
                  "Below this hip-to-spine distance a frame counts as degenerate")
      ->capture_default_str();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------
struct PrepareOptions {
  std::string input_dir;
  std::string output_dir;
  std::string split = "cross-subject";
  std::string train_subjects;  // comma separated override
  int clip_len = 20;
  ScaleOptions scale;
};

int run_prepare(const PrepareOptions& opt) {
  rems::SplitSpec spec = opt.split == "cross-view" ? rems::SplitSpec::cross_view()
                                                   : rems::SplitSpec::cross_subject_default();
  if (opt.split != "cross-view" && opt.split != "cross-subject")
    throw rems::ValidationError("unknown split mode: " + opt.split);
  if (!opt.train_subjects.empty()) {
    spec.train_subject_ids.clear();
    std::stringstream ss(opt.train_subjects);
    std::string tok;
    while (std::getline(ss, tok, ',')) spec.train_subject_ids.insert(std::stoi(tok));
  }

  if (!fs::is_directory(opt.input_dir))
    throw rems::IoError("input directory " + opt.input_dir + " is not readable");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(opt.input_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".skeleton")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<rems::ActionClip> clips;
  std::vector<std::string> stems;
  std::size_t rejected = 0, skipped_frames = 0;
  for (const auto& path : files) {
    try {
      rems::ParsedSkeletonFile parsed = rems::parse_skeleton_path(path);
      skipped_frames += parsed.skipped_frames;
      clips.push_back(std::move(parsed.clip));
      stems.push_back(path.stem().string());
    } catch (const rems::ParseError& e) {
      ++rejected;
      std::cout << "rejected\t" << path.filename().string() << "\t" << e.what() << "\n";
    }
  }

  // class filter, keeping file stems aligned
  {
    std::vector<rems::ActionClip> kept;
    std::vector<std::string> kept_stems;
    for (std::size_t i = 0; i < clips.size(); ++i)
      if (clips[i].label >= 1 && clips[i].label <= rems::kTrainableClassCount) {
        kept.push_back(std::move(clips[i]));
        kept_stems.push_back(stems[i]);
      }
    clips = std::move(kept);
    stems = std::move(kept_stems);
  }
  if (clips.empty()) throw rems::ValidationError("no usable clips in " + opt.input_dir);

  const rems::FeatureConfig features = opt.scale.feature_config();
  fs::create_directories(fs::path(opt.output_dir) / "train");
  fs::create_directories(fs::path(opt.output_dir) / "test");
  std::vector<rems::ManifestEntry> train_manifest, test_manifest;
  std::map<int, std::size_t> class_counts;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const rems::ActionClip& clip = clips[i];
    if (spec.mode == rems::SplitSpec::Mode::kCrossView &&
        (clip.camera_id < 1 || clip.camera_id > 3))
      throw rems::ValidationError("camera id outside 1..3 in " + stems[i]);
    const bool is_train = spec.mode == rems::SplitSpec::Mode::kCrossView
                              ? clip.camera_id != 1
                              : spec.train_subject_ids.count(clip.subject_id) > 0;

    rems::FeatureClip feat =
        rems::build_clip_features(rems::sample_clip(clip.frames, opt.clip_len), features);
    feat.label = clip.label;
    const std::string rel = std::string(is_train ? "train/" : "test/") + stems[i] + ".skf";
    rems::write_skf_file(fs::path(opt.output_dir) / rel, feat);
    rems::ManifestEntry entry{rel, clip.label, clip.subject_id, clip.camera_id,
                              clip.frames.size()};
    (is_train ? train_manifest : test_manifest).push_back(entry);
    ++class_counts[clip.label];
  }
  rems::write_manifest(fs::path(opt.output_dir) / "manifest_train.csv", train_manifest);
  rems::write_manifest(fs::path(opt.output_dir) / "manifest_test.csv", test_manifest);

  std::cout << "clips\t" << clips.size() << "\ntrain\t" << train_manifest.size() << "\ntest\t"
            << test_manifest.size() << "\nrejected\t" << rejected << "\nskipped_frames\t"
            << skipped_frames << "\n";
  for (const auto& [label, count] : class_counts)
    std::cout << "class\t" << label << "\t" << rems::action_name(label) << "\t" << count << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------
struct GenSynthOptions {
  std::string output_dir;
  int classes = 3;
  int clips_per_class = 200;
  int frames_per_clip = 100;
  double noise = 0.01;
  int instances = 5;
  int clip_len = 20;
  ScaleOptions scale;
};

int run_gensynth(const GenSynthOptions& opt, const GlobalOptions& global) {
  rems::SynthSpec spec;
  spec.num_classes = opt.classes;
  spec.clips_per_class = opt.clips_per_class;
  spec.frames_per_clip = opt.frames_per_clip;
  spec.noise_stddev = opt.noise;
  spec.seed = global.seed;

  const std::vector<rems::ActionClip> clips = rems::generate_synthetic(spec);
  const rems::FeatureConfig features = opt.scale.feature_config();
  const rems::SplitSpec split = rems::SplitSpec::cross_subject_default();

  fs::create_directories(fs::path(opt.output_dir) / "clips");
  std::vector<rems::ManifestEntry> train_manifest, test_manifest;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const rems::ActionClip& clip = clips[i];
    rems::FeatureClip feat =
        rems::build_clip_features(rems::sample_clip(clip.frames, opt.clip_len), features);
    feat.label = clip.label;
    char name[64];
    std::snprintf(name, sizeof name, "clips/synth_c%02d_%05zu.skf", clip.label, i);
    rems::write_skf_file(fs::path(opt.output_dir) / name, feat);
    rems::ManifestEntry entry{name, clip.label, clip.subject_id, clip.camera_id,
                              clip.frames.size()};
    (split.train_subject_ids.count(clip.subject_id) ? train_manifest : test_manifest)
        .push_back(entry);
  }
  rems::write_manifest(fs::path(opt.output_dir) / "manifest_train.csv", train_manifest);
  rems::write_manifest(fs::path(opt.output_dir) / "manifest_test.csv", test_manifest);

  const rems::SplicedStream stream = rems::splice_stream(spec, opt.instances);
  rems::write_replay_file(fs::path(opt.output_dir) / "stream.skr1", stream.frames);
  std::vector<rems::GroundTruthInterval> truth;
  for (const auto& iv : stream.truth) truth.push_back({iv.label, iv.start_raw, iv.end_raw});
  rems::write_ground_truth_file(fs::path(opt.output_dir) / "stream_truth.tsv", truth);

  std::cout << "clips\t" << clips.size() << "\ntrain\t" << train_manifest.size() << "\ntest\t"
            << test_manifest.size() << "\nstream_frames\t" << stream.frames.size()
            << "\nstream_instances\t" << stream.truth.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
struct TrainOptions {
  std::string data_dir;
  std::string manifest = "manifest_train.csv";
  std::string model_out;
  std::string metrics_out;
  int hidden = 512;
  int classes = 49;
  int epochs = 30;
  double learning_rate = 2e-4;
  int batch_size = 64;
  double u_max_gamma = 2.0;
  double lr_decay = 0.1;
  int lr_patience = 5;
  double val_fraction = 0.1;
  int threads = 1;
  std::string readout = "last";
};

int run_train(const TrainOptions& opt, const GlobalOptions& global) {
  const auto entries = rems::read_manifest(fs::path(opt.data_dir) / opt.manifest);
  if (entries.empty()) throw rems::ValidationError("manifest " + opt.manifest + " is empty");
  auto [clips, labels] = rems::load_feature_dataset(opt.data_dir, entries);
  for (int& label : labels) {
    if (label < 1 || label > opt.classes)
      throw rems::ValidationError("label " + std::to_string(label) + " outside 1.." +
                                  std::to_string(opt.classes));
    label -= 1;  // 1-based action labels to 0-based class indices
  }

  rems::ModelShape shape;
  shape.hidden = opt.hidden;
  shape.num_classes = opt.classes;
  shape.readout = opt.readout == "mean" ? rems::Readout::kTemporalMean : rems::Readout::kLastStep;

  rems::TrainConfig cfg;
  cfg.learning_rate = opt.learning_rate;
  cfg.batch_size = opt.batch_size;
  cfg.epochs = opt.epochs;
  cfg.seed = global.seed;
  cfg.u_max_gamma = opt.u_max_gamma;
  cfg.lr_decay = opt.lr_decay;
  cfg.lr_patience = opt.lr_patience;
  cfg.val_fraction = opt.val_fraction;
  cfg.threads = global.deterministic ? 1 : opt.threads;

  const rems::TrainResult result = rems::train(clips, labels, shape, cfg);
  rems::save_model_file(opt.model_out, result.model);

  if (!opt.metrics_out.empty()) {
    std::ofstream os(opt.metrics_out, std::ios::trunc);
    if (!os) throw rems::IoError("cannot open " + opt.metrics_out);
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& m : result.metrics)
      os << m.epoch << ',' << fmt(m.train_loss) << ',' << fmt(m.train_acc) << ','
         << fmt(m.val_loss) << ',' << fmt(m.val_acc) << "\n";
  }
  for (const auto& m : result.metrics)
    std::cout << "epoch\t" << m.epoch << "\ttrain_loss\t" << fmt(m.train_loss) << "\ttrain_acc\t"
              << fmt(m.train_acc) << "\tval_loss\t" << fmt(m.val_loss) << "\tval_acc\t"
              << fmt(m.val_acc) << "\n";
  std::cout << "model\t" << opt.model_out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval-clips
// ---------------------------------------------------------------------------
struct EvalClipsOptions {
  std::string data_dir;
  std::string manifest = "manifest_test.csv";
  std::string model_path;
  std::string report_out;
};

int run_eval_clips(const EvalClipsOptions& opt) {
  const rems::IndRNNModel model = rems::load_model_file(opt.model_path);
  const auto entries = rems::read_manifest(fs::path(opt.data_dir) / opt.manifest);
  if (entries.empty()) throw rems::ValidationError("manifest " + opt.manifest + " is empty");
  auto [clips, labels] = rems::load_feature_dataset(opt.data_dir, entries);

  std::vector<int> predictions;
  predictions.reserve(clips.size());
  for (const auto& clip : clips)
    predictions.push_back(rems::predict(clip, model).class_index + 1);

  const double acc = rems::accuracy(predictions, labels);
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> (total, correct)
  std::map<std::pair<int, int>, std::size_t> confusion;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& entry = per_class[labels[i]];
    ++entry.first;
    if (predictions[i] == labels[i])
      ++entry.second;
    else
      ++confusion[{labels[i], predictions[i]}];
  }

  std::ostringstream report;
  report << "clips\t" << clips.size() << "\naccuracy\t" << fmt(acc) << "\n";
  for (const auto& [label, counts] : per_class)
    report << "class\t" << label << "\t" << rems::action_name(label) << "\t" << counts.first
           << "\t" << counts.second << "\n";
  for (const auto& [pair, count] : confusion)
    report << "confused\t" << pair.first << "\t" << pair.second << "\t" << count << "\n";
  std::cout << report.str();
  if (!opt.report_out.empty()) {
    std::ofstream os(opt.report_out, std::ios::trunc);
    os << report.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// stream
// ---------------------------------------------------------------------------
struct StreamOptions {
  std::string source;
  std::string model_path;
  std::string events_out;
  std::string on_alarm;
  std::string alarm_classes;  // comma separated labels
  int stride = 5;
  int window_len = 20;
  int window_hop = 5;
  int nms_group = 5;
  double threshold = 0.5;
  double fps = 30.0;
  bool threaded = false;
  bool live_drop = false;
  std::size_t queue_capacity = 128;
  ScaleOptions scale;
};

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += "'";
  return out;
}

std::unique_ptr<rems::FrameSource> open_source(const std::string& spec) {
  if (spec.rfind("file:", 0) == 0)
    return std::make_unique<rems::ReplayFileSource>(spec.substr(5));
  if (spec.rfind("tcp:", 0) == 0) {
    const std::string rest = spec.substr(4);
    const std::size_t colon = rest.rfind(':');
    if (colon == std::string::npos)
      throw rems::ValidationError("tcp source must be tcp:<host>:<port>");
    return std::make_unique<rems::TcpFrameSource>(rest.substr(0, colon),
                                                  std::stoi(rest.substr(colon + 1)));
  }
  throw rems::ValidationError("source must be file:<path> or tcp:<host>:<port>");
}

int run_stream(const StreamOptions& opt, const GlobalOptions& global) {
  const rems::IndRNNModel model = rems::load_model_file(opt.model_path);

  rems::StreamConfig cfg;
  cfg.sample_stride = opt.stride;
  cfg.window_len = opt.window_len;
  cfg.window_hop = opt.window_hop;
  cfg.nms_group = opt.nms_group;
  cfg.score_threshold = opt.threshold;
  cfg.fps = opt.fps;
  cfg.validate();

  std::set<int> alarms = rems::default_alarm_classes();
  if (!opt.alarm_classes.empty()) {
    alarms.clear();
    std::stringstream ss(opt.alarm_classes);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) alarms.insert(std::stoi(tok));
  }

  std::ofstream events(opt.events_out, std::ios::trunc);
  if (!events) throw rems::IoError("cannot open " + opt.events_out);

  rems::PipelineOptions pipeline;
  pipeline.threaded = opt.threaded && !global.deterministic;
  pipeline.live_drop = opt.live_drop;
  pipeline.queue_capacity = opt.queue_capacity;

  auto source = open_source(opt.source);
  const rems::PipelineStats stats = rems::run_pipeline(
      *source, model, cfg, opt.scale.feature_config(), alarms,
      [&](const rems::DetectionEvent& ev, const rems::AlarmEvent* alarm) {
        events << rems::format_event_line("DETECTION", ev) << "\n";
        if (alarm) {
          events << rems::format_event_line("ALARM", alarm->detection) << "\n";
          events.flush();
          if (!opt.on_alarm.empty()) {
            std::string cmd = opt.on_alarm;
            cmd += " ALARM " + std::to_string(ev.class_id) + " " +
                   shell_quote(alarm->alarm_class_name) + " " + fmt(ev.score) + " " +
                   std::to_string(ev.start_raw_frame) + " " + std::to_string(ev.end_raw_frame) +
                   " " + std::to_string(ev.decision_raw_frame);
            const int rc = std::system(cmd.c_str());
            if (rc != 0) std::cerr << "on-alarm hook exited with " << rc << "\n";
          }
        }
      },
      pipeline);
  events.close();

  std::cout << "raw_frames\t" << stats.raw_frames << "\nsampled_frames\t" << stats.sampled_frames
            << "\nwindows\t" << stats.windows << "\ndetections\t" << stats.detections
            << "\nalarms\t" << stats.alarms << "\nmalformed_frames\t" << stats.malformed_frames
            << "\ndropped_frames\t" << stats.dropped_frames << "\ndegenerate_windows\t"
            << stats.degenerate_windows << "\ndropped_groups\t" << stats.dropped_groups << "\n";
  if (!stats.latencies.empty()) {
    double wall = 0.0;
    for (const auto& l : stats.latencies) wall += l.compute_ms;
    std::cout << "mean_end_to_decision_s\t" << fmt(stats.mean_latency_seconds(cfg.fps))
              << "\nstart_to_decision_s\t"
              << fmt(static_cast<double>(cfg.decision_delay_raw()) / cfg.fps)
              << "\nmean_compute_ms\t" << fmt(wall / stats.latencies.size()) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
struct EvalOptions {
  std::string events_path;
  std::string truth_path;
  double iou = 0.5;
  double fps = 30.0;
  std::string report_out;
};

int run_eval(const EvalOptions& opt) {
  const auto logged = rems::parse_event_log_file(opt.events_path);
  std::vector<rems::DetectionEvent> detections;
  for (const auto& ev : logged)
    if (ev.type == "DETECTION") detections.push_back(ev.event);
  const auto truth = rems::read_ground_truth_file(opt.truth_path);

  const rems::EvalReport report = rems::evaluate_stream(detections, truth, opt.iou, opt.fps);
  std::ostringstream out;
  out << "detections\t" << detections.size() << "\ntruth\t" << truth.size() << "\nmap\t"
      << fmt(report.map) << "\n";
  for (const auto& [cls, ap] : report.per_class_ap)
    out << "ap\t" << cls << "\t" << rems::action_name(cls) << "\t" << fmt(ap) << "\n";
  out << "matched\t" << report.matched << "\nfalse_positives\t" << report.false_positives
      << "\nmissed\t" << report.missed << "\nmean_latency_s\t" << fmt(report.mean_latency_seconds)
      << "\n";
  std::cout << out.str();
  if (!opt.report_out.empty()) {
    std::ofstream os(opt.report_out, std::ios::trunc);
    os << out.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"REMS: streaming skeleton action recognition and alarming"};
  app.require_subcommand(0, 1);
  app.set_config("--config", "", "Read options from a key = value file (sections per command)");

  GlobalOptions global;
  app.add_option("--seed", global.seed, "Seed for synthetic generation and training")
      ->capture_default_str();
  app.add_flag("--deterministic", global.deterministic,
               "Force the single-threaded reference mode everywhere");

  PrepareOptions prepare;
  CLI::App* cmd_prepare = app.add_subcommand("prepare", "Parse .skeleton files into SKF1 clips");
  cmd_prepare->add_option("--input", prepare.input_dir, "Directory of .skeleton files")
      ->required();
  cmd_prepare->add_option("--output", prepare.output_dir, "Output dataset directory")->required();
  cmd_prepare->add_option("--split", prepare.split, "cross-subject or cross-view")
      ->capture_default_str();
  cmd_prepare->add_option("--train-subjects", prepare.train_subjects,
                          "Comma-separated subject ids for the training side");
  cmd_prepare->add_option("--clip-len", prepare.clip_len, "Frames sampled per clip")
      ->capture_default_str();
  add_scale_options(cmd_prepare, prepare.scale);

  GenSynthOptions gensynth;
  CLI::App* cmd_gensynth =
      app.add_subcommand("gen-synth", "Generate a synthetic dataset and a spliced stream");
  cmd_gensynth->add_option("--output", gensynth.output_dir, "Output dataset directory")
      ->required();
  cmd_gensynth->add_option("--classes", gensynth.classes, "Synthetic class count (max 5)")
      ->capture_default_str();
  cmd_gensynth->add_option("--clips-per-class", gensynth.clips_per_class, "Clips per class")
      ->capture_default_str();
  cmd_gensynth->add_option("--frames-per-clip", gensynth.frames_per_clip, "Raw frames per clip")
      ->capture_default_str();
  cmd_gensynth->add_option("--noise", gensynth.noise, "Joint noise stddev in meters")
      ->capture_default_str();
  cmd_gensynth->add_option("--instances", gensynth.instances, "Action instances in the stream")
      ->capture_default_str();
  cmd_gensynth->add_option("--clip-len", gensynth.clip_len, "Frames sampled per clip")
      ->capture_default_str();
  add_scale_options(cmd_gensynth, gensynth.scale);

  TrainOptions train;
  CLI::App* cmd_train = app.add_subcommand("train", "Train the recurrent classifier");
  cmd_train->add_option("--data", train.data_dir, "Dataset directory")->required();
  cmd_train->add_option("--manifest", train.manifest, "Training manifest")->capture_default_str();
  cmd_train->add_option("--model", train.model_out, "Checkpoint output path")->required();
  cmd_train->add_option("--metrics", train.metrics_out, "Per-epoch metrics CSV path");
  cmd_train->add_option("--hidden", train.hidden, "Hidden units per layer")->capture_default_str();
  cmd_train->add_option("--classes", train.classes, "Class count")->capture_default_str();
  cmd_train->add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
  cmd_train->add_option("--lr", train.learning_rate, "Learning rate")->capture_default_str();
  cmd_train->add_option("--batch", train.batch_size, "Mini-batch size")->capture_default_str();
  cmd_train->add_option("--u-max-gamma", train.u_max_gamma, "Recurrent gain bound over a clip")
      ->capture_default_str();
  cmd_train->add_option("--lr-decay", train.lr_decay, "Plateau decay factor")
      ->capture_default_str();
  cmd_train->add_option("--lr-patience", train.lr_patience, "Plateau patience in epochs")
      ->capture_default_str();
  cmd_train->add_option("--val-fraction", train.val_fraction, "Validation fraction")
      ->capture_default_str();
  cmd_train->add_option("--threads", train.threads, "Worker threads for batch math")
      ->capture_default_str();
  cmd_train->add_option("--readout", train.readout, "last or mean")->capture_default_str();

  EvalClipsOptions eval_clips;
  CLI::App* cmd_eval_clips =
      app.add_subcommand("eval-clips", "Classify a manifest of clips and report accuracy");
  cmd_eval_clips->add_option("--data", eval_clips.data_dir, "Dataset directory")->required();
  cmd_eval_clips->add_option("--manifest", eval_clips.manifest, "Test manifest")
      ->capture_default_str();
  cmd_eval_clips->add_option("--model", eval_clips.model_path, "Checkpoint path")->required();
  cmd_eval_clips->add_option("--report", eval_clips.report_out, "Also write the report here");

  StreamOptions stream;
  CLI::App* cmd_stream =
      app.add_subcommand("stream", "Monitor a frame stream and emit detections/alarms");
  cmd_stream->add_option("--source", stream.source, "file:<path> or tcp:<host>:<port>")
      ->required();
  cmd_stream->add_option("--model", stream.model_path, "Checkpoint path")->required();
  cmd_stream->add_option("--events", stream.events_out, "Event log output path")->required();
  cmd_stream->add_option("--on-alarm", stream.on_alarm,
                         "Command run per alarm with the event fields as arguments");
  cmd_stream->add_option("--alarm-classes", stream.alarm_classes,
                         "Comma-separated alarm labels (default 41..49)");
  cmd_stream->add_option("--stride", stream.stride, "Raw frames between samples")
      ->capture_default_str();
  cmd_stream->add_option("--window-len", stream.window_len, "Sampled frames per window")
      ->capture_default_str();
  cmd_stream->add_option("--hop", stream.window_hop, "Sampled frames between window starts")
      ->capture_default_str();
  cmd_stream->add_option("--group", stream.nms_group, "Windows per consolidation group")
      ->capture_default_str();
  cmd_stream->add_option("--threshold", stream.threshold, "Detection score threshold")
      ->capture_default_str();
  cmd_stream->add_option("--fps", stream.fps, "Nominal raw frame rate")->capture_default_str();
  cmd_stream->add_flag("--threaded", stream.threaded, "Run the three-stage pipeline on threads");
  cmd_stream->add_flag("--live-drop", stream.live_drop,
                       "Drop oldest frames instead of blocking (live sources)");
  cmd_stream->add_option("--queue", stream.queue_capacity, "Bounded queue capacity")
      ->capture_default_str();
  add_scale_options(cmd_stream, stream.scale);

  EvalOptions eval;
  CLI::App* cmd_eval =
      app.add_subcommand("eval", "Score an event log against ground-truth intervals");
  cmd_eval->add_option("--events", eval.events_path, "Event log path")->required();
  cmd_eval->add_option("--truth", eval.truth_path, "Ground truth path")->required();
  cmd_eval->add_option("--iou", eval.iou, "Temporal IoU matching threshold")
      ->capture_default_str();
  cmd_eval->add_option("--fps", eval.fps, "Raw frame rate for latency reporting")
      ->capture_default_str();
  cmd_eval->add_option("--report", eval.report_out, "Also write the report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (app.get_subcommands().empty()) {
    std::cout << app.help();
    return 1;
  }

  // effective configuration; feeding this back via --config reproduces the run
  std::cout << "# configuration\n" << app.config_to_str(true, false) << "# end configuration\n";

  try {
    if (*cmd_prepare) return run_prepare(prepare);
    if (*cmd_gensynth) return run_gensynth(gensynth, global);
    if (*cmd_train) return run_train(train, global);
    if (*cmd_eval_clips) return run_eval_clips(eval_clips);
    if (*cmd_stream) return run_stream(stream, global);
    if (*cmd_eval) return run_eval(eval);
  } catch (const rems::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
