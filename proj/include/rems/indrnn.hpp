#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rems/binio.hpp"
#include "rems/error.hpp"
#include "rems/skeleton.hpp"

namespace rems {

// Minimal row-major dense matrix; all model math is double precision.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
};

struct BatchNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  // f32-valued so a checkpoint round-trip reproduces eval outputs exactly
  double momentum = static_cast<double>(0.1f);
  double epsilon = static_cast<double>(1e-5f);
  bool initialized = false;  // set once training has populated the running stats

  void resize(std::size_t n) {
    gamma.assign(n, 1.0);
    beta.assign(n, 0.0);
    running_mean.assign(n, 0.0);
    running_var.assign(n, 1.0);
    initialized = false;
  }
};

// One recurrent layer: dense input weights, per-neuron recurrent weight
// (Hadamard recurrence), bias, and the normalization applied before and after
// the activation.
struct IndRNNLayerParams {
  Mat input_weights;                       // [hidden x input_dim]
  std::vector<double> recurrent_weights;   // [hidden]
  std::vector<double> bias;                // [hidden]
  BatchNormState bn_pre;
  BatchNormState bn_post;

  std::size_t hidden() const { return input_weights.rows; }
  std::size_t input_dim() const { return input_weights.cols; }
};

enum class RunMode { kTrain, kEval };

// Which hidden states feed the classifier head. Last-step is the default;
// temporal mean is available as an experiment knob.
enum class Readout { kLastStep, kTemporalMean };

inline constexpr int kNumLayers = 4;

struct IndRNNModel {
  std::vector<IndRNNLayerParams> layers;  // exactly 4
  Mat classifier_w;                       // [num_classes x hidden]
  std::vector<double> classifier_b;       // [num_classes]
  int input_dim = kFeatureDim;
  int hidden = 512;
  int num_classes = 49;
  Readout readout = Readout::kLastStep;

  bool trained() const {
    if (layers.empty()) return false;
    for (const auto& l : layers)
      if (!l.bn_pre.initialized || !l.bn_post.initialized) return false;
    return true;
  }

  void validate_dims() const {
    if (static_cast<int>(layers.size()) != kNumLayers)
      throw DimensionMismatch("model must have exactly " + std::to_string(kNumLayers) +
                              " layers, has " + std::to_string(layers.size()));
    for (int l = 0; l < kNumLayers; ++l) {
      const std::size_t want_in =
          l == 0 ? static_cast<std::size_t>(input_dim) : static_cast<std::size_t>(hidden);
      if (layers[l].input_dim() != want_in || layers[l].hidden() != static_cast<std::size_t>(hidden))
        throw DimensionMismatch("layer " + std::to_string(l) + " has shape " +
                                std::to_string(layers[l].hidden()) + "x" +
                                std::to_string(layers[l].input_dim()));
    }
    if (classifier_w.rows != static_cast<std::size_t>(num_classes) ||
        classifier_w.cols != static_cast<std::size_t>(hidden))
      throw DimensionMismatch("classifier head shape mismatch");
  }
};

namespace detail {

inline void matvec(const Mat& w, const double* x, double* out) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wr = w.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) acc += wr[j] * x[j];
    out[i] = acc;
  }
}

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace detail

// Raw cell update without normalization:
//   h_t[i] = relu((W x_t)[i] + u[i] * h_prev[i] + b[i])
// Neuron i sees h_prev only through its own index.
inline std::vector<double> indrnn_cell_step(std::span<const double> x_t,
                                            std::span<const double> h_prev,
                                            const IndRNNLayerParams& params) {
  const std::size_t h = params.hidden();
  if (x_t.size() != params.input_dim())
    throw DimensionMismatch("cell input size " + std::to_string(x_t.size()) +
                            " != " + std::to_string(params.input_dim()));
  if (h_prev.size() != h)
    throw DimensionMismatch("cell state size " + std::to_string(h_prev.size()) +
                            " != " + std::to_string(h));
  std::vector<double> out(h);
  detail::matvec(params.input_weights, x_t.data(), out.data());
  for (std::size_t i = 0; i < h; ++i)
    out[i] = detail::relu(out[i] + params.recurrent_weights[i] * h_prev[i] + params.bias[i]);
  return out;
}

namespace detail {

// Forward record for one layer over a [batch x steps] block. Everything is
// flattened as (b*steps + t)*hidden + i. Kept only while training; eval-mode
// inference uses the lean path below.
struct LayerCache {
  std::size_t batch = 0, steps = 0, hidden = 0;
  std::vector<double> pre;        // W x + u (.) h_{t-1} + b (raw recurrent chain)
  std::vector<double> h;          // relu(pre), the state the recurrence carries
  std::vector<double> xhat_pre;   // normalized pre
  std::vector<double> act;        // relu(gamma*xhat_pre + beta)
  std::vector<double> xhat_post;  // normalized act
  std::vector<double> out;        // layer output fed upward
  std::vector<double> mean_pre, var_pre, invstd_pre;
  std::vector<double> mean_post, var_post, invstd_post;

  void resize(std::size_t b, std::size_t t, std::size_t hdim) {
    batch = b;
    steps = t;
    hidden = hdim;
    const std::size_t n = b * t * hdim;
    pre.assign(n, 0.0);
    h.assign(n, 0.0);
    xhat_pre.assign(n, 0.0);
    act.assign(n, 0.0);
    xhat_post.assign(n, 0.0);
    out.assign(n, 0.0);
    mean_pre.assign(hdim, 0.0);
    var_pre.assign(hdim, 0.0);
    invstd_pre.assign(hdim, 0.0);
    mean_post.assign(hdim, 0.0);
    var_post.assign(hdim, 0.0);
    invstd_post.assign(hdim, 0.0);
  }

  std::size_t idx(std::size_t b, std::size_t t) const { return (b * steps + t) * hidden; }
};

// Batch statistics over (batch x time) jointly. Sums are accumulated per
// sample first and then across samples in index order, so a duplicated sample
// changes nothing and the reduction order is fixed regardless of threading.
inline void batch_stats(const std::vector<double>& x, std::size_t batch, std::size_t steps,
                        std::size_t hidden, std::vector<double>& mean, std::vector<double>& var) {
  const double n = static_cast<double>(batch * steps);
  std::vector<double> partial(hidden);
  std::fill(mean.begin(), mean.end(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(partial.begin(), partial.end(), 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* row = x.data() + (b * steps + t) * hidden;
      for (std::size_t i = 0; i < hidden; ++i) partial[i] += row[i];
    }
    for (std::size_t i = 0; i < hidden; ++i) mean[i] += partial[i];
  }
  for (std::size_t i = 0; i < hidden; ++i) mean[i] /= n;

  std::fill(var.begin(), var.end(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(partial.begin(), partial.end(), 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* row = x.data() + (b * steps + t) * hidden;
      for (std::size_t i = 0; i < hidden; ++i) {
        const double d = row[i] - mean[i];
        partial[i] += d * d;
      }
    }
    for (std::size_t i = 0; i < hidden; ++i) var[i] += partial[i];
  }
  for (std::size_t i = 0; i < hidden; ++i) var[i] /= n;
}

// Train-mode layer forward over a batch. The recurrence itself runs on raw
// (unnormalized) states so that the joint batch x time statistics are
// well-defined; normalization shapes the path that feeds the next layer.
inline void layer_forward_train(const std::vector<double>& x, std::size_t batch,
                                std::size_t steps, IndRNNLayerParams& params,
                                bool update_running, LayerCache& cache) {
  const std::size_t h = params.hidden();
  const std::size_t d = params.input_dim();
  cache.resize(batch, steps, h);

  for (std::size_t b = 0; b < batch; ++b) {
    const double* h_prev = nullptr;
    for (std::size_t t = 0; t < steps; ++t) {
      double* pre = cache.pre.data() + cache.idx(b, t);
      double* hs = cache.h.data() + cache.idx(b, t);
      matvec(params.input_weights, x.data() + (b * steps + t) * d, pre);
      if (h_prev)
        for (std::size_t i = 0; i < h; ++i)
          pre[i] += params.recurrent_weights[i] * h_prev[i] + params.bias[i];
      else
        for (std::size_t i = 0; i < h; ++i) pre[i] += params.bias[i];
      for (std::size_t i = 0; i < h; ++i) hs[i] = relu(pre[i]);
      h_prev = hs;
    }
  }

  batch_stats(cache.pre, batch, steps, h, cache.mean_pre, cache.var_pre);
  for (std::size_t i = 0; i < h; ++i)
    cache.invstd_pre[i] = 1.0 / std::sqrt(cache.var_pre[i] + params.bn_pre.epsilon);
  const std::size_t n = batch * steps;
  for (std::size_t k = 0; k < n; ++k) {
    const double* pre = cache.pre.data() + k * h;
    double* xh = cache.xhat_pre.data() + k * h;
    double* act = cache.act.data() + k * h;
    for (std::size_t i = 0; i < h; ++i) {
      xh[i] = (pre[i] - cache.mean_pre[i]) * cache.invstd_pre[i];
      act[i] = relu(params.bn_pre.gamma[i] * xh[i] + params.bn_pre.beta[i]);
    }
  }

  batch_stats(cache.act, batch, steps, h, cache.mean_post, cache.var_post);
  for (std::size_t i = 0; i < h; ++i)
    cache.invstd_post[i] = 1.0 / std::sqrt(cache.var_post[i] + params.bn_post.epsilon);
  for (std::size_t k = 0; k < n; ++k) {
    const double* act = cache.act.data() + k * h;
    double* xh = cache.xhat_post.data() + k * h;
    double* y = cache.out.data() + k * h;
    for (std::size_t i = 0; i < h; ++i) {
      xh[i] = (act[i] - cache.mean_post[i]) * cache.invstd_post[i];
      y[i] = params.bn_post.gamma[i] * xh[i] + params.bn_post.beta[i];
    }
  }

  if (update_running) {
    auto ema = [](BatchNormState& bn, const std::vector<double>& mean,
                  const std::vector<double>& var) {
      for (std::size_t i = 0; i < bn.running_mean.size(); ++i) {
        bn.running_mean[i] =
            quantize_f32((1.0 - bn.momentum) * bn.running_mean[i] + bn.momentum * mean[i]);
        bn.running_var[i] =
            quantize_f32((1.0 - bn.momentum) * bn.running_var[i] + bn.momentum * var[i]);
      }
      bn.initialized = true;
    };
    ema(params.bn_pre, cache.mean_pre, cache.var_pre);
    ema(params.bn_post, cache.mean_post, cache.var_post);
  }
}

// Eval-mode layer forward for one sequence, running statistics only.
inline std::vector<double> layer_forward_eval(const std::vector<double>& x, std::size_t steps,
                                              const IndRNNLayerParams& params) {
  const std::size_t h = params.hidden();
  const std::size_t d = params.input_dim();
  if (!params.bn_pre.initialized || !params.bn_post.initialized)
    throw ModelNotTrained("eval-mode forward on a layer with uninitialized running statistics");
  const BatchNormState& p1 = params.bn_pre;
  const BatchNormState& p2 = params.bn_post;
  std::vector<double> inv1(h), inv2(h);
  for (std::size_t i = 0; i < h; ++i) {
    inv1[i] = 1.0 / std::sqrt(p1.running_var[i] + p1.epsilon);
    inv2[i] = 1.0 / std::sqrt(p2.running_var[i] + p2.epsilon);
  }
  std::vector<double> out(steps * h);
  std::vector<double> state(h, 0.0);
  std::vector<double> pre(h);
  for (std::size_t t = 0; t < steps; ++t) {
    matvec(params.input_weights, x.data() + t * d, pre.data());
    for (std::size_t i = 0; i < h; ++i) {
      const double p = pre[i] + params.recurrent_weights[i] * state[i] + params.bias[i];
      state[i] = relu(p);
      const double a = relu(p1.gamma[i] * (p - p1.running_mean[i]) * inv1[i] + p1.beta[i]);
      out[t * h + i] = p2.gamma[i] * (a - p2.running_mean[i]) * inv2[i] + p2.beta[i];
    }
  }
  return out;
}

inline void softmax_inplace(std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// log(sum(exp(z))) with the usual max shift.
inline double log_sum_exp(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum);
}

inline void readout_vector(const std::vector<double>& seq, std::size_t steps, std::size_t h,
                           Readout readout, double* out) {
  if (readout == Readout::kLastStep) {
    const double* last = seq.data() + (steps - 1) * h;
    std::copy(last, last + h, out);
  } else {
    for (std::size_t i = 0; i < h; ++i) out[i] = 0.0;
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t i = 0; i < h; ++i) out[i] += seq[t * h + i];
    for (std::size_t i = 0; i < h; ++i) out[i] /= static_cast<double>(steps);
  }
}

}  // namespace detail

// One layer over a [T x d] sequence. Train mode uses joint batch x time
// statistics (batch of one here) and leaves running statistics untouched;
// eval mode requires trained statistics.
inline std::vector<std::vector<double>> layer_forward(
    const std::vector<std::vector<double>>& inputs, const IndRNNLayerParams& params,
    RunMode mode) {
  if (inputs.empty()) throw ValidationError("layer_forward needs at least one time step");
  const std::size_t steps = inputs.size();
  const std::size_t d = params.input_dim();
  const std::size_t h = params.hidden();
  std::vector<double> flat(steps * d);
  for (std::size_t t = 0; t < steps; ++t) {
    if (inputs[t].size() != d)
      throw DimensionMismatch("layer_forward input step " + std::to_string(t) + " has size " +
                              std::to_string(inputs[t].size()));
    std::copy(inputs[t].begin(), inputs[t].end(), flat.begin() + t * d);
  }
  std::vector<double> out_flat;
  if (mode == RunMode::kEval) {
    out_flat = detail::layer_forward_eval(flat, steps, params);
  } else {
    detail::LayerCache cache;
    auto copy = params;  // train-mode statistics are transient here
    detail::layer_forward_train(flat, 1, steps, copy, /*update_running=*/false, cache);
    out_flat = std::move(cache.out);
  }
  std::vector<std::vector<double>> out(steps, std::vector<double>(h));
  for (std::size_t t = 0; t < steps; ++t)
    std::copy(out_flat.begin() + t * h, out_flat.begin() + (t + 1) * h, out[t].begin());
  return out;
}

// Full stack: 4 recurrent layers, readout, classifier head, softmax.
inline std::vector<double> network_forward(const FeatureClip& clip, const IndRNNModel& model,
                                           RunMode mode) {
  model.validate_dims();
  if (model.input_dim != kFeatureDim)
    throw DimensionMismatch("model expects " + std::to_string(model.input_dim) +
                            "-dim inputs, feature clips carry " + std::to_string(kFeatureDim));
  if (clip.frames.empty()) throw ValidationError("empty clip");
  const std::size_t steps = clip.frames.size();
  const std::size_t h = static_cast<std::size_t>(model.hidden);

  std::vector<double> x(steps * kFeatureDim);
  for (std::size_t t = 0; t < steps; ++t)
    std::copy(clip.frames[t].values.begin(), clip.frames[t].values.end(),
              x.begin() + t * kFeatureDim);

  for (int l = 0; l < kNumLayers; ++l) {
    if (mode == RunMode::kEval) {
      x = detail::layer_forward_eval(x, steps, model.layers[l]);
    } else {
      detail::LayerCache cache;
      auto copy = model.layers[l];
      detail::layer_forward_train(x, 1, steps, copy, false, cache);
      x = std::move(cache.out);
    }
  }

  std::vector<double> read(h);
  detail::readout_vector(x, steps, h, model.readout, read.data());
  std::vector<double> logits(model.num_classes);
  detail::matvec(model.classifier_w, read.data(), logits.data());
  for (int c = 0; c < model.num_classes; ++c) logits[c] += model.classifier_b[c];
  detail::softmax_inplace(logits);
  return logits;
}

struct Prediction {
  int class_index = 0;  // 0-based model class; dataset label = class_index + 1
  double confidence = 0.0;
};

// Argmax of the eval-mode class distribution; ties break toward the lower
// class index.
inline Prediction predict(const FeatureClip& clip, const IndRNNModel& model) {
  if (!model.trained()) throw ModelNotTrained("predict requires a trained model");
  const std::vector<double> probs = network_forward(clip, model, RunMode::kEval);
  Prediction p;
  for (int c = 1; c < model.num_classes; ++c)
    if (probs[c] > probs[p.class_index]) p.class_index = c;
  p.confidence = probs[p.class_index];
  return p;
}

}  // namespace rems
