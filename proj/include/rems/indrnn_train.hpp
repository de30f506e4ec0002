#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "rems/error.hpp"
#include "rems/indrnn.hpp"
#include "rems/rng.hpp"

namespace rems {

// Training diverged (non-finite loss); the CLI maps this to its own exit code.
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error(what) {}
};

struct TrainConfig {
  double learning_rate = 2e-4;
  int batch_size = 64;
  int epochs = 0;
  std::uint64_t seed = 0;
  double u_max_gamma = 2.0;   // T-step recurrent gain bound
  double lr_decay = 0.1;      // applied when validation accuracy plateaus
  int lr_patience = 5;        // epochs without improvement before decaying
  double val_fraction = 0.1;  // carved from the training set for the plateau rule
  int threads = 1;            // per-sample work only; reductions stay in sample order
};

struct ModelShape {
  int input_dim = kFeatureDim;
  int hidden = 512;
  int num_classes = 49;
  Readout readout = Readout::kLastStep;
};

struct LayerGradients {
  Mat d_input_weights;
  std::vector<double> d_recurrent_weights;
  std::vector<double> d_bias;
  std::vector<double> d_gamma_pre, d_beta_pre;
  std::vector<double> d_gamma_post, d_beta_post;
};

struct ModelGradients {
  std::vector<LayerGradients> layers;
  Mat d_classifier_w;
  std::vector<double> d_classifier_b;

  void resize_like(const IndRNNModel& m) {
    layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& p = m.layers[l];
      layers[l].d_input_weights = Mat(p.input_weights.rows, p.input_weights.cols);
      layers[l].d_recurrent_weights.assign(p.hidden(), 0.0);
      layers[l].d_bias.assign(p.hidden(), 0.0);
      layers[l].d_gamma_pre.assign(p.hidden(), 0.0);
      layers[l].d_beta_pre.assign(p.hidden(), 0.0);
      layers[l].d_gamma_post.assign(p.hidden(), 0.0);
      layers[l].d_beta_post.assign(p.hidden(), 0.0);
    }
    d_classifier_w = Mat(m.classifier_w.rows, m.classifier_w.cols);
    d_classifier_b.assign(m.classifier_b.size(), 0.0);
  }
};

// Visits every trainable tensor of the model with, when given, the matching
// gradient tensor. Visit order is fixed; Adam state and the checkpoint format
// both index tensors by this order.
template <typename Fn>
void for_each_param(IndRNNModel& model, ModelGradients* grads, Fn&& fn) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& p = model.layers[l];
    LayerGradients* g = grads ? &grads->layers[l] : nullptr;
    const std::string tag = "layer" + std::to_string(l + 1) + ".";
    fn(tag + "input_weights", p.input_weights.a, g ? &g->d_input_weights.a : nullptr);
    fn(tag + "recurrent_weights", p.recurrent_weights, g ? &g->d_recurrent_weights : nullptr);
    fn(tag + "bias", p.bias, g ? &g->d_bias : nullptr);
    fn(tag + "bn_pre.gamma", p.bn_pre.gamma, g ? &g->d_gamma_pre : nullptr);
    fn(tag + "bn_pre.beta", p.bn_pre.beta, g ? &g->d_beta_pre : nullptr);
    fn(tag + "bn_post.gamma", p.bn_post.gamma, g ? &g->d_gamma_post : nullptr);
    fn(tag + "bn_post.beta", p.bn_post.beta, g ? &g->d_beta_post : nullptr);
  }
  fn("classifier.weights", model.classifier_w.a, grads ? &grads->d_classifier_w.a : nullptr);
  fn("classifier.bias", model.classifier_b, grads ? &grads->d_classifier_b : nullptr);
}

namespace detail {

// Runs fn(i) for i in [0, n), split across `threads` workers. Each index owns
// disjoint output slots, so the split never changes results.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

struct ForwardPass {
  std::vector<double> input;              // [B, T, input_dim]
  std::vector<LayerCache> layer_caches;   // one per layer
  std::vector<double> readouts;           // [B, hidden]
  std::vector<double> probs;              // [B, num_classes]
  std::vector<int> predictions;           // argmax per sample
  double loss = 0.0;
  std::size_t batch = 0, steps = 0;
};

inline void layer_forward_train_mt(const std::vector<double>& x, std::size_t batch,
                                   std::size_t steps, IndRNNLayerParams& params,
                                   bool update_running, LayerCache& cache, int threads);

// Batched train-mode forward through the full stack plus the classifier head
// and mean cross-entropy. Per-sample recurrences may run on worker threads;
// every reduction is accumulated sample-by-sample in index order.
inline void network_forward_train(const std::vector<const FeatureClip*>& clips,
                                  const std::vector<int>& labels, IndRNNModel& model,
                                  bool update_running, int threads, ForwardPass& fwd) {
  model.validate_dims();
  if (model.input_dim != kFeatureDim)
    throw DimensionMismatch("model expects " + std::to_string(model.input_dim) +
                            "-dim inputs, feature clips carry " + std::to_string(kFeatureDim));
  if (clips.empty()) throw ValidationError("empty batch");
  if (clips.size() != labels.size()) throw DimensionMismatch("batch/label count mismatch");
  const std::size_t batch = clips.size();
  const std::size_t steps = clips[0]->frames.size();
  const std::size_t h = static_cast<std::size_t>(model.hidden);
  const std::size_t classes = static_cast<std::size_t>(model.num_classes);
  for (std::size_t b = 0; b < batch; ++b) {
    if (clips[b]->frames.size() != steps)
      throw DimensionMismatch("all clips in a batch must share one length");
    if (labels[b] < 0 || labels[b] >= model.num_classes)
      throw ValidationError("label " + std::to_string(labels[b]) + " outside [0, " +
                            std::to_string(model.num_classes) + ")");
  }

  fwd.batch = batch;
  fwd.steps = steps;
  fwd.input.resize(batch * steps * kFeatureDim);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t)
      std::copy(clips[b]->frames[t].values.begin(), clips[b]->frames[t].values.end(),
                fwd.input.begin() + (b * steps + t) * kFeatureDim);

  fwd.layer_caches.resize(model.layers.size());
  const std::vector<double>* x = &fwd.input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    layer_forward_train_mt(*x, batch, steps, model.layers[l], update_running,
                           fwd.layer_caches[l], threads);
    x = &fwd.layer_caches[l].out;
  }

  fwd.readouts.resize(batch * h);
  fwd.probs.resize(batch * classes);
  fwd.predictions.resize(batch);
  const auto& top = fwd.layer_caches.back();
  std::vector<double> losses(batch);
  parallel_for(batch, threads, [&](std::size_t b) {
    double* read = fwd.readouts.data() + b * h;
    if (model.readout == Readout::kLastStep) {
      const double* last = top.out.data() + top.idx(b, steps - 1);
      std::copy(last, last + h, read);
    } else {
      std::fill(read, read + h, 0.0);
      for (std::size_t t = 0; t < steps; ++t) {
        const double* row = top.out.data() + top.idx(b, t);
        for (std::size_t i = 0; i < h; ++i) read[i] += row[i];
      }
      for (std::size_t i = 0; i < h; ++i) read[i] /= static_cast<double>(steps);
    }
    std::vector<double> z(classes);
    matvec(model.classifier_w, read, z.data());
    for (std::size_t c = 0; c < classes; ++c) z[c] += model.classifier_b[c];
    const double lse = log_sum_exp(z);
    losses[b] = lse - z[static_cast<std::size_t>(labels[b])];
    int best = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      fwd.probs[b * classes + c] = std::exp(z[c] - lse);
      if (fwd.probs[b * classes + c] > fwd.probs[b * classes + best])
        best = static_cast<int>(c);
    }
    fwd.predictions[b] = best;
  });
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) total += losses[b];
  fwd.loss = total / static_cast<double>(batch);
}

// Train forward for one layer with the per-sample recurrence parallelized.
inline void layer_forward_train_mt(const std::vector<double>& x, std::size_t batch,
                                   std::size_t steps, IndRNNLayerParams& params,
                                   bool update_running, LayerCache& cache, int threads) {
  if (threads <= 1) {
    layer_forward_train(x, batch, steps, params, update_running, cache);
    return;
  }
  const std::size_t h = params.hidden();
  const std::size_t d = params.input_dim();
  cache.resize(batch, steps, h);
  parallel_for(batch, threads, [&](std::size_t b) {
    const double* h_prev = nullptr;
    for (std::size_t t = 0; t < steps; ++t) {
      double* pre = cache.pre.data() + cache.idx(b, t);
      double* hs = cache.h.data() + cache.idx(b, t);
      matvec(params.input_weights, x.data() + (b * steps + t) * d, pre);
      for (std::size_t i = 0; i < h; ++i)
        pre[i] += (h_prev ? params.recurrent_weights[i] * h_prev[i] : 0.0) + params.bias[i];
      for (std::size_t i = 0; i < h; ++i) hs[i] = relu(pre[i]);
      h_prev = hs;
    }
  });

  batch_stats(cache.pre, batch, steps, h, cache.mean_pre, cache.var_pre);
  for (std::size_t i = 0; i < h; ++i)
    cache.invstd_pre[i] = 1.0 / std::sqrt(cache.var_pre[i] + params.bn_pre.epsilon);
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = cache.idx(b, t);
      for (std::size_t i = 0; i < h; ++i) {
        cache.xhat_pre[base + i] =
            (cache.pre[base + i] - cache.mean_pre[i]) * cache.invstd_pre[i];
        cache.act[base + i] =
            relu(params.bn_pre.gamma[i] * cache.xhat_pre[base + i] + params.bn_pre.beta[i]);
      }
    }
  });

  batch_stats(cache.act, batch, steps, h, cache.mean_post, cache.var_post);
  for (std::size_t i = 0; i < h; ++i)
    cache.invstd_post[i] = 1.0 / std::sqrt(cache.var_post[i] + params.bn_post.epsilon);
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = cache.idx(b, t);
      for (std::size_t i = 0; i < h; ++i) {
        cache.xhat_post[base + i] =
            (cache.act[base + i] - cache.mean_post[i]) * cache.invstd_post[i];
        cache.out[base + i] =
            params.bn_post.gamma[i] * cache.xhat_post[base + i] + params.bn_post.beta[i];
      }
    }
  });

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

// Sum of g (and of g .* v when v is given) over all (b, t) rows, feature-wise,
// accumulated per sample first.
inline void reduce_rows(const std::vector<double>& g, const std::vector<double>* v,
                        std::size_t batch, std::size_t steps, std::size_t h,
                        std::vector<double>& sum_g, std::vector<double>& sum_gv) {
  sum_g.assign(h, 0.0);
  sum_gv.assign(h, 0.0);
  std::vector<double> pg(h), pgv(h);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(pg.begin(), pg.end(), 0.0);
    std::fill(pgv.begin(), pgv.end(), 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = (b * steps + t) * h;
      for (std::size_t i = 0; i < h; ++i) {
        pg[i] += g[base + i];
        if (v) pgv[i] += g[base + i] * (*v)[base + i];
      }
    }
    for (std::size_t i = 0; i < h; ++i) {
      sum_g[i] += pg[i];
      sum_gv[i] += pgv[i];
    }
  }
}

// Backward through one layer. d_out is consumed as scratch; returns gradient
// with respect to the layer input in d_in.
inline void layer_backward(const std::vector<double>& x, IndRNNLayerParams& params,
                           const LayerCache& cache, std::vector<double>& d_out,
                           LayerGradients& grads, std::vector<double>& d_in, int threads) {
  const std::size_t batch = cache.batch;
  const std::size_t steps = cache.steps;
  const std::size_t h = cache.hidden;
  const std::size_t d = params.input_dim();
  const double n = static_cast<double>(batch * steps);

  // BN after the activation.
  std::vector<double> sum_g, sum_gx;
  reduce_rows(d_out, &cache.xhat_post, batch, steps, h, sum_g, sum_gx);
  for (std::size_t i = 0; i < h; ++i) {
    grads.d_gamma_post[i] = sum_gx[i];
    grads.d_beta_post[i] = sum_g[i];
  }
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = cache.idx(b, t);
      for (std::size_t i = 0; i < h; ++i) {
        double v = d_out[base + i] - sum_g[i] / n - cache.xhat_post[base + i] * sum_gx[i] / n;
        v *= params.bn_post.gamma[i] * cache.invstd_post[i];
        // relu between the two normalizations
        d_out[base + i] = cache.act[base + i] > 0.0 ? v : 0.0;
      }
    }
  });

  // BN before the activation; d_out now holds d(normalized pre-activation).
  reduce_rows(d_out, &cache.xhat_pre, batch, steps, h, sum_g, sum_gx);
  for (std::size_t i = 0; i < h; ++i) {
    grads.d_gamma_pre[i] = sum_gx[i];
    grads.d_beta_pre[i] = sum_g[i];
  }
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t base = cache.idx(b, t);
      for (std::size_t i = 0; i < h; ++i) {
        double v = d_out[base + i] - sum_g[i] / n - cache.xhat_pre[base + i] * sum_gx[i] / n;
        d_out[base + i] = params.bn_pre.gamma[i] * cache.invstd_pre[i] * v;
      }
    }
  });

  // The pre-activation also feeds the next step through the raw recurrent
  // chain; walk time backwards adding that path. d_out becomes d(pre).
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = steps - 1; t-- > 0;) {
      const std::size_t base = cache.idx(b, t);
      const std::size_t next = cache.idx(b, t + 1);
      for (std::size_t i = 0; i < h; ++i) {
        if (cache.h[base + i] > 0.0)
          d_out[base + i] += params.recurrent_weights[i] * d_out[next + i];
      }
    }
  });

  // Input gradient rows are independent; parameter gradients are reduced
  // sequentially in sample order below.
  d_in.assign(batch * steps * d, 0.0);
  parallel_for(batch, threads, [&](std::size_t b) {
    for (std::size_t t = 0; t < steps; ++t) {
      const double* dp = d_out.data() + cache.idx(b, t);
      double* di = d_in.data() + (b * steps + t) * d;
      for (std::size_t i = 0; i < h; ++i) {
        const double g = dp[i];
        if (g == 0.0) continue;
        const double* wr = params.input_weights.row(i);
        for (std::size_t j = 0; j < d; ++j) di[j] += wr[j] * g;
      }
    }
  });

  Mat pw(h, d);
  std::vector<double> pu(h), pb(h);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(pw.a.begin(), pw.a.end(), 0.0);
    std::fill(pu.begin(), pu.end(), 0.0);
    std::fill(pb.begin(), pb.end(), 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* dp = d_out.data() + cache.idx(b, t);
      const double* xr = x.data() + (b * steps + t) * d;
      const double* h_prev = t > 0 ? cache.h.data() + cache.idx(b, t - 1) : nullptr;
      for (std::size_t i = 0; i < h; ++i) {
        const double g = dp[i];
        pb[i] += g;
        if (h_prev) pu[i] += g * h_prev[i];
        if (g == 0.0) continue;
        double* wr = pw.a.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) wr[j] += g * xr[j];
      }
    }
    for (std::size_t k = 0; k < pw.a.size(); ++k) grads.d_input_weights.a[k] += pw.a[k];
    for (std::size_t i = 0; i < h; ++i) {
      grads.d_recurrent_weights[i] += pu[i];
      grads.d_bias[i] += pb[i];
    }
  }
}

}  // namespace detail

struct BatchResult {
  double loss = 0.0;
  ModelGradients gradients;
  std::vector<int> predictions;  // train-mode argmax per sample
};

// Mean cross-entropy and exact gradients for the train-mode graph (joint
// batch x time normalization statistics). Labels are 0-based class indices.
// Running statistics are only touched when update_running is set.
inline BatchResult loss_and_gradients(const std::vector<const FeatureClip*>& clips,
                                      const std::vector<int>& labels, IndRNNModel& model,
                                      bool update_running = false, int threads = 1) {
  detail::ForwardPass fwd;
  detail::network_forward_train(clips, labels, model, update_running, threads, fwd);

  BatchResult res;
  res.loss = fwd.loss;
  res.predictions = fwd.predictions;
  res.gradients.resize_like(model);

  const std::size_t batch = fwd.batch;
  const std::size_t steps = fwd.steps;
  const std::size_t h = static_cast<std::size_t>(model.hidden);
  const std::size_t classes = static_cast<std::size_t>(model.num_classes);
  const double inv_batch = 1.0 / static_cast<double>(batch);

  // Classifier head backward; d_logits = (softmax - onehot) / B.
  std::vector<double> d_read(batch * h, 0.0);
  {
    std::vector<double> dz(classes);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = static_cast<int>(c) == labels[b] ? 1.0 : 0.0;
        dz[c] = (fwd.probs[b * classes + c] - onehot) * inv_batch;
      }
      const double* read = fwd.readouts.data() + b * h;
      for (std::size_t c = 0; c < classes; ++c) {
        res.gradients.d_classifier_b[c] += dz[c];
        if (dz[c] == 0.0) continue;
        double* wr = res.gradients.d_classifier_w.a.data() + c * h;
        for (std::size_t i = 0; i < h; ++i) wr[i] += dz[c] * read[i];
      }
      double* dr = d_read.data() + b * h;
      for (std::size_t c = 0; c < classes; ++c) {
        if (dz[c] == 0.0) continue;
        const double* wr = model.classifier_w.row(c);
        for (std::size_t i = 0; i < h; ++i) dr[i] += wr[i] * dz[c];
      }
    }
  }

  // Scatter readout gradient onto the top layer's output sequence.
  std::vector<double> d_out(batch * steps * h, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dr = d_read.data() + b * h;
    if (model.readout == Readout::kLastStep) {
      double* row = d_out.data() + (b * steps + steps - 1) * h;
      std::copy(dr, dr + h, row);
    } else {
      const double inv_t = 1.0 / static_cast<double>(steps);
      for (std::size_t t = 0; t < steps; ++t) {
        double* row = d_out.data() + (b * steps + t) * h;
        for (std::size_t i = 0; i < h; ++i) row[i] = dr[i] * inv_t;
      }
    }
  }

  std::vector<double> d_in;
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const std::vector<double>& x = l == 0 ? fwd.input : fwd.layer_caches[l - 1].out;
    detail::layer_backward(x, model.layers[l], fwd.layer_caches[l], d_out,
                           res.gradients.layers[l], d_in, threads);
    d_out.swap(d_in);
  }
  return res;
}

inline BatchResult loss_and_gradients(const std::vector<FeatureClip>& clips,
                                      const std::vector<int>& labels, IndRNNModel& model,
                                      bool update_running = false, int threads = 1) {
  std::vector<const FeatureClip*> ptrs;
  ptrs.reserve(clips.size());
  for (const auto& c : clips) ptrs.push_back(&c);
  return loss_and_gradients(ptrs, labels, model, update_running, threads);
}

// Train-mode loss only; the finite-difference oracle in the tests evaluates
// this, so it must stay a pure function of (batch, model).
inline double batch_loss(const std::vector<const FeatureClip*>& clips,
                         const std::vector<int>& labels, IndRNNModel& model) {
  detail::ForwardPass fwd;
  detail::network_forward_train(clips, labels, model, false, 1, fwd);
  return fwd.loss;
}

// Largest f32-representable magnitude not exceeding gamma^(1/T).
inline double recurrent_weight_bound(int steps, double gamma) {
  if (steps <= 0) throw ValidationError("clip length must be positive");
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  const double u_max = std::pow(gamma, 1.0 / static_cast<double>(steps));
  float q = static_cast<float>(u_max);
  if (static_cast<double>(q) > u_max) q = std::nextafter(q, 0.0f);
  return static_cast<double>(q);
}

// Clamp every recurrent weight into [-u_max, u_max] with u_max = gamma^(1/T),
// so the pure-recurrent path amplifies by at most gamma over a T-step clip.
inline void clamp_recurrent_weights(IndRNNModel& model, int steps, double gamma) {
  const double bound = recurrent_weight_bound(steps, gamma);
  for (auto& layer : model.layers)
    for (double& u : layer.recurrent_weights) u = std::clamp(u, -bound, bound);
}

// Glorot-uniform input weights, recurrent weights in (0, u_max), zero biases.
// Every parameter is rounded to its f32 value so checkpoints round-trip
// bit-exactly.
inline IndRNNModel init_model(const ModelShape& shape, std::uint64_t seed,
                              int clip_len = 20, double u_max_gamma = 2.0) {
  if (shape.hidden <= 0 || shape.num_classes <= 0 || shape.input_dim <= 0)
    throw ValidationError("model dimensions must be positive");
  IndRNNModel model;
  model.input_dim = shape.input_dim;
  model.hidden = shape.hidden;
  model.num_classes = shape.num_classes;
  model.readout = shape.readout;
  Rng rng(seed);
  const double u_max = recurrent_weight_bound(clip_len, u_max_gamma);
  model.layers.resize(kNumLayers);
  for (int l = 0; l < kNumLayers; ++l) {
    auto& p = model.layers[l];
    const std::size_t in = l == 0 ? static_cast<std::size_t>(shape.input_dim)
                                  : static_cast<std::size_t>(shape.hidden);
    const std::size_t h = static_cast<std::size_t>(shape.hidden);
    p.input_weights = Mat(h, in);
    const double lim = std::sqrt(6.0 / static_cast<double>(in + h));
    for (double& w : p.input_weights.a) w = quantize_f32(rng.uniform(-lim, lim));
    p.recurrent_weights.resize(h);
    for (double& u : p.recurrent_weights) u = quantize_f32(rng.uniform(0.0, u_max));
    p.bias.assign(h, 0.0);
    p.bn_pre.resize(h);
    p.bn_post.resize(h);
  }
  const std::size_t h = static_cast<std::size_t>(shape.hidden);
  model.classifier_w = Mat(static_cast<std::size_t>(shape.num_classes), h);
  const double lim = std::sqrt(6.0 / static_cast<double>(h + shape.num_classes));
  for (double& w : model.classifier_w.a) w = quantize_f32(rng.uniform(-lim, lim));
  model.classifier_b.assign(static_cast<std::size_t>(shape.num_classes), 0.0);
  clamp_recurrent_weights(model, clip_len, u_max_gamma);
  return model;
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainResult {
  IndRNNModel model;
  std::vector<EpochMetrics> metrics;
};

namespace detail {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

inline void adam_step(IndRNNModel& model, ModelGradients& grads, AdamState& st, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  std::size_t tensor = 0;
  for_each_param(model, &grads,
                 [&](const std::string&, std::vector<double>& w, std::vector<double>* g) {
                   if (st.m.size() <= tensor) {
                     st.m.emplace_back(w.size(), 0.0);
                     st.v.emplace_back(w.size(), 0.0);
                   }
                   auto& m = st.m[tensor];
                   auto& v = st.v[tensor];
                   for (std::size_t i = 0; i < w.size(); ++i) {
                     const double gi = (*g)[i];
                     m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                     v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                     w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                   }
                   ++tensor;
                 });
}

inline void quantize_params(IndRNNModel& model) {
  for_each_param(model, nullptr,
                 [](const std::string&, std::vector<double>& w, std::vector<double>*) {
                   for (double& x : w) x = quantize_f32(x);
                 });
}

}  // namespace detail

// Eval-mode metrics over a clip set; returns {mean CE loss, accuracy}.
inline std::pair<double, double> evaluate_clips(const std::vector<const FeatureClip*>& clips,
                                                const std::vector<int>& labels,
                                                const IndRNNModel& model) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::vector<double> probs = network_forward(*clips[i], model, RunMode::kEval);
    loss += -std::log(std::max(probs[static_cast<std::size_t>(labels[i])], 1e-300));
    int best = 0;
    for (int c = 1; c < model.num_classes; ++c)
      if (probs[c] > probs[best]) best = c;
    if (best == labels[i]) ++correct;
  }
  const double n = static_cast<double>(clips.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// Mini-batch Adam over the labeled clips. Deterministic for a fixed seed:
// initialization, the train/validation carve-out, and epoch shuffles all come
// from one seeded generator, and gradient reductions are order-fixed.
inline TrainResult train(const std::vector<FeatureClip>& clips, const std::vector<int>& labels,
                         const ModelShape& shape, const TrainConfig& cfg) {
  if (clips.empty()) throw ValidationError("empty dataset");
  if (clips.size() != labels.size()) throw DimensionMismatch("clip/label count mismatch");
  const std::size_t steps = clips[0].frames.size();
  for (const auto& c : clips)
    if (c.frames.size() != steps)
      throw ValidationError("training clips must share one length; sample_clip first");
  {
    std::vector<int> distinct(labels);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2) throw ValidationError("training needs at least two classes");
    if (distinct.front() < 0 || distinct.back() >= shape.num_classes)
      throw ValidationError("labels must lie in [0, num_classes)");
  }
  if (cfg.batch_size <= 0 || cfg.epochs < 0) throw ValidationError("bad train config");

  TrainResult result;
  Rng rng(cfg.seed);
  result.model = init_model(shape, rng.next_u64(), static_cast<int>(steps), cfg.u_max_gamma);

  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t val_count = static_cast<std::size_t>(
      std::floor(cfg.val_fraction * static_cast<double>(clips.size())));
  if (val_count >= clips.size()) val_count = clips.size() - 1;
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + val_count);
  std::vector<std::size_t> train_idx(order.begin() + val_count, order.end());

  detail::AdamState adam;
  double lr = cfg.learning_rate;
  double best_val = -1.0;
  int stale = 0;

  std::vector<const FeatureClip*> batch_clips;
  std::vector<int> batch_labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train_idx.size(), start + cfg.batch_size);
      batch_clips.clear();
      batch_labels.clear();
      for (std::size_t k = start; k < stop; ++k) {
        batch_clips.push_back(&clips[train_idx[k]]);
        batch_labels.push_back(labels[train_idx[k]]);
      }
      BatchResult res = loss_and_gradients(batch_clips, batch_labels, result.model,
                                           /*update_running=*/true, cfg.threads);
      if (!std::isfinite(res.loss))
        throw DivergenceError("loss diverged at epoch " + std::to_string(epoch));
      detail::adam_step(result.model, res.gradients, adam, lr);
      clamp_recurrent_weights(result.model, static_cast<int>(steps), cfg.u_max_gamma);
      detail::quantize_params(result.model);
      loss_sum += res.loss * static_cast<double>(stop - start);
      seen += stop - start;
      for (std::size_t k = start; k < stop; ++k)
        if (res.predictions[k - start] == labels[train_idx[k]]) ++correct;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (!val_idx.empty()) {
      std::vector<const FeatureClip*> vc;
      std::vector<int> vl;
      for (std::size_t k : val_idx) {
        vc.push_back(&clips[k]);
        vl.push_back(labels[k]);
      }
      std::tie(m.val_loss, m.val_acc) = evaluate_clips(vc, vl, result.model);
    } else {
      m.val_loss = m.train_loss;
      m.val_acc = m.train_acc;
    }
    result.metrics.push_back(m);

    if (m.val_acc > best_val + 1e-12) {
      best_val = m.val_acc;
      stale = 0;
    } else if (++stale >= cfg.lr_patience) {
      lr *= cfg.lr_decay;
      stale = 0;
    }
  }
  return result;
}

}  // namespace rems
