#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "rems/binio.hpp"
#include "rems/error.hpp"
#include "rems/indrnn.hpp"

namespace rems {

// IRNN checkpoint:
//   magic "IRNN", u16 version (1)
//   u32 input_dim, u32 hidden, u32 num_classes, u32 num_layers
//   u8 readout (0 = last step, 1 = temporal mean)
//   per layer, in order: input_weights (hidden x input, row-major f32),
//     recurrent_weights, bias, then bn_pre and bn_post each as
//     gamma/beta/running_mean/running_var (f32 x hidden), momentum f32,
//     epsilon f32, initialized u8
//   classifier weights (num_classes x hidden f32), classifier bias (f32)
// All floats little-endian. Parameters are f32-valued in memory, so a
// save/load round-trip reproduces eval outputs bit for bit.
inline constexpr char kModelMagic[4] = {'I', 'R', 'N', 'N'};
inline constexpr std::uint16_t kModelVersion = 1;

namespace detail {

inline void put_f32_vec(std::ostream& os, const std::vector<double>& v) {
  for (double x : v) put_f32(os, static_cast<float>(x));
}

inline void get_f32_vec(std::istream& is, std::vector<double>& v, std::size_t n,
                        const char* what) {
  v.resize(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(get_f32(is, what));
}

inline void put_bn(std::ostream& os, const BatchNormState& bn) {
  put_f32_vec(os, bn.gamma);
  put_f32_vec(os, bn.beta);
  put_f32_vec(os, bn.running_mean);
  put_f32_vec(os, bn.running_var);
  put_f32(os, static_cast<float>(bn.momentum));
  put_f32(os, static_cast<float>(bn.epsilon));
  os.put(bn.initialized ? 1 : 0);
}

inline void get_bn(std::istream& is, BatchNormState& bn, std::size_t n) {
  get_f32_vec(is, bn.gamma, n, "bn.gamma");
  get_f32_vec(is, bn.beta, n, "bn.beta");
  get_f32_vec(is, bn.running_mean, n, "bn.running_mean");
  get_f32_vec(is, bn.running_var, n, "bn.running_var");
  bn.momentum = static_cast<double>(get_f32(is, "bn.momentum"));
  bn.epsilon = static_cast<double>(get_f32(is, "bn.epsilon"));
  const int flag = is.get();
  if (flag < 0) throw ParseError("truncated input reading bn.initialized");
  bn.initialized = flag != 0;
}

}  // namespace detail

inline void save_model(std::ostream& os, const IndRNNModel& model) {
  model.validate_dims();
  os.write(kModelMagic, 4);
  put_u16(os, kModelVersion);
  put_u32(os, static_cast<std::uint32_t>(model.input_dim));
  put_u32(os, static_cast<std::uint32_t>(model.hidden));
  put_u32(os, static_cast<std::uint32_t>(model.num_classes));
  put_u32(os, static_cast<std::uint32_t>(model.layers.size()));
  os.put(model.readout == Readout::kTemporalMean ? 1 : 0);
  for (const auto& layer : model.layers) {
    detail::put_f32_vec(os, layer.input_weights.a);
    detail::put_f32_vec(os, layer.recurrent_weights);
    detail::put_f32_vec(os, layer.bias);
    detail::put_bn(os, layer.bn_pre);
    detail::put_bn(os, layer.bn_post);
  }
  detail::put_f32_vec(os, model.classifier_w.a);
  detail::put_f32_vec(os, model.classifier_b);
  if (!os) throw IoError("short write while saving model");
}

inline IndRNNModel load_model(std::istream& is) {
  expect_magic(is, kModelMagic, "IRNN");
  const std::uint16_t version = get_u16(is, "IRNN version");
  if (version != kModelVersion)
    throw ParseError("unsupported IRNN version " + std::to_string(version));
  IndRNNModel model;
  model.input_dim = static_cast<int>(get_u32(is, "input_dim"));
  model.hidden = static_cast<int>(get_u32(is, "hidden"));
  model.num_classes = static_cast<int>(get_u32(is, "num_classes"));
  const std::uint32_t layers = get_u32(is, "num_layers");
  if (layers != static_cast<std::uint32_t>(kNumLayers))
    throw ParseError("IRNN layer count " + std::to_string(layers));
  if (model.input_dim <= 0 || model.hidden <= 0 || model.num_classes <= 0)
    throw ParseError("IRNN header has non-positive dimensions");
  const int readout = is.get();
  if (readout < 0) throw ParseError("truncated input reading readout");
  model.readout = readout != 0 ? Readout::kTemporalMean : Readout::kLastStep;

  model.layers.resize(layers);
  const std::size_t h = static_cast<std::size_t>(model.hidden);
  for (std::uint32_t l = 0; l < layers; ++l) {
    auto& p = model.layers[l];
    const std::size_t in = l == 0 ? static_cast<std::size_t>(model.input_dim) : h;
    p.input_weights = Mat(h, in);
    detail::get_f32_vec(is, p.input_weights.a, h * in, "input_weights");
    detail::get_f32_vec(is, p.recurrent_weights, h, "recurrent_weights");
    detail::get_f32_vec(is, p.bias, h, "bias");
    detail::get_bn(is, p.bn_pre, h);
    detail::get_bn(is, p.bn_post, h);
  }
  model.classifier_w = Mat(static_cast<std::size_t>(model.num_classes), h);
  detail::get_f32_vec(is, model.classifier_w.a, model.classifier_w.a.size(),
                      "classifier weights");
  detail::get_f32_vec(is, model.classifier_b, static_cast<std::size_t>(model.num_classes),
                      "classifier bias");
  model.validate_dims();
  return model;
}

inline void save_model_file(const std::filesystem::path& path, const IndRNNModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  save_model(os, model);
}

inline IndRNNModel load_model_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return load_model(is);
}

}  // namespace rems
