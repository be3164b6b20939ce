// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/model.hpp"

#include <cmath>

#include "pxdrop/ops.hpp"
#include "pxdrop/rng.hpp"

namespace pxdrop {

void ModelSpec::validate() const {
  if (depth < 1) throw ConfigError("model depth n must be >= 1");
  for (int w : widths)
    if (w <= 0) throw ConfigError("model stage widths must be positive");
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (input_side < 4) throw ConfigError("model input side too small");
  if (in_channels < 1) throw ConfigError("model needs at least one input channel");
}

namespace {

template <typename T>
BasicTensor<T> gaussian(Shape shape, double stddev, std::uint64_t seed, std::uint32_t index) {
  CounterRng rng({seed, Stream::Init, index, 0, 0});
  std::vector<T> values(shape_numel(shape));
  for (T& v : values) v = static_cast<T>(stddev * rng.normal());
  BasicTensor<T> t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
BasicTensor<T> constant(std::size_t n, T value, bool learnable) {
  auto t = BasicTensor<T>::full({n}, value);
  t.set_requires_grad(learnable);
  return t;
}

}  // namespace

template <typename T>
ResNet<T>::ResNet(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  spec_.validate();
  std::uint32_t index = 0;
  const auto make_conv_norm = [&](std::size_t in, std::size_t out, std::size_t k,
                                  std::size_t stride) {
    ConvNorm layer;
    const double fan_in = static_cast<double>(in * k * k);
    layer.conv.weight = gaussian<T>({out, in, k, k}, std::sqrt(2.0 / fan_in), init_seed, index++);
    layer.conv.stride = stride;
    layer.conv.padding = k / 2;
    layer.norm.gamma = constant<T>(out, T(1), true);
    layer.norm.beta = constant<T>(out, T(0), true);
    layer.norm.running_mean = constant<T>(out, T(0), false);
    layer.norm.running_var = constant<T>(out, T(1), false);
    return layer;
  };

  const auto w = [&](int s) { return static_cast<std::size_t>(spec_.widths[s]); };
  stem_ = make_conv_norm(static_cast<std::size_t>(spec_.in_channels), w(0), 3, 1);
  std::size_t in = w(0);
  stages_.resize(3);
  for (int s = 0; s < 3; ++s) {
    for (int b = 0; b < spec_.depth; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      Block block;
      block.first = make_conv_norm(in, w(s), 3, stride);
      block.second = make_conv_norm(w(s), w(s), 3, 1);
      block.projected = stride != 1 || in != w(s);
      if (block.projected) block.shortcut = make_conv_norm(in, w(s), 1, stride);
      stages_[s].push_back(std::move(block));
      in = w(s);
    }
  }
  const auto classes = static_cast<std::size_t>(spec_.num_classes);
  head_weight_ = gaussian<T>({in, classes}, std::sqrt(1.0 / static_cast<double>(in)),
                             init_seed, index++);
  head_bias_ = constant<T>(classes, T(0), true);
}

template <typename T>
BasicTensor<T> ResNet<T>::apply(const ConvNorm& layer, const BasicTensor<T>& x, Mode mode,
                                bool track) const {
  const auto use = [track](const BasicTensor<T>& p) { return track ? p : p.detach(); };
  auto y = conv2d(x, use(layer.conv.weight), layer.conv.stride, layer.conv.padding);
  auto running_mean = layer.norm.running_mean;
  auto running_var = layer.norm.running_var;
  NormStats<T> stats{running_mean.mutable_values(), running_var.mutable_values()};
  std::vector<T> scratch_mean, scratch_var;
  if (mode == Mode::TrainAux) {
    scratch_mean.assign(stats.running_mean.begin(), stats.running_mean.end());
    scratch_var.assign(stats.running_var.begin(), stats.running_var.end());
    stats.running_mean = scratch_mean;
    stats.running_var = scratch_var;
  }
  return batch_stat_norm(y, use(layer.norm.gamma), use(layer.norm.beta), stats,
                         mode != Mode::Eval);
}

template <typename T>
BasicTensor<T> ResNet<T>::forward(const BasicTensor<T>& input, Mode mode,
                                  bool track_params) const {
  const auto side = static_cast<std::size_t>(spec_.input_side);
  if (input.dim() != 4 || input.size(1) != static_cast<std::size_t>(spec_.in_channels) ||
      input.size(2) != side || input.size(3) != side)
    throw ShapeError("model expects input [N," + std::to_string(spec_.in_channels) + "," +
                     std::to_string(side) + "," + std::to_string(side) + "], got " +
                     shape_str(input.shape()));
  auto x = relu(apply(stem_, input, mode, track_params));
  for (const auto& stage : stages_)
    for (const Block& block : stage) {
      auto out = relu(apply(block.first, x, mode, track_params));
      out = apply(block.second, out, mode, track_params);
      const auto shortcut = block.projected ? apply(block.shortcut, x, mode, track_params) : x;
      x = relu(add(out, shortcut));
    }
  auto pooled = global_avg_pool(x);
  const auto hw = track_params ? head_weight_ : head_weight_.detach();
  const auto hb = track_params ? head_bias_ : head_bias_.detach();
  return add(matmul(pooled, hw), hb);
}

template <typename T>
void ResNet<T>::collect(std::vector<std::pair<std::string, BasicTensor<T>>>& out,
                        bool with_buffers) const {
  const auto push = [&](const std::string& prefix, const ConvNorm& layer) {
    out.emplace_back(prefix + ".conv.weight", layer.conv.weight);
    out.emplace_back(prefix + ".norm.gamma", layer.norm.gamma);
    out.emplace_back(prefix + ".norm.beta", layer.norm.beta);
    if (with_buffers) {
      out.emplace_back(prefix + ".norm.running_mean", layer.norm.running_mean);
      out.emplace_back(prefix + ".norm.running_var", layer.norm.running_var);
    }
  };
  push("stem", stem_);
  for (std::size_t s = 0; s < stages_.size(); ++s)
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      const std::string prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      const Block& block = stages_[s][b];
      push(prefix + ".first", block.first);
      push(prefix + ".second", block.second);
      if (block.projected) push(prefix + ".shortcut", block.shortcut);
    }
  out.emplace_back("head.weight", head_weight_);
  out.emplace_back("head.bias", head_bias_);
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> ResNet<T>::named_parameters() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  collect(out, false);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> ResNet<T>::named_tensors() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  collect(out, true);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> ResNet<T>::parameters() const {
  std::vector<BasicTensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t ResNet<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : named_parameters()) total += t.numel();
  return total;
}

template class ResNet<float>;
template class ResNet<double>;

}  // namespace pxdrop
