// SPDX-License-Identifier: Apache-2.0
//
// Residual convnets of depth 6n+2: a 3x3 stem, three stages of n basic
// blocks (post-activation, projection shortcut on shape change), global
// average pooling and a linear head.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pxdrop/tensor.hpp"

namespace pxdrop {

struct ModelSpec {
  int depth = 1;  // blocks per stage; 1 -> ResNet-8, 3 -> ResNet-20
  std::array<int, 3> widths{16, 32, 64};
  int num_classes = 10;
  int input_side = 32;
  int in_channels = 3;

  void validate() const;
  int total_layers() const { return 6 * depth + 2; }
  bool operator==(const ModelSpec&) const = default;
};

// TrainAux normalizes with batch statistics like Train but leaves the running
// statistics alone; used for extra forwards whose inputs the deployed model
// never sees.
enum class Mode { Train, Eval, TrainAux };

template <typename T>
class ResNet {
 public:
  ResNet(const ModelSpec& spec, std::uint64_t init_seed);

  // Logits [N, num_classes]. Train mode normalizes with batch statistics and
  // updates the running ones; Eval mode uses the frozen running statistics.
  // With track_params false the weights enter the graph as constants, so only
  // input gradients are produced and concurrent calls are safe.
  BasicTensor<T> forward(const BasicTensor<T>& input, Mode mode,
                         bool track_params = true) const;

  const ModelSpec& spec() const { return spec_; }

  // Learnable tensors in canonical order.
  std::vector<BasicTensor<T>> parameters() const;
  std::vector<std::pair<std::string, BasicTensor<T>>> named_parameters() const;
  // Parameters plus normalization running statistics, canonical order.
  std::vector<std::pair<std::string, BasicTensor<T>>> named_tensors() const;
  std::size_t parameter_count() const;

  // The first convolution's weight [K,3,kh,kw].
  const BasicTensor<T>& stem_weight() const { return stem_.conv.weight; }
  // The linear head: weight [width, classes], bias [classes].
  const BasicTensor<T>& head_weight() const { return head_weight_; }
  const BasicTensor<T>& head_bias() const { return head_bias_; }

 private:
  struct Conv {
    BasicTensor<T> weight;
    std::size_t stride = 1;
    std::size_t padding = 1;
  };
  struct Norm {
    BasicTensor<T> gamma, beta, running_mean, running_var;
  };
  struct ConvNorm {
    Conv conv;
    Norm norm;
  };
  struct Block {
    ConvNorm first, second;
    bool projected = false;
    ConvNorm shortcut;
  };

  BasicTensor<T> apply(const ConvNorm& layer, const BasicTensor<T>& x, Mode mode,
                       bool track) const;
  void collect(std::vector<std::pair<std::string, BasicTensor<T>>>& out,
               bool with_buffers) const;

  ModelSpec spec_;
  ConvNorm stem_;
  std::vector<std::vector<Block>> stages_;
  BasicTensor<T> head_weight_;
  BasicTensor<T> head_bias_;
};

extern template class ResNet<float>;
extern template class ResNet<double>;

using Model = ResNet<float>;

}  // namespace pxdrop
