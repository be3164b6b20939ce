// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor container:
//   "PXDROP1" | u64 LE header length | JSON header | raw f32 LE tensor data
// The header carries the optional model spec, string metadata and a manifest
// of (name, shape, byte offset into the data section).
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pxdrop/model.hpp"

namespace pxdrop {

inline constexpr char kCheckpointMagic[] = "PXDROP1";

struct TensorBundle {
  std::optional<ModelSpec> spec;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
};

using Checkpoint = TensorBundle;

std::string serialize_bundle(const TensorBundle& bundle);
TensorBundle parse_bundle(const std::string& bytes);

void save_bundle(const TensorBundle& bundle, const std::filesystem::path& path);
TensorBundle load_bundle(const std::filesystem::path& path);

Checkpoint make_checkpoint(const Model& model, std::map<std::string, std::string> metadata = {});

// Rebuilds a model; every manifest entry must match the spec's tensor list
// exactly once with the same shape.
Model model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace pxdrop
