// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace pxdrop {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {{"depth", spec.depth},
          {"widths", spec.widths},
          {"num_classes", spec.num_classes},
          {"input_side", spec.input_side},
          {"in_channels", spec.in_channels}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  spec.depth = j.at("depth").get<int>();
  spec.widths = j.at("widths").get<std::array<int, 3>>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.input_side = j.at("input_side").get<int>();
  spec.in_channels = j.at("in_channels").get<int>();
  spec.validate();
  return spec;
}

}  // namespace

const Tensor& TensorBundle::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("bundle has no tensor named '" + name + "'");
}

std::string serialize_bundle(const TensorBundle& bundle) {
  nlohmann::json header;
  header["format"] = bundle.spec ? "checkpoint" : "tensors";
  if (bundle.spec) header["spec"] = spec_to_json(*bundle.spec);
  header["metadata"] = bundle.metadata;
  auto manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : bundle.tensors) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * sizeof(float);
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, kMagicLen);
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  for (const auto& [name, t] : bundle.tensors)
    out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
  return out;
}

TensorBundle parse_bundle(const std::string& bytes) {
  if (bytes.size() < kMagicLen + 8 || bytes.compare(0, kMagicLen, kCheckpointMagic) != 0)
    throw FormatError("not a PXDROP1 container (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + kMagicLen, sizeof(len));
  const std::size_t data_start = kMagicLen + 8 + len;
  if (data_start > bytes.size()) throw FormatError("container header is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kMagicLen + 8, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container header is not valid JSON: ") + e.what());
  }

  TensorBundle bundle;
  try {
    if (header.contains("spec")) bundle.spec = spec_from_json(header.at("spec"));
    bundle.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
    const std::size_t data_len = bytes.size() - data_start;
    std::size_t expected = 0;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset != expected || offset + n * sizeof(float) > data_len)
        throw FormatError("tensor '" + name + "' lies outside the data section");
      std::vector<float> values(n);
      std::memcpy(values.data(), bytes.data() + data_start + offset, n * sizeof(float));
      bundle.tensors.emplace_back(name, Tensor(shape, std::move(values)));
      expected = offset + n * sizeof(float);
    }
    if (expected != data_len) throw FormatError("trailing bytes after the last tensor");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed container header: ") + e.what());
  }
  return bundle;
}

void save_bundle(const TensorBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

TensorBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_bundle(bytes);
}

Checkpoint make_checkpoint(const Model& model, std::map<std::string, std::string> metadata) {
  Checkpoint ckpt;
  ckpt.spec = model.spec();
  ckpt.metadata = std::move(metadata);
  for (const auto& [name, t] : model.named_tensors()) ckpt.tensors.emplace_back(name, t.clone());
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.spec) throw FormatError("container has no model spec");
  Model model(*checkpoint.spec, 0);
  auto slots = model.named_tensors();
  std::set<std::string> seen;
  for (const auto& [name, t] : checkpoint.tensors)
    if (!seen.insert(name).second)
      throw FormatError("checkpoint/spec mismatch: tensor '" + name + "' appears twice");
  if (seen.size() != slots.size())
    throw FormatError("checkpoint/spec mismatch: " + std::to_string(seen.size()) +
                      " tensors stored, spec expects " + std::to_string(slots.size()));
  for (auto& [name, slot] : slots) {
    const Tensor& stored = checkpoint.at(name);
    if (stored.shape() != slot.shape())
      throw FormatError("checkpoint/spec mismatch: '" + name + "' has shape " +
                        shape_str(stored.shape()) + ", spec expects " + shape_str(slot.shape()));
    auto dst = slot.mutable_values();
    std::copy(stored.values().begin(), stored.values().end(), dst.begin());
  }
  return model;
}

}  // namespace pxdrop
