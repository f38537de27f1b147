#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vlm6d/nn/tensor.h"

namespace vlm6d::nn {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  std::string dtype = "f64";  // storage type on disk: "f64" or "f32"
};

// Flat name -> tensor map plus a JSON metadata block describing the model
// that produced it.
//
// File layout (little-endian):
//   8 bytes  magic "VLM6DCKP"
//   u32      format version (1)
//   u64      manifest length in bytes
//   manifest JSON: {"metadata": ..., "tensors": [{name, dtype, shape,
//                   offset, nbytes}, ...]} with tensors sorted by name
//   data     tensor payloads, offsets relative to the start of this block
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

void SaveCheckpoint(const std::filesystem::path &path, const Checkpoint &ckpt);

// Throws kIncompatibleWeights when the file is truncated or malformed; the
// message names the first tensor that could not be read.
Checkpoint LoadCheckpoint(const std::filesystem::path &path);

std::uint64_t HashFile(const std::filesystem::path &path);

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;
  std::vector<std::string> unexpected;
};

void StoreParameters(const ParameterList &params, Checkpoint &ckpt);

// Copies matching tensors into params. Shape mismatches throw
// kIncompatibleWeights naming the tensor. Missing names for which
// `required(name)` is true throw as well; other missing names are reported.
// Names in the checkpoint under `scope` that match no parameter are listed as
// unexpected.
LoadReport LoadParameters(const Checkpoint &ckpt, const ParameterList &params,
                          const std::function<bool(const std::string &)> &required,
                          const std::string &scope = "");

}  // namespace vlm6d::nn
