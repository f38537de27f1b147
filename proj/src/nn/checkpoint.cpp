#include "vlm6d/nn/checkpoint.h"

#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include "vlm6d/error.h"

namespace vlm6d::nn {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'M', '6', 'D', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

size_t ElementSize(const std::string &dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "f32") return 4;
  throw Error(ErrorCode::kIncompatibleWeights, "unknown tensor dtype " + dtype);
}

std::int64_t NumElements(const std::vector<std::int64_t> &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

std::string ShapeString(const std::vector<std::int64_t> &shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

void SaveCheckpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
  nlohmann::json manifest;
  manifest["metadata"] = ckpt.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto &[name, t] : ckpt.tensors) {
    if (NumElements(t.shape) != static_cast<std::int64_t>(t.data.size()))
      throw Error(ErrorCode::kContract, "tensor " + name + " shape/data mismatch");
    const std::uint64_t nbytes = t.data.size() * ElementSize(t.dtype);
    manifest["tensors"].push_back({{"name", name},
                                   {"dtype", t.dtype},
                                   {"shape", t.shape},
                                   {"offset", offset},
                                   {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char *>(&kVersion), sizeof(kVersion));
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char *>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto &[name, t] : ckpt.tensors) {
    if (t.dtype == "f64") {
      out.write(reinterpret_cast<const char *>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    } else {
      std::vector<float> f(t.data.begin(), t.data.end());
      out.write(reinterpret_cast<const char *>(f.data()),
                static_cast<std::streamsize>(f.size() * sizeof(float)));
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint LoadCheckpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  const auto file_size = std::filesystem::file_size(path);

  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char *>(&version), sizeof(version));
  in.read(reinterpret_cast<char *>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorCode::kIncompatibleWeights, path.string() + ": not a checkpoint");
  if (version != kVersion)
    throw Error(ErrorCode::kIncompatibleWeights,
                path.string() + ": unsupported version " + std::to_string(version));
  const std::uint64_t header = sizeof(magic) + sizeof(version) + sizeof(length);
  if (header + length > file_size)
    throw Error(ErrorCode::kIncompatibleWeights, path.string() + ": manifest truncated");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::kIncompatibleWeights,
                path.string() + ": malformed manifest: " + e.what());
  }

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  const std::uint64_t data_start = header + length;
  const std::uint64_t data_size = file_size - data_start;
  for (const auto &entry : manifest.at("tensors")) {
    const std::string name = entry.at("name");
    Tensor t;
    t.dtype = entry.at("dtype");
    t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
    const std::uint64_t offset = entry.at("offset");
    const std::uint64_t nbytes = entry.at("nbytes");
    const auto count = NumElements(t.shape);
    if (nbytes != static_cast<std::uint64_t>(count) * ElementSize(t.dtype) ||
        offset + nbytes > data_size)
      throw Error(ErrorCode::kIncompatibleWeights,
                  path.string() + ": tensor '" + name + "' is truncated or mis-sized");
    in.seekg(static_cast<std::streamoff>(data_start + offset));
    t.data.resize(static_cast<size_t>(count));
    if (t.dtype == "f64") {
      in.read(reinterpret_cast<char *>(t.data.data()), static_cast<std::streamsize>(nbytes));
    } else {
      std::vector<float> f(static_cast<size_t>(count));
      in.read(reinterpret_cast<char *>(f.data()), static_cast<std::streamsize>(nbytes));
      std::copy(f.begin(), f.end(), t.data.begin());
    }
    if (!in)
      throw Error(ErrorCode::kIncompatibleWeights,
                  path.string() + ": failed reading tensor '" + name + "'");
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

std::uint64_t HashFile(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void StoreParameters(const ParameterList &params, Checkpoint &ckpt) {
  for (const Parameter *p : params) {
    Tensor t;
    t.shape = p->shape;
    t.data.assign(p->value.data(), p->value.data() + p->value.size());
    ckpt.tensors[p->name] = std::move(t);
  }
}

LoadReport LoadParameters(const Checkpoint &ckpt, const ParameterList &params,
                          const std::function<bool(const std::string &)> &required,
                          const std::string &scope) {
  LoadReport report;
  std::set<std::string> known;
  for (Parameter *p : params) {
    known.insert(p->name);
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) {
      if (required && required(p->name))
        throw Error(ErrorCode::kIncompatibleWeights,
                    "required tensor '" + p->name + "' missing from checkpoint");
      report.missing.push_back(p->name);
      continue;
    }
    if (it->second.shape != p->shape)
      throw Error(ErrorCode::kIncompatibleWeights,
                  "tensor '" + p->name + "' has shape " + ShapeString(it->second.shape) +
                      ", expected " + ShapeString(p->shape));
    std::copy(it->second.data.begin(), it->second.data.end(), p->value.data());
    report.loaded.push_back(p->name);
  }
  for (const auto &[name, t] : ckpt.tensors) {
    if (name.rfind(scope, 0) == 0 && !known.count(name) && name.rfind("optim.", 0) != 0)
      report.unexpected.push_back(name);
  }
  return report;
}

}  // namespace vlm6d::nn
