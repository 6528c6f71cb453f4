#include <bit>
#include <cstring>
#include <map>

#include "foldcity/error.hpp"
#include "foldcity/io/stores.hpp"
#include "foldcity/nn/train.hpp"

namespace foldcity::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

constexpr int kVersion = 1;
constexpr const char* kFormat = "foldcity.checkpoint";

struct Entry {
  std::vector<std::size_t> shape;
  std::size_t offset;  // in floats
};

template <typename Fn>
void visit_all(const TrainState& s, Fn&& fn) {
  s.params.for_each([&](const std::string& name, const Tensor<float>& t) { fn(name, t); });
  s.adam.m.for_each([&](const std::string& name, const Tensor<float>& t) { fn("adam.m." + name, t); });
  s.adam.v.for_each([&](const std::string& name, const Tensor<float>& t) { fn("adam.v." + name, t); });
}

template <typename Fn>
void visit_all(TrainState& s, Fn&& fn) {
  s.params.for_each([&](const std::string& name, Tensor<float>& t) { fn(name, t); });
  s.adam.m.for_each([&](const std::string& name, Tensor<float>& t) { fn("adam.m." + name, t); });
  s.adam.v.for_each([&](const std::string& name, Tensor<float>& t) { fn("adam.v." + name, t); });
}

}  // namespace

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".bin");
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const TrainState& state) {
  check_shapes(state.params);
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  visit_all(state, [&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", blob.size() / sizeof(float)}});
    blob.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  });
  const nlohmann::json manifest{
      {"format", kFormat},
      {"version", kVersion},
      {"blob", checkpoint_blob_path(path).filename().string()},
      {"blob_bytes", blob.size()},
      {"architecture", state.params.arch},
      {"config", config},
      {"epoch", state.epoch},
      {"adam",
       {{"step", state.adam.step},
        {"beta1", state.adam.beta1},
        {"beta2", state.adam.beta2},
        {"epsilon", state.adam.epsilon}}},
      {"loss_curve", state.loss_curve},
      {"tensors", tensors},
  };
  // Blob first: a manifest on disk always refers to a complete blob.
  io::write_file_atomic(checkpoint_blob_path(path), blob);
  io::write_file_atomic(path, manifest.dump(2) + "\n");
}

static Checkpoint load_impl(const std::filesystem::path& path, const Architecture* expected) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": unreadable checkpoint manifest: " + e.what());
  }
  try {
    if (manifest.value("format", std::string()) != kFormat) throw DataError(path.string() + " is not a checkpoint");
    if (manifest.at("version").get<int>() != kVersion) {
      throw DataError(path.string() + ": unsupported checkpoint version " + manifest.at("version").dump());
    }
    const std::string blob = io::read_file(checkpoint_blob_path(path));
    if (blob.size() != manifest.at("blob_bytes").get<std::size_t>() || blob.size() % sizeof(float)) {
      throw DataError(checkpoint_blob_path(path).string() + ": truncated or resized blob (" +
                      std::to_string(blob.size()) + " bytes, manifest says " + manifest.at("blob_bytes").dump() + ")");
    }

    Checkpoint ck;
    manifest.at("config").get_to(ck.config);
    const Architecture arch = manifest.at("architecture").get<Architecture>();
    const Architecture& target = expected ? *expected : arch;

    std::map<std::string, Entry> entries;
    for (const auto& t : manifest.at("tensors")) {
      entries[t.at("name").get<std::string>()] = {t.at("shape").get<std::vector<std::size_t>>(),
                                                   t.at("offset").get<std::size_t>()};
    }

    TrainState& s = ck.state;
    s.params = NetworkParams<float>::zeros(target);
    s.adam = AdamState<float>::zeros(target);
    const std::size_t blob_floats = blob.size() / sizeof(float);
    visit_all(s, [&](const std::string& name, Tensor<float>& t) {
      const auto it = entries.find(name);
      if (it == entries.end()) throw DataError("checkpoint has no tensor " + name);
      if (it->second.shape != t.shape) {
        throw DataError("checkpoint tensor " + name + " has shape " + shape_string(it->second.shape) +
                        ", expected " + shape_string(t.shape));
      }
      if (it->second.offset + t.size() > blob_floats) throw DataError("checkpoint tensor " + name + " exceeds the blob");
      std::memcpy(t.data.data(), blob.data() + it->second.offset * sizeof(float), t.size() * sizeof(float));
    });
    if (entries.size() != 3 * 2 * s.params.layers.size()) throw DataError("checkpoint holds unexpected tensors");
    if (arch != target) throw DataError("checkpoint architecture differs from the expected architecture");

    s.epoch = manifest.at("epoch").get<std::size_t>();
    const auto& adam = manifest.at("adam");
    adam.at("step").get_to(s.adam.step);
    adam.at("beta1").get_to(s.adam.beta1);
    adam.at("beta2").get_to(s.adam.beta2);
    adam.at("epsilon").get_to(s.adam.epsilon);
    manifest.at("loss_curve").get_to(s.loss_curve);
    if (s.loss_curve.size() != s.epoch) throw DataError("checkpoint loss curve length differs from its epoch count");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed checkpoint manifest: " + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return load_impl(path, nullptr); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const Architecture& expected) {
  return load_impl(path, &expected);
}

}  // namespace foldcity::nn
