// SPDX-License-Identifier: Apache-2.0
#include "latentlab/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "latentlab/error.hpp"

namespace latentlab {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'L', 'L', 'C', 'K', 'P', 'T', '0', '1'};

nlohmann::json read_manifest(std::ifstream& in, const std::filesystem::path& file) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a checkpoint file: " + file.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in) throw DataError("truncated checkpoint header: " + file.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated checkpoint manifest: " + file.string());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint manifest in " + file.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const ad::ParameterStore& params, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["params"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : params.all()) {
    manifest["params"].push_back(
        {{"path", p.path}, {"shape", p.value.shape()}, {"offset", offset}, {"trainable", p.trainable}});
    offset += p.value.size();
  }
  manifest["meta"] = meta;
  const std::string text = manifest.dump();

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + file.string());
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params.all()) {
    out.write(reinterpret_cast<const char*>(p.value.data().data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint: " + file.string());
}

nlohmann::json read_checkpoint_manifest(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + file.string());
  return read_manifest(in, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + file.string());
  const nlohmann::json manifest = read_manifest(in, file);
  Checkpoint ck;
  ck.meta = manifest.value("meta", nlohmann::json::object());
  const auto data_start = in.tellg();
  for (const auto& entry : manifest.at("params")) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data(shape_size(shape));
    const auto offset = entry.at("offset").get<std::uint64_t>();
    in.seekg(data_start + static_cast<std::streamoff>(offset * sizeof(double)));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint data for " + entry.at("path").get<std::string>());
    ck.params.add(entry.at("path").get<std::string>(), Tensor(std::move(shape), std::move(data)),
                  entry.at("trainable").get<bool>());
  }
  return ck;
}

}  // namespace latentlab
