// SPDX-License-Identifier: Apache-2.0
#include "latentlab/dataset.hpp"

#include "latentlab/error.hpp"

namespace latentlab {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

IndexRange split_range(const SplitSizes& sizes, Split split) {
  switch (split) {
    case Split::train: return {0, sizes.train};
    case Split::val: return {sizes.train, sizes.train + sizes.val};
    case Split::test: return {sizes.train + sizes.val, sizes.train + sizes.val + sizes.test};
  }
  return {};
}

std::vector<TaskExample> generate_range(TaskKind kind, std::uint64_t seed, IndexRange range, const GenOptions& o) {
  std::vector<TaskExample> out;
  out.reserve(range.end - range.begin);
  for (std::uint64_t i = range.begin; i < range.end; ++i) out.push_back(generate_example(kind, seed, i, o));
  return out;
}

std::vector<TaskExample> generate_split(TaskKind kind, std::uint64_t seed, const SplitSizes& sizes, Split split,
                                        const GenOptions& o) {
  return generate_range(kind, seed, split_range(sizes, split), o);
}

std::string dataset_name(TaskKind kind, Split split) {
  return std::string(to_string(kind)) + "." + std::string(to_string(split));
}

nlohmann::json example_record(const TaskExample& ex) {
  return {{"kind", to_string(ex.kind)},
          {"seed", ex.seed},
          {"index", ex.index},
          {"prompt", ex.prompt},
          {"answer", {{"format", ex.answer.format == AnswerFormat::count ? "count" : "option"}, {"value", ex.answer.value}, {"text", ex.answer.text()}}},
          {"meta", ex.meta}};
}

namespace {

std::filesystem::path file_for(const std::filesystem::path& dir, const std::string& name, const char* ext) {
  return dir / (name + ext);
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::string& name, std::span<const TaskExample> examples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(file_for(dir, name, ".jsonl"), std::ios::binary);
  std::ofstream rasters(file_for(dir, name, ".rasters.bin"), std::ios::binary);
  std::ofstream index(file_for(dir, name, ".idx"), std::ios::binary);
  if (!manifest || !rasters || !index) throw DataError("cannot write dataset " + name + " in " + dir.string());
  std::uint64_t line_offset = 0, blob_offset = 0;
  for (const TaskExample& ex : examples) {
    nlohmann::json rec = example_record(ex);
    rec["raster"] = {{"offset", blob_offset}, {"height", ex.image.height}, {"width", ex.image.width},
                     {"channels", ex.image.channels}};
    const std::string line = rec.dump() + "\n";
    index.write(reinterpret_cast<const char*>(&line_offset), sizeof(line_offset));
    manifest << line;
    line_offset += line.size();
    const std::size_t bytes = ex.image.pixels.size() * sizeof(double);
    rasters.write(reinterpret_cast<const char*>(ex.image.pixels.data()), static_cast<std::streamsize>(bytes));
    blob_offset += bytes;
  }
  if (!manifest || !rasters || !index) throw DataError("write failed for dataset " + name);
}

DatasetReader::DatasetReader(const std::filesystem::path& dir, const std::string& name)
    : manifest_(file_for(dir, name, ".jsonl")), rasters_(file_for(dir, name, ".rasters.bin")) {
  const auto idx = file_for(dir, name, ".idx");
  for (const auto& p : {manifest_, rasters_, idx}) {
    if (!std::filesystem::exists(p)) throw DataError("dataset file missing: " + p.string());
  }
  const auto bytes = std::filesystem::file_size(idx);
  if (bytes % sizeof(std::uint64_t) != 0) throw DataError("corrupt index " + idx.string());
  offsets_.resize(bytes / sizeof(std::uint64_t));
  std::ifstream in(idx, std::ios::binary);
  in.read(reinterpret_cast<char*>(offsets_.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("cannot read " + idx.string());
}

TaskExample DatasetReader::load(std::size_t i) const {
  if (i >= offsets_.size()) throw DataError("example index " + std::to_string(i) + " out of range");
  std::ifstream m(manifest_, std::ios::binary);
  m.seekg(static_cast<std::streamoff>(offsets_[i]));
  std::string line;
  if (!std::getline(m, line)) throw DataError("cannot read manifest line " + std::to_string(i));
  nlohmann::json rec;
  try {
    rec = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt manifest line " + std::to_string(i) + ": " + e.what());
  }
  TaskExample ex;
  ex.kind = parse_task_kind(rec.at("kind").get<std::string>());
  ex.seed = rec.at("seed").get<std::uint64_t>();
  ex.index = rec.at("index").get<std::uint64_t>();
  ex.prompt = rec.at("prompt").get<std::vector<std::string>>();
  const auto& a = rec.at("answer");
  ex.answer = a.at("format") == "count" ? Answer::count(a.at("value").get<int>()) : Answer::option(a.at("value").get<int>());
  ex.meta = rec.at("meta");
  const auto& r = rec.at("raster");
  ex.image = Raster(r.at("height").get<std::size_t>(), r.at("width").get<std::size_t>(), r.at("channels").get<std::size_t>());
  std::ifstream b(rasters_, std::ios::binary);
  b.seekg(static_cast<std::streamoff>(r.at("offset").get<std::uint64_t>()));
  b.read(reinterpret_cast<char*>(ex.image.pixels.data()), static_cast<std::streamsize>(ex.image.pixels.size() * sizeof(double)));
  if (!b) throw DataError("truncated raster blob for example " + std::to_string(i));
  return ex;
}

std::vector<TaskExample> load_dataset(const std::filesystem::path& dir, const std::string& name) {
  DatasetReader reader(dir, name);
  std::vector<TaskExample> out;
  out.reserve(reader.size());
  for (std::size_t i = 0; i < reader.size(); ++i) out.push_back(reader.load(i));
  return out;
}

}  // namespace latentlab
