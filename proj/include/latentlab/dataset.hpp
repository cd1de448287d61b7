// SPDX-License-Identifier: Apache-2.0
//
// On-disk dataset: for a dataset named N in directory D,
//   D/N.jsonl        one manifest record per example
//   D/N.rasters.bin  raw f64 little-endian pixels, referenced by byte offset
//   D/N.idx          u64 byte offset of every manifest line
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/taskgen.hpp"

namespace latentlab {

enum class Split { train, val, test };
std::string_view to_string(Split s);

struct SplitSizes {
  std::size_t train = 1000;
  std::size_t val = 250;
  std::size_t test = 500;
};

struct IndexRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

/// Disjoint index ranges: train, then val, then test.
IndexRange split_range(const SplitSizes& sizes, Split split);

std::vector<TaskExample> generate_range(TaskKind kind, std::uint64_t seed, IndexRange range, const GenOptions& o = {});
std::vector<TaskExample> generate_split(TaskKind kind, std::uint64_t seed, const SplitSizes& sizes, Split split,
                                        const GenOptions& o = {});

std::string dataset_name(TaskKind kind, Split split);

nlohmann::json example_record(const TaskExample& ex);

void write_dataset(const std::filesystem::path& dir, const std::string& name, std::span<const TaskExample> examples);

class DatasetReader {
 public:
  /// Throws DataError when any of the three files is missing.
  DatasetReader(const std::filesystem::path& dir, const std::string& name);
  std::size_t size() const { return offsets_.size(); }
  TaskExample load(std::size_t i) const;

 private:
  std::filesystem::path manifest_;
  std::filesystem::path rasters_;
  std::vector<std::uint64_t> offsets_;
};

std::vector<TaskExample> load_dataset(const std::filesystem::path& dir, const std::string& name);

}  // namespace latentlab
