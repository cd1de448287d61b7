// SPDX-License-Identifier: Apache-2.0
//
// Procedural perception tasks on small rasters. Content pixels are grey and
// live in [0, 0.6]. Markers are drawn at reserved intensities above that
// band and, with color_markers, recolored to one RGB color per label.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latentlab/geometry.hpp"
#include "latentlab/raster.hpp"
#include "latentlab/rng.hpp"
#include "latentlab/vocab.hpp"

namespace latentlab {

enum class TaskKind { counting, localization, jigsaw, reflectance, correspondence };

std::string_view to_string(TaskKind k);
/// Throws ConfigError for unknown names.
TaskKind parse_task_kind(std::string_view s);
const std::vector<TaskKind>& all_task_kinds();
AnswerFormat answer_format(TaskKind k);
/// Number of answer options for MCQ kinds, 0 for counting.
int option_count(TaskKind k);

namespace intensity {
inline constexpr double content_max = 0.6;
inline constexpr double ref = 0.7;
inline constexpr double mark_a = 0.78;
inline constexpr double mark_b = 0.85;
inline constexpr double mark_c = 0.92;
inline constexpr double mark_d = 1.0;
/// Two-label tasks (box outlines, reflectance points).
inline constexpr double pair_a = 0.8;
inline constexpr double pair_b = 1.0;
}  // namespace intensity

struct GenOptions {
  std::size_t raster = 32;
  int count_min = 2;
  int count_max = 10;
  /// Minimum jigsaw distractor-centre distance as a fraction of the canvas diagonal.
  double jigsaw_min_center_frac = 0.25;
  /// Minimum pixel distance between correspondence candidates.
  double correspondence_min_dist = 6.0;
  /// Probability that both reflectance points share one albedo cell.
  double reflectance_same_cell = 0.08;
  /// Localization shape family: "rect", "ellipse" or "mixed".
  std::string localization_shapes = "rect";
  /// Box coordinates are multiples of this many pixels.
  int localization_snap = 4;
  /// Three-channel output with a distinct color per marker label; grayscale otherwise.
  bool color_markers = true;

  std::size_t channels() const { return color_markers ? 3 : 1; }
};

nlohmann::json to_json(const GenOptions& o);
GenOptions gen_options_from_json(const nlohmann::json& j);

using Rgb = std::array<double, 3>;
/// Label colors: A red, B blue, C green, D yellow; REF magenta.
Rgb marker_color(int option);
Rgb ref_color();
/// Grey raster to three channels, recoloring the reserved marker intensities
/// of `kind` and replicating everything else.
Raster colorize(const Raster& grey, TaskKind kind);

struct TaskExample {
  TaskKind kind = TaskKind::counting;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  Raster image;
  std::vector<std::string> prompt;
  Answer answer;
  nlohmann::json meta = nlohmann::json::object();

  std::vector<TokenId> prompt_tokens(const Vocabulary& vocab) const { return encode_symbols(vocab, prompt); }
  std::vector<TokenId> answer_tokens(const Vocabulary& vocab) const { return encode_answer(vocab, answer); }
};

/// Prompt templates, including the tasks that have no generator.
const std::vector<std::string>& prompt_template(std::string_view task);
std::vector<std::string> template_names();

TaskExample gen_counting(Rng& rng, const GenOptions& o);
TaskExample gen_localization(Rng& rng, const GenOptions& o);
TaskExample gen_jigsaw(Rng& rng, const GenOptions& o);
TaskExample gen_reflectance(Rng& rng, const GenOptions& o);
TaskExample gen_correspondence(Rng& rng, const GenOptions& o);

/// Deterministic in (kind, seed, index).
TaskExample generate_example(TaskKind kind, std::uint64_t seed, std::uint64_t index, const GenOptions& o = {});

/// Reflectance labelling rule: 2 ("about the same") when the relative
/// difference is at most 0.10, otherwise the darker point (0 = A, 1 = B).
int reflectance_label(double y_a, double y_b);

/// Smooth texture in [lo, hi] from a handful of random plane waves.
Raster smooth_field(Rng& rng, std::size_t h, std::size_t w, double lo, double hi, int waves = 4);

struct OracleResult {
  bool ok = true;
  std::string detail;
};

/// Re-derives the gold answer and construction constraints from the raster
/// and meta through code independent of the generator.
OracleResult verify_example(const TaskExample& ex, const GenOptions& o = {});

}  // namespace latentlab
