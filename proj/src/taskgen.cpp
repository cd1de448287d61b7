// SPDX-License-Identifier: Apache-2.0
#include "latentlab/taskgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>

#include "latentlab/error.hpp"

namespace latentlab {

namespace {

constexpr int kMaxSceneAttempts = 1000;

const std::array<double, 4> kOptionIntensity = {intensity::mark_a, intensity::mark_b, intensity::mark_c,
                                                intensity::mark_d};
const std::array<double, 2> kPairIntensity = {intensity::pair_a, intensity::pair_b};

std::string letter(int i) { return std::string(1, static_cast<char>('A' + i)); }

[[noreturn]] void give_up(std::string_view what) {
  throw DataError(std::string(what) + ": constraints not satisfiable after " + std::to_string(kMaxSceneAttempts) +
                  " scenes");
}

}  // namespace

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::counting: return "counting";
    case TaskKind::localization: return "localization";
    case TaskKind::jigsaw: return "jigsaw";
    case TaskKind::reflectance: return "reflectance";
    case TaskKind::correspondence: return "correspondence";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view s) {
  for (TaskKind k : all_task_kinds()) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown task: " + std::string(s));
}

const std::vector<TaskKind>& all_task_kinds() {
  static const std::vector<TaskKind> kinds = {TaskKind::counting, TaskKind::localization, TaskKind::jigsaw,
                                              TaskKind::reflectance, TaskKind::correspondence};
  return kinds;
}

AnswerFormat answer_format(TaskKind k) { return k == TaskKind::counting ? AnswerFormat::count : AnswerFormat::option; }

int option_count(TaskKind k) {
  switch (k) {
    case TaskKind::counting: return 0;
    case TaskKind::localization: return 2;
    case TaskKind::jigsaw: return 2;
    case TaskKind::reflectance: return 3;
    case TaskKind::correspondence: return 4;
  }
  return 0;
}

nlohmann::json to_json(const GenOptions& o) {
  return {{"raster", o.raster},
          {"count_min", o.count_min},
          {"count_max", o.count_max},
          {"jigsaw_min_center_frac", o.jigsaw_min_center_frac},
          {"correspondence_min_dist", o.correspondence_min_dist},
          {"reflectance_same_cell", o.reflectance_same_cell},
          {"localization_shapes", o.localization_shapes},
          {"localization_snap", o.localization_snap},
          {"color_markers", o.color_markers}};
}

GenOptions gen_options_from_json(const nlohmann::json& j) {
  GenOptions o;
  o.raster = j.value("raster", o.raster);
  o.count_min = j.value("count_min", o.count_min);
  o.count_max = j.value("count_max", o.count_max);
  o.jigsaw_min_center_frac = j.value("jigsaw_min_center_frac", o.jigsaw_min_center_frac);
  o.correspondence_min_dist = j.value("correspondence_min_dist", o.correspondence_min_dist);
  o.reflectance_same_cell = j.value("reflectance_same_cell", o.reflectance_same_cell);
  o.localization_shapes = j.value("localization_shapes", o.localization_shapes);
  o.localization_snap = j.value("localization_snap", o.localization_snap);
  o.color_markers = j.value("color_markers", o.color_markers);
  if (o.localization_shapes != "rect" && o.localization_shapes != "ellipse" && o.localization_shapes != "mixed") {
    throw ConfigError("localization_shapes must be rect, ellipse or mixed");
  }
  if (o.localization_snap < 1 || o.localization_snap > 4) throw ConfigError("localization_snap must lie in [1, 4]");
  if (o.count_min < 0 || o.count_max < o.count_min || o.count_max > 99) throw ConfigError("bad count range");
  if (o.raster < 24) throw ConfigError("raster must be at least 24 px");
  return o;
}

Rgb marker_color(int option) {
  static constexpr std::array<Rgb, 4> colors = {{{1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, {0.0, 1.0, 0.0}, {1.0, 1.0, 0.0}}};
  if (option < 0 || option > 3) throw ConfigError("marker option out of range: " + std::to_string(option));
  return colors[static_cast<std::size_t>(option)];
}

Rgb ref_color() { return {1.0, 0.0, 1.0}; }

Raster colorize(const Raster& grey, TaskKind kind) {
  if (grey.channels != 1) throw ShapeError("colorize expects a single-channel raster");
  std::vector<std::pair<double, Rgb>> palette;
  if (kind == TaskKind::localization || kind == TaskKind::reflectance) {
    palette = {{intensity::pair_a, marker_color(0)}, {intensity::pair_b, marker_color(1)}};
  } else if (kind == TaskKind::correspondence) {
    palette = {{intensity::ref, ref_color()}};
    for (int l = 0; l < 4; ++l) palette.emplace_back(kOptionIntensity[static_cast<std::size_t>(l)], marker_color(l));
  }
  Raster out(grey.height, grey.width, 3);
  for (std::size_t y = 0; y < grey.height; ++y) {
    for (std::size_t x = 0; x < grey.width; ++x) {
      const double v = grey.at(y, x);
      Rgb c = {v, v, v};
      for (const auto& [level, color] : palette) {
        if (v == level) c = color;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(y, x, ch) = c[ch];
    }
  }
  return out;
}

const std::vector<std::string>& prompt_template(std::string_view task) {
  static const std::map<std::string, std::vector<std::string>, std::less<>> templates = {
      {"counting", {"count", "how", "many", "<shape>", "in", "the", "image", "?"}},
      {"localization", {"localize", "which", "box", "fits", "the", "object", "?", "options", "A", "B"}},
      {"jigsaw", {"jigsaw", "which", "patch", "completes", "the", "image", "?", "options", "A", "B"}},
      {"reflectance", {"reflectance", "which", "point", "is", "darker", "?", "options", "A", "B", "C"}},
      {"correspondence", {"correspondence", "which", "point", "matches", "ref", "?", "options", "A", "B", "C", "D"}},
      {"art_style", {"art_style", "which", "image", "matches", "the", "reference", "style", "?", "options", "A", "B"}},
      {"semantic_correspondence",
       {"semantic_correspondence", "which", "point", "matches", "ref", "?", "options", "A", "B", "C", "D"}},
      {"functional_correspondence",
       {"functional_correspondence", "which", "point", "matches", "the", "action", "?", "options", "A", "B", "C",
        "D"}},
      {"visual_similarity",
       {"visual_similarity", "which", "image", "is", "more", "similar", "?", "options", "A",
        "B"}},
  };
  auto it = templates.find(task);
  if (it == templates.end()) throw ConfigError("no prompt template for " + std::string(task));
  return it->second;
}

std::vector<std::string> template_names() {
  return {"counting", "localization", "jigsaw", "reflectance", "correspondence", "art_style",
          "semantic_correspondence", "functional_correspondence", "visual_similarity"};
}

Raster smooth_field(Rng& rng, std::size_t h, std::size_t w, double lo, double hi, int waves) {
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::vector<Wave> ws;
  for (int i = 0; i < waves; ++i) {
    ws.push_back({rng.uniform(0.5, 1.0), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                  rng.uniform(0.0, 2 * std::numbers::pi)});
  }
  Raster r(h, w);
  double mn = 1e300, mx = -1e300;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double v = 0.0;
      for (const Wave& wv : ws) v += wv.amp * std::sin(wv.kx * static_cast<double>(x) + wv.ky * static_cast<double>(y) + wv.phase);
      r.at(y, x) = v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
  }
  const double span = mx - mn > 1e-12 ? mx - mn : 1.0;
  for (double& v : r.pixels) v = lo + (hi - lo) * (v - mn) / span;
  return r;
}

// ---- counting ----------------------------------------------------------------

TaskExample gen_counting(Rng& rng, const GenOptions& o) {
  const long size = static_cast<long>(o.raster);
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    const int count = static_cast<int>(rng.uniform_int(o.count_min, o.count_max));
    const bool target_square = rng.bernoulli(0.5);
    const int distractors = static_cast<int>(rng.uniform_int(0, 3));
    struct Shape {
      bool square;
      long cx, cy;  // square: top-left; disk: centre
      double size;  // square side or disk radius
      double bx, by, br;  // bounding circle
      double value;
    };
    std::vector<Shape> shapes;
    bool placed_all = true;
    for (int i = 0; i < count + distractors && placed_all; ++i) {
      const bool square = (i < count) == target_square;
      bool placed = false;
      for (int t = 0; t < 300 && !placed; ++t) {
        Shape s{};
        s.square = square;
        s.value = rng.uniform(0.3, intensity::content_max);
        if (square) {
          const long side = rng.uniform_int(3, 4);
          s.size = static_cast<double>(side);
          s.cx = rng.uniform_int(1, size - 1 - side);
          s.cy = rng.uniform_int(1, size - 1 - side);
          s.bx = static_cast<double>(s.cx) + (static_cast<double>(side) - 1) / 2;
          s.by = static_cast<double>(s.cy) + (static_cast<double>(side) - 1) / 2;
          s.br = (static_cast<double>(side) - 1) / 2 * std::numbers::sqrt2;
        } else {
          s.size = rng.bernoulli(0.5) ? 2.0 : 2.5;
          s.cx = rng.uniform_int(3, size - 4);
          s.cy = rng.uniform_int(3, size - 4);
          s.bx = static_cast<double>(s.cx);
          s.by = static_cast<double>(s.cy);
          s.br = s.size;
        }
        bool clear = true;
        for (const Shape& p : shapes) {
          if (std::hypot(p.bx - s.bx, p.by - s.by) < p.br + s.br + 1.5) {
            clear = false;
            break;
          }
        }
        if (clear) {
          shapes.push_back(s);
          placed = true;
        }
      }
      placed_all = placed;
    }
    if (!placed_all) continue;

    TaskExample ex;
    ex.kind = TaskKind::counting;
    ex.image = Raster(o.raster, o.raster);
    nlohmann::json jshapes = nlohmann::json::array();
    for (const Shape& s : shapes) {
      if (s.square) {
        const long side = static_cast<long>(s.size);
        fill_rect(ex.image, s.cy, s.cx, s.cy + side, s.cx + side, s.value);
      } else {
        fill_disk(ex.image, static_cast<double>(s.cy), static_cast<double>(s.cx), s.size, s.value);
      }
      jshapes.push_back({{"kind", s.square ? "square" : "disk"}, {"x", s.cx}, {"y", s.cy}, {"size", s.size}});
    }
    ex.prompt = prompt_template("counting");
    std::replace(ex.prompt.begin(), ex.prompt.end(), std::string("<shape>"),
                 std::string(target_square ? "square" : "disk"));
    ex.answer = Answer::count(count);
    ex.meta = {{"target", target_square ? "square" : "disk"}, {"count", count}, {"shapes", jshapes}};
    return ex;
  }
  give_up("counting");
}

// ---- localization ------------------------------------------------------------

namespace {

struct LocShape {
  bool ellipse = false;
  Box rect;
  double cx = 0, cy = 0, rx = 0, ry = 0;

  bool covers(int x, int y) const {
    if (!ellipse) return x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1;
    const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

Box tight_bounds(const LocShape& s, int size) {
  Box b{size, size, 0, 0};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      if (!s.covers(x, y)) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  }
  return b;
}

bool inside_margin(const Box& b, int size) { return b.x0 >= 1 && b.y0 >= 1 && b.x1 <= size - 1 && b.y1 <= size - 1; }

}  // namespace

TaskExample gen_localization(Rng& rng, const GenOptions& o) {
  const int size = static_cast<int>(o.raster);
  const double total = static_cast<double>(size) * size;
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    LocShape shape;
    shape.ellipse = o.localization_shapes == "mixed" ? rng.bernoulli(0.5) : o.localization_shapes == "ellipse";
    const int snap = o.localization_snap;
    const auto snapped = [snap](int v) { return v / snap * snap; };
    const int w = snapped(static_cast<int>(rng.uniform_int(size / 4, size * 11 / 16)));
    const int h = snapped(static_cast<int>(rng.uniform_int(size / 4, size * 11 / 16)));
    const int x0 = std::max(snap, snapped(static_cast<int>(rng.uniform_int(1, size - 1 - w))));
    const int y0 = std::max(snap, snapped(static_cast<int>(rng.uniform_int(1, size - 1 - h))));
    shape.rect = Box{x0, y0, x0 + w, y0 + h};
    shape.cx = x0 + w / 2.0;
    shape.cy = y0 + h / 2.0;
    shape.rx = w / 2.0;
    shape.ry = h / 2.0;
    const Box gold = tight_bounds(shape, size);
    const double frac = static_cast<double>(gold.area()) / total;
    if (!gold.valid_within(size, size) || !inside_margin(gold, size) || frac < 0.15 || frac > 0.5) continue;

    const int jitter = std::max(3, std::max(gold.width(), gold.height()) / 2);
    std::optional<Box> distractor;
    for (int t = 0; t < 500 && !distractor; ++t) {
      const auto jit = [&](int v) { return v + snapped(static_cast<int>(rng.uniform_int(-jitter, jitter))); };
      Box d{jit(gold.x0), jit(gold.y0), jit(gold.x1), jit(gold.y1)};
      if (d.width() < 3 || d.height() < 3 || !inside_margin(d, size)) continue;
      const double v = iou(gold, d);
      if (v >= 0.2 && v <= 0.5) distractor = d;
    }
    if (!distractor) continue;

    TaskExample ex;
    ex.kind = TaskKind::localization;
    ex.image = Raster(o.raster, o.raster);
    const double value = rng.uniform(0.3, intensity::content_max);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (shape.covers(x, y)) ex.image.put(y, x, value);
      }
    }
    const int gold_letter = static_cast<int>(rng.uniform_int(0, 1));
    std::array<Box, 2> boxes;
    boxes[static_cast<std::size_t>(gold_letter)] = gold;
    boxes[static_cast<std::size_t>(1 - gold_letter)] = *distractor;
    for (int i = 0; i < 2; ++i) {
      const Box& b = boxes[static_cast<std::size_t>(i)];
      outline_rect(ex.image, b.y0 - 1, b.x0 - 1, b.y1 + 1, b.x1 + 1, kPairIntensity[static_cast<std::size_t>(i)]);
    }
    ex.prompt = prompt_template("localization");
    ex.answer = Answer::option(gold_letter);
    nlohmann::json jshape;
    if (shape.ellipse) {
      jshape = {{"type", "ellipse"}, {"cx", shape.cx}, {"cy", shape.cy}, {"rx", shape.rx}, {"ry", shape.ry}};
    } else {
      jshape = {{"type", "rect"}, {"box", shape.rect}};
    }
    ex.meta = {{"shape", jshape}, {"boxes", {{"A", boxes[0]}, {"B", boxes[1]}}}, {"gold", gold},
               {"distractor", *distractor}};
    return ex;
  }
  give_up("localization");
}

// ---- jigsaw ------------------------------------------------------------------

namespace {

Raster jigsaw_canvas(std::uint64_t canvas_seed, std::size_t h, std::size_t w) {
  Rng rng(canvas_seed);
  Raster c = smooth_field(rng, h, w, 0.05, 0.45, 5);
  for (int i = 0; i < 4; ++i) {
    const long y0 = rng.uniform_int(0, static_cast<long>(h) - 3), x0 = rng.uniform_int(0, static_cast<long>(w) - 3);
    const long rh = rng.uniform_int(2, 6), rw = rng.uniform_int(2, 8);
    fill_rect(c, y0, x0, y0 + rh, x0 + rw, rng.uniform(0.1, intensity::content_max));
  }
  return c;
}

}  // namespace

TaskExample gen_jigsaw(Rng& rng, const GenOptions& o) {
  const int w = static_cast<int>(o.raster);
  const int h_lo = static_cast<int>(std::ceil(0.425 * w / 2.0)), h_hi = static_cast<int>(std::floor(0.575 * w / 2.0));
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    const int h = 2 * static_cast<int>(rng.uniform_int(h_lo, h_hi));
    const int qh = h / 2, qw = w / 2;
    const std::uint64_t canvas_seed = rng.next_u64();
    const Raster canvas = jigsaw_canvas(canvas_seed, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    const Box gold{qw, qh, w, h};
    const double min_dist = o.jigsaw_min_center_frac * std::hypot(w, h);
    std::vector<Box> candidates;
    for (int y = 0; y + qh <= h; ++y) {
      for (int x = 0; x + qw <= w; ++x) {
        const Box b{x, y, x + qw, y + qh};
        if (intersection_area(b, gold) > 0) continue;
        if (std::hypot(b.center_x() - gold.center_x(), b.center_y() - gold.center_y()) < min_dist) continue;
        candidates.push_back(b);
      }
    }
    if (candidates.empty()) continue;
    const Box distractor = candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(candidates.size()) - 1))];
    const int gold_slot = static_cast<int>(rng.uniform_int(0, 1));

    TaskExample ex;
    ex.kind = TaskKind::jigsaw;
    ex.image = Raster(o.raster, o.raster);
    Raster masked = canvas;
    fill_rect(masked, gold.y0, gold.x0, gold.y1, gold.x1, 0.0);
    paste(ex.image, masked, 0, 0);
    const long row = h + 1;
    const Raster gold_patch = crop(canvas, static_cast<std::size_t>(gold.y0), static_cast<std::size_t>(gold.x0),
                                   static_cast<std::size_t>(qh), static_cast<std::size_t>(qw));
    const Raster other = crop(canvas, static_cast<std::size_t>(distractor.y0), static_cast<std::size_t>(distractor.x0),
                              static_cast<std::size_t>(qh), static_cast<std::size_t>(qw));
    paste(ex.image, gold_slot == 0 ? gold_patch : other, row, 0);
    paste(ex.image, gold_slot == 0 ? other : gold_patch, row, qw);
    ex.prompt = prompt_template("jigsaw");
    ex.answer = Answer::option(gold_slot);
    ex.meta = {{"canvas_height", h}, {"canvas_width", w}, {"canvas_seed", canvas_seed}, {"gold", gold},
               {"distractor", distractor}, {"options_row", row}, {"min_center_dist", min_dist}};
    return ex;
  }
  give_up("jigsaw");
}

// ---- reflectance -------------------------------------------------------------

int reflectance_label(double y_a, double y_b) {
  const double rel = std::abs(y_a - y_b) / std::max({y_a, y_b, 1e-8});
  if (rel <= 0.10) return 2;
  return y_a < y_b ? 0 : 1;
}

namespace {

struct Cell {
  double x, y, albedo;
};

std::size_t nearest_cell(const std::vector<Cell>& cells, double x, double y) {
  std::size_t best = 0;
  double best_d = 1e300;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const double d = (cells[i].x - x) * (cells[i].x - x) + (cells[i].y - y) * (cells[i].y - y);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

const std::array<std::pair<int, int>, 9> kDisk = {
    {{0, 0}, {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};

}  // namespace

TaskExample gen_reflectance(Rng& rng, const GenOptions& o) {
  const int size = static_cast<int>(o.raster);
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    std::vector<Cell> cells(static_cast<std::size_t>(rng.uniform_int(5, 9)));
    for (Cell& c : cells) c = {rng.uniform(0.0, size), rng.uniform(0.0, size), rng.uniform(0.15, intensity::content_max)};
    const Raster shading = smooth_field(rng, o.raster, o.raster, 0.55, 1.0, 2);
    std::vector<std::size_t> owner(static_cast<std::size_t>(size * size));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) owner[static_cast<std::size_t>(y * size + x)] = nearest_cell(cells, x, y);
    }
    auto disk_owner = [&](int px, int py) -> std::optional<std::size_t> {
      const std::size_t c0 = owner[static_cast<std::size_t>(py * size + px)];
      for (auto [dx, dy] : kDisk) {
        if (owner[static_cast<std::size_t>((py + dy) * size + px + dx)] != c0) return std::nullopt;
      }
      return c0;
    };
    auto disk_mean = [&](int px, int py) {
      double s = 0.0;
      for (auto [dx, dy] : kDisk) s += cells[owner[static_cast<std::size_t>((py + dy) * size + px + dx)]].albedo;
      return s / static_cast<double>(kDisk.size());
    };
    const bool same = rng.bernoulli(o.reflectance_same_cell);
    const int lo = 4, hi = size - 5;
    std::optional<std::pair<int, int>> pa, pb;
    for (int t = 0; t < 300 && !pb; ++t) {
      const int ax = static_cast<int>(rng.uniform_int(lo, hi)), ay = static_cast<int>(rng.uniform_int(lo, hi));
      const int bx = static_cast<int>(rng.uniform_int(lo, hi)), by = static_cast<int>(rng.uniform_int(lo, hi));
      if (std::max(std::abs(ax - bx), std::abs(ay - by)) < 8) continue;
      if (same) {
        const auto oa = disk_owner(ax, ay), ob = disk_owner(bx, by);
        if (!oa || !ob || *oa != *ob) continue;
      }
      pa = {ax, ay};
      pb = {bx, by};
    }
    if (!pb) continue;
    const double y_a = disk_mean(pa->first, pa->second), y_b = disk_mean(pb->first, pb->second);
    if (std::max(y_a, y_b) < 1e-8) continue;

    TaskExample ex;
    ex.kind = TaskKind::reflectance;
    ex.image = Raster(o.raster, o.raster);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        ex.image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
            cells[owner[static_cast<std::size_t>(y * size + x)]].albedo * shading.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      }
    }
    draw_ring(ex.image, pa->second, pa->first, 3, intensity::pair_a);
    draw_ring(ex.image, pb->second, pb->first, 3, intensity::pair_b);
    ex.prompt = prompt_template("reflectance");
    ex.answer = Answer::option(reflectance_label(y_a, y_b));
    nlohmann::json jcells = nlohmann::json::array();
    for (const Cell& c : cells) jcells.push_back({c.x, c.y, c.albedo});
    ex.meta = {{"cells", jcells}, {"a", {pa->first, pa->second}}, {"b", {pb->first, pb->second}}, {"y_a", y_a},
               {"y_b", y_b}, {"same_cell_forced", same}};
    return ex;
  }
  give_up("reflectance");
}

// ---- correspondence ----------------------------------------------------------

TaskExample gen_correspondence(Rng& rng, const GenOptions& o) {
  const int size = static_cast<int>(o.raster);
  const double c = size / 2.0;
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    Raster src = smooth_field(rng, o.raster, o.raster, 0.05, 0.4, 6);
    for (int i = 0; i < 5; ++i) {
      fill_disk(src, rng.uniform(2, size - 3), rng.uniform(2, size - 3), rng.uniform(1.5, 3.5),
                rng.uniform(0.1, intensity::content_max));
    }
    const Homography hmg = Homography::about_center(
        c, c, rng.uniform(-0.35, 0.35), rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15), rng.uniform(-0.15, 0.15),
        rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-0.003, 0.003), rng.uniform(-0.003, 0.003));
    const Homography inv = hmg.inverse();

    std::optional<Point> ref, truth;
    for (int t = 0; t < 100 && !truth; ++t) {
      const Point r{static_cast<double>(rng.uniform_int(5, size - 6)), static_cast<double>(rng.uniform_int(5, size - 6))};
      const Point m = hmg.apply(r);
      if (m.x < 4 || m.y < 4 || m.x > size - 5 || m.y > size - 5) continue;
      ref = r;
      truth = Point{std::round(m.x), std::round(m.y)};
    }
    if (!truth) continue;
    std::vector<Point> points{*truth};
    for (int t = 0; t < 500 && points.size() < 4; ++t) {
      const Point p{static_cast<double>(rng.uniform_int(3, size - 4)), static_cast<double>(rng.uniform_int(3, size - 4))};
      bool ok = true;
      for (const Point& q : points) ok = ok && distance(p, q) >= o.correspondence_min_dist;
      if (ok) points.push_back(p);
    }
    if (points.size() < 4) continue;

    Raster tgt(o.raster, o.raster);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const Point s = inv.apply({static_cast<double>(x), static_cast<double>(y)});
        tgt.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = std::min(sample_bilinear(src, s.y, s.x), intensity::content_max);
      }
    }
    std::vector<int> perm = {0, 1, 2, 3};
    rng.shuffle(perm);
    std::array<Point, 4> by_letter;
    for (std::size_t i = 0; i < 4; ++i) by_letter[static_cast<std::size_t>(perm[i])] = points[i];
    draw_ring(src, static_cast<long>(ref->y), static_cast<long>(ref->x), 2, intensity::ref);
    for (std::size_t l = 0; l < 4; ++l) {
      draw_ring(tgt, static_cast<long>(by_letter[l].y), static_cast<long>(by_letter[l].x), 2, kOptionIntensity[l]);
    }

    TaskExample ex;
    ex.kind = TaskKind::correspondence;
    ex.image = hconcat(src, tgt);
    ex.prompt = prompt_template("correspondence");
    ex.answer = Answer::option(perm[0]);
    nlohmann::json cands;
    for (std::size_t l = 0; l < 4; ++l) cands[letter(static_cast<int>(l))] = by_letter[l];
    ex.meta = {{"homography", hmg.matrix()}, {"ref", *ref}, {"candidates", cands}, {"panel_width", size},
               {"min_dist", o.correspondence_min_dist}};
    return ex;
  }
  give_up("correspondence");
}

TaskExample generate_example(TaskKind kind, std::uint64_t seed, std::uint64_t index, const GenOptions& o) {
  Rng rng(seed, "datagen", {static_cast<std::uint64_t>(kind), index});
  TaskExample ex;
  switch (kind) {
    case TaskKind::counting: ex = gen_counting(rng, o); break;
    case TaskKind::localization: ex = gen_localization(rng, o); break;
    case TaskKind::jigsaw: ex = gen_jigsaw(rng, o); break;
    case TaskKind::reflectance: ex = gen_reflectance(rng, o); break;
    case TaskKind::correspondence: ex = gen_correspondence(rng, o); break;
  }
  ex.kind = kind;
  ex.seed = seed;
  ex.index = index;
  if (o.color_markers) ex.image = colorize(ex.image, kind);
  return ex;
}

// ---- oracles -----------------------------------------------------------------

namespace {

OracleResult fail(std::string detail) { return {false, std::move(detail)}; }

OracleResult verify_counting(const TaskExample& ex, const GenOptions& o) {
  const Raster& r = ex.image;
  const long h = static_cast<long>(r.height), w = static_cast<long>(r.width);
  std::vector<int> label(static_cast<std::size_t>(h * w), -1);
  int squares = 0, disks = 0;
  std::vector<std::pair<long, long>> stack;
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (r.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) <= 0.0 || label[static_cast<std::size_t>(y * w + x)] >= 0) continue;
      long n = 0, x0 = x, x1 = x, y0 = y, y1 = y;
      stack.assign(1, {y, x});
      label[static_cast<std::size_t>(y * w + x)] = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        ++n;
        x0 = std::min(x0, cx), x1 = std::max(x1, cx), y0 = std::min(y0, cy), y1 = std::max(y1, cy);
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            const long ny = cy + dy, nx = cx + dx;
            if (!r.in_bounds(ny, nx) || label[static_cast<std::size_t>(ny * w + nx)] >= 0) continue;
            if (r.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx)) <= 0.0) continue;
            label[static_cast<std::size_t>(ny * w + nx)] = 1;
            stack.emplace_back(ny, nx);
          }
        }
      }
      const long bw = x1 - x0 + 1, bh = y1 - y0 + 1;
      if (n == bw * bh && bw == bh) {
        ++squares;
      } else {
        ++disks;
      }
    }
  }
  const std::string target = ex.meta.at("target").get<std::string>();
  const int found = target == "square" ? squares : disks;
  if (ex.answer.format != AnswerFormat::count) return fail("counting answer is not a count");
  if (found != ex.answer.value) {
    return fail("flood fill found " + std::to_string(found) + " " + target + "s, answer " + std::to_string(ex.answer.value));
  }
  if (found < o.count_min || found > o.count_max) return fail("count outside configured range");
  return {};
}

OracleResult verify_localization(const TaskExample& ex, const GenOptions&) {
  const auto& js = ex.meta.at("shape");
  const int size = static_cast<int>(ex.image.width);
  Box bounds{size, size, 0, 0};
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      bool in;
      if (js.at("type") == "rect") {
        const Box b = js.at("box").get<Box>();
        in = x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
      } else {
        const double dx = (x + 0.5 - js.at("cx").get<double>()) / js.at("rx").get<double>();
        const double dy = (y + 0.5 - js.at("cy").get<double>()) / js.at("ry").get<double>();
        in = dx * dx + dy * dy <= 1.0;
      }
      if (!in) continue;
      bounds.x0 = std::min(bounds.x0, x), bounds.y0 = std::min(bounds.y0, y);
      bounds.x1 = std::max(bounds.x1, x + 1), bounds.y1 = std::max(bounds.y1, y + 1);
    }
  }
  const Box a = ex.meta.at("boxes").at("A").get<Box>(), b = ex.meta.at("boxes").at("B").get<Box>();
  const Box& claimed = ex.answer.value == 0 ? a : b;
  const Box& other = ex.answer.value == 0 ? b : a;
  if (!(claimed == bounds)) return fail("answer box is not the shape's tight bounds");
  const double v = iou(claimed, other);
  if (v < 0.2 || v > 0.5) return fail("distractor IoU " + std::to_string(v) + " outside [0.2, 0.5]");
  const double frac = static_cast<double>(bounds.area()) / (static_cast<double>(size) * size);
  if (frac < 0.15 || frac > 0.5) return fail("gold area fraction outside [0.15, 0.5]");
  return {};
}

OracleResult verify_jigsaw(const TaskExample& ex, const GenOptions& o) {
  const Box gold = ex.meta.at("gold").get<Box>(), dis = ex.meta.at("distractor").get<Box>();
  const int h = ex.meta.at("canvas_height").get<int>(), w = ex.meta.at("canvas_width").get<int>();
  const long row = ex.meta.at("options_row").get<long>();
  if (!(gold == Box{w / 2, h / 2, w, h})) return fail("gold region is not the bottom-right quadrant");
  if (intersection_area(gold, dis) != 0) return fail("distractor overlaps the gold quadrant");
  if (!dis.valid_within(w, h)) return fail("distractor outside canvas");
  if (std::hypot(dis.center_x() - gold.center_x(), dis.center_y() - gold.center_y()) <
      o.jigsaw_min_center_frac * std::hypot(w, h)) {
    return fail("distractor centre too close");
  }
  for (int y = gold.y0; y < gold.y1; ++y) {
    for (int x = gold.x0; x < gold.x1; ++x) {
      if (ex.image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0.0) return fail("masked quadrant not zero");
    }
  }
  const Raster canvas = jigsaw_canvas(ex.meta.at("canvas_seed").get<std::uint64_t>(), static_cast<std::size_t>(h),
                                      static_cast<std::size_t>(w));
  const int gold_slot = ex.answer.value;
  for (int slot = 0; slot < 2; ++slot) {
    const Box& src = slot == gold_slot ? gold : dis;
    for (int y = 0; y < src.height(); ++y) {
      for (int x = 0; x < src.width(); ++x) {
        const double shown = ex.image.at(static_cast<std::size_t>(row + y), static_cast<std::size_t>(slot * (w / 2) + x));
        const double want = canvas.at(static_cast<std::size_t>(src.y0 + y), static_cast<std::size_t>(src.x0 + x));
        if (shown != want) return fail("option " + letter(slot) + " pixels differ from canvas content");
      }
    }
  }
  return {};
}

OracleResult verify_reflectance(const TaskExample& ex, const GenOptions&) {
  std::vector<std::array<double, 3>> cells;
  for (const auto& c : ex.meta.at("cells")) cells.push_back({c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()});
  auto albedo = [&](int x, int y) {
    double best = 1e300, value = 0.0;
    for (const auto& c : cells) {
      const double d = std::hypot(c[0] - x, c[1] - y);
      if (d < best) best = d, value = c[2];
    }
    return value;
  };
  auto luminance = [&](const nlohmann::json& p) {
    const int px = p.at(0).get<int>(), py = p.at(1).get<int>();
    double s = 0.0;
    int n = 0;
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        if (dx * dx + dy * dy > 2.25) continue;
        s += albedo(px + dx, py + dy);
        ++n;
      }
    }
    return s / n;
  };
  const double ya = luminance(ex.meta.at("a")), yb = luminance(ex.meta.at("b"));
  const double rel = std::abs(ya - yb) / std::max({ya, yb, 1e-8});
  const int expected = rel <= 0.10 ? 2 : (ya < yb ? 0 : 1);
  if (expected != ex.answer.value) {
    return fail("rel=" + std::to_string(rel) + " implies " + letter(expected) + ", answer " + ex.answer.text());
  }
  return {};
}

OracleResult verify_correspondence(const TaskExample& ex, const GenOptions& o) {
  const auto m = ex.meta.at("homography").get<std::vector<double>>();
  const double rx = ex.meta.at("ref").at(0).get<double>(), ry = ex.meta.at("ref").at(1).get<double>();
  const double wz = m[6] * rx + m[7] * ry + m[8];
  const double tx = (m[0] * rx + m[1] * ry + m[2]) / wz, ty = (m[3] * rx + m[4] * ry + m[5]) / wz;
  const auto& cands = ex.meta.at("candidates");
  const std::size_t pw = ex.meta.at("panel_width").get<std::size_t>();
  std::vector<std::pair<double, double>> pts;
  for (int l = 0; l < 4; ++l) {
    const auto& p = cands.at(letter(l));
    pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    const long cx = static_cast<long>(pts.back().first), cy = static_cast<long>(pts.back().second);
    const std::size_t my = static_cast<std::size_t>(cy - 2), mx = pw + static_cast<std::size_t>(cx);
    bool rendered;
    if (ex.image.channels == 3) {
      const Rgb want = marker_color(l);
      rendered = ex.image.at(my, mx, 0) == want[0] && ex.image.at(my, mx, 1) == want[1] && ex.image.at(my, mx, 2) == want[2];
    } else {
      rendered = ex.image.at(my, mx) == kOptionIntensity[static_cast<std::size_t>(l)];
    }
    if (!rendered) return fail("marker " + letter(l) + " not rendered at its candidate");
  }
  const auto [gx, gy] = pts[static_cast<std::size_t>(ex.answer.value)];
  if (std::hypot(gx - tx, gy - ty) > 1.0) return fail("answer candidate is not the warped reference point");
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      if (std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second) < o.correspondence_min_dist) {
        return fail("candidates closer than the minimum distance");
      }
    }
  }
  return {};
}

}  // namespace

OracleResult verify_example(const TaskExample& ex, const GenOptions& o) {
  try {
    if (ex.answer.format != answer_format(ex.kind)) return fail("answer format does not match task");
    if (ex.image.channels != o.channels()) return fail("raster channel count does not match the options");
    if (ex.answer.format == AnswerFormat::option && (ex.answer.value < 0 || ex.answer.value >= option_count(ex.kind))) {
      return fail("option out of range");
    }
    switch (ex.kind) {
      case TaskKind::counting: return verify_counting(ex, o);
      case TaskKind::localization: return verify_localization(ex, o);
      case TaskKind::jigsaw: return verify_jigsaw(ex, o);
      case TaskKind::reflectance: return verify_reflectance(ex, o);
      case TaskKind::correspondence: return verify_correspondence(ex, o);
    }
  } catch (const nlohmann::json::exception& e) {
    return fail(std::string("malformed meta: ") + e.what());
  }
  return fail("unknown kind");
}

}  // namespace latentlab
