#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxquery/clickcost.hpp"
#include "boxquery/core.hpp"
#include "boxquery/formats.hpp"
#include "boxquery/segmentation.hpp"

namespace boxquery {

/// Parameters of the synthetic scene generator: convex polygon shapes of
/// random non-background classes over a class-0 background, exact polygon
/// ground truth, per-pixel Gaussian color noise.
struct SceneSpec {
  int height = 128;
  int width = 128;
  int classes = 5;  // class 0 = background
  int shapes_min = 1;
  int shapes_max = 4;
  int vert_min = 3;
  int vert_max = 10;
  double color_noise = 0.08;  // std as a fraction of dynamic range
  std::uint64_t seed = 0;
};

struct Scene {
  ImageRGB image;
  SegMask mask;
  std::vector<Polygon> polygons;  // as an annotator would click: background border
                                  // polygon first, then visible shape vertices
  std::vector<Polygon> shapes;    // unclipped shapes in stacking order (for oracles)
};

/// Base colors: well-separated hues at full saturation, darkened background.
inline std::array<std::uint8_t, 3> class_color(int cls, int classes) {
  if (cls == 0) return {40, 40, 48};
  const double hue = std::fmod(0.137 + static_cast<double>(cls - 1) / (classes - 1) * 0.93, 1.0);
  const double h6 = hue * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double v = 0.9, s = 0.85;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r, g, b;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  return {static_cast<std::uint8_t>(std::lround(r * 255)),
          static_cast<std::uint8_t>(std::lround(g * 255)),
          static_cast<std::uint8_t>(std::lround(b * 255))};
}

/// Even-odd crossing test against the +x ray, half-open in y so that shared
/// edges are counted once.
inline bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2& a = ring[j];
    const Vec2& b = ring[i];
    if ((b.y > p.y) != (a.y > p.y)) {
      const double xint = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

namespace detail {

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

/// Convex polygon as an inscribed ellipse polygon: sorted angles with a
/// minimum gap, per-axis radii, random rotation. Vertices are rounded to two
/// decimals so the JSONL round trip is exact.
inline std::vector<Vec2> random_convex_polygon(Rng& rng, const SceneSpec& spec) {
  const double dim = std::min(spec.height, spec.width);
  const double r_hi = dim * 0.28;
  const double r_lo = dim * 0.08;
  const double rx = rng.uniform(r_lo, r_hi);
  const double ry = rng.uniform(r_lo, r_hi);
  const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double bound = std::max(rx, ry);
  const double cx = rng.uniform(bound + 1.5, spec.width - 2.5 - bound);
  const double cy = rng.uniform(bound + 1.5, spec.height - 2.5 - bound);
  const int k = static_cast<int>(rng.uniform_int(spec.vert_min, spec.vert_max));

  std::vector<double> angles(static_cast<std::size_t>(k));
  const double min_gap = 2.0 * 3.14159265358979323846 / (3.0 * k);
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    std::sort(angles.begin(), angles.end());
    bool ok = true;
    for (std::size_t i = 0; i + 1 < angles.size(); ++i)
      if (angles[i + 1] - angles[i] < min_gap) ok = false;
    if (angles.front() + 2.0 * 3.14159265358979323846 - angles.back() < min_gap) ok = false;
    if (ok) break;
    if (attempt == 63)
      for (std::size_t i = 0; i < angles.size(); ++i)
        angles[i] = 2.0 * 3.14159265358979323846 * (static_cast<double>(i) + 0.5) / k;
  }

  const double ct = std::cos(theta), st = std::sin(theta);
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(k));
  for (double a : angles) {
    const double ex = rx * std::cos(a);
    const double ey = ry * std::sin(a);
    out.push_back({round2(cx + ex * ct - ey * st), round2(cy + ex * st + ey * ct)});
  }
  return out;
}

}  // namespace detail

/// Deterministic scene: same (spec, index) gives bit-identical output. Later
/// shapes occlude earlier ones; emitted polygons keep only the vertices still
/// visible, since occlusion boundaries are clicked once, by the occluder.
inline Scene generate_scene(const SceneSpec& spec, int index, const std::string& image_id = "",
                            int forced_class = -1) {
  if (spec.classes < 2) throw std::invalid_argument("generate_scene: classes must be >= 2");
  if (spec.vert_min < 3) throw std::invalid_argument("generate_scene: vert_min must be >= 3");
  const std::string id =
      image_id.empty() ? "scene_" + std::to_string(index) : image_id;
  Rng rng(derive_seed(spec.seed, {0x7363656eull, static_cast<std::uint64_t>(index)}));

  Scene scene;
  int n_shapes = static_cast<int>(rng.uniform_int(spec.shapes_min, spec.shapes_max));
  if (forced_class > 0) n_shapes = std::max(n_shapes, 1);
  for (int s = 0; s < n_shapes; ++s) {
    Polygon poly;
    poly.image_id = id;
    poly.cls = (s == 0 && forced_class > 0)
                   ? forced_class
                   : static_cast<int>(rng.uniform_int(1, spec.classes - 1));
    poly.vertices = detail::random_convex_polygon(rng, spec);
    scene.shapes.push_back(std::move(poly));
  }

  // Rasterize by the painter's rule: each pixel center takes the last shape
  // containing it.
  scene.mask = SegMask(spec.height, spec.width, 0);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const Vec2 center{static_cast<double>(c), static_cast<double>(r)};
      for (std::size_t s = scene.shapes.size(); s-- > 0;) {
        if (point_in_polygon(center, scene.shapes[s].vertices)) {
          scene.mask.at(r, c) = static_cast<std::uint16_t>(scene.shapes[s].cls);
          break;
        }
      }
    }
  }

  // Emitted ground truth: the background border polygon, then each shape's
  // visible vertices. Fully hidden shapes (or those left with fewer than 3
  // visible vertices) are not clickable and are dropped.
  Polygon border;
  border.image_id = id;
  border.cls = 0;
  border.vertices = {{0.0, 0.0},
                     {static_cast<double>(spec.width - 1), 0.0},
                     {static_cast<double>(spec.width - 1), static_cast<double>(spec.height - 1)},
                     {0.0, static_cast<double>(spec.height - 1)}};
  scene.polygons.push_back(std::move(border));
  std::vector<std::int64_t> visible_px(scene.shapes.size(), 0);
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const Vec2 center{static_cast<double>(c), static_cast<double>(r)};
      for (std::size_t s = scene.shapes.size(); s-- > 0;) {
        if (point_in_polygon(center, scene.shapes[s].vertices)) {
          ++visible_px[s];
          break;
        }
      }
    }
  }
  for (std::size_t s = 0; s < scene.shapes.size(); ++s) {
    if (visible_px[s] == 0) continue;
    Polygon clipped;
    clipped.image_id = id;
    clipped.cls = scene.shapes[s].cls;
    for (const auto& v : scene.shapes[s].vertices) {
      bool hidden = false;
      for (std::size_t t = s + 1; t < scene.shapes.size() && !hidden; ++t)
        hidden = point_in_polygon(v, scene.shapes[t].vertices);
      if (!hidden) clipped.vertices.push_back(v);
    }
    if (clipped.vertices.size() >= 3) scene.polygons.push_back(std::move(clipped));
  }

  // Color rendering: class base color plus Gaussian noise.
  scene.image = ImageRGB(spec.height, spec.width);
  const double noise_std = spec.color_noise * 255.0;
  for (int r = 0; r < spec.height; ++r) {
    for (int c = 0; c < spec.width; ++c) {
      const auto base = class_color(scene.mask.at(r, c), spec.classes);
      std::uint8_t* px = scene.image.pixel(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = base[static_cast<std::size_t>(ch)] + rng.normal() * noise_std;
        px[ch] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v)), 0, 255));
      }
    }
  }
  return scene;
}

struct DatasetStats {
  int images = 0;
  int height = 0;
  int width = 0;
  int classes = 0;
  std::int64_t c_p = 0;  // total polygon clicks over all emitted polygons
  std::int64_t c_c = 0;  // total class clicks (= mask segments)
  std::int64_t total_pixels = 0;
};

namespace detail {

inline DatasetStats write_split(const SceneSpec& split_spec, int count, const std::string& prefix,
                                const std::filesystem::path& dir, bool enforce_class_coverage) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");

  std::vector<Scene> scenes(static_cast<std::size_t>(count));
  const auto make_id = [&](int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%05d", prefix.c_str(), i);
    return std::string(buf);
  };
  for (int i = 0; i < count; ++i)
    scenes[static_cast<std::size_t>(i)] = generate_scene(split_spec, i, make_id(i));

  if (enforce_class_coverage) {
    // Resample scenes (deterministically) until every non-background class
    // appears somewhere in the split.
    for (int attempt = 1; attempt <= 1000; ++attempt) {
      std::vector<bool> present(static_cast<std::size_t>(split_spec.classes), false);
      for (const auto& sc : scenes)
        for (auto v : sc.mask.ids) present[v] = true;
      int missing = -1;
      for (int k = 1; k < split_spec.classes; ++k)
        if (!present[static_cast<std::size_t>(k)]) missing = k;
      if (missing < 0) break;
      const int idx = (attempt - 1) % count;
      scenes[static_cast<std::size_t>(idx)] =
          generate_scene(split_spec, idx + attempt * count, make_id(idx), missing);
      if (attempt == 1000) throw std::runtime_error("generate_dataset: class coverage failed");
    }
  }

  DatasetStats stats;
  stats.images = count;
  stats.height = split_spec.height;
  stats.width = split_spec.width;
  stats.classes = split_spec.classes;
  std::ofstream manifest(dir / "manifest.txt");
  std::ofstream jsonl(dir / "polygons.jsonl", std::ios::binary);
  if (!manifest || !jsonl) throw io_error("generate_dataset: cannot write to " + dir.string());
  for (int i = 0; i < count; ++i) {
    const Scene& sc = scenes[static_cast<std::size_t>(i)];
    const std::string id = make_id(i);
    save_image_ppm(sc.image, dir / "images" / (id + ".ppm"));
    save_mask_pgm(sc.mask, dir / "masks" / (id + ".pgm"));
    write_polygons_jsonl(sc.polygons, jsonl);
    manifest << "images/" << id << ".ppm\n";
    for (const auto& poly : sc.polygons)
      stats.c_p += static_cast<std::int64_t>(poly.vertices.size());
    stats.c_c += label_components(sc.mask).count;
    stats.total_pixels += static_cast<std::int64_t>(split_spec.height) * split_spec.width;
  }
  nlohmann::json j{{"images", stats.images},   {"height", stats.height},
                   {"width", stats.width},     {"classes", stats.classes},
                   {"c_p", stats.c_p},         {"c_c", stats.c_c},
                   {"total_pixels", stats.total_pixels}};
  std::ofstream stats_os(dir / "stats.json");
  stats_os << j.dump(2) << "\n";
  return stats;
}

}  // namespace detail

/// Write a pool and a validation split (images, masks, polygons, manifest,
/// stats) under out_dir. Returns the pool stats, whose c_p / c_c become the
/// ledger's dataset totals.
inline DatasetStats generate_dataset(const SceneSpec& spec, int n_pool, int n_val,
                                     const std::filesystem::path& out_dir) {
  if (n_pool < 1 || n_val < 1)
    throw std::invalid_argument("generate_dataset: n_pool and n_val must be >= 1");
  SceneSpec pool_spec = spec;
  pool_spec.seed = derive_seed(spec.seed, {0x706f6f6cull});
  SceneSpec val_spec = spec;
  val_spec.seed = derive_seed(spec.seed, {0x76616cull});
  const DatasetStats pool_stats =
      detail::write_split(pool_spec, n_pool, "pool", out_dir / "pool", true);
  detail::write_split(val_spec, n_val, "val", out_dir / "val", false);
  return pool_stats;
}

}  // namespace boxquery
