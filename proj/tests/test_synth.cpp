#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <set>

#include "boxquery/synth.hpp"
#include "helpers.hpp"

using namespace boxquery;
using testutil::TmpDir;

TEST_CASE("zero shapes yield a background scene with the border polygon", "[synth]") {
  SceneSpec spec;
  spec.shapes_min = 0;
  spec.shapes_max = 0;
  spec.height = 32;
  spec.width = 48;
  const Scene scene = generate_scene(spec, 0);
  for (auto v : scene.mask.ids) REQUIRE(v == 0);
  REQUIRE(scene.polygons.size() == 1);
  REQUIRE(scene.polygons[0].cls == 0);
  REQUIRE(scene.polygons[0].vertices.size() == 4);
  REQUIRE(scene.polygons[0].vertices[2].x == 47.0);
  REQUIRE(scene.polygons[0].vertices[2].y == 31.0);
}

TEST_CASE("scenes are bit-identical for the same spec and index", "[synth]") {
  SceneSpec spec;
  spec.seed = 77;
  const Scene a = generate_scene(spec, 5);
  const Scene b = generate_scene(spec, 5);
  REQUIRE(a.image.px == b.image.px);
  REQUIRE(a.mask.ids == b.mask.ids);
  REQUIRE(a.polygons.size() == b.polygons.size());
  const Scene c = generate_scene(spec, 6);
  REQUIRE(a.image.px != c.image.px);
}

TEST_CASE("rasterization agrees with an independent point-in-polygon oracle", "[synth]") {
  SceneSpec spec;
  spec.seed = 31;
  spec.shapes_min = 1;
  spec.shapes_max = 3;
  int mismatches = 0, total = 0;
  for (int idx = 0; idx < 4; ++idx) {
    const Scene scene = generate_scene(spec, idx);
    for (int r = 0; r < spec.height; ++r) {
      for (int c = 0; c < spec.width; ++c) {
        const Vec2 p{static_cast<double>(c), static_cast<double>(r)};
        int expected = 0;
        for (std::size_t s = scene.shapes.size(); s-- > 0;) {
          if (testutil::winding_inside(p, scene.shapes[s].vertices)) {
            expected = scene.shapes[s].cls;
            break;
          }
        }
        ++total;
        if (scene.mask.at(r, c) != expected) ++mismatches;
      }
    }
  }
  // the two fill rules may disagree only on boundary-grazing pixels
  REQUIRE(mismatches <= total / 200);
}

TEST_CASE("emitted polygons stay on their class except under occlusion", "[synth]") {
  SceneSpec spec;
  spec.seed = 13;
  spec.shapes_min = 2;
  spec.shapes_max = 4;
  for (int idx = 0; idx < 6; ++idx) {
    const Scene scene = generate_scene(spec, idx);
    for (std::size_t pi = 1; pi < scene.polygons.size(); ++pi) {  // skip the border polygon
      const Polygon& poly = scene.polygons[pi];
      // locate the original shape (emitted vertices are a subset)
      std::size_t shape_idx = scene.shapes.size();
      for (std::size_t s = 0; s < scene.shapes.size(); ++s) {
        const auto& verts = scene.shapes[s].vertices;
        bool subset = scene.shapes[s].cls == poly.cls;
        for (const auto& v : poly.vertices) {
          bool found = false;
          for (const auto& w : verts) found |= w.x == v.x && w.y == v.y;
          subset &= found;
        }
        if (subset) {
          shape_idx = s;
          break;
        }
      }
      REQUIRE(shape_idx < scene.shapes.size());

      int inside_samples = 0, good = 0;
      Rng rng(1000 + idx);
      for (int t = 0; t < 400; ++t) {
        const Vec2 p{rng.uniform(0.0, spec.width - 1.0), rng.uniform(0.0, spec.height - 1.0)};
        if (!testutil::winding_inside(p, poly.vertices)) continue;
        ++inside_samples;
        bool occluded = false;
        for (std::size_t s = shape_idx + 1; s < scene.shapes.size(); ++s)
          occluded |= testutil::winding_inside(p, scene.shapes[s].vertices);
        const int r = static_cast<int>(std::lround(p.y));
        const int c = static_cast<int>(std::lround(p.x));
        if (occluded || scene.mask.at(r, c) == poly.cls) ++good;
      }
      if (inside_samples > 20)
        REQUIRE(static_cast<double>(good) >= 0.99 * static_cast<double>(inside_samples));
    }
  }
}

TEST_CASE("generate_dataset writes a loadable split with exact totals", "[synth]") {
  TmpDir tmp("synth");
  SceneSpec spec;
  spec.seed = 5;
  spec.height = 48;
  spec.width = 48;
  spec.classes = 4;
  const DatasetStats stats = generate_dataset(spec, 10, 3, tmp.path());

  REQUIRE(std::filesystem::exists(tmp.path() / "pool" / "manifest.txt"));
  REQUIRE(std::filesystem::exists(tmp.path() / "val" / "manifest.txt"));

  // manifests: one line per image
  std::ifstream manifest(tmp.path() / "pool" / "manifest.txt");
  int lines = 0;
  std::string line;
  while (std::getline(manifest, line))
    if (!line.empty()) ++lines;
  REQUIRE(lines == 10);

  // recount totals from the written files
  std::ifstream jsonl(tmp.path() / "pool" / "polygons.jsonl", std::ios::binary);
  std::int64_t vertex_count = 0;
  std::set<std::string> poly_images;
  for (const auto& poly : read_polygons_jsonl(jsonl)) {
    vertex_count += static_cast<std::int64_t>(poly.vertices.size());
    poly_images.insert(poly.image_id);
  }
  REQUIRE(vertex_count == stats.c_p);
  REQUIRE(poly_images.size() == 10);

  std::int64_t components = 0;
  std::set<int> classes_seen;
  for (int i = 0; i < 10; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pool_%05d", i);
    const SegMask mask = load_mask_pgm(tmp.path() / "pool" / "masks" / (std::string(buf) + ".pgm"));
    components += label_components(mask).count;
    for (auto v : mask.ids) classes_seen.insert(v);
    const ImageRGB img =
        load_image_ppm(tmp.path() / "pool" / "images" / (std::string(buf) + ".ppm"));
    REQUIRE(img.height == 48);
  }
  REQUIRE(components == stats.c_c);
  REQUIRE(stats.total_pixels == 10 * 48 * 48);

  // every non-background class appears somewhere in the pool
  for (int k = 1; k < spec.classes; ++k) REQUIRE(classes_seen.count(k) == 1);
}

TEST_CASE("pool and val splits hold different content", "[synth]") {
  TmpDir tmp("synth_disjoint");
  SceneSpec spec;
  spec.seed = 21;
  spec.height = 32;
  spec.width = 32;
  generate_dataset(spec, 2, 2, tmp.path());
  const ImageRGB pool0 = load_image_ppm(tmp.path() / "pool" / "images" / "pool_00000.ppm");
  const ImageRGB val0 = load_image_ppm(tmp.path() / "val" / "images" / "val_00000.ppm");
  REQUIRE(pool0.px != val0.px);
}

TEST_CASE("invalid specs are rejected", "[synth]") {
  SceneSpec bad;
  bad.classes = 1;
  REQUIRE_THROWS_AS(generate_scene(bad, 0), std::invalid_argument);
  SceneSpec bad2;
  bad2.vert_min = 2;
  REQUIRE_THROWS_AS(generate_scene(bad2, 0), std::invalid_argument);
  SceneSpec ok;
  TmpDir tmp("synth_bad");
  REQUIRE_THROWS_AS(generate_dataset(ok, 0, 1, tmp.path()), std::invalid_argument);
}
