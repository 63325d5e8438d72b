#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "boxquery/clickcost.hpp"
#include "boxquery/gridmaps.hpp"
#include "boxquery/segmentation.hpp"

namespace boxquery {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct ImageRGB {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> px;

  ImageRGB() = default;
  ImageRGB(int h, int w) : height(h), width(w), px(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t* pixel(int r, int c) {
    return px.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
  const std::uint8_t* pixel(int r, int c) const {
    return px.data() + (static_cast<std::size_t>(r) * width + c) * 3;
  }
};

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw io_error("pmap: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

/// Skip PNM whitespace and '#' comment lines.
inline void skip_pnm_space(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      is.get();
    } else {
      return;
    }
  }
}

inline int read_pnm_int(std::istream& is) {
  skip_pnm_space(is);
  int v = 0;
  if (!(is >> v)) throw io_error("pnm: malformed header integer");
  return v;
}

}  // namespace detail

// --- PMAP: binary probability-map container ---
// Layout: "PMAP" magic, then version, height, width, classes as unsigned
// 32-bit little-endian, then height*width*classes little-endian 32-bit floats
// in (row, col, class) order.

inline constexpr std::uint32_t kPmapVersion = 1;

inline void write_pmap(const ProbMap& p, std::ostream& os) {
  os.write("PMAP", 4);
  detail::put_u32le(os, kPmapVersion);
  detail::put_u32le(os, static_cast<std::uint32_t>(p.height));
  detail::put_u32le(os, static_cast<std::uint32_t>(p.width));
  detail::put_u32le(os, static_cast<std::uint32_t>(p.classes));
  for (float v : p.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32le(os, bits);
  }
  if (!os) throw io_error("pmap: write failed");
}

/// Read a PMAP stream. In strict mode denormalized pixels (class vector not
/// summing to 1 within 1e-3) are an error; otherwise a warning on stderr.
inline ProbMap read_pmap(std::istream& is, bool strict = true) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PMAP", 4) != 0)
    throw io_error("pmap: bad magic");
  const std::uint32_t version = detail::get_u32le(is);
  if (version != kPmapVersion) throw io_error("pmap: unsupported version");
  const std::uint32_t h = detail::get_u32le(is);
  const std::uint32_t w = detail::get_u32le(is);
  const std::uint32_t c = detail::get_u32le(is);
  if (h == 0 || w == 0 || c < 2) throw io_error("pmap: bad dimensions");
  ProbMap p(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  std::vector<char> buf(p.values.size() * 4);
  if (!is.read(buf.data(), static_cast<std::streamsize>(buf.size())))
    throw io_error("pmap: truncated payload");
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const unsigned char* b = reinterpret_cast<unsigned char*>(buf.data()) + i * 4;
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                               (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    std::memcpy(&p.values[i], &bits, 4);
  }
  bool warned = false;
  for (int r = 0; r < p.height; ++r) {
    for (int col = 0; col < p.width; ++col) {
      double sum = 0.0;
      for (int k = 0; k < p.classes; ++k) sum += p.at(r, col, k);
      if (std::abs(sum - 1.0) > 1e-3) {
        if (strict) throw io_error("pmap: pixel class vector not normalized");
        if (!warned) {
          std::cerr << "warning: pmap pixel not normalized (sum=" << sum << ")\n";
          warned = true;
        }
      }
    }
  }
  return p;
}

// --- PGM / PPM ---

/// Mask codec: P5, maxval 255 while all class ids fit below it, otherwise
/// 16-bit big-endian with maxval 65535. The ignore id is stored as maxval.
inline void write_mask_pgm(const SegMask& mask, std::ostream& os) {
  std::uint16_t max_id = 0;
  for (auto v : mask.ids)
    if (v != mask.ignore_id) max_id = std::max(max_id, v);
  const bool wide = max_id > 254;
  const int maxval = wide ? 65535 : 255;
  os << "P5\n" << mask.width << " " << mask.height << "\n" << maxval << "\n";
  for (auto v : mask.ids) {
    const std::uint16_t stored =
        v == mask.ignore_id ? static_cast<std::uint16_t>(maxval) : v;
    if (wide) {
      os.put(static_cast<char>(stored >> 8));
      os.put(static_cast<char>(stored & 0xff));
    } else {
      os.put(static_cast<char>(stored & 0xff));
    }
  }
  if (!os) throw io_error("pgm: write failed");
}

inline SegMask read_mask_pgm(std::istream& is) {
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P') throw io_error("pgm: bad magic");
  if (m1 == '2') throw io_error("pgm: ASCII (P2) format unsupported");
  if (m1 != '5') throw io_error("pgm: bad magic");
  const int w = detail::read_pnm_int(is);
  const int h = detail::read_pnm_int(is);
  const int maxval = detail::read_pnm_int(is);
  if (maxval != 255 && maxval != 65535) throw io_error("pgm: unsupported maxval for mask");
  is.get();  // single whitespace after maxval
  SegMask mask(h, w);
  for (auto& v : mask.ids) {
    int raw;
    if (maxval == 255) {
      raw = is.get();
      if (raw == EOF) throw io_error("pgm: truncated payload");
    } else {
      const int hi = is.get();
      const int lo = is.get();
      if (hi == EOF || lo == EOF) throw io_error("pgm: truncated payload");
      raw = (hi << 8) | lo;
    }
    v = raw == maxval ? kIgnoreId : static_cast<std::uint16_t>(raw);
  }
  return mask;
}

inline void write_bitmask_pgm(const BitMask& mask, std::ostream& os) {
  os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  for (auto b : mask.bits) os.put(b ? static_cast<char>(255) : 0);
  if (!os) throw io_error("pgm: write failed");
}

inline BitMask read_bitmask_pgm(std::istream& is) {
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P' || m1 != '5') throw io_error("pgm: bad magic");
  const int w = detail::read_pnm_int(is);
  const int h = detail::read_pnm_int(is);
  const int maxval = detail::read_pnm_int(is);
  if (maxval != 255) throw io_error("pgm: unsupported maxval for bitmask");
  is.get();
  BitMask mask(h, w);
  for (auto& b : mask.bits) {
    const int raw = is.get();
    if (raw == EOF) throw io_error("pgm: truncated payload");
    b = raw > 0 ? 1 : 0;
  }
  return mask;
}

/// Heatmap export: min-max scale to 8 bits for figure rendering.
inline void write_heatmap_pgm(const ScalarMap& map, std::ostream& os) {
  float lo = map.values.empty() ? 0.0f : map.values.front();
  float hi = lo;
  for (auto v : map.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float span = hi - lo;
  os << "P5\n" << map.width << " " << map.height << "\n255\n";
  for (auto v : map.values) {
    const int scaled = span > 0.0f ? static_cast<int>(std::lround((v - lo) / span * 255.0f)) : 0;
    os.put(static_cast<char>(std::clamp(scaled, 0, 255)));
  }
  if (!os) throw io_error("pgm: write failed");
}

inline void write_image_ppm(const ImageRGB& img, std::ostream& os) {
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.px.data()),
           static_cast<std::streamsize>(img.px.size()));
  if (!os) throw io_error("ppm: write failed");
}

inline ImageRGB read_image_ppm(std::istream& is) {
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (!is || m0 != 'P') throw io_error("ppm: bad magic");
  if (m1 == '3') throw io_error("ppm: ASCII (P3) format unsupported");
  if (m1 != '6') throw io_error("ppm: bad magic");
  const int w = detail::read_pnm_int(is);
  const int h = detail::read_pnm_int(is);
  const int maxval = detail::read_pnm_int(is);
  if (maxval != 255) throw io_error("ppm: unsupported maxval");
  is.get();
  ImageRGB img(h, w);
  if (!is.read(reinterpret_cast<char*>(img.px.data()),
               static_cast<std::streamsize>(img.px.size())))
    throw io_error("ppm: truncated payload");
  return img;
}

// --- Polygon JSONL ---
// One record per line: {"image_id": str, "class": int, "vertices": [[x, y], ...]}
// Coordinates in pixels, origin top-left, x = column. Floats carry 6
// significant digits.

inline void write_polygons_jsonl(const std::vector<Polygon>& polys, std::ostream& os) {
  for (const auto& poly : polys) {
    os << "{\"image_id\": " << nlohmann::json(poly.image_id).dump()
       << ", \"class\": " << poly.cls << ", \"vertices\": [";
    for (std::size_t i = 0; i < poly.vertices.size(); ++i) {
      if (i) os << ", ";
      os << "[" << format_g6(poly.vertices[i].x) << ", " << format_g6(poly.vertices[i].y) << "]";
    }
    os << "]}\n";
  }
  if (!os) throw io_error("jsonl: write failed");
}

inline std::vector<Polygon> read_polygons_jsonl(std::istream& is) {
  std::vector<Polygon> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      Polygon poly;
      poly.image_id = j.at("image_id").get<std::string>();
      poly.cls = j.at("class").get<int>();
      for (const auto& v : j.at("vertices")) {
        if (!v.is_array() || v.size() != 2) throw io_error("vertex is not an [x, y] pair");
        poly.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
      }
      out.push_back(std::move(poly));
    } catch (const nlohmann::json::exception& e) {
      throw io_error("jsonl line " + std::to_string(line_no) + ": " + e.what());
    } catch (const io_error& e) {
      throw io_error("jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// --- Results CSV ---

inline constexpr const char* kResultsCsvHeader =
    "iteration,run,strategy,cost_a,cost_b,cost_p,miou,c_p,c_i,c_b,c_c";

struct ResultRow {
  int iteration = 0;
  int run = 0;
  std::string strategy;
  double cost_a = 0.0;
  double cost_b = 0.0;
  double cost_p = 0.0;
  double miou = 0.0;
  std::int64_t c_p = 0;
  std::int64_t c_i = 0;
  std::int64_t c_b = 0;
  std::int64_t c_c = 0;
};

inline void write_results_csv(const std::vector<ResultRow>& rows, std::ostream& os) {
  os << kResultsCsvHeader << "\n";
  for (const auto& r : rows) {
    os << r.iteration << "," << r.run << "," << r.strategy << "," << format_g6(r.cost_a) << ","
       << format_g6(r.cost_b) << "," << format_g6(r.cost_p) << "," << format_g6(r.miou) << ","
       << r.c_p << "," << r.c_i << "," << r.c_b << "," << r.c_c << "\n";
  }
  if (!os) throw io_error("csv: write failed");
}

inline std::vector<ResultRow> read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw io_error("csv: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsCsvHeader) throw io_error("csv: unexpected header: " + line);
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 11)
      throw io_error("csv line " + std::to_string(line_no) + ": expected 11 fields");
    try {
      ResultRow r;
      r.iteration = std::stoi(fields[0]);
      r.run = std::stoi(fields[1]);
      r.strategy = fields[2];
      r.cost_a = std::stod(fields[3]);
      r.cost_b = std::stod(fields[4]);
      r.cost_p = std::stod(fields[5]);
      r.miou = std::stod(fields[6]);
      r.c_p = std::stoll(fields[7]);
      r.c_i = std::stoll(fields[8]);
      r.c_b = std::stoll(fields[9]);
      r.c_c = std::stoll(fields[10]);
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw io_error("csv line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

// --- Path convenience wrappers ---

template <typename WriteFn>
void save_file(const std::filesystem::path& path, WriteFn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path.string());
  fn(os);
}

template <typename ReadFn>
auto load_file(const std::filesystem::path& path, ReadFn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path.string());
  return fn(is);
}

inline void save_pmap(const ProbMap& p, const std::filesystem::path& path) {
  save_file(path, [&](std::ostream& os) { write_pmap(p, os); });
}
inline ProbMap load_pmap(const std::filesystem::path& path, bool strict = true) {
  return load_file(path, [&](std::istream& is) { return read_pmap(is, strict); });
}
inline void save_mask_pgm(const SegMask& m, const std::filesystem::path& path) {
  save_file(path, [&](std::ostream& os) { write_mask_pgm(m, os); });
}
inline SegMask load_mask_pgm(const std::filesystem::path& path) {
  return load_file(path, [](std::istream& is) { return read_mask_pgm(is); });
}
inline void save_bitmask_pgm(const BitMask& m, const std::filesystem::path& path) {
  save_file(path, [&](std::ostream& os) { write_bitmask_pgm(m, os); });
}
inline BitMask load_bitmask_pgm(const std::filesystem::path& path) {
  return load_file(path, [](std::istream& is) { return read_bitmask_pgm(is); });
}
inline void save_image_ppm(const ImageRGB& img, const std::filesystem::path& path) {
  save_file(path, [&](std::ostream& os) { write_image_ppm(img, os); });
}
inline ImageRGB load_image_ppm(const std::filesystem::path& path) {
  return load_file(path, [](std::istream& is) { return read_image_ppm(is); });
}
inline void save_heatmap_pgm(const ScalarMap& m, const std::filesystem::path& path) {
  save_file(path, [&](std::ostream& os) { write_heatmap_pgm(m, os); });
}

}  // namespace boxquery
