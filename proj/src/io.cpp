#include "msfr/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace msfr {

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; in >> f;) out.push_back(f);
  return out;
}

bool parse_uint(const std::string& s, long long& out) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_real(const std::string& s, double& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool has_space(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

// ---- annotations -----------------------------------------------------------

AnnotationFile parse_annotations_text(const std::string& text, const std::string& source) {
  const std::vector<std::string> lines = split_lines(text);
  AnnotationFile file;
  std::size_t i = 0;
  auto line_no = [&](std::size_t idx) { return static_cast<int>(idx + 1); };
  while (i < lines.size()) {
    const std::string& path = lines[i];
    if (path.empty()) throw ParseError(source, line_no(i), "blank line");
    if (has_space(path)) throw ParseError(source, line_no(i), "image path contains whitespace: '" + path + "'");
    AnnotationRecord rec;
    rec.image_path = path;
    ++i;
    if (i == lines.size()) throw ParseError(source, line_no(i), "unexpected end of file: expected face count");
    long long n = 0;
    if (!parse_uint(lines[i], n)) throw ParseError(source, line_no(i), "malformed face count '" + lines[i] + "'");
    ++i;
    for (long long k = 0; k < n; ++k, ++i) {
      if (i == lines.size()) {
        throw ParseError(source, line_no(i),
                         "unexpected end of file: count " + std::to_string(n) + " but " + std::to_string(k) +
                             " box lines");
      }
      const std::vector<std::string> f = split_fields(lines[i]);
      if (f.size() != 4) {
        throw ParseError(source, line_no(i),
                         "expected box line 'x y w h' (" + std::to_string(k + 1) + " of " + std::to_string(n) +
                             "), got '" + lines[i] + "'");
      }
      long long v[4];
      for (int j = 0; j < 4; ++j) {
        if (!parse_uint(f[static_cast<std::size_t>(j)], v[j])) {
          throw ParseError(source, line_no(i), "non-integer box field '" + f[static_cast<std::size_t>(j)] + "'");
        }
      }
      if (v[2] < 1 || v[3] < 1) throw ParseError(source, line_no(i), "box width and height must be at least 1");
      rec.boxes.push_back({static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[0] + v[2]),
                           static_cast<double>(v[1] + v[3])});
    }
    file.push_back(std::move(rec));
  }
  return file;
}

AnnotationFile parse_annotations(const std::filesystem::path& path) {
  return parse_annotations_text(read_file(path), path.string());
}

std::string serialize_annotations(const AnnotationFile& file) {
  std::string out;
  for (const AnnotationRecord& r : file) {
    if (r.image_path.empty() || has_space(r.image_path)) {
      throw std::invalid_argument("annotation image path must be non-empty without whitespace: '" + r.image_path + "'");
    }
    out += r.image_path + "\n" + std::to_string(r.boxes.size()) + "\n";
    for (const BBox& b : r.boxes) {
      const double v[4] = {b.x1, b.y1, b.width(), b.height()};
      char buf[96];
      for (double x : v) {
        if (x != std::floor(x) || x < 0 || x > 1e15) {
          throw std::invalid_argument("annotation boxes must have non-negative integer coordinates (" + r.image_path +
                                      ")");
        }
      }
      if (v[2] < 1 || v[3] < 1) throw std::invalid_argument("annotation box width and height must be at least 1");
      std::snprintf(buf, sizeof buf, "%lld %lld %lld %lld\n", static_cast<long long>(v[0]), static_cast<long long>(v[1]),
                    static_cast<long long>(v[2]), static_cast<long long>(v[3]));
      out += buf;
    }
  }
  return out;
}

// ---- images ----------------------------------------------------------------

LoadedImage decode_pnm(const std::string& bytes, const std::string& source) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { return std::runtime_error(source + ": " + what); };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw fail("unsupported image format (expected binary PGM P5 or PPM P6)");
  }
  const int channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  auto header_int = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') ++pos;
    long long v = 0;
    if (!parse_uint(bytes.substr(start, pos - start), v) || v > (1 << 20)) throw fail("malformed header");
    return static_cast<int>(v);
  };
  const int w = header_int();
  const int h = header_int();
  const int maxval = header_int();
  if (w < 1 || h < 1) throw fail("image dimensions must be positive");
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("malformed header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - pos < need) throw fail("truncated pixel data");

  Tensor img({1, channels, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        const auto byte = static_cast<unsigned char>(bytes[pos + (static_cast<std::size_t>(y) * w + x) * channels + c]);
        img.at(0, c, y, x) = byte / 255.0;
      }
    }
  }
  return {pad_replicate(img, kImagePadMultiple), w, h};
}

LoadedImage load_image(const std::filesystem::path& path) { return decode_pnm(read_file(path), path.string()); }

Tensor pad_replicate(const Tensor& image, int multiple) {
  if (image.rank() != 4 || image.dim(0) != 1) throw std::invalid_argument("pad_replicate: expected 1 x C x H x W");
  const int c = image.dim(1), h = image.dim(2), w = image.dim(3);
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor out({1, c, ph, pw});
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) out.at(0, k, y, x) = image.at(0, k, std::min(y, h - 1), std::min(x, w - 1));
    }
  }
  return out;
}

std::string encode_pnm(const Tensor& image, int width, int height) {
  if (image.rank() != 4 || image.dim(0) != 1 || (image.dim(1) != 1 && image.dim(1) != 3)) {
    throw std::invalid_argument("encode_pnm: expected 1 x {1,3} x H x W, got " + shape_str(image.shape()));
  }
  if (width < 1 || height < 1 || width > image.dim(3) || height > image.dim(2)) {
    throw std::invalid_argument("encode_pnm: extent exceeds the image");
  }
  const int c = image.dim(1);
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int k = 0; k < c; ++k) {
        const double v = std::clamp(image.at(0, k, y, x), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  return out;
}

void save_image(const std::filesystem::path& path, const Tensor& image, int width, int height) {
  write_file(path, encode_pnm(image, width, height));
}

Tensor render_overlay(const Tensor& image, int width, int height, std::span<const Detection> dets) {
  const int c = image.dim(1);
  Tensor out({1, 3, height, width});
  for (int k = 0; k < 3; ++k) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.at(0, k, y, x) = image.at(0, c == 3 ? k : 0, y, x);
    }
  }
  auto paint = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    out.at(0, 0, y, x) = 1.0;
    out.at(0, 1, y, x) = 0.0;
    out.at(0, 2, y, x) = 0.0;
  };
  for (const Detection& d : dets) {
    const int x1 = static_cast<int>(std::floor(d.box.x1)), y1 = static_cast<int>(std::floor(d.box.y1));
    const int x2 = static_cast<int>(std::ceil(d.box.x2)) - 1, y2 = static_cast<int>(std::ceil(d.box.y2)) - 1;
    for (int x = x1; x <= x2; ++x) {
      paint(x, y1);
      paint(x, y2);
    }
    for (int y = y1; y <= y2; ++y) {
      paint(x1, y);
      paint(x2, y);
    }
  }
  return out;
}

// ---- datasets --------------------------------------------------------------

std::string image_stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

std::vector<Scene> load_scenes(const std::filesystem::path& annotation_path) {
  const AnnotationFile file = parse_annotations(annotation_path);
  const std::filesystem::path base = annotation_path.parent_path();
  std::vector<Scene> scenes;
  std::set<std::string> seen;
  for (const AnnotationRecord& r : file) {
    std::filesystem::path p(r.image_path);
    if (p.is_relative()) p = base / p;
    LoadedImage img = load_image(p);
    Scene s;
    s.id = image_stem(r.image_path);
    if (!seen.insert(s.id).second) throw std::runtime_error("duplicate image id '" + s.id + "' in " + annotation_path.string());
    s.image = std::move(img.image);
    s.width = img.width;
    s.height = img.height;
    s.gt_boxes = r.boxes;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

// ---- detection files -------------------------------------------------------

std::string format_detections(std::span<const Detection> dets) {
  std::vector<double> scores;
  for (const Detection& d : dets) scores.push_back(d.score);
  std::string out;
  for (std::size_t i : order_by_score(scores)) {
    const Detection& d = dets[i];
    char buf[192];
    std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f\n", d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score);
    out += buf;
  }
  return out;
}

std::vector<Detection> parse_detections_text(const std::string& text, const std::string& source) {
  std::vector<Detection> dets;
  const std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::vector<std::string> f = split_fields(lines[i]);
    const int ln = static_cast<int>(i + 1);
    if (f.size() != 5) throw ParseError(source, ln, "expected 'x1 y1 x2 y2 score', got '" + lines[i] + "'");
    double v[5];
    for (int j = 0; j < 5; ++j) {
      if (!parse_real(f[static_cast<std::size_t>(j)], v[j])) {
        throw ParseError(source, ln, "malformed number '" + f[static_cast<std::size_t>(j)] + "'");
      }
    }
    if (v[2] < v[0] || v[3] < v[1]) throw ParseError(source, ln, "box corners out of order");
    dets.push_back({{v[0], v[1], v[2], v[3]}, v[4]});
  }
  return dets;
}

// ---- misc ------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("error reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.close();
  if (!out) throw std::runtime_error("error writing " + path.string());
}

}  // namespace msfr
