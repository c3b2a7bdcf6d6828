#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/detection.hpp"
#include "msfr/scene.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

/// Input error tied to a line of a text file.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---- annotations -----------------------------------------------------------

struct AnnotationRecord {
  std::string image_path;
  std::vector<BBox> boxes;  // corner form; integer valued

  bool operator==(const AnnotationRecord&) const = default;
};

using AnnotationFile = std::vector<AnnotationRecord>;

/// Blocks of: image path, face count n, then n lines "x y w h" (non-negative
/// integers, w and h at least 1). No blank lines.
AnnotationFile parse_annotations_text(const std::string& text, const std::string& source = "<annotations>");
AnnotationFile parse_annotations(const std::filesystem::path& path);
std::string serialize_annotations(const AnnotationFile& file);

// ---- images ----------------------------------------------------------------

struct LoadedImage {
  Tensor image;  // 1 x C x H' x W', H' and W' padded up to multiples of 16
  int width = 0;
  int height = 0;
};

inline constexpr int kImagePadMultiple = 16;

/// Binary PGM (P5) or PPM (P6) with maxval 255, scaled to [0, 1].
LoadedImage decode_pnm(const std::string& bytes, const std::string& source = "<image>");
LoadedImage load_image(const std::filesystem::path& path);

/// Pads by edge replication to multiples of `multiple`.
Tensor pad_replicate(const Tensor& image, int multiple);

/// Writes the top-left width x height region as P5 (C=1) or P6 (C=3).
std::string encode_pnm(const Tensor& image, int width, int height);
void save_image(const std::filesystem::path& path, const Tensor& image, int width, int height);

/// RGB copy of the image with 1-px red borders around every detection.
Tensor render_overlay(const Tensor& image, int width, int height, std::span<const Detection> dets);

// ---- datasets --------------------------------------------------------------

/// File name without directory and extension.
std::string image_stem(const std::string& path);

/// Loads every annotated image; relative image paths resolve against the
/// annotation file's directory. Scene ids are image stems and must be unique.
std::vector<Scene> load_scenes(const std::filesystem::path& annotation_path);

// ---- detection files -------------------------------------------------------

/// "x1 y1 x2 y2 score" lines, 6 decimals, descending score.
std::string format_detections(std::span<const Detection> dets);
std::vector<Detection> parse_detections_text(const std::string& text, const std::string& source = "<detections>");

// ---- misc ------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace msfr
