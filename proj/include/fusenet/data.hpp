#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fusenet/tensor.hpp"

namespace fusenet {

constexpr int kNormal = 0;
constexpr int kCp = 1;

/// Directory name for a class label: "normal" or "cp".
std::string class_dir(int label);

enum class FlipAxis { horizontal, vertical };

struct Provenance {
  enum class Kind { original, rotated, flipped, synthetic };
  Kind kind = Kind::original;
  int angle = 0;                          // rotated only
  FlipAxis axis = FlipAxis::horizontal;   // flipped only

  /// "original", "synthetic", "rotated(90)", "flipped(horizontal)".
  std::string text() const;
  static Provenance parse(const std::string& text);
  bool operator==(const Provenance&) const = default;
};

struct LabeledImage {
  Tensor pixels;  // [C,H,W] in [0,1]
  int label = kNormal;
  std::string id;
  Provenance provenance;
  std::string source_id;  // id of the image this one was derived from (itself for originals)
};

struct Dataset {
  std::vector<LabeledImage> items;

  std::size_t size() const { return items.size(); }
  std::size_t count(int label) const;
  /// Throws InvalidArgument on duplicate ids, labels outside {0,1}, or pixels outside [0,1].
  void validate() const;
};

/// 64-bit FNV-1a over ids, labels, shapes and pixel bytes, in order.
std::uint64_t fingerprint(const Dataset& d);

/// Binary 8-bit PGM (P5, maxval 255). Returns [1,H,W] scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);
/// Rounds pixels to the nearest 1/255 step; needs a [1,H,W] tensor.
void write_pgm(const std::filesystem::path& path, const Tensor& pixels);

/// Reads `root/normal/*.pgm` then `root/cp/*.pgm`, each sorted by file name.
/// Ids are the file stems. If `root/manifest.tsv` exists, provenance and
/// source ids are taken from it.
Dataset load_dataset(const std::filesystem::path& root);
/// Writes the PGM tree plus `manifest.tsv` (id, label, provenance, source_id).
void save_dataset(const Dataset& d, const std::filesystem::path& root);

struct SplitResult {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  double ratio = 0.5;
};

/// Per class: seeded shuffle, then round-half-up(n * test_ratio) items (kept
/// within [1, n-1]) go to test. Both outputs keep the input order.
SplitResult stratified_split(const Dataset& d, double test_ratio, std::uint64_t seed);

/// Clockwise by 90, 180 or 270 degrees; throws UnsupportedAngle otherwise.
LabeledImage rotate(const LabeledImage& img, int angle);
LabeledImage flip(const LabeledImage& img, FlipAxis axis);

struct AugmentOp {
  enum class Kind { rotate, flip };
  Kind kind = Kind::rotate;
  int angle = 90;
  FlipAxis axis = FlipAxis::horizontal;

  /// Accepts rot90, rot180, rot270, flipH, flipV.
  static AugmentOp parse(const std::string& name);
  std::string name() const;
  LabeledImage apply(const LabeledImage& img) const;
};

std::vector<AugmentOp> parse_policy(const std::string& comma_list);

/// Each original followed by one derived image per policy entry, in policy
/// order. Throws InvalidArgument on an empty policy.
Dataset augment(const Dataset& d, const std::vector<AugmentOp>& policy);

/// `n_per_class` normal images (bright ellipse plus noise) followed by as many
/// cp images (the same kind of ellipse with dark off-center lesions).
/// Pixels are quantized to multiples of 1/255 so PGM export is lossless.
Dataset synth_generate(std::size_t n_per_class, std::size_t height, std::size_t width,
                       std::uint64_t seed);

struct Batch {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
};

/// Stacks the selected items; throws ShapeMismatch if image shapes differ.
Batch make_batch(const Dataset& d, std::span<const std::size_t> indices);
Batch make_batch(const Dataset& d);

}  // namespace fusenet
