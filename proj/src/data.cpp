#include "fusenet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "fusenet/error.hpp"
#include "fusenet/rng.hpp"

namespace fusenet {

namespace fs = std::filesystem;

namespace {

std::size_t channels(const Tensor& t) { return t.dim(0); }
std::size_t rows(const Tensor& t) { return t.dim(1); }
std::size_t cols(const Tensor& t) { return t.dim(2); }

void require_chw(const LabeledImage& img) {
  if (img.pixels.rank() != 3) {
    throw ShapeMismatch("image '" + img.id + "' must be [C,H,W], got " +
                        shape_string(img.pixels.shape()));
  }
}

// Remaps every pixel of each channel: (r, c) -> map(r, c) in an out_h x out_w grid.
template <typename Map>
Tensor remap(const Tensor& src, std::size_t out_h, std::size_t out_w, Map map) {
  const std::size_t ch = channels(src), h = rows(src), w = cols(src);
  std::vector<double> out(src.size());
  const auto in = src.values();
  for (std::size_t k = 0; k < ch; ++k) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto [r2, c2] = map(r, c);
        out[(k * out_h + r2) * out_w + c2] = in[(k * h + r) * w + c];
      }
    }
  }
  return Tensor({ch, out_h, out_w}, std::move(out));
}

LabeledImage derived(const LabeledImage& img, Tensor pixels, Provenance provenance,
                     const std::string& suffix) {
  LabeledImage out;
  out.pixels = std::move(pixels);
  out.label = img.label;
  out.id = img.id + "_" + suffix;
  out.provenance = provenance;
  out.source_id = img.id;
  return out;
}

// Skips whitespace and '#' comments between PGM header tokens.
std::string next_token(std::istream& in, const fs::path& path) {
  std::string token;
  while (true) {
    const int ch = in.get();
    if (ch == EOF) break;
    if (ch == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(ch)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(ch));
  }
  if (token.empty()) throw MalformedImage(path.string() + ": truncated header");
  return token;
}

std::size_t header_number(std::istream& in, const fs::path& path) {
  const std::string token = next_token(in, path);
  if (!std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(c); }) ||
      token.size() > 9) {
    throw MalformedImage(path.string() + ": bad header field '" + token + "'");
  }
  return std::stoul(token);
}

void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

double smoothstep_edge(double d, double softness) { return 1.0 / (1.0 + std::exp((d - 1.0) / softness)); }

}  // namespace

std::string class_dir(int label) {
  if (label == kNormal) return "normal";
  if (label == kCp) return "cp";
  throw InvalidArgument("label must be 0 or 1, got " + std::to_string(label));
}

std::string Provenance::text() const {
  switch (kind) {
    case Kind::original:
      return "original";
    case Kind::synthetic:
      return "synthetic";
    case Kind::rotated:
      return "rotated(" + std::to_string(angle) + ")";
    case Kind::flipped:
      return std::string("flipped(") + (axis == FlipAxis::horizontal ? "horizontal" : "vertical") +
             ")";
  }
  return "original";
}

Provenance Provenance::parse(const std::string& text) {
  if (text == "original") return {};
  if (text == "synthetic") return {Kind::synthetic};
  if (text == "flipped(horizontal)") return {Kind::flipped, 0, FlipAxis::horizontal};
  if (text == "flipped(vertical)") return {Kind::flipped, 0, FlipAxis::vertical};
  for (int angle : {90, 180, 270}) {
    if (text == "rotated(" + std::to_string(angle) + ")") return {Kind::rotated, angle};
  }
  throw InvalidArgument("unknown provenance '" + text + "'");
}

std::size_t Dataset::count(int label) const {
  return static_cast<std::size_t>(std::count_if(
      items.begin(), items.end(), [&](const LabeledImage& img) { return img.label == label; }));
}

void Dataset::validate() const {
  std::set<std::string> seen;
  for (const auto& img : items) {
    if (!seen.insert(img.id).second) throw InvalidArgument("duplicate image id '" + img.id + "'");
    if (img.label != kNormal && img.label != kCp) {
      throw InvalidArgument("image '" + img.id + "' has label " + std::to_string(img.label));
    }
    for (double v : img.pixels.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("image '" + img.id + "' leaves [0,1]");
    }
  }
}

std::uint64_t fingerprint(const Dataset& d) {
  std::uint64_t h = fnv1a(std::string_view{});
  for (const auto& img : d.items) {
    h = fnv1a(img.id, h);
    const unsigned char label = static_cast<unsigned char>(img.label);
    h = fnv1a(std::span<const unsigned char>(&label, 1), h);
    for (std::size_t dim : img.pixels.shape()) h = fnv1a(std::to_string(dim) + "x", h);
    const auto values = img.pixels.values();
    h = fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(values.data()),
                                             values.size_bytes()),
              h);
  }
  return h;
}

Tensor read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  if (next_token(in, path) != "P5") throw MalformedImage(path.string() + ": not a binary PGM (P5)");
  const std::size_t w = header_number(in, path);
  const std::size_t h = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (w == 0 || h == 0) throw MalformedImage(path.string() + ": zero image dimension");
  if (maxval != 255) {
    throw MalformedImage(path.string() + ": maxval " + std::to_string(maxval) + " (need 255)");
  }
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw MalformedImage(path.string() + ": truncated pixel payload");
  }
  std::vector<double> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = bytes[i] / 255.0;
  return Tensor({1, h, w}, std::move(values));
}

void write_pgm(const fs::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 1) {
    throw ShapeMismatch("PGM export needs [1,H,W], got " + shape_string(pixels.shape()));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P5\n" << pixels.dim(2) << ' ' << pixels.dim(1) << "\n255\n";
  std::vector<unsigned char> bytes(pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::clamp(pixels.values()[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  struct Entry {
    int label;
    Provenance provenance;
    std::string source_id;
  };
  std::map<std::string, Entry> manifest;
  if (fs::exists(root / "manifest.tsv")) {
    std::ifstream in(root / "manifest.tsv");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream fields(line);
      std::string id, label, provenance, source;
      std::getline(fields, id, '\t');
      std::getline(fields, label, '\t');
      std::getline(fields, provenance, '\t');
      std::getline(fields, source, '\t');
      if (label != "0" && label != "1") throw IoError("manifest line has bad label: " + line);
      manifest[id] = {std::stoi(label), Provenance::parse(provenance), source};
    }
  }

  Dataset d;
  for (int label : {kNormal, kCp}) {
    const fs::path dir = root / class_dir(label);
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
          files.push_back(entry.path());
        }
      }
    }
    if (files.empty()) throw EmptyClass("no .pgm images under " + dir.string());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      LabeledImage img;
      img.pixels = read_pgm(file);
      img.label = label;
      img.id = file.stem().string();
      img.source_id = img.id;
      if (auto it = manifest.find(img.id); it != manifest.end()) {
        if (it->second.label != label) {
          throw IoError("manifest label for '" + img.id + "' disagrees with its directory");
        }
        img.provenance = it->second.provenance;
        img.source_id = it->second.source_id;
      }
      d.items.push_back(std::move(img));
    }
  }
  return d;
}

void save_dataset(const Dataset& d, const fs::path& root) {
  d.validate();
  for (int label : {kNormal, kCp}) fs::create_directories(root / class_dir(label));
  std::ofstream manifest(root / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest under " + root.string());
  manifest << "id\tlabel\tprovenance\tsource_id\n";
  for (const auto& img : d.items) {
    write_pgm(root / class_dir(img.label) / (img.id + ".pgm"), img.pixels);
    manifest << img.id << '\t' << img.label << '\t' << img.provenance.text() << '\t'
             << img.source_id << '\n';
  }
}

SplitResult stratified_split(const Dataset& d, double test_ratio, std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0)) {
    throw InvalidArgument("test ratio must lie in (0,1)");
  }
  Rng rng(seed);
  std::vector<bool> to_test(d.size(), false);
  for (int label : {kNormal, kCp}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.items[i].label == label) members.push_back(i);
    if (members.size() < 2) {
      throw ClassTooSmall("class '" + class_dir(label) + "' has " +
                          std::to_string(members.size()) + " items; a split needs 2");
    }
    const std::size_t n = members.size();
    const auto wanted = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_ratio + 0.5));
    const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, n - 1);
    shuffle_indices(members, rng);
    for (std::size_t k = 0; k < n_test; ++k) to_test[members[k]] = true;
  }
  SplitResult result;
  result.seed = seed;
  result.ratio = test_ratio;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (to_test[i] ? result.test : result.train).items.push_back(d.items[i]);
  }
  return result;
}

LabeledImage rotate(const LabeledImage& img, int angle) {
  require_chw(img);
  const std::size_t h = rows(img.pixels), w = cols(img.pixels);
  const Provenance prov{Provenance::Kind::rotated, angle};
  const std::string suffix = "rot" + std::to_string(angle);
  switch (angle) {
    case 90:
      return derived(img, remap(img.pixels, w, h, [h](std::size_t r, std::size_t c) {
                       return std::pair{c, h - 1 - r};
                     }), prov, suffix);
    case 180:
      return derived(img, remap(img.pixels, h, w, [h, w](std::size_t r, std::size_t c) {
                       return std::pair{h - 1 - r, w - 1 - c};
                     }), prov, suffix);
    case 270:
      return derived(img, remap(img.pixels, w, h, [w](std::size_t r, std::size_t c) {
                       return std::pair{w - 1 - c, r};
                     }), prov, suffix);
    default:
      throw UnsupportedAngle("rotation by " + std::to_string(angle) +
                             " degrees; only 90, 180 and 270 are lossless");
  }
}

LabeledImage flip(const LabeledImage& img, FlipAxis axis) {
  require_chw(img);
  const std::size_t h = rows(img.pixels), w = cols(img.pixels);
  const Provenance prov{Provenance::Kind::flipped, 0, axis};
  if (axis == FlipAxis::horizontal) {
    return derived(img, remap(img.pixels, h, w, [w](std::size_t r, std::size_t c) {
                     return std::pair{r, w - 1 - c};
                   }), prov, "flipH");
  }
  return derived(img, remap(img.pixels, h, w, [h](std::size_t r, std::size_t c) {
                   return std::pair{h - 1 - r, c};
                 }), prov, "flipV");
}

AugmentOp AugmentOp::parse(const std::string& name) {
  if (name == "rot90") return {Kind::rotate, 90};
  if (name == "rot180") return {Kind::rotate, 180};
  if (name == "rot270") return {Kind::rotate, 270};
  if (name == "flipH") return {Kind::flip, 0, FlipAxis::horizontal};
  if (name == "flipV") return {Kind::flip, 0, FlipAxis::vertical};
  throw InvalidArgument("unknown augmentation '" + name +
                        "' (expected rot90, rot180, rot270, flipH or flipV)");
}

std::string AugmentOp::name() const {
  if (kind == Kind::rotate) return "rot" + std::to_string(angle);
  return axis == FlipAxis::horizontal ? "flipH" : "flipV";
}

LabeledImage AugmentOp::apply(const LabeledImage& img) const {
  return kind == Kind::rotate ? rotate(img, angle) : flip(img, axis);
}

std::vector<AugmentOp> parse_policy(const std::string& comma_list) {
  std::vector<AugmentOp> policy;
  std::istringstream in(comma_list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) policy.push_back(AugmentOp::parse(item));
  }
  return policy;
}

Dataset augment(const Dataset& d, const std::vector<AugmentOp>& policy) {
  if (policy.empty()) throw InvalidArgument("augmentation policy is empty");
  Dataset out;
  out.items.reserve(d.size() * (1 + policy.size()));
  for (const auto& img : d.items) {
    out.items.push_back(img);
    for (const auto& op : policy) out.items.push_back(op.apply(img));
  }
  return out;
}

Dataset synth_generate(std::size_t n_per_class, std::size_t height, std::size_t width,
                       std::uint64_t seed) {
  if (n_per_class < 1) throw InvalidArgument("n_per_class must be >= 1");
  if (height < 16 || width < 16) throw InvalidArgument("synthetic images need H, W >= 16");
  Rng rng(seed);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double scale = std::min(h, w);
  Dataset d;
  for (int label : {kNormal, kCp}) {
    for (std::size_t k = 1; k <= n_per_class; ++k) {
      const double cy = h / 2 + rng.uniform(-0.06, 0.06) * h;
      const double cx = w / 2 + rng.uniform(-0.06, 0.06) * w;
      const double ry = rng.uniform(0.30, 0.38) * h;
      const double rx = rng.uniform(0.26, 0.34) * w;
      const double brightness = rng.uniform(0.65, 0.8);

      struct Lesion {
        double y, x, radius, depth;
      };
      std::vector<Lesion> lesions;
      if (label == kCp) {
        const std::size_t count = 2 + rng.index(2);
        for (std::size_t m = 0; m < count; ++m) {
          const double theta = rng.uniform(0.0, 2 * std::numbers::pi);
          const double offset = rng.uniform(0.35, 0.65);
          lesions.push_back({cy + offset * ry * std::sin(theta), cx + offset * rx * std::cos(theta),
                             rng.uniform(0.08, 0.13) * scale, rng.uniform(0.45, 0.6)});
        }
      }

      std::vector<double> pixels(height * width);
      for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
          const double dy = (static_cast<double>(r) - cy) / ry;
          const double dx = (static_cast<double>(c) - cx) / rx;
          double v = 0.08 + brightness * smoothstep_edge(std::sqrt(dy * dy + dx * dx), 0.08);
          for (const auto& lesion : lesions) {
            const double ly = static_cast<double>(r) - lesion.y;
            const double lx = static_cast<double>(c) - lesion.x;
            v *= 1.0 - lesion.depth *
                           std::exp(-(ly * ly + lx * lx) / (2 * lesion.radius * lesion.radius));
          }
          v = std::clamp(v + rng.normal(0.0, 0.05), 0.0, 1.0);
          pixels[r * width + c] = std::round(v * 255.0) / 255.0;
        }
      }

      char id[32];
      std::snprintf(id, sizeof id, "%s_%04zu", class_dir(label).c_str(), k);
      LabeledImage img;
      img.pixels = Tensor({1, height, width}, std::move(pixels));
      img.label = label;
      img.id = id;
      img.provenance = {Provenance::Kind::synthetic};
      img.source_id = id;
      d.items.push_back(std::move(img));
    }
  }
  return d;
}

Batch make_batch(const Dataset& d, std::span<const std::size_t> indices) {
  Batch batch;
  if (indices.empty()) {
    if (d.items.empty()) throw InvalidArgument("cannot batch an empty dataset");
    Shape shape{0};
    for (std::size_t dim : d.items.front().pixels.shape()) shape.push_back(dim);
    batch.images = Tensor::zeros(shape);
    return batch;
  }
  const Shape& first = d.items.at(indices[0]).pixels.shape();
  std::vector<double> values;
  values.reserve(indices.size() * shape_size(first));
  for (std::size_t i : indices) {
    const LabeledImage& img = d.items.at(i);
    if (img.pixels.shape() != first) {
      throw ShapeMismatch("image '" + img.id + "' has shape " + shape_string(img.pixels.shape()) +
                          ", batch expects " + shape_string(first));
    }
    values.insert(values.end(), img.pixels.values().begin(), img.pixels.values().end());
    batch.labels.push_back(img.label);
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  batch.images = Tensor(std::move(shape), std::move(values));
  return batch;
}

Batch make_batch(const Dataset& d) {
  std::vector<std::size_t> all(d.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(d, all);
}

}  // namespace fusenet
