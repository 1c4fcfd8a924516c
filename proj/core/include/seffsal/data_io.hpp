#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "seffsal/msnet.hpp"

namespace seffsal {

namespace fs = std::filesystem;

/// Raised for missing, undecodable or mutually inconsistent image files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit or 16-bit image as [1,3,H,W] in [0,1], channels in R, G, B order.
Tensor read_rgb(const fs::path& path);
/// Single-channel image as [1,1,H,W] in [0,1]; colour files are converted to gray.
Tensor read_gray(const fs::path& path);
/// Gray image thresholded at 128 (of 255) into {0, 1}.
Tensor read_mask(const fs::path& path);
/// Gray image min-max normalized to [0,1]; a constant image becomes all zeros.
Tensor read_depth(const fs::path& path);

Tensor normalize_min_max(Tensor t);

/// Writes plane (0,0) as an 8-bit PNG with round(255·clamp(v,0,1)).
void write_gray_png(const Tensor& t, const fs::path& path);
/// Writes batch entry 0 of a 3-channel tensor as an 8-bit PNG.
void write_rgb_png(const Tensor& t, const fs::path& path);

/// Image files (png, jpg, jpeg, bmp) in `dir` keyed by filename stem.
std::map<std::string, fs::path> images_by_stem(const fs::path& dir);

struct Sample {
  Tensor rgb;    // [1,3,H,W]
  Tensor depth;  // [1,1,H,W]
  Tensor gt;     // [1,1,H,W], values in {0,1}
  std::string id;
};

Sample load_sample(const fs::path& rgb_path, const fs::path& depth_path,
                   const fs::path& gt_path);

/// Mirrors every tensor of the sample left to right.
Sample flip_horizontal(const Sample& s);

struct DatasetEntry {
  std::string id;
  fs::path rgb;
  fs::path depth;
  fs::path gt;
};

/// Matches `<root>/RGB`, `<root>/depth` and `<root>/GT` by stem. Stems missing from any
/// of the three folders are skipped; an empty match is an error.
std::vector<DatasetEntry> scan_dataset(const fs::path& root);

/// Worker count for concurrent file loading: SEFFSAL_NUM_WORKERS if set and positive,
/// else the hardware concurrency; never below one.
int loader_workers();

/// Loads every entry, reading up to `workers` files concurrently. The result order is
/// the order of `entries` regardless of scheduling.
std::vector<Sample> load_dataset(const std::vector<DatasetEntry>& entries, int workers);
std::vector<Sample> load_dataset(const fs::path& root);

struct ScalePyramid {
  /// Indexed by scale - 1; inactive scales are empty.
  std::array<Tensor, 3> rgb;
  std::array<Tensor, 3> depth;
  Tensor gt;
};

/// Bilinear resize of rgb and depth to each active scale (input_size >> (scale-1));
/// gt is kept at full resolution.
ScalePyramid make_pyramid(const Sample& s, Variant variant, int input_size = 352);

struct Batch {
  NetInputs inputs;
  Tensor gt;
  std::vector<std::string> ids;
};

/// Stacks the pyramids of `samples[indices]`. Ground truths of differing size are
/// brought to input_size × input_size with the area rule of resize_mask first.
Batch collate(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
              Variant variant, int input_size, bool flip = false);

struct SynthSet {
  std::vector<Sample> samples;
  std::vector<int> object_counts;
  std::uint64_t seed = 0;
  Size2 canvas{};
};

inline constexpr int kMinSynthCanvas = 64;
inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;

/// n samples of 1-3 antialiased ellipses or rectangles on a textured background. Depth is
/// a per-object disparity (nearer objects brighter) over a background ramp plus noise,
/// min-max normalized. Foreground fraction of each gt lies in [0.02, 0.6].
SynthSet synth_generate(std::uint64_t seed, int n, Size2 canvas);

/// Writes the RGB/depth/GT layout (PNG) plus manifest.json with seed, n, canvas and
/// per-sample object counts.
void write_dataset(const SynthSet& set, const fs::path& root);
void write_dataset(const std::vector<Sample>& samples, const fs::path& root);

}  // namespace seffsal
