#include "seffsal/data_io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "seffsal/losses.hpp"

namespace seffsal {

namespace {

cv::Mat decode(const fs::path& path, int flags) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    throw IoError("cannot decode " + path.string() + ": " + e.what());
  }
  if (m.empty()) throw IoError("cannot decode " + path.string());
  return m;
}

double unit_scale(const cv::Mat& m) {
  switch (m.depth()) {
    case CV_8U:
      return 1.0 / 255.0;
    case CV_16U:
      return 1.0 / 65535.0;
    default:
      throw IoError("unsupported pixel depth in image");
  }
}

double pixel(const cv::Mat& m, int y, int x, int c) {
  if (m.depth() == CV_8U) return m.ptr<std::uint8_t>(y)[x * m.channels() + c];
  return m.ptr<std::uint16_t>(y)[x * m.channels() + c];
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void encode(const cv::Mat& m, const fs::path& path) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

Tensor flip_tensor(const Tensor& t) {
  Tensor out(t.shape());
  const auto& s = t.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
      }
    }
  }
  return out;
}

std::string sample_id(int i) {
  std::string digits = std::to_string(i);
  return "synth_" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

// Shape coverage on a 4×4 supersampling grid per pixel.
struct Shape2d {
  bool ellipse = true;
  double cy = 0, cx = 0, ry = 0, rx = 0, angle = 0;

  [[nodiscard]] bool contains(double y, double x) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double dy = y - cy;
    const double dx = x - cx;
    const double u = (c * dx + s * dy) / rx;
    const double v = (-s * dx + c * dy) / ry;
    return ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
  }
};

constexpr int kSuper = 4;

std::vector<double> coverage(const Shape2d& shape, Size2 canvas) {
  std::vector<double> cov(static_cast<std::size_t>(canvas.h) * canvas.w, 0.0);
  const double reach = std::max(shape.rx, shape.ry) + 1.0;
  const int y0 = std::max(0, static_cast<int>(std::floor(shape.cy - reach)));
  const int y1 = std::min(canvas.h - 1, static_cast<int>(std::ceil(shape.cy + reach)));
  const int x0 = std::max(0, static_cast<int>(std::floor(shape.cx - reach)));
  const int x1 = std::min(canvas.w - 1, static_cast<int>(std::ceil(shape.cx + reach)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          hits += shape.contains(y + (sy + 0.5) / kSuper, x + (sx + 0.5) / kSuper);
        }
      }
      cov[static_cast<std::size_t>(y) * canvas.w + x] = static_cast<double>(hits) / (kSuper * kSuper);
    }
  }
  return cov;
}

Sample draw_sample(std::mt19937_64& rng, Size2 canvas, int& objects) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const std::size_t plane = static_cast<std::size_t>(canvas.h) * canvas.w;

  Sample s;
  s.rgb = Tensor({1, 3, canvas.h, canvas.w});
  s.depth = Tensor({1, 1, canvas.h, canvas.w});
  s.gt = Tensor({1, 1, canvas.h, canvas.w});

  // Background: muted base colour with two oriented sinusoids and pixel noise.
  std::array<double, 3> base{};
  for (auto& b : base) b = uni(0.25, 0.6);
  const double f1 = uni(0.05, 0.3), f2 = uni(0.05, 0.3);
  const double t1 = uni(0.0, M_PI), t2 = uni(0.0, M_PI);
  const double p1 = uni(0.0, 2 * M_PI), p2 = uni(0.0, 2 * M_PI);
  const double amp = uni(0.04, 0.12);
  std::normal_distribution<double> pix_noise(0.0, 0.02);
  for (int y = 0; y < canvas.h; ++y) {
    for (int x = 0; x < canvas.w; ++x) {
      const double tex = amp * (std::sin(f1 * (x * std::cos(t1) + y * std::sin(t1)) + p1) +
                                std::sin(f2 * (x * std::cos(t2) + y * std::sin(t2)) + p2));
      for (int c = 0; c < 3; ++c) s.rgb.at(0, c, y, x) = base[c] + tex + pix_noise(rng);
    }
  }

  // Background depth ramp, far (dark) side to near side.
  const double ramp_angle = uni(0.0, 2 * M_PI);
  const double ramp_lo = uni(0.0, 0.15), ramp_hi = uni(0.25, 0.4);
  for (int y = 0; y < canvas.h; ++y) {
    for (int x = 0; x < canvas.w; ++x) {
      const double t = 0.5 + 0.5 * ((x / (canvas.w - 1.0) - 0.5) * std::cos(ramp_angle) +
                                    (y / (canvas.h - 1.0) - 0.5) * std::sin(ramp_angle));
      s.depth.at(0, 0, y, x) = ramp_lo + (ramp_hi - ramp_lo) * t;
    }
  }

  objects = 1 + static_cast<int>(u01(rng) * 3.0);
  objects = std::min(objects, 3);
  struct Obj {
    Shape2d shape;
    std::array<double, 3> colour;
    double disparity;
  };
  std::vector<Obj> objs;
  const double side = std::min(canvas.h, canvas.w);
  for (int k = 0; k < objects; ++k) {
    Obj o;
    o.shape.ellipse = u01(rng) < 0.5;
    o.shape.ry = uni(0.08, 0.25) * side;
    o.shape.rx = uni(0.08, 0.25) * side;
    o.shape.cy = uni(0.2, 0.8) * canvas.h;
    o.shape.cx = uni(0.2, 0.8) * canvas.w;
    o.shape.angle = uni(0.0, M_PI);
    // Saturated colours far from the muted background.
    for (int c = 0; c < 3; ++c) o.colour[c] = u01(rng) < 0.5 ? uni(0.0, 0.15) : uni(0.8, 1.0);
    o.disparity = uni(0.55, 1.0);
    objs.push_back(o);
  }
  std::sort(objs.begin(), objs.end(),
            [](const Obj& a, const Obj& b) { return a.disparity < b.disparity; });

  std::vector<double> union_cov(plane, 0.0);
  for (const Obj& o : objs) {
    const std::vector<double> cov = coverage(o.shape, canvas);
    for (std::size_t i = 0; i < plane; ++i) {
      if (cov[i] == 0.0) continue;
      for (int c = 0; c < 3; ++c) {
        double& v = s.rgb.plane(0, c)[i];
        v = (1.0 - cov[i]) * v + cov[i] * o.colour[c];
      }
      double& d = s.depth.plane(0, 0)[i];
      d = (1.0 - cov[i]) * d + cov[i] * o.disparity;
      union_cov[i] = std::max(union_cov[i], cov[i]);
    }
  }
  for (std::size_t i = 0; i < plane; ++i) s.gt[i] = union_cov[i] >= 0.5 ? 1.0 : 0.0;
  for (auto& v : s.rgb.values()) v = std::clamp(v, 0.0, 1.0);
  std::normal_distribution<double> depth_noise(0.0, 0.01);
  for (auto& v : s.depth.values()) v += depth_noise(rng);
  s.depth = normalize_min_max(std::move(s.depth));
  return s;
}

}  // namespace

Tensor read_rgb(const fs::path& path) {
  const cv::Mat m = decode(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  const double k = unit_scale(m);
  Tensor t({1, 3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      // OpenCV stores BGR.
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = pixel(m, y, x, 2 - c) * k;
    }
  }
  return t;
}

Tensor read_gray(const fs::path& path) {
  const cv::Mat m = decode(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  const double k = unit_scale(m);
  Tensor t({1, 1, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) t.at(0, 0, y, x) = pixel(m, y, x, 0) * k;
  }
  return t;
}

Tensor read_mask(const fs::path& path) {
  Tensor t = read_gray(path);
  for (auto& v : t.values()) v = v >= 128.0 / 255.0 ? 1.0 : 0.0;
  return t;
}

Tensor read_depth(const fs::path& path) { return normalize_min_max(read_gray(path)); }

Tensor normalize_min_max(Tensor t) {
  if (t.empty()) return t;
  const double lo = t.min();
  const double hi = t.max();
  if (!(hi > lo)) {
    t.fill(0.0);
    return t;
  }
  const double inv = 1.0 / (hi - lo);
  for (auto& v : t.values()) v = (v - lo) * inv;
  return t;
}

void write_gray_png(const Tensor& t, const fs::path& path) {
  const auto& s = t.shape();
  if (s.numel() == 0) throw ContractError("write_gray_png of an empty tensor");
  cv::Mat m(s.h, s.w, CV_8UC1);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) m.at<std::uint8_t>(y, x) = quantize(t.at(0, 0, y, x));
  }
  encode(m, path);
}

void write_rgb_png(const Tensor& t, const fs::path& path) {
  const auto& s = t.shape();
  if (s.c != 3) throw ContractError("write_rgb_png expects 3 channels, got " + s.str());
  cv::Mat m(s.h, s.w, CV_8UC3);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[2 - c] = quantize(t.at(0, c, y, x));
    }
  }
  encode(m, path);
}

std::map<std::string, fs::path> images_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("directory not found: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg" && ext != ".bmp") continue;
    const std::string stem = e.path().stem().string();
    auto [it, inserted] = out.emplace(stem, e.path());
    // Prefer PNG when a stem exists in two formats, independent of directory order.
    if (!inserted && ext == ".png") it->second = e.path();
  }
  return out;
}

Sample load_sample(const fs::path& rgb_path, const fs::path& depth_path,
                   const fs::path& gt_path) {
  Sample s;
  s.rgb = read_rgb(rgb_path);
  s.depth = read_depth(depth_path);
  s.gt = read_mask(gt_path);
  s.id = rgb_path.stem().string();
  auto dims = [](const Tensor& t) {
    return std::to_string(t.shape().w) + "x" + std::to_string(t.shape().h);
  };
  if (s.depth.spatial() != s.rgb.spatial()) {
    throw IoError("size mismatch: " + depth_path.string() + " is " + dims(s.depth) + " but " +
                  rgb_path.string() + " is " + dims(s.rgb));
  }
  if (s.gt.spatial() != s.rgb.spatial()) {
    throw IoError("size mismatch: " + gt_path.string() + " is " + dims(s.gt) + " but " +
                  rgb_path.string() + " is " + dims(s.rgb));
  }
  return s;
}

Sample flip_horizontal(const Sample& s) {
  return {flip_tensor(s.rgb), flip_tensor(s.depth), flip_tensor(s.gt), s.id};
}

std::vector<DatasetEntry> scan_dataset(const fs::path& root) {
  const auto rgb = images_by_stem(root / "RGB");
  const auto depth = images_by_stem(root / "depth");
  const auto gt = images_by_stem(root / "GT");
  std::vector<DatasetEntry> out;
  for (const auto& [stem, path] : rgb) {
    auto d = depth.find(stem);
    auto g = gt.find(stem);
    if (d == depth.end() || g == gt.end()) continue;
    out.push_back({stem, path, d->second, g->second});
  }
  if (out.empty()) {
    throw IoError("no sample stems shared by RGB/, depth/ and GT/ under " + root.string());
  }
  return out;
}

int loader_workers() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int n = std::max(1, hw);
  if (const char* env = std::getenv("SEFFSAL_NUM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) n = static_cast<int>(v);
  }
  return std::max(1, n);
}

std::vector<Sample> load_dataset(const std::vector<DatasetEntry>& entries, int workers) {
  std::vector<Sample> out(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      try {
        out[i] = load_sample(entries[i].rgb, entries[i].depth, entries[i].gt);
        out[i].id = entries[i].id;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(1, entries.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<Sample> load_dataset(const fs::path& root) {
  return load_dataset(scan_dataset(root), loader_workers());
}

ScalePyramid make_pyramid(const Sample& s, Variant variant, int input_size) {
  ScalePyramid p;
  for (int scale : active_scales(variant)) {
    const int side = input_size >> (scale - 1);
    p.rgb[scale - 1] = ops::resize_bilinear(s.rgb, {side, side});
    p.depth[scale - 1] = ops::resize_bilinear(s.depth, {side, side});
  }
  p.gt = s.gt;
  return p;
}

Batch collate(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
              Variant variant, int input_size, bool flip) {
  if (indices.empty()) throw ContractError("collate of an empty batch");
  std::array<std::vector<Tensor>, 3> rgb, depth;
  std::vector<Tensor> gts;
  Batch b;
  for (std::size_t i : indices) {
    const Sample& raw = samples.at(i);
    const Sample s = flip ? flip_horizontal(raw) : raw;
    ScalePyramid p = make_pyramid(s, variant, input_size);
    for (int k = 0; k < 3; ++k) {
      if (!p.rgb[k].empty()) {
        rgb[k].push_back(std::move(p.rgb[k]));
        depth[k].push_back(std::move(p.depth[k]));
      }
    }
    gts.push_back(std::move(p.gt));
    b.ids.push_back(s.id);
  }
  const bool uniform = std::all_of(gts.begin(), gts.end(), [&](const Tensor& g) {
    return g.spatial() == gts.front().spatial();
  });
  if (!uniform) {
    for (auto& g : gts) g = resize_mask(g, {input_size, input_size});
  }
  for (int k = 0; k < 3; ++k) {
    if (rgb[k].empty()) continue;
    b.inputs.rgb[k] = stack_batch(rgb[k]);
    b.inputs.depth[k] = stack_batch(depth[k]);
  }
  b.gt = stack_batch(gts);
  return b;
}

SynthSet synth_generate(std::uint64_t seed, int n, Size2 canvas) {
  if (canvas.h < kMinSynthCanvas || canvas.w < kMinSynthCanvas) {
    throw ConfigError("synthetic canvas must be at least " + std::to_string(kMinSynthCanvas) +
                      "x" + std::to_string(kMinSynthCanvas) + ", got " + std::to_string(canvas.w) +
                      "x" + std::to_string(canvas.h));
  }
  if (n < 1) throw ConfigError("synthetic sample count must be at least 1");
  SynthSet set;
  set.seed = seed;
  set.canvas = canvas;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < n; ++i) {
    for (;;) {
      int objects = 0;
      Sample s = draw_sample(rng, canvas, objects);
      const double fraction = s.gt.sum() / static_cast<double>(s.gt.numel());
      if (fraction < kMinForeground || fraction > kMaxForeground) continue;
      s.id = sample_id(i);
      set.samples.push_back(std::move(s));
      set.object_counts.push_back(objects);
      break;
    }
  }
  return set;
}

void write_dataset(const std::vector<Sample>& samples, const fs::path& root) {
  for (const Sample& s : samples) {
    write_rgb_png(s.rgb, root / "RGB" / (s.id + ".png"));
    write_gray_png(s.depth, root / "depth" / (s.id + ".png"));
    write_gray_png(s.gt, root / "GT" / (s.id + ".png"));
  }
}

void write_dataset(const SynthSet& set, const fs::path& root) {
  write_dataset(set.samples, root);
  nlohmann::json m;
  m["seed"] = set.seed;
  m["n"] = set.samples.size();
  m["canvas"] = {set.canvas.h, set.canvas.w};
  m["object_counts"] = set.object_counts;
  std::vector<std::string> ids;
  for (const auto& s : set.samples) ids.push_back(s.id);
  m["ids"] = ids;
  std::ofstream out(root / "manifest.json");
  if (!out) throw IoError("cannot write " + (root / "manifest.json").string());
  out << m.dump(2) << '\n';
}

}  // namespace seffsal
