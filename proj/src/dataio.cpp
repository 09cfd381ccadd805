#include "segchange/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "segchange/errors.hpp"
#include "segchange/png_io.hpp"
#include "segchange/rng.hpp"

namespace fs = std::filesystem;

namespace segchange {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string stem_of(const std::string& filename) {
  const auto dot = filename.find_last_of('.');
  return dot == std::string::npos ? filename : filename.substr(0, dot);
}

Tensor image_to_tensor(const RgbImage& img) {
  Tensor t({3, img.height, img.width});
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(c, y, x) =
            img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0;
  return t;
}

Tensor gray_to_mask(const GrayImage& img) {
  Tensor t({img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] >= 128 ? 1.0 : 0.0;
  return t;
}

}  // namespace

void validate_sample(const BitemporalSample& s) {
  if (s.image_t1.ndim() != 3 || s.image_t1.dim(0) != 3)
    throw ValidationError("sample " + s.id + ": image_t1 must be (3,H,W)");
  if (!s.image_t1.same_shape(s.image_t2))
    throw ValidationError("sample " + s.id + ": t1/t2 size mismatch");
  const int h = s.image_t1.dim(1), w = s.image_t1.dim(2);
  if (s.mask.ndim() != 2 || s.mask.dim(0) != h || s.mask.dim(1) != w)
    throw ValidationError("sample " + s.id + ": mask size mismatch");
  if (h % 32 != 0 || w % 32 != 0)
    throw ValidationError("sample " + s.id + ": dimensions must be divisible by 32, got " +
                          std::to_string(h) + "x" + std::to_string(w));
  for (std::size_t i = 0; i < s.mask.numel(); ++i)
    if (s.mask[i] != 0.0 && s.mask[i] != 1.0)
      throw ValidationError("sample " + s.id + ": mask is not binary");
  if (!s.image_t1.all_finite() || !s.image_t2.all_finite())
    throw ValidationError("sample " + s.id + ": non-finite image values");
}

DatasetSplit load_dataset(const std::string& root, const std::string& split) {
  for (const char* sub : {"A", "B", "label"}) {
    if (!fs::is_directory(fs::path(root) / sub))
      throw LoadError("missing directory " + std::string(sub) + "/ under " + root);
  }
  const fs::path list_path = fs::path(root) / "list" / (split + ".txt");
  if (!fs::is_regular_file(list_path)) throw LoadError("missing list file " + list_path.string());

  // Optional prompt sidecar, joined by id (file stem).
  std::unordered_map<std::string, std::string> prompts;
  const fs::path prompts_path = fs::path(root) / "prompts.jsonl";
  if (fs::is_regular_file(prompts_path)) {
    std::ifstream pf(prompts_path);
    std::string line;
    int lineno = 0;
    while (std::getline(pf, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("id") || !j.contains("prompt"))
        throw LoadError("bad prompts.jsonl line " + std::to_string(lineno) + " in " +
                        prompts_path.string());
      prompts[j["id"].get<std::string>()] = j["prompt"].get<std::string>();
    }
  }

  DatasetSplit out;
  out.name = split;
  std::ifstream lf(list_path);
  std::string line;
  std::set<std::string> seen;
  while (std::getline(lf, line)) {
    const std::string name = trim(line);
    if (name.empty()) continue;
    for (const char* sub : {"A", "B", "label"}) {
      const fs::path p = fs::path(root) / sub / name;
      if (!fs::is_regular_file(p))
        throw LoadError("missing file " + std::string(sub) + "/" + name + " under " + root);
    }
    BitemporalSample s;
    s.id = stem_of(name);
    if (!seen.insert(s.id).second)
      throw ValidationError("duplicate sample id in " + split + ": " + s.id);
    s.image_t1 = image_to_tensor(read_rgb_png((fs::path(root) / "A" / name).string()));
    s.image_t2 = image_to_tensor(read_rgb_png((fs::path(root) / "B" / name).string()));
    s.mask = gray_to_mask(read_gray_png((fs::path(root) / "label" / name).string()));
    if (auto it = prompts.find(s.id); it != prompts.end()) s.prompt = it->second;
    validate_sample(s);
    out.samples.push_back(std::move(s));
  }
  return out;
}

namespace {

struct Rect {
  int y0, x0, y1, x1;  // half-open
  bool appear;         // true: drawn into t2; false: drawn into t1
  double color[3];
};

bool overlaps(const Rect& a, const Rect& b) {
  return a.y0 < b.y1 && b.y0 < a.y1 && a.x0 < b.x1 && b.x0 < a.x1;
}

// Textured background within [0.25, 0.75] so that dark/bright rectangle
// fills always differ from it.
Tensor make_background(int h, int w, Rng& rng) {
  Tensor img({3, h, w});
  for (int c = 0; c < 3; ++c) {
    const double fy = rng.uniform(0.5, 3.0) * 2.0 * 3.14159265358979323846 / h;
    const double fx = rng.uniform(0.5, 3.0) * 2.0 * 3.14159265358979323846 / w;
    const double phase = rng.uniform(0.0, 6.28);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double wave = 0.15 * std::sin(fy * y + fx * x + phase);
        const double noise = 0.08 * (rng.uniform() - 0.5);
        img.at(c, y, x) = 0.5 + wave + noise;
      }
  }
  return img;
}

}  // namespace

DatasetSplit generate_synthetic(const SynthConfig& cfg) {
  if (cfg.n_samples < 1) throw ValidationError("synth: n_samples must be >= 1");
  if (cfg.height < 32 || cfg.width < 32 || cfg.height % 32 != 0 || cfg.width % 32 != 0)
    throw ValidationError("synth: height/width must be positive multiples of 32");
  if (!(cfg.change_frac_lo < cfg.change_frac_hi) || cfg.change_frac_lo <= 0.0 ||
      cfg.change_frac_hi >= 1.0)
    throw ValidationError("synth: change fraction bounds must satisfy 0 < lo < hi < 1");
  if (cfg.n_shapes_range.lo < 1 || cfg.n_shapes_range.lo > cfg.n_shapes_range.hi)
    throw ValidationError("synth: n_shapes_range must be an interval with lo >= 1");
  if (cfg.shape_size_range.lo < 1 || cfg.shape_size_range.lo > cfg.shape_size_range.hi)
    throw ValidationError("synth: shape_size_range must be an interval with lo >= 1");

  Rng rng(cfg.seed);
  DatasetSplit out;
  out.name = "synthetic";
  const int h = cfg.height, w = cfg.width;
  const double total_px = static_cast<double>(h) * w;

  for (int si = 0; si < cfg.n_samples; ++si) {
    bool done = false;
    for (int attempt = 0; attempt < 100 && !done; ++attempt) {
      Tensor t1 = make_background(h, w, rng);
      Tensor t2 = t1;
      const int n_shapes =
          static_cast<int>(rng.uniform_int(cfg.n_shapes_range.lo, cfg.n_shapes_range.hi));
      std::vector<Rect> rects;
      bool placed_all = true;
      for (int k = 0; k < n_shapes; ++k) {
        bool placed = false;
        for (int t = 0; t < 100 && !placed; ++t) {
          Rect r;
          const int rh = static_cast<int>(
              rng.uniform_int(cfg.shape_size_range.lo, std::min(cfg.shape_size_range.hi, h)));
          const int rw = static_cast<int>(
              rng.uniform_int(cfg.shape_size_range.lo, std::min(cfg.shape_size_range.hi, w)));
          r.y0 = static_cast<int>(rng.uniform_int(0, h - rh));
          r.x0 = static_cast<int>(rng.uniform_int(0, w - rw));
          r.y1 = r.y0 + rh;
          r.x1 = r.x0 + rw;
          r.appear = rng.uniform() < 0.5;
          const bool bright = rng.uniform() < 0.5;
          for (double& c : r.color)
            c = bright ? rng.uniform(0.85, 0.98) : rng.uniform(0.02, 0.15);
          placed = std::none_of(rects.begin(), rects.end(),
                                [&](const Rect& o) { return overlaps(o, r); });
          if (placed) rects.push_back(r);
        }
        if (!placed) {
          placed_all = false;
          break;
        }
      }
      if (!placed_all) continue;

      for (const Rect& r : rects) {
        Tensor& target = r.appear ? t2 : t1;
        for (int c = 0; c < 3; ++c)
          for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) target.at(c, y, x) = r.color[c];
      }

      // Exact change mask: any channel differs.
      Tensor mask({h, w});
      double changed = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool diff = t1.at(0, y, x) != t2.at(0, y, x) ||
                            t1.at(1, y, x) != t2.at(1, y, x) ||
                            t1.at(2, y, x) != t2.at(2, y, x);
          mask.at(y, x) = diff ? 1.0 : 0.0;
          changed += mask.at(y, x);
        }
      const double frac = changed / total_px;
      if (frac < cfg.change_frac_lo || frac > cfg.change_frac_hi) continue;

      const bool any_appear = std::any_of(rects.begin(), rects.end(),
                                          [](const Rect& r) { return r.appear; });
      const bool any_gone = std::any_of(rects.begin(), rects.end(),
                                        [](const Rect& r) { return !r.appear; });
      BitemporalSample s;
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "synth_%04d", si);
      s.id = idbuf;
      s.image_t1 = std::move(t1);
      s.image_t2 = std::move(t2);
      s.mask = std::move(mask);
      if (any_appear && any_gone)
        s.prompt = "buildings appeared and disappeared";
      else if (any_appear)
        s.prompt = "buildings appeared";
      else
        s.prompt = "buildings disappeared";
      validate_sample(s);
      out.samples.push_back(std::move(s));
      done = true;
    }
    if (!done)
      throw GenerationError(
          "synth: could not realize a scene within change fraction bounds [" +
          std::to_string(cfg.change_frac_lo) + ", " + std::to_string(cfg.change_frac_hi) +
          "] in 100 attempts (sample " + std::to_string(si) + ")");
  }
  return out;
}

void save_mask(const Tensor& mask, const std::string& path) {
  if (mask.ndim() != 2) throw ShapeError("save_mask: mask must be (H,W)");
  GrayImage img;
  img.height = mask.dim(0);
  img.width = mask.dim(1);
  img.pixels.resize(mask.numel());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) throw ValidationError("save_mask: mask is not binary");
    img.pixels[i] = mask[i] == 1.0 ? 255 : 0;
  }
  write_gray_png(path, img);
}

Tensor load_mask(const std::string& path) { return gray_to_mask(read_gray_png(path)); }

void write_dataset(const DatasetSplit& split, const std::string& root) {
  std::error_code ec;
  for (const char* sub : {"A", "B", "label", "list"}) {
    fs::create_directories(fs::path(root) / sub, ec);
    if (ec) throw IoError("cannot create " + (fs::path(root) / sub).string());
  }
  std::ofstream list(fs::path(root) / "list" / (split.name + ".txt"));
  std::ofstream prompts_file;
  const bool any_prompt = std::any_of(split.samples.begin(), split.samples.end(),
                                      [](const BitemporalSample& s) { return s.prompt.has_value(); });
  if (any_prompt) prompts_file.open(fs::path(root) / "prompts.jsonl", std::ios::app);

  auto to_rgb = [](const Tensor& t) {
    RgbImage img;
    img.height = t.dim(1);
    img.width = t.dim(2);
    img.pixels.resize(t.numel());
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(t.at(c, y, x), 0.0, 1.0);
          img.pixels[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] =
              static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return img;
  };

  for (const auto& s : split.samples) {
    const std::string name = s.id + ".png";
    write_rgb_png((fs::path(root) / "A" / name).string(), to_rgb(s.image_t1));
    write_rgb_png((fs::path(root) / "B" / name).string(), to_rgb(s.image_t2));
    save_mask(s.mask, (fs::path(root) / "label" / name).string());
    list << name << "\n";
    if (s.prompt) {
      nlohmann::json j{{"id", s.id}, {"prompt", *s.prompt}};
      prompts_file << j.dump() << "\n";
    }
  }
}

}  // namespace segchange
