#include "oxygan/datapipe.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json_detail.hpp"
#include "oxygan/oxt.hpp"

namespace fs = std::filesystem;

namespace oxygan {

std::string tissue_name(Tissue t) {
  switch (t) {
    case Tissue::porcine_bowel: return "porcine_bowel";
    case Tissue::lamb_uterus: return "lamb_uterus";
    case Tissue::rabbit_uterus: return "rabbit_uterus";
    case Tissue::synthetic: return "synthetic";
  }
  throw Error("unreachable tissue kind");
}

Tissue tissue_from_name(const std::string& s) {
  if (s == "porcine_bowel") return Tissue::porcine_bowel;
  if (s == "lamb_uterus") return Tissue::lamb_uterus;
  if (s == "rabbit_uterus") return Tissue::rabbit_uterus;
  if (s == "synthetic") return Tissue::synthetic;
  throw ConfigError("unknown tissue \"" + s + "\"");
}

std::vector<const CaseEntry*> DatasetManifest::split(bool test) const {
  std::vector<const CaseEntry*> out;
  for (const CaseEntry& c : cases)
    if (c.is_test == test) out.push_back(&c);
  return out;
}

void DatasetManifest::validate_unique_ids() const {
  for (std::size_t i = 0; i < cases.size(); ++i)
    for (std::size_t j = i + 1; j < cases.size(); ++j)
      if (cases[i].case_id == cases[j].case_id)
        throw ConfigError("manifest: duplicate case_id \"" + cases[i].case_id + "\"");
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
  m.validate_unique_ids();
  nlohmann::json j;
  j["kind"] = "cases";
  nlohmann::json arr = nlohmann::json::array();
  for (const CaseEntry& c : m.cases) {
    arr.push_back({{"case_id", c.case_id},
                   {"tissue", tissue_name(c.tissue)},
                   {"rgb_path", c.rgb_path},
                   {"sto2_path", c.sto2_path},
                   {"split", c.is_test ? "test" : "train"}});
  }
  j["cases"] = std::move(arr);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("manifest write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path, bool check_files) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
  if (j.value("kind", "") != "cases")
    throw ConfigError("manifest " + path + ": expected kind \"cases\"");
  DatasetManifest m;
  const fs::path base = fs::path(path).parent_path();
  for (const auto& cj : j.at("cases")) {
    CaseEntry c;
    try {
      c.case_id = cj.at("case_id").get<std::string>();
      c.tissue = tissue_from_name(cj.at("tissue").get<std::string>());
      c.rgb_path = (base / cj.at("rgb_path").get<std::string>()).string();
      c.sto2_path = (base / cj.at("sto2_path").get<std::string>()).string();
      const std::string split = cj.at("split").get<std::string>();
      if (split != "train" && split != "test")
        throw ConfigError("manifest " + path + ": case " + c.case_id +
                          ": split must be train|test");
      c.is_test = split == "test";
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("manifest " + path + ": cases[]: " + e.what());
    }
    if (check_files) {
      if (!fs::exists(c.rgb_path))
        throw IoError("manifest " + path + ": missing file " + c.rgb_path);
      if (!fs::exists(c.sto2_path))
        throw IoError("manifest " + path + ": missing file " + c.sto2_path);
    }
    m.cases.push_back(std::move(c));
  }
  m.validate_unique_ids();
  return m;
}

int train_case_count(int n_cases, double train_ratio) {
  if (n_cases < 2)
    throw ConfigError("dataset split needs at least 2 cases, got " + std::to_string(n_cases));
  if (train_ratio <= 0.0 || train_ratio >= 1.0)
    throw ConfigError("train ratio must be in (0, 1)");
  const int raw = static_cast<int>(std::lround(static_cast<double>(n_cases) * train_ratio));
  return std::min(std::max(raw, 1), n_cases - 1);
}

CropGrid crop_grid(int height, int width, int window, int stride) {
  if (window < 1) throw GeometryError("crop window must be positive");
  if (stride < 1) throw GeometryError("crop stride must be positive");
  if (window > height || window > width)
    throw GeometryError("crop window " + std::to_string(window) + " exceeds image " +
                        std::to_string(height) + "x" + std::to_string(width));
  CropGrid g;
  g.rows = (height - window) / stride + 1;
  g.cols = (width - window) / stride + 1;
  return g;
}

Tensor crop_at(const Tensor& image, int top, int left, int window) {
  if (image.ndim() != 3)
    throw ShapeError("crop_at expects CHW, got " + dims_to_string(image.dims));
  const int C = image.dims[0], H = image.dims[1], W = image.dims[2];
  if (top < 0 || left < 0 || top + window > H || left + window > W)
    throw GeometryError("crop at (" + std::to_string(top) + "," + std::to_string(left) +
                        ") size " + std::to_string(window) + " escapes " +
                        std::to_string(H) + "x" + std::to_string(W));
  Tensor out({C, window, window});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < window; ++y)
      std::copy_n(&image.at3(c, top + y, left), window, &out.at3(c, y, 0));
  return out;
}

Tensor center_crop(const Tensor& image, int window) {
  const int H = image.dims[1], W = image.dims[2];
  if (window > H || window > W)
    throw GeometryError("center crop " + std::to_string(window) + " exceeds image " +
                        std::to_string(H) + "x" + std::to_string(W));
  return crop_at(image, (H - window) / 2, (W - window) / 2, window);
}

std::vector<Tensor> crop_slide(const Tensor& image, int window, int stride) {
  if (image.ndim() != 3)
    throw ShapeError("crop_slide expects CHW, got " + dims_to_string(image.dims));
  const CropGrid g = crop_grid(image.dims[1], image.dims[2], window, stride);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(g.count()));
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) out.push_back(crop_at(image, r * stride, c * stride, window));
  return out;
}

Tensor resize(const Tensor& image, int out_h, int out_w, Interp interp) {
  if (image.ndim() != 3)
    throw ShapeError("resize expects CHW, got " + dims_to_string(image.dims));
  if (out_h < 1 || out_w < 1) throw GeometryError("resize target must be positive");
  const int C = image.dims[0], H = image.dims[1], W = image.dims[2];
  if (out_h == H && out_w == W) return image;
  Tensor out({C, out_h, out_w});
  const double sy = out_h > 1 ? static_cast<double>(H - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(W - 1) / (out_w - 1) : 0.0;
  for (int y = 0; y < out_h; ++y) {
    const double fy = out_h > 1 ? y * sy : (H - 1) / 2.0;
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, H - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = out_w > 1 ? x * sx : (W - 1) / 2.0;
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, W - 1);
      const double wx = fx - x0;
      for (int c = 0; c < C; ++c) {
        if (interp == Interp::nearest) {
          const int ny = wy < 0.5 ? y0 : y1;
          const int nx = wx < 0.5 ? x0 : x1;
          out.at3(c, y, x) = image.at3(c, ny, nx);
        } else {
          const double top = (1.0 - wx) * image.at3(c, y0, x0) + wx * image.at3(c, y0, x1);
          const double bot = (1.0 - wx) * image.at3(c, y1, x0) + wx * image.at3(c, y1, x1);
          out.at3(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
      }
    }
  }
  return out;
}

Tensor replicate_channels(const Tensor& mono) {
  if (mono.ndim() != 3 || mono.dims[0] != 1)
    throw ShapeError("replicate_channels expects 1xHxW, got " + dims_to_string(mono.dims));
  Tensor out({3, mono.dims[1], mono.dims[2]});
  const std::size_t plane = mono.data.size();
  for (int c = 0; c < 3; ++c)
    std::copy(mono.data.begin(), mono.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(c * plane));
  return out;
}

Tensor normalize_unit(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.data) v = 2.0f * v - 1.0f;
  return out;
}

Tensor denormalize_unit(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.data) v = (v + 1.0f) * 0.5f;
  return out;
}

void SynthConfig::validate() const {
  if (depth <= 0.0f) throw ConfigError("synth.depth must be positive");
  if (field_smoothness < 1) throw ConfigError("synth.field_smoothness must be >= 1");
  if (height < 8 || width < 8) throw ConfigError("synth image dims must be >= 8");
}

Tensor synth_rgb_from_sto2(const Tensor& sto2, const SynthConfig& cfg) {
  if (sto2.ndim() != 3 || sto2.dims[0] != 1)
    throw ShapeError("synth_rgb_from_sto2 expects 1xHxW, got " + dims_to_string(sto2.dims));
  const int H = sto2.dims[1], W = sto2.dims[2];
  Tensor rgb({3, H, W});
  for (int c = 0; c < 3; ++c) {
    const float eo = cfg.eps_oxy[c];
    const float ed = cfg.eps_deoxy[c];
    for (int i = 0; i < H * W; ++i) {
      const float s = sto2.data[static_cast<std::size_t>(i)];
      const float mu = s * eo + (1.0f - s) * ed;
      rgb.data[static_cast<std::size_t>(c * H * W + i)] = std::exp(-cfg.depth * mu);
    }
  }
  return rgb;
}

SynthPair synth_pair(const SynthConfig& cfg, std::uint64_t case_seed) {
  cfg.validate();
  Rng rng(Rng::derive(cfg.seed, case_seed));
  const int H = cfg.height, W = cfg.width;
  Tensor s({1, H, W});
  for (float& v : s.data) v = 0.5f;
  const double sigma_base = std::min(H, W);
  for (int k = 0; k < cfg.field_smoothness; ++k) {
    const double cy = rng.uniform(0.0, H);
    const double cx = rng.uniform(0.0, W);
    const double sigma = rng.uniform(0.08, 0.25) * sigma_base;
    const double amp = rng.uniform(0.25, 0.75) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        s.at3(0, y, x) += static_cast<float>(amp * std::exp(-d2 * inv2s2));
      }
  }
  for (float& v : s.data) v = std::min(1.0f, std::max(0.0f, v));
  SynthPair out;
  out.rgb = synth_rgb_from_sto2(s, cfg);
  out.sto2 = std::move(s);
  return out;
}

std::vector<SamplePair> pairs_from_case(const std::string& case_id, const Tensor& rgb,
                                        const Tensor& sto2, const DataGeometry& geom,
                                        bool augment) {
  if (rgb.ndim() != 3 || rgb.dims[0] != 3)
    throw ShapeError("case rgb must be 3xHxW, got " + dims_to_string(rgb.dims));
  if (sto2.ndim() != 3 || sto2.dims[0] != 1)
    throw ShapeError("case sto2 must be 1xHxW, got " + dims_to_string(sto2.dims));
  if (rgb.dims[1] != sto2.dims[1] || rgb.dims[2] != sto2.dims[2])
    throw_shape_mismatch("pairs_from_case", rgb.dims, sto2.dims);

  std::vector<std::pair<int, int>> offsets;
  if (augment) {
    const CropGrid g = crop_grid(rgb.dims[1], rgb.dims[2], geom.window, geom.stride);
    offsets.reserve(static_cast<std::size_t>(g.count()));
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) offsets.emplace_back(r * geom.stride, c * geom.stride);
  } else {
    if (geom.window > rgb.dims[1] || geom.window > rgb.dims[2])
      throw GeometryError("center crop " + std::to_string(geom.window) + " exceeds case " +
                          dims_to_string(rgb.dims));
    offsets.emplace_back((rgb.dims[1] - geom.window) / 2, (rgb.dims[2] - geom.window) / 2);
  }

  std::vector<SamplePair> out;
  out.reserve(offsets.size());
  int idx = 0;
  for (const auto& [top, left] : offsets) {
    SamplePair p;
    p.case_id = case_id;
    p.crop_index = idx++;
    Tensor xc = resize(crop_at(rgb, top, left, geom.window), geom.net_size, geom.net_size,
                       geom.interp);
    Tensor yc = resize(crop_at(sto2, top, left, geom.window), geom.net_size, geom.net_size,
                       geom.interp);
    p.x = normalize_unit(xc);
    p.y = normalize_unit(replicate_channels(yc));
    out.push_back(std::move(p));
  }
  return out;
}

BuiltDataset build_dataset(const std::string& manifest_path, const DataGeometry& geom,
                           bool augment) {
  const DatasetManifest m = load_manifest(manifest_path, true);
  if (m.cases.size() < 2)
    throw ConfigError("dataset needs at least 2 cases, got " + std::to_string(m.cases.size()));
  if (m.split(true).empty()) throw ConfigError("dataset has no test cases");
  if (m.split(false).empty()) throw ConfigError("dataset has no train cases");
  BuiltDataset out;
  for (const CaseEntry& c : m.cases) {
    const Tensor rgb = oxt_load(c.rgb_path);
    const Tensor sto2 = oxt_load(c.sto2_path);
    auto pairs = pairs_from_case(c.case_id, rgb, sto2, geom, augment);
    auto& dst = c.is_test ? out.test : out.train;
    for (auto& p : pairs) dst.push_back(std::move(p));
  }
  return out;
}

}  // namespace oxygan
