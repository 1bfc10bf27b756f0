#pragma once

#include <string>

#include "oxygan/objective.hpp"
#include "oxygan/tensor.hpp"

namespace oxygan {

enum class Tissue { porcine_bowel, lamb_uterus, rabbit_uterus, synthetic };

std::string tissue_name(Tissue t);
Tissue tissue_from_name(const std::string& s);

struct CaseEntry {
  std::string case_id;
  Tissue tissue = Tissue::synthetic;
  std::string rgb_path;   // 3xHxW OXT1, values in [0,1]
  std::string sto2_path;  // 1xHxW OXT1, values in [0,1]
  bool is_test = false;
};

struct DatasetManifest {
  std::vector<CaseEntry> cases;

  std::vector<const CaseEntry*> split(bool test) const;
  void validate_unique_ids() const;
};

// Paths inside a manifest are relative to the manifest file.
void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path, bool check_files = true);

// Train split sizing: round(n * ratio) clamped so both splits keep at
// least one case. 222 cases at 0.752 give the 167/55 split.
int train_case_count(int n_cases, double train_ratio);

struct CropGrid {
  int rows = 0;
  int cols = 0;
  int count() const { return rows * cols; }
};

CropGrid crop_grid(int height, int width, int window, int stride);

// Crops at offsets (r*stride, c*stride) in raster order; every crop is a
// bitwise sub-array of the image.
std::vector<Tensor> crop_slide(const Tensor& image, int window, int stride);
Tensor crop_at(const Tensor& image, int top, int left, int window);
Tensor center_crop(const Tensor& image, int window);

enum class Interp { bilinear, nearest };

// Corner-aligned sampling; constant images stay constant and matching
// dims are an exact identity.
Tensor resize(const Tensor& image, int out_h, int out_w, Interp interp = Interp::bilinear);

Tensor replicate_channels(const Tensor& mono);

// [0,1] <-> [-1,1]
Tensor normalize_unit(const Tensor& image);
Tensor denormalize_unit(const Tensor& image);

struct SynthConfig {
  float eps_oxy[3] = {0.2f, 0.9f, 0.3f};
  float eps_deoxy[3] = {0.8f, 0.4f, 0.9f};
  float depth = 1.0f;        // path length x concentration
  int field_smoothness = 5;  // gaussian blobs per saturation map
  int height = 96;
  int width = 128;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthPair {
  Tensor sto2;  // 1xHxW in [0,1]
  Tensor rgb;   // 3xHxW in (0,1]
};

// Beer-Lambert forward model:
//   rgb_c = exp(-depth * (s*eps_oxy_c + (1-s)*eps_deoxy_c))
Tensor synth_rgb_from_sto2(const Tensor& sto2, const SynthConfig& cfg);

// Saturation map as a clamped sum of gaussian blobs around 0.5; rgb is a
// pure function of it, so the translation task is well-posed.
SynthPair synth_pair(const SynthConfig& cfg, std::uint64_t case_seed);

struct DataGeometry {
  int window = 64;
  int stride = 16;
  int net_size = 64;  // pairs are resized to net_size x net_size
  Interp interp = Interp::bilinear;
};

// Window/stride slide, resize to network size, replicate the mono target
// to three channels, then map into [-1,1]. x and y always use identical
// crop offsets. With augment=false each case contributes one center crop.
std::vector<SamplePair> pairs_from_case(const std::string& case_id, const Tensor& rgb,
                                        const Tensor& sto2, const DataGeometry& geom,
                                        bool augment);

struct BuiltDataset {
  std::vector<SamplePair> train;
  std::vector<SamplePair> test;
};

// Loads every case in the manifest and expands splits per the geometry.
BuiltDataset build_dataset(const std::string& manifest_path, const DataGeometry& geom,
                           bool augment);

}  // namespace oxygan
