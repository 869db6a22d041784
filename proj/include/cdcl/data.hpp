#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdcl/tensor.hpp"

namespace cdcl {

enum class Domain { source, target };

const char* to_string(Domain d);
Domain parse_domain(const std::string& s);

// One image [c x H x W] in [0,1] with its multi-hot (or mixed) label vector.
struct Sample {
  std::string id;
  Domain domain = Domain::target;
  Tensor image;
  std::vector<double> labels;

  std::size_t channels() const { return image.dim(0); }
  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

struct DatasetSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

// Labeled source pool plus the split target domain.
struct TwoDomainData {
  std::vector<Sample> source;
  DatasetSplit target;
};

// --- NetPBM --------------------------------------------------------------

// Binary P6 (3 channels) or P5 (1 channel), maxval 255.
Tensor read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Tensor& image);

// --- Manifests -----------------------------------------------------------

// CSV with header `id,path,domain,label_0,...,label_{C-1}`. Relative image
// paths resolve against the manifest's directory.
std::vector<Sample> load_manifest(const std::filesystem::path& path);

// `paths[i]` is written verbatim into the path column for samples[i].
void write_manifest(const std::filesystem::path& path, const std::vector<Sample>& samples,
                    const std::vector<std::string>& paths);

// Reads train.csv / val.csv / test.csv from a dataset directory. Source rows
// of train.csv form the source pool; source rows elsewhere are ignored.
TwoDomainData load_dataset_dir(const std::filesystem::path& dir);

// --- Geometry ------------------------------------------------------------

struct ContentBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Largest aspect-preserving box that fits the target, centered.
ContentBox fit_box(std::size_t h, std::size_t w, std::size_t target_h, std::size_t target_w);

// Bilinear resize into fit_box(...), zero elsewhere.
Tensor resize_keep_aspect(const Tensor& image, std::size_t target_h, std::size_t target_w);

// Appends mean-of-existing channels, or drops trailing channels, to reach `channels`.
Tensor align_channels(const Tensor& image, std::size_t channels);

// --- Synthetic two-domain benchmark --------------------------------------

struct ImageSize {
  std::size_t height = 0;
  std::size_t width = 0;
};

struct SynthConfig {
  std::size_t num_classes = 8;
  ImageSize source_size{64, 64};
  ImageSize target_size{64, 64};
  double fov_ratio_source = 0.95;
  double fov_ratio_target = 0.55;
  double structure_scale = 0.3;
  std::size_t lesions_per_class = 3;
  std::array<double, 3> color_shift{0.15, 0.0, 0.0};
  double class_probability = 0.25;
  double noise_sigma = 0.03;
  std::size_t source_train = 1000;
  std::size_t target_train = 200;
  std::size_t target_val = 100;
  std::size_t target_test = 300;
  std::uint64_t seed = 2024;

  // Empty when valid; otherwise one message per violated field.
  std::vector<std::string> validate() const;
};

enum class SplitKind { train, val, test };
const char* to_string(SplitKind s);

// Renders one image containing exactly the listed classes. Background noise
// and primitive placement use independent streams derived from
// (seed, domain, split, index), so adding or removing a class does not
// perturb the background.
Tensor synth_render(const SynthConfig& cfg, Domain domain, const std::vector<std::size_t>& classes,
                    std::uint64_t seed, SplitKind split, std::size_t index);

// `count` samples with i.i.d. class activations (at least one per image).
std::vector<Sample> synth_generate(const SynthConfig& cfg, Domain domain, SplitKind split,
                                   std::size_t count, std::uint64_t seed);

// Sample counts come from the config.
TwoDomainData synth_benchmark(const SynthConfig& cfg);

// --- Splitting -----------------------------------------------------------

// Deterministic shuffled partition; fractions must sum to 1.
DatasetSplit make_splits(const std::vector<Sample>& samples, std::array<double, 3> fractions,
                         std::uint64_t seed);

// First round(fraction * n) samples of a seeded permutation (at least one).
std::vector<Sample> subsample(const std::vector<Sample>& samples, double fraction, std::uint64_t seed);

}  // namespace cdcl
