#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "cdcl/data.hpp"
#include "cdcl/errors.hpp"
#include "cdcl/rng.hpp"

namespace cdcl {

const char* to_string(SplitKind s) {
  switch (s) {
    case SplitKind::train: return "train";
    case SplitKind::val: return "val";
    case SplitKind::test: return "test";
  }
  return "?";
}

std::vector<std::string> SynthConfig::validate() const {
  std::vector<std::string> errors;
  if (num_classes == 0) errors.push_back("num_classes must be >= 1");
  if (source_size.height == 0 || source_size.width == 0) errors.push_back("source size must be positive");
  if (target_size.height == 0 || target_size.width == 0) errors.push_back("target size must be positive");
  if (!(fov_ratio_source > 0.0 && fov_ratio_source <= 1.0)) errors.push_back("fov_ratio_source must be in (0, 1]");
  if (!(fov_ratio_target > 0.0 && fov_ratio_target <= 1.0)) errors.push_back("fov_ratio_target must be in (0, 1]");
  if (!(structure_scale > 0.0 && structure_scale < 0.75)) errors.push_back("structure_scale must be in (0, 0.75)");
  if (lesions_per_class == 0) errors.push_back("lesions_per_class must be >= 1");
  if (!(class_probability > 0.0 && class_probability <= 1.0)) errors.push_back("class_probability must be in (0, 1]");
  if (!(noise_sigma >= 0.0)) errors.push_back("noise_sigma must be >= 0");
  return errors;
}

namespace {

enum class Stream : std::uint64_t { classes = 1, placement = 2, background = 3 };

Rng sample_stream(std::uint64_t seed, Domain domain, SplitKind split, std::size_t index, Stream which) {
  std::uint64_t key = splitmix64(static_cast<std::uint64_t>(domain) + 1);
  key = splitmix64(key ^ (static_cast<std::uint64_t>(split) + 11));
  key = splitmix64(key ^ static_cast<std::uint64_t>(index));
  key = splitmix64(key ^ static_cast<std::uint64_t>(which));
  return derive_rng(seed, key);
}

double gaussian(Rng& rng) {
  const double u1 = std::max(uniform01(rng), 1e-300);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Shape membership in coordinates normalized by the primitive size; every
// shape fits in a radius-1.3 neighbourhood.
bool inside_primitive(std::size_t shape, double u, double v) {
  const double rho = std::hypot(u, v);
  switch (shape) {
    case 0: return rho >= 0.65 && rho <= 1.0;  // ring
    case 1: return rho <= 0.7;                 // blob
    case 2: {                                  // cluster of three dots
      for (double a : {90.0, 210.0, 330.0}) {
        const double t = a * std::numbers::pi / 180.0;
        if (std::hypot(u - 0.6 * std::cos(t), v - 0.6 * std::sin(t)) <= 0.32) return true;
      }
      return false;
    }
    case 3: return std::abs(u) <= 1.0 && std::abs(v) <= 0.22;  // horizontal streak
    case 4: return std::abs(v) <= 1.0 && std::abs(u) <= 0.22;  // vertical streak
    case 5:                                                      // cross
      return (std::abs(u) <= 0.9 && std::abs(v) <= 0.16) || (std::abs(v) <= 0.9 && std::abs(u) <= 0.16);
    case 6: {  // square outline
      const double m = std::max(std::abs(u), std::abs(v));
      return m >= 0.6 && m <= 0.9;
    }
    default: {  // diagonal streak
      const double along = (u + v) / std::numbers::sqrt2;
      const double across = (u - v) / std::numbers::sqrt2;
      return std::abs(along) <= 1.0 && std::abs(across) <= 0.22;
    }
  }
}

constexpr double kReach = 1.3;

// Per-shape colour signature added to the fundus background (scaled by the
// lesion amplitude). Rows are pairwise non-parallel.
constexpr double kPalette[8][3] = {{1.0, 1.0, 0.4},  {-0.8, -0.8, -0.5}, {1.0, -0.5, -0.3}, {-0.6, 0.8, -0.2},
                                   {0.2, -0.3, 1.0}, {-0.8, -0.2, 0.9},  {0.9, 0.9, -0.6},  {-0.5, 1.0, 1.0}};

}  // namespace

Tensor synth_render(const SynthConfig& cfg, Domain domain, const std::vector<std::size_t>& classes,
                    std::uint64_t seed, SplitKind split, std::size_t index) {
  const ImageSize size = domain == Domain::source ? cfg.source_size : cfg.target_size;
  const double fov = domain == Domain::source ? cfg.fov_ratio_source : cfg.fov_ratio_target;
  const std::size_t H = size.height;
  const std::size_t W = size.width;
  const double radius = fov * static_cast<double>(std::min(H, W)) / 2.0;
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  const std::size_t plane = H * W;

  std::vector<double> img(3 * plane, 0.03);
  std::vector<bool> in_disc(plane, false);

  Rng bg = sample_stream(seed, domain, split, index, Stream::background);
  // Smooth illumination texture plus per-pixel noise.
  const double wave_a = uniform(bg, 0.0, 2.0 * std::numbers::pi);
  const double wave_b = uniform(bg, 0.0, 2.0 * std::numbers::pi);
  const double wave_f = uniform(bg, 1.5, 3.0) / radius;
  const std::array<double, 3> base{0.62, 0.30, 0.14};
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      const double r = std::hypot(dx, dy) / radius;
      if (r > 1.0) continue;
      in_disc[y * W + x] = true;
      const double shade = 1.0 - 0.35 * r * r +
                           0.05 * std::sin(wave_f * dx + wave_a) * std::cos(wave_f * dy + wave_b);
      for (std::size_t c = 0; c < 3; ++c) {
        double v = base[c] * shade;
        if (domain == Domain::source) v += cfg.color_shift[c];
        img[c * plane + y * W + x] = v;
      }
    }
  }

  Rng place = sample_stream(seed, domain, split, index, Stream::placement);
  const double size_px = cfg.structure_scale * radius;
  const double max_offset = std::max(0.0, radius - kReach * size_px);
  for (std::size_t k : classes) {
    if (k >= cfg.num_classes) throw ContractError("synth_render: class index out of range");
    const std::size_t shape = k % 8;
    // Classes past the first eight reuse a shape with the colour inverted.
    const double polarity = (k / 8) % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t n = 0; n < cfg.lesions_per_class; ++n) {
      const double amp = polarity * uniform(place, 0.22, 0.38);
      const double t = uniform(place, 0.0, 2.0 * std::numbers::pi);
      const double rr = max_offset * std::sqrt(uniform01(place));
      const double py = cy + rr * std::sin(t);
      const double px = cx + rr * std::cos(t);

      const double reach = kReach * size_px + 1.0;
      const long y_lo = std::max(0L, static_cast<long>(std::floor(py - reach)));
      const long y_hi = std::min(static_cast<long>(H) - 1, static_cast<long>(std::ceil(py + reach)));
      const long x_lo = std::max(0L, static_cast<long>(std::floor(px - reach)));
      const long x_hi = std::min(static_cast<long>(W) - 1, static_cast<long>(std::ceil(px + reach)));
      for (long y = y_lo; y <= y_hi; ++y) {
        for (long x = x_lo; x <= x_hi; ++x) {
          const std::size_t idx = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
          if (!in_disc[idx]) continue;
          if (!inside_primitive(shape, (static_cast<double>(x) - px) / size_px,
                                (static_cast<double>(y) - py) / size_px)) {
            continue;
          }
          for (std::size_t c = 0; c < 3; ++c) img[c * plane + idx] += amp * kPalette[shape][c];
        }
      }
    }
  }

  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      double& v = img[c * plane + i];
      if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * gaussian(bg);
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  return Tensor::from({3, H, W}, std::move(img));
}

std::vector<Sample> synth_generate(const SynthConfig& cfg, Domain domain, SplitKind split,
                                   std::size_t count, std::uint64_t seed) {
  if (auto errors = cfg.validate(); !errors.empty()) throw ContractError("invalid SynthConfig: " + errors.front());
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng cls = sample_stream(seed, domain, split, i, Stream::classes);
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
      if (uniform01(cls) < cfg.class_probability) active.push_back(k);
    }
    if (active.empty()) active.push_back(uniform_index(cls, cfg.num_classes));

    Sample s;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%s_%05zu", to_string(domain), to_string(split), i);
    s.id = id;
    s.domain = domain;
    s.labels.assign(cfg.num_classes, 0.0);
    for (auto k : active) s.labels[k] = 1.0;
    s.image = synth_render(cfg, domain, active, seed, split, i);
    out.push_back(std::move(s));
  }
  return out;
}

TwoDomainData synth_benchmark(const SynthConfig& cfg) {
  TwoDomainData data;
  data.source = synth_generate(cfg, Domain::source, SplitKind::train, cfg.source_train, cfg.seed);
  data.target.train = synth_generate(cfg, Domain::target, SplitKind::train, cfg.target_train, cfg.seed);
  data.target.val = synth_generate(cfg, Domain::target, SplitKind::val, cfg.target_val, cfg.seed);
  data.target.test = synth_generate(cfg, Domain::target, SplitKind::test, cfg.target_test, cfg.seed);
  return data;
}

DatasetSplit make_splits(const std::vector<Sample>& samples, std::array<double, 3> fractions,
                         std::uint64_t seed) {
  if (samples.empty()) throw ContractError("make_splits: no samples");
  for (double f : fractions) {
    if (f < 0.0) throw ContractError("make_splits: negative fraction");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ContractError("make_splits: fractions must sum to 1");
  }
  const std::size_t n = samples.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = derive_rng(seed, 0x5eed5);
  shuffle(order, rng);

  const auto count = [n](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(n))); };
  const std::size_t n_train = std::min(n, count(fractions[0]));
  const std::size_t n_val = std::min(n - n_train, count(fractions[1]));

  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
    dst.push_back(samples[order[i]]);
  }
  return split;
}

std::vector<Sample> subsample(const std::vector<Sample>& samples, double fraction, std::uint64_t seed) {
  if (samples.empty()) throw ContractError("subsample: no samples");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("subsample: fraction must be in (0, 1]");
  if (fraction == 1.0) return samples;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = derive_rng(seed, 0xf4ac);
  shuffle(order, rng);
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(samples.size()))));
  std::vector<Sample> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(samples[order[i]]);
  return out;
}

}  // namespace cdcl
