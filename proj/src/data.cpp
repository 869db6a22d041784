#include "cdcl/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cdcl/errors.hpp"

namespace fs = std::filesystem;

namespace cdcl {

const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw IngestionError("unknown domain '" + s + "' (expected source or target)");
}

// --- NetPBM ----------------------------------------------------------------

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

std::size_t parse_extent(const std::string& tok, const fs::path& path) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw IngestionError(path.string() + ": bad header field '" + tok + "'");
  }
}

}  // namespace

Tensor read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());
  const std::string magic = next_token(in);
  std::size_t channels = 0;
  if (magic == "P6") {
    channels = 3;
  } else if (magic == "P5") {
    channels = 1;
  } else {
    throw IngestionError(path.string() + ": unsupported NetPBM magic '" + magic + "'");
  }
  const std::size_t w = parse_extent(next_token(in), path);
  const std::size_t h = parse_extent(next_token(in), path);
  const std::size_t maxval = parse_extent(next_token(in), path);
  if (maxval != 255) throw IngestionError(path.string() + ": only 8-bit images (maxval 255) are supported");

  std::vector<unsigned char> raw(w * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw IngestionError(path.string() + ": truncated pixel data");
  }
  std::vector<double> v(raw.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        v[(c * h + y) * w + x] = raw[(y * w + x) * channels + c] / 255.0;
      }
    }
  }
  return Tensor::from({channels, h, w}, std::move(v));
}

void write_pnm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw DimensionError("write_pnm needs a [1|3 x H x W] image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::vector<unsigned char> raw(c * h * w);
  auto v = image.values();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double px = std::clamp(v[(ch * h + y) * w + x], 0.0, 1.0);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(px * 255.0));
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write image " + path.string());
  out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IngestionError("failed writing image " + path.string());
}

// --- Manifests ---------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

std::vector<Sample> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path.string() + ": empty manifest");
  const auto header = split_csv(strip_cr(line));
  if (header.size() < 4 || header[0] != "id" || header[1] != "path" || header[2] != "domain") {
    throw IngestionError(path.string() + ": header must be id,path,domain,label_0,...");
  }
  const std::size_t num_classes = header.size() - 3;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (header[3 + k] != "label_" + std::to_string(k)) {
      throw IngestionError(path.string() + ": header column " + std::to_string(3 + k) + " should be label_" +
                           std::to_string(k) + ", found '" + header[3 + k] + "'");
    }
  }

  const fs::path base = path.parent_path();
  std::vector<Sample> samples;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = path.string() + " row " + std::to_string(row);
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw IngestionError(where + ": expected " + std::to_string(num_classes) + " labels, found " +
                           std::to_string(fields.size() < 3 ? 0 : fields.size() - 3));
    }
    Sample s;
    s.id = fields[0];
    try {
      s.domain = parse_domain(fields[2]);
    } catch (const IngestionError& e) {
      throw IngestionError(where + ": " + e.what());
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
      const auto& f = fields[3 + k];
      if (f != "0" && f != "1") throw IngestionError(where + ": label '" + f + "' is not 0 or 1");
      s.labels.push_back(f == "1" ? 1.0 : 0.0);
    }
    fs::path img = fields[1];
    if (img.is_relative()) img = base / img;
    if (!fs::exists(img)) throw IngestionError(where + ": missing image " + img.string());
    s.image = read_pnm(img);
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_manifest(const fs::path& path, const std::vector<Sample>& samples,
                    const std::vector<std::string>& paths) {
  if (samples.size() != paths.size()) throw ContractError("write_manifest: one path per sample required");
  if (samples.empty()) throw ContractError("write_manifest: no samples");
  const std::size_t num_classes = samples.front().labels.size();
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write manifest " + path.string());
  out << "id,path,domain";
  for (std::size_t k = 0; k < num_classes; ++k) out << ",label_" << k;
  out << '\n';
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.labels.size() != num_classes) throw ContractError("write_manifest: inconsistent label width");
    out << s.id << ',' << paths[i] << ',' << to_string(s.domain);
    for (double l : s.labels) out << ',' << (l >= 0.5 ? 1 : 0);
    out << '\n';
  }
}

TwoDomainData load_dataset_dir(const fs::path& dir) {
  TwoDomainData data;
  auto keep_target = [](std::vector<Sample> rows) {
    std::vector<Sample> out;
    for (auto& s : rows) {
      if (s.domain == Domain::target) out.push_back(std::move(s));
    }
    return out;
  };
  for (const char* name : {"train.csv", "val.csv", "test.csv"}) {
    if (!fs::exists(dir / name)) throw IngestionError("missing manifest " + (dir / name).string());
  }
  auto train = load_manifest(dir / "train.csv");
  for (auto& s : train) {
    (s.domain == Domain::source ? data.source : data.target.train).push_back(std::move(s));
  }
  data.target.val = keep_target(load_manifest(dir / "val.csv"));
  data.target.test = keep_target(load_manifest(dir / "test.csv"));
  return data;
}

// --- Geometry ----------------------------------------------------------------

ContentBox fit_box(std::size_t h, std::size_t w, std::size_t target_h, std::size_t target_w) {
  if (h == 0 || w == 0 || target_h == 0 || target_w == 0) throw ContractError("fit_box: extents must be positive");
  const double s = std::min(static_cast<double>(target_h) / static_cast<double>(h),
                            static_cast<double>(target_w) / static_cast<double>(w));
  ContentBox box;
  box.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(h) * s)), 1, target_h);
  box.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(static_cast<double>(w) * s)), 1, target_w);
  box.top = (target_h - box.height) / 2;
  box.left = (target_w - box.width) / 2;
  return box;
}

Tensor resize_keep_aspect(const Tensor& image, std::size_t target_h, std::size_t target_w) {
  if (image.rank() != 3) throw DimensionError("resize expects [c x H x W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  if (h == target_h && w == target_w) return image.detach();

  const ContentBox box = fit_box(h, w, target_h, target_w);
  const double sy = static_cast<double>(h) / static_cast<double>(box.height);
  const double sx = static_cast<double>(w) / static_cast<double>(box.width);
  auto src = image.values();
  std::vector<double> out(c * target_h * target_w, 0.0);

  // Half-pixel-center sampling with edge clamping.
  auto coord = [](std::size_t i, double scale, std::size_t extent, std::size_t& lo, std::size_t& hi, double& frac) {
    double p = (static_cast<double>(i) + 0.5) * scale - 0.5;
    p = std::clamp(p, 0.0, static_cast<double>(extent - 1));
    lo = static_cast<std::size_t>(std::floor(p));
    hi = std::min(lo + 1, extent - 1);
    frac = p - static_cast<double>(lo);
  };

  for (std::size_t y = 0; y < box.height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, sy, h, y0, y1, fy);
    for (std::size_t x = 0; x < box.width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, sx, w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* plane = src.data() + ch * h * w;
        const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
        const double bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
        out[(ch * target_h + box.top + y) * target_w + box.left + x] = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return Tensor::from({c, target_h, target_w}, std::move(out));
}

Tensor align_channels(const Tensor& image, std::size_t channels) {
  const std::size_t c = image.dim(0);
  if (c == channels) return image;
  const std::size_t plane = image.dim(1) * image.dim(2);
  auto v = image.values();
  std::vector<double> out(channels * plane);
  const std::size_t keep = std::min(c, channels);
  std::copy_n(v.data(), keep * plane, out.data());
  for (std::size_t i = 0; i < plane && channels > c; ++i) {
    double m = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) m += v[ch * plane + i];
    m /= static_cast<double>(c);
    for (std::size_t ch = c; ch < channels; ++ch) out[ch * plane + i] = m;
  }
  return Tensor::from({channels, image.dim(1), image.dim(2)}, std::move(out));
}

}  // namespace cdcl
