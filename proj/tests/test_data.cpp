#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "cdcl/data.hpp"
#include "cdcl/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cdcl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("cdcl_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

Tensor gradient_image(std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> v(c * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i % 256) / 255.0;
  return Tensor::from({c, h, w}, std::move(v));
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.values();
  auto y = b.values();
  return std::equal(x.begin(), x.end(), y.begin());
}

bool all_in_unit_interval(const Tensor& t) {
  auto v = t.values();
  return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && x <= 1.0; });
}

// Pixels where adding `cls` changed channel 0 relative to the empty render.
std::size_t primitive_area(const SynthConfig& cfg, Domain d, std::size_t cls, std::size_t index) {
  const Tensor with = synth_render(cfg, d, {cls}, 7, SplitKind::train, index);
  const Tensor without = synth_render(cfg, d, {}, 7, SplitKind::train, index);
  const std::size_t plane = with.dim(1) * with.dim(2);
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) n += with.values()[i] != without.values()[i];
  return n;
}

}  // namespace

TEST_CASE("pnm round trip") {
  TempDir dir("pnm");
  for (std::size_t c : {1u, 3u}) {
    const Tensor img = gradient_image(c, 5, 7);
    write_pnm(dir.path / "a.pnm", img);
    const Tensor back = read_pnm(dir.path / "a.pnm");
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back.values()[i] == img.values()[i]);
  }

  write_text(dir.path / "comment.ppm", "P6\n# made by hand\n1 1\n255\n");
  {
    std::ofstream(dir.path / "comment.ppm", std::ios::app | std::ios::binary).write("\xff\x00\x80", 3);
  }
  const Tensor px = read_pnm(dir.path / "comment.ppm");
  CHECK(px.shape() == Shape{3, 1, 1});
  CHECK(px.values()[0] == 1.0);
  CHECK(px.values()[1] == 0.0);
  CHECK(px.values()[2] == 128.0 / 255.0);

  write_text(dir.path / "short.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(read_pnm(dir.path / "short.ppm"), IngestionError);
  write_text(dir.path / "deep.ppm", "P6\n1 1\n65535\n");
  CHECK_THROWS_AS(read_pnm(dir.path / "deep.ppm"), IngestionError);
  write_text(dir.path / "ascii.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_pnm(dir.path / "ascii.ppm"), IngestionError);
}

TEST_CASE("load_manifest") {
  TempDir dir("manifest");
  fs::create_directories(dir.path / "img");
  write_pnm(dir.path / "img" / "a.ppm", gradient_image(3, 4, 4));
  write_pnm(dir.path / "img" / "b.ppm", gradient_image(3, 4, 6));

  SUBCASE("two rows, three classes") {
    write_text(dir.path / "m.csv",
               "id,path,domain,label_0,label_1,label_2\n"
               "a,img/a.ppm,target,1,0,1\n"
               "b,img/b.ppm,source,0,1,0\n");
    const auto samples = load_manifest(dir.path / "m.csv");
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].labels == std::vector<double>{1, 0, 1});
    CHECK(samples[1].labels.size() == 3);
    CHECK(samples[1].domain == Domain::source);
    CHECK(samples[1].width() == 6);
    CHECK(all_in_unit_interval(samples[0].image));
  }

  SUBCASE("short row names the row") {
    write_text(dir.path / "m.csv",
               "id,path,domain,label_0,label_1,label_2\n"
               "a,img/a.ppm,target,1,0,1\n"
               "b,img/b.ppm,target,0,1\n");
    try {
      load_manifest(dir.path / "m.csv");
      FAIL("expected an ingestion error");
    } catch (const IngestionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("row 3") != std::string::npos);
      CHECK(msg.find("expected 3 labels, found 2") != std::string::npos);
    }
  }

  SUBCASE("missing image names the path") {
    write_text(dir.path / "m.csv", "id,path,domain,label_0\nz,img/nope.ppm,target,1\n");
    try {
      load_manifest(dir.path / "m.csv");
      FAIL("expected an ingestion error");
    } catch (const IngestionError& e) {
      CHECK(std::string(e.what()).find("nope.ppm") != std::string::npos);
    }
  }

  SUBCASE("malformed rows") {
    write_text(dir.path / "bad_label.csv", "id,path,domain,label_0\na,img/a.ppm,target,0.5\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "bad_label.csv"), IngestionError);
    write_text(dir.path / "bad_domain.csv", "id,path,domain,label_0\na,img/a.ppm,other,1\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "bad_domain.csv"), IngestionError);
    write_text(dir.path / "bad_header.csv", "id,file,domain,label_0\na,img/a.ppm,target,1\n");
    CHECK_THROWS_AS(load_manifest(dir.path / "bad_header.csv"), IngestionError);
    CHECK_THROWS_AS(load_manifest(dir.path / "absent.csv"), IngestionError);
  }

  SUBCASE("write then load") {
    SynthConfig cfg;
    cfg.num_classes = 4;
    cfg.target_size = {32, 40};
    auto samples = synth_generate(cfg, Domain::target, SplitKind::val, 3, 5);
    std::vector<std::string> paths;
    for (const auto& s : samples) {
      paths.push_back("img/" + s.id + ".ppm");
      write_pnm(dir.path / paths.back(), s.image);
    }
    write_manifest(dir.path / "out.csv", samples, paths);
    const auto back = load_manifest(dir.path / "out.csv");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(back[i].id == samples[i].id);
      CHECK(back[i].labels == samples[i].labels);
      for (std::size_t j = 0; j < back[i].image.numel(); ++j) {
        CHECK(std::abs(back[i].image.values()[j] - samples[i].image.values()[j]) <= 0.5 / 255.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("resize_keep_aspect") {
  std::mt19937_64 rng(3);
  SUBCASE("identity") {
    const Tensor img = testing::random_tensor({3, 9, 9}, rng, 0.0, 1.0, false);
    CHECK(same_values(resize_keep_aspect(img, 9, 9), img));
  }
  SUBCASE("square into wide canvas") {
    const Tensor img = Tensor::full({3, 100, 100}, 0.5);
    const Tensor out = resize_keep_aspect(img, 512, 650);
    REQUIRE(out.shape() == Shape{3, 512, 650});
    const ContentBox box = fit_box(100, 100, 512, 650);
    CHECK(box.height == 512);
    CHECK(box.width == 512);
    CHECK(box.left == 69);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < 512; y += 17) {
        for (std::size_t x = 0; x < 650; ++x) {
          const double v = out.values()[(c * 512 + y) * 650 + x];
          const bool inside = x >= 69 && x < 69 + 512;
          CHECK(v == (inside ? 0.5 : 0.0));
        }
      }
    }
  }
  SUBCASE("constant image upsampled") {
    const Tensor out = resize_keep_aspect(Tensor::full({1, 4, 4}, 1.0), 8, 8);
    for (double v : out.values()) CHECK(std::abs(v - 1.0) <= 1e-9);
  }
  SUBCASE("content aspect within one pixel") {
    std::mt19937_64 g(11);
    std::uniform_int_distribution<std::size_t> ext(1, 300);
    for (int i = 0; i < 2000; ++i) {
      const std::size_t h = ext(g), w = ext(g), th = ext(g), tw = ext(g);
      const ContentBox b = fit_box(h, w, th, tw);
      CHECK(b.height <= th);
      CHECK(b.width <= tw);
      CHECK((b.height == th || b.width == tw));
      // Content width implied by the content height, and vice versa.
      const double ideal_w = static_cast<double>(b.height) * static_cast<double>(w) / static_cast<double>(h);
      const double ideal_h = static_cast<double>(b.width) * static_cast<double>(h) / static_cast<double>(w);
      CHECK((std::abs(ideal_w - static_cast<double>(b.width)) <= 1.0 ||
             std::abs(ideal_h - static_cast<double>(b.height)) <= 1.0));
      CHECK(b.top + b.height <= th);
      CHECK(b.left + b.width <= tw);
    }
  }
  SUBCASE("values stay in range") {
    const Tensor img = testing::random_tensor({3, 13, 7}, rng, 0.0, 1.0, false);
    CHECK(all_in_unit_interval(resize_keep_aspect(img, 20, 31)));
  }
}

TEST_CASE("align_channels") {
  std::vector<double> v{0.2, 0.4, 0.6, 0.8};
  const Tensor rg = Tensor::from({2, 1, 2}, v);
  const Tensor rgb = align_channels(rg, 3);
  REQUIRE(rgb.shape() == Shape{3, 1, 2});
  CHECK(rgb.values()[4] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(rgb.values()[5] == doctest::Approx(0.6).epsilon(1e-15));
  const Tensor one = align_channels(rgb, 1);
  CHECK(one.values()[0] == 0.2);
  CHECK(one.values()[1] == 0.4);
}

TEST_CASE("synth_generate") {
  SynthConfig cfg;
  cfg.target_size = {48, 56};
  cfg.source_size = {48, 48};

  SUBCASE("deterministic") {
    const auto a = synth_generate(cfg, Domain::target, SplitKind::train, 6, 42);
    const auto b = synth_generate(cfg, Domain::target, SplitKind::train, 6, 42);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].id == b[i].id);
      CHECK(a[i].labels == b[i].labels);
      CHECK(same_values(a[i].image, b[i].image));
    }
    const auto c = synth_generate(cfg, Domain::target, SplitKind::train, 6, 43);
    CHECK_FALSE(same_values(a[0].image, c[0].image));
  }

  SUBCASE("eight classes, at least one active each") {
    const auto samples = synth_generate(cfg, Domain::source, SplitKind::train, 100, 1);
    REQUIRE(samples.size() == 100);
    std::vector<int> seen(8, 0);
    for (const auto& s : samples) {
      REQUIRE(s.labels.size() == 8);
      double active = 0.0;
      for (std::size_t k = 0; k < 8; ++k) {
        CHECK((s.labels[k] == 0.0 || s.labels[k] == 1.0));
        active += s.labels[k];
        seen[k] += s.labels[k] == 1.0;
      }
      CHECK(active >= 1.0);
      CHECK(s.domain == Domain::source);
      CHECK(s.image.shape() == Shape{3, 48, 48});
      CHECK(all_in_unit_interval(s.image));
    }
    for (int n : seen) CHECK(n > 0);
  }

  SUBCASE("source primitives scale with the field of view") {
    SynthConfig big = cfg;
    big.noise_sigma = 0.0;
    big.lesions_per_class = 1;  // overlapping lesions would distort the area ratio
    big.source_size = {256, 256};
    big.target_size = {256, 256};
    const double expected = std::pow(big.fov_ratio_source / big.fov_ratio_target, 2.0);
    for (std::size_t cls = 0; cls < 8; ++cls) {
      for (std::size_t index : {0u, 5u}) {
        const double src = static_cast<double>(primitive_area(big, Domain::source, cls, index));
        const double tgt = static_cast<double>(primitive_area(big, Domain::target, cls, index));
        REQUIRE(tgt > 0.0);
        CHECK(std::abs(src / tgt - expected) <= 0.2 * expected);
      }
    }
  }

  SUBCASE("each class draws lesions_per_class lesions") {
    SynthConfig one = cfg;
    one.noise_sigma = 0.0;
    one.lesions_per_class = 1;
    SynthConfig three = one;
    three.lesions_per_class = 3;
    for (std::size_t cls = 0; cls < 8; ++cls) {
      // The first lesion consumes the same draws in both configs, so it is shared.
      CHECK(primitive_area(three, Domain::target, cls, 2) >= primitive_area(one, Domain::target, cls, 2));
    }
    SynthConfig none = one;
    none.lesions_per_class = 0;
    CHECK(none.validate().size() == 1);
  }

  SUBCASE("source color shift") {
    SynthConfig flat = cfg;
    flat.noise_sigma = 0.0;
    flat.source_size = cfg.target_size;
    const Tensor s = synth_render(flat, Domain::source, {}, 1, SplitKind::train, 0);
    const Tensor t = synth_render(flat, Domain::target, {}, 1, SplitKind::train, 0);
    // Canvas center lies in both discs; shading differs only through the disc radius.
    const std::size_t center = 24 * 56 + 28;
    CHECK(s.values()[center] > t.values()[center]);
  }

  SUBCASE("invalid config") {
    SynthConfig bad = cfg;
    bad.fov_ratio_target = 0.0;
    bad.num_classes = 0;
    CHECK(bad.validate().size() == 2);
    CHECK_THROWS_AS(synth_generate(bad, Domain::target, SplitKind::train, 1, 0), ContractError);
  }
}

TEST_CASE("make_splits") {
  SynthConfig cfg;
  cfg.target_size = {32, 32};
  const auto samples = synth_generate(cfg, Domain::target, SplitKind::train, 10, 0);

  const auto split = make_splits(samples, {0.8, 0.1, 0.1}, 9);
  CHECK(split.train.size() == 8);
  CHECK(split.val.size() == 1);
  CHECK(split.test.size() == 1);

  std::set<std::string> ids;
  for (const auto* part : {&split.train, &split.val, &split.test}) {
    for (const auto& s : *part) CHECK(ids.insert(s.id).second);
  }
  CHECK(ids.size() == samples.size());

  auto order = [](const DatasetSplit& s) {
    std::vector<std::string> out;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (const auto& x : *part) out.push_back(x.id);
    }
    return out;
  };
  CHECK(order(make_splits(samples, {0.8, 0.1, 0.1}, 9)) == order(split));

  std::set<std::vector<std::string>> distinct;
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    distinct.insert(order(make_splits(samples, {0.8, 0.1, 0.1}, seed)));
  }
  CHECK(distinct.size() == 5);

  CHECK_THROWS_AS(make_splits({}, {0.8, 0.1, 0.1}, 0), ContractError);
  CHECK_THROWS_AS(make_splits(samples, {0.8, 0.1, 0.2}, 0), ContractError);
}

TEST_CASE("subsample") {
  SynthConfig cfg;
  cfg.target_size = {32, 32};
  const auto samples = synth_generate(cfg, Domain::target, SplitKind::train, 20, 0);
  const auto a = subsample(samples, 0.2, 3);
  const auto b = subsample(samples, 0.2, 3);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].id == b[i].id);
  CHECK(subsample(samples, 1.0, 3).size() == 20);
  CHECK(subsample(samples, 0.01, 3).size() == 1);
  CHECK_THROWS_AS(subsample(samples, 0.0, 3), ContractError);
}
