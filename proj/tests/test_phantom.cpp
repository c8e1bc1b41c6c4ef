#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mrigen/image_io.hpp"
#include "mrigen/manifest.hpp"
#include "mrigen/phantom.hpp"
#include "mrigen/prompt.hpp"

using namespace mrigen;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  const fs::path dir = fs::temp_directory_path() / (std::string("mrigen_phantom_") + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double region_mean(const ImageSlice& img, const Mat<std::uint8_t>& mask) {
  double sum = 0.0;
  long n = 0;
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      if (mask(r, c)) {
        sum += img.data(r, c);
        ++n;
      }
    }
  }
  REQUIRE(n > 0);
  return sum / n;
}

PhantomSpec spec_of(FieldStrength f, Modality m, int slice, std::uint64_t seed, float sigma = -1.0f) {
  PhantomSpec s;
  s.meta = {f, m, slice, "subj"};
  s.noise_sigma = sigma;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("generate_phantom is pure in the spec") {
  const auto a = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, 5, 7));
  const auto b = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, 5, 7));
  CHECK(a.data == b.data);  // bit-identical
}

TEST_CASE("modality contrast orderings hold at zero noise for all seeds and slices") {
  for (std::uint64_t seed : {1ull, 17ull, 923ull}) {
    for (int slice : {1, 9, 18}) {
      const auto regions = phantom_regions(32, slice);
      const auto t1 = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, slice, seed, 0.0f));
      CHECK(region_mean(t1, regions.tissue) > region_mean(t1, regions.csf));
      const auto t2 = generate_phantom(spec_of(FieldStrength::Low, Modality::T2, slice, seed, 0.0f));
      CHECK(region_mean(t2, regions.csf) > region_mean(t2, regions.tissue));
      const auto fl = generate_phantom(spec_of(FieldStrength::High, Modality::Flair, slice, seed, 0.0f));
      CHECK(region_mean(fl, regions.csf) < region_mean(fl, regions.tissue));
      CHECK(region_mean(fl, regions.skull) > region_mean(fl, regions.background));
    }
  }
}

TEST_CASE("low field is noisier than high field: residual std ratio") {
  // Oracle: direct sample statistics of the additive residual against the
  // noise-free render.
  const auto clean = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, 5, 3, 0.0f));
  const auto low = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, 5, 3));
  const auto high = generate_phantom(spec_of(FieldStrength::High, Modality::T1, 5, 3));
  const auto regions = phantom_regions(32, 5);
  // Background pixels sit at 0 where clamping bites; use tissue pixels, which
  // stay interior for both sigmas.
  auto residual_std = [&](const ImageSlice& img) {
    double sum = 0.0, sum2 = 0.0;
    long n = 0;
    for (int r = 0; r < 32; ++r) {
      for (int c = 0; c < 32; ++c) {
        if (!regions.tissue(r, c)) continue;
        const double d = img.data(r, c) - clean.data(r, c);
        sum += d;
        sum2 += d * d;
        ++n;
      }
    }
    const double mean = sum / n;
    return std::sqrt(sum2 / n - mean * mean);
  };
  CHECK(residual_std(low) > residual_std(high));
}

TEST_CASE("slice index changes the geometry monotonically") {
  const auto g1 = phantom_geometry(32, 1);
  const auto g9 = phantom_geometry(32, 9);
  const auto g18 = phantom_geometry(32, 18);
  CHECK(g1.skull_ry < g9.skull_ry);
  CHECK(g9.skull_ry < g18.skull_ry);
}

TEST_CASE("normalize_to_u8 maps [0,5,10] to [0,128,255] with round-half-up") {
  ImageMat raw(1, 3);
  raw << 0.0f, 5.0f, 10.0f;
  const U8Image out = normalize_to_u8(raw);
  REQUIRE(out.pixels.size() == 3);
  CHECK(out.pixels[0] == 0);
  CHECK(out.pixels[1] == 128);
  CHECK(out.pixels[2] == 255);
  CHECK_FALSE(out.degenerate_range);
}

TEST_CASE("normalize_to_u8 keeps a full-range 0..255 input unchanged") {
  ImageMat raw(1, 256);
  for (int i = 0; i < 256; ++i) raw(0, i) = static_cast<float>(i);
  const U8Image out = normalize_to_u8(raw);
  for (int i = 0; i < 256; ++i) CHECK(out.pixels[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("normalize_to_u8 degenerate constant input: zeros plus warning") {
  ImageMat raw = ImageMat::Constant(4, 4, 3.7f);
  const U8Image out = normalize_to_u8(raw);
  CHECK(out.degenerate_range);
  for (const auto p : out.pixels) CHECK(p == 0);
}

TEST_CASE("normalize_to_u8 always spans 0..255 on non-constant input") {
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    ImageMat raw(5, 5);
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 5; ++c) raw(r, c) = static_cast<float>(rng.uniform(-40.0, 17.0));
    }
    const U8Image out = normalize_to_u8(raw);
    const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
    CHECK(*lo == 0);
    CHECK(*hi == 255);
  }
}

TEST_CASE("center_crop 320->256 uses offset 32 and is idempotent") {
  ImageSlice big;
  big.data.resize(320, 320);
  for (int r = 0; r < 320; ++r) {
    for (int c = 0; c < 320; ++c) big.data(r, c) = static_cast<float>((r * 320 + c) % 997) / 997.0f;
  }
  const ImageSlice out = center_crop(big, 256, 256);
  CHECK(out.width() == 256);
  CHECK(out.height() == 256);
  CHECK(out.data(0, 0) == big.data(32, 32));
  CHECK(out.data(255, 255) == big.data(287, 287));
  const ImageSlice again = center_crop(out, 256, 256);
  CHECK(again.data == out.data);
}

TEST_CASE("center_crop 5x5 -> 3x3 keeps rows and cols 1..3") {
  ImageSlice img;
  img.data.resize(5, 5);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) img.data(r, c) = static_cast<float>(10 * r + c);
  }
  const ImageSlice out = center_crop(img, 3, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(out.data(r, c) == doctest::Approx(10 * (r + 1) + (c + 1)));
  }
}

TEST_CASE("center_crop rejects a target larger than the source") {
  ImageSlice img;
  img.data.setZero(8, 8);
  CHECK_THROWS_AS(center_crop(img, 9, 8), DataError);
}

TEST_CASE("retain_head_slices") {
  std::vector<int> v16(16);
  for (int i = 0; i < 16; ++i) v16[static_cast<std::size_t>(i)] = i + 1;
  const auto first10 = retain_head_slices(v16, 10);
  REQUIRE(first10.size() == 10);
  CHECK(first10.front() == 1);
  CHECK(first10.back() == 10);

  std::vector<int> v4 = {1, 2, 3, 4};
  CHECK(retain_head_slices(v4, 10) == v4);
  CHECK(retain_head_slices(v4, 1) == std::vector<int>{1});
  CHECK_THROWS_AS(retain_head_slices(v4, 0), DataError);
}

TEST_CASE("build_prompt instantiates the grammar") {
  CHECK(build_prompt({FieldStrength::Low, Modality::T1, 5, ""}) ==
        "0.3T brain MRI, slice 5, T1 contrast");
  CHECK(build_prompt({FieldStrength::High, Modality::Flair, 1, ""}) ==
        "3T brain MRI, slice 1, FLAIR contrast");
  CHECK(build_prompt({FieldStrength::Low, Modality::T2, 2, ""}, "sks0") ==
        "sks0 0.3T brain MRI, slice 2, T2 contrast");
  CHECK_THROWS_AS(build_prompt({FieldStrength::Low, Modality::T2, 2, ""}, "dog"), DataError);
}

TEST_CASE("parse_prompt inverts the template and checks bounds") {
  const auto p = parse_prompt("3T brain MRI, slice 2, T2 contrast");
  CHECK(p.meta.field == FieldStrength::High);
  CHECK(p.meta.slice_index == 2);
  CHECK(p.meta.modality == Modality::T2);
  CHECK_FALSE(p.identifier.has_value());

  CHECK_THROWS_WITH_AS(parse_prompt("0.3T brain MRI, slice 19, T1 contrast"),
                       doctest::Contains("19"), DataError);
  CHECK_THROWS_AS(parse_prompt("0.3T brain MRI, slice 5, T3 contrast"), DataError);
  CHECK_THROWS_AS(parse_prompt("5T brain MRI, slice 5, T1 contrast"), DataError);
  CHECK_THROWS_AS(parse_prompt("totally different text"), DataError);
}

TEST_CASE("prompt round-trip over the full grid, with and without identifiers") {
  std::vector<std::optional<std::string>> ids = {std::nullopt};
  for (const auto& id : registered_identifiers()) ids.emplace_back(id);
  for (const FieldStrength f : {FieldStrength::Low, FieldStrength::High}) {
    for (const Modality m : {Modality::T1, Modality::T2, Modality::Flair}) {
      for (int s = 1; s <= kMaxSliceIndex; ++s) {
        for (const auto& id : ids) {
          const SliceMeta meta{f, m, s, ""};
          const auto parsed = parse_prompt(build_prompt(meta, id));
          CHECK(parsed.meta == meta);
          CHECK(parsed.identifier == id);
        }
      }
    }
  }
}

TEST_CASE("split_train_val splits 10 items 8:2 and is seed-deterministic") {
  std::vector<int> items(10);
  for (int i = 0; i < 10; ++i) items[static_cast<std::size_t>(i)] = i;
  const auto s1 = split_train_val(items, 0.8, 42);
  const auto s2 = split_train_val(items, 0.8, 42);
  CHECK(s1.train.size() == 8);
  CHECK(s1.val.size() == 2);
  CHECK(s1.train == s2.train);
  CHECK(s1.val == s2.val);
  CHECK_FALSE(s1.degenerate_warning);

  // partition property as multisets
  std::multiset<int> all(s1.train.begin(), s1.train.end());
  all.insert(s1.val.begin(), s1.val.end());
  CHECK(all == std::multiset<int>(items.begin(), items.end()));
}

TEST_CASE("split_train_val single item: train gets it, warning set") {
  const auto s = split_train_val(std::vector<int>{7}, 0.8, 1);
  CHECK(s.train == std::vector<int>{7});
  CHECK(s.val.empty());
  CHECK(s.degenerate_warning);
}

TEST_CASE("png and pgm round-trip") {
  const auto dir = temp_dir("io");
  const auto img = to_u8(generate_phantom(spec_of(FieldStrength::Low, Modality::T2, 4, 11)));
  write_png(dir / "x.png", img);
  const U8Image back_png = read_png(dir / "x.png");
  CHECK(back_png.width == img.width);
  CHECK(back_png.pixels == img.pixels);
  write_pgm(dir / "x.pgm", img);
  const U8Image back_pgm = read_pgm(dir / "x.pgm");
  CHECK(back_pgm.pixels == img.pixels);
  // load_image sniffs magics regardless of extension
  CHECK(load_image(dir / "x.png").pixels == img.pixels);
  CHECK(load_image(dir / "x.pgm").pixels == img.pixels);
}

TEST_CASE("ingest_manifest loads entries in order and applies flags") {
  const auto dir = temp_dir("ingest");
  // three valid phantom images
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 3; ++i) {
    const auto slice = generate_phantom(spec_of(FieldStrength::Low, Modality::T2, i + 1, 100 + i));
    const std::string name = "p" + std::to_string(i) + ".png";
    write_png(dir / name, to_u8(slice));
    ManifestEntry e;
    e.path = name;
    e.meta = {FieldStrength::Low, Modality::T2, i + 1, "s"};
    entries.push_back(e);
  }
  write_manifest(dir / "manifest.jsonl", entries);
  const auto items = ingest_manifest(dir / "manifest.jsonl");
  REQUIRE(items.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(items[static_cast<std::size_t>(i)].meta.slice_index == i + 1);
}

TEST_CASE("ingest_manifest reports the offending line for a bad modality") {
  const auto dir = temp_dir("badmod");
  {
    std::ofstream os(dir / "manifest.jsonl");
    os << R"({"path":"a.png","field":"0.3T","modality":"T1","slice":1,"subject":"s"})" << '\n';
    os << R"({"path":"b.png","field":"0.3T","modality":"T3","slice":1,"subject":"s"})" << '\n';
  }
  CHECK_THROWS_WITH_AS(ingest_manifest(dir / "manifest.jsonl"), doctest::Contains("line 2"), DataError);
}

TEST_CASE("ingest_manifest crop flag emits 256x256 from a 320x320 source") {
  const auto dir = temp_dir("crop");
  ImageMat raw(320, 320);
  for (int r = 0; r < 320; ++r) {
    for (int c = 0; c < 320; ++c) raw(r, c) = static_cast<float>((r + c) % 256);
  }
  U8Image big;
  big.width = 320;
  big.height = 320;
  big.pixels.resize(320 * 320);
  for (int r = 0; r < 320; ++r) {
    for (int c = 0; c < 320; ++c) big.pixels[static_cast<std::size_t>(r) * 320 + c] = static_cast<std::uint8_t>(raw(r, c));
  }
  write_png(dir / "big.png", big);
  {
    std::ofstream os(dir / "manifest.jsonl");
    os << R"({"path":"big.png","field":"3T","modality":"T1","slice":1,"subject":"s","normalize":true,"crop_to":[256,256]})"
       << '\n';
  }
  const auto items = ingest_manifest(dir / "manifest.jsonl");
  REQUIRE(items.size() == 1);
  CHECK(items[0].image.width() == 256);
  CHECK(items[0].image.height() == 256);
}

TEST_CASE("ingest_manifest skip-with-log keeps going and reports kept indices") {
  const auto dir = temp_dir("skip");
  const auto slice = generate_phantom(spec_of(FieldStrength::Low, Modality::T1, 1, 5));
  write_png(dir / "ok.png", to_u8(slice));
  {
    std::ofstream os(dir / "manifest.jsonl");
    os << R"({"path":"missing.png","field":"0.3T","modality":"T1","slice":1,"subject":"s"})" << '\n';
    os << R"({"path":"ok.png","field":"0.3T","modality":"T1","slice":2,"subject":"s"})" << '\n';
  }
  CHECK_THROWS_AS(ingest_manifest(dir / "manifest.jsonl"), DataError);  // fail-fast default
  std::ostringstream log;
  IngestOptions opts;
  opts.skip_errors = true;
  opts.log = &log;
  std::vector<std::size_t> kept;
  opts.kept = &kept;
  const auto items = ingest_manifest(dir / "manifest.jsonl", opts);
  REQUIRE(items.size() == 1);
  CHECK(items[0].meta.slice_index == 2);
  CHECK(kept == std::vector<std::size_t>{1});
  CHECK(log.str().find("entry 1") != std::string::npos);
}
