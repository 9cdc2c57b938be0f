// Copyright 2026 The hoconv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "hoconv/stimulus.hpp"
#include "test_util.hpp"

using namespace hoconv;
using namespace hoconv::testing;

namespace {

Homography random_homography(std::mt19937_64& rng) {
  return TransformSampler{}.sample(rng);
}

// Positions where the row crosses 0.5, ignoring pixels that sit exactly on 0.5.
std::vector<double> crossings(const Frame& f, std::size_t row, std::size_t lo, std::size_t hi) {
  std::vector<double> out;
  long last_idx = -1;
  int last_sign = 0;
  for (std::size_t c = lo; c < hi; ++c) {
    const double v = f.at(row, c) - 0.5;
    if (v == 0.0) continue;
    const int sign = v > 0 ? 1 : -1;
    if (last_sign != 0 && sign != last_sign)
      out.push_back((static_cast<double>(last_idx) + static_cast<double>(c)) / 2.0);
    last_sign = sign;
    last_idx = static_cast<long>(c);
  }
  return out;
}

double mean_spacing(const std::vector<double>& xs) {
  REQUIRE(xs.size() >= 2);
  return (xs.back() - xs.front()) / static_cast<double>(xs.size() - 1);
}

StimulusConfig toy_config() {
  StimulusConfig cfg;
  cfg.height = 12;
  cfg.width = 16;
  cfg.frames_per_sequence = 5;
  cfg.train_sequences = 2;
  cfg.test_sequences = 1;
  cfg.test_repeats = 3;
  cfg.check_size = 3;
  cfg.seed = 77;
  return cfg;
}

}  // namespace

TEST_CASE("checkerboard examples") {
  const Frame f = make_checkerboard(4, 4, 2);
  const std::vector<double> expected{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1};
  CHECK(f.pixels == expected);

  const Frame half = make_checkerboard(6, 6, 6);
  for (double v : half.pixels) CHECK(v == 1.0);
  const Frame split = make_checkerboard(6, 6, 6, 0, 3);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(split.at(r, c) == (c < 3 ? 1.0 : 0.0));

  for (std::size_t check : {1u, 2u, 5u}) {
    const Frame full = make_checkerboard(4 * check, 6 * check, check, check / 2, 1);
    double sum = 0.0;
    for (double v : full.pixels) sum += v;
    CHECK(sum / static_cast<double>(full.pixels.size()) == 0.5);
  }
  CHECK_THROWS_AS(make_checkerboard(4, 4, 0), ContractError);
}

TEST_CASE("point mapping examples") {
  const Point p = apply_homography_point(Homography(), {3.0, 5.0});
  CHECK(p.x == 3.0);
  CHECK(p.y == 5.0);

  const Point s = apply_homography_point(Homography::from_params({2, 0, 0, 0, 1, 0, 0, 0}), {3, 5});
  CHECK(s.x == 6.0);
  CHECK(s.y == 5.0);

  const Point q =
      apply_homography_point(Homography::from_params({1, 0, 0, 0, 1, 0, 0.01, 0}), {10, 0});
  CHECK(q.x == doctest::Approx(10.0 / 1.1).epsilon(1e-14));
  CHECK(std::abs(q.x - 9.0909) < 1e-4);
  CHECK(q.y == 0.0);

  const Homography at_inf = Homography::from_params({1, 0, 0, 0, 1, 0, -0.1, 0});
  CHECK_THROWS_AS(apply_homography_point(at_inf, {10, 0}), NumericError);
}

TEST_CASE("homography normalization and inversion") {
  const Homography h({2, 0, 4, 0, 2, 6, 0, 0, 2});
  CHECK(h(2, 2) == 1.0);
  CHECK(h(0, 0) == 1.0);
  CHECK(h(1, 2) == 3.0);
  CHECK_THROWS_AS(Homography({1, 0, 0, 0, 1, 0, 0, 0, 0}), NumericError);
  const Homography singular = Homography::from_params({1, 2, 0, 2, 4, 0, 0, 0});
  CHECK_THROWS_AS(singular.inverse(), NumericError);
  CHECK_THROWS_AS(warp_frame(make_checkerboard(4, 4, 2), singular), NumericError);
}

TEST_CASE("warp examples") {
  const Frame board = make_checkerboard(20, 24, 3, 1, 2);
  CHECK(warp_frame(board, Homography()) == board);

  const Frame shifted = warp_frame(board, Homography::from_params({1, 0, 2, 0, 1, -3, 0, 0}));
  for (std::size_t r = 0; r < board.height; ++r)
    for (std::size_t c = 0; c < board.width; ++c) {
      const long sr = static_cast<long>(r) + 3;
      const long sc = static_cast<long>(c) - 2;
      if (sr < static_cast<long>(board.height) && sc >= 0)
        CHECK(shifted.at(r, c) == board.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)));
      else
        CHECK(shifted.at(r, c) == 0.5);
    }

  const Frame wide = make_checkerboard(48, 48, 4);
  const Frame zoomed = warp_frame(wide, Homography::from_params({2, 0, 0, 0, 2, 0, 0, 0}));
  const double before = mean_spacing(crossings(wide, 22, 8, 40));
  const double after = mean_spacing(crossings(zoomed, 22, 8, 40));
  CHECK(before == doctest::Approx(4.0).epsilon(0.05));
  CHECK(after == doctest::Approx(2.0 * before).epsilon(0.05));
}

TEST_CASE("generate_sequence examples") {
  const Frame base = make_checkerboard(16, 16, 4, 1, 3);
  const Sequence still = generate_sequence(Homography(), base, 6);
  const std::size_t n = base.pixels.size();
  for (std::size_t f = 0; f < 6; ++f)
    for (std::size_t i = 0; i < n; ++i)
      CHECK(still.video.values()[f * n + i] == still.video.values()[i]);

  std::mt19937_64 rng(5);
  const Sequence moving = generate_sequence(TransformSampler{}, base, 8, rng);
  for (std::size_t i = 0; i < n; ++i) CHECK(moving.video.values()[i] == base.pixels[i]);
  CHECK(moving.labels.size() == 8);
  CHECK(moving.labels.front() == Homography());

  std::mt19937_64 a(99);
  std::mt19937_64 b(99);
  CHECK(generate_sequence(TransformSampler{}, base, 8, a) ==
        generate_sequence(TransformSampler{}, base, 8, b));

  const Homography target = Homography::from_params({1.2, 0.1, 2, -0.05, 0.8, -1, 0.001, 0});
  const Sequence interp = generate_sequence(target, base, 5);
  CHECK(interp.labels.back() == target);
  CHECK(interp.labels[2].params()[0] == doctest::Approx(1.1));
  CHECK(interp.labels[2].params()[2] == doctest::Approx(1.0));

  const Sequence fixed = generate_sequence(target, base, 4, true);
  for (const auto& h : fixed.labels) CHECK(h == target);

  CHECK_THROWS_AS(generate_sequence(target, base, 1), ContractError);
}

TEST_CASE("sampler ranges and exhaustion") {
  std::mt19937_64 rng(3);
  TransformSampler s;
  for (int i = 0; i < 500; ++i) {
    const auto p = s.sample(rng).params();
    CHECK(p[0] >= 0.7);
    CHECK(p[0] <= 1.4);
    CHECK(std::abs(p[1]) <= 0.2);
    CHECK(std::abs(p[2]) <= 7.5);
    CHECK(std::abs(p[6]) <= 0.0015);
  }
  TransformSampler degenerate;
  degenerate.scale_lo = degenerate.scale_hi = 0.0;
  degenerate.shear_lo = degenerate.shear_hi = 0.0;
  CHECK_THROWS_AS(degenerate.sample(rng), DataError);
}

TEST_CASE("composition and inverse consistency") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 300; ++i) {
    const Homography h1 = random_homography(rng);
    const Homography h2 = random_homography(rng);
    const Point p{u(rng), u(rng)};
    const Point seq = apply_homography_point(h2, apply_homography_point(h1, p));
    const Point comp = apply_homography_point(h2.compose(h1), p);
    CHECK(std::abs(seq.x - comp.x) < 1e-9);
    CHECK(std::abs(seq.y - comp.y) < 1e-9);
    const Point back = apply_homography_point(h1.inverse(), apply_homography_point(h1, p));
    CHECK(std::abs(back.x - p.x) < 1e-9);
    CHECK(std::abs(back.y - p.y) < 1e-9);
  }
}

TEST_CASE("warped bright pixel lands near the mapped point") {
  std::mt19937_64 rng(21);
  const std::size_t size = 40;
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  std::uniform_int_distribution<std::size_t> pos(15, 24);
  int lit = 0;
  for (int i = 0; i < 100; ++i) {
    const Homography h = random_homography(rng);
    Frame src(size, size, 0.5);
    const std::size_t qr = pos(rng);
    const std::size_t qc = pos(rng);
    src.at(qr, qc) = 1.0;
    const Frame out = warp_frame(src, h);
    const Point m = apply_homography_point(h, {static_cast<double>(qc) - c, static_cast<double>(qr) - c});
    double wsum = 0.0;
    double wx = 0.0;
    double wy = 0.0;
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t col = 0; col < size; ++col) {
        const double e = out.at(r, col) - 0.5;
        if (e <= 1e-12) continue;
        const double dx = static_cast<double>(col) - c - m.x;
        const double dy = static_cast<double>(r) - c - m.y;
        CHECK(std::hypot(dx, dy) < 2.5);
        wsum += e;
        wx += e * dx;
        wy += e * dy;
      }
    if (wsum > 0.0) {
      ++lit;
      CHECK(std::hypot(wx / wsum, wy / wsum) < 1.0);
    }
  }
  CHECK(lit > 90);
}

TEST_CASE("labels reproduce the frames they were rendered from") {
  const StimulusDataset d = generate_dataset(toy_config());
  for (const auto& seq : d.train.sequences) {
    REQUIRE(seq.labels.size() == seq.video.shape().t);
    const std::size_t n = d.height * d.width;
    for (std::size_t f = 0; f < seq.labels.size(); ++f) {
      Frame base(d.height, d.width);
      std::copy_n(seq.video.values().begin(), n, base.pixels.begin());
      const Frame w = warp_frame(base, seq.labels[f]);
      for (std::size_t i = 0; i < n; ++i)
        CHECK(seq.video.values()[f * n + i] == static_cast<double>(static_cast<float>(w.pixels[i])));
    }
  }
}

TEST_CASE("dataset generation is seed-determined") {
  StimulusConfig cfg = toy_config();
  CHECK(generate_dataset(cfg) == generate_dataset(cfg));
  StimulusConfig other = cfg;
  other.seed = 78;
  CHECK_FALSE(generate_dataset(cfg) == generate_dataset(other));
  const StimulusDataset d = generate_dataset(cfg);
  CHECK(d.test.repeats == 3);
  CHECK(d.train.sequences.size() == 2);
  CHECK(concat_movie(d.train).shape() == Shape{10, 12, 16, 1});
  StimulusConfig empty = cfg;
  empty.train_sequences = 0;
  empty.test_sequences = 0;
  CHECK_THROWS_AS(generate_dataset(empty), DataError);
}

TEST_CASE("dataset files round trip exactly") {
  TempDir tmp("stim");
  const StimulusDataset d = generate_dataset(toy_config());
  write_dataset(d, tmp.path);
  CHECK(read_dataset(tmp.path) == d);

  const auto train_path = tmp.path / "train.hocv";
  const std::uintmax_t frames_bytes = 2 * 5 * 12 * 16 * 4;
  const std::uintmax_t label_bytes = 2 * 5 * 8 * 8;
  const std::uintmax_t header_bytes = expected_file_size(d, d.train) - frames_bytes - label_bytes;
  CHECK(std::filesystem::file_size(train_path) == expected_file_size(d, d.train));
  {
    std::ifstream is(train_path, std::ios::binary);
    is.seekg(6);
    std::uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 4);
    CHECK(header_bytes == 10 + len);
  }

  const auto labels = tmp.path / "labels.csv";
  write_labels_csv(d.train, labels);
  std::ifstream csv(labels);
  std::string line;
  std::getline(csv, line);
  CHECK(line == "sequence_id,frame,H11,H12,H13,H21,H22,H23,H31,H32");
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 10);
}

TEST_CASE("damaged dataset files raise distinct errors") {
  TempDir tmp("stimbad");
  const StimulusDataset d = generate_dataset(toy_config());
  write_dataset(d, tmp.path);
  const auto path = tmp.path / "train.hocv";
  std::string bytes;
  {
    std::ifstream is(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto write_bytes = [&](const std::string& b) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  write_bytes(bad_magic);
  CHECK_THROWS_AS(read_sequence_set(path), FormatError);

  std::string bad_version = bytes;
  bad_version[4] = 9;
  write_bytes(bad_version);
  CHECK_THROWS_AS(read_sequence_set(path), VersionError);

  std::string bad_meta = bytes;
  bad_meta[10] = '#';
  write_bytes(bad_meta);
  CHECK_THROWS_AS(read_sequence_set(path), FormatError);

  write_bytes(bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_AS(read_sequence_set(path), TruncatedError);

  write_bytes(bytes + "xx");
  CHECK_THROWS_AS(read_sequence_set(path), FormatError);

  CHECK_THROWS_AS(read_sequence_set(tmp.path / "missing.hocv"), IoError);
}
