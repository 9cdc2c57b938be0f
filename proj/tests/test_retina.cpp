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

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hoconv/retina.hpp"
#include "hoconv/stimulus.hpp"
#include "test_util.hpp"

using namespace hoconv;
using namespace hoconv::testing;

namespace {

double softplus_ref(double z) { return std::log(1.0 + std::exp(z)); }

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
  return r;
}

VideoTensor small_movie(std::uint64_t seed, std::size_t sequences) {
  StimulusConfig sc;
  sc.train_sequences = sequences;
  sc.test_sequences = 0;
  sc.seed = seed;
  return concat_movie(generate_dataset(sc).train);
}

struct Bank {
  RetinaConfig cfg;
  std::vector<ModelCell> cells;
  VideoTensor movie;
};

const Bank& standard_bank() {
  static const Bank bank = [] {
    Bank b;
    b.movie = small_movie(1, 200);
    b.cells = make_cell_bank(b.cfg, 50, 50, 50.0);
    calibrate_bank(b.cells, b.movie, b.cfg);
    return b;
  }();
  return bank;
}

ResponseSet fixture(std::size_t trials, std::size_t bins, const std::vector<std::uint16_t>& counts) {
  ResponseSet r;
  r.n_trials = trials;
  r.n_bins = bins;
  r.counts = counts;
  const std::size_t cells = counts.size() / (trials * bins);
  for (std::size_t c = 0; c < cells; ++c) {
    r.cell_ids.push_back("c" + std::to_string(c));
    r.kinds.push_back(CellKind::kLinear);
  }
  return r;
}

// Fraction of rate variance explained by softplus of the best linear fit to
// the generator signal over lagged subunit projections.
double ln_fit_r2(const ModelCell& cell, const VideoTensor& movie) {
  std::vector<ModelCell> probes;
  for (const auto& su : cell.subunits) {
    ModelCell p;
    p.subunits = {su};
    p.temporal_a = {1.0};
    probes.push_back(p);
  }
  const RateMatrix proj = simulate_drive(probes, movie);
  const RateMatrix drive = simulate_drive({cell}, movie);
  const std::size_t lags = cell.filter_length();
  const std::size_t n = movie.shape().t;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(probes.size() * lags + 1));
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    for (std::size_t p = 0; p < probes.size(); ++p)
      for (std::size_t l = 0; l < lags; ++l)
        x(row, static_cast<Eigen::Index>(p * lags + l)) = t >= l ? proj.at(p, t - l) : 0.0;
    x(row, x.cols() - 1) = 1.0;
    y(row) = cell.gain * drive.at(0, t) - cell.threshold;
  }
  const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd fit = x * beta;
  double mean = 0.0;
  std::vector<double> rate(n), pred(n);
  for (std::size_t t = 0; t < n; ++t) {
    rate[t] = cell.base_rate * softplus_ref(y(static_cast<Eigen::Index>(t)));
    pred[t] = cell.base_rate * softplus_ref(fit(static_cast<Eigen::Index>(t)));
    mean += rate[t];
  }
  mean /= static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    ss_res += (rate[t] - pred[t]) * (rate[t] - pred[t]);
    ss_tot += (rate[t] - mean) * (rate[t] - mean);
  }
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

TEST_CASE("temporal filters") {
  const auto k = biphasic_filter({40.0, 80.0, 0.5, 6}, 50.0);
  REQUIRE(k.size() == 6);
  CHECK(k[0] == 0.0);
  CHECK(*std::max_element(k.begin(), k.end()) == 1.0);
  CHECK(std::max_element(k.begin(), k.end()) - k.begin() == 2);
  CHECK(k[5] < 0.0);
  const auto b = bump_filter(60.0, 6, 50.0);
  CHECK(std::accumulate(b.begin(), b.end(), 0.0) == doctest::Approx(1.0));
  CHECK(std::max_element(b.begin(), b.end()) - b.begin() == 3);
  CHECK_THROWS_AS(biphasic_filter({80.0, 40.0, 0.5, 6}, 50.0), ConfigError);
}

TEST_CASE("gray stimulus gives the rest rate") {
  const Bank& b = standard_bank();
  const VideoTensor gray(Shape{30, 50, 50, 1}, 0.5);
  const RateMatrix r = simulate_rates(b.cells, gray);
  for (std::size_t c = 0; c < b.cells.size(); ++c) {
    const double rest = b.cells[c].base_rate * softplus_ref(-b.cells[c].threshold);
    for (std::size_t t = 0; t < 30; ++t) CHECK(r.at(c, t) == doctest::Approx(rest).epsilon(1e-15));
    for (std::size_t t = 1; t < 30; ++t) CHECK(r.at(c, t) == r.at(c, 0));
  }
}

TEST_CASE("linear cell peaks when its kernel is played at its pixel") {
  ModelCell cell;
  cell.id = "probe";
  cell.subunits = {{10.0, 12.0, 0.3}};
  cell.temporal_a = biphasic_filter({}, 50.0);
  cell.gain = 3.0;
  cell.threshold = 0.5;
  cell.base_rate = 1.0;
  const std::size_t len = cell.temporal_a.size();
  const std::size_t frames = 20;
  const std::size_t align = 9;
  VideoTensor movie(Shape{frames, 24, 24, 1}, 0.5);
  for (std::size_t l = 0; l < len; ++l) movie.at(align - l, 12, 10, 0) = 0.5 + 0.4 * cell.temporal_a[l];

  // Centre-pixel weight of the normalized gaussian.
  double wsum = 0.0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) wsum += std::exp(-(dx * dx + dy * dy) / (2.0 * 0.09));
  const double w0 = 1.0 / wsum;

  const RateMatrix r = simulate_rates({cell}, movie);
  std::size_t best = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    double drive = 0.0;
    for (std::size_t l = 0; l < len && l <= t; ++l)
      drive += cell.temporal_a[l] * w0 * (movie.at(t - l, 12, 10, 0) - 0.5);
    CHECK(r.at(0, t) == doctest::Approx(softplus_ref(3.0 * drive - 0.5)).epsilon(1e-9));
    if (r.at(0, t) > r.at(0, best)) best = t;
  }
  CHECK(best == align);
}

TEST_CASE("receptive fields must fit the frame") {
  ModelCell cell;
  cell.id = "edge";
  cell.subunits = {{2.0, 10.0, 2.0}};
  cell.temporal_a = {1.0};
  CHECK_THROWS_AS(simulate_rates({cell}, VideoTensor(Shape{4, 20, 20, 1}, 0.5)), ConfigError);
  cell.subunits = {{10.0, 10.0, 2.0}};
  cell.temporal_a = std::vector<double>(6, 0.1);
  CHECK_THROWS_AS(simulate_rates({cell}, VideoTensor(Shape{4, 20, 20, 1}, 0.5)), DataError);
  RetinaConfig big;
  big.linear_sigma = 20.0;
  CHECK_THROWS_AS(make_cell_bank(big, 50, 50, 50.0), ConfigError);
}

TEST_CASE("default bank composition") {
  const Bank& b = standard_bank();
  REQUIRE(b.cells.size() == 40);
  std::size_t counts[4] = {0, 0, 0, 0};
  for (const auto& c : b.cells) ++counts[static_cast<int>(c.kind)];
  CHECK(counts[0] == 12);
  CHECK(counts[1] == 10);
  CHECK(counts[2] == 11);
  CHECK(counts[3] == 7);
  for (const auto& c : b.cells) {
    if (c.kind == CellKind::kMultiplicative) CHECK(c.subunits.size() == 2);
    if (c.kind == CellKind::kExpansion) CHECK(c.subunits.size() == 2 * b.cfg.expansion_pairs);
    if (c.kind == CellKind::kMultiplicative || c.kind == CellKind::kExpansion)
      CHECK(c.temporal_a != c.temporal_b);
  }
  const RateMatrix r = simulate_rates(b.cells, b.movie);
  for (double v : r.values) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("expansion cells prefer expanding sequences") {
  const Bank& b = standard_bank();
  std::mt19937_64 rng(4);
  double grow = 0.0, shrink = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const Frame base = make_checkerboard(50, 50, 10, rng() % 20, rng() % 20);
    const auto up = generate_sequence(Homography::from_params({1.3, 0, 0, 0, 1.3, 0, 0, 0}), base, 20);
    const auto down = generate_sequence(Homography::from_params({0.8, 0, 0, 0, 0.8, 0, 0, 0}), base, 20);
    const RateMatrix ru = simulate_rates(b.cells, up.video);
    const RateMatrix rd = simulate_rates(b.cells, down.video);
    for (std::size_t c = 0; c < b.cells.size(); ++c) {
      if (b.cells[c].kind != CellKind::kExpansion) continue;
      for (std::size_t t = 0; t < 20; ++t) {
        grow += ru.at(c, t);
        shrink += rd.at(c, t);
      }
    }
  }
  CHECK(grow > shrink);
}

TEST_CASE("expansion rate tracks the scale product") {
  const Bank& b = standard_bank();
  std::mt19937_64 rng(9);
  TransformSampler sampler;
  std::vector<double> product, rate;
  for (int i = 0; i < 24; ++i) {
    const Homography h = sampler.sample(rng);
    const Frame base = make_checkerboard(50, 50, 10, rng() % 20, rng() % 20);
    const auto seq = generate_sequence(h, base, 20);
    const RateMatrix r = simulate_rates(b.cells, seq.video);
    double m = 0.0;
    for (std::size_t c = 0; c < b.cells.size(); ++c)
      if (b.cells[c].kind == CellKind::kExpansion)
        for (std::size_t t = 0; t < 20; ++t) m += r.at(c, t);
    product.push_back(h(0, 0) * h(1, 1));
    rate.push_back(m);
  }
  const double rho = pearson(ranks(product), ranks(rate));
  MESSAGE("spearman " << rho);
  CHECK(rho > 0.8);
}

TEST_CASE("multiplicative structure defeats a linear-nonlinear fit") {
  const Bank& b = standard_bank();
  for (const auto& cell : b.cells) {
    if (cell.kind == CellKind::kDistractor) continue;
    const double r2 = ln_fit_r2(cell, b.movie);
    if (cell.kind == CellKind::kLinear)
      CHECK(r2 > 0.95);
    else
      CHECK(r2 < 0.5);
  }
}

TEST_CASE("poisson sampling") {
  RateMatrix zero(2, 50, 0.0);
  const ResponseSet z = sample_spikes(zero, 10, 1);
  for (auto v : z.counts) CHECK(v == 0);

  RateMatrix five(1, 1, 5.0);
  const ResponseSet s = sample_spikes(five, 10000, 42);
  double mean = 0.0;
  for (auto v : s.counts) mean += v;
  mean /= 10000.0;
  double var = 0.0;
  for (auto v : s.counts) var += (v - mean) * (v - mean);
  var /= 9999.0;
  CHECK(mean >= 4.9);
  CHECK(mean <= 5.1);
  CHECK(var / mean >= 0.95);
  CHECK(var / mean <= 1.05);

  CHECK(sample_spikes(five, 50, 7).counts == sample_spikes(five, 50, 7).counts);
  CHECK(sample_spikes(five, 50, 7).counts != sample_spikes(five, 50, 8).counts);
  CHECK_THROWS_AS(sample_spikes(RateMatrix(1, 1, -1.0), 1, 1), DataError);
  CHECK_THROWS_AS(sample_spikes(RateMatrix(1, 1, 1e6), 1, 1), OverflowError);

  // Trial means converge to the rate.
  RateMatrix ramp(1, 4);
  for (std::size_t b = 0; b < 4; ++b) ramp.at(0, b) = 0.5 * static_cast<double>(b);
  const ResponseSet many = sample_spikes(ramp, 20000, 3);
  const auto m = many.trial_mean_frames(0);
  for (std::size_t b = 0; b < 4; ++b) CHECK(std::abs(m[b] - ramp.at(0, b)) < 0.03);
}

TEST_CASE("reliability of identical trials is exactly one") {
  std::vector<std::uint16_t> counts;
  const std::vector<std::uint16_t> pattern{0, 3, 1, 4, 1, 5, 9, 2};
  for (int t = 0; t < 6; ++t) counts.insert(counts.end(), pattern.begin(), pattern.end());
  const auto rel = bootstrap_reliability(fixture(6, 8, counts), 500, 1);
  REQUIRE(rel.size() == 1);
  CHECK(rel[0].mean == 1.0);
  CHECK(rel[0].ci_low == 1.0);
  CHECK(rel[0].ci_high == 1.0);
}

TEST_CASE("reliability of unlocked noise is near zero") {
  // One realization of 60 x 200 noise has a split-half spread near 0.05, so
  // the estimator is judged on the average over independent realizations.
  double sum = 0.0;
  const int realizations = 20;
  for (int i = 0; i < realizations; ++i) {
    const ResponseSet r = sample_spikes(RateMatrix(1, 200, 2.0), 60, 1000 + static_cast<std::uint64_t>(i));
    const auto rel = bootstrap_reliability(r, 500, 5);
    CHECK(std::abs(rel[0].mean) < 0.25);
    sum += rel[0].mean;
  }
  CHECK(std::abs(sum / realizations) < 0.05);
}

TEST_CASE("two-trial reliability equals the split-half correlation") {
  const std::vector<std::uint16_t> counts{1, 4, 2, 8, 5, 7, 3, 3, 6, 1};
  const auto rel = bootstrap_reliability(fixture(2, 5, counts), 50, 2);
  const double plain = pearson({1, 4, 2, 8, 5}, {7, 3, 3, 6, 1});
  CHECK(rel[0].mean == doctest::Approx(plain).epsilon(1e-12));
  CHECK(rel[0].ci_low == doctest::Approx(plain).epsilon(1e-12));
  CHECK_THROWS_AS(bootstrap_reliability(fixture(1, 5, {1, 2, 3, 4, 5}), 10, 1), DataError);
}

TEST_CASE("reliability matches explicit half sums") {
  RateMatrix rates(3, 60);
  std::mt19937_64 gen(12);
  std::gamma_distribution<double> gd(1.0, 1.5);
  for (double& v : rates.values) v = gd(gen);
  const ResponseSet r = sample_spikes(rates, 7, 21);
  const std::size_t boots = 25, nt = 7, nf = r.n_frames();
  std::vector<double> expected(3, 0.0);
  for (std::size_t it = 0; it < boots; ++it) {
    std::vector<std::size_t> perm(nt);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(99 ^ it);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> a(nf, 0.0), b(nf, 0.0);
      for (std::size_t k = 0; k < 3; ++k) {
        const auto fa = r.frame_counts(perm[k], c);
        const auto fb = r.frame_counts(perm[3 + k], c);
        for (std::size_t i = 0; i < nf; ++i) {
          a[i] += fa[i];
          b[i] += fb[i];
        }
      }
      expected[c] += pearson(a, b) / static_cast<double>(boots);
    }
  }
  const auto rel = bootstrap_reliability(r, boots, 99);
  for (std::size_t c = 0; c < 3; ++c) CHECK(rel[c].mean == doctest::Approx(expected[c]).epsilon(1e-12));
}

TEST_CASE("reliability does not depend on trial labels") {
  RateMatrix rates(2, 100);
  for (std::size_t b = 0; b < 100; ++b) {
    rates.at(0, b) = 1.0 + std::sin(0.3 * static_cast<double>(b));
    rates.at(1, b) = 0.5 + 0.5 * std::cos(0.1 * static_cast<double>(b));
  }
  const ResponseSet r = sample_spikes(rates, 21, 8);
  ResponseSet permuted = r;
  std::vector<std::size_t> order(21);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(3);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t t = 0; t < 21; ++t)
    std::copy_n(r.counts.begin() + static_cast<std::ptrdiff_t>(order[t] * 200), 200,
                permuted.counts.begin() + static_cast<std::ptrdiff_t>(t * 200));
  const auto a = bootstrap_reliability(r, 4000, 17);
  const auto b = bootstrap_reliability(permuted, 4000, 17);
  for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(a[c].mean - b[c].mean) < 0.005);
}

TEST_CASE("silent cells have undefined reliability") {
  std::vector<std::uint16_t> counts(4 * 2 * 10, 0);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t b = 0; b < 10; ++b) counts[(t * 2 + 1) * 10 + b] = static_cast<std::uint16_t>(b % 3);
  const auto rel = bootstrap_reliability(fixture(4, 10, counts), 100, 1);
  CHECK_FALSE(rel[0].defined);
  CHECK(std::isnan(rel[0].mean));
  CHECK(rel[1].defined);
  CHECK(rel[1].skipped == 0);
}

TEST_CASE("selecting reliable cells") {
  auto make = [](std::vector<double> m) {
    std::vector<Reliability> r;
    for (double v : m) {
      Reliability x;
      x.mean = v;
      x.defined = !std::isnan(v);
      r.push_back(x);
    }
    return r;
  };
  const auto rel = make({0.9, 0.2, 0.9});
  CHECK(select_reliable_cells(rel, {"a", "b", "c"}, 2) == std::vector<std::size_t>{0, 2});
  CHECK(select_reliable_cells(rel, {"a", "b", "c"}, 3) == std::vector<std::size_t>{0, 1, 2});
  CHECK(select_reliable_cells(rel, {"a", "b", "c"}, 0).empty());
  CHECK(select_reliable_cells(rel, {"z", "b", "c"}, 1) == std::vector<std::size_t>{2});
  const auto with_nan = make({std::nan(""), 0.1, 0.3});
  CHECK(select_reliable_cells(with_nan, {"a", "b", "c"}, 2) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(select_reliable_cells(rel, {"a", "b", "c"}, 4), ConfigError);
}

TEST_CASE("response files round trip") {
  TempDir tmp("horx");
  RateMatrix rates(3, 12);
  for (std::size_t i = 0; i < rates.values.size(); ++i) rates.values[i] = 0.1 * static_cast<double>(i % 7);
  ResponseSet r = sample_spikes(rates, 4, 9);
  r.cell_ids = {"lin0", "mul0", "exp0"};
  r.kinds = {CellKind::kLinear, CellKind::kMultiplicative, CellKind::kExpansion};
  r.bins_per_frame = 2;
  const auto path = tmp.path / "test.horx";
  write_responses(r, "test", path);
  CHECK(std::filesystem::file_size(path) == expected_response_file_size(r, "test"));
  std::string split;
  const ResponseSet back = read_responses(path, &split);
  CHECK(split == "test");
  CHECK(back.counts == r.counts);
  CHECK(back.cell_ids == r.cell_ids);
  CHECK(back.kinds == r.kinds);
  CHECK(back.n_trials == 4);
  CHECK(back.n_bins == 12);
  CHECK(back.bins_per_frame == 2);
  CHECK(back.bin_width_s == r.bin_width_s);

  const auto again = tmp.path / "again.horx";
  write_responses(back, split, again);
  std::ifstream a(path, std::ios::binary), b(again, std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) ==
        std::string(std::istreambuf_iterator<char>(b), {}));

  {
    std::ofstream os(path, std::ios::binary | std::ios::app);
    os << 'x';
  }
  CHECK_THROWS_AS(read_responses(path), FormatError);
  std::filesystem::resize_file(path, 30);
  CHECK_THROWS_AS(read_responses(path), DataError);

  const auto csv = tmp.path / "rel.csv";
  std::vector<Reliability> rel(3);
  write_reliability_csv(r, rel, csv);
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "cell_id,reliability,ci_low,ci_high,kind");
  std::getline(is, line);
  CHECK(line == "lin0,0,0,0,linear_lnp");
}

TEST_CASE("subset keeps counts aligned") {
  RateMatrix rates(3, 5, 1.0);
  ResponseSet r = sample_spikes(rates, 2, 4);
  const ResponseSet s = r.subset({2, 0});
  REQUIRE(s.n_cells() == 2);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t b = 0; b < 5; ++b) {
      CHECK(s.count(t, 0, b) == r.count(t, 2, b));
      CHECK(s.count(t, 1, b) == r.count(t, 0, b));
    }
}
