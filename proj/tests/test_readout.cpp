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
#include <numeric>

#include "hoconv/readout.hpp"
#include "test_util.hpp"

using namespace hoconv;
using namespace hoconv::testing;

namespace {

// Rows of random features with labels = features * planted + noise.
FeatureMatrix planted(std::size_t rows, std::size_t features, const std::vector<double>& w, double noise,
                      std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMatrix f;
  f.n_features = features;
  for (std::size_t i = 0; i < rows; ++i) {
    ParamVector label{};
    std::vector<double> x(features);
    for (double& v : x) v = 3.0 * n(rng) + 1.0;
    for (std::size_t p = 0; p < kHomographyParams; ++p) {
      label[p] = 0.5 * static_cast<double>(p) + noise * n(rng);
      for (std::size_t j = 0; j < features; ++j) label[p] += x[j] * w[j * kHomographyParams + p];
    }
    f.values.insert(f.values.end(), x.begin(), x.end());
    f.labels.push_back(label);
    f.sequence_ids.push_back(i);
    f.frames.push_back(0);
  }
  return f;
}

std::vector<double> planted_weights(std::size_t features, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> w(features * kHomographyParams);
  for (double& v : w) v = (sign(rng) ? 1.0 : -1.0) * u(rng);
  return w;
}

NetworkState small_network(std::uint64_t seed) {
  return NetworkState::initialize(make_two_block_spec(Shape{2, 8, 8, 1}, {2, 3}, {1, 3}, 3, 2, 2, 2), seed);
}

}  // namespace

TEST_CASE("parameter names follow the homography layout") {
  const auto& n = homography_param_names();
  CHECK(n[0] == "H11");
  CHECK(n[4] == "H22");
  CHECK(n[7] == "H32");
}

TEST_CASE("conv block taps and feature extraction") {
  const NetworkState st = small_network(3);
  CHECK(conv_block_tap(st.spec, 1) == 2);
  CHECK(conv_block_tap(st.spec, 2) == 5);
  CHECK_THROWS_AS(conv_block_tap(st.spec, 3), ConfigError);

  std::mt19937_64 rng(4);
  const VideoTensor clip = random_tensor(st.spec.input, rng);
  const std::size_t tap = conv_block_tap(st.spec, 2);
  const auto a = extract_features(st, clip, tap);
  CHECK(a == extract_features(st, clip, tap));
  CHECK(a.size() == st.spec.propagate()[tap].volume());

  const std::uint64_t before = parameter_checksum(st);
  for (int i = 0; i < 100; ++i) extract_features(st, random_tensor(st.spec.input, rng), tap);
  CHECK(parameter_checksum(st) == before);

  NetworkState changed = st;
  changed.params[4].running_mean[0] += 1e-12;
  CHECK(parameter_checksum(changed) != before);

  CHECK_THROWS_AS(extract_features(st, clip, 99), ConfigError);
  CHECK_THROWS_AS(extract_features(st, clip, 7), ConfigError);
}

TEST_CASE("exactly linear labels are interpolated at lambda 0") {
  std::mt19937_64 rng(11);
  SUBCASE("more rows than features") {
    const auto w = planted_weights(10, rng);
    const FeatureMatrix f = planted(50, 10, w, 0.0, rng);
    const auto r = fit_readout(f, 0.0);
    const auto pred = predict_readout(r, f);
    for (std::size_t i = 0; i < f.rows(); ++i)
      for (std::size_t p = 0; p < kHomographyParams; ++p) CHECK(std::abs(pred[i][p] - f.labels[i][p]) < 1e-8);
  }
  SUBCASE("more features than rows") {
    const auto w = planted_weights(40, rng);
    const FeatureMatrix f = planted(30, 40, w, 0.0, rng);
    const auto r = fit_readout(f, 0.0);
    const auto pred = predict_readout(r, f);
    for (std::size_t i = 0; i < f.rows(); ++i)
      for (std::size_t p = 0; p < kHomographyParams; ++p) CHECK(std::abs(pred[i][p] - f.labels[i][p]) < 1e-8);
  }
}

TEST_CASE("huge ridge penalty predicts the label means") {
  std::mt19937_64 rng(12);
  const FeatureMatrix f = planted(60, 8, planted_weights(8, rng), 0.1, rng);
  const auto r = fit_readout(f, 1e12);
  for (double v : r.weights) CHECK(std::abs(v) < 1e-9);
  const auto pred = predict_readout(r, f);
  for (std::size_t p = 0; p < kHomographyParams; ++p) {
    double m = 0.0;
    for (const auto& l : f.labels) m += l[p];
    m /= static_cast<double>(f.rows());
    CHECK(pred[0][p] == doctest::Approx(m).epsilon(1e-9));
  }
}

TEST_CASE("planted weights are recovered") {
  std::mt19937_64 rng(13);
  const auto w = planted_weights(20, rng);
  const FeatureMatrix f = planted(100, 20, w, 0.01, rng);
  const auto r = fit_readout(f, 1e-4);
  REQUIRE(r.kept.size() == 20);
  double worst = 0.0;
  for (std::size_t j = 0; j < 20; ++j)
    for (std::size_t p = 0; p < kHomographyParams; ++p) {
      const double est = r.weights[j * kHomographyParams + p] / r.scale[j];
      const double truth = w[j * kHomographyParams + p];
      worst = std::max(worst, std::abs(est - truth) / std::abs(truth));
    }
  MESSAGE("worst relative weight error " << worst);
  CHECK(worst < 0.05);
}

TEST_CASE("constant feature columns are dropped and recorded") {
  std::mt19937_64 rng(14);
  FeatureMatrix f = planted(40, 5, planted_weights(5, rng), 0.01, rng);
  for (std::size_t i = 0; i < f.rows(); ++i) f.values[i * 5 + 2] = 4.0;
  const auto r = fit_readout(f, 1e-3);
  CHECK(r.dropped == std::vector<std::size_t>{2});
  CHECK(r.kept == std::vector<std::size_t>{0, 1, 3, 4});
  CHECK_THROWS_AS(fit_readout(f, -1.0), ConfigError);
}

TEST_CASE("readout evaluation") {
  std::mt19937_64 rng(15);
  const auto w = planted_weights(6, rng);

  SUBCASE("perfect readout gives rho 1 and unvaried columns are undefined") {
    FeatureMatrix f = planted(80, 6, w, 0.0, rng);
    for (auto& l : f.labels) l[7] = 0.0;
    const auto e = evaluate_readout(fit_readout(f, 0.0), f);
    for (std::size_t p = 0; p < 7; ++p) CHECK(e.rho[p] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isnan(e.rho[7]));
  }
  SUBCASE("shuffled labels give near-zero correlation") {
    const FeatureMatrix train = planted(1000, 6, w, 0.1, rng);
    FeatureMatrix test = planted(1000, 6, w, 0.1, rng);
    std::shuffle(test.labels.begin(), test.labels.end(), rng);
    const auto e = evaluate_readout(fit_readout(train, 1e-3), test);
    for (double r : e.rho) CHECK(std::abs(r) < 0.1);
  }
  SUBCASE("affine rescaling of a feature column leaves rho unchanged") {
    const FeatureMatrix train = planted(200, 6, w, 0.5, rng);
    const FeatureMatrix test = planted(100, 6, w, 0.5, rng);
    FeatureMatrix train2 = train, test2 = test;
    for (auto* m : {&train2, &test2})
      for (std::size_t i = 0; i < m->rows(); ++i) m->values[i * 6 + 3] = 7.3 * m->values[i * 6 + 3] - 2.0;
    const auto a = evaluate_readout(fit_readout(train, 1e-2), test);
    const auto b = evaluate_readout(fit_readout(train2, 1e-2), test2);
    for (std::size_t p = 0; p < kHomographyParams; ++p) CHECK(a.rho[p] == doctest::Approx(b.rho[p]).epsilon(1e-9));
  }
  SUBCASE("scatter export") {
    const FeatureMatrix f = planted(5, 6, w, 0.0, rng);
    const auto e = evaluate_readout(fit_readout(f, 0.0), f);
    TempDir dir("scatter");
    write_scatter_csv(f, e, dir.path / "s.csv");
    std::ifstream is(dir.path / "s.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "sequence_id,parameter,true,predicted");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 5 * kHomographyParams);
  }
}

TEST_CASE("static sequences decode identically per frame and per sequence") {
  StimulusConfig sc;
  sc.height = sc.width = 8;
  sc.check_size = 2;
  sc.frames_per_sequence = 5;
  sc.train_sequences = 40;
  sc.test_sequences = 20;
  sc.test_repeats = 1;
  sc.static_mode = true;
  sc.sampler.image_width = 8;
  sc.seed = 21;
  const StimulusDataset d = generate_dataset(sc);
  NetworkState st = small_network(5);
  const std::size_t tap = conv_block_tap(st.spec, 2);
  auto input = [](const SequenceSet& s) {
    VideoTensor m = concat_movie(s);
    for (double& v : m.values()) v -= 0.5;
    return m;
  };
  const VideoTensor tr = input(d.train), te = input(d.test);
  const auto seq_train = build_features(st, tr, d.train, 2, tap, false);
  const auto seq_test = build_features(st, te, d.test, 2, tap, false);
  const auto frame_train = build_features(st, tr, d.train, 2, tap, true);
  const auto frame_test = build_features(st, te, d.test, 2, tap, true);
  CHECK(seq_train.rows() == 40);
  CHECK(frame_train.rows() == 40 * 4);
  const auto a = evaluate_readout(fit_readout(seq_train, 1e-2), seq_test);
  const auto b = evaluate_readout(fit_readout(frame_train, 1e-2), frame_test);
  for (std::size_t p = 0; p < kHomographyParams; ++p) {
    if (std::isnan(a.rho[p])) {
      CHECK(std::isnan(b.rho[p]));
      continue;
    }
    CHECK(a.rho[p] == doctest::Approx(b.rho[p]).epsilon(1e-9));
  }
  CHECK(build_features(st, tr, d.train, 2, tap, false).values == seq_train.values);
}
