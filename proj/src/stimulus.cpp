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

#include "hoconv/stimulus.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hoconv/binary_io.hpp"
#include "hoconv/container.hpp"

namespace hoconv {

namespace {

constexpr double kBackground = 0.5;

double sample_or_background(const Frame& f, long r, long c) {
  if (r < 0 || c < 0 || r >= static_cast<long>(f.height) || c >= static_cast<long>(f.width))
    return kBackground;
  return f.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
}

}  // namespace

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) {
  if (m_[8] == 0.0 || !std::isfinite(m_[8]))
    throw NumericError("homography: H33 is zero, cannot normalize");
  const double s = m_[8];
  for (double& v : m_) v /= s;
  m_[8] = 1.0;
}

Homography Homography::from_params(const std::array<double, 8>& p) {
  return Homography({p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], 1.0});
}

std::array<double, 8> Homography::params() const {
  return {m_[0], m_[1], m_[2], m_[3], m_[4], m_[5], m_[6], m_[7]};
}

double Homography::determinant() const {
  const auto& a = m_;
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Homography Homography::inverse() const {
  const double det = determinant();
  if (std::abs(det) < 1e-12 || !std::isfinite(det))
    throw NumericError("homography: matrix is singular");
  const auto& a = m_;
  std::array<double, 9> inv{
      a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8], a[1] * a[5] - a[2] * a[4],
      a[5] * a[6] - a[3] * a[8], a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
      a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7], a[0] * a[4] - a[1] * a[3]};
  return Homography(inv);
}

Homography Homography::compose(const Homography& o) const {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
      r[static_cast<std::size_t>(i * 3 + j)] = acc;
    }
  return Homography(r);
}

Point apply_homography_point(const Homography& h, Point p) {
  const double d = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  if (std::abs(d) < 1e-12) throw NumericError("homography maps point to infinity");
  return {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / d,
          (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / d};
}

Frame make_checkerboard(std::size_t height, std::size_t width, std::size_t check_size,
                        std::size_t phase_row, std::size_t phase_col) {
  HOCONV_REQUIRE(check_size >= 1, ContractError, "make_checkerboard: check_size must be >= 1");
  Frame f(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t parity = (r + phase_row) / check_size + (c + phase_col) / check_size;
      f.at(r, c) = parity % 2 == 0 ? 1.0 : 0.0;
    }
  return f;
}

Frame warp_frame(const Frame& frame, const Homography& h) {
  const Homography inv = h.inverse();
  const double cy = (static_cast<double>(frame.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(frame.width) - 1.0) / 2.0;
  Frame out(frame.height, frame.width);
  for (std::size_t r = 0; r < frame.height; ++r) {
    for (std::size_t c = 0; c < frame.width; ++c) {
      const Point q{static_cast<double>(c) - cx, static_cast<double>(r) - cy};
      const double d = inv(2, 0) * q.x + inv(2, 1) * q.y + 1.0;
      if (std::abs(d) < 1e-12) {
        out.at(r, c) = kBackground;
        continue;
      }
      const Point src = apply_homography_point(inv, q);
      const double sx = src.x + cx;
      const double sy = src.y + cy;
      if (!std::isfinite(sx) || !std::isfinite(sy) || std::abs(sx) > 1e6 || std::abs(sy) > 1e6) {
        out.at(r, c) = kBackground;
        continue;
      }
      const double fx0 = std::floor(sx);
      const double fy0 = std::floor(sy);
      const double ax = sx - fx0;
      const double ay = sy - fy0;
      const long x0 = static_cast<long>(fx0);
      const long y0 = static_cast<long>(fy0);
      const double top = (1.0 - ax) * sample_or_background(frame, y0, x0) +
                         ax * sample_or_background(frame, y0, x0 + 1);
      const double bottom = (1.0 - ax) * sample_or_background(frame, y0 + 1, x0) +
                            ax * sample_or_background(frame, y0 + 1, x0 + 1);
      out.at(r, c) = (1.0 - ay) * top + ay * bottom;
    }
  }
  return out;
}

Homography TransformSampler::sample(std::mt19937_64& rng) const {
  const double t = translate_frac * static_cast<double>(image_width);
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double h11 = u(scale_lo, scale_hi);
    const double h22 = u(scale_lo, scale_hi);
    const double h12 = u(shear_lo, shear_hi);
    const double h21 = u(shear_lo, shear_hi);
    const double h13 = u(-t, t);
    const double h23 = u(-t, t);
    const double h31 = u(-perspective, perspective);
    const double h32 = u(-perspective, perspective);
    const Homography h = Homography::from_params({h11, h12, h13, h21, h22, h23, h31, h32});
    if (std::abs(h.determinant()) >= 1e-6) return h;
  }
  throw DataError("transform sampler: more than 100 near-singular draws; check parameter ranges");
}

Sequence generate_sequence(const Homography& target, const Frame& base, std::size_t n_frames,
                           bool static_mode) {
  HOCONV_REQUIRE(n_frames >= 2, ContractError, "generate_sequence: need at least 2 frames");
  Sequence seq;
  seq.video = VideoTensor(Shape{n_frames, base.height, base.width, 1});
  const std::array<double, 8> id = Homography().params();
  const std::array<double, 8> tp = target.params();
  const std::size_t frame_size = base.height * base.width;
  for (std::size_t f = 0; f < n_frames; ++f) {
    Homography h = target;
    if (!static_mode) {
      const double a = static_cast<double>(f) / static_cast<double>(n_frames - 1);
      std::array<double, 8> p{};
      for (std::size_t i = 0; i < 8; ++i) p[i] = id[i] + a * (tp[i] - id[i]);
      if (f == 0) h = Homography();
      else if (f + 1 < n_frames) h = Homography::from_params(p);
    }
    const Frame warped = f == 0 && !static_mode ? base : warp_frame(base, h);
    double* dst = seq.video.values().data() + f * frame_size;
    for (std::size_t i = 0; i < frame_size; ++i)
      dst[i] = static_cast<double>(static_cast<float>(warped.pixels[i]));
    seq.labels.push_back(h);
  }
  return seq;
}

Sequence generate_sequence(const TransformSampler& sampler, const Frame& base,
                           std::size_t n_frames, std::mt19937_64& rng, bool static_mode) {
  return generate_sequence(sampler.sample(rng), base, n_frames, static_mode);
}

namespace {

Sequence make_indexed_sequence(const StimulusConfig& cfg, std::uint64_t index) {
  std::mt19937_64 rng(cfg.seed ^ index);
  std::uniform_int_distribution<std::size_t> phase(0, 2 * cfg.check_size - 1);
  const std::size_t pr = phase(rng);
  const std::size_t pc = phase(rng);
  const Frame base = make_checkerboard(cfg.height, cfg.width, cfg.check_size, pr, pc);
  TransformSampler sampler = cfg.sampler;
  sampler.image_width = cfg.width;
  return generate_sequence(sampler, base, cfg.frames_per_sequence, rng, cfg.static_mode);
}

}  // namespace

StimulusDataset generate_dataset(const StimulusConfig& cfg) {
  HOCONV_REQUIRE(cfg.train_sequences + cfg.test_sequences > 0, DataError,
                 "stimulus: empty dataset (zero sequences requested)");
  HOCONV_REQUIRE(cfg.height >= 1 && cfg.width >= 1, ConfigError, "stimulus: empty frame size");
  HOCONV_REQUIRE(cfg.test_repeats >= 1, ConfigError, "stimulus: test_repeats must be >= 1");
  StimulusDataset d;
  d.height = cfg.height;
  d.width = cfg.width;
  d.frame_rate_hz = cfg.frame_rate_hz;
  d.frames_per_sequence = cfg.frames_per_sequence;
  d.static_mode = cfg.static_mode;
  d.train.split = "train";
  d.test.split = "test";
  d.test.repeats = cfg.test_repeats;
  for (std::size_t i = 0; i < cfg.train_sequences; ++i)
    d.train.sequences.push_back(make_indexed_sequence(cfg, i));
  for (std::size_t i = 0; i < cfg.test_sequences; ++i)
    d.test.sequences.push_back(make_indexed_sequence(cfg, (std::uint64_t{1} << 32) + i));
  return d;
}

VideoTensor concat_movie(const SequenceSet& set) {
  HOCONV_REQUIRE(!set.sequences.empty(), DataError, "sequence set '" + set.split + "' is empty");
  const Shape s0 = set.sequences.front().video.shape();
  std::size_t frames = 0;
  for (const auto& s : set.sequences) frames += s.video.shape().t;
  std::vector<double> data;
  data.reserve(frames * s0.h * s0.w);
  for (const auto& s : set.sequences)
    data.insert(data.end(), s.video.values().begin(), s.video.values().end());
  return VideoTensor(Shape{frames, s0.h, s0.w, 1}, std::move(data));
}

namespace {

nlohmann::json set_metadata(const StimulusDataset& meta, const SequenceSet& set) {
  nlohmann::json j;
  j["kind"] = "stimulus";
  j["split"] = set.split;
  j["height"] = meta.height;
  j["width"] = meta.width;
  j["channels"] = 1;
  j["frame_rate_hz"] = meta.frame_rate_hz;
  j["frames_per_sequence"] = meta.frames_per_sequence;
  j["static_mode"] = meta.static_mode;
  j["repeats"] = set.repeats;
  j["frame_dtype"] = "f32le";
  j["label_dtype"] = "f64le";
  j["labels_per_frame"] = 8;
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < set.sequences.size(); ++i)
    table.push_back({{"id", i}, {"frames", set.sequences[i].video.shape().t}});
  j["sequences"] = table;
  return j;
}

template <typename T>
T meta_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("HOCV metadata missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("HOCV metadata field '") + key + "' has the wrong type");
  }
}

}  // namespace

void write_sequence_set(const StimulusDataset& meta, const SequenceSet& set,
                        const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_container_header(os, {"HOCV", kStimulusFormatVersion, set_metadata(meta, set)});
  for (const auto& s : set.sequences) {
    HOCONV_REQUIRE(s.video.shape().h == meta.height && s.video.shape().w == meta.width,
                   ContractError, "write_sequence_set: sequence frame size differs from metadata");
    bin::put_f32_array(os, s.video.values());
  }
  for (const auto& s : set.sequences) {
    HOCONV_REQUIRE(s.labels.size() == s.video.shape().t, ContractError,
                   "write_sequence_set: one label per frame required");
    for (const auto& h : s.labels) {
      const auto p = h.params();
      bin::put_f64_array(os, p);
    }
  }
  if (!os) throw IoError("write failed for " + path.string());
}

SequenceSet read_sequence_set(const std::filesystem::path& path, StimulusDataset* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const ContainerHeader header = read_container_header(is, "HOCV", kStimulusFormatVersion);
  const auto& j = header.meta;
  if (meta_field<std::string>(j, "kind") != "stimulus")
    throw FormatError("HOCV file does not hold a stimulus set");
  SequenceSet set;
  set.split = meta_field<std::string>(j, "split");
  set.repeats = meta_field<std::size_t>(j, "repeats");
  const auto h = meta_field<std::size_t>(j, "height");
  const auto w = meta_field<std::size_t>(j, "width");
  if (meta_field<std::size_t>(j, "labels_per_frame") != 8)
    throw FormatError("HOCV: labels_per_frame must be 8");
  if (!j.contains("sequences") || !j["sequences"].is_array())
    throw FormatError("HOCV metadata missing sequence table");
  std::vector<std::size_t> frames;
  for (const auto& e : j["sequences"]) frames.push_back(meta_field<std::size_t>(e, "frames"));
  for (std::size_t t : frames) {
    Sequence s;
    s.video = VideoTensor(Shape{t, h, w, 1}, bin::get_f32_array(is, t * h * w, "frames"));
    set.sequences.push_back(std::move(s));
  }
  for (auto& s : set.sequences) {
    for (std::size_t f = 0; f < s.video.shape().t; ++f) {
      const auto p = bin::get_f64_array(is, 8, "labels");
      s.labels.push_back(Homography::from_params({p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]}));
    }
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("HOCV: trailing bytes after payload in " + path.string());
  if (meta != nullptr) {
    meta->height = h;
    meta->width = w;
    meta->frame_rate_hz = meta_field<double>(j, "frame_rate_hz");
    meta->frames_per_sequence = meta_field<std::size_t>(j, "frames_per_sequence");
    meta->static_mode = meta_field<bool>(j, "static_mode");
  }
  return set;
}

void write_dataset(const StimulusDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_sequence_set(d, d.train, dir / "train.hocv");
  write_sequence_set(d, d.test, dir / "test.hocv");
}

StimulusDataset read_dataset(const std::filesystem::path& dir) {
  StimulusDataset d;
  d.train = read_sequence_set(dir / "train.hocv", &d);
  StimulusDataset test_meta;
  d.test = read_sequence_set(dir / "test.hocv", &test_meta);
  if (test_meta.height != d.height || test_meta.width != d.width)
    throw DataError("train and test stimulus files disagree on frame size");
  return d;
}

std::uintmax_t expected_file_size(const StimulusDataset& meta, const SequenceSet& set) {
  const ContainerHeader header{"HOCV", kStimulusFormatVersion, set_metadata(meta, set)};
  std::uintmax_t total = header.byte_size();
  for (const auto& s : set.sequences) {
    const Shape sh = s.video.shape();
    total += sh.t * sh.h * sh.w * 4 + sh.t * 8 * 8;
  }
  return total;
}

void write_labels_csv(const SequenceSet& set, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "sequence_id,frame,H11,H12,H13,H21,H22,H23,H31,H32\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < set.sequences.size(); ++i) {
    const auto& labels = set.sequences[i].labels;
    for (std::size_t f = 0; f < labels.size(); ++f) {
      os << i << ',' << f;
      for (double v : labels[f].params()) os << ',' << v;
      os << '\n';
    }
  }
}

}  // namespace hoconv
