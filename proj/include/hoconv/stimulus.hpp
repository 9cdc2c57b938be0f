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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "hoconv/tensor.hpp"

namespace hoconv {

/// Grayscale image, row-major, values in [0, 1].
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}
  double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const Frame&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// 3x3 projective map, row-major, normalized so that H33 == 1.
class Homography {
 public:
  Homography();  // identity
  explicit Homography(const std::array<double, 9>& m);  // normalizes by m[8]

  /// The eight free parameters (H11, H12, H13, H21, H22, H23, H31, H32).
  static Homography from_params(const std::array<double, 8>& p);
  std::array<double, 8> params() const;

  double operator()(int row, int col) const { return m_[static_cast<std::size_t>(row * 3 + col)]; }
  const std::array<double, 9>& matrix() const { return m_; }
  double determinant() const;
  Homography inverse() const;  // throws NumericError when singular

  /// this * other, renormalized.
  Homography compose(const Homography& other) const;

  bool operator==(const Homography&) const = default;

 private:
  std::array<double, 9> m_;
};

/// (x', y') with the projective division; NumericError when |d| < 1e-12.
Point apply_homography_point(const Homography& h, Point p);

Frame make_checkerboard(std::size_t height, std::size_t width, std::size_t check_size,
                        std::size_t phase_row = 0, std::size_t phase_col = 0);

/// Inverse warp about the image center with bilinear sampling; samples
/// outside the source read as background 0.5.
Frame warp_frame(const Frame& frame, const Homography& h);

struct TransformSampler {
  double scale_lo = 0.7, scale_hi = 1.4;            // H11, H22
  double shear_lo = -0.2, shear_hi = 0.2;           // H12, H21
  double translate_frac = 0.15;                     // H13, H23 in +-frac * width
  double perspective = 0.0015;                      // H31, H32 in +-value per pixel
  std::size_t image_width = 50;

  /// Draws until |det H| >= 1e-6; DataError after 100 singular draws.
  Homography sample(std::mt19937_64& rng) const;
};

struct Sequence {
  VideoTensor video;                 // (frames, H, W, 1)
  std::vector<Homography> labels;    // one per frame
  bool operator==(const Sequence&) const = default;
};

/// Interpolates the eight free parameters linearly from identity (frame 0) to
/// target (last frame). With static_mode every frame shows the target.
Sequence generate_sequence(const Homography& target, const Frame& base, std::size_t n_frames,
                           bool static_mode = false);

/// Samples a target from the sampler and generates the sequence.
Sequence generate_sequence(const TransformSampler& sampler, const Frame& base,
                           std::size_t n_frames, std::mt19937_64& rng, bool static_mode = false);

struct StimulusConfig {
  std::size_t height = 50;
  std::size_t width = 50;
  double frame_rate_hz = 50.0;
  std::size_t frames_per_sequence = 20;
  std::size_t train_sequences = 400;
  std::size_t test_sequences = 20;
  std::size_t test_repeats = 60;
  std::size_t check_size = 10;
  bool static_mode = false;
  TransformSampler sampler;
  std::uint64_t seed = 1;
};

struct SequenceSet {
  std::string split;           // "train" or "test"
  std::size_t repeats = 1;     // presentations of the whole set
  std::vector<Sequence> sequences;
  bool operator==(const SequenceSet&) const = default;
};

struct StimulusDataset {
  std::size_t height = 0;
  std::size_t width = 0;
  double frame_rate_hz = 0.0;
  std::size_t frames_per_sequence = 0;
  bool static_mode = false;
  SequenceSet train;
  SequenceSet test;
  bool operator==(const StimulusDataset&) const = default;
};

/// Per-sequence streams are seeded with master_seed ^ index (test indices are
/// offset by 2^32). Frames are rounded to float precision.
StimulusDataset generate_dataset(const StimulusConfig& config);

/// Concatenates all sequences of a set into one continuous movie (T, H, W, 1).
VideoTensor concat_movie(const SequenceSet& set);

// HOCV file: "HOCV", u16 version, u32 JSON length, JSON metadata, frames as
// f32 in sequence-table order, then labels as f64, eight per frame.
inline constexpr std::uint16_t kStimulusFormatVersion = 1;

void write_sequence_set(const StimulusDataset& meta, const SequenceSet& set,
                        const std::filesystem::path& path);
SequenceSet read_sequence_set(const std::filesystem::path& path, StimulusDataset* meta = nullptr);

/// Writes <dir>/train.hocv and <dir>/test.hocv.
void write_dataset(const StimulusDataset& dataset, const std::filesystem::path& dir);
StimulusDataset read_dataset(const std::filesystem::path& dir);

/// Expected HOCV file size from the format arithmetic.
std::uintmax_t expected_file_size(const StimulusDataset& meta, const SequenceSet& set);

/// CSV with columns sequence_id, frame, H11..H32.
void write_labels_csv(const SequenceSet& set, const std::filesystem::path& path);

}  // namespace hoconv
