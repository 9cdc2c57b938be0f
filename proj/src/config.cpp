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

#include "hoconv/config.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <type_traits>

namespace hoconv {

namespace {

using nlohmann::json;

// Reads optional keys of one JSON object and rejects whatever is left over.
class Section {
 public:
  Section(const json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ != nullptr && !node_->is_object()) throw ConfigError(where() + " must be an object");
  }

  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + " must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) throw ConfigError(where(key) + " must be finite");
    }
  }
  template <class T>
    requires(std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
  void get(const char* key, T& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError(where(key) + " must be a non-negative integer");
      out = v->get<T>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + " must be an array of numbers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  Section child(const char* key) { return Section(take(key), where(key)); }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [k, v] : node_->items())
      if (!used_.contains(k)) throw ConfigError("unknown configuration key '" + where(k.c_str()) + "'");
  }

 private:
  const json* take(const char* key) {
    if (node_ == nullptr) return nullptr;
    auto it = node_->find(key);
    if (it == node_->end()) return nullptr;
    used_.insert(key);
    return &*it;
  }
  std::string where(const char* key = nullptr) const {
    if (key == nullptr) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* node_;
  std::string path_;
  std::set<std::string> used_;
};

void read_window(Section s, WindowSpec& w) {
  s.get("n_t", w.n_t);
  s.get("n_s", w.n_s);
  s.finish();
}

json window_json(const WindowSpec& w) { return {{"n_t", w.n_t}, {"n_s", w.n_s}}; }

}  // namespace

ExperimentConfig config_from_json(const json& tree) {
  ExperimentConfig c;
  Section root(&tree, "");
  root.get("seed", c.seed);
  {
    Section s = root.child("stimulus");
    auto& st = c.stimulus;
    s.get("height", st.height);
    s.get("width", st.width);
    s.get("frame_rate_hz", st.frame_rate_hz);
    s.get("frames_per_sequence", st.frames_per_sequence);
    s.get("train_sequences", st.train_sequences);
    s.get("test_sequences", st.test_sequences);
    s.get("test_repeats", st.test_repeats);
    s.get("check_size", st.check_size);
    s.get("static_mode", st.static_mode);
    Section t = s.child("sampler");
    t.get("scale_lo", st.sampler.scale_lo);
    t.get("scale_hi", st.sampler.scale_hi);
    t.get("shear_lo", st.sampler.shear_lo);
    t.get("shear_hi", st.sampler.shear_hi);
    t.get("translate_frac", st.sampler.translate_frac);
    t.get("perspective", st.sampler.perspective);
    t.finish();
    s.finish();
    st.sampler.image_width = st.width;
  }
  {
    Section s = root.child("cells");
    auto& r = c.cells;
    s.get("n_linear", r.n_linear);
    s.get("n_multiplicative", r.n_multiplicative);
    s.get("n_expansion", r.n_expansion);
    s.get("n_distractor", r.n_distractor);
    s.get("n_selected", c.n_selected);
    s.get("subset", c.cell_subset);
    s.get("bin_width_s", r.bin_width_s);
    Section t = s.child("temporal");
    t.get("peak_ms", r.temporal.peak_ms);
    t.get("trough_ms", r.temporal.trough_ms);
    t.get("trough_ratio", r.temporal.trough_ratio);
    t.get("length", r.temporal.length);
    t.finish();
    s.get("hr_fast_ms", r.hr_fast_ms);
    s.get("hr_slow_ms", r.hr_slow_ms);
    s.get("linear_sigma", r.linear_sigma);
    s.get("subunit_sigma", r.subunit_sigma);
    s.get("subunit_offset", r.subunit_offset);
    s.get("expansion_radius", r.expansion_radius);
    s.get("expansion_pairs", r.expansion_pairs);
    s.get("expansion_jitter", r.expansion_jitter);
    s.get("drive_gain", r.drive_gain);
    s.get("threshold", r.threshold);
    s.get("base_rate", r.base_rate);
    s.get("distractor_rate", r.distractor_rate);
    s.get("distractor_gain", r.distractor_gain);
    s.get("bootstrap_iterations", r.bootstrap_iterations);
    s.get("train_trials", c.train_trials);
    s.finish();
  }
  {
    Section s = root.child("model");
    auto& m = c.model;
    std::string kind = m.higher_order ? "hocnn" : "baseline";
    s.get("kind", kind);
    if (kind != "hocnn" && kind != "baseline")
      throw ConfigError("model.kind must be \"baseline\" or \"hocnn\", got \"" + kind + "\"");
    m.higher_order = kind == "hocnn";
    s.get("crop", m.crop);
    s.get("pool", m.pool);
    read_window(s.child("first"), m.first);
    read_window(s.child("second"), m.second);
    s.get("channels1", m.channels1);
    s.get("channels2", m.channels2);
    s.get("order", m.order);
    s.finish();
  }
  {
    Section s = root.child("train");
    auto& t = c.train;
    s.get("lr", t.lr);
    s.get("weight_decay", t.weight_decay);
    s.get("batch_size", t.batch_size);
    s.get("max_epochs", t.max_epochs);
    s.get("val_fraction", t.val_fraction);
    s.get("early_stop_patience", t.early_stop_patience);
    s.get("freeze_higher_order", t.freeze_higher_order);
    s.get("record_wall_time", t.record_wall_time);
    s.get("fraction", c.fraction);
    Section p = s.child("scheduler");
    p.get("factor", t.scheduler.factor);
    p.get("patience", t.scheduler.patience);
    p.get("threshold", t.scheduler.threshold);
    p.get("min_lr", t.scheduler.min_lr);
    p.finish();
    s.finish();
  }
  {
    Section s = root.child("readout");
    s.get("tap_block", c.readout.tap_block);
    s.get("lambda", c.readout.lambda);
    s.get("lambda_sweep", c.readout.lambda_sweep);
    s.get("per_frame", c.readout.per_frame);
    s.finish();
  }
  {
    Section s = root.child("sta");
    s.get("frames", c.sta.frames);
    s.get("check_size", c.sta.check_size);
    s.get("n_lags", c.sta.n_lags);
    s.finish();
  }
  {
    Section s = root.child("paths");
    std::string out = c.out_dir.string();
    s.get("out", out);
    c.out_dir = out;
    s.finish();
  }
  root.finish();
  apply_master_seed(c, c.seed);
  validate_config(c);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& st = c.stimulus;
  const auto& r = c.cells;
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["stimulus"] = {{"height", st.height},
                   {"width", st.width},
                   {"frame_rate_hz", st.frame_rate_hz},
                   {"frames_per_sequence", st.frames_per_sequence},
                   {"train_sequences", st.train_sequences},
                   {"test_sequences", st.test_sequences},
                   {"test_repeats", st.test_repeats},
                   {"check_size", st.check_size},
                   {"static_mode", st.static_mode},
                   {"sampler",
                    {{"scale_lo", st.sampler.scale_lo},
                     {"scale_hi", st.sampler.scale_hi},
                     {"shear_lo", st.sampler.shear_lo},
                     {"shear_hi", st.sampler.shear_hi},
                     {"translate_frac", st.sampler.translate_frac},
                     {"perspective", st.sampler.perspective}}}};
  j["cells"] = {{"n_linear", r.n_linear},
                {"n_multiplicative", r.n_multiplicative},
                {"n_expansion", r.n_expansion},
                {"n_distractor", r.n_distractor},
                {"n_selected", c.n_selected},
                {"subset", c.cell_subset},
                {"bin_width_s", r.bin_width_s},
                {"temporal",
                 {{"peak_ms", r.temporal.peak_ms},
                  {"trough_ms", r.temporal.trough_ms},
                  {"trough_ratio", r.temporal.trough_ratio},
                  {"length", r.temporal.length}}},
                {"hr_fast_ms", r.hr_fast_ms},
                {"hr_slow_ms", r.hr_slow_ms},
                {"linear_sigma", r.linear_sigma},
                {"subunit_sigma", r.subunit_sigma},
                {"subunit_offset", r.subunit_offset},
                {"expansion_radius", r.expansion_radius},
                {"expansion_pairs", r.expansion_pairs},
                {"expansion_jitter", r.expansion_jitter},
                {"drive_gain", r.drive_gain},
                {"threshold", r.threshold},
                {"base_rate", r.base_rate},
                {"distractor_rate", r.distractor_rate},
                {"distractor_gain", r.distractor_gain},
                {"bootstrap_iterations", r.bootstrap_iterations},
                {"train_trials", c.train_trials}};
  j["model"] = {{"kind", c.model.higher_order ? "hocnn" : "baseline"},
                {"crop", c.model.crop},
                {"pool", c.model.pool},
                {"first", window_json(c.model.first)},
                {"second", window_json(c.model.second)},
                {"channels1", c.model.channels1},
                {"channels2", c.model.channels2},
                {"order", c.model.order}};
  j["train"] = {{"lr", t.lr},
                {"weight_decay", t.weight_decay},
                {"batch_size", t.batch_size},
                {"max_epochs", t.max_epochs},
                {"val_fraction", t.val_fraction},
                {"early_stop_patience", t.early_stop_patience},
                {"freeze_higher_order", t.freeze_higher_order},
                {"record_wall_time", t.record_wall_time},
                {"fraction", c.fraction},
                {"scheduler",
                 {{"factor", t.scheduler.factor},
                  {"patience", t.scheduler.patience},
                  {"threshold", t.scheduler.threshold},
                  {"min_lr", t.scheduler.min_lr}}}};
  j["readout"] = {{"tap_block", c.readout.tap_block},
                  {"lambda", c.readout.lambda},
                  {"lambda_sweep", c.readout.lambda_sweep},
                  {"per_frame", c.readout.per_frame}};
  j["sta"] = {{"frames", c.sta.frames}, {"check_size", c.sta.check_size}, {"n_lags", c.sta.n_lags}};
  j["paths"] = {{"out", c.out_dir.string()}};
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json tree;
  try {
    tree = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(tree);
}

void validate_config(const ExperimentConfig& c) {
  c.train.validate();
  HOCONV_REQUIRE(c.fraction > 0.0 && c.fraction <= 1.0 - c.train.val_fraction + 1e-12, ConfigError,
                 "train.fraction must be in (0, 1 - val_fraction]");
  HOCONV_REQUIRE(c.train_trials >= 1, ConfigError, "cells.train_trials must be >= 1");
  HOCONV_REQUIRE(c.stimulus.frames_per_sequence >= 1, ConfigError, "stimulus.frames_per_sequence must be >= 1");
  HOCONV_REQUIRE(c.stimulus.test_repeats >= 1, ConfigError, "stimulus.test_repeats must be >= 1");
  HOCONV_REQUIRE(c.stimulus.frame_rate_hz > 0.0, ConfigError, "stimulus.frame_rate_hz must be > 0");
  HOCONV_REQUIRE(c.stimulus.check_size >= 1, ConfigError, "stimulus.check_size must be >= 1");
  HOCONV_REQUIRE(c.model.channels1 >= 1 && c.model.channels2 >= 1, ConfigError, "model channels must be >= 1");
  HOCONV_REQUIRE(c.model.order == 2 || c.model.order == 3, ConfigError, "model.order must be 2 or 3");
  HOCONV_REQUIRE(c.readout.tap_block == 1 || c.readout.tap_block == 2, ConfigError,
                 "readout.tap_block must be 1 or 2");
  HOCONV_REQUIRE(c.readout.lambda >= 0.0, ConfigError, "readout.lambda must be >= 0");
  for (double l : c.readout.lambda_sweep)
    HOCONV_REQUIRE(l >= 0.0, ConfigError, "readout.lambda_sweep entries must be >= 0");
  HOCONV_REQUIRE(c.sta.n_lags >= 1 && c.sta.frames >= 1 && c.sta.check_size >= 1, ConfigError,
                 "sta.frames, sta.check_size and sta.n_lags must be >= 1");
  HOCONV_REQUIRE(c.cell_subset == "all" || c.cell_subset == "reliable" || c.cell_subset == "expansion" ||
                     c.cell_subset == "control",
                 ConfigError, "cells.subset must be all, reliable, expansion or control");
  HOCONV_REQUIRE(!c.out_dir.empty(), ConfigError, "paths.out must not be empty");
  (void)model_spec(c.model, c.model.higher_order, 1).propagate();
}

}  // namespace hoconv
