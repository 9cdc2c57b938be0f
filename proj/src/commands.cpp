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

#include "hoconv/commands.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "hoconv/readout.hpp"

namespace hoconv {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string hex(const unsigned char* data, unsigned int n) {
  std::ostringstream os;
  for (unsigned int i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(data[i]);
  return os.str();
}

// Output files of one command, claimed before anything is written.
class Outputs {
 public:
  Outputs(fs::path dir, bool force) : dir_(std::move(dir)), force_(force) {
    HOCONV_REQUIRE(!dir_.empty(), ConfigError, "no output directory given");
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  fs::path claim(const std::string& name) {
    const fs::path p = dir_ / name;
    if (fs::exists(p)) {
      if (!force_) throw ConfigError("output " + p.string() + " already exists (pass --force to overwrite)");
      fs::remove(p);
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    names_.push_back(name);
    return p;
  }

  fs::path operator/(const std::string& name) const { return dir_ / name; }
  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& names() const { return names_; }

 private:
  fs::path dir_;
  bool force_;
  std::vector<std::string> names_;
};

struct Run {
  Outputs out;
  fs::path config_path, manifest_path;
  std::vector<fs::path> inputs;

  Run(const ExperimentConfig& config, const CommandOptions& o)
      : out(o.out.empty() ? config.out_dir : o.out, o.force) {
    config_path = out.claim("config.json");
    manifest_path = out.claim("manifest.json");
  }

  CommandResult finish(const std::string& command, const ExperimentConfig& config, std::string summary) {
    const json cfg = config_to_json(config);
    write_text(config_path, cfg.dump(2) + "\n");
    json manifest;
    manifest["tool"] = "hoconv";
    manifest["version"] = kToolVersion;
    manifest["command"] = command;
    manifest["config"] = cfg;
    manifest["inputs"] = json::array();
    for (const auto& p : inputs) manifest["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    manifest["outputs"] = json::array();
    for (const auto& name : out.names())
      if (name != "manifest.json" && fs::exists(out / name)) manifest["outputs"].push_back({{"file", name}, {"sha256", sha256_file(out / name)}});
    write_text(manifest_path, manifest.dump(2) + "\n");
    std::vector<std::string> written;
    for (const auto& name : out.names())
      if (fs::exists(out / name)) written.push_back(name);
    return CommandResult{out.dir(), written, std::move(summary)};
  }

  static void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + p.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed for " + p.string());
  }
};

std::ofstream open_csv(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << std::setprecision(17);
  return os;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void require_path(const fs::path& p, const char* flag) {
  HOCONV_REQUIRE(!p.empty(), ConfigError, std::string("missing required option ") + flag);
}

PreparedData load_data(const CommandOptions& o, bool need_responses, std::vector<fs::path>* inputs) {
  require_path(o.dataset, "--dataset");
  PreparedData d;
  inputs->push_back(o.dataset / "train.hocv");
  inputs->push_back(o.dataset / "test.hocv");
  d.dataset = read_dataset(o.dataset);
  if (!need_responses) return d;
  require_path(o.responses, "--responses");
  inputs->push_back(o.responses / "train.horx");
  inputs->push_back(o.responses / "test.horx");
  d.train_responses = read_responses(o.responses / "train.horx");
  d.test_responses = read_responses(o.responses / "test.horx");
  HOCONV_REQUIRE(d.train_responses.cell_ids == d.test_responses.cell_ids, DataError,
                 "train and test responses list different cells");
  return d;
}

// Cells a checkpoint was trained on: selected_cells.csv next to it, else all.
std::vector<std::size_t> checkpoint_cells(const fs::path& checkpoint, const ResponseSet& responses,
                                          std::vector<fs::path>* inputs) {
  const fs::path list = checkpoint.parent_path() / "selected_cells.csv";
  std::vector<std::size_t> cells;
  if (!fs::exists(list)) {
    cells.resize(responses.n_cells());
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
    return cells;
  }
  inputs->push_back(list);
  std::ifstream is(list);
  std::string line;
  std::getline(is, line);
  HOCONV_REQUIRE(line == "index,cell_id,kind", DataError, list.string() + ": unexpected header");
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < responses.n_cells(); ++i) by_id[responses.cell_ids[i]] = i;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string index, id;
    std::getline(row, index, ',');
    std::getline(row, id, ',');
    const auto it = by_id.find(id);
    HOCONV_REQUIRE(it != by_id.end(), DataError, list.string() + ": cell '" + id + "' is not in the responses");
    cells.push_back(it->second);
  }
  return cells;
}

std::string model_name(const NetworkState& state) {
  return state.spec.layers.front().kind == LayerKind::kHoConv3d ? "hocnn" : "baseline";
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  return hex(md, n);
}

std::string sha256_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("SHA-256 initialization failed");
  }
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, md, &n);
  EVP_MD_CTX_free(ctx);
  return hex(md, n);
}

CommandResult cmd_generate(const ExperimentConfig& config, const CommandOptions& options) {
  const StimulusDataset d = generate_dataset(config.stimulus);
  Run run(config, options);
  const auto train = run.out.claim("train.hocv");
  const auto test = run.out.claim("test.hocv");
  const auto labels_train = run.out.claim("labels_train.csv");
  const auto labels_test = run.out.claim("labels_test.csv");
  write_sequence_set(d, d.train, train);
  write_sequence_set(d, d.test, test);
  write_labels_csv(d.train, labels_train);
  write_labels_csv(d.test, labels_test);
  return run.finish("generate", config,
                    std::to_string(d.train.sequences.size()) + " train and " +
                        std::to_string(d.test.sequences.size()) + " test sequences");
}

CommandResult cmd_simulate(const ExperimentConfig& config, const CommandOptions& options) {
  std::vector<fs::path> inputs;
  PreparedData d = load_data(options, false, &inputs);
  Run run(config, options);
  run.inputs = inputs;
  const auto train = run.out.claim("train.horx");
  const auto test = run.out.claim("test.horx");
  const auto rel_path = run.out.claim("reliability.csv");
  const auto cells_path = run.out.claim("cells.csv");
  d = simulate_responses(config, std::move(d.dataset));
  write_responses(d.train_responses, "train", train);
  write_responses(d.test_responses, "test", test);
  const auto rel = bootstrap_reliability(d.test_responses, config.cells.bootstrap_iterations, config.cells.seed);
  write_reliability_csv(d.test_responses, rel, rel_path);
  auto os = open_csv(cells_path);
  os << "cell_id,kind,gain,threshold,base_rate,subunits\n";
  for (const auto& c : d.cells)
    os << c.id << ',' << cell_kind_name(c.kind) << ',' << c.gain << ',' << c.threshold << ',' << c.base_rate << ','
       << c.subunits.size() << '\n';
  os.close();
  double mean = 0.0;
  std::size_t defined = 0;
  for (const auto& r : rel)
    if (r.defined) {
      mean += r.mean;
      ++defined;
    }
  return run.finish("simulate", config,
                    std::to_string(d.cells.size()) + " cells, mean reliability " +
                        fmt(defined ? mean / static_cast<double>(defined) : 0.0));
}

CommandResult cmd_train(const ExperimentConfig& config, const CommandOptions& options) {
  std::vector<fs::path> inputs;
  const PreparedData d = load_data(options, true, &inputs);
  const double fraction = options.fraction.value_or(config.fraction);
  ExperimentConfig used = config;
  used.fraction = fraction;
  validate_config(used);
  const auto cells = select_cells(used, d.test_responses);
  Run run(used, options);
  run.inputs = inputs;
  const auto ckpt = run.out.claim("checkpoint.hock");
  const auto log = run.out.claim("training_log.csv");
  const auto list = run.out.claim("selected_cells.csv");
  const TrainResult r = train_model(used, d, cells, used.model.higher_order, fraction);
  write_checkpoint(r.best, ckpt);
  write_training_log(r.log, log);
  auto os = open_csv(list);
  os << "index,cell_id,kind\n";
  for (std::size_t i : cells) os << i << ',' << d.test_responses.cell_ids[i] << ',' << cell_kind_name(d.test_responses.kinds[i]) << '\n';
  os.close();
  double best_val = 0.0;
  for (const auto& e : r.log)
    if (e.epoch == r.best_epoch) best_val = e.val_loss;
  auto result = run.finish("train", used,
                           model_name(r.best) + " on " + std::to_string(cells.size()) + " cells, best epoch " +
                               std::to_string(r.best_epoch) + " val_loss " + fmt(best_val));
  if (r.aborted_non_finite)
    throw NumericError("training diverged after epoch " + std::to_string(r.log.size()) +
                       "; the best checkpoint (epoch " + std::to_string(r.best_epoch) + ") was written to " +
                       ckpt.string());
  return result;
}

CommandResult cmd_eval(const ExperimentConfig& config, const CommandOptions& options) {
  std::vector<fs::path> inputs;
  require_path(options.checkpoint, "--checkpoint");
  inputs.push_back(options.checkpoint);
  const NetworkState state = read_checkpoint(options.checkpoint);
  const PreparedData d = load_data(options, true, &inputs);
  const auto cells = checkpoint_cells(options.checkpoint, d.test_responses, &inputs);
  const ModelRun m = evaluate_model(config, d, cells, state);
  Run run(config, options);
  run.inputs = inputs;
  const auto metrics = run.out.claim("metrics.csv");
  const auto summary = run.out.claim("summary.csv");
  const auto scatter = run.out.claim("scatter.csv");
  const std::size_t frames = d.test_responses.n_frames();
  {
    auto os = open_csv(metrics);
    os << "cell_id,kind,rho\n";
    for (std::size_t i = 0; i < cells.size(); ++i)
      os << d.test_responses.cell_ids[cells[i]] << ',' << cell_kind_name(d.test_responses.kinds[cells[i]]) << ','
         << m.test.per_cell[i] << '\n';
  }
  {
    auto os = open_csv(summary);
    os << "model,n_cells,n_defined,mean,stderr\n"
       << model_name(state) << ',' << cells.size() << ',' << cells.size() - m.test.excluded << ',' << m.test.mean
       << ',' << m.test.stderr_ << '\n';
  }
  {
    auto os = open_csv(scatter);
    os << "cell_id,frame,predicted,trial_mean\n";
    for (std::size_t i = 0; i < cells.size(); ++i)
      for (std::size_t f = 0; f < frames; ++f)
        os << d.test_responses.cell_ids[cells[i]] << ',' << f << ',' << m.predicted[i * frames + f] << ','
           << m.trial_mean[i * frames + f] << '\n';
  }
  return run.finish("eval", config,
                    model_name(state) + " correlation to mean " + fmt(m.test.mean) + " +- " + fmt(m.test.stderr_) +
                        " over " + std::to_string(cells.size() - m.test.excluded) + " cells");
}

CommandResult cmd_decode(const ExperimentConfig& config, const CommandOptions& options) {
  std::vector<fs::path> inputs;
  require_path(options.checkpoint, "--checkpoint");
  inputs.push_back(options.checkpoint);
  const NetworkState state = read_checkpoint(options.checkpoint);
  const PreparedData d = load_data(options, false, &inputs);
  const std::size_t tap = conv_block_tap(state.spec, config.readout.tap_block);
  const std::size_t clip = state.spec.input.t;
  const auto train = build_features(state, network_input(concat_movie(d.dataset.train), config.model), d.dataset.train,
                                    clip, tap, config.readout.per_frame);
  const auto test = build_features(state, network_input(concat_movie(d.dataset.test), config.model), d.dataset.test,
                                   clip, tap, config.readout.per_frame);
  const auto eval = evaluate_readout(fit_readout(train, config.readout.lambda), test);

  Run run(config, options);
  run.inputs = inputs;
  const auto summary = run.out.claim("readout_summary.csv");
  const auto sweep = run.out.claim("readout_sweep.csv");
  const auto scatter = run.out.claim("scatter.csv");
  const auto& names = homography_param_names();
  const std::string model = model_name(state);
  {
    auto os = open_csv(summary);
    os << "model,subset,parameter,rho,defined\n";
    for (std::size_t p = 0; p < kHomographyParams; ++p)
      os << model << ',' << config.cell_subset << ',' << names[p] << ',' << eval.rho[p] << ','
         << (std::isnan(eval.rho[p]) ? 0 : 1) << '\n';
  }
  {
    auto os = open_csv(sweep);
    os << "lambda,parameter,rho\n";
    for (double l : config.readout.lambda_sweep) {
      const auto e = evaluate_readout(fit_readout(train, l), test);
      for (std::size_t p = 0; p < kHomographyParams; ++p) os << l << ',' << names[p] << ',' << e.rho[p] << '\n';
    }
  }
  write_scatter_csv(test, eval, scatter);
  auto show = [](double v) { return std::isnan(v) ? std::string("undefined") : fmt(v); };
  return run.finish("decode", config,
                    model + " rho(H11) " + show(eval.rho[0]) + " rho(H22) " + show(eval.rho[4]) + " from " +
                        std::to_string(train.n_features) + " features");
}

std::vector<StaRow> sta_for_cells(const VideoTensor& noise, const std::vector<std::vector<double>>& counts,
                                  const std::vector<std::string>& ids, const std::vector<std::string>& kinds,
                                  std::size_t n_lags, const fs::path& dir) {
  HOCONV_REQUIRE(counts.size() == ids.size() && kinds.size() == ids.size(), ContractError,
                 "sta_for_cells: counts, ids and kinds differ in length");
  std::vector<StaRow> rows;
  for (std::size_t c = 0; c < ids.size(); ++c) {
    StaRow row;
    row.cell_id = ids[c];
    row.kind = kinds[c];
    try {
      const StaVolume sta = compute_sta(noise, counts[c], n_lags);
      const SeparableRF rf = svd_decompose(sta);
      row.n_spikes = sta.n_spikes;
      row.separability = rf.separability;
      row.sigma1 = rf.sigma1;
      if (!dir.empty()) {
        write_sta(sta, ids[c], dir / (ids[c] + ".hsta"));
        write_temporal_csv(rf, dir / (ids[c] + "_temporal.csv"));
        write_spatial_pgm(rf, dir / (ids[c] + "_spatial.pgm"));
      }
    } catch (const DataError& e) {
      row.error = e.what();
    } catch (const NumericError& e) {
      row.error = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sta_summary(const std::vector<StaRow>& rows, const fs::path& path) {
  auto os = open_csv(path);
  os << "cell_id,kind,n_spikes,separability,sigma1,status,error\n";
  for (const auto& r : rows) {
    os << r.cell_id << ',' << r.kind << ',';
    if (r.error.empty())
      os << r.n_spikes << ',' << r.separability << ',' << r.sigma1 << ",ok,\n";
    else
      os << ",,,error," << csv_field(r.error) << '\n';
  }
}

CommandResult cmd_sta(const ExperimentConfig& config, const CommandOptions& options) {
  const auto& st = config.stimulus;
  const VideoTensor noise =
      make_binary_noise(config.sta.frames, st.height, st.width, config.sta.check_size, config.seed ^ 0x535441ULL);
  std::vector<ModelCell> cells = make_cell_bank(config.cells, st.height, st.width, st.frame_rate_hz);
  calibrate_bank(cells, noise, config.cells);
  const ResponseSet resp =
      simulate_movie(cells, noise, 1, config.cells.bin_width_s, st.frame_rate_hz, config.cells.seed + 2);
  std::vector<std::vector<double>> counts;
  std::vector<std::string> kinds;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    counts.push_back(resp.frame_counts(0, c));
    kinds.push_back(cell_kind_name(cells[c].kind));
  }
  Run run(config, options);
  const auto summary = run.out.claim("sta_summary.csv");
  for (const auto& c : cells)
    for (const char* suffix : {".hsta", "_temporal.csv", "_spatial.pgm"}) run.out.claim("sta/" + c.id + suffix);
  const auto rows = sta_for_cells(noise, counts, resp.cell_ids, kinds, config.sta.n_lags, run.out / "sta");
  write_sta_summary(rows, summary);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
  return run.finish("sta", config,
                    std::to_string(rows.size() - failed) + " STAs over " + std::to_string(config.sta.frames) +
                        " noise frames, " + std::to_string(failed) + " cells without a defined STA");
}

}  // namespace hoconv
