// Copyright 2026 The dbneval Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dbneval/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <numbers>
#include <set>

#include "CLI11.hpp"

#include "dbneval/baselines.hpp"
#include "dbneval/dbn.hpp"
#include "dbneval/estimation.hpp"
#include "dbneval/oracle.hpp"
#include "dbneval/pipeline.hpp"
#include "dbneval/serialization.hpp"
#include "dbneval/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dbneval {

namespace {

// ---------------------------------------------------------------------------
// Schema helpers

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

int positive_int(const json& obj, const char* key, int fallback, const std::string& where, int min = 1) {
  const json& v = obj.contains(key) ? obj.at(key) : json(fallback);
  if (!v.is_number_integer()) throw ConfigError(where + "." + key + " must be an integer");
  const auto x = v.get<std::int64_t>();
  if (x < min || x > std::numeric_limits<int>::max()) {
    throw ConfigError(where + "." + key + " must be >= " + std::to_string(min));
  }
  return static_cast<int>(x);
}

const std::set<std::string> kTrainingKeys{"cd_steps",        "epochs",         "lr_start",           "lr_end",
                                          "momentum",        "weight_decay",   "batch_size",         "mean_field_steps",
                                          "mean_field_damping", "weight_init_sd", "exact_gradient", "exact_log_loss_budget"};

void apply_training(const json& j, TrainConfig& c, const std::string& where) {
  check_keys(j, kTrainingKeys, where);
  c.cd_steps = get_or(j, "cd_steps", c.cd_steps, where);
  c.epochs = get_or(j, "epochs", c.epochs, where);
  c.lr_start = get_or(j, "lr_start", c.lr_start, where);
  c.lr_end = get_or(j, "lr_end", c.lr_end, where);
  c.momentum = get_or(j, "momentum", c.momentum, where);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay, where);
  c.batch_size = get_or(j, "batch_size", c.batch_size, where);
  c.mean_field_steps = get_or(j, "mean_field_steps", c.mean_field_steps, where);
  c.mean_field_damping = get_or(j, "mean_field_damping", c.mean_field_damping, where);
  c.weight_init_sd = get_or(j, "weight_init_sd", c.weight_init_sd, where);
  c.exact_gradient = get_or(j, "exact_gradient", c.exact_gradient, where);
  c.exact_log_loss_budget = get_or(j, "exact_log_loss_budget", c.exact_log_loss_budget, where);
  try {
    validate(c);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void validate_data(json& d) {
  check_keys(d, {"source", "synthetic", "image_manifest", "patch_size", "train_file", "test_file", "preprocess", "pairs",
                 "train_samples", "test_samples", "pair"},
             "data");
  const auto source = get_or<std::string>(d, "source", "synthetic", "data");
  if (source == "synthetic") {
    if (!d.contains("synthetic")) throw ConfigError("data.synthetic is required for a synthetic source");
    try {
      make_synthetic(d["synthetic"]);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("data.synthetic: ") + e.what());
    }
  } else if (source == "images") {
    if (!d.contains("image_manifest")) throw ConfigError("data.image_manifest is required for an images source");
    get_or<std::string>(d, "image_manifest", "", "data");
    positive_int(d, "patch_size", 4, "data");
  } else if (source == "files") {
    if (!d.contains("train_file") || !d.contains("test_file")) {
      throw ConfigError("data.train_file and data.test_file are required for a files source");
    }
    get_or<std::string>(d, "train_file", "", "data");
    get_or<std::string>(d, "test_file", "", "data");
  } else {
    throw ConfigError("data.source must be synthetic, images or files");
  }
  d["source"] = source;
  d["preprocess"] = get_or(d, "preprocess", source == "images", "data");
  d["pairs"] = positive_int(d, "pairs", 1, "data");
  d["train_samples"] = positive_int(d, "train_samples", 1000, "data");
  d["test_samples"] = positive_int(d, "test_samples", 1000, "data");
  d["pair"] = positive_int(d, "pair", 0, "data", 0);
  if (source == "files" && d["pairs"].get<int>() != 1) throw ConfigError("a files source provides exactly one pair");
  if (d["pair"].get<int>() >= d["pairs"].get<int>()) throw ConfigError("data.pair must be below data.pairs");
}

void validate_layers(json& layers, const json& training) {
  if (!layers.is_array() || layers.empty()) throw ConfigError("layers must be a nonempty array");
  TrainConfig base;
  apply_training(training, base, "training");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string where = "layers[" + std::to_string(l) + "]";
    json& spec = layers[l];
    check_keys(spec, {"kind", "hidden", "sigma", "init_from_below", "training"}, where);
    LayerKind kind;
    try {
      kind = parse_kind(get_or<std::string>(spec, "kind", "", where));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (l > 0 && kind == LayerKind::grbm) throw ConfigError(where + ": only the bottom layer may be a GRBM");
    positive_int(spec, "hidden", 1, where);
    if (!spec.contains("hidden")) throw ConfigError(where + ".hidden is required");
    const double sigma = get_or(spec, "sigma", 1.0, where);
    if (!(sigma > 0.0)) throw ConfigError(where + ".sigma must be positive");
    TrainConfig c = base;
    if (spec.contains("training")) apply_training(spec["training"], c, where + ".training");
  }
}

void validate_estimation(json& e) {
  check_keys(e, {"n_is", "ais_betas", "top_chains", "grbm_chains", "interface_chains", "exact_partition",
                 "exact_marginals", "enumeration_budget", "base_rate_rows", "test_rows", "tolerance_bits", "n_is_sweep",
                 "layer_sweep", "potential", "model", "dataset"},
             "estimation");
  e["n_is"] = positive_int(e, "n_is", 100, "estimation");
  e["ais_betas"] = positive_int(e, "ais_betas", 1000, "estimation");
  e["top_chains"] = positive_int(e, "top_chains", 1000, "estimation");
  e["grbm_chains"] = positive_int(e, "grbm_chains", 100, "estimation");
  e["interface_chains"] = positive_int(e, "interface_chains", 100000, "estimation");
  e["base_rate_rows"] = positive_int(e, "base_rate_rows", 1000, "estimation", 0);
  e["test_rows"] = positive_int(e, "test_rows", 0, "estimation", 0);
  e["tolerance_bits"] = get_or(e, "tolerance_bits", 0.005, "estimation");
  e["enumeration_budget"] = get_or<std::uint64_t>(e, "enumeration_budget", kDefaultEnumerationBudget, "estimation");
  for (const char* key : {"exact_partition", "exact_marginals"}) {
    if (!e.contains(key)) e[key] = "auto";
    if (!(e[key].is_boolean() || e[key] == "auto")) throw ConfigError(std::string("estimation.") + key + " must be true, false or \"auto\"");
  }
  e["layer_sweep"] = get_or(e, "layer_sweep", false, "estimation");
  if (!e.contains("n_is_sweep")) e["n_is_sweep"] = json::array();
  if (!e["n_is_sweep"].is_array()) throw ConfigError("estimation.n_is_sweep must be an array");
  for (const auto& v : e["n_is_sweep"]) {
    if (!v.is_number_integer() || v.get<int>() < 1) throw ConfigError("estimation.n_is_sweep entries must be positive integers");
  }
  if (e.contains("potential")) {
    json& p = e["potential"];
    check_keys(p, {"sizes", "k_recon", "eval_rows"}, "estimation.potential");
    if (!p.contains("sizes") || !p["sizes"].is_array() || p["sizes"].empty()) {
      throw ConfigError("estimation.potential.sizes must be a nonempty array");
    }
    for (const auto& v : p["sizes"]) {
      if (!v.is_number_integer() || v.get<int>() < 1) throw ConfigError("estimation.potential.sizes must be positive integers");
    }
    p["k_recon"] = positive_int(p, "k_recon", 1, "estimation.potential");
    p["eval_rows"] = positive_int(p, "eval_rows", 0, "estimation.potential", 0);
  }
  for (const char* key : {"model", "dataset"}) {
    if (e.contains(key)) get_or<std::string>(e, key, "", "estimation");
  }
}

void validate_baselines(json& b) {
  if (!b.is_array()) throw ConfigError("baselines must be an array");
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::string where = "baselines[" + std::to_string(i) + "]";
    json& spec = b[i];
    check_keys(spec, {"kind", "components", "sigma", "sigmas", "folds", "iterations", "restarts"}, where);
    const auto kind = get_or<std::string>(spec, "kind", "", where);
    if (kind != "gaussian" && kind != "moig" && kind != "mog" && kind != "moec" && kind != "ica") {
      throw ConfigError(where + ".kind must be gaussian, moig, mog, moec or ica");
    }
    if (kind == "moig" || kind == "mog") {
      spec["components"] = positive_int(spec, "components", 2, where);
      spec["iterations"] = positive_int(spec, "iterations", 100, where);
      spec["restarts"] = positive_int(spec, "restarts", 5, where);
    }
    if (kind == "moig") {
      if (spec.contains("sigma") == spec.contains("sigmas")) throw ConfigError(where + " needs exactly one of sigma or sigmas");
      if (spec.contains("sigma") && !(get_or(spec, "sigma", 0.0, where) > 0.0)) throw ConfigError(where + ".sigma must be positive");
      if (spec.contains("sigmas")) {
        const auto s = get_or<std::vector<double>>(spec, "sigmas", {}, where);
        if (s.empty()) throw ConfigError(where + ".sigmas must be nonempty");
        for (double v : s) {
          if (!(v > 0.0)) throw ConfigError(where + ".sigmas must be positive");
        }
        spec["folds"] = positive_int(spec, "folds", 5, where, 2);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Shared command helpers

json report_header(const ExperimentConfig& c, const char* command) {
  return {{"tool", "dbneval"}, {"version", kToolVersion}, {"command", command}, {"config_hash", c.hash}, {"seed", c.seed}};
}

std::string relative_to_out(const ExperimentConfig& c, const std::string& path) {
  const auto rel = fs::path(path).lexically_relative(c.output_dir);
  if (!rel.empty() && rel.native().rfind("..", 0) != 0) return rel.generic_string();
  return path;
}

void write_json(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_timing(const std::string& path, double seconds, const json& extra = json::object()) {
  json t = extra;
  t["wall_seconds"] = seconds;
  write_json(path, t);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string pair_file(const ExperimentConfig& c, const char* which, int pair) {
  return c.out_path("data/" + std::string(which) + "_" + std::to_string(pair) + ".ds");
}

double bits(double nats_per_row, Eigen::Index dims) { return nats_per_row / std::numbers::ln2 / static_cast<double>(dims); }

json bits_value(double v) { return round_significant(v, 7); }

struct MeanSe {
  double mean = 0.0;
  double sd = 0.0;
  double sem = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe m;
  for (double x : v) m.mean += x / static_cast<double>(v.size());
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (v.size() > 1 && *lo != *hi) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    m.sem = m.sd / std::sqrt(static_cast<double>(v.size()));
  }
  return m;
}

bool auto_or(const json& v, bool automatic) { return v.is_boolean() ? v.get<bool>() : automatic; }

bool fits_budget(Eigen::Index bits, std::uint64_t budget) {
  return bits < 63 && (std::uint64_t{1} << bits) <= budget;
}

}  // namespace

std::vector<TrainConfig> layer_train_configs(const ExperimentConfig& c) {
  TrainConfig base;
  apply_training(c.json.at("training"), base, "training");
  std::vector<TrainConfig> out;
  const json& layers = c.json.at("layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    TrainConfig cfg = base;
    if (layers[l].contains("training")) apply_training(layers[l]["training"], cfg, "layers[" + std::to_string(l) + "].training");
    cfg.seed = splitmix64(c.seed * 1000003ULL + l);
    out.push_back(cfg);
  }
  return out;
}

namespace {

json evaluate_baselines(const ExperimentConfig& c, const Matrix& train, const Matrix& test, std::ostream& log) {
  json out = json::array();
  const json& specs = c.json.at("baselines");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const json& spec = specs[i];
    const std::string kind = spec["kind"];
    json row{{"name", kind}};
    if (kind == "moec" || kind == "ica") {
      row["status"] = "not implemented";
      out.push_back(row);
      continue;
    }
    RngStream rng(c.seed, 60 + i);
    BaselineModel model;
    if (kind == "gaussian") {
      model = fit_gaussian(train);
    } else {
      EmOptions opts;
      opts.iterations = spec["iterations"];
      opts.restarts = spec["restarts"];
      const int k = spec["components"];
      row["components"] = k;
      if (kind == "mog") {
        model = fit_mog(train, k, opts, rng).model;
      } else {
        double sigma = 0.0;
        if (spec.contains("sigma")) {
          sigma = spec["sigma"];
        } else {
          const CvResult cv = cross_validate_moig_sigma(spec["sigmas"].get<std::vector<double>>(), train, spec["folds"], k,
                                                        opts, splitmix64(c.seed + i), c.threads);
          sigma = cv.best_sigma;
          const auto csv = c.out_path("eval/cv_baseline_" + std::to_string(i) + ".csv");
          write_cv_csv(csv, cv);
          row["cv_table"] = relative_to_out(c, csv);
        }
        row["sigma"] = sigma;
        model = fit_moig(train, k, sigma, opts, rng).model;
      }
    }
    const auto file = c.out_path("eval/baseline_" + std::to_string(i) + ".model");
    write_container(file, std::visit([](const auto& m) { return to_container(m); }, model));
    row["model"] = relative_to_out(c, file);
    row["status"] = "ok";
    row["bits_per_component"] = bits_value(baseline_log_loss(model, test));
    log << "baseline " << kind << ": " << row["bits_per_component"].get<double>() << " bits/component\n";
    out.push_back(row);
  }
  return out;
}

json estimate_block(const std::vector<LogEstimate>& rows, const LogEstimate& log_z, Eigen::Index dims) {
  std::vector<double> logs;
  double is_var = 0.0;
  for (const auto& r : rows) {
    logs.push_back(r.log_value);
    is_var += r.standard_error * r.standard_error;
  }
  const MeanSe m = mean_se(logs);
  const double n = static_cast<double>(rows.size());
  const double sampling = bits(m.sem, dims);
  const double importance = bits(std::sqrt(is_var) / n, dims);
  const double partition = bits(log_z.standard_error, dims);
  return {{"bits_per_component", bits_value(bits(-m.mean, dims))},
          {"standard_error", {{"test_sampling", bits_value(sampling)},
                              {"importance_sampling", bits_value(importance)},
                              {"partition_function", bits_value(partition)},
                              {"total", bits_value(std::sqrt(sampling * sampling + importance * importance +
                                                             partition * partition))}}}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string ExperimentConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? path : (fs::path(base_dir) / p).lexically_normal().string();
}

std::string ExperimentConfig::out_path(const std::string& relative) const {
  const fs::path p = fs::path(output_dir) / relative;
  fs::create_directories(p.parent_path());
  return p.string();
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double round_significant(double v, int digits) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return std::strtod(buf, nullptr);
}

ExperimentConfig make_config(const json& input, const std::string& base_dir, const CliOverrides& overrides) {
  json j = input.is_null() ? json::object() : input;
  check_keys(j, {"seed", "threads", "output_dir", "label", "data", "layers", "training", "estimation", "baselines",
                 "compare", "oracle"},
             "config");
  ExperimentConfig c;
  c.base_dir = base_dir.empty() ? "." : base_dir;
  if (j.contains("seed") && !(j["seed"].is_number_integer() && j["seed"].get<std::int64_t>() >= 0)) throw ConfigError("seed must be a nonnegative integer");
  c.seed = overrides.seed.value_or(get_or<std::uint64_t>(j, "seed", 1, "config"));
  j["seed"] = c.seed;
  if (overrides.threads) {
    if (*overrides.threads < 1) throw ConfigError("--threads must be >= 1");
    c.threads = *overrides.threads;
  } else if (j.contains("threads")) {
    c.threads = positive_int(j, "threads", 1, "config");
  } else {
    c.threads = default_thread_count();
  }
  c.output_dir = overrides.out ? *overrides.out : c.resolve(get_or<std::string>(j, "output_dir", "out", "config"));
  j["label"] = get_or<std::string>(j, "label", "dbn", "config");
  if (j.contains("data")) validate_data(j["data"]);
  if (!j.contains("training")) j["training"] = json::object();
  if (j.contains("layers")) {
    validate_layers(j["layers"], j["training"]);
  } else {
    TrainConfig t;
    apply_training(j["training"], t, "training");
  }
  if (!j.contains("estimation")) j["estimation"] = json::object();
  validate_estimation(j["estimation"]);
  if (!j.contains("baselines")) j["baselines"] = json::array();
  validate_baselines(j["baselines"]);
  if (j.contains("compare")) {
    check_keys(j["compare"], {"reports"}, "compare");
    const auto reports = get_or<std::vector<std::string>>(j["compare"], "reports", {}, "compare");
    if (reports.empty()) throw ConfigError("compare.reports must list at least one report");
  }
  if (!j.contains("oracle")) j["oracle"] = json::object();
  check_keys(j["oracle"], {"mutation"}, "oracle");
  const auto mutation = get_or<std::string>(j["oracle"], "mutation", "none", "oracle");
  if (mutation != "none" && mutation != "energy_sign") throw ConfigError("oracle.mutation must be none or energy_sign");
  j["oracle"]["mutation"] = mutation;

  json hashed = j;
  hashed.erase("threads");
  hashed.erase("output_dir");
  c.hash = config_hash(hashed);
  j.erase("threads");
  c.json = std::move(j);
  return c;
}

ExperimentConfig load_config(const std::string& path, const CliOverrides& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return make_config(j, fs::path(path).parent_path().string(), overrides);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_preprocess(const ExperimentConfig& c, std::ostream& log) {
  if (!c.json.contains("data")) throw ConfigError("the preprocess command needs a data section");
  const auto start = std::chrono::steady_clock::now();
  const json& d = c.json["data"];
  const std::string source = d["source"];
  const bool whiten = d["preprocess"];
  const int pairs = d["pairs"];
  const Eigen::Index n_train = d["train_samples"].get<Eigen::Index>();
  const Eigen::Index n_test = d["test_samples"].get<Eigen::Index>();

  std::function<DataSet(int, bool)> draw;
  std::optional<SyntheticSource> synth;
  std::optional<PatchSource> patches;
  if (source == "synthetic") {
    synth = make_synthetic(d["synthetic"]);
    draw = [&](int pair, bool train) {
      return synthesize(*synth, train ? n_train : n_test, RngStream(c.seed, 100 + 2 * pair + (train ? 0 : 1)), c.threads);
    };
  } else if (source == "images") {
    patches = PatchSource{load_image_manifest(c.resolve(d["image_manifest"])), d.value("patch_size", 4)};
    draw = [&](int pair, bool train) {
      RngStream rng(c.seed, 100 + 2 * pair + (train ? 0 : 1));
      return sample_patches(*patches, train ? n_train : n_test, rng);
    };
  } else {
    draw = [&](int, bool train) { return load_dataset(c.resolve(d[train ? "train_file" : "test_file"])); };
  }

  json manifest = report_header(c, "preprocess");
  manifest["pairs"] = json::array();
  for (int pair = 0; pair < pairs; ++pair) {
    DataSet train = draw(pair, true);
    DataSet test = draw(pair, false);
    if (train.dims() != test.dims()) throw DataError("train and test sets differ in dimensionality");
    if (whiten) {
      train = preprocess(train);
      test = replay(train.provenance, test);
      log << "pair " << pair << ": whitening condition number "
          << preprocess_fit_from_provenance(train.provenance).condition_number << "\n";
    }
    const auto train_path = pair_file(c, "train", pair);
    const auto test_path = pair_file(c, "test", pair);
    save_dataset(train_path, train);
    save_dataset(test_path, test);
    manifest["pairs"].push_back({{"train", relative_to_out(c, train_path)},
                                 {"test", relative_to_out(c, test_path)},
                                 {"train_rows", train.size()},
                                 {"test_rows", test.size()},
                                 {"dims", train.dims()}});
    log << "pair " << pair << ": " << train.size() << " train / " << test.size() << " test rows, D=" << train.dims()
        << "\n";
  }
  write_json(c.out_path("data/manifest.json"), manifest);
  write_timing(c.out_path("data/timing.json"), seconds_since(start));
  return 0;
}

int cmd_train(const ExperimentConfig& c, std::ostream& log) {
  if (!c.json.contains("layers")) throw ConfigError("the train command needs a layers section");
  const auto start = std::chrono::steady_clock::now();
  const int pair = c.json.contains("data") ? c.json["data"]["pair"].get<int>() : 0;
  const auto data_path = pair_file(c, "train", pair);
  const DataSet data = load_dataset(data_path);
  std::vector<LayerSpec> specs;
  for (const auto& l : c.json["layers"]) {
    specs.push_back({parse_kind(l["kind"].get<std::string>()), l["hidden"].get<Eigen::Index>(), l.value("sigma", 1.0),
                     l.value("init_from_below", true)});
  }
  if (specs.front().kind == LayerKind::grbm) {
    log << "training on " << data.size() << " x " << data.dims() << " real-valued rows\n";
  } else if (!((data.samples.array() == 0.0) || (data.samples.array() == 1.0)).all()) {
    throw DataError(data_path + ": a binary bottom layer needs 0/1 data");
  }
  const std::vector<TrainConfig> configs = layer_train_configs(c);
  const GreedyResult result = train_dbn_greedy(specs, data.samples, configs);

  json provenance = report_header(c, "train");
  provenance["data"] = relative_to_out(c, data_path);
  provenance["layers"] = c.json["layers"];
  provenance["training"] = c.json["training"];
  const auto model_dir = c.out_path("model/dbn.json");
  save_dbn(fs::path(model_dir).parent_path().string(), result.dbn, provenance);
  json timing = json::object();
  timing["layers"] = json::array();
  for (std::size_t l = 0; l < result.histories.size(); ++l) {
    write_training_log_csv(c.out_path("model/layer_" + std::to_string(l + 1) + "_training.csv"), result.histories[l]);
    double secs = 0.0;
    for (const auto& r : result.histories[l]) secs += r.wall_seconds;
    timing["layers"].push_back(secs);
    const auto& last = result.histories[l].back();
    log << "layer " << l + 1 << ": " << last.epoch << " epochs, reconstruction error " << last.reconstruction_error;
    if (last.exact_log_loss_bits) log << ", exact log-loss " << *last.exact_log_loss_bits << " bits";
    log << "\n";
  }
  write_timing(c.out_path("model/timing.json"), seconds_since(start), timing);
  return 0;
}

int cmd_eval(const ExperimentConfig& c, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  const json& e = c.json["estimation"];
  const int pair = c.json.contains("data") ? c.json["data"]["pair"].get<int>() : 0;
  const std::string model_dir = e.contains("model") ? c.resolve(e["model"]) : c.out_path("model/dbn.json");
  const std::string model_path = e.contains("model") ? model_dir : fs::path(model_dir).parent_path().string();
  if (!fs::exists(fs::path(model_path) / "dbn.json")) throw ConfigError("unknown model: no dbn.json in " + model_path);
  const DbnModel dbn = load_dbn(model_path);
  const std::string test_path = e.contains("dataset") ? c.resolve(e["dataset"]) : pair_file(c, "test", pair);
  DataSet test = load_dataset(test_path);
  if (test.dims() != dbn.visible_size()) {
    throw DataError("dataset " + test_path + " has " + std::to_string(test.dims()) + " components, the model expects " +
                    std::to_string(dbn.visible_size()));
  }
  const int limit = e["test_rows"];
  if (limit > 0 && limit < test.size()) test.samples.conservativeResize(limit, Eigen::NoChange);
  const std::string train_path = pair_file(c, "train", pair);
  std::optional<DataSet> train;
  if (fs::exists(train_path)) train = load_dataset(train_path);

  const auto budget = e["enumeration_budget"].get<std::uint64_t>();
  const auto& top = dbn.layers().back();
  const Eigen::Index top_bits = kind_of(top) == LayerKind::rbm    ? std::min(visible_size(top), hidden_size(top))
                                : kind_of(top) == LayerKind::grbm ? hidden_size(top)
                                                                  : visible_size(top);
  bool srbm_interfaces_enumerable = true;
  for (std::size_t l = 1; l + 1 < dbn.layers().size(); ++l) {
    if (kind_of(dbn.layers()[l]) == LayerKind::srbm && !fits_budget(visible_size(dbn.layers()[l]), budget)) {
      srbm_interfaces_enumerable = false;
    }
  }
  EstimatorSettings s;
  s.n_is = e["n_is"];
  s.ais_betas = e["ais_betas"];
  s.top_chains = e["top_chains"];
  s.grbm_chains = e["grbm_chains"];
  s.interface_chains = e["interface_chains"];
  s.exact_partition = auto_or(e["exact_partition"], fits_budget(top_bits, budget));
  s.exact_marginals = auto_or(e["exact_marginals"], srbm_interfaces_enumerable);
  s.budget = budget;
  s.threads = c.threads;
  s.base_rate_rows = e["base_rate_rows"];
  const Matrix* base_data = train && s.base_rate_rows > 0 ? &train->samples : nullptr;

  const DbnLikelihoodEstimator est(dbn, s, c.seed, base_data);
  const auto rows = est.evaluate(test.samples, c.seed);
  const Eigen::Index dims = test.dims();

  json report = report_header(c, "eval");
  report["label"] = c.json["label"];
  report["model"] = {{"path", relative_to_out(c, model_path)}, {"layers", json::array()}};
  for (const auto& layer : dbn.layers()) {
    report["model"]["layers"].push_back(
        {{"kind", kind_name(kind_of(layer))}, {"visible", visible_size(layer)}, {"hidden", hidden_size(layer)}});
  }
  report["dataset"] = {{"path", relative_to_out(c, test_path)}, {"rows", test.size()}, {"dims", dims}};
  report["settings"] = {{"n_is", s.n_is},
                        {"ais_betas", s.ais_betas},
                        {"top_chains", s.top_chains},
                        {"grbm_chains", s.grbm_chains},
                        {"interface_chains", s.interface_chains},
                        {"exact_partition", s.exact_partition},
                        {"exact_marginals", s.exact_marginals},
                        {"base_rate_rows", base_data ? s.base_rate_rows : 0}};
  report["log_partition_top"] = {{"value", est.log_partition_top().log_value},
                                 {"standard_error", est.log_partition_top().standard_error},
                                 {"method", est.exact_partition() ? "exact" : "ais"}};
  report["interfaces"] = est.interface_methods();
  report["estimate"] = estimate_block(rows, est.log_partition_top(), dims);
  const double estimated = report["estimate"]["bits_per_component"];
  log << "estimated log-loss: " << estimated << " bits/component\n";

  std::optional<ExactDbnEvaluator> exact;
  try {
    exact.emplace(dbn, budget);
  } catch (const EnumerationBudgetExceeded&) {
  }
  if (exact) {
    const double truth = average_log_loss(test.samples, [&](const Vector& x) { return exact->log_likelihood(x); }, c.threads);
    const double delta = std::abs(truth - estimated);
    report["true"] = {{"bits_per_component", bits_value(truth)},
                      {"abs_delta_bits", bits_value(delta)},
                      {"tolerance_bits", e["tolerance_bits"]},
                      {"within_tolerance", delta <= e["tolerance_bits"].get<double>()}};
    log << "true log-loss: " << bits_value(truth).get<double>() << " bits/component (|delta| " << delta << ")\n";
  } else {
    report["true"] = nullptr;
  }

  if (!test.provenance.empty() && test.provenance.back().value("op", "") == "synthesize") {
    const SyntheticSource gen = make_synthetic(test.provenance.back()["spec"]);
    report["generator_bits_per_component"] = bits_value(average_log_loss(test.samples, gen.log_density, c.threads));
  }

  if (!e["n_is_sweep"].empty()) {
    report["n_is_sweep"] = json::array();
    for (const auto& n : e["n_is_sweep"]) {
      const json block = estimate_block(est.evaluate(test.samples, c.seed, n.get<int>()), est.log_partition_top(), dims);
      report["n_is_sweep"].push_back({{"n_is", n}, {"bits_per_component", block["bits_per_component"]}});
    }
  }
  if (e["layer_sweep"].get<bool>()) {
    report["layer_sweep"] = json::array();
    for (std::size_t l = 1; l <= dbn.layers().size(); ++l) {
      double b = estimated;
      if (l < dbn.layers().size()) {
        const DbnModel sub(std::vector<LayerParams>(dbn.layers().begin(), dbn.layers().begin() + static_cast<std::ptrdiff_t>(l)));
        const DbnLikelihoodEstimator sub_est(sub, s, c.seed, base_data);
        b = estimate_block(sub_est.evaluate(test.samples, c.seed), sub_est.log_partition_top(), dims)["bits_per_component"];
      }
      report["layer_sweep"].push_back({{"layers", l}, {"bits_per_component", b}});
    }
  }
  if (e.contains("potential")) {
    if (!train) throw DataError("potential log-loss needs the training set " + train_path);
    const json& p = e["potential"];
    Matrix eval_set = test.samples;
    const int eval_rows = p["eval_rows"];
    if (eval_rows > 0 && eval_rows < eval_set.rows()) eval_set.conservativeResize(eval_rows, Eigen::NoChange);
    report["potential"] = json::array();
    std::uint64_t idx = 0;
    for (const auto& size : p["sizes"]) {
      const Eigen::Index n = std::min<Eigen::Index>(size.get<Eigen::Index>(), train->size());
      RngStream rng(c.seed, 40 + idx++);
      const double v = estimate_potential_log_loss(dbn.layers().front(), eval_set, train->samples.topRows(n),
                                                   p["k_recon"], rng, c.threads);
      report["potential"].push_back({{"recon_size", n}, {"bits_per_component", bits_value(v)}});
    }
  }
  report["baselines"] = json::array();
  if (!c.json["baselines"].empty()) {
    if (!train) throw DataError("baselines need the training set " + train_path);
    report["baselines"] = evaluate_baselines(c, train->samples, test.samples, log);
  }
  write_json(c.out_path("eval/report.json"), report);
  write_timing(c.out_path("eval/timing.json"), seconds_since(start));
  return 0;
}

int cmd_compare(const ExperimentConfig& c, std::ostream& log) {
  if (!c.json.contains("compare")) throw ConfigError("the compare command needs a compare section");
  std::map<std::string, std::vector<double>> table;
  std::vector<std::string> order;
  std::map<std::string, std::map<long long, std::vector<double>>> layer_sweep, n_is_sweep, potential;
  std::optional<long long> dims;
  const auto reports = c.json["compare"]["reports"].get<std::vector<std::string>>();
  auto add = [&](const std::string& name, double v) {
    if (!table.count(name)) order.push_back(name);
    table[name].push_back(v);
  };
  for (const auto& path : reports) {
    const auto full = c.resolve(path);
    if (!fs::exists(full)) throw DataError("report not found: " + full);
    json r;
    try {
      r = json::parse(read_text_file(full));
      const long long d = r.at("dataset").at("dims").get<long long>();
      if (dims && *dims != d) {
        throw ConfigError("reports mix dimensionalities (" + std::to_string(*dims) + " and " + std::to_string(d) + ")");
      }
      dims = d;
      const std::string label = r.at("label");
      add(label, r.at("estimate").at("bits_per_component"));
      for (const auto& b : r.value("baselines", json::array())) {
        if (b.at("status") != "ok") {
          if (!table.count(b.at("name").get<std::string>())) order.push_back(b.at("name"));
          table[b.at("name")];
          continue;
        }
        std::string name = b.at("name");
        if (b.contains("components")) name += "_k" + std::to_string(b["components"].get<int>());
        add(name, b.at("bits_per_component"));
      }
      for (const auto& s : r.value("layer_sweep", json::array())) layer_sweep[label][s.at("layers")].push_back(s.at("bits_per_component"));
      for (const auto& s : r.value("n_is_sweep", json::array())) n_is_sweep[label][s.at("n_is")].push_back(s.at("bits_per_component"));
      for (const auto& s : r.value("potential", json::array())) potential[label][s.at("recon_size")].push_back(s.at("bits_per_component"));
    } catch (const json::exception& e) {
      throw DataError(full + ": not an eval report: " + e.what());
    }
  }

  auto num = [](double v) { return format_double(round_significant(v, 7)); };
  std::string csv = "model,trials,mean_bits,sem_bits\n";
  json rows = json::array();
  for (const auto& name : order) {
    const auto& v = table[name];
    if (v.empty()) {
      csv += name + ",0,not implemented,\n";
      rows.push_back({{"model", name}, {"trials", 0}, {"status", "not implemented"}});
      continue;
    }
    const MeanSe m = mean_se(v);
    csv += name + "," + std::to_string(v.size()) + "," + num(m.mean) + "," + num(m.sem) + "\n";
    rows.push_back({{"model", name}, {"trials", v.size()}, {"mean_bits", bits_value(m.mean)}, {"sem_bits", bits_value(m.sem)}});
    log << name << ": " << num(m.mean) << " +- " << num(m.sem) << " bits/component (" << v.size() << " trials)\n";
  }
  write_text_file(c.out_path("compare/table.csv"), csv);
  json summary = report_header(c, "compare");
  summary["dims"] = dims.value_or(0);
  summary["reports"] = reports;
  summary["table"] = rows;
  write_json(c.out_path("compare/table.json"), summary);

  if (!layer_sweep.empty()) {
    long long max_layers = 0;
    for (const auto& [label, by] : layer_sweep) max_layers = std::max(max_layers, by.rbegin()->first);
    std::string out = "model";
    for (long long l = 1; l <= max_layers; ++l) out += ",layers_" + std::to_string(l);
    out += "\n";
    for (const auto& [label, by] : layer_sweep) {
      out += label;
      for (long long l = 1; l <= max_layers; ++l) out += "," + (by.count(l) ? num(mean_se(by.at(l)).mean) : std::string());
      out += "\n";
    }
    write_text_file(c.out_path("compare/layer_sweep.csv"), out);
  }
  auto long_series = [&](const std::map<std::string, std::map<long long, std::vector<double>>>& series,
                         const char* x, const std::string& file) {
    if (series.empty()) return;
    std::string out = std::string("model,") + x + ",trials,mean_bits,sem_bits\n";
    for (const auto& [label, by] : series) {
      for (const auto& [k, v] : by) {
        const MeanSe m = mean_se(v);
        out += label + "," + std::to_string(k) + "," + std::to_string(v.size()) + "," + num(m.mean) + "," + num(m.sem) + "\n";
      }
    }
    write_text_file(c.out_path("compare/" + file), out);
  };
  long_series(n_is_sweep, "n_is", "n_is_sweep.csv");
  long_series(potential, "recon_size", "potential.csv");
  return 0;
}

int cmd_oracle(const ExperimentConfig& c, const std::string& filter, std::ostream& log) {
  OracleOptions o;
  o.seed = c.seed;
  o.threads = c.threads;
  o.filter = filter;
  o.flip_energy_sign = c.json["oracle"]["mutation"] == "energy_sign";
  const auto start = std::chrono::steady_clock::now();
  std::vector<OracleResult> results;
  try {
    results = run_oracle_suite(o, log);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  json report = report_header(c, "oracle");
  report.update(oracle_report(results));
  write_json(c.out_path("oracle/oracle.json"), report);
  write_timing(c.out_path("oracle/timing.json"), seconds_since(start));
  const bool ok = report["passed"];
  log << (ok ? "all " + std::to_string(results.size()) + " checks passed"
             : "FAILED at " + report["first_failure"].get<std::string>())
      << "\n";
  return ok ? 0 : 1;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const EstimationError*>(&e) || dynamic_cast<const EnumerationBudgetExceeded*>(&e)) return 5;
  return 1;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"dbneval: train and evaluate deep belief networks on image patches"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::string filter;
  struct Command {
    const char* name;
    const char* help;
  };
  const Command commands[] = {{"preprocess", "sample or synthesize train/test pairs and whiten them"},
                              {"train", "greedily train the configured layer stack"},
                              {"eval", "estimate the test log-loss of a trained model"},
                              {"compare", "aggregate eval reports into tables and series"},
                              {"oracle", "run the brute-force consistency checks"}};
  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    auto* opt = sub->add_option("--config", config_path, "JSON experiment config");
    if (std::string(cmd.name) != "oracle") opt->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--threads", threads, "worker threads (default: DBNEVAL_THREADS or 1)");
    sub->add_option("--out", out, "output directory");
    if (std::string(cmd.name) == "oracle") sub->add_option("--filter", filter, "run only the named check");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const CliOverrides overrides{seed, threads, out, filter.empty() ? std::nullopt : std::optional<std::string>(filter)};
    const ExperimentConfig config =
        config_path.empty() ? make_config(json::object(), ".", overrides) : load_config(config_path, overrides);
    if (name == "preprocess") return cmd_preprocess(config, std::cout);
    if (name == "train") return cmd_train(config, std::cout);
    if (name == "eval") return cmd_eval(config, std::cout);
    if (name == "compare") return cmd_compare(config, std::cout);
    return cmd_oracle(config, filter, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "dbneval " << name << ": " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace dbneval
