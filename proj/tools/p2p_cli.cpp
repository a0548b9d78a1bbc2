// SPDX-License-Identifier: Apache-2.0
//
// p2p: dataset generation, training, evaluation, generation and curves.
// Exit codes: 0 ok, 1 usage error, 2 runtime failure.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "p2p/checkpoint.hpp"
#include "p2p/curves.hpp"
#include "p2p/datasets.hpp"
#include "p2p/eval.hpp"
#include "p2p/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace p2p;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path out_root() {
  const char* env = std::getenv("P2P_OUT_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".");
}

/// Relative output paths land under $P2P_OUT_DIR when it is set.
fs::path resolve_out(const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p : out_root() / p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// Sidecar: the command inputs, their digest and the seed.
void write_sidecar(const fs::path& path, const std::string& command, const json& inputs, std::uint64_t seed,
                   json extra = json::object()) {
  json doc = {{"command", command},
              {"seed", seed},
              {"digest", hex_digest(fnv1a64(inputs.dump()))},
              {"inputs", inputs}};
  doc.update(extra);
  write_text(path, doc.dump(2) + "\n");
}

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = detail::trim(cell);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != cell.size()) throw UsageError(what + ": cannot parse '" + cell + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(what + ": empty list");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& what) {
  std::vector<std::size_t> out;
  for (double v : parse_numbers(text, what)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw UsageError(what + ": expected non-negative integers");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::vector<Frame> parse_frames(const std::string& text, const std::string& what) {
  std::vector<Frame> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) out.push_back(parse_numbers(part, what));
  return out;
}

Frame frame_from(const SequenceBatch& data, std::size_t index, std::size_t t) {
  if (index >= data.count()) throw UsageError("--index " + std::to_string(index) + " is out of range");
  if (t >= data.length(index)) throw UsageError("frame " + std::to_string(t) + " is out of range");
  const auto f = data.frame(index, t);
  return Frame(f.begin(), f.end());
}

struct LoadedModel {
  std::unique_ptr<P2PModel> model;
  std::string digest;
};

LoadedModel load_model(const std::string& path) {
  const Bytes bytes = read_file(path);
  return {std::make_unique<P2PModel>(decode_checkpoint(bytes)), hex_digest(fnv1a64(bytes))};
}

RunConfig load_config_arg(const std::string& path) {
  if (path.empty()) return RunConfig{};
  try {
    return load_config(path);
  } catch (const ParseError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

void check_width(const LoadedModel& m, const std::vector<Frame>& frames) {
  for (const auto& f : frames) {
    if (f.size() != m.model->dims().frame) {
      throw UsageError("control point has " + std::to_string(f.size()) + " values but the checkpoint expects " +
                       std::to_string(m.model->dims().frame));
    }
  }
}

// Config keys exposed as --key flags.
std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  std::istringstream in(to_text(RunConfig{}));
  std::string line;
  while (std::getline(in, line)) keys.push_back(detail::trim(line.substr(0, line.find('='))));
  return keys;
}

const std::vector<std::string> kDatasetKeys{"dataset", "n_points", "speed_scale", "joints", "data_seed"};

struct KeyFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& key : keys) options[key] = app->add_option("--" + key, values[key], "config key " + key);
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      try {
        set_config_value(cfg, key, values.at(key));
      } catch (const std::exception& e) {
        throw UsageError("--" + key + ": " + e.what());
      }
    }
  }
};

// ---------------------------------------------------------------------------

struct DatasetArgs {
  std::string split = "train";
  std::uint64_t first = 0;
  std::size_t count = 64;
  std::size_t length = 12;
  std::string out = "sequences.bin";
  KeyFlags keys;
};

int cmd_dataset_gen(const DatasetArgs& a) {
  RunConfig cfg;
  a.keys.apply(cfg);
  if (a.split != "train" && a.split != "test") throw UsageError("--split must be train or test");
  if (a.length < 2) throw UsageError("--length must be at least 2");
  const Split split = a.split == "train" ? Split::kTrain : Split::kTest;
  const SequenceBatch batch = cfg.dataset.generate(split, a.first, a.count, a.length);
  const fs::path out = resolve_out(a.out);
  ensure_parent(out);
  write_sequences(out, batch);
  const json inputs = {{"dataset", cfg.dataset.kind},     {"n_points", cfg.dataset.n_points},
                       {"speed_scale", cfg.dataset.speed_scale}, {"joints", cfg.dataset.joints},
                       {"split", a.split},                {"first", a.first},
                       {"count", a.count},                {"length", a.length}};
  write_sidecar(out.string() + ".json", "dataset gen", inputs, cfg.dataset.seed, {{"frame_dim", batch.frame_dim}});
  std::cout << "wrote " << batch.count() << " sequences to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out_dir = "run";
  bool quiet = false;
  KeyFlags keys;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config_arg(a.config);
  a.keys.apply(cfg);
  try {
    validate(cfg);
  } catch (const ContractError& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  const fs::path dir = resolve_out(a.out_dir);
  fs::create_directories(dir);
  write_text(dir / "config.txt", to_text(cfg));
  const TrainOutputs outputs{dir / "model.ckpt", dir / "telemetry.csv"};
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
  train(cfg, outputs, [&](const TelemetryRow& r) {
    if (!a.quiet && ((r.step + 1) % every == 0 || r.step + 1 == cfg.steps)) {
      std::cerr << "step " << r.step + 1 << "/" << cfg.steps << " total " << r.losses.total << " recon "
                << r.losses.recon << " kl " << r.losses.kl << " align " << r.losses.align << " cpc " << r.losses.cpc
                << "\n";
    }
  });
  const json inputs = {{"config", to_text(cfg)}};
  write_sidecar(dir / "run.json", "train", inputs, cfg.seed,
                {{"config_digest", hex_digest(config_digest(cfg))},
                 {"checkpoint", "model.ckpt"},
                 {"checkpoint_digest", hex_digest(fnv1a64(read_file(outputs.checkpoint)))},
                 {"telemetry", "telemetry.csv"}});
  std::cout << "wrote " << outputs.checkpoint.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TestDataArgs {
  std::string config;
  std::string data;
  std::size_t n_test = 64;
  KeyFlags keys;

  void add(CLI::App* app) {
    app->add_option("--config", config, "run config supplying the dataset keys");
    app->add_option("--data", data, "sequence file to evaluate on instead of the generated test split");
    app->add_option("--n-test", n_test, "number of test-split sequences");
    keys.add(app, kDatasetKeys);
  }

  DatasetSpec spec() const {
    RunConfig cfg = load_config_arg(config);
    keys.apply(cfg);
    return cfg.dataset;
  }

  SequenceBatch load(std::size_t length, json& inputs) const {
    if (!data.empty()) {
      const Bytes bytes = read_file(data);
      inputs["data_digest"] = hex_digest(fnv1a64(bytes));
      return decode_sequences(bytes);
    }
    const DatasetSpec d = spec();
    inputs["dataset"] = describe(d);
    return d.generate(Split::kTest, 0, n_test, length);
  }

  json describe(const DatasetSpec& d) const {
    return {{"kind", d.kind},         {"n_points", d.n_points}, {"speed_scale", d.speed_scale},
            {"joints", d.joints},     {"data_seed", d.seed},    {"n_test", n_test}};
  }
};

struct EvalOptionArgs {
  std::size_t n_samples = 100;
  std::string metric = "mse";
  std::uint64_t seed = 1;

  void add(CLI::App* app) {
    app->add_option("--n-samples", n_samples, "prior samples per test sequence");
    app->add_option("--metric", metric, "ssim, psnr or mse");
    app->add_option("--seed", seed, "sampling seed");
  }

  EvalOptions options() const {
    EvalOptions o;
    o.n_samples = n_samples;
    o.seed = seed;
    try {
      o.kind = parse_metric_kind(metric);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (n_samples == 0) throw UsageError("--n-samples must be positive");
    return o;
  }

  json to_json() const { return {{"n_samples", n_samples}, {"metric", metric}}; }
};

struct EvalArgs {
  std::string checkpoint;
  std::size_t length = 12;
  bool no_recon = false;
  std::string out = "metrics";
  TestDataArgs data;
  EvalOptionArgs eval;
};

int cmd_eval(const EvalArgs& a) {
  const EvalOptions opts = [&] {
    EvalOptions o = a.eval.options();
    o.with_reconstruction = !a.no_recon;
    return o;
  }();
  const LoadedModel m = load_model(a.checkpoint);
  json inputs = a.eval.to_json();
  inputs["checkpoint_digest"] = m.digest;
  inputs["length"] = a.length;
  inputs["reconstruction"] = !a.no_recon;
  const SequenceBatch test = a.data.load(a.length, inputs);
  const MetricsReport report = evaluate(*m.model, test, a.length, opts);
  const fs::path prefix = resolve_out(a.out);
  json doc = to_json(report);
  doc["seed"] = a.eval.seed;
  doc["digest"] = hex_digest(fnv1a64(inputs.dump()));
  doc["inputs"] = inputs;
  write_text(prefix.string() + ".json", doc.dump(2) + "\n");
  write_text(prefix.string() + ".csv", csv_header() + ",seed,digest\n" + to_csv_row(report) + "," +
                                           std::to_string(a.eval.seed) + "," + doc["digest"].get<std::string>() + "\n");
  std::cout << "S-Best " << report.s_best.mean << "  S-CPC " << report.s_cpc.mean;
  if (report.s_div) std::cout << "  S-Div " << report.s_div->mean;
  if (report.r_best) std::cout << "  R-Best " << report.r_best->mean;
  std::cout << "  (" << to_string(report.kind) << ", " << report.n_test_sequences << " sequences)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct GenerationArgs {
  std::string checkpoint;
  std::string data;
  std::size_t index = 0;
  std::uint64_t seed = 1;
  std::size_t count = 1;
  std::string out;

  void add(CLI::App* app, const std::string& default_out) {
    out = default_out;
    app->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app->add_option("--data", data, "sequence file supplying control points");
    app->add_option("--index", index, "sequence index within --data");
    app->add_option("--seed", seed, "sampling seed");
    app->add_option("--count", count, "number of generated sequences");
    app->add_option("--out", out, "output sequence file");
  }

  json inputs(const LoadedModel& m) const {
    json j = {{"checkpoint_digest", m.digest}, {"count", count}};
    if (!data.empty()) {
      j["data_digest"] = hex_digest(fnv1a64(read_file(data)));
      j["index"] = index;
    }
    return j;
  }
};

void write_generated(const GenerationArgs& g, const std::string& command, const std::vector<std::vector<Frame>>& seqs,
                     const std::vector<std::size_t>& control_indices, const std::vector<double>& counters,
                     const json& inputs) {
  SequenceBatch batch{seqs.front().front().size(), {}};
  for (const auto& s : seqs) {
    std::vector<double> flat;
    for (const auto& f : s) flat.insert(flat.end(), f.begin(), f.end());
    batch.add(std::move(flat));
  }
  const fs::path out = resolve_out(g.out);
  ensure_parent(out);
  write_sequences(out, batch);
  std::vector<std::size_t> timestamps(seqs.front().size());
  for (std::size_t t = 0; t < timestamps.size(); ++t) timestamps[t] = t + 1;
  write_sidecar(out.string() + ".json", command, inputs, g.seed,
                {{"frames", timestamps.size()},
                 {"timestamps", timestamps},
                 {"time_counter", counters},
                 {"control_indices", control_indices}});
  std::cout << "wrote " << seqs.size() << " sequence(s) of " << timestamps.size() << " frames to " << out.string()
            << "\n";
}

std::vector<double> clip_counters(std::size_t length) {
  std::vector<double> c;
  for (std::size_t t = 1; t <= length; ++t) c.push_back(time_counter(t, length));
  return c;
}

struct GenerateArgs {
  GenerationArgs g;
  std::string start, end;
  std::size_t length = 12;
};

int cmd_generate(const GenerateArgs& a) {
  const LoadedModel m = load_model(a.g.checkpoint);
  Frame start, end;
  json inputs = a.g.inputs(m);
  if (!a.g.data.empty()) {
    const SequenceBatch data = read_sequences(a.g.data);
    start = frame_from(data, a.g.index, 0);
    end = frame_from(data, a.g.index, a.length - 1);
  } else {
    if (a.start.empty() || a.end.empty()) throw UsageError("give --start and --end, or --data");
    start = parse_numbers(a.start, "--start");
    end = parse_numbers(a.end, "--end");
  }
  check_width(m, {start, end});
  inputs["start"] = start;
  inputs["end"] = end;
  inputs["length"] = a.length;
  if (a.length < 2) throw UsageError("--length must be at least 2");
  Rng rng(a.g.seed);
  std::vector<std::vector<Frame>> seqs;
  for (std::size_t i = 0; i < a.g.count; ++i) seqs.push_back(sample_sequence(*m.model, start, end, a.length, rng));
  write_generated(a.g, "generate", seqs, {0, a.length - 1}, clip_counters(a.length), inputs);
  return 0;
}

struct StitchArgs {
  GenerationArgs g;
  std::string points;
  std::string at;
  std::string lengths;
};

int cmd_stitch(const StitchArgs& a) {
  const LoadedModel m = load_model(a.g.checkpoint);
  json inputs = a.g.inputs(m);
  if (a.lengths.empty()) throw UsageError("--lengths is required");
  const std::vector<std::size_t> lengths = parse_sizes(a.lengths, "--lengths");
  std::vector<Frame> points;
  if (!a.g.data.empty()) {
    if (a.at.empty()) throw UsageError("--at is required with --data");
    const SequenceBatch data = read_sequences(a.g.data);
    for (std::size_t t : parse_sizes(a.at, "--at")) points.push_back(frame_from(data, a.g.index, t));
  } else {
    if (a.points.empty()) throw UsageError("give --points, or --data with --at");
    points = parse_frames(a.points, "--points");
  }
  check_width(m, points);
  inputs["control_points"] = points;
  inputs["lengths"] = lengths;
  if (points.size() != lengths.size() + 1) throw UsageError("need one more control point than clip lengths");
  Rng rng(a.g.seed);
  std::vector<std::vector<Frame>> seqs;
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < a.g.count; ++i) {
    StitchedSequence s = stitch_generate(*m.model, points, lengths, rng);
    indices = s.control_indices;
    seqs.push_back(std::move(s.frames));
  }
  // Counter of the clip that produced each frame; shared boundaries carry the ending clip's value.
  std::vector<double> counters{time_counter(1, lengths.front())};
  for (std::size_t len : lengths)
    for (std::size_t t = 2; t <= len; ++t) counters.push_back(time_counter(t, len));
  write_generated(a.g, "stitch", seqs, indices, counters, inputs);
  return 0;
}

struct LoopArgs {
  GenerationArgs g;
  std::string frame;
  std::size_t at = 0;
  std::size_t length = 12;
};

int cmd_loop(const LoopArgs& a) {
  const LoadedModel m = load_model(a.g.checkpoint);
  json inputs = a.g.inputs(m);
  Frame frame;
  if (!a.g.data.empty()) {
    frame = frame_from(read_sequences(a.g.data), a.g.index, a.at);
  } else {
    if (a.frame.empty()) throw UsageError("give --frame, or --data");
    frame = parse_numbers(a.frame, "--frame");
  }
  check_width(m, {frame});
  inputs["frame"] = frame;
  inputs["length"] = a.length;
  if (a.length < 3) throw UsageError("--length must be at least 3");
  Rng rng(a.g.seed);
  std::vector<std::vector<Frame>> seqs;
  for (std::size_t i = 0; i < a.g.count; ++i) seqs.push_back(loop_generate(*m.model, frame, a.length, rng));
  write_generated(a.g, "loop", seqs, {0, a.length - 1}, clip_counters(a.length), inputs);
  return 0;
}

// ---------------------------------------------------------------------------

struct CurvesArgs {
  std::string analysis;
  std::vector<std::string> models;
  std::string grid = "8,12,16,20";
  std::size_t length = 12;
  std::string out;
  TestDataArgs data;
  EvalOptionArgs eval;
};

int cmd_curves(const CurvesArgs& a) {
  CurveKind kind{};
  try {
    kind = parse_curve_kind(a.analysis);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const EvalOptions opts = a.eval.options();
  json inputs = a.eval.to_json();
  inputs["analysis"] = a.analysis;

  std::vector<std::pair<std::string, LoadedModel>> loaded;
  for (const auto& spec : a.models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--model expects label=checkpoint, got '" + spec + "'");
    const std::string path = spec.substr(eq + 1);
    if (!fs::exists(path)) throw std::runtime_error("missing checkpoint " + path);
    loaded.emplace_back(spec.substr(0, eq), load_model(path));
    inputs["models"][spec.substr(0, eq)] = loaded.back().second.digest;
  }
  if (loaded.empty()) throw UsageError("at least one --model is required");
  std::vector<NamedModel> named;
  for (const auto& [label, m] : loaded) named.push_back({label, m.model.get()});

  CurveTable table;
  if (kind == CurveKind::kCpcVsLength) {
    if (!a.data.data.empty()) throw UsageError("cpc_vs_length generates its own test split; --data is not accepted");
    const std::vector<std::size_t> grid = parse_sizes(a.grid, "--grid");
    inputs["grid"] = grid;
    inputs["dataset"] = a.data.describe(a.data.spec());
    try {
      detail::require_increasing(grid, "length");
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    table = cpc_vs_length(named, a.data.spec(), a.data.n_test, grid, opts);
  } else {
    inputs["length"] = a.length;
    const SequenceBatch test = a.data.load(a.length, inputs);
    if (kind == CurveKind::kDivThroughTime) {
      table = div_through_time(named, test, a.length, opts);
    } else if (kind == CurveKind::kQualityThroughTime) {
      table = quality_through_time(named, test, a.length, opts);
    } else {
      // Labels name the path and weight, e.g. prior@100 or posterior@10.
      std::vector<SweepModel> sweep;
      for (const auto& n : named) {
        const auto at = n.label.find('@');
        const std::string path = n.label.substr(0, at);
        if (at == std::string::npos || (path != "prior" && path != "posterior")) {
          throw UsageError("sweep labels must look like prior@<weight> or posterior@<weight>, got '" + n.label + "'");
        }
        sweep.push_back({path == "posterior", parse_numbers(n.label.substr(at + 1), "sweep weight").front(), n.model});
      }
      table = cpc_weight_sweep(sweep, test, a.length, opts);
    }
  }
  const fs::path out = resolve_out(a.out.empty() ? a.analysis + ".csv" : a.out);
  write_text(out, table.to_csv());
  write_sidecar(out.string() + ".json", "curves", inputs, a.eval.seed, {{"rows", table.rows.size()}});
  std::cout << "wrote " << table.rows.size() << " rows to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-to-point sequence generation: datasets, training, evaluation and generation"};
  app.require_subcommand(1);

  DatasetArgs dataset_args;
  auto* dataset = app.add_subcommand("dataset", "synthetic dataset tools");
  dataset->require_subcommand(1);
  auto* gen = dataset->add_subcommand("gen", "write a split of a synthetic dataset as a sequence file");
  gen->add_option("--split", dataset_args.split, "train or test");
  gen->add_option("--first", dataset_args.first, "index of the first sequence");
  gen->add_option("--count", dataset_args.count, "number of sequences");
  gen->add_option("--length", dataset_args.length, "frames per sequence");
  gen->add_option("--out", dataset_args.out, "output sequence file");
  dataset_args.keys.add(gen, kDatasetKeys);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model from a key = value config");
  train_cmd->add_option("--config", train_args.config, "run config file");
  train_cmd->add_option("--out-dir", train_args.out_dir, "directory for model.ckpt, telemetry.csv and run.json");
  train_cmd->add_flag("--quiet", train_args.quiet, "no progress output");
  train_args.keys.add(train_cmd, config_keys());

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score prior samples and reconstructions on a test split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--length", eval_args.length, "evaluation length T");
  eval_cmd->add_flag("--no-recon", eval_args.no_recon, "skip R-Best");
  eval_cmd->add_option("--out", eval_args.out, "output prefix for .json and .csv");
  eval_args.data.add(eval_cmd);
  eval_args.eval.add(eval_cmd);

  GenerateArgs generate_args;
  auto* generate_cmd = app.add_subcommand("generate", "sample sequences between a start and an end frame");
  generate_args.g.add(generate_cmd, "generated.bin");
  generate_cmd->add_option("--start", generate_args.start, "start frame, comma separated");
  generate_cmd->add_option("--end", generate_args.end, "end frame, comma separated");
  generate_cmd->add_option("--length", generate_args.length, "frames per sequence");

  StitchArgs stitch_args;
  auto* stitch_cmd = app.add_subcommand("stitch", "chain clips through several control points");
  stitch_args.g.add(stitch_cmd, "stitched.bin");
  stitch_cmd->add_option("--points", stitch_args.points, "control points: frames separated by ';'");
  stitch_cmd->add_option("--at", stitch_args.at, "frame indices of --data used as control points");
  stitch_cmd->add_option("--lengths", stitch_args.lengths, "clip lengths, comma separated");

  LoopArgs loop_args;
  auto* loop_cmd = app.add_subcommand("loop", "generate a clip that returns to its start frame");
  loop_args.g.add(loop_cmd, "loop.bin");
  loop_cmd->add_option("--frame", loop_args.frame, "start and end frame, comma separated");
  loop_cmd->add_option("--at", loop_args.at, "frame index of --data used as the loop frame");
  loop_cmd->add_option("--length", loop_args.length, "frames per sequence");

  CurvesArgs curves_args;
  auto* curves_cmd = app.add_subcommand("curves", "emit analysis curves as CSV");
  curves_cmd->add_option("--analysis", curves_args.analysis,
                         "cpc_vs_length, div_through_time, quality_through_time or cpc_weight_sweep")
      ->required();
  curves_cmd->add_option("--model", curves_args.models, "label=checkpoint (repeatable)");
  curves_cmd->add_option("--grid", curves_args.grid, "lengths for cpc_vs_length");
  curves_cmd->add_option("--length", curves_args.length, "evaluation length T");
  curves_cmd->add_option("--out", curves_args.out, "output CSV");
  curves_args.data.add(curves_cmd);
  curves_args.eval.add(curves_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_dataset_gen(dataset_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (generate_cmd->parsed()) return cmd_generate(generate_args);
    if (stitch_cmd->parsed()) return cmd_stitch(stitch_args);
    if (loop_cmd->parsed()) return cmd_loop(loop_args);
    if (curves_cmd->parsed()) return cmd_curves(curves_args);
  } catch (const UsageError& e) {
    std::cerr << "p2p: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "p2p: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
