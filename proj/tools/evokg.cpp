// Command-line front end: inspect, train, eval, report, synth.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric failure.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evokg/checkpoint.hpp"
#include "evokg/data.hpp"
#include "evokg/errors.hpp"
#include "evokg/evaluation.hpp"
#include "evokg/report.hpp"
#include "evokg/synthetic.hpp"
#include "evokg/training.hpp"

namespace fs = std::filesystem;
using namespace evokg;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// History lengths chosen by grid search for the public benchmarks.
std::optional<std::size_t> default_history(const std::string& dataset) {
  static const std::map<std::string, std::size_t> table = {{"icews18", 6}, {"icews14", 3}, {"icews05-15", 10},
                                                           {"wiki", 2},    {"yago", 1},    {"gdelt", 1}};
  const auto it = table.find(lower(fs::path(dataset).filename().string()));
  if (it == table.end()) return std::nullopt;
  return it->second;
}

// A literal directory wins; otherwise look the name up under $EVOKG_DATA_ROOT, ignoring case.
fs::path resolve_dataset(const std::string& data) {
  if (fs::is_directory(data)) return data;
  if (const char* root = std::getenv("EVOKG_DATA_ROOT"); root != nullptr && fs::is_directory(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory() && lower(entry.path().filename().string()) == lower(data)) return entry.path();
    }
  }
  throw DataError("dataset '" + data + "' not found (not a directory, and not under $EVOKG_DATA_ROOT)");
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct TrainArgs {
  std::string data;
  std::string names;
  std::string out;
  std::string from_manifest;
  std::optional<std::size_t> history;
  std::string task = "both";
  bool no_static = false;
  bool no_time_gate = false;
  bool no_early_stopping = false;
  TrainConfig config;
};

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  std::string mode = "gt";
  std::string task = "entity";
  std::string split = "test";
  bool filtered = false;
  std::size_t batch = 1024;
};

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out = "report";
};

struct SynthArgs {
  std::string kind = "planted";
  std::string out;
  std::uint64_t seed = 7;
  std::size_t entities = 50;
  std::size_t relations = 4;
  std::size_t timestamps = 60;
};

void write_curve(const std::vector<EpochStats>& curve, bool with_static, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  out << "epoch,steps,entity_loss,relation_loss," << (with_static ? "static_loss," : "")
      << "total_loss,grad_norm,valid_mrr,seconds\n";
  for (const auto& s : curve) {
    out << s.epoch << ',' << s.steps << ',' << s.entity_loss << ',' << s.relation_loss << ',';
    if (with_static) out << s.static_loss << ',';
    out << s.total_loss << ',' << s.grad_norm << ',';
    if (s.valid_mrr) out << *s.valid_mrr;
    out << ',' << s.seconds << '\n';
  }
}

int cmd_inspect(const std::string& data, const std::string& names_arg) {
  const fs::path dir = resolve_dataset(data);
  const FactStore store = load_dataset_dir(dir);
  nlohmann::json j = {{"dataset", dir.string()},
                      {"entities", store.num_entities},
                      {"relations", store.num_relations},
                      {"time_interval", store.time_interval},
                      {"snapshots", store.timeline.size()},
                      {"train", {{"facts", store.num_base_facts(Split::kTrain)}, {"timestamps", store.train.size()}}},
                      {"valid", {{"facts", store.num_base_facts(Split::kValid)}, {"timestamps", store.valid.size()}}},
                      {"test", {{"facts", store.num_base_facts(Split::kTest)}, {"timestamps", store.test.size()}}},
                      {"fingerprint", dataset_fingerprint(store)}};
  const fs::path names = names_arg.empty() ? dir / "entity2id.txt" : fs::path(names_arg);
  if (fs::exists(names)) {
    const StaticGraph g = build_static_graph(load_entity_names(names, store.num_entities));
    j["static"] = {{"properties", g.num_properties()}, {"edges", g.edges.size()}};
  }
  std::cout << j.dump(2) << '\n';
  return kExitOk;
}

int cmd_train(TrainArgs a) {
  Stopwatch clock;
  RunManifest manifest;
  manifest.command = "train";
  TrainConfig config = a.config;
  if (!a.from_manifest.empty()) {
    config = RunManifest::read(a.from_manifest).config;
  } else {
    config.task = parse_task(a.task);
    config.static_constraint = !a.no_static;
    config.time_gate = !a.no_time_gate;
    config.early_stopping = !a.no_early_stopping;
    config.history = a.history ? *a.history : default_history(a.data).value_or(config.history);
  }
  config.validate();

  const fs::path dir = resolve_dataset(a.data);
  const fs::path names = a.names.empty() ? dir / "entity2id.txt" : fs::path(a.names);
  if (config.static_constraint && !fs::exists(names)) {
    throw ConfigError("static constraint is on but no entity names file was found at " + names.string() +
                      " (pass --names or --no-static)");
  }
  const fs::path out = a.out.empty() ? fs::path("runs") / dir.filename() : fs::path(a.out);
  fs::create_directories(out);

  const FactStore store = add_inverse_quadruples(load_dataset_dir(dir));
  std::optional<StaticGraph> graph;
  if (config.static_constraint) graph = build_static_graph(load_entity_names(names, store.num_entities));
  manifest.timings.emplace_back("load", clock.lap());

  Model model = init_model(config, store.num_entities, store.num_relation_ids(), graph ? &*graph : nullptr);
  const Task select = config.task == Task::kRelation ? Task::kRelation : Task::kEntity;
  Validator validator;
  if (store.valid.size() > 0 && store.num_base_facts(Split::kValid) > 0) {
    validator = [&store, select](const Model& m, const EvolutionState& frozen) {
      EvalOptions o;
      o.split = Split::kValid;
      o.mode = InferenceMode::kFrozen;
      o.task = select;
      return evaluate(m, store, &frozen, o).overall.mrr;
    };
  }
  const TrainResult result = fit(model, store, graph ? &*graph : nullptr, validator, [](const EpochStats& s) {
    std::cerr << "epoch " << s.epoch << ": steps=" << s.steps << " loss=" << s.total_loss;
    if (s.valid_mrr) std::cerr << " valid_mrr=" << *s.valid_mrr;
    std::cerr << " (" << s.seconds << " s)\n";
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
  });
  if (config.epochs == 0) std::cerr << "warning: zero epochs requested, saving the initialised model\n";
  manifest.timings.emplace_back("train", clock.lap());

  const std::string fingerprint = dataset_fingerprint(store);
  save_checkpoint(out / "checkpoint.bin", model, result.optimizer, &result.final_state, fingerprint);
  write_curve(result.curve, model.has_static, out / "curve.csv");
  manifest.timings.emplace_back("save", clock.lap());

  manifest.config = config;
  manifest.dataset = dir.string();
  manifest.dataset_fingerprint = fingerprint;
  manifest.version = version_string();
  manifest.artifacts = {(out / "checkpoint.bin").string(), (out / "curve.csv").string()};
  manifest.extra["best_epoch"] = result.best_epoch;
  manifest.extra["epochs_run"] = result.curve.size();
  manifest.write(out / "manifest.json");
  std::cerr << "wrote " << out.string() << " (best epoch " << result.best_epoch << ")\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
  Stopwatch clock;
  const fs::path dir = resolve_dataset(a.data);
  const FactStore store = add_inverse_quadruples(load_dataset_dir(dir));
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  if (ck.num_entities != store.num_entities || ck.num_relation_ids != store.num_relation_ids()) {
    throw ConfigError("checkpoint was trained on " + std::to_string(ck.num_entities) + " entities / " +
                      std::to_string(ck.num_relation_ids) + " relation ids, dataset has " +
                      std::to_string(store.num_entities) + " / " + std::to_string(store.num_relation_ids()));
  }
  const std::string fingerprint = dataset_fingerprint(store);
  if (fingerprint != ck.dataset_fingerprint) {
    std::cerr << "warning: dataset fingerprint differs from the one recorded in the checkpoint\n";
  }
  RunManifest manifest;
  manifest.command = "eval";
  manifest.config = ck.model.config;
  manifest.dataset = dir.string();
  manifest.dataset_fingerprint = fingerprint;
  manifest.version = version_string();
  manifest.timings.emplace_back("load", clock.lap());

  const Task task = parse_task(a.task);
  EvalOptions o;
  o.split = parse_split(a.split);
  if (o.split == Split::kTrain) throw ConfigError("eval: split must be valid or test");
  o.mode = parse_mode(a.mode);
  o.filtered = a.filtered;
  o.batch_size = a.batch;
  std::vector<MetricReport> reports;
  for (Task t : {Task::kEntity, Task::kRelation}) {
    if (task != Task::kBoth && task != t) continue;
    o.task = t;
    reports.push_back(evaluate(ck.model, store, ck.final_state ? &*ck.final_state : nullptr, o));
    const auto& m = reports.back().overall;
    std::cout << task_name(t) << ' ' << split_name(o.split) << ' ' << mode_name(o.mode) << ": MRR=" << m.mrr
              << " H@1=" << m.hits1 << " H@3=" << m.hits3 << " H@10=" << m.hits10 << " (" << m.count
              << " queries)\n";
  }
  manifest.timings.emplace_back("evaluate", clock.lap());

  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  fs::create_directories(out);
  const std::string stem = "metrics_" + split_name(o.split) + "_" + mode_name(o.mode) + (a.filtered ? "_filtered" : "");
  write_metrics_csv(reports, out / (stem + ".csv"));
  write_metrics_json(reports, out / (stem + ".json"));
  manifest.artifacts = {(out / (stem + ".csv")).string(), (out / (stem + ".json")).string()};
  manifest.extra["checkpoint"] = a.checkpoint;
  manifest.write(out / (stem + ".manifest.json"));
  return kExitOk;
}

int cmd_report(const ReportArgs& a) {
  std::vector<fs::path> inputs(a.inputs.begin(), a.inputs.end());
  for (const auto& p : generate_report(inputs, a.out)) std::cout << p.string() << '\n';
  return kExitOk;
}

int cmd_synth(const SynthArgs& a) {
  FactStore store;
  if (a.kind == "planted") {
    PlantedConfig c;
    c.num_entities = a.entities;
    c.num_relations = a.relations;
    c.num_timestamps = a.timestamps;
    c.seed = a.seed;
    c.valid_begin = a.timestamps * 4 / 5;
    c.test_begin = a.timestamps * 9 / 10;
    store = planted_store(c);
  } else if (a.kind == "repeating") {
    RepeatingConfig c;
    c.num_entities = a.entities;
    c.num_relations = a.relations;
    c.num_timestamps = a.timestamps;
    c.valid_begin = a.timestamps * 4 / 5;
    c.test_begin = a.timestamps * 9 / 10;
    store = repeating_store(c);
  } else {
    throw ConfigError("unknown synthetic kind '" + a.kind + "' (expected planted or repeating)");
  }
  write_dataset_dir(store, a.out, synthetic_entity_names(store.num_entities, 4, 3));
  std::cout << "wrote " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal knowledge graph reasoning: evolutional embeddings with ConvTransE decoders"};
  app.require_subcommand(1);

  std::string inspect_data, inspect_names;
  auto* inspect = app.add_subcommand("inspect", "Parse a dataset and print its statistics");
  inspect->add_option("--data", inspect_data, "Dataset directory or name under $EVOKG_DATA_ROOT")->required();
  inspect->add_option("--names", inspect_names, "Entity names file (default: <data>/entity2id.txt)");

  TrainArgs ta;
  auto& c = ta.config;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, manifest and curve");
  train->add_option("--data", ta.data, "Dataset directory or name under $EVOKG_DATA_ROOT")->required();
  train->add_option("--names", ta.names, "Entity names file for the static graph");
  train->add_option("--out", ta.out, "Output directory (default: runs/<dataset>)");
  train->add_option("--from-manifest", ta.from_manifest, "Reuse config and seed from a manifest");
  train->add_option("--dim", c.dim, "Embedding dimension")->capture_default_str();
  train->add_option("--layers", c.num_layers, "GCN layers per snapshot")->capture_default_str();
  train->add_option("--history", ta.history, "History length m (default per dataset, else 3)");
  train->add_option("--gamma", c.gamma, "Angle step of the static constraint, degrees")->capture_default_str();
  train->add_option("--lambda1", c.lambda1, "Entity loss weight")->capture_default_str();
  train->add_option("--lambda2", c.lambda2, "Relation loss weight")->capture_default_str();
  train->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--dropout", c.dropout, "Dropout rate")->capture_default_str();
  train->add_option("--grad-clip", c.grad_clip, "Global gradient norm cap (0 disables)")->capture_default_str();
  train->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  train->add_option("--patience", c.patience, "Early stopping patience in epochs")->capture_default_str();
  train->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  train->add_option("--task", ta.task, "entity, relation or both")->capture_default_str();
  train->add_option("--kernels", c.num_kernels, "Decoder convolution kernels")->capture_default_str();
  train->add_option("--kernel-width", c.kernel_width, "Decoder kernel width")->capture_default_str();
  train->add_flag("--no-static", ta.no_static, "Disable the static graph constraint");
  train->add_flag("--no-time-gate", ta.no_time_gate, "Replace the time gate by plain renormalisation");
  train->add_flag("--no-early-stopping", ta.no_early_stopping, "Train all epochs, keep the last parameters");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (raw setting unless --filtered)");
  eval->add_option("--data", ea.data, "Dataset directory or name under $EVOKG_DATA_ROOT")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval->add_option("--out", ea.out, "Output directory (default: next to the checkpoint)");
  eval->add_option("--mode", ea.mode, "gt or frozen")->capture_default_str();
  eval->add_option("--task", ea.task, "entity, relation or both")->capture_default_str();
  eval->add_option("--split", ea.split, "valid or test")->capture_default_str();
  eval->add_option("--batch", ea.batch, "Queries scored per batch")->capture_default_str();
  eval->add_flag("--filtered", ea.filtered, "Remove other known answers (diagnostic only)");

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Render SVG plots and a markdown summary");
  report->add_option("inputs", ra.inputs, "Curve CSVs, metric CSV/JSON files, manifests")->required();
  report->add_option("--out", ra.out, "Output directory")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset directory");
  synth->add_option("--kind", sa.kind, "planted or repeating")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--entities", sa.entities, "Entity count")->capture_default_str();
  synth->add_option("--relations", sa.relations, "Relation count")->capture_default_str();
  synth->add_option("--timestamps", sa.timestamps, "Snapshot count")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*inspect) return cmd_inspect(inspect_data, inspect_names);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*report) return cmd_report(ra);
    if (*synth) return cmd_synth(sa);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitUsage;
}
