#include "pearnet/cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "CLI11.hpp"
#include "pearnet/runconfig.hpp"

namespace pearnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

std::string timestamp_tag() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm);
  return buf;
}

fs::path resolve_out_dir(const RunConfig& cfg, const CommonFlags& flags) {
  if (!flags.out.empty()) return fs::path(flags.out);
  return fs::path(cfg.out_parent) / (timestamp_tag() + "-" + cfg.tag);
}

void refuse_overwrite(const fs::path& file, bool force) {
  if (!force && fs::exists(file)) {
    throw ConfigError(file.string(), "exists; pass --force to overwrite");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

Dataset load_configured_dataset(const RunConfig& cfg) {
  if (cfg.dataset.path.empty()) {
    throw InvalidArgument("dataset.path is empty; run `pearnet synth` first or point it at a file");
  }
  return load_dataset(cfg.dataset.path, cfg.dataset.format, {cfg.dataset.normalize});
}

void check_epoch_len(const Dataset& ds, int expected) {
  if (ds.epoch_len != expected) {
    throw InvalidArgument("dataset epoch_len " + std::to_string(ds.epoch_len) +
                          " does not match model.epoch_len " + std::to_string(expected));
  }
}

std::string loss_trace_csv(const RunConfig& cfg, const std::vector<StepLoss>& trace) {
  std::string out = "# seed=" + std::to_string(cfg.seed) + "\n";
  out += "# config=" + cfg.to_json().dump() + "\n";
  out += "fold,epoch,step,vif_loss,cross_entropy_loss,total\n";
  char buf[160];
  for (const StepLoss& s : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%ld,%.17g,%.17g,%.17g\n", s.fold, s.epoch, s.step, s.vif,
                  s.ce, s.total);
    out += buf;
  }
  return out;
}

json metrics_json(const RunConfig& cfg, const CvResult& cv) {
  json j;
  j["seed"] = cfg.seed;
  j["config"] = cfg.to_json();
  j["pooled"] = cv.pooled.to_json();
  json folds = json::array();
  for (const auto& rep : cv.fold_reports) folds.push_back(rep.to_json());
  j["folds"] = folds;
  j["class_weights"] =
      std::vector<double>(cv.fold0_weights.begin(), cv.fold0_weights.end());
  return j;
}

std::string metrics_table(const CvResult& cv) {
  std::string text = MetricsReport::table_header();
  text += cv.pooled.table_row("pooled");
  for (std::size_t f = 0; f < cv.fold_reports.size(); ++f) {
    text += cv.fold_reports[f].table_row("fold " + std::to_string(f));
  }
  return text;
}

// ---------------------------------------------------------------- synth ----

void validate_synth(const RunConfig& cfg, const CommonFlags& flags) {
  if (cfg.synth.out_path.empty()) throw ConfigError("synth.out_path", "must not be empty");
  refuse_overwrite(cfg.synth.out_path, flags.force);
}

int exec_synth(const RunConfig& cfg, const CommonFlags&) {
  Dataset ds = synthesize(cfg.synth.spec, cfg.seed);
  save_dataset(ds, cfg.synth.out_path, cfg.synth.format);
  std::cout << "wrote " << ds.size() << " epochs (" << cfg.synth.spec.n_per_class
            << " per class, epoch_len " << cfg.synth.spec.epoch_len << ") to "
            << cfg.synth.out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

void validate_train(const RunConfig& cfg, const CommonFlags& flags) {
  if (cfg.dataset.path.empty()) throw ConfigError("dataset.path", "must not be empty");
  if (!flags.out.empty()) {
    for (const char* name :
         {"config.json", "checkpoint.pnck", "metrics.json", "metrics.txt", "loss_trace.csv"}) {
      refuse_overwrite(fs::path(flags.out) / name, flags.force);
    }
  }
}

int exec_train(const RunConfig& cfg, const CommonFlags& flags) {
  Dataset ds = load_configured_dataset(cfg);
  check_epoch_len(ds, cfg.model.epoch_len);

  const ModelConfig arch = apply_train_overrides(cfg.model, cfg.train);
  PearNetModel checkpoint_model(arch, cfg.seed);
  CvResult cv = run_cross_validation(cfg.model, cfg.train, ds, &checkpoint_model);

  const fs::path out_dir = resolve_out_dir(cfg, flags);
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", dump_json(cfg.to_json()));
  save_checkpoint(checkpoint_model, (out_dir / "checkpoint.pnck").string());
  write_text(out_dir / "metrics.json", dump_json(metrics_json(cfg, cv)));
  write_text(out_dir / "metrics.txt",
             "# seed=" + std::to_string(cfg.seed) + "\n" + metrics_table(cv));
  write_text(out_dir / "loss_trace.csv", loss_trace_csv(cfg, cv.trace));

  std::cout << metrics_table(cv);
  std::cout << "artifacts in " << out_dir.string() << "\n";
  return 0;
}

// --------------------------------------------------------------- ablate ----

struct AblationRow {
  std::string label;
  TrainConfig tc;
};

std::vector<AblationRow> build_rows(const RunConfig& cfg) {
  const int s0 = cfg.train.segments;
  const int l0 = cfg.train.levels;
  std::vector<AblationRow> rows;
  auto base_tc = cfg.train;
  for (int s : cfg.ablation.segments) {
    AblationRow row{"PearNet-Base(" + std::to_string(s) + ", " + std::to_string(l0) + ")", base_tc};
    row.tc.segments = s;
    rows.push_back(std::move(row));
  }
  for (int l : cfg.ablation.levels) {
    if (l == l0) continue;  // identical to the Base(s0, l0) row
    AblationRow row{"PearNet-Level(" + std::to_string(s0) + ", " + std::to_string(l) + ")", base_tc};
    row.tc.levels = l;
    rows.push_back(std::move(row));
  }
  for (const std::string& mech : cfg.ablation.attention) {
    std::string pretty = mech == "pearson" ? "Pearson" : (mech == "cosine" ? "AGNN" : "GAT");
    AblationRow row{"PearNet-Atten(" + std::to_string(s0) + ", " + std::to_string(l0) + ") with " +
                        pretty + " attention",
                    base_tc};
    row.tc.attention = attention_mechanism_from_string(mech);
    rows.push_back(std::move(row));
  }
  for (bool v : cfg.ablation.vif) {
    AblationRow row{"PearNet-VIF(" + std::to_string(s0) + ", " + std::to_string(l0) + ") " +
                        (v ? "with" : "without") + " VIF Loss",
                    base_tc};
    row.tc.vif_loss_enabled = v;
    rows.push_back(std::move(row));
  }
  return rows;
}

void validate_ablate(const RunConfig& cfg, const CommonFlags& flags) {
  if (cfg.dataset.path.empty()) throw ConfigError("dataset.path", "must not be empty");
  if (cfg.ablation.empty() || build_rows(cfg).empty()) {
    throw ConfigError("ablation", "no configurations");
  }
  for (const AblationRow& row : build_rows(cfg)) {
    try {
      row.tc.validate();
      ModelConfig arch = apply_train_overrides(cfg.model, row.tc);
      arch.validate();
      Rng probe(0);
      SpatialConvStack stack(arch.spatial, arch.segment_len(), probe);
      (void)stack;
    } catch (const InvalidArgument& e) {
      throw ConfigError("ablation (" + row.label + ")", e.what());
    }
  }
  if (!flags.out.empty()) {
    for (const char* name : {"ablation.json", "ablation.txt"}) {
      refuse_overwrite(fs::path(flags.out) / name, flags.force);
    }
  }
}

int exec_ablate(const RunConfig& cfg, const CommonFlags& flags) {
  Dataset ds = load_configured_dataset(cfg);
  check_epoch_len(ds, cfg.model.epoch_len);

  const std::vector<AblationRow> rows = build_rows(cfg);
  // Rows whose effective configuration coincides (e.g. the full model appears
  // under Base, Atten and VIF labels) are trained once and reused.
  std::map<std::string, CvResult> cache;
  json out_rows = json::array();
  std::string table = MetricsReport::table_header();
  for (const AblationRow& row : rows) {
    const ModelConfig arch = apply_train_overrides(cfg.model, row.tc);
    const std::string key = arch.to_json().dump();
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, run_cross_validation(cfg.model, row.tc, ds)).first;
    }
    const CvResult& cv = it->second;
    json r;
    r["label"] = row.label;
    r["segments"] = row.tc.segments;
    r["levels"] = row.tc.levels;
    r["attention"] = to_string(row.tc.attention);
    r["vif_loss"] = row.tc.vif_loss_enabled;
    r["accuracy"] = cv.pooled.accuracy;
    r["macro_f1"] = cv.pooled.macro_f1;
    json f1;
    for (int k = 0; k < kNumClasses; ++k) {
      f1[kStageNames[static_cast<std::size_t>(k)]] = cv.pooled.per_class_f1[static_cast<std::size_t>(k)];
    }
    r["per_class_f1"] = f1;
    out_rows.push_back(std::move(r));
    table += cv.pooled.table_row(row.label);
    std::cout << cv.pooled.table_row(row.label);
  }

  const fs::path out_dir = resolve_out_dir(cfg, flags);
  fs::create_directories(out_dir);
  json doc;
  doc["seed"] = cfg.seed;
  doc["config"] = cfg.to_json();
  doc["rows"] = out_rows;
  write_text(out_dir / "ablation.json", dump_json(doc));
  write_text(out_dir / "ablation.txt", "# seed=" + std::to_string(cfg.seed) + "\n" + table);
  std::cout << "artifacts in " << out_dir.string() << "\n";
  return 0;
}

// -------------------------------------------------------------- inspect ----

void validate_inspect(const RunConfig& cfg, const CommonFlags& flags) {
  if (cfg.inspect.checkpoint.empty()) throw ConfigError("inspect.checkpoint", "must not be empty");
  if (cfg.dataset.path.empty()) throw ConfigError("dataset.path", "must not be empty");
  if (!flags.out.empty()) {
    refuse_overwrite(fs::path(flags.out) / "graph_dump.json", flags.force);
  }
}

json matrix_to_json(const TensorPtr& m) {
  json rows = json::array();
  for (int i = 0; i < m->dim(0); ++i) {
    json row = json::array();
    for (int j = 0; j < m->dim(1); ++j) row.push_back(m->at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

int exec_inspect(const RunConfig& cfg, const CommonFlags& flags) {
  PearNetModel model = load_checkpoint(cfg.inspect.checkpoint);
  Dataset ds = load_configured_dataset(cfg);
  check_epoch_len(ds, model.config().epoch_len);
  if (cfg.inspect.epoch_index >= static_cast<int>(ds.size())) {
    throw InvalidArgument("inspect.epoch_index " + std::to_string(cfg.inspect.epoch_index) +
                          " out of range for dataset of " + std::to_string(ds.size()));
  }
  const Epoch& epoch = ds.epochs[static_cast<std::size_t>(cfg.inspect.epoch_index)];
  auto ins = model.inspect(epoch);

  json dump;
  dump["seed"] = cfg.seed;
  dump["config"] = cfg.to_json();
  dump["model_config"] = model.config().to_json();
  dump["epoch_index"] = cfg.inspect.epoch_index;
  dump["label"] = epoch.label;
  json nodes = json::array();
  for (std::size_t i = 0; i < ins.nodes.provenance.size(); ++i) {
    nodes.push_back({{"id", i},
                     {"level", ins.nodes.provenance[i].level},
                     {"segment", ins.nodes.provenance[i].segment}});
  }
  dump["nodes"] = nodes;
  dump["adjacency"] = matrix_to_json(ins.graph.heads[0].adj.a);
  json adj_heads = json::array(), alpha_heads = json::array();
  for (const auto& head : ins.graph.heads) {
    adj_heads.push_back(matrix_to_json(head.adj.a));
    alpha_heads.push_back(matrix_to_json(head.alpha));
  }
  dump["adjacency_per_head"] = adj_heads;
  dump["alpha_per_head"] = alpha_heads;
  dump["probs"] = ins.probs->data;

  const fs::path out_dir = resolve_out_dir(cfg, flags);
  fs::create_directories(out_dir);
  write_text(out_dir / "graph_dump.json", dump_json(dump));
  std::cout << "graph dump for epoch " << cfg.inspect.epoch_index << " (label " << epoch.label
            << ") in " << (out_dir / "graph_dump.json").string() << "\n";
  return 0;
}

// ------------------------------------------------------------- dispatch ----

using Validator = void (*)(const RunConfig&, const CommonFlags&);
using Executor = int (*)(const RunConfig&, const CommonFlags&);

int dispatch(const CommonFlags& flags, Validator validate, Executor execute) {
  RunConfig cfg;
  try {
    cfg = RunConfig::from_file(flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate_common();
    validate(cfg, flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  try {
    return execute(cfg, flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"PearNet: Pearson correlation graph attention for sleep staging"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::uint64_t seed_value = 0;
  struct Sub {
    const char* name;
    const char* desc;
    Validator validate;
    Executor execute;
    CLI::App* app = nullptr;
  };
  Sub subs[] = {
      {"synth", "generate a synthetic dataset file", validate_synth, exec_synth},
      {"train", "k-fold train/evaluate; writes checkpoint, metrics and loss trace", validate_train,
       exec_train},
      {"ablate", "run the ablation grid and tabulate accuracy/MF1", validate_ablate, exec_ablate},
      {"inspect", "dump the learned graph for one epoch as JSON", validate_inspect, exec_inspect},
  };
  for (Sub& sub : subs) {
    CLI::App* s = app.add_subcommand(sub.name, sub.desc);
    s->add_option("--config", flags.config_path, "run configuration JSON")->required();
    s->add_option("--seed", seed_value, "override the config seed");
    s->add_option("--out", flags.out, "output directory (default runs/<timestamp>-<tag>)");
    s->add_flag("--force", flags.force, "allow overwriting existing outputs");
    sub.app = s;
  }

  std::vector<const char*> argv;
  argv.push_back("pearnet");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const Sub& sub : subs) {
    if (sub.app->parsed()) {
      if (sub.app->count("--seed") > 0) flags.seed = seed_value;
      return dispatch(flags, sub.validate, sub.execute);
    }
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace pearnet::cli
