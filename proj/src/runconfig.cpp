#include "pearnet/runconfig.hpp"

#include <fstream>
#include <set>

namespace pearnet {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
    }
  }
}

template <class T>
void get_if(const json& j, const std::string& path, const char* key, T* out) {
  if (!j.contains(key)) return;
  try {
    *out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path.empty() ? key : path + "." + std::string(key), "wrong value type");
  }
}

FileFormat format_from_string(const std::string& s, const std::string& path) {
  if (s == "csv") return FileFormat::kCsv;
  if (s == "bin") return FileFormat::kBin;
  throw ConfigError(path, "format must be csv or bin, got '" + s + "'");
}

std::string format_to_string(FileFormat f) { return f == FileFormat::kCsv ? "csv" : "bin"; }

WaveComponent component_from_json(const json& j, const std::string& path) {
  check_keys(j, path, {"freq_lo", "freq_hi", "amplitude", "sawtooth", "burst", "burst_count",
                       "burst_sigma"});
  WaveComponent wc;
  get_if(j, path, "freq_lo", &wc.freq_lo);
  get_if(j, path, "freq_hi", &wc.freq_hi);
  get_if(j, path, "amplitude", &wc.amplitude);
  get_if(j, path, "sawtooth", &wc.sawtooth);
  get_if(j, path, "burst", &wc.burst);
  get_if(j, path, "burst_count", &wc.burst_count);
  get_if(j, path, "burst_sigma", &wc.burst_sigma);
  if (wc.freq_lo < 0 || wc.freq_hi < wc.freq_lo) {
    throw ConfigError(path, "need 0 <= freq_lo <= freq_hi");
  }
  if (wc.burst && (wc.burst_count < 1 || wc.burst_sigma <= 0)) {
    throw ConfigError(path, "burst components need burst_count >= 1 and burst_sigma > 0");
  }
  return wc;
}

json component_to_json(const WaveComponent& wc) {
  return {{"freq_lo", wc.freq_lo},
          {"freq_hi", wc.freq_hi},
          {"amplitude", wc.amplitude},
          {"sawtooth", wc.sawtooth},
          {"burst", wc.burst},
          {"burst_count", wc.burst_count},
          {"burst_sigma", wc.burst_sigma}};
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig cfg;
  check_keys(j, "", {"tag", "out_dir", "seed", "dataset", "synth", "model", "train", "ablation",
                     "inspect"});
  get_if(j, "", "tag", &cfg.tag);
  get_if(j, "", "out_dir", &cfg.out_parent);
  get_if(j, "", "seed", &cfg.seed);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, "dataset", {"path", "format", "normalize"});
    get_if(d, "dataset", "path", &cfg.dataset.path);
    if (d.contains("format")) {
      cfg.dataset.format = format_from_string(d.at("format").get<std::string>(), "dataset.format");
    }
    get_if(d, "dataset", "normalize", &cfg.dataset.normalize);
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    check_keys(s, "synth", {"n_per_class", "noise_sigma", "epoch_len", "out_path", "format",
                            "classes"});
    get_if(s, "synth", "n_per_class", &cfg.synth.spec.n_per_class);
    get_if(s, "synth", "noise_sigma", &cfg.synth.spec.noise_sigma);
    get_if(s, "synth", "epoch_len", &cfg.synth.spec.epoch_len);
    get_if(s, "synth", "out_path", &cfg.synth.out_path);
    if (s.contains("format")) {
      cfg.synth.format = format_from_string(s.at("format").get<std::string>(), "synth.format");
    }
    if (s.contains("classes")) {
      const json& cls = s.at("classes");
      if (!cls.is_array() || cls.size() != kNumClasses) {
        throw ConfigError("synth.classes", "expected an array of 5 class recipes");
      }
      for (int k = 0; k < kNumClasses; ++k) {
        const std::string cpath = "synth.classes[" + std::to_string(k) + "]";
        check_keys(cls.at(static_cast<std::size_t>(k)), cpath, {"components"});
        const json& comps = cls.at(static_cast<std::size_t>(k)).at("components");
        if (!comps.is_array() || comps.empty()) {
          throw ConfigError(cpath + ".components", "expected a non-empty array");
        }
        cfg.synth.spec.recipes[static_cast<std::size_t>(k)].components.clear();
        for (std::size_t c = 0; c < comps.size(); ++c) {
          cfg.synth.spec.recipes[static_cast<std::size_t>(k)].components.push_back(
              component_from_json(comps.at(c), cpath + ".components[" + std::to_string(c) + "]"));
        }
      }
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model", {"epoch_len", "spatial", "temporal_kernel", "head_dim", "head_merge",
                            "adj_hidden", "leaky_slope", "readout", "classifier_hidden"});
    get_if(m, "model", "epoch_len", &cfg.model.epoch_len);
    if (m.contains("spatial")) {
      const json& sp = m.at("spatial");
      check_keys(sp, "model.spatial", {"channels_a", "kernel_a", "stride_a", "pool_a", "channels_b",
                                       "kernel_b", "pool_b", "se_reduction"});
      get_if(sp, "model.spatial", "channels_a", &cfg.model.spatial.channels_a);
      get_if(sp, "model.spatial", "kernel_a", &cfg.model.spatial.kernel_a);
      get_if(sp, "model.spatial", "stride_a", &cfg.model.spatial.stride_a);
      get_if(sp, "model.spatial", "pool_a", &cfg.model.spatial.pool_a);
      get_if(sp, "model.spatial", "channels_b", &cfg.model.spatial.channels_b);
      get_if(sp, "model.spatial", "kernel_b", &cfg.model.spatial.kernel_b);
      get_if(sp, "model.spatial", "pool_b", &cfg.model.spatial.pool_b);
      get_if(sp, "model.spatial", "se_reduction", &cfg.model.spatial.se_reduction);
    }
    get_if(m, "model", "temporal_kernel", &cfg.model.temporal_kernel);
    get_if(m, "model", "head_dim", &cfg.model.attention.head_dim);
    if (m.contains("head_merge")) {
      const std::string merge = m.at("head_merge").get<std::string>();
      if (merge != "concat" && merge != "average") {
        throw ConfigError("model.head_merge", "must be concat or average");
      }
      cfg.model.attention.merge = merge == "concat" ? HeadMerge::kConcat : HeadMerge::kAverage;
    }
    get_if(m, "model", "adj_hidden", &cfg.model.attention.adj_hidden);
    get_if(m, "model", "leaky_slope", &cfg.model.attention.leaky_slope);
    get_if(m, "model", "readout", &cfg.model.readout);
    get_if(m, "model", "classifier_hidden", &cfg.model.classifier_hidden);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"epochs", "batch_size", "lr", "dropout", "k_folds", "weight_decay",
                            "beta1", "beta2", "eps", "amsgrad", "segments", "levels", "heads",
                            "attention", "vif_loss", "class_weights"});
    get_if(t, "train", "epochs", &cfg.train.epochs);
    get_if(t, "train", "batch_size", &cfg.train.batch_size);
    get_if(t, "train", "lr", &cfg.train.lr);
    get_if(t, "train", "dropout", &cfg.train.dropout);
    get_if(t, "train", "k_folds", &cfg.train.k_folds);
    get_if(t, "train", "weight_decay", &cfg.train.optimizer.weight_decay);
    get_if(t, "train", "beta1", &cfg.train.optimizer.beta1);
    get_if(t, "train", "beta2", &cfg.train.optimizer.beta2);
    get_if(t, "train", "eps", &cfg.train.optimizer.eps);
    get_if(t, "train", "amsgrad", &cfg.train.optimizer.amsgrad);
    get_if(t, "train", "segments", &cfg.train.segments);
    get_if(t, "train", "levels", &cfg.train.levels);
    get_if(t, "train", "heads", &cfg.train.heads);
    if (t.contains("attention")) {
      try {
        cfg.train.attention =
            attention_mechanism_from_string(t.at("attention").get<std::string>());
      } catch (const InvalidArgument& e) {
        throw ConfigError("train.attention", e.what());
      }
    }
    get_if(t, "train", "vif_loss", &cfg.train.vif_loss_enabled);
    if (t.contains("class_weights")) {
      const json& w = t.at("class_weights");
      if (!w.is_array() || w.size() != kNumClasses) {
        throw ConfigError("train.class_weights", "expected an array of 5 numbers");
      }
      ClassWeights cw{};
      for (int k = 0; k < kNumClasses; ++k) {
        cw[static_cast<std::size_t>(k)] = w.at(static_cast<std::size_t>(k)).get<double>();
      }
      cfg.train.class_weights = cw;
    }
  }

  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, "ablation", {"segments", "levels", "attention", "vif"});
    get_if(a, "ablation", "segments", &cfg.ablation.segments);
    get_if(a, "ablation", "levels", &cfg.ablation.levels);
    get_if(a, "ablation", "attention", &cfg.ablation.attention);
    if (a.contains("vif")) {
      std::vector<bool> v;
      get_if(a, "ablation", "vif", &v);
      cfg.ablation.vif = v;
    }
    for (const std::string& mech : cfg.ablation.attention) {
      try {
        attention_mechanism_from_string(mech);
      } catch (const InvalidArgument& e) {
        throw ConfigError("ablation.attention", e.what());
      }
    }
  }

  if (j.contains("inspect")) {
    const json& i = j.at("inspect");
    check_keys(i, "inspect", {"checkpoint", "epoch_index"});
    get_if(i, "inspect", "checkpoint", &cfg.inspect.checkpoint);
    get_if(i, "inspect", "epoch_index", &cfg.inspect.epoch_index);
  }

  cfg.model.dropout = cfg.train.dropout;
  return cfg;
}

json RunConfig::to_json() const {
  json j;
  j["tag"] = tag;
  j["out_dir"] = out_parent;
  j["seed"] = seed;
  j["dataset"] = {{"path", dataset.path},
                  {"format", format_to_string(dataset.format)},
                  {"normalize", dataset.normalize}};
  json classes = json::array();
  for (const auto& recipe : synth.spec.recipes) {
    json comps = json::array();
    for (const auto& wc : recipe.components) comps.push_back(component_to_json(wc));
    classes.push_back({{"components", comps}});
  }
  j["synth"] = {{"n_per_class", synth.spec.n_per_class},
                {"noise_sigma", synth.spec.noise_sigma},
                {"epoch_len", synth.spec.epoch_len},
                {"out_path", synth.out_path},
                {"format", format_to_string(synth.format)},
                {"classes", classes}};
  json m = model.to_json();
  // Protocol-owned axes live under the train section in the run config.
  m.erase("segments");
  m.erase("levels");
  m.erase("dropout");
  m.erase("vif_loss_enabled");
  json att = m["attention"];
  att.erase("mechanism");
  att.erase("heads");
  m["attention"] = att;
  j["model"] = m;
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr},
                {"dropout", train.dropout},
                {"k_folds", train.k_folds},
                {"weight_decay", train.optimizer.weight_decay},
                {"beta1", train.optimizer.beta1},
                {"beta2", train.optimizer.beta2},
                {"eps", train.optimizer.eps},
                {"amsgrad", train.optimizer.amsgrad},
                {"segments", train.segments},
                {"levels", train.levels},
                {"heads", train.heads},
                {"attention", to_string(train.attention)},
                {"vif_loss", train.vif_loss_enabled}};
  if (train.class_weights) {
    j["train"]["class_weights"] =
        std::vector<double>(train.class_weights->begin(), train.class_weights->end());
  }
  j["ablation"] = {{"segments", ablation.segments},
                   {"levels", ablation.levels},
                   {"attention", ablation.attention},
                   {"vif", std::vector<bool>(ablation.vif.begin(), ablation.vif.end())}};
  j["inspect"] = {{"checkpoint", inspect.checkpoint}, {"epoch_index", inspect.epoch_index}};
  return j;
}

void RunConfig::validate_common() const {
  try {
    train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("train", e.what());
  }
  try {
    ModelConfig effective = apply_train_overrides(model, train);
    effective.validate();
    // Exercise the stack arithmetic so incompatible geometry fails up front.
    Rng probe(0);
    SpatialConvStack stack(effective.spatial, effective.segment_len(), probe);
    (void)stack;
  } catch (const InvalidArgument& e) {
    throw ConfigError("model", e.what());
  }
  if (synth.spec.n_per_class < 1) throw ConfigError("synth.n_per_class", "must be >= 1");
  if (synth.spec.noise_sigma < 0) throw ConfigError("synth.noise_sigma", "must be >= 0");
  if (synth.spec.epoch_len < 2) throw ConfigError("synth.epoch_len", "must be >= 2");
  if (inspect.epoch_index < 0) throw ConfigError("inspect.epoch_index", "must be >= 0");
}

}  // namespace pearnet
