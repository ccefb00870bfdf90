#include "pearnet/model.hpp"

#include <cstring>
#include <fstream>

namespace pearnet {

namespace op = ops;
using nlohmann::json;

void ModelConfig::validate() const {
  if (epoch_len < 2) throw InvalidArgument("model.epoch_len must be >= 2");
  if (segments < 1) throw InvalidArgument("model.segments must be >= 1");
  if (epoch_len % segments != 0) {
    throw InvalidArgument("model.segments (" + std::to_string(segments) +
                          ") must divide epoch_len (" + std::to_string(epoch_len) + ")");
  }
  if (levels < 0) throw InvalidArgument("model.levels must be >= 0");
  if (temporal_kernel < 1) throw InvalidArgument("model.temporal_kernel must be >= 1");
  if (attention.heads < 1) throw InvalidArgument("model.heads must be >= 1");
  if (attention.head_dim < 1) throw InvalidArgument("model.head_dim must be >= 1");
  if (attention.adj_hidden < 1) throw InvalidArgument("model.adj_hidden must be >= 1");
  if (readout != "flatten" && readout != "mean_pool") {
    throw InvalidArgument("model.readout must be flatten or mean_pool");
  }
  if (classifier_hidden < 1) throw InvalidArgument("model.classifier_hidden must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("model.dropout must be in [0,1)");
}

json ModelConfig::to_json() const {
  json j;
  j["epoch_len"] = epoch_len;
  j["segments"] = segments;
  j["levels"] = levels;
  j["spatial"] = {{"channels_a", spatial.channels_a}, {"kernel_a", spatial.kernel_a},
                  {"stride_a", spatial.stride_a},     {"pool_a", spatial.pool_a},
                  {"channels_b", spatial.channels_b}, {"kernel_b", spatial.kernel_b},
                  {"pool_b", spatial.pool_b},         {"se_reduction", spatial.se_reduction}};
  j["temporal_kernel"] = temporal_kernel;
  j["attention"] = {{"mechanism", to_string(attention.mechanism)},
                    {"heads", attention.heads},
                    {"head_dim", attention.head_dim},
                    {"merge", attention.merge == HeadMerge::kConcat ? "concat" : "average"},
                    {"adj_hidden", attention.adj_hidden},
                    {"leaky_slope", attention.leaky_slope}};
  j["readout"] = readout;
  j["classifier_hidden"] = classifier_hidden;
  j["dropout"] = dropout;
  j["vif_loss_enabled"] = vif_loss_enabled;
  return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig cfg;
  cfg.epoch_len = j.at("epoch_len").get<int>();
  cfg.segments = j.at("segments").get<int>();
  cfg.levels = j.at("levels").get<int>();
  const json& sp = j.at("spatial");
  cfg.spatial.channels_a = sp.at("channels_a").get<int>();
  cfg.spatial.kernel_a = sp.at("kernel_a").get<int>();
  cfg.spatial.stride_a = sp.at("stride_a").get<int>();
  cfg.spatial.pool_a = sp.at("pool_a").get<int>();
  cfg.spatial.channels_b = sp.at("channels_b").get<int>();
  cfg.spatial.kernel_b = sp.at("kernel_b").get<int>();
  cfg.spatial.pool_b = sp.at("pool_b").get<int>();
  cfg.spatial.se_reduction = sp.at("se_reduction").get<int>();
  cfg.temporal_kernel = j.at("temporal_kernel").get<int>();
  const json& at = j.at("attention");
  cfg.attention.mechanism = attention_mechanism_from_string(at.at("mechanism").get<std::string>());
  cfg.attention.heads = at.at("heads").get<int>();
  cfg.attention.head_dim = at.at("head_dim").get<int>();
  cfg.attention.merge =
      at.at("merge").get<std::string>() == "average" ? HeadMerge::kAverage : HeadMerge::kConcat;
  cfg.attention.adj_hidden = at.at("adj_hidden").get<int>();
  cfg.attention.leaky_slope = at.at("leaky_slope").get<double>();
  cfg.readout = j.at("readout").get<std::string>();
  cfg.classifier_hidden = j.at("classifier_hidden").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.vif_loss_enabled = j.at("vif_loss_enabled").get<bool>();
  return cfg;
}

TensorPtr weighted_cross_entropy(const TensorPtr& pred, const std::vector<int>& labels,
                                 const ClassWeights& weights) {
  if (pred->rank() != 2 || pred->dim(1) != kNumClasses) {
    throw InvalidArgument("weighted_cross_entropy: pred must be [batch, 5]");
  }
  const int batch = pred->dim(0);
  if (static_cast<int>(labels.size()) != batch) {
    throw InvalidArgument("weighted_cross_entropy: label count mismatch");
  }
  auto onehot_w = zeros({batch, kNumClasses});
  for (int i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= kNumClasses) {
      throw InvalidArgument("weighted_cross_entropy: label outside [0,4]: " + std::to_string(y));
    }
    onehot_w->at(i, y) = weights[static_cast<std::size_t>(y)];
  }
  auto weighted = op::mul(onehot_w, op::log_clamped(pred, 1e-12));
  return op::mul_scalar(op::sum_all(weighted), -1.0 / static_cast<double>(batch));
}

namespace {

constexpr int kModelSeedMix = 0x5eed;

std::uint64_t mix_seed(std::uint64_t seed) { return seed * 0x9e3779b97f4a7c15ull + kModelSeedMix; }

}  // namespace

PearNetModel::PearNetModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_([&] {
        cfg.validate();
        return cfg;
      }()),
      init_rng_(mix_seed(seed)),
      spatial_(cfg_.spatial, cfg_.segment_len(), init_rng_),
      temporal_(spatial_.feature_dim(), cfg_.temporal_kernel, cfg_.levels, cfg_.dropout, init_rng_),
      attention_(spatial_.feature_dim(), cfg_.attention, init_rng_) {
  const int readout_dim =
      cfg_.readout == "flatten" ? node_count() * attention_.out_dim() : attention_.out_dim();
  fc1_w_ = uniform_param({cfg_.classifier_hidden, readout_dim}, readout_dim, init_rng_);
  fc1_b_ = uniform_param({cfg_.classifier_hidden}, readout_dim, init_rng_);
  fc2_w_ = uniform_param({kNumClasses, cfg_.classifier_hidden}, cfg_.classifier_hidden, init_rng_);
  fc2_b_ = uniform_param({kNumClasses}, cfg_.classifier_hidden, init_rng_);

  spatial_.collect_params(&params_);
  temporal_.collect_params(&params_);
  attention_.collect_params(&params_);
  params_.push_back({"classifier.fc1.w", fc1_w_});
  params_.push_back({"classifier.fc1.b", fc1_b_});
  params_.push_back({"classifier.fc2.w", fc2_w_});
  params_.push_back({"classifier.fc2.b", fc2_b_});
}

TensorPtr PearNetModel::forward_one(const Epoch& epoch, bool train, Rng& dropout_rng,
                                    NodeSet* nodes_out, MultiHeadAttention::Output* graph_out) const {
  if (static_cast<int>(epoch.samples.size()) != cfg_.epoch_len) {
    throw InvalidArgument("forward: epoch length " + std::to_string(epoch.samples.size()) +
                          " does not match configured epoch_len " + std::to_string(cfg_.epoch_len));
  }
  NodeSet nodes =
      generate_nodes(epoch, cfg_.segments, cfg_.levels, spatial_, temporal_, train, dropout_rng);
  auto graph = attention_.forward(nodes.features);
  auto emb = op::dropout(graph.merged, cfg_.dropout, train, dropout_rng);

  TensorPtr readout;
  if (cfg_.readout == "flatten") {
    // Provenance order is fixed (level-major rows), so flattening preserves
    // node identity.
    readout = op::reshape(emb, {node_count() * attention_.out_dim()});
  } else {
    readout = op::row_mean(op::transpose(emb));
  }
  auto hidden = op::relu(linear_vec(fc1_w_, fc1_b_, readout));
  hidden = op::dropout(hidden, cfg_.dropout, train, dropout_rng);
  auto logits = linear_vec(fc2_w_, fc2_b_, hidden);
  auto probs = op::softmax(logits, 0);

  if (nodes_out) *nodes_out = std::move(nodes);
  if (graph_out) *graph_out = std::move(graph);
  return probs;
}

TensorPtr PearNetModel::forward(const std::vector<Epoch>& batch, bool train,
                                Rng& dropout_rng) const {
  if (batch.empty()) throw InvalidArgument("forward: empty batch");
  std::vector<TensorPtr> rows;
  rows.reserve(batch.size());
  for (const Epoch& ep : batch) {
    rows.push_back(forward_one(ep, train, dropout_rng, nullptr, nullptr));
  }
  return op::vstack(rows);
}

TensorPtr PearNetModel::forward(const std::vector<Epoch>& batch) const {
  Rng unused(0);
  return forward(batch, false, unused);
}

LossBreakdown PearNetModel::total_loss(const std::vector<Epoch>& batch, const ClassWeights& weights,
                                       bool train, Rng& dropout_rng) const {
  if (batch.empty()) throw InvalidArgument("total_loss: empty batch");
  std::vector<TensorPtr> rows;
  std::vector<int> labels;
  TensorPtr vif_sum;
  for (const Epoch& ep : batch) {
    NodeSet nodes;
    rows.push_back(forward_one(ep, train, dropout_rng, &nodes, nullptr));
    labels.push_back(ep.label);
    if (cfg_.vif_loss_enabled) {
      auto term = vif_loss(nodes.features, CorrMode::kTraining);
      vif_sum = vif_sum ? op::add(vif_sum, term) : term;
    }
  }
  LossBreakdown lb;
  lb.vif = cfg_.vif_loss_enabled
               ? op::mul_scalar(vif_sum, 1.0 / static_cast<double>(batch.size()))
               : scalar(0.0);
  lb.ce = weighted_cross_entropy(op::vstack(rows), labels, weights);
  lb.total = op::add(lb.vif, lb.ce);
  return lb;
}

PearNetModel::Inspection PearNetModel::inspect(const Epoch& epoch) const {
  Inspection ins;
  Rng unused(0);
  ins.probs = forward_one(epoch, false, unused, &ins.nodes, &ins.graph);
  return ins;
}

void PearNetModel::zero_grad() {
  for (auto& p : params_) p.value->zero_grad();
}

namespace {

constexpr char kCkptMagic[4] = {'P', 'N', 'C', 'K'};
constexpr std::uint16_t kCkptVersion = 1;

template <class T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_raw_or_throw(std::istream& in, T* v, const char* what) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
  if (!in) throw InvalidArgument(std::string("checkpoint: truncated ") + what);
}

json read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw InvalidArgument("not a PNCK checkpoint: " + path);
  }
  std::uint16_t version = 0;
  read_raw_or_throw(in, &version, "version");
  if (version != kCkptVersion) {
    throw InvalidArgument("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint32_t json_len = 0;
  read_raw_or_throw(in, &json_len, "config length");
  std::string text(json_len, '\0');
  in.read(text.data(), json_len);
  if (!in) throw InvalidArgument("checkpoint: truncated config");
  return json::parse(text);
}

}  // namespace

void save_checkpoint(const PearNetModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 4);
  write_raw(out, kCkptVersion);
  const std::string cfg = model.config().to_json().dump();
  write_raw(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  write_raw(out, static_cast<std::uint32_t>(model.params().size()));
  for (const NamedParam& p : model.params()) {
    write_raw(out, static_cast<std::uint16_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_raw(out, static_cast<std::uint8_t>(p.value->rank()));
    for (int d : p.value->shape) write_raw(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(p.value->data.data()),
              static_cast<std::streamsize>(sizeof(double) * p.value->numel()));
  }
}

ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint: " + path);
  return ModelConfig::from_json(read_header(in, path));
}

void load_checkpoint_into(PearNetModel& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open checkpoint: " + path);
  const json stored = read_header(in, path);
  if (stored != model.config().to_json()) {
    throw InvalidArgument("checkpoint config does not match the receiving model");
  }
  std::uint32_t n_params = 0;
  read_raw_or_throw(in, &n_params, "parameter count");
  if (n_params != model.params().size()) {
    throw InvalidArgument("checkpoint parameter count mismatch");
  }
  for (NamedParam& p : model.params()) {
    std::uint16_t name_len = 0;
    read_raw_or_throw(in, &name_len, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in || name != p.name) {
      throw InvalidArgument("checkpoint parameter order mismatch at '" + p.name + "'");
    }
    std::uint8_t rank = 0;
    read_raw_or_throw(in, &rank, "rank");
    std::vector<int> shape;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t e = 0;
      read_raw_or_throw(in, &e, "extent");
      shape.push_back(static_cast<int>(e));
    }
    if (shape != p.value->shape) {
      throw InvalidArgument("checkpoint shape mismatch for '" + p.name + "'");
    }
    in.read(reinterpret_cast<char*>(p.value->data.data()),
            static_cast<std::streamsize>(sizeof(double) * p.value->numel()));
    if (!in) throw InvalidArgument("checkpoint: truncated tensor data for '" + p.name + "'");
  }
}

PearNetModel load_checkpoint(const std::string& path, std::uint64_t seed) {
  PearNetModel model(read_checkpoint_config(path), seed);
  load_checkpoint_into(model, path);
  return model;
}

}  // namespace pearnet
