#include "dcn2/model.hpp"

#include <cmath>
#include <random>

#include "dcn2/errors.hpp"

namespace dcn2 {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kDcn2:
      return "dcn2";
    case Variant::kDcnV2:
      return "dcnv2";
    case Variant::kDcn2Simk:
      break;
  }
  return "dcn2_simk";
}

Variant parse_variant(std::string_view name) {
  if (name == "dcn2") return Variant::kDcn2;
  if (name == "dcnv2") return Variant::kDcnV2;
  if (name == "dcn2_simk" || name == "dcn2-simk") return Variant::kDcn2Simk;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected dcn2, dcnv2 or dcn2_simk)");
}

std::vector<std::string> config_violations(const ModelConfig& c, std::size_t num_fields,
                                           bool sweep_ranges) {
  std::vector<std::string> v;
  if (num_fields == 0) v.push_back("model needs at least one field");
  if (c.hash_bits < kMinHashBits || c.hash_bits > kMaxHashBits)
    v.push_back("hash_bits must be in [1, 30]");
  if (c.embedding_dim < 1) v.push_back("embedding dim must be >= 1");
  if (c.batch_size < 1) v.push_back("batch size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate))
    v.push_back("learning rate must be finite and >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) v.push_back("beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) v.push_back("beta2 must be in [0, 1)");
  if (!(c.epsilon > 0.0)) v.push_back("epsilon must be > 0");
  if (!(c.init_sigma > 0.0)) v.push_back("init sigma must be > 0");
  if (!(c.init_omega > 0.0)) v.push_back("init omega must be > 0");
  if (!std::isfinite(c.phi)) v.push_back("phi must be finite");
  for (auto s : c.deep_layers)
    if (s == 0) v.push_back("deep layer sizes must be >= 1");
  if (c.has_cross() && c.cross_layers < 0) v.push_back("layer count must be >= 0");
  if (c.variant == Variant::kDcnV2 && c.cross_layers > 0) {
    const auto width = num_fields * static_cast<std::size_t>(std::max(c.embedding_dim, 0));
    if (c.projection_dim < 1) v.push_back("projection dim must be >= 1");
    else if (static_cast<std::size_t>(c.projection_dim) > width)
      v.push_back("projection dim must not exceed |F| * d = " + std::to_string(width));
  }
  if (sweep_ranges) {
    if (c.embedding_dim < 8 || c.embedding_dim > 16)
      v.push_back("embedding dim must be in [8, 16]");
    if (c.learning_rate < 1e-4 || c.learning_rate > 1e-2)
      v.push_back("learning rate must be in [1e-4, 1e-2]");
    if (c.beta1 < 0.0 || c.beta1 > 0.9) v.push_back("beta1 must be in [0, 0.9]");
    if (c.variant == Variant::kDcn2 && (c.phi < 1.0 || c.phi > 3.0))
      v.push_back("phi must be in [1, 3] for onlydense layers");
  }
  return v;
}

void validate_config(const ModelConfig& config, std::size_t num_fields, bool sweep_ranges) {
  const auto v = config_violations(config, num_fields, sweep_ranges);
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : v) msg += "\n  - " + s;
  throw ConfigError(msg);
}

std::size_t parameter_count(const ModelConfig& c, std::size_t num_fields) {
  const std::size_t d = static_cast<std::size_t>(c.embedding_dim);
  const std::size_t width = num_fields * d;
  const std::size_t rows = std::size_t{1} << c.hash_bits;
  std::size_t total = rows * (d + (c.uses_collision_weights() ? 1 : 0));
  total += 1;  // b_f
  if (c.has_sim()) total += SimLayer<float>::parameter_count(num_fields);
  if (c.has_cross()) {
    const std::size_t layers = static_cast<std::size_t>(c.cross_layers);
    if (c.variant == Variant::kDcnV2) {
      total += layers * LowRankCrossLayer<float>::parameter_count(
                            width, static_cast<std::size_t>(c.projection_dim));
    } else {
      total += layers * OnlyDenseLayer<float>::parameter_count(width);
    }
    total += MlpStack<float>::parameter_count(width, c.deep_layers);
    total += width + (c.deep_layers.empty() ? 0 : c.deep_layers.back());  // head
  }
  return total;
}

ComplexityReport complexity_estimate(std::size_t num_fields, std::size_t dim,
                                     int onlydense_layers, int lowrank_layers,
                                     std::size_t projection) {
  if (projection == 0) throw ConfigError("complexity_estimate: projection dim must be >= 1");
  ComplexityReport r;
  r.fields = num_fields;
  r.dim = dim;
  r.width = num_fields * dim;
  r.onlydense_layers = onlydense_layers;
  r.lowrank_layers = lowrank_layers;
  r.projection = projection;
  const double width = static_cast<double>(r.width);
  r.onlydense_ops = onlydense_layers * width;
  r.lowrank_ops = lowrank_layers * (width / static_cast<double>(projection));
  r.dominates = r.onlydense_ops <= r.lowrank_ops;
  r.onlydense_params =
      static_cast<std::size_t>(onlydense_layers) * OnlyDenseLayer<float>::parameter_count(r.width);
  r.lowrank_params = projection <= r.width
                         ? static_cast<std::size_t>(lowrank_layers) *
                               LowRankCrossLayer<float>::parameter_count(r.width, projection)
                         : 0;
  return r;
}

ComplexityReport complexity_estimate(const ModelConfig& config, std::size_t num_fields) {
  return complexity_estimate(num_fields, static_cast<std::size_t>(config.embedding_dim),
                             config.cross_layers, config.cross_layers,
                             static_cast<std::size_t>(config.projection_dim));
}

namespace {

// Enumerates the dense parameter blocks of one set of layers. Used for both
// the parameters and the gradient buffers so the two lists line up.
template <typename T>
std::vector<ParamBlock<T>> collect_blocks(std::vector<OnlyDenseLayer<T>>& onlydense,
                                          std::vector<LowRankCrossLayer<T>>& lowrank,
                                          MlpStack<T>& deep, SimLayer<T>* sim,
                                          DenseVector<T>* head, DenseVector<T>& final_bias) {
  std::vector<ParamBlock<T>> out;
  for (std::size_t l = 0; l < onlydense.size(); ++l)
    for (auto& b : onlydense[l].blocks())
      out.push_back({"onlydense" + std::to_string(l) + "." + b.name, b.values});
  for (std::size_t l = 0; l < lowrank.size(); ++l)
    for (auto& b : lowrank[l].blocks())
      out.push_back({"cross" + std::to_string(l) + "." + b.name, b.values});
  for (auto& b : deep.blocks()) out.push_back({"deep." + b.name, b.values});
  if (sim != nullptr)
    for (auto& b : sim->blocks()) out.push_back({"sim." + b.name, b.values});
  if (head != nullptr) out.push_back({"head", head->span()});
  out.push_back({"final_bias", final_bias.span()});
  return out;
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::size_t num_fields)
    : config_(config), num_fields_(num_fields) {
  validate_config(config, num_fields, false);
  dim_ = static_cast<std::size_t>(config.embedding_dim);
  const std::size_t width = num_fields_ * dim_;

  table_ = EmbeddingTable<T>::create(
      config.hash_bits, dim_, config.uses_collision_weights(),
      {config.init_mu, config.init_sigma, config.init_omega, config.seed});

  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  if (config.has_cross()) {
    for (int l = 0; l < config.cross_layers; ++l) {
      if (config.variant == Variant::kDcnV2) {
        LowRankCrossLayer<T> layer(width, static_cast<std::size_t>(config.projection_dim),
                                   T(config.phi));
        glorot_uniform(layer.down, rng);
        glorot_uniform(layer.up, rng);
        lowrank_.push_back(std::move(layer));
      } else {
        OnlyDenseLayer<T> layer(width, T(config.phi));
        glorot_uniform(layer.weight, rng);
        onlydense_.push_back(std::move(layer));
      }
    }
    deep_ = MlpStack<T>(width, config.deep_layers, true);
    for (auto& layer : deep_.layers) glorot_uniform(layer.weight, rng);
    deep_out_ = config.deep_layers.empty() ? 0 : config.deep_layers.back();
    DenseMatrix<T> head(1, width + deep_out_);
    glorot_uniform(head, rng);
    head_ = DenseVector<T>(head.values());
  }
  if (config.has_sim()) sim_ = SimLayer<T>(num_fields_, dim_, config.sim_activation);
  final_bias_ = DenseVector<T>(1);

  // Gradient buffers mirror the parameter shapes.
  table_grads_ = SparseRowGradients<T>(table_.capacity(), table_.stride());
  onlydense_grads_ = onlydense_;
  lowrank_grads_ = lowrank_;
  deep_grads_ = deep_;
  sim_grads_ = sim_;
  head_grads_ = head_;
  final_bias_grads_ = final_bias_;
  zero_gradients();

  const AdamHyperparameters hyper{config.learning_rate, config.beta1, config.beta2,
                                  config.epsilon};
  for (const auto& b : parameter_blocks()) dense_adam_.emplace_back(b.values.size(), hyper);
  table_adam_ = AdamState<T>(table_.storage().size(), hyper);

  ws_.cross_out.resize(static_cast<std::size_t>(std::max(config.cross_layers, 0)));
  ws_.onlydense_cache.resize(onlydense_.size());
  ws_.lowrank_cache.resize(lowrank_.size());
}

template <typename T>
std::vector<ParamBlock<T>> Model<T>::parameter_blocks() {
  return collect_blocks<T>(onlydense_, lowrank_, deep_, has_sim() ? &sim_ : nullptr,
                           has_head() ? &head_ : nullptr, final_bias_);
}

template <typename T>
std::vector<ParamBlock<T>> Model<T>::gradient_blocks() {
  return collect_blocks<T>(onlydense_grads_, lowrank_grads_, deep_grads_,
                           has_sim() ? &sim_grads_ : nullptr,
                           has_head() ? &head_grads_ : nullptr, final_bias_grads_);
}

template <typename T>
std::vector<ParamBlock<const T>> Model<T>::parameter_blocks() const {
  std::vector<ParamBlock<const T>> out;
  for (auto& b : const_cast<Model*>(this)->parameter_blocks())
    out.push_back({b.name, std::span<const T>(b.values)});
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = table_.storage().size();
  for (const auto& b : parameter_blocks()) total += b.values.size();
  return total;
}

template <typename T>
void Model<T>::set_learning_rate(double lr) {
  config_.learning_rate = lr;
  for (auto& s : dense_adam_) s.learning_rate = lr;
  table_adam_.learning_rate = lr;
}

template <typename T>
void Model<T>::set_table(EmbeddingTable<T> table) {
  if (table.dim() != dim_ || table.capacity() != table_.capacity() ||
      table.collision_weighted() != table_.collision_weighted()) {
    throw ShapeError("set_table: table shape does not match the model");
  }
  table_ = std::move(table);
}

template <typename T>
void Model<T>::zero_gradients() {
  table_grads_.clear();
  for (auto& b : gradient_blocks()) zero(b.values);
}

template <typename T>
std::span<const T> Model<T>::cross_output(const Workspace& ws) const {
  if (ws.cross_out.empty()) return ws.embeddings;
  return ws.cross_out.back();
}

template <typename T>
T Model<T>::forward(const FeatureRecord& record, Workspace& ws) const {
  if (record.fields.size() != num_fields_) {
    throw ShapeError("record has " + std::to_string(record.fields.size()) +
                     " fields, model expects " + std::to_string(num_fields_));
  }
  const std::size_t d = dim_;
  const std::size_t width = num_fields_ * d;
  ws.embeddings.assign(width, T(0));
  for (std::size_t f = 0; f < num_fields_; ++f) {
    const FieldPayload& p = record.fields[f];
    std::span<T> slot(ws.embeddings.data() + f * d, d);
    if (!p.indices.empty()) {
      for (std::size_t i = 0; i < p.valid; ++i) table_.lookup_accumulate(p.indices[i], T(1), slot);
    } else {
      table_.lookup_accumulate(p.index, T(p.value), slot);
    }
  }
  const std::span<const T> x0(ws.embeddings);

  T logit = final_bias_[0];
  if (has_head()) {
    std::span<const T> cur = x0;
    for (std::size_t l = 0; l < onlydense_.size(); ++l) {
      ws.cross_out[l].resize(width);
      onlydense_forward<T>(onlydense_[l], cur, ws.onlydense_cache[l], ws.cross_out[l]);
      cur = ws.cross_out[l];
    }
    for (std::size_t l = 0; l < lowrank_.size(); ++l) {
      ws.cross_out[l].resize(width);
      lowrank_cross_forward<T>(lowrank_[l], cur, x0, ws.lowrank_cache[l], ws.cross_out[l]);
      cur = ws.cross_out[l];
    }
    T y = T(0);
    for (std::size_t i = 0; i < width; ++i) y += head_[i] * cur[i];
    if (deep_out_ > 0) {
      const auto deep_out = mlp_forward<T>(deep_, x0, ws.deep_cache);
      for (std::size_t i = 0; i < deep_out_; ++i) y += head_[width + i] * deep_out[i];
    }
    logit += y;
  }
  if (has_sim()) logit += simlayer_forward<T>(sim_, x0, ws.sim_cache);
  return logit;
}

template <typename T>
void Model<T>::backward(const FeatureRecord& record, Workspace& ws, T g) {
  const std::size_t d = dim_;
  const std::size_t width = num_fields_ * d;
  final_bias_grads_[0] += g;
  ws.d_embeddings.assign(width, T(0));

  if (has_head()) {
    const auto cross = cross_output(ws);
    for (std::size_t i = 0; i < width; ++i) head_grads_[i] += g * cross[i];
    ws.d_cur.resize(width);
    for (std::size_t i = 0; i < width; ++i) ws.d_cur[i] = g * head_[i];

    if (deep_out_ > 0) {
      const auto& deep_out = ws.deep_cache.output;
      ws.d_deep.resize(deep_out_);
      for (std::size_t i = 0; i < deep_out_; ++i) {
        head_grads_[width + i] += g * deep_out[i];
        ws.d_deep[i] = g * head_[width + i];
      }
      ws.d_tmp.resize(width);
      mlp_backward<T>(deep_, ws.deep_cache, ws.d_deep, deep_grads_, ws.d_tmp, ws.s1, ws.s2);
      for (std::size_t i = 0; i < width; ++i) ws.d_embeddings[i] += ws.d_tmp[i];
    }

    ws.d_prev.resize(width);
    for (std::size_t l = onlydense_.size(); l-- > 0;) {
      onlydense_backward<T>(onlydense_[l], ws.onlydense_cache[l], ws.d_cur, onlydense_grads_[l],
                            ws.d_prev, ws.s1);
      ws.d_cur.swap(ws.d_prev);
    }
    if (!lowrank_.empty()) {
      ws.d_anchor.resize(width);
      ws.d_tmp.resize(width);
      for (std::size_t l = lowrank_.size(); l-- > 0;) {
        lowrank_cross_backward<T>(lowrank_[l], ws.lowrank_cache[l], ws.d_cur, lowrank_grads_[l],
                                  ws.d_prev, ws.d_tmp, ws.s1);
        for (std::size_t i = 0; i < width; ++i) ws.d_embeddings[i] += ws.d_tmp[i];
        ws.d_cur.swap(ws.d_prev);
      }
    }
    for (std::size_t i = 0; i < width; ++i) ws.d_embeddings[i] += ws.d_cur[i];
  }

  if (has_sim()) {
    ws.d_tmp.resize(width);
    simlayer_backward<T>(sim_, ws.sim_cache, g, sim_grads_, ws.d_tmp);
    for (std::size_t i = 0; i < width; ++i) ws.d_embeddings[i] += ws.d_tmp[i];
  }

  for (std::size_t f = 0; f < num_fields_; ++f) {
    const FieldPayload& p = record.fields[f];
    std::span<const T> up(ws.d_embeddings.data() + f * d, d);
    if (!p.indices.empty()) {
      for (std::size_t i = 0; i < p.valid; ++i)
        accumulate_slot_gradient(table_, p.indices[i], T(1), up, table_grads_);
    } else {
      accumulate_slot_gradient(table_, p.index, T(p.value), up, table_grads_);
    }
  }
}

namespace {

double clamp_probability(double p) {
  constexpr double kEps = 1e-12;
  return std::min(std::max(p, kEps), 1.0 - kEps);
}

}  // namespace

template <typename T>
double Model<T>::logit(const FeatureRecord& record) const {
  Workspace ws;
  ws.cross_out.resize(ws_.cross_out.size());
  ws.onlydense_cache.resize(onlydense_.size());
  ws.lowrank_cache.resize(lowrank_.size());
  return static_cast<double>(forward(record, ws));
}

template <typename T>
double Model<T>::predict(const FeatureRecord& record) const {
  return clamp_probability(sigmoid(logit(record)));
}

template <typename T>
double Model<T>::compute_gradients(std::span<const FeatureRecord> batch,
                                   std::vector<double>* pre_update_predictions) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  zero_gradients();
  if (pre_update_predictions != nullptr) pre_update_predictions->clear();
  const T scale = T(1) / T(static_cast<double>(batch.size()));
  double loss_sum = 0.0;
  for (const auto& record : batch) {
    const T z = forward(record, ws_);
    const auto bce = sigmoid_bce<T>(z, record.label);
    loss_sum += static_cast<double>(bce.loss);
    if (pre_update_predictions != nullptr) {
      pre_update_predictions->push_back(clamp_probability(sigmoid(static_cast<double>(z))));
    }
    backward(record, ws_, bce.grad_logit * scale);
  }
  const double loss = loss_sum / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) {
    zero_gradients();
    throw NonFiniteError("non-finite loss at batch " + std::to_string(steps_));
  }
  return loss;
}

template <typename T>
void Model<T>::apply_gradients() {
  auto params = parameter_blocks();
  auto grads = gradient_blocks();
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_step<T>(params[i].values, grads[i].values, dense_adam_[i], params[i].name);
  }
  adam_step_rows<T>(table_.storage(), table_grads_.values(), table_grads_.rows(),
                    table_.stride(), table_adam_, "embeddings");
  ++steps_;
}

template <typename T>
double Model<T>::train_step(std::span<const FeatureRecord> batch,
                            std::vector<double>* pre_update_predictions) {
  const double loss = compute_gradients(batch, pre_update_predictions);
  apply_gradients();
  return loss;
}

template class Model<float>;
template class Model<double>;

}  // namespace dcn2
