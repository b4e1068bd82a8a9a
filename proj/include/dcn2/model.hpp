#pragma once

// The three trainable variants:
//   dcn2      collision-weighted table, onlydense stack, deep MLP, SimLayer
//   dcnv2     plain table, low-rank cross stack, deep MLP
//   dcn2_simk collision-weighted table, SimLayer only
//
// logit = <head, [cross_out | deep_out]> + simlayer(E) + b_f

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcn2/embeddings.hpp"
#include "dcn2/features.hpp"
#include "dcn2/layers.hpp"
#include "dcn2/numerics.hpp"

namespace dcn2 {

enum class Variant { kDcn2, kDcnV2, kDcn2Simk };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::kDcn2;
  int hash_bits = 18;
  int embedding_dim = 8;
  int cross_layers = 1;
  int projection_dim = 32;  // low-rank cross only
  double phi = 1.0;
  std::vector<std::size_t> deep_layers = {64, 32};
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 2500;
  double init_mu = 0.0;
  double init_sigma = 0.05;
  double init_omega = 0.1;
  Activation sim_activation = Activation::kIdentity;
  std::uint64_t seed = 1;

  bool uses_collision_weights() const { return variant != Variant::kDcnV2; }
  bool has_cross() const { return variant != Variant::kDcn2Simk; }
  bool has_sim() const { return variant != Variant::kDcnV2; }
};

// Structural problems (always enforced). With `sweep_ranges`, also the
// tuned hyperparameter ranges: dim in [8, 16], lr in [1e-4, 1e-2],
// beta1 in [0, 0.9], and phi in [1, 3] for onlydense stacks.
std::vector<std::string> config_violations(const ModelConfig& config, std::size_t num_fields,
                                           bool sweep_ranges);
// Throws ConfigError listing every violation.
void validate_config(const ModelConfig& config, std::size_t num_fields, bool sweep_ranges);

// Closed-form trainable parameter count, embedding table included.
std::size_t parameter_count(const ModelConfig& config, std::size_t num_fields);

// Per-instance cost comparison between an onlydense stack and a low-rank
// cross stack over width |F| * d:
//   onlydense side = l_od * (|F| * d)
//   low-rank side  = l_c  * (|F| * d) / d_cross,  d_cross = projection dim
// `dominates` is true when the onlydense side does not exceed the low-rank
// side.
struct ComplexityReport {
  std::size_t fields = 0;
  std::size_t dim = 0;
  std::size_t width = 0;
  int onlydense_layers = 0;
  int lowrank_layers = 0;
  std::size_t projection = 0;
  double onlydense_ops = 0.0;
  double lowrank_ops = 0.0;
  bool dominates = false;
  std::size_t onlydense_params = 0;
  std::size_t lowrank_params = 0;
};

ComplexityReport complexity_estimate(std::size_t num_fields, std::size_t dim,
                                     int onlydense_layers, int lowrank_layers,
                                     std::size_t projection);
ComplexityReport complexity_estimate(const ModelConfig& config, std::size_t num_fields);

template <typename T>
class Model {
 public:
  Model(const ModelConfig& config, std::size_t num_fields);
  static Model build(const ModelConfig& config, std::size_t num_fields) {
    return Model(config, num_fields);
  }

  const ModelConfig& config() const { return config_; }
  std::size_t num_fields() const { return num_fields_; }
  std::size_t width() const { return num_fields_ * dim_; }

  double logit(const FeatureRecord& record) const;
  // Probability in (0, 1); no state change.
  double predict(const FeatureRecord& record) const;

  // Forward + backward over the batch mean BCE, then one Adam update.
  // Returns the pre-update mean loss. When `pre_update_predictions` is given
  // it receives each record's probability under the pre-update parameters.
  double train_step(std::span<const FeatureRecord> batch,
                    std::vector<double>* pre_update_predictions = nullptr);

  // The two halves of train_step.
  double compute_gradients(std::span<const FeatureRecord> batch,
                           std::vector<double>* pre_update_predictions = nullptr);
  void apply_gradients();

  // Dense parameter groups and their gradient buffers, same order and names.
  std::vector<ParamBlock<T>> parameter_blocks();
  std::vector<ParamBlock<T>> gradient_blocks();
  std::vector<ParamBlock<const T>> parameter_blocks() const;

  std::size_t parameter_count() const;
  std::int64_t steps() const { return steps_; }
  void set_learning_rate(double lr);

  EmbeddingTable<T>& table() { return table_; }
  const EmbeddingTable<T>& table() const { return table_; }
  // Replaces the table, e.g. to share one embedding block between models.
  void set_table(EmbeddingTable<T> table);
  const SparseRowGradients<T>& table_gradients() const { return table_grads_; }

  std::vector<OnlyDenseLayer<T>>& onlydense_layers() { return onlydense_; }
  std::vector<LowRankCrossLayer<T>>& lowrank_layers() { return lowrank_; }
  MlpStack<T>& deep() { return deep_; }
  SimLayer<T>& sim() { return sim_; }
  DenseVector<T>& head() { return head_; }
  DenseVector<T>& final_bias() { return final_bias_; }
  bool has_sim() const { return config_.has_sim(); }
  bool has_head() const { return config_.has_cross(); }

 private:
  struct Workspace {
    std::vector<T> embeddings;  // n x d, also the stack input x0
    std::vector<std::vector<T>> cross_out;
    std::vector<OnlyDenseCache<T>> onlydense_cache;
    std::vector<LowRankCrossCache<T>> lowrank_cache;
    MlpCache<T> deep_cache;
    SimCache<T> sim_cache;
    // backward scratch
    std::vector<T> d_embeddings, d_cur, d_prev, d_anchor, d_tmp, d_deep, s1, s2;
  };

  T forward(const FeatureRecord& record, Workspace& ws) const;
  void backward(const FeatureRecord& record, Workspace& ws, T d_logit);
  std::span<const T> cross_output(const Workspace& ws) const;
  void zero_gradients();

  ModelConfig config_;
  std::size_t num_fields_ = 0;
  std::size_t dim_ = 0;
  std::size_t deep_out_ = 0;

  EmbeddingTable<T> table_;
  std::vector<OnlyDenseLayer<T>> onlydense_;
  std::vector<LowRankCrossLayer<T>> lowrank_;
  MlpStack<T> deep_;
  SimLayer<T> sim_;
  DenseVector<T> head_;
  DenseVector<T> final_bias_;

  SparseRowGradients<T> table_grads_;
  std::vector<OnlyDenseLayer<T>> onlydense_grads_;
  std::vector<LowRankCrossLayer<T>> lowrank_grads_;
  MlpStack<T> deep_grads_;
  SimLayer<T> sim_grads_;
  DenseVector<T> head_grads_;
  DenseVector<T> final_bias_grads_;

  std::vector<AdamState<T>> dense_adam_;
  AdamState<T> table_adam_;
  std::int64_t steps_ = 0;
  Workspace ws_;
};

extern template class Model<float>;
extern template class Model<double>;

// Checkpoint: `path` holds the embedding table in its binary format and
// `path + ".layers"` the versioned sidecar (config text, field count, then
// every dense parameter block as name + fp32 values).
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

}  // namespace dcn2
