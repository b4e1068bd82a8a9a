#pragma once

// Interaction layers with hand-written backward passes.
//
// Backward functions accumulate parameter gradients into a `grads` object of
// the same type as the layer (so one batch can sum into it) and overwrite the
// input-gradient spans.

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "dcn2/numerics.hpp"

namespace dcn2 {

template <typename T>
void glorot_uniform(DenseMatrix<T>& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : m.span()) v = T(dist(rng));
}

template <typename T>
void zero(std::span<T> values) {
  for (auto& v : values) v = T(0);
}

// ---------------------------------------------------------------------------
// onlydense: x_t = relu(W x + b0), x_r = (x_t * x) * phi. No additive skip.

template <typename T>
struct OnlyDenseLayer {
  DenseMatrix<T> weight;
  DenseVector<T> bias;
  T phi = T(1);

  OnlyDenseLayer() = default;
  explicit OnlyDenseLayer(std::size_t width, T phi_value = T(1))
      : weight(width, width), bias(width), phi(phi_value) {}

  std::size_t width() const { return bias.size(); }
  static std::size_t parameter_count(std::size_t width) { return width * width + width; }

  std::vector<ParamBlock<T>> blocks() { return {{"weight", weight.span()}, {"bias", bias.span()}}; }
};

template <typename T>
struct OnlyDenseCache {
  std::vector<T> input;
  std::vector<T> pre;    // W x + b0
  std::vector<T> gated;  // x_t
};

template <typename T>
void onlydense_forward(const OnlyDenseLayer<T>& layer, std::span<const T> x,
                       OnlyDenseCache<T>& cache, std::span<T> out) {
  const std::size_t d = layer.width();
  detail::require_dim("onlydense_forward", "x.len", x.size(), "width", d);
  detail::require_dim("onlydense_forward", "out.len", out.size(), "width", d);
  cache.input.assign(x.begin(), x.end());
  cache.pre.resize(d);
  cache.gated.resize(d);
  affine_into<T>(layer.weight, x, layer.bias.span(), cache.pre);
  for (std::size_t i = 0; i < d; ++i) {
    const T t = cache.pre[i] > T(0) ? cache.pre[i] : T(0);
    cache.gated[i] = t;
    out[i] = t * x[i] * layer.phi;
  }
}

template <typename T>
DenseVector<T> onlydense_forward(const OnlyDenseLayer<T>& layer, const DenseVector<T>& x) {
  OnlyDenseCache<T> cache;
  DenseVector<T> out(layer.width());
  onlydense_forward<T>(layer, x.span(), cache, out.span());
  return out;
}

// phi is a fixed hyperparameter and receives no gradient.
template <typename T>
void onlydense_backward(const OnlyDenseLayer<T>& layer, const OnlyDenseCache<T>& cache,
                        std::span<const T> upstream, OnlyDenseLayer<T>& grads,
                        std::span<T> grad_x, std::vector<T>& scratch) {
  const std::size_t d = layer.width();
  detail::require_dim("onlydense_backward", "upstream.len", upstream.size(), "width", d);
  scratch.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    // d x_r / d x_t = phi * x ; gated by relu'
    scratch[i] = cache.pre[i] > T(0) ? upstream[i] * layer.phi * cache.input[i] : T(0);
  }
  affine_backward_into<T>(layer.weight, cache.input, scratch, grads.weight.span(),
                          grads.bias.span(), grad_x);
  if (grad_x.empty()) return;
  for (std::size_t i = 0; i < d; ++i) grad_x[i] += upstream[i] * layer.phi * cache.gated[i];
}

// ---------------------------------------------------------------------------
// Low-rank cross:
//   x_p = relu(W0 x + b0), x_o = W1 x_p + b1 + phi x, x_r = x0 * x_o + x

template <typename T>
struct LowRankCrossLayer {
  DenseMatrix<T> down;  // W0, p x d
  DenseVector<T> down_bias;
  DenseMatrix<T> up;  // W1, d x p
  DenseVector<T> up_bias;
  T phi = T(1);

  LowRankCrossLayer() = default;
  LowRankCrossLayer(std::size_t width, std::size_t projection, T phi_value = T(1))
      : down(projection, width),
        down_bias(projection),
        up(width, projection),
        up_bias(width),
        phi(phi_value) {
    if (projection > width) throw ShapeError("low-rank cross: projection dim > width");
  }

  std::size_t width() const { return up_bias.size(); }
  std::size_t projection() const { return down_bias.size(); }
  static std::size_t parameter_count(std::size_t width, std::size_t projection) {
    return 2 * width * projection + projection + width;
  }

  std::vector<ParamBlock<T>> blocks() {
    return {{"down", down.span()},
            {"down_bias", down_bias.span()},
            {"up", up.span()},
            {"up_bias", up_bias.span()}};
  }
};

template <typename T>
struct LowRankCrossCache {
  std::vector<T> input;
  std::vector<T> anchor;
  std::vector<T> pre;        // W0 x + b0
  std::vector<T> projected;  // x_p
  std::vector<T> mixed;      // x_o
};

template <typename T>
void lowrank_cross_forward(const LowRankCrossLayer<T>& layer, std::span<const T> x,
                           std::span<const T> x0, LowRankCrossCache<T>& cache,
                           std::span<T> out) {
  const std::size_t d = layer.width();
  const std::size_t p = layer.projection();
  detail::require_dim("lowrank_cross_forward", "x.len", x.size(), "width", d);
  detail::require_dim("lowrank_cross_forward", "x0.len", x0.size(), "width", d);
  detail::require_dim("lowrank_cross_forward", "out.len", out.size(), "width", d);
  cache.input.assign(x.begin(), x.end());
  cache.anchor.assign(x0.begin(), x0.end());
  cache.pre.resize(p);
  cache.projected.resize(p);
  cache.mixed.resize(d);
  affine_into<T>(layer.down, x, layer.down_bias.span(), cache.pre);
  for (std::size_t j = 0; j < p; ++j) cache.projected[j] = cache.pre[j] > T(0) ? cache.pre[j] : T(0);
  affine_into<T>(layer.up, cache.projected, layer.up_bias.span(), cache.mixed);
  for (std::size_t i = 0; i < d; ++i) {
    cache.mixed[i] += layer.phi * x[i];
    out[i] = x0[i] * cache.mixed[i] + x[i];
  }
}

template <typename T>
DenseVector<T> lowrank_cross_forward(const LowRankCrossLayer<T>& layer, const DenseVector<T>& x,
                                     const DenseVector<T>& x0) {
  LowRankCrossCache<T> cache;
  DenseVector<T> out(layer.width());
  lowrank_cross_forward<T>(layer, x.span(), x0.span(), cache, out.span());
  return out;
}

// Writes grad_x and grad_x0 (either may be empty to skip).
template <typename T>
void lowrank_cross_backward(const LowRankCrossLayer<T>& layer, const LowRankCrossCache<T>& cache,
                            std::span<const T> upstream, LowRankCrossLayer<T>& grads,
                            std::span<T> grad_x, std::span<T> grad_x0,
                            std::vector<T>& scratch) {
  const std::size_t d = layer.width();
  const std::size_t p = layer.projection();
  detail::require_dim("lowrank_cross_backward", "upstream.len", upstream.size(), "width", d);
  // scratch = [d_mixed (d) | d_projected (p) | d_pre (p) | tmp (d)]
  scratch.resize(2 * d + 2 * p);
  std::span<T> d_mixed(scratch.data(), d);
  std::span<T> d_projected(scratch.data() + d, p);
  std::span<T> d_pre(scratch.data() + d + p, p);
  std::span<T> tmp(scratch.data() + d + 2 * p, d);

  for (std::size_t i = 0; i < d; ++i) d_mixed[i] = upstream[i] * cache.anchor[i];
  affine_backward_into<T>(layer.up, cache.projected, std::span<const T>(d_mixed),
                          grads.up.span(), grads.up_bias.span(), d_projected);
  for (std::size_t j = 0; j < p; ++j) d_pre[j] = cache.pre[j] > T(0) ? d_projected[j] : T(0);
  affine_backward_into<T>(layer.down, cache.input, std::span<const T>(d_pre),
                          grads.down.span(), grads.down_bias.span(), tmp);
  if (!grad_x.empty()) {
    for (std::size_t i = 0; i < d; ++i) grad_x[i] = upstream[i] + layer.phi * d_mixed[i] + tmp[i];
  }
  if (!grad_x0.empty()) {
    for (std::size_t i = 0; i < d; ++i) grad_x0[i] = upstream[i] * cache.mixed[i];
  }
}

// ---------------------------------------------------------------------------
// SimLayer: y = act(sum_ij w[i*n + j] <e_i, e_j> + b) over all n^2 ordered
// field pairs, diagonal included.

template <typename T>
struct SimLayer {
  std::size_t fields = 0;
  std::size_t dim = 0;
  DenseVector<T> weights;  // n^2, index i * n + j
  DenseVector<T> bias{T(0)};
  Activation activation = Activation::kIdentity;

  SimLayer() = default;
  SimLayer(std::size_t n, std::size_t m, Activation act = Activation::kIdentity)
      : fields(n), dim(m), weights(n * n), bias{T(0)}, activation(act) {}

  static std::size_t parameter_count(std::size_t n) { return n * n + 1; }

  std::vector<ParamBlock<T>> blocks() { return {{"weights", weights.span()}, {"bias", bias.span()}}; }
};

template <typename T>
struct SimCache {
  std::vector<T> embeddings;  // n x m
  std::vector<T> gram;        // n x n
  T pre = T(0);
  T out = T(0);
};

template <typename T>
T simlayer_forward(const SimLayer<T>& layer, std::span<const T> E, SimCache<T>& cache) {
  const std::size_t n = layer.fields, m = layer.dim;
  detail::require_dim("simlayer_forward", "E.size", E.size(), "n*m", n * m);
  cache.embeddings.assign(E.begin(), E.end());
  cache.gram.resize(n * n);
  T z = layer.bias[0];
  for (std::size_t i = 0; i < n; ++i) {
    const T* ei = E.data() + i * m;
    for (std::size_t j = i; j < n; ++j) {
      const T* ej = E.data() + j * m;
      T dot = T(0);
      for (std::size_t k = 0; k < m; ++k) dot += ei[k] * ej[k];
      cache.gram[i * n + j] = dot;
      cache.gram[j * n + i] = dot;
    }
  }
  for (std::size_t q = 0; q < n * n; ++q) z += layer.weights[q] * cache.gram[q];
  cache.pre = z;
  cache.out = activate(layer.activation, z);
  return cache.out;
}

template <typename T>
T simlayer_forward(const SimLayer<T>& layer, const DenseMatrix<T>& E) {
  detail::require_dim("simlayer_forward", "E.rows", E.rows(), "fields", layer.fields);
  detail::require_dim("simlayer_forward", "E.cols", E.cols(), "dim", layer.dim);
  SimCache<T> cache;
  return simlayer_forward<T>(layer, E.span(), cache);
}

// grad_E row i = dz * sum_j (w_ij + w_ji) e_j, dz = upstream * act'(z).
template <typename T>
void simlayer_backward(const SimLayer<T>& layer, const SimCache<T>& cache, T upstream,
                       SimLayer<T>& grads, std::span<T> grad_E) {
  const std::size_t n = layer.fields, m = layer.dim;
  const T dz = upstream * activation_derivative(layer.activation, cache.pre, cache.out);
  grads.bias[0] += dz;
  for (std::size_t q = 0; q < n * n; ++q) grads.weights[q] += dz * cache.gram[q];
  if (grad_E.empty()) return;
  detail::require_dim("simlayer_backward", "grad_E.size", grad_E.size(), "n*m", n * m);
  zero(grad_E);
  if (dz == T(0)) return;
  const T* E = cache.embeddings.data();
  for (std::size_t i = 0; i < n; ++i) {
    T* gi = grad_E.data() + i * m;
    for (std::size_t j = 0; j < n; ++j) {
      const T c = dz * (layer.weights[i * n + j] + layer.weights[j * n + i]);
      if (c == T(0)) continue;
      const T* ej = E + j * m;
      for (std::size_t k = 0; k < m; ++k) gi[k] += c * ej[k];
    }
  }
}

// ---------------------------------------------------------------------------
// Plain MLP: affine + ReLU per layer; the last layer's ReLU is optional.

template <typename T>
struct DenseLayer {
  DenseMatrix<T> weight;
  DenseVector<T> bias;
};

template <typename T>
struct MlpStack {
  std::vector<DenseLayer<T>> layers;
  bool activate_last = true;

  MlpStack() = default;
  MlpStack(std::size_t input, const std::vector<std::size_t>& sizes, bool relu_last = true)
      : activate_last(relu_last) {
    std::size_t in = input;
    for (auto out : sizes) {
      layers.push_back({DenseMatrix<T>(out, in), DenseVector<T>(out)});
      in = out;
    }
  }

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
  std::size_t output_size(std::size_t input) const {
    return layers.empty() ? input : layers.back().bias.size();
  }
  static std::size_t parameter_count(std::size_t input, const std::vector<std::size_t>& sizes) {
    std::size_t total = 0, in = input;
    for (auto out : sizes) {
      total += in * out + out;
      in = out;
    }
    return total;
  }

  std::vector<ParamBlock<T>> blocks() {
    std::vector<ParamBlock<T>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.push_back({"layer" + std::to_string(l) + ".weight", layers[l].weight.span()});
      out.push_back({"layer" + std::to_string(l) + ".bias", layers[l].bias.span()});
    }
    return out;
  }

  bool activated(std::size_t l) const { return l + 1 < layers.size() || activate_last; }
};

template <typename T>
struct MlpCache {
  std::vector<std::vector<T>> inputs;
  std::vector<std::vector<T>> pre;
  std::vector<T> output;
};

template <typename T>
std::span<const T> mlp_forward(const MlpStack<T>& stack, std::span<const T> x,
                               MlpCache<T>& cache) {
  const std::size_t L = stack.layers.size();
  cache.inputs.resize(L);
  cache.pre.resize(L);
  if (L == 0) {
    cache.output.assign(x.begin(), x.end());
    return cache.output;
  }
  cache.inputs[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = stack.layers[l];
    cache.pre[l].resize(layer.bias.size());
    affine_into<T>(layer.weight, cache.inputs[l], layer.bias.span(), cache.pre[l]);
    std::vector<T>& next = l + 1 < L ? cache.inputs[l + 1] : cache.output;
    next.resize(layer.bias.size());
    const bool act = stack.activated(l);
    for (std::size_t i = 0; i < next.size(); ++i) {
      const T z = cache.pre[l][i];
      next[i] = act ? (z > T(0) ? z : T(0)) : z;
    }
  }
  return cache.output;
}

template <typename T>
DenseVector<T> mlp_forward(const MlpStack<T>& stack, const DenseVector<T>& x) {
  MlpCache<T> cache;
  auto out = mlp_forward<T>(stack, x.span(), cache);
  return DenseVector<T>(std::vector<T>(out.begin(), out.end()));
}

template <typename T>
void mlp_backward(const MlpStack<T>& stack, const MlpCache<T>& cache,
                  std::span<const T> upstream, MlpStack<T>& grads, std::span<T> grad_x,
                  std::vector<T>& scratch_a, std::vector<T>& scratch_b) {
  const std::size_t L = stack.layers.size();
  if (L == 0) {
    if (!grad_x.empty()) std::copy(upstream.begin(), upstream.end(), grad_x.begin());
    return;
  }
  scratch_a.assign(upstream.begin(), upstream.end());
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = stack.layers[l];
    if (stack.activated(l)) {
      for (std::size_t i = 0; i < scratch_a.size(); ++i) {
        if (!(cache.pre[l][i] > T(0))) scratch_a[i] = T(0);
      }
    }
    std::span<T> gx;
    if (l > 0) {
      scratch_b.resize(layer.weight.cols());
      gx = scratch_b;
    } else {
      gx = grad_x;
    }
    affine_backward_into<T>(layer.weight, cache.inputs[l], std::span<const T>(scratch_a),
                            grads.layers[l].weight.span(), grads.layers[l].bias.span(), gx);
    if (l > 0) scratch_a.swap(scratch_b);
  }
}

}  // namespace dcn2
