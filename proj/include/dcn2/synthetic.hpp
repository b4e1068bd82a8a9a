#pragma once

// Deterministic synthetic click stream in the generic format, used when the
// public benchmark sets are not on disk.
//
// Each categorical value owns a first-order bias and a latent vector, both
// derived from a hash of (seed, field, value) so nothing large is stored.
// The click logit sums the biases, a fixed set of pairwise latent dot
// products, and one continuous effect. Popularity is Zipf-shaped, a few
// fields drift (new ids keep appearing), and some high-cardinality fields
// carry no signal at all.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace dcn2 {

struct SyntheticSpec {
  std::uint64_t rows = 500000;
  std::uint64_t seed = 7;
  double intercept = -1.1;
  double interaction_scale = 1.5;
  double bias_scale = 1.5;
};

struct SyntheticStats {
  std::uint64_t rows = 0;
  std::uint64_t positives = 0;
};

// `probabilities`, when given, receives each row's true click probability.
SyntheticStats write_synthetic(std::ostream& out, const SyntheticSpec& spec,
                               std::vector<double>* probabilities = nullptr);
SyntheticStats write_synthetic(const std::string& path, const SyntheticSpec& spec,
                               std::vector<double>* probabilities = nullptr);

}  // namespace dcn2
