#include "dcn2/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "dcn2/errors.hpp"

namespace dcn2 {

namespace {

constexpr int kLatent = 4;
constexpr double kLatentSd = 0.6;
constexpr double kTwoPi = 6.283185307179586;

struct CatField {
  const char* name;
  std::uint64_t cardinality;
  double zipf;       // 0 = uniform
  double bias_sd;    // 0 = pure noise field
  double drift;      // id shift per row
  double missing;    // probability of an empty cell
};

constexpr std::array<CatField, 12> kFields = {{
    {"site", 500, 1.1, 0.6, 0.0, 0.0},
    {"app", 3000, 1.1, 0.4, 0.0, 0.05},
    {"device", 12, 1.3, 0.3, 0.0, 0.0},
    {"region", 80, 1.0, 0.3, 0.0, 0.0},
    {"hour", 24, 0.0, 0.2, 0.0, 0.0},
    {"adtype", 8, 0.8, 0.4, 0.0, 0.0},
    {"advertiser", 2000, 1.1, 0.6, 0.0, 0.0},
    {"campaign", 20000, 1.1, 0.5, 1.0 / 50.0, 0.0},
    {"creative", 20000, 1.0, 0.3, 1.0 / 20.0, 0.0},
    {"user", 50000, 1.05, 0.5, 0.0, 0.0},
    {"devid", 1000000, 0.3, 0.0, 0.0, 0.0},
    {"query", 200000, 0.7, 0.0, 0.0, 0.0},
}};

enum Slot : int { kSite, kApp, kDevice, kRegion, kHour, kAdtype, kAdvertiser, kCampaign,
                  kCreative, kUser, kDevid, kQuery, kTags };

constexpr std::uint64_t kTagVocab = 600;
constexpr double kTagZipf = 1.0;
constexpr double kTagBiasSd = 0.2;

struct Pair {
  int a, b;
  double coef;
};

constexpr std::array<Pair, 8> kPairs = {{
    {kSite, kAdvertiser, 1.0},
    {kUser, kCampaign, 1.2},
    {kDevice, kAdtype, 0.8},
    {kRegion, kHour, 0.6},
    {kApp, kCreative, 0.8},
    {kTags, kAdvertiser, 0.8},
    {kUser, kSite, 0.8},
    {kUser, kTags, 0.7},
}};

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

// Box-Muller from two draws; deterministic on every platform, unlike
// std::normal_distribution.
double normal(std::uint64_t& state) {
  const double u1 = 1.0 - unit(splitmix64(state));
  const double u2 = unit(splitmix64(state));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

struct ValueEffect {
  double bias = 0.0;
  std::array<double, kLatent> latent{};
};

ValueEffect effect_of(std::uint64_t seed, int field, std::uint64_t value, double bias_sd) {
  std::uint64_t state = seed * 0x2545F4914F6CDD1DULL ^ (static_cast<std::uint64_t>(field) << 48) ^
                        (value * 0x9E3779B97F4A7C15ULL);
  splitmix64(state);
  ValueEffect e;
  e.bias = bias_sd * normal(state);
  for (auto& v : e.latent) v = kLatentSd * normal(state);
  return e;
}

class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s) : cdf_(n) {
    double total = 0.0;
    for (std::uint64_t r = 0; r < n; ++r) {
      total += s == 0.0 ? 1.0 : std::pow(static_cast<double>(r + 1), -s);
      cdf_[r] = total;
    }
    for (auto& c : cdf_) c /= total;
  }
  std::uint64_t operator()(double u) const {
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                               static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace

SyntheticStats write_synthetic(std::ostream& out, const SyntheticSpec& spec,
                               std::vector<double>* probabilities) {
  std::vector<ZipfSampler> samplers;
  for (const auto& f : kFields) samplers.emplace_back(f.cardinality, f.zipf);
  const ZipfSampler tag_sampler(kTagVocab, kTagZipf);
  std::mt19937_64 rng(spec.seed);
  auto u = [&] { return unit(rng()); };

  out << "label\tnum:count\tnum:score";
  for (const auto& f : kFields) out << "\tcat:" << f.name;
  out << "\tmulti:tags\n";

  SyntheticStats stats;
  constexpr int kSlots = static_cast<int>(kFields.size()) + 1;
  std::array<ValueEffect, kSlots> effects;
  std::array<bool, kSlots> present;
  std::array<std::uint64_t, kFields.size()> ids;
  std::vector<std::uint64_t> tags;
  std::string line;

  for (std::uint64_t row = 0; row < spec.rows; ++row) {
    double logit = spec.intercept;

    // continuous: a heavy-tailed count with a log-scale effect, plus noise
    std::uint64_t ns = spec.seed ^ (row * 0xD1B54A32D192ED03ULL);
    const double count = std::floor(std::exp(1.5 + 1.2 * normal(ns)));
    const double score = std::round(100.0 * normal(ns)) / 100.0;
    logit += 0.25 * (std::log1p(count) - 1.5);

    for (std::size_t f = 0; f < kFields.size(); ++f) {
      const auto& field = kFields[f];
      const double draw = u();
      const bool missing = field.missing > 0.0 && u() < field.missing;
      present[f] = !missing;
      if (missing) {
        effects[f] = ValueEffect{};
        continue;
      }
      const auto offset = static_cast<std::uint64_t>(field.drift * static_cast<double>(row));
      ids[f] = samplers[f](draw) + offset;
      if (field.bias_sd > 0.0) {
        effects[f] = effect_of(spec.seed, static_cast<int>(f), ids[f], field.bias_sd);
        logit += spec.bias_scale * effects[f].bias;
      } else {
        effects[f] = ValueEffect{};
      }
    }

    const int ntags = 1 + static_cast<int>(u() * 5.0);
    tags.clear();
    ValueEffect tag_sum;
    for (int t = 0; t < ntags; ++t) {
      const auto tag = tag_sampler(u());
      tags.push_back(tag);
      const auto e = effect_of(spec.seed, kTags, tag, kTagBiasSd);
      tag_sum.bias += e.bias / static_cast<double>(ntags);
      for (int k = 0; k < kLatent; ++k) tag_sum.latent[k] += e.latent[k] / std::sqrt(ntags);
    }
    effects[kTags] = tag_sum;
    present[kTags] = true;
    logit += spec.bias_scale * tag_sum.bias;

    for (const auto& p : kPairs) {
      if (!present[p.a] || !present[p.b]) continue;
      double dot = 0.0;
      for (int k = 0; k < kLatent; ++k) dot += effects[p.a].latent[k] * effects[p.b].latent[k];
      logit += spec.interaction_scale * p.coef * dot;
    }

    const double prob = 1.0 / (1.0 + std::exp(-logit));
    if (probabilities != nullptr) probabilities->push_back(prob);
    const int label = u() < prob ? 1 : 0;
    stats.positives += static_cast<std::uint64_t>(label);
    ++stats.rows;

    line.clear();
    line += label ? '1' : '0';
    line += '\t';
    line += std::to_string(static_cast<long long>(count));
    line += '\t';
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", score);
    line += buf;
    for (std::size_t f = 0; f < kFields.size(); ++f) {
      line += '\t';
      if (present[f]) line += std::to_string(ids[f]);
    }
    line += '\t';
    for (std::size_t t = 0; t < tags.size(); ++t) {
      if (t) line += ',';
      line += std::to_string(tags[t]);
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing synthetic stream");
  return stats;
}

SyntheticStats write_synthetic(const std::string& path, const SyntheticSpec& spec,
                               std::vector<double>* probabilities) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return write_synthetic(out, spec, probabilities);
}

}  // namespace dcn2
