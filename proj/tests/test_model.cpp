#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "dcn2/config.hpp"
#include "dcn2/errors.hpp"
#include "dcn2/model.hpp"

using namespace dcn2;

namespace {

constexpr std::size_t kFields = 4;

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.hash_bits = 6;
  c.embedding_dim = 3;
  c.cross_layers = 2;
  c.projection_dim = 4;
  c.phi = 1.5;
  c.deep_layers = {5, 3};
  c.learning_rate = 0.01;
  c.seed = 11;
  return c;
}

// Field 0 categorical, field 1 continuous, field 2 multi-value (pad 3), field 3 categorical.
std::vector<FeatureRecord> make_records(std::size_t n, std::uint64_t seed, int bits) {
  std::mt19937_64 rng(seed);
  const std::uint32_t cap = 1U << bits;
  std::vector<FeatureRecord> out;
  for (std::size_t r = 0; r < n; ++r) {
    FeatureRecord rec;
    rec.label = static_cast<int>(rng() % 2);
    rec.fields.resize(kFields);
    rec.fields[0].index = static_cast<std::uint32_t>(rng() % cap);
    rec.fields[1].index = static_cast<std::uint32_t>(rng() % cap);
    rec.fields[1].value = static_cast<float>(0.25 * static_cast<double>(rng() % 8));
    rec.fields[2].indices = {static_cast<std::uint32_t>(rng() % cap),
                             static_cast<std::uint32_t>(rng() % cap), kPadIndex};
    rec.fields[2].valid = 1 + static_cast<std::uint32_t>(rng() % 2);
    rec.fields[3].index = static_cast<std::uint32_t>(rng() % cap);
    out.push_back(std::move(rec));
  }
  return out;
}

template <typename T>
void randomize_dense(Model<T>& m, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  for (auto& b : m.parameter_blocks())
    for (auto& v : b.values) v = T(n(rng));
}

template <typename T>
void randomize_table(Model<T>& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  auto& t = m.table();
  for (auto& v : t.storage()) v = T(n(rng));
  if (t.collision_weighted())
    for (std::size_t r = 0; r < t.capacity(); ++r) t.set_weight(r, T(1.0 + 0.3 * n(rng)));
}

double mean_loss(const Model<double>& m, std::span<const FeatureRecord> batch) {
  double s = 0;
  for (const auto& r : batch) s += sigmoid_bce(m.logit(r), r.label).loss;
  return s / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::kDcn2, Variant::kDcnV2, Variant::kDcn2Simk})
    CHECK(parse_variant(variant_name(v)) == v);
  CHECK(parse_variant("dcn2-simk") == Variant::kDcn2Simk);
  CHECK_THROWS_AS(parse_variant("dcn3"), ConfigError);
}

TEST_CASE("config validation: structural and sweep ranges") {
  ModelConfig c;
  CHECK(config_violations(c, 39, true).empty());
  c.embedding_dim = 4;
  CHECK(config_violations(c, 39, false).empty());
  CHECK(config_violations(c, 39, true).size() == 1);
  c.learning_rate = 0.0;
  CHECK(config_violations(c, 39, false).empty());
  CHECK(config_violations(c, 39, true).size() == 2);
  c = ModelConfig{};
  c.phi = 0.5;
  CHECK(config_violations(c, 39, true).size() == 1);
  c.variant = Variant::kDcnV2;
  CHECK(config_violations(c, 39, true).empty());  // phi range is an onlydense constraint
  c.projection_dim = 1000;
  CHECK_THROWS_AS(validate_config(c, 39, false), ConfigError);
  c = ModelConfig{};
  c.deep_layers = {8, 0};
  c.beta1 = 1.0;
  c.hash_bits = 0;
  CHECK(config_violations(c, 2, false).size() == 3);
  CHECK(config_violations(ModelConfig{}, 0, false).size() == 1);
}

TEST_CASE("closed-form parameter count equals the allocated count") {
  for (auto v : {Variant::kDcn2, Variant::kDcnV2, Variant::kDcn2Simk}) {
    for (int layers : {0, 1, 3}) {
      for (const std::vector<std::size_t>& deep : {std::vector<std::size_t>{}, {7}, {6, 2}}) {
        auto c = small_config(v);
        c.cross_layers = layers;
        c.deep_layers = deep;
        const Model<float> m(c, kFields);
        CHECK(m.parameter_count() == parameter_count(c, kFields));
      }
    }
  }
  // by hand: dcn2, bits 6, d 3, 4 fields, 2 onlydense, deep {5, 3}
  const auto c = small_config(Variant::kDcn2);
  const std::size_t table = 64 * 4, sim = 17, od = 2 * (144 + 12), mlp = (12 * 5 + 5) + (5 * 3 + 3),
                    head = 12 + 3, bf = 1;
  CHECK(parameter_count(c, kFields) == table + sim + od + mlp + head + bf);
}

TEST_CASE("complexity examples") {
  const auto a = complexity_estimate(39, 16, 2, 2, 64);
  CHECK(a.width == 624);
  CHECK(a.onlydense_ops == 1248.0);
  CHECK(a.lowrank_ops == 19.5);
  CHECK_FALSE(a.dominates);
  const auto b = complexity_estimate(39, 16, 2, 2, 1);
  CHECK(b.lowrank_ops == 1248.0);
  CHECK(b.dominates);
  const auto c = complexity_estimate(10, 8, 1, 3, 16);
  CHECK(c.onlydense_ops == 80.0);
  CHECK(c.lowrank_ops == 15.0);
  CHECK(c.onlydense_params == 80 * 80 + 80);
  CHECK(c.lowrank_params == 3 * (2 * 80 * 16 + 16 + 80));
  CHECK_THROWS_AS(complexity_estimate(10, 8, 1, 1, 0), ConfigError);
}

TEST_CASE("dcn2 forward matches an independent reference built on a plain table") {
  auto c = small_config(Variant::kDcn2);
  Model<double> m(c, kFields);
  randomize_dense(m, 3, 0.5);
  zero(m.sim().weights.span());
  m.sim().bias[0] = 0.0;
  // A fresh weighted table looks up exactly like a plain table built the same way.
  const auto plain = EmbeddingTable<double>::create(
      c.hash_bits, 3, false, {c.init_mu, c.init_sigma, c.init_omega, c.seed});
  const std::size_t d = 3, width = kFields * d;
  for (const auto& rec : make_records(20, 5, c.hash_bits)) {
    std::vector<double> x0(width, 0.0);
    for (std::size_t f = 0; f < kFields; ++f) {
      const auto& p = rec.fields[f];
      if (!p.indices.empty()) {
        for (std::size_t i = 0; i < p.valid; ++i)
          for (std::size_t k = 0; k < d; ++k) x0[f * d + k] += plain.row(p.indices[i])[k];
      } else {
        for (std::size_t k = 0; k < d; ++k) x0[f * d + k] += p.value * plain.row(p.index)[k];
      }
    }
    DenseVector<double> cur(x0);
    for (auto& layer : m.onlydense_layers()) cur = onlydense_forward(layer, cur);
    const auto deep = mlp_forward(m.deep(), DenseVector<double>(x0));
    double z = m.final_bias()[0];
    for (std::size_t i = 0; i < width; ++i) z += m.head()[i] * cur[i];
    for (std::size_t i = 0; i < deep.size(); ++i) z += m.head()[width + i] * deep[i];
    CHECK(m.logit(rec) == doctest::Approx(z).epsilon(1e-12));
  }
}

TEST_CASE("simlayer term adds to the logit and vanishes at zero weights") {
  auto c = small_config(Variant::kDcn2);
  Model<double> m(c, kFields);
  const auto recs = make_records(10, 6, c.hash_bits);
  std::vector<double> before;
  for (const auto& r : recs) before.push_back(m.logit(r));
  m.sim().weights[0] = 3.0;
  bool changed = false;
  for (std::size_t i = 0; i < recs.size(); ++i) changed |= m.logit(recs[i]) != before[i];
  CHECK(changed);
  m.sim().weights[0] = 0.0;
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(m.logit(recs[i]) == before[i]);
}

TEST_CASE("full model gradients match finite differences in fp64") {
  for (auto v : {Variant::kDcn2, Variant::kDcnV2, Variant::kDcn2Simk}) {
    for (auto act : {Activation::kIdentity, Activation::kTanh}) {
      CAPTURE(variant_name(v));
      CAPTURE(activation_name(act));
      auto c = small_config(v);
      c.sim_activation = act;
      Model<double> m(c, kFields);
      randomize_dense(m, 7, 0.4);
      randomize_table(m, 8);
      const auto batch = make_records(6, 9, c.hash_bits);
      const double loss = m.compute_gradients(batch);
      CHECK(loss == doctest::Approx(mean_loss(m, batch)).epsilon(1e-12));

      std::vector<GradientGroup> groups;
      auto params = m.parameter_blocks();
      auto grads = m.gradient_blocks();
      REQUIRE(params.size() == grads.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i].name == grads[i].name);
        groups.push_back({params[i].name, params[i].values, grads[i].values});
      }
      auto& table = m.table();
      const auto& tg = m.table_gradients();
      CHECK_FALSE(tg.rows().empty());
      for (auto row : tg.rows()) {
        groups.push_back({"table." + std::to_string(row),
                          table.storage().subspan(row * table.stride(), table.stride()),
                          tg.find(row)});
      }
      const auto rep = finite_difference_check([&] { return mean_loss(m, batch); }, groups, 1e-4);
      for (const auto& g : rep.groups) CHECK_MESSAGE(g.passed, g.name << " rel " << g.max_rel_error);
    }
  }
}

TEST_CASE("untouched table rows get no gradient and do not move") {
  auto c = small_config(Variant::kDcn2);
  Model<double> m(c, kFields);
  const auto batch = make_records(3, 10, c.hash_bits);
  const auto before = std::vector<double>(m.table().storage().begin(), m.table().storage().end());
  m.train_step(batch);
  std::vector<bool> touched(m.table().capacity(), false);
  for (auto r : m.table_gradients().rows()) touched[r] = true;
  const auto after = m.table().storage();
  for (std::size_t r = 0; r < touched.size(); ++r) {
    if (touched[r]) continue;
    for (std::size_t k = 0; k < m.table().stride(); ++k)
      CHECK(after[r * m.table().stride() + k] == before[r * m.table().stride() + k]);
  }
  CHECK(m.steps() == 1);
}

TEST_CASE("training is deterministic and lowers the training loss") {
  auto c = small_config(Variant::kDcn2);
  Model<float> a(c, kFields), b(c, kFields);
  const auto batch = make_records(64, 12, c.hash_bits);
  std::vector<double> pa, pb;
  double first = 0, last = 0;
  for (int s = 0; s < 60; ++s) {
    const double la = a.train_step(batch, &pa);
    b.train_step(batch, &pb);
    CHECK(pa == pb);
    if (s == 0) first = la;
    last = la;
  }
  CHECK(last < first);
  CHECK(std::equal(a.table().storage().begin(), a.table().storage().end(),
                   b.table().storage().begin()));
  // pre-update predictions are the model's predictions before the step
  std::vector<double> pre;
  std::vector<double> direct;
  for (const auto& r : batch) direct.push_back(a.predict(r));
  a.train_step(batch, &pre);
  for (std::size_t i = 0; i < pre.size(); ++i) CHECK(pre[i] == doctest::Approx(direct[i]).epsilon(1e-6));
}

TEST_CASE("non-finite loss raises NonFiniteError with the batch number") {
  auto c = small_config(Variant::kDcn2);
  Model<float> m(c, kFields);
  const auto batch = make_records(4, 13, c.hash_bits);
  m.train_step(batch);
  m.head()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    m.train_step(batch);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("batch 1") != std::string::npos);
  }
  CHECK_THROWS_AS(m.train_step(std::span<const FeatureRecord>{}), ConfigError);
}

TEST_CASE("records with the wrong field count are rejected") {
  Model<float> m(small_config(Variant::kDcnV2), kFields);
  FeatureRecord r;
  r.fields.resize(3);
  CHECK_THROWS_AS(m.predict(r), ShapeError);
}

TEST_CASE("checkpoint round trip reproduces predictions exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "dcn2_test_model_ckpt";
  std::filesystem::create_directories(dir);
  for (auto v : {Variant::kDcn2, Variant::kDcnV2, Variant::kDcn2Simk}) {
    auto c = small_config(v);
    c.sim_activation = Activation::kTanh;
    Model<float> m(c, kFields);
    const auto batch = make_records(32, 14, c.hash_bits);
    for (int s = 0; s < 5; ++s) m.train_step(batch);
    const auto path = (dir / (std::string(variant_name(v)) + ".ckpt")).string();
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path);
    CHECK(back.config().variant == v);
    CHECK(back.config().sim_activation == Activation::kTanh);
    CHECK(back.parameter_count() == m.parameter_count());
    for (const auto& r : batch) CHECK(back.predict(r) == m.predict(r));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config text round trip") {
  ModelConfig c = small_config(Variant::kDcnV2);
  c.learning_rate = 0.0031;
  c.deep_layers = {};
  c.sim_activation = Activation::kRelu;
  const auto text = serialize_model_config(c);
  ModelConfig back;
  for (const auto& [k, v] : parse_config_text(text)) apply_model_setting(back, k, v);
  CHECK(serialize_model_config(back) == text);
  CHECK(back.learning_rate == 0.0031);
  CHECK(back.deep_layers.empty());
  CHECK_THROWS_AS(parse_config_text("variant = dcn2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("dcn2-config 2\n"), ConfigError);
  ModelConfig x;
  CHECK_THROWS_AS(apply_model_setting(x, "nonsense", "1"), ConfigError);
  CHECK_THROWS_AS(apply_model_setting(x, "lr", "fast"), ConfigError);
  apply_model_setting(x, "deep", "16, 8");
  CHECK(x.deep_layers == std::vector<std::size_t>{16, 8});
}
