#include "dcn2/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dcn2/errors.hpp"

namespace dcn2 {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view text) {
  const std::string s(trim(text));
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(key) + "': expected a number, got '" + s + "'");
  }
}

long long parse_integer(std::string_view key, std::string_view text) {
  const auto s = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw ConfigError("config key '" + std::string(key) + "': expected an integer, got '" +
                      std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view key, std::string_view text) {
  const long long v = parse_integer(key, text);
  if (v < -(1LL << 31) || v > (1LL << 31) - 1)
    throw ConfigError("config key '" + std::string(key) + "': value out of range");
  return static_cast<int>(v);
}

}  // namespace

std::vector<std::string> split_list(std::string_view text, char sep) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.emplace_back(trim(text.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kIdentity:
      break;
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "linear") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

ConfigEntries parse_config_text(std::string_view text) {
  ConfigEntries out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    if (!header) {
      std::istringstream h{std::string(s)};
      std::string tag;
      int version = 0;
      if (!(h >> tag >> version) || tag != kConfigHeader) {
        throw ConfigError("config: first line must be '" + std::string(kConfigHeader) + " " +
                          std::to_string(kConfigVersion) + "'");
      }
      if (version != kConfigVersion) {
        throw ConfigError("config: unsupported version " + std::to_string(version));
      }
      header = true;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const auto key = trim(s.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::string(key), std::string(trim(s.substr(eq + 1))));
  }
  if (!header) throw ConfigError("config: missing '" + std::string(kConfigHeader) + "' header");
  return out;
}

ConfigEntries read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

constexpr std::string_view kModelKeys[] = {
    "variant", "hash-bits", "dim",   "layers",     "projection", "phi",
    "deep",    "lr",        "beta1", "beta2",      "eps",        "batch",
    "init-mu", "init-sigma", "omega", "sim-activation", "seed"};

}  // namespace

bool is_model_key(std::string_view key) {
  for (auto k : kModelKeys)
    if (k == key) return true;
  return false;
}

void apply_model_setting(ModelConfig& c, std::string_view key, std::string_view value) {
  if (key == "variant") {
    c.variant = parse_variant(trim(value));
  } else if (key == "hash-bits") {
    c.hash_bits = parse_int(key, value);
  } else if (key == "dim") {
    c.embedding_dim = parse_int(key, value);
  } else if (key == "layers") {
    c.cross_layers = parse_int(key, value);
  } else if (key == "projection") {
    c.projection_dim = parse_int(key, value);
  } else if (key == "phi") {
    c.phi = parse_double(key, value);
  } else if (key == "deep") {
    c.deep_layers.clear();
    const auto t = trim(value);
    if (t != "none" && !t.empty()) {
      for (const auto& item : split_list(t)) {
        const long long n = parse_integer(key, item);
        if (n < 1) throw ConfigError("config key 'deep': layer sizes must be >= 1");
        c.deep_layers.push_back(static_cast<std::size_t>(n));
      }
    }
  } else if (key == "lr") {
    c.learning_rate = parse_double(key, value);
  } else if (key == "beta1") {
    c.beta1 = parse_double(key, value);
  } else if (key == "beta2") {
    c.beta2 = parse_double(key, value);
  } else if (key == "eps") {
    c.epsilon = parse_double(key, value);
  } else if (key == "batch") {
    c.batch_size = parse_int(key, value);
  } else if (key == "init-mu") {
    c.init_mu = parse_double(key, value);
  } else if (key == "init-sigma") {
    c.init_sigma = parse_double(key, value);
  } else if (key == "omega") {
    c.init_omega = parse_double(key, value);
  } else if (key == "sim-activation") {
    c.sim_activation = parse_activation(trim(value));
  } else if (key == "seed") {
    const long long s = parse_integer(key, value);
    if (s < 0) throw ConfigError("config key 'seed' must be >= 0");
    c.seed = static_cast<std::uint64_t>(s);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

std::string serialize_model_config(const ModelConfig& c) {
  std::ostringstream out;
  out << kConfigHeader << ' ' << kConfigVersion << '\n';
  out << "variant = " << variant_name(c.variant) << '\n';
  out << "hash-bits = " << c.hash_bits << '\n';
  out << "dim = " << c.embedding_dim << '\n';
  out << "layers = " << c.cross_layers << '\n';
  out << "projection = " << c.projection_dim << '\n';
  out << "phi = " << format_real(c.phi) << '\n';
  out << "deep = ";
  if (c.deep_layers.empty()) out << "none";
  for (std::size_t i = 0; i < c.deep_layers.size(); ++i)
    out << (i ? "," : "") << c.deep_layers[i];
  out << '\n';
  out << "lr = " << format_real(c.learning_rate) << '\n';
  out << "beta1 = " << format_real(c.beta1) << '\n';
  out << "beta2 = " << format_real(c.beta2) << '\n';
  out << "eps = " << format_real(c.epsilon) << '\n';
  out << "batch = " << c.batch_size << '\n';
  out << "init-mu = " << format_real(c.init_mu) << '\n';
  out << "init-sigma = " << format_real(c.init_sigma) << '\n';
  out << "omega = " << format_real(c.init_omega) << '\n';
  out << "sim-activation = " << activation_name(c.sim_activation) << '\n';
  out << "seed = " << c.seed << '\n';
  return out.str();
}

}  // namespace dcn2
