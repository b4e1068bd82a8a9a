#pragma once

// Versioned key-value config files:
//
//   dcn2-config 1
//   # comment
//   variant = dcn2
//   lr = 0.001
//
// Keys use the command-line flag names without the leading dashes.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcn2/model.hpp"

namespace dcn2 {

inline constexpr std::string_view kConfigHeader = "dcn2-config";
inline constexpr int kConfigVersion = 1;

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

ConfigEntries parse_config_text(std::string_view text);
ConfigEntries read_config_file(const std::string& path);

// True if `key` names a ModelConfig field.
bool is_model_key(std::string_view key);
// Throws ConfigError on an unknown key or unparsable value.
void apply_model_setting(ModelConfig& config, std::string_view key, std::string_view value);

// Canonical text, one `key = value` line per field in a fixed order, with
// the version header. parse_config_text + apply_model_setting round-trips it.
std::string serialize_model_config(const ModelConfig& config);

std::string_view activation_name(Activation a);
Activation parse_activation(std::string_view name);

// Shortest decimal text that reads back to the same double.
std::string format_real(double v);

std::vector<std::string> split_list(std::string_view text, char sep = ',');

}  // namespace dcn2
