#pragma once

// Row parsing, hashing and multi-value padding for the supported dataset
// profiles.

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dcn2 {

enum class FieldKind { kCategorical, kContinuous, kMultiValue };

struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::kCategorical;
  int field_index = 0;
};

inline constexpr std::uint32_t kHashSeed = 42;
inline constexpr char kHashSeparator = '\x1f';
inline constexpr std::string_view kMissingToken = "<missing>";
// Continuous fields look up one embedding per field under this token.
inline constexpr std::string_view kContinuousToken = "<value>";
// Pad slot for multi-value lists; masked by the validity count.
inline constexpr std::uint32_t kPadIndex = 0;
inline constexpr int kMinHashBits = 1;
inline constexpr int kMaxHashBits = 30;

// MurmurHash3 x86_32.
std::uint32_t murmur3_32(std::string_view key, std::uint32_t seed);

// murmur3_32(name + separator + value, kHashSeed) mod 2^hash_bits.
std::uint32_t hash_feature(const FieldSchema& field, std::string_view value,
                           int hash_bits);

// Sign-preserving ln(1 + |x|).
double log_transform(double raw);

struct FieldPayload {
  // Categorical and continuous fields.
  std::uint32_t index = 0;
  float value = 1.0f;
  // Multi-value fields: padded to the field's length, first `valid` are real.
  std::vector<std::uint32_t> indices;
  std::uint32_t valid = 0;
};

struct FeatureRecord {
  int label = 0;
  std::vector<FieldPayload> fields;  // one per schema field, schema order
};

enum class DataFormat { kCriteo, kAvazu, kGeneric };

std::string_view format_name(DataFormat format);
DataFormat parse_format(std::string_view name);

// Column layout of one input file format.
struct DatasetProfile {
  static constexpr int kLabelColumn = -1;
  static constexpr int kSkipColumn = -2;

  DataFormat format = DataFormat::kGeneric;
  char delimiter = '\t';
  char multivalue_separator = ',';
  bool has_header = false;
  std::vector<FieldSchema> schema;
  // Per input column: schema field index, kLabelColumn or kSkipColumn.
  std::vector<int> column_roles;

  std::size_t column_count() const { return column_roles.size(); }
  std::size_t field_count() const { return schema.size(); }

  // Tab-separated: label, I1..I13 continuous, C1..C26 categorical. No header.
  static DatasetProfile criteo();
  // Comma-separated with header; `id` skipped, `click` is the label, every
  // other column categorical. Without a header line the standard 24 columns
  // are assumed.
  static DatasetProfile avazu(std::optional<std::string_view> header = std::nullopt);
  // Tab-separated with a header: `label`, then `num:<name>`, `cat:<name>` or
  // `multi:<name>` per column. Multi-value items are comma-separated.
  static DatasetProfile generic(std::string_view header);
};

// Per-field padded list length; entries for non-multi-value fields are ignored.
using PaddingLengths = std::vector<std::size_t>;

// Parses one line. Throws ParseError on malformed input.
FeatureRecord parse_row(std::string_view line, const DatasetProfile& profile,
                        int hash_bits, std::span<const std::size_t> padding);

// Streaming histogram of multi-value list cardinalities per field.
class PaddingEstimator {
 public:
  explicit PaddingEstimator(double quantile = 0.95);

  void observe(const std::string& field, std::size_t cardinality);
  // Counts the items of every multi-value field on one line. Lines that do not
  // split into the profile's column count are ignored.
  void observe_row(std::string_view line, const DatasetProfile& profile);

  // Smallest length covering `quantile` of the observations, at least 1.
  std::size_t estimate(const std::string& field) const;
  double quantile() const { return quantile_; }
  std::uint64_t observations(const std::string& field) const;

 private:
  double quantile_;
  std::map<std::string, std::map<std::size_t, std::uint64_t>> histograms_;
};

std::size_t padding_estimate(const PaddingEstimator& estimator,
                             const std::string& field);

// Reads lines from plain or gzip-compressed text.
class LineReader {
 public:
  explicit LineReader(const std::string& path);
  ~LineReader();
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  // False at end of input. Strips the trailing newline / carriage return.
  bool next(std::string& line);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Loads the profile for `format`, reading the header line when the format
// has one.
DatasetProfile load_profile(const std::string& path, DataFormat format);

struct StreamStats {
  std::uint64_t rows_read = 0;
  std::uint64_t row_errors = 0;
  std::string first_error;
};

// Parsed records in file order. Malformed rows are counted and skipped.
class RecordStream {
 public:
  RecordStream(const std::string& path, DatasetProfile profile, int hash_bits,
               PaddingLengths padding, std::uint64_t max_rows = 0);

  bool next(FeatureRecord& record);
  const StreamStats& stats() const { return stats_; }
  const DatasetProfile& profile() const { return profile_; }

 private:
  LineReader reader_;
  DatasetProfile profile_;
  int hash_bits_;
  PaddingLengths padding_;
  std::uint64_t max_rows_;
  StreamStats stats_;
  std::string line_;
};

// Runs a padding pre-pass over the first `sample_rows` rows (0 = all) and
// returns per-field lengths. Non-multi-value fields get length 1.
PaddingLengths estimate_padding(const std::string& path, const DatasetProfile& profile,
                                double quantile, std::uint64_t sample_rows);

}  // namespace dcn2
