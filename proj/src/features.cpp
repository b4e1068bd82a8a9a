#include "dcn2/features.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <cstring>

#include "dcn2/errors.hpp"

namespace dcn2 {

namespace {

inline std::uint32_t rotl32(std::uint32_t x, int r) {
  return (x << r) | (x >> (32 - r));
}

inline std::uint32_t fmix32(std::uint32_t h) {
  h ^= h >> 16;
  h *= 0x85ebca6bU;
  h ^= h >> 13;
  h *= 0xc2b2ae35U;
  h ^= h >> 16;
  return h;
}

// Splits on `delim` into `out`, reusing its storage.
void split(std::string_view line, char delim, std::vector<std::string_view>& out) {
  out.clear();
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view text, const std::string& field) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError("field '" + field + "': not a number");
  }
  if (!std::isfinite(value)) {
    throw ParseError("field '" + field + "': non-finite value");
  }
  return value;
}

int parse_label(std::string_view text) {
  if (text == "0") return 0;
  if (text == "1") return 1;
  throw ParseError("label must be 0 or 1");
}

}  // namespace

std::uint32_t murmur3_32(std::string_view key, std::uint32_t seed) {
  constexpr std::uint32_t c1 = 0xcc9e2d51U;
  constexpr std::uint32_t c2 = 0x1b873593U;
  const auto* data = reinterpret_cast<const unsigned char*>(key.data());
  const std::size_t len = key.size();
  const std::size_t nblocks = len / 4;
  std::uint32_t h = seed;

  for (std::size_t i = 0; i < nblocks; ++i) {
    // Little-endian block read, independent of host byte order.
    std::uint32_t k = static_cast<std::uint32_t>(data[4 * i]) |
                      static_cast<std::uint32_t>(data[4 * i + 1]) << 8 |
                      static_cast<std::uint32_t>(data[4 * i + 2]) << 16 |
                      static_cast<std::uint32_t>(data[4 * i + 3]) << 24;
    k *= c1;
    k = rotl32(k, 15);
    k *= c2;
    h ^= k;
    h = rotl32(h, 13);
    h = h * 5 + 0xe6546b64U;
  }

  const unsigned char* tail = data + nblocks * 4;
  std::uint32_t k = 0;
  switch (len & 3) {
    case 3:
      k ^= static_cast<std::uint32_t>(tail[2]) << 16;
      [[fallthrough]];
    case 2:
      k ^= static_cast<std::uint32_t>(tail[1]) << 8;
      [[fallthrough]];
    case 1:
      k ^= tail[0];
      k *= c1;
      k = rotl32(k, 15);
      k *= c2;
      h ^= k;
  }

  h ^= static_cast<std::uint32_t>(len);
  return fmix32(h);
}

std::uint32_t hash_feature(const FieldSchema& field, std::string_view value,
                           int hash_bits) {
  if (hash_bits < kMinHashBits || hash_bits > kMaxHashBits) {
    throw ConfigError("hash_bits must be in [1, 30], got " + std::to_string(hash_bits));
  }
  std::string key;
  key.reserve(field.name.size() + 1 + value.size());
  key.append(field.name);
  key.push_back(kHashSeparator);
  key.append(value);
  const std::uint32_t mask = (std::uint32_t{1} << hash_bits) - 1U;
  return murmur3_32(key, kHashSeed) & mask;
}

double log_transform(double raw) {
  if (!std::isfinite(raw)) throw ParseError("log_transform: non-finite input");
  return raw >= 0.0 ? std::log1p(raw) : -std::log1p(-raw);
}

std::string_view format_name(DataFormat format) {
  switch (format) {
    case DataFormat::kCriteo:
      return "criteo";
    case DataFormat::kAvazu:
      return "avazu";
    case DataFormat::kGeneric:
      break;
  }
  return "generic";
}

DataFormat parse_format(std::string_view name) {
  if (name == "criteo") return DataFormat::kCriteo;
  if (name == "avazu") return DataFormat::kAvazu;
  if (name == "generic") return DataFormat::kGeneric;
  throw ConfigError("unknown format '" + std::string(name) +
                    "' (expected criteo, avazu or generic)");
}

DatasetProfile DatasetProfile::criteo() {
  DatasetProfile p;
  p.format = DataFormat::kCriteo;
  p.delimiter = '\t';
  p.has_header = false;
  p.column_roles.push_back(kLabelColumn);
  for (int i = 1; i <= 13; ++i) {
    p.column_roles.push_back(static_cast<int>(p.schema.size()));
    p.schema.push_back({"I" + std::to_string(i), FieldKind::kContinuous,
                        static_cast<int>(p.schema.size())});
  }
  for (int i = 1; i <= 26; ++i) {
    p.column_roles.push_back(static_cast<int>(p.schema.size()));
    p.schema.push_back({"C" + std::to_string(i), FieldKind::kCategorical,
                        static_cast<int>(p.schema.size())});
  }
  return p;
}

DatasetProfile DatasetProfile::avazu(std::optional<std::string_view> header) {
  static constexpr std::string_view kDefaultHeader =
      "id,click,hour,C1,banner_pos,site_id,site_domain,site_category,app_id,"
      "app_domain,app_category,device_id,device_ip,device_model,device_type,"
      "device_conn_type,C14,C15,C16,C17,C18,C19,C20,C21";
  DatasetProfile p;
  p.format = DataFormat::kAvazu;
  p.delimiter = ',';
  p.has_header = header.has_value();
  std::vector<std::string_view> cols;
  split(trim_cr(header.value_or(kDefaultHeader)), ',', cols);
  bool saw_label = false;
  for (auto col : cols) {
    if (col == "click") {
      p.column_roles.push_back(kLabelColumn);
      saw_label = true;
    } else if (col == "id") {
      p.column_roles.push_back(kSkipColumn);
    } else {
      p.column_roles.push_back(static_cast<int>(p.schema.size()));
      p.schema.push_back({std::string(col), FieldKind::kCategorical,
                          static_cast<int>(p.schema.size())});
    }
  }
  if (!saw_label) throw SchemaError("avazu header has no 'click' column");
  return p;
}

DatasetProfile DatasetProfile::generic(std::string_view header) {
  DatasetProfile p;
  p.format = DataFormat::kGeneric;
  p.delimiter = '\t';
  p.has_header = true;
  std::vector<std::string_view> cols;
  split(trim_cr(header), '\t', cols);
  bool saw_label = false;
  for (auto col : cols) {
    if (col == "label") {
      if (saw_label) throw SchemaError("generic header: duplicate label column");
      p.column_roles.push_back(kLabelColumn);
      saw_label = true;
      continue;
    }
    const auto colon = col.find(':');
    if (colon == std::string_view::npos || colon + 1 == col.size()) {
      throw SchemaError("generic header: column '" + std::string(col) +
                        "' is not of the form kind:name");
    }
    const auto kind = col.substr(0, colon);
    FieldSchema field{std::string(col.substr(colon + 1)), FieldKind::kCategorical,
                      static_cast<int>(p.schema.size())};
    if (kind == "num") {
      field.kind = FieldKind::kContinuous;
    } else if (kind == "cat") {
      field.kind = FieldKind::kCategorical;
    } else if (kind == "multi") {
      field.kind = FieldKind::kMultiValue;
    } else if (kind == "skip") {
      p.column_roles.push_back(kSkipColumn);
      continue;
    } else {
      throw SchemaError("generic header: unknown kind '" + std::string(kind) + "'");
    }
    for (const auto& existing : p.schema) {
      if (existing.name == field.name) {
        throw SchemaError("generic header: duplicate field '" + field.name + "'");
      }
    }
    p.column_roles.push_back(field.field_index);
    p.schema.push_back(std::move(field));
  }
  if (!saw_label) throw SchemaError("generic header has no 'label' column");
  if (p.schema.empty()) throw SchemaError("generic header declares no fields");
  return p;
}

FeatureRecord parse_row(std::string_view line, const DatasetProfile& profile,
                        int hash_bits, std::span<const std::size_t> padding) {
  if (hash_bits < kMinHashBits || hash_bits > kMaxHashBits) {
    throw ConfigError("hash_bits must be in [1, 30], got " + std::to_string(hash_bits));
  }
  thread_local std::vector<std::string_view> cols;
  thread_local std::vector<std::string_view> items;
  split(trim_cr(line), profile.delimiter, cols);
  if (cols.size() != profile.column_count()) {
    throw ParseError("expected " + std::to_string(profile.column_count()) +
                     " columns, got " + std::to_string(cols.size()));
  }

  FeatureRecord record;
  record.fields.resize(profile.field_count());
  bool saw_label = false;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int role = profile.column_roles[c];
    if (role == DatasetProfile::kSkipColumn) continue;
    if (role == DatasetProfile::kLabelColumn) {
      record.label = parse_label(cols[c]);
      saw_label = true;
      continue;
    }
    const FieldSchema& field = profile.schema[static_cast<std::size_t>(role)];
    FieldPayload& out = record.fields[static_cast<std::size_t>(role)];
    const std::string_view text = cols[c];
    switch (field.kind) {
      case FieldKind::kCategorical:
        out.index = hash_feature(field, text.empty() ? kMissingToken : text, hash_bits);
        break;
      case FieldKind::kContinuous:
        out.index = hash_feature(field, kContinuousToken, hash_bits);
        out.value = text.empty()
                        ? 0.0f
                        : static_cast<float>(log_transform(parse_real(text, field.name)));
        break;
      case FieldKind::kMultiValue: {
        const std::size_t slot = static_cast<std::size_t>(role);
        const std::size_t length = slot < padding.size() ? padding[slot] : 0;
        if (length == 0) {
          throw ConfigError("no padding length for multi-value field '" + field.name + "'");
        }
        out.indices.assign(length, kPadIndex);
        out.valid = 0;
        if (!text.empty()) {
          split(text, profile.multivalue_separator, items);
          for (auto item : items) {
            if (item.empty()) continue;
            if (out.valid == length) break;  // keep first
            out.indices[out.valid++] = hash_feature(field, item, hash_bits);
          }
        }
        break;
      }
    }
  }
  if (!saw_label) throw ParseError("row has no label column");
  return record;
}

PaddingEstimator::PaddingEstimator(double quantile) : quantile_(quantile) {
  if (!(quantile > 0.0 && quantile <= 1.0)) {
    throw ConfigError("padding quantile must be in (0, 1]");
  }
}

void PaddingEstimator::observe(const std::string& field, std::size_t cardinality) {
  ++histograms_[field][cardinality];
}

void PaddingEstimator::observe_row(std::string_view line, const DatasetProfile& profile) {
  std::vector<std::string_view> cols;
  std::vector<std::string_view> items;
  split(trim_cr(line), profile.delimiter, cols);
  if (cols.size() != profile.column_count()) return;
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const int role = profile.column_roles[c];
    if (role < 0) continue;
    const FieldSchema& field = profile.schema[static_cast<std::size_t>(role)];
    if (field.kind != FieldKind::kMultiValue) continue;
    std::size_t count = 0;
    if (!cols[c].empty()) {
      split(cols[c], profile.multivalue_separator, items);
      for (auto item : items) count += item.empty() ? 0 : 1;
    }
    observe(field.name, count);
  }
}

std::size_t PaddingEstimator::estimate(const std::string& field) const {
  const auto it = histograms_.find(field);
  if (it == histograms_.end() || it->second.empty()) {
    throw ConfigError("padding_estimate: no observations for field '" + field + "'");
  }
  std::uint64_t total = 0;
  for (const auto& [card, count] : it->second) total += count;
  const double target = quantile_ * static_cast<double>(total);
  std::uint64_t cumulative = 0;
  std::size_t length = it->second.rbegin()->first;
  for (const auto& [card, count] : it->second) {
    cumulative += count;
    if (static_cast<double>(cumulative) >= target - 1e-9) {
      length = card;
      break;
    }
  }
  return std::max<std::size_t>(length, 1);
}

std::uint64_t PaddingEstimator::observations(const std::string& field) const {
  const auto it = histograms_.find(field);
  if (it == histograms_.end()) return 0;
  std::uint64_t total = 0;
  for (const auto& [card, count] : it->second) total += count;
  return total;
}

std::size_t padding_estimate(const PaddingEstimator& estimator, const std::string& field) {
  return estimator.estimate(field);
}

struct LineReader::Impl {
  gzFile file = nullptr;
  std::vector<char> buffer = std::vector<char>(1 << 16);
};

LineReader::LineReader(const std::string& path) : impl_(std::make_unique<Impl>()) {
  impl_->file = gzopen(path.c_str(), "rb");
  if (impl_->file == nullptr) throw IoError("cannot open '" + path + "'");
  gzbuffer(impl_->file, 1 << 17);
}

LineReader::~LineReader() {
  if (impl_ && impl_->file != nullptr) gzclose(impl_->file);
}

bool LineReader::next(std::string& line) {
  line.clear();
  auto& buf = impl_->buffer;
  bool any = false;
  while (gzgets(impl_->file, buf.data(), static_cast<int>(buf.size())) != nullptr) {
    any = true;
    const std::size_t n = std::strlen(buf.data());
    line.append(buf.data(), n);
    if (n > 0 && buf[n - 1] == '\n') break;
  }
  if (!any) {
    int err = Z_OK;
    gzerror(impl_->file, &err);
    if (err != Z_OK && err != Z_STREAM_END) throw IoError("read error in input stream");
    return false;
  }
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  return true;
}

DatasetProfile load_profile(const std::string& path, DataFormat format) {
  if (format == DataFormat::kCriteo) return DatasetProfile::criteo();
  LineReader reader(path);
  std::string header;
  const bool has_line = reader.next(header);
  if (format == DataFormat::kAvazu) {
    if (has_line && header.rfind("id,", 0) == 0) return DatasetProfile::avazu(header);
    return DatasetProfile::avazu();
  }
  if (!has_line) throw SchemaError("generic dataset '" + path + "' has no header line");
  return DatasetProfile::generic(header);
}

RecordStream::RecordStream(const std::string& path, DatasetProfile profile,
                           int hash_bits, PaddingLengths padding, std::uint64_t max_rows)
    : reader_(path),
      profile_(std::move(profile)),
      hash_bits_(hash_bits),
      padding_(std::move(padding)),
      max_rows_(max_rows) {
  if (profile_.has_header) reader_.next(line_);
}

bool RecordStream::next(FeatureRecord& record) {
  while (max_rows_ == 0 || stats_.rows_read < max_rows_) {
    if (!reader_.next(line_)) return false;
    if (line_.empty()) continue;
    const bool first = stats_.rows_read == 0;
    ++stats_.rows_read;
    try {
      record = parse_row(line_, profile_, hash_bits_, padding_);
      return true;
    } catch (const ParseError& e) {
      if (first) {
        // A first row with the wrong shape means the file is not in this format.
        std::size_t columns = 1;
        for (char ch : line_) columns += ch == profile_.delimiter ? 1 : 0;
        if (columns != profile_.column_count()) {
          throw SchemaError("first row has " + std::to_string(columns) +
                            " columns, profile '" +
                            std::string(format_name(profile_.format)) + "' expects " +
                            std::to_string(profile_.column_count()));
        }
      }
      ++stats_.row_errors;
      if (stats_.first_error.empty()) {
        stats_.first_error = "row " + std::to_string(stats_.rows_read) + ": " + e.what();
      }
    }
  }
  return false;
}

PaddingLengths estimate_padding(const std::string& path, const DatasetProfile& profile,
                                double quantile, std::uint64_t sample_rows) {
  PaddingLengths lengths(profile.field_count(), 1);
  bool any_multi = false;
  for (const auto& f : profile.schema) any_multi |= f.kind == FieldKind::kMultiValue;
  if (!any_multi) return lengths;

  PaddingEstimator estimator(quantile);
  LineReader reader(path);
  std::string line;
  if (profile.has_header) reader.next(line);
  std::uint64_t rows = 0;
  while ((sample_rows == 0 || rows < sample_rows) && reader.next(line)) {
    if (line.empty()) continue;
    estimator.observe_row(line, profile);
    ++rows;
  }
  for (const auto& f : profile.schema) {
    if (f.kind != FieldKind::kMultiValue) continue;
    lengths[static_cast<std::size_t>(f.field_index)] =
        estimator.observations(f.name) == 0 ? 1 : estimator.estimate(f.name);
  }
  return lengths;
}

}  // namespace dcn2
