#include <cstring>
#include <fstream>

#include "dcn2/config.hpp"
#include "dcn2/errors.hpp"
#include "dcn2/model.hpp"

namespace dcn2 {

namespace {

constexpr char kLayersMagic[8] = {'D', 'C', 'N', '2', 'L', 'Y', 'R', '\0'};
constexpr std::uint32_t kLayersVersion = 1;

void write_string(std::ostream& out, const std::string& s) {
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, std::size_t limit) {
  const auto n = detail::read_pod<std::uint32_t>(in);
  if (n > limit) throw IoError("corrupt layer file: string too long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("unexpected end of layer file");
  return s;
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& path) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    write_table(out, model.table());
  }
  std::ofstream out(path + ".layers", std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path + ".layers");
  out.write(kLayersMagic, sizeof(kLayersMagic));
  detail::write_pod<std::uint32_t>(out, kLayersVersion);
  write_string(out, serialize_model_config(model.config()));
  detail::write_pod<std::uint64_t>(out, model.num_fields());
  const auto blocks = model.parameter_blocks();
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    write_string(out, b.name);
    detail::write_pod<std::uint64_t>(out, b.values.size());
    out.write(reinterpret_cast<const char*>(b.values.data()),
              static_cast<std::streamsize>(b.values.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path + ".layers");
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream lin(path + ".layers", std::ios::binary);
  if (!lin) throw IoError("cannot read checkpoint " + path + ".layers");
  char magic[8];
  lin.read(magic, sizeof(magic));
  if (!lin || std::memcmp(magic, kLayersMagic, sizeof(magic)) != 0)
    throw IoError(path + ".layers is not a layer file");
  const auto version = detail::read_pod<std::uint32_t>(lin);
  if (version != kLayersVersion)
    throw IoError("unsupported layer file version " + std::to_string(version));

  ModelConfig config;
  for (const auto& [k, v] : parse_config_text(read_string(lin, 1 << 20)))
    apply_model_setting(config, k, v);
  const auto fields = detail::read_pod<std::uint64_t>(lin);
  Model<float> model(config, fields);

  auto blocks = model.parameter_blocks();
  const auto count = detail::read_pod<std::uint32_t>(lin);
  if (count != blocks.size())
    throw IoError("checkpoint has " + std::to_string(count) + " blocks, model expects " +
                  std::to_string(blocks.size()));
  for (auto& b : blocks) {
    const auto name = read_string(lin, 4096);
    const auto n = detail::read_pod<std::uint64_t>(lin);
    if (name != b.name || n != b.values.size())
      throw IoError("checkpoint block '" + name + "' does not match '" + b.name + "'");
    lin.read(reinterpret_cast<char*>(b.values.data()),
             static_cast<std::streamsize>(n * sizeof(float)));
    if (!lin) throw IoError("truncated checkpoint block '" + name + "'");
  }

  std::ifstream tin(path, std::ios::binary);
  if (!tin) throw IoError("cannot read checkpoint " + path);
  model.set_table(read_table<float>(tin));
  return model;
}

}  // namespace dcn2
