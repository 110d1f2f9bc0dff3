#include "spaformer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "spaformer/config_file.hpp"
#include "spaformer/errors.hpp"

namespace spaformer {
namespace {

void append_le(std::string& blob, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

template <typename Fn>
void for_each_param(const Model<float>& m, Fn&& fn) {
  for (const auto& p : m.generator_set) fn(p);
  for (const auto& p : m.discriminator_set) fn(p);
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model) {
  std::ostringstream manifest;
  manifest << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [key, value] : model_fields(model.config)) manifest << "config " << key << ' ' << value << '\n';
  std::string blob;
  for_each_param(model, [&](const Parameter<float>& p) {
    const Shape s = p.shape();
    manifest << "param " << p.name() << ' ' << s.n << ' ' << s.c << ' ' << s.h << ' ' << s.w << ' ' << blob.size()
             << '\n';
    for (std::size_t i = 0; i < p.value().size(); ++i) append_le(blob, p.value()[i]);
  });
  manifest << "end\n";

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    const std::string text = manifest.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path, "cannot move checkpoint into place: " + ec.message());
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path, "empty checkpoint");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    if (!(hs >> magic >> version) || magic != kCheckpointMagic) throw IoError(path, "not a checkpoint file");
    if (version != kCheckpointVersion) throw IoError(path, "unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig config;
  std::vector<ManifestEntry> entries;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "end") {
      ended = true;
      break;
    }
    if (kind == "config") {
      std::string key, value;
      ls >> key >> value;
      try {
        if (!set_model_field(config, key, value)) throw ContractViolation("unknown config key '" + key + "'");
      } catch (const ContractViolation& e) {
        throw IoError(path, e.what());
      }
    } else if (kind == "param") {
      ManifestEntry e;
      if (!(ls >> e.name >> e.shape.n >> e.shape.c >> e.shape.h >> e.shape.w >> e.offset)) {
        throw IoError(path, "malformed manifest line: " + line);
      }
      entries.push_back(std::move(e));
    } else {
      throw IoError(path, "unexpected manifest line: " + line);
    }
  }
  if (!ended) throw IoError(path, "manifest has no end line");
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Model<float> model;
  try {
    model = init_params<float>(config);
  } catch (const ContractViolation& e) {
    throw IoError(path, std::string("invalid model config: ") + e.what());
  }
  const std::size_t expected = model.generator_set.size() + model.discriminator_set.size();
  if (entries.size() != expected) {
    throw IoError(path, "manifest lists " + std::to_string(entries.size()) + " parameters, config builds " +
                            std::to_string(expected));
  }
  std::size_t used = 0;
  for (const auto& e : entries) {
    const bool gen = e.name.rfind("gen.", 0) == 0;
    auto& set = gen ? model.generator_set : model.discriminator_set;
    if (!set.contains(e.name)) throw IoError(path, "unknown parameter '" + e.name + "'");
    Parameter<float>& p = set.at(e.name);
    if (!(p.shape() == e.shape)) {
      throw IoError(path, "parameter '" + e.name + "' is " + e.shape.str() + " in the file, " + p.shape().str() +
                              " in the model");
    }
    const std::size_t bytes = 4 * e.shape.numel();
    if (e.offset + bytes > blob.size()) throw IoError(path, "blob truncated at parameter '" + e.name + "'");
    for (std::size_t i = 0; i < p.value().size(); ++i) p.value()[i] = read_le(blob.data() + e.offset + 4 * i);
    used += bytes;
  }
  if (used != blob.size()) throw IoError(path, "blob holds " + std::to_string(blob.size() - used) + " unclaimed bytes");
  return model;
}

}  // namespace spaformer
