#include "memeclf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <json.hpp>
#include <unistd.h>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"

namespace memeclf {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string config_to_json(const ViltConfig& c) {
  json j;
  j["format_version"] = kCheckpointFormat;
  j["profile"] = c.profile;
  j["hidden_dim"] = c.hidden_dim;
  j["num_layers"] = c.num_layers;
  j["num_heads"] = c.num_heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["patch_size"] = c.patch_size;
  j["image_height"] = c.image_height;
  j["image_width"] = c.image_width;
  j["max_text_len"] = c.max_text_len;
  j["vocab_size"] = c.vocab_size;
  j["dropout_head"] = c.dropout_head;
  j["dropout_encoder"] = c.dropout_encoder;
  j["eps"] = c.eps;
  j["num_modal_types"] = c.num_modal_types;
  j["pooling"] = to_string(c.pooling);
  j["ablation"] = to_string(c.ablation);
  return j.dump(2) + "\n";
}

ViltConfig config_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kCheckpointFormat) {
      throw ConfigError("unsupported checkpoint format " + j.at("format_version").dump());
    }
    ViltConfig c;
    c.profile = j.at("profile").get<std::string>();
    c.hidden_dim = j.at("hidden_dim").get<Index>();
    c.num_layers = j.at("num_layers").get<Index>();
    c.num_heads = j.at("num_heads").get<Index>();
    c.mlp_ratio = j.at("mlp_ratio").get<Index>();
    c.patch_size = j.at("patch_size").get<Index>();
    c.image_height = j.at("image_height").get<Index>();
    c.image_width = j.at("image_width").get<Index>();
    c.max_text_len = j.at("max_text_len").get<Index>();
    c.vocab_size = j.at("vocab_size").get<Index>();
    c.dropout_head = j.at("dropout_head").get<double>();
    c.dropout_encoder = j.at("dropout_encoder").get<double>();
    c.eps = j.at("eps").get<double>();
    c.num_modal_types = j.at("num_modal_types").get<Index>();
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    c.ablation = parse_ablation(j.at("ablation").get<std::string>());
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

void save_checkpoint(const std::string& dir, const ModelParams<float>& params, const ViltConfig& config,
                     const Vocab* vocab) {
  audit_shapes(params, config);
  const fs::path target(dir);
  const fs::path staging = target.string() + ".tmp." + std::to_string(::getpid());
  std::error_code ec;
  fs::remove_all(staging, ec);
  ensure_directory(staging.string());

  json index;
  index["format_version"] = kCheckpointFormat;
  json entries = json::object();
  params.for_each([&](const std::string& name, const Tensor<float>& t) {
    const std::string file = name + ".bin";
    std::string bytes(static_cast<std::size_t>(t.size()) * sizeof(float), '\0');
    std::memcpy(bytes.data(), t.data(), bytes.size());
    write_file_atomic((staging / file).string(), bytes);
    entries[name] = {{"file", file}, {"shape", t.shape()}};
  });
  index["parameters"] = entries;
  write_file_atomic((staging / "index.json").string(), index.dump(2) + "\n");
  write_file_atomic((staging / "config.json").string(), config_to_json(config));
  if (vocab) save_vocab(*vocab, (staging / "vocab.json").string());

  fs::remove_all(target, ec);
  fs::rename(staging, target, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path root(dir);
  Checkpoint out;
  out.config = config_from_json(read_file((root / "config.json").string()));
  NamedTensors<float> named;
  try {
    const json index = json::parse(read_file((root / "index.json").string()));
    for (const auto& [name, entry] : index.at("parameters").items()) {
      const Shape shape = entry.at("shape").get<Shape>();
      const std::string bytes = read_file((root / entry.at("file").get<std::string>()).string());
      Tensor<float> t(shape);
      if (bytes.size() != static_cast<std::size_t>(t.size()) * sizeof(float)) {
        throw ShapeError("parameter '" + name + "': file holds " + std::to_string(bytes.size()) +
                         " bytes, shape " + shape_string(shape) + " needs " +
                         std::to_string(t.size() * static_cast<Index>(sizeof(float))));
      }
      std::memcpy(t.data(), bytes.data(), bytes.size());
      named.push_back({name, std::move(t)});
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint index in " + dir + ": " + e.what());
  }
  out.params = from_named(named, out.config);
  if (fs::exists(root / "vocab.json")) out.vocab = load_vocab((root / "vocab.json").string());
  return out;
}

}  // namespace memeclf
