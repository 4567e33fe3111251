#include "memeclf/synthetic.hpp"

#include <fmt/format.h>

#include <array>
#include <filesystem>
#include <json.hpp>

#include "memeclf/errors.hpp"
#include "memeclf/image.hpp"
#include "memeclf/io.hpp"
#include "memeclf/rng.hpp"

namespace memeclf {

namespace fs = std::filesystem;

SynthMode parse_synth_mode(const std::string& name) {
  if (name == "xor") return SynthMode::Xor;
  if (name == "easy") return SynthMode::Easy;
  throw ConfigError("unknown synthetic mode '" + name + "' (expected xor or easy)");
}

std::string to_string(SynthMode mode) { return mode == SynthMode::Xor ? "xor" : "easy"; }

int synthetic_label(SynthMode mode, const SynthMarkers& m) {
  return mode == SynthMode::Xor ? (m.image != m.text ? 1 : 0) : (m.image ? 1 : 0);
}

namespace {

constexpr Index kSide = 64;
constexpr Index kSquare = 16;
constexpr std::array<const char*, 20> kFiller = {
    "when", "you", "the",    "cat",      "finally", "monday", "coffee", "me",   "my",   "friends",
    "dog",  "weekend", "again", "look", "at",      "this",   "nobody", "everyone", "work", "sleep"};

RawImage draw_image(const SynthMarkers& m, RngStream& rng) {
  RawImage img;
  img.height = kSide;
  img.width = kSide;
  img.rgb.resize(static_cast<std::size_t>(kSide * kSide * 3));
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.uniform_index(128));
  if (m.image) {
    const Index half = kSide / 2;
    const Index top = (m.quadrant / 2) * half + static_cast<Index>(rng.uniform_index(half - kSquare + 1));
    const Index left = (m.quadrant % 2) * half + static_cast<Index>(rng.uniform_index(half - kSquare + 1));
    for (Index r = top; r < top + kSquare; ++r) {
      for (Index c = left; c < left + kSquare; ++c) {
        for (Index ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 255;
      }
    }
  }
  return img;
}

std::string draw_caption(bool trigger, RngStream& rng) {
  const std::size_t words = 3 + rng.uniform_index(6);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < words; ++i) tokens.emplace_back(kFiller[rng.uniform_index(kFiller.size())]);
  if (trigger) {
    tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(words + 1)), kTriggerToken);
  }
  std::string out;
  for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
  return out;
}

}  // namespace

Corpus generate_synthetic(Index n, SynthMode mode, std::uint64_t seed, const std::string& out_dir) {
  if (n < 4 || n % 2 != 0) throw ParameterError(fmt::format("synthetic corpus size must be even and >= 4, got {}", n));
  const fs::path root(out_dir);
  ensure_directory((root / "images").string());

  const RngStream base(seed, 0x73796e);
  RngStream assign = base.derive("assign");
  const auto order = assign.permutation(static_cast<std::size_t>(n));
  // Marker pairs cycle so that labels alternate and classes balance exactly.
  constexpr std::array<std::array<bool, 2>, 4> kXorCycle = {{{false, false}, {true, false}, {true, true}, {false, true}}};

  Corpus corpus;
  corpus.source = (root / "manifest.jsonl").string();
  corpus.base_dir = root.string();
  std::string meta;
  for (Index i = 0; i < n; ++i) {
    const std::size_t slot = order[static_cast<std::size_t>(i)];
    RngStream rng = base.derive(static_cast<std::uint64_t>(i));
    SynthMarkers m;
    if (mode == SynthMode::Xor) {
      m.image = kXorCycle[slot % 4][0];
      m.text = kXorCycle[slot % 4][1];
    } else {
      m.image = slot % 2 == 1;
      m.text = rng.bernoulli(0.5);
    }
    if (m.image) m.quadrant = static_cast<int>(rng.uniform_index(4));
    const std::string id = fmt::format("syn{:05d}", i);
    const std::string image_rel = "images/" + id + ".ppm";
    write_ppm(draw_image(m, rng), (root / image_rel).string());
    write_file_atomic((root / (image_rel + ".txt")).string(), draw_caption(m.text, rng));

    MemeRecord r;
    r.id = id;
    r.image_path = image_rel;
    r.label = synthetic_label(mode, m);
    corpus.records.push_back(r);

    nlohmann::json j;
    j["id"] = id;
    j["image_marker"] = m.image ? 1 : 0;
    j["text_marker"] = m.text ? 1 : 0;
    j["quadrant"] = m.quadrant;
    j["label"] = *r.label;
    meta += j.dump() + "\n";
  }
  save_manifest(corpus, corpus.source);
  write_file_atomic((root / "meta.jsonl").string(), meta);
  return corpus;
}

}  // namespace memeclf
