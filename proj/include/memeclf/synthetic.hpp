#pragma once

#include <cstdint>
#include <string>

#include "memeclf/corpus.hpp"

namespace memeclf {

enum class SynthMode { Xor, Easy };

SynthMode parse_synth_mode(const std::string& name);
std::string to_string(SynthMode mode);

struct SynthMarkers {
  bool image = false;  // bright square present
  bool text = false;   // trigger token present
  int quadrant = -1;   // 0..3 row-major, -1 without a square
};

/// Label for a marker pair: image XOR text, or the image marker alone.
int synthetic_label(SynthMode mode, const SynthMarkers& markers);

inline constexpr const char* kTriggerToken = "zorp";

/// Writes `n` 64x64 PPM memes to `<out_dir>/images`, each with an OCR
/// sidecar `<image>.txt`, plus `manifest.jsonl` (no inline text) and
/// `meta.jsonl` with the markers. Images are noise with an optional 16x16
/// white square in a random quadrant; captions are filler words with the
/// trigger token optionally inserted. Label classes are exactly balanced.
/// The output depends only on (n, mode, seed).
Corpus generate_synthetic(Index n, SynthMode mode, std::uint64_t seed, const std::string& out_dir);

}  // namespace memeclf
