#pragma once

#include <string>

#include "memeclf/corpus.hpp"

namespace memeclf {

enum class OcrAdapter { None, Sidecar, Command };

OcrAdapter parse_ocr_adapter(const std::string& name);
std::string to_string(OcrAdapter adapter);

struct OcrConfig {
  OcrAdapter adapter = OcrAdapter::Sidecar;
  /// Program and leading arguments for OcrAdapter::Command, split on
  /// whitespace; the image path is appended as the last argument.
  std::string command;
};

/// Text of one meme's image.
///  - None: the manifest text; OcrError when the record has none.
///  - Sidecar: `<image>.txt` verbatim; a missing file gives "" and a warning.
///  - Command: the program's standard output; a non-zero exit throws
///    OcrError carrying its standard error.
std::string ocr_extract(const Corpus& corpus, const MemeRecord& record, const OcrConfig& config);

/// Fills `text` on every record that lacks it. Returns how many were filled.
std::size_t resolve_texts(Corpus& corpus, const OcrConfig& config);

}  // namespace memeclf
