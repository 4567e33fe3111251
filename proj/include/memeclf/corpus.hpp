#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "memeclf/tensor.hpp"

namespace memeclf {

struct MemeRecord {
  std::string id;
  std::string image_path;  // as written in the manifest
  std::optional<std::string> text;
  std::optional<int> label;
  std::optional<std::vector<int>> annotator_labels;

  bool needs_ocr() const { return !text.has_value(); }
  friend bool operator==(const MemeRecord&, const MemeRecord&) = default;
};

struct Corpus {
  std::vector<MemeRecord> records;
  std::string source;    // manifest path, empty when built in memory
  std::string base_dir;  // relative image paths resolve against this

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  /// Absolute or base_dir-relative path of the record's image.
  std::string image_file(const MemeRecord& record) const;
  /// Records at `indices`, keeping source and base_dir.
  Corpus subset(const std::vector<std::size_t>& indices) const;
  std::vector<int> labels() const;  // throws ValidationError on an unlabeled record

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.records == b.records; }
};

/// JSONL, one object per line with keys id, image_path, text?, label?,
/// annotator_labels?. Blank lines are skipped. Errors name the line number.
Corpus load_manifest(const std::string& path);
Corpus parse_manifest(const std::string& contents, const std::string& source = "<memory>");
std::string format_manifest(const Corpus& corpus);
void save_manifest(const Corpus& corpus, const std::string& path);

/// Throws ValidationError on a duplicate id or a label outside {0, 1}.
void validate_corpus(const Corpus& corpus);

struct Consensus {
  std::optional<int> label;  // empty when unresolved
  double agreement = 0.0;    // share of the majority label
};

/// Majority label when its share reaches `threshold`; ties never resolve.
Consensus consensus_label(const std::vector<int>& votes, double threshold = 0.8);

struct TextLengthBin {
  Index lo = 0;
  Index hi = 0;  // inclusive; -1 for an open bin
  Index count = 0;
};

struct CorpusStats {
  Index n = 0;
  std::array<Index, 2> counts{0, 0};
  std::array<double, 2> fractions{0.0, 0.0};
  Index unlabeled = 0;
  Index missing_text = 0;
  std::vector<TextLengthBin> text_lengths;  // token counts, bins of 5, last bin open
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string stats_json(const CorpusStats& stats);
std::string class_histogram_csv(const CorpusStats& stats);
std::string text_length_csv(const CorpusStats& stats);
/// stats.json, class_histogram.csv and text_length_histogram.csv.
void write_stats(const CorpusStats& stats, const std::string& out_dir);

}  // namespace memeclf
