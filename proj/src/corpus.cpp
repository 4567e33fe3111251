#include "memeclf/corpus.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <json.hpp>
#include <set>
#include <sstream>

#include "memeclf/errors.hpp"
#include "memeclf/io.hpp"
#include "memeclf/text.hpp"

namespace memeclf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Corpus::image_file(const MemeRecord& record) const {
  const fs::path p(record.image_path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  Corpus out{{}, source, base_dir};
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(records.at(i));
  return out;
}

std::vector<int> Corpus::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw ValidationError("record '" + r.id + "' has no label");
    out.push_back(*r.label);
  }
  return out;
}

namespace {

int parse_binary(const json& v, const std::string& what, std::size_t line) {
  if (!v.is_number_integer()) {
    throw ValidationError(fmt::format("line {}: {} must be 0 or 1, got {}", line, what, v.dump()));
  }
  const auto x = v.get<long long>();
  if (x != 0 && x != 1) {
    throw ValidationError(fmt::format("line {}: {} must be 0 or 1, got {}", line, what, x));
  }
  return static_cast<int>(x);
}

MemeRecord parse_record(const json& j, std::size_t line) {
  if (!j.is_object()) throw ValidationError(fmt::format("line {}: expected a JSON object", line));
  static const std::set<std::string> known{"id", "image_path", "text", "label", "annotator_labels"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ValidationError(fmt::format("line {}: unknown field '{}'", line, key));
  }
  auto required_string = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
      throw ValidationError(fmt::format("line {}: '{}' must be a non-empty string", line, key));
    }
    return j[key].get<std::string>();
  };
  MemeRecord r;
  r.id = required_string("id");
  r.image_path = required_string("image_path");
  if (j.contains("text") && !j["text"].is_null()) {
    if (!j["text"].is_string()) throw ValidationError(fmt::format("line {}: 'text' must be a string", line));
    r.text = j["text"].get<std::string>();
  }
  if (j.contains("label") && !j["label"].is_null()) r.label = parse_binary(j["label"], "label", line);
  if (j.contains("annotator_labels") && !j["annotator_labels"].is_null()) {
    const auto& votes = j["annotator_labels"];
    if (!votes.is_array()) {
      throw ValidationError(fmt::format("line {}: 'annotator_labels' must be an array", line));
    }
    r.annotator_labels.emplace();
    for (const auto& v : votes) r.annotator_labels->push_back(parse_binary(v, "annotator vote", line));
  }
  return r;
}

}  // namespace

void validate_corpus(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& r : corpus.records) {
    if (!seen.insert(r.id).second) throw ValidationError("duplicate id '" + r.id + "'");
    if (r.label && *r.label != 0 && *r.label != 1) {
      throw ValidationError(fmt::format("record '{}': label {} outside {{0, 1}}", r.id, *r.label));
    }
  }
}

Corpus parse_manifest(const std::string& contents, const std::string& source) {
  Corpus corpus;
  corpus.source = source;
  std::set<std::string> seen;
  std::istringstream in(contents);
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(fmt::format("{}: line {}: malformed JSON ({})", source, line, e.what()));
    }
    MemeRecord r;
    try {
      r = parse_record(j, line);
    } catch (const ValidationError& e) {
      throw ValidationError(source + ": " + e.what());
    }
    if (!seen.insert(r.id).second) {
      throw ValidationError(fmt::format("{}: line {}: duplicate id '{}'", source, line, r.id));
    }
    corpus.records.push_back(std::move(r));
  }
  if (corpus.records.empty()) throw ValidationError(source + ": manifest holds no records");
  return corpus;
}

Corpus load_manifest(const std::string& path) {
  Corpus corpus = parse_manifest(read_file(path), path);
  corpus.base_dir = fs::path(path).parent_path().string();
  return corpus;
}

std::string format_manifest(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records) {
    json j = json::object();
    j["id"] = r.id;
    j["image_path"] = r.image_path;
    if (r.text) j["text"] = *r.text;
    if (r.label) j["label"] = *r.label;
    if (r.annotator_labels) j["annotator_labels"] = *r.annotator_labels;
    out += j.dump() + "\n";
  }
  return out;
}

void save_manifest(const Corpus& corpus, const std::string& path) {
  validate_corpus(corpus);
  write_file_atomic(path, format_manifest(corpus));
}

Consensus consensus_label(const std::vector<int>& votes, double threshold) {
  if (votes.empty()) throw ValidationError("consensus needs at least one vote");
  std::array<Index, 2> count{0, 0};
  for (int v : votes) {
    if (v != 0 && v != 1) throw ValidationError(fmt::format("vote {} is not 0 or 1", v));
    ++count[static_cast<std::size_t>(v)];
  }
  const int majority = count[1] > count[0] ? 1 : 0;
  Consensus out;
  out.agreement = static_cast<double>(count[static_cast<std::size_t>(majority)]) /
                  static_cast<double>(votes.size());
  if (count[0] != count[1] && out.agreement >= threshold) out.label = majority;
  return out;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  constexpr Index kBinWidth = 5;
  constexpr Index kOpenFrom = kMaxTextLen;
  CorpusStats s;
  s.n = static_cast<Index>(corpus.size());
  for (Index lo = 0; lo < kOpenFrom; lo += kBinWidth) s.text_lengths.push_back({lo, lo + kBinWidth - 1, 0});
  s.text_lengths.push_back({kOpenFrom, -1, 0});
  for (const auto& r : corpus.records) {
    if (r.label) {
      ++s.counts[static_cast<std::size_t>(*r.label)];
    } else {
      ++s.unlabeled;
    }
    if (!r.text) {
      ++s.missing_text;
      continue;
    }
    const auto len = static_cast<Index>(split_tokens(*r.text).size());
    ++s.text_lengths[static_cast<std::size_t>(std::min(len, kOpenFrom) / kBinWidth)].count;
  }
  const Index labeled = s.counts[0] + s.counts[1];
  if (labeled == 0) {
    spdlog::warn("corpus has no labeled records; class counts are zero");
  } else {
    for (std::size_t c = 0; c < 2; ++c) {
      s.fractions[c] = static_cast<double>(s.counts[c]) / static_cast<double>(labeled);
    }
  }
  return s;
}

std::string stats_json(const CorpusStats& s) {
  json j;
  j["n"] = s.n;
  j["counts"] = {{"0", s.counts[0]}, {"1", s.counts[1]}};
  j["fractions"] = {{"0", std::round(s.fractions[0] * 1e6) / 1e6},
                    {"1", std::round(s.fractions[1] * 1e6) / 1e6}};
  j["unlabeled"] = s.unlabeled;
  j["missing_text"] = s.missing_text;
  json bins = json::array();
  for (const auto& b : s.text_lengths) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi < 0 ? json(nullptr) : json(b.hi)}, {"count", b.count}});
  }
  j["text_length_histogram"] = bins;
  return j.dump(2) + "\n";
}

std::string class_histogram_csv(const CorpusStats& s) {
  std::string out = "label,count,fraction\n";
  for (std::size_t c = 0; c < 2; ++c) out += fmt::format("{},{},{:.6f}\n", c, s.counts[c], s.fractions[c]);
  return out;
}

std::string text_length_csv(const CorpusStats& s) {
  std::string out = "tokens_min,tokens_max,count\n";
  for (const auto& b : s.text_lengths) {
    out += fmt::format("{},{},{}\n", b.lo, b.hi < 0 ? std::string() : std::to_string(b.hi), b.count);
  }
  return out;
}

void write_stats(const CorpusStats& stats, const std::string& out_dir) {
  ensure_directory(out_dir);
  write_file_atomic((fs::path(out_dir) / "stats.json").string(), stats_json(stats));
  write_file_atomic((fs::path(out_dir) / "class_histogram.csv").string(), class_histogram_csv(stats));
  write_file_atomic((fs::path(out_dir) / "text_length_histogram.csv").string(), text_length_csv(stats));
}

}  // namespace memeclf
