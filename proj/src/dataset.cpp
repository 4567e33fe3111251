#include "memeclf/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "memeclf/errors.hpp"
#include "memeclf/image.hpp"

namespace memeclf {

Augmentation parse_augmentation(const std::string& name) {
  if (name == "off") return Augmentation::Off;
  if (name == "on" || name == "online") return Augmentation::Online;
  if (name == "offline") return Augmentation::Offline;
  throw ConfigError("unknown augmentation '" + name + "' (expected off, online or offline)");
}

std::string to_string(Augmentation mode) {
  switch (mode) {
    case Augmentation::Online: return "online";
    case Augmentation::Offline: return "offline";
    case Augmentation::Off: break;
  }
  return "off";
}

PreparedCorpus prepare_corpus(Corpus corpus, Index image_height, Index image_width) {
  if (corpus.empty()) throw ValidationError("cannot prepare an empty corpus");
  validate_corpus(corpus);
  PreparedCorpus out;
  out.images.reserve(corpus.size());
  for (const auto& r : corpus.records) {
    if (!r.text) throw ValidationError("record '" + r.id + "' has no text; resolve OCR first");
    out.images.push_back(preprocess_image(corpus.image_file(r), image_height, image_width));
  }
  out.corpus = std::move(corpus);
  return out;
}

Vocab vocab_for(const PreparedCorpus& prepared, const std::vector<std::size_t>& indices, std::size_t min_freq) {
  std::vector<std::string> texts;
  texts.reserve(indices.size());
  for (std::size_t i : indices) texts.push_back(*prepared.corpus.records.at(i).text);
  return build_vocab(texts, min_freq);
}

Dataset make_dataset(const PreparedCorpus& prepared, const std::vector<std::size_t>& indices, const Vocab& vocab,
                     const ViltConfig& config) {
  if (indices.empty()) throw ValidationError("cannot build an empty dataset");
  const Index n = static_cast<Index>(indices.size());
  const Index t_len = config.max_text_len;
  Dataset data;
  data.token_ids = IndexMatrix::Zero(n, t_len);
  data.text_mask = IndexMatrix::Zero(n, t_len);
  bool labeled = true;
  for (std::size_t i : indices) labeled = labeled && prepared.corpus.records.at(i).label.has_value();
  if (labeled) data.labels.emplace();
  for (Index k = 0; k < n; ++k) {
    const std::size_t i = indices[static_cast<std::size_t>(k)];
    const MemeRecord& r = prepared.corpus.records.at(i);
    const Tensor<float>& image = prepared.images.at(i);
    if (image.dim(0) != config.image_height || image.dim(1) != config.image_width) {
      throw ShapeError("prepared image of '" + r.id + "' is " + shape_string(image.shape()) +
                       ", model expects " + std::to_string(config.image_height) + "x" +
                       std::to_string(config.image_width));
    }
    const TokenizedText tok = tokenize_pad(*r.text, vocab, t_len);
    for (Index t = 0; t < t_len; ++t) {
      const int id = tok.ids[static_cast<std::size_t>(t)];
      if (id >= config.vocab_size) {
        throw VocabularyError(fmt::format("token id {} exceeds model vocabulary {}", id, config.vocab_size));
      }
      data.token_ids(k, t) = id;
      data.text_mask(k, t) = tok.mask[static_cast<std::size_t>(t)];
    }
    data.ids.push_back(r.id);
    data.images.push_back(image);
    if (labeled) data.labels->push_back(*r.label);
  }
  return data;
}

Dataset build_dataset(const Corpus& corpus, const Vocab& vocab, const ViltConfig& config) {
  const PreparedCorpus prepared = prepare_corpus(corpus, config.image_height, config.image_width);
  std::vector<std::size_t> all(corpus.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_dataset(prepared, all, vocab, config);
}

Dataset expand_with_rotations(const Dataset& data, std::uint64_t seed, double max_deg) {
  Dataset out = data;
  const Index n = data.size();
  out.token_ids.conservativeResize(2 * n, Eigen::NoChange);
  out.text_mask.conservativeResize(2 * n, Eigen::NoChange);
  out.token_ids.bottomRows(n) = data.token_ids;
  out.text_mask.bottomRows(n) = data.text_mask;
  const RngStream root(seed, 0x726f74);
  for (Index i = 0; i < n; ++i) {
    const auto& id = data.ids[static_cast<std::size_t>(i)];
    RngStream rng = root.derive(id);
    out.ids.push_back(id + "#rot");
    out.images.push_back(augment_rotation(data.images[static_cast<std::size_t>(i)], rng, max_deg));
    if (out.labels) out.labels->push_back((*data.labels)[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::vector<std::vector<Index>> plan_batches(Index count, Index batch_size, bool shuffle, RngStream& rng) {
  if (batch_size < 1) throw ParameterError("batch size must be at least 1");
  if (count < 1) throw ValidationError("cannot batch an empty corpus");
  std::vector<Index> order(static_cast<std::size_t>(count));
  if (shuffle) {
    const auto perm = rng.permutation(static_cast<std::size_t>(count));
    std::transform(perm.begin(), perm.end(), order.begin(), [](std::size_t v) { return static_cast<Index>(v); });
  } else {
    for (Index i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  }
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < count; start += batch_size) {
    const Index end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

Batch<float> make_batch(const Dataset& data, const std::vector<Index>& indices,
                        const OnlineRotation* rotation) {
  if (indices.empty()) throw ShapeError("empty batch");
  const Index b = static_cast<Index>(indices.size());
  const Tensor<float>& first = data.images.at(static_cast<std::size_t>(indices[0]));
  const Index image_size = first.size();
  Batch<float> batch;
  batch.images = Tensor<float>(Shape{b, first.dim(0), first.dim(1), first.dim(2)});
  batch.token_ids.resize(b, data.token_ids.cols());
  batch.text_mask.resize(b, data.text_mask.cols());
  if (data.labels) batch.labels.emplace();
  for (Index k = 0; k < b; ++k) {
    const Index i = indices[static_cast<std::size_t>(k)];
    if (i < 0 || i >= data.size()) throw ShapeError(fmt::format("sample index {} out of range", i));
    const auto si = static_cast<std::size_t>(i);
    batch.ids.push_back(data.ids[si]);
    const Tensor<float>* img = &data.images[si];
    Tensor<float> rotated;
    if (rotation) {
      RngStream rng = rotation->root.derive(data.ids[si]).derive(rotation->epoch);
      rotated = augment_rotation(*img, rng, rotation->max_deg);
      img = &rotated;
    }
    if (img->size() != image_size) throw ShapeError("images in a batch differ in size");
    std::copy(img->data(), img->data() + image_size, batch.images.data() + k * image_size);
    batch.token_ids.row(k) = data.token_ids.row(i);
    batch.text_mask.row(k) = data.text_mask.row(i);
    if (data.labels) batch.labels->push_back((*data.labels)[si]);
  }
  return batch;
}

std::vector<Batch<float>> make_batches(const Dataset& data, Index batch_size, bool shuffle,
                                       RngStream& rng, const OnlineRotation* rotation) {
  std::vector<Batch<float>> out;
  for (const auto& group : plan_batches(data.size(), batch_size, shuffle, rng)) {
    out.push_back(make_batch(data, group, rotation));
  }
  return out;
}

}  // namespace memeclf
