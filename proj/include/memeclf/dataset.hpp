#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "memeclf/corpus.hpp"
#include "memeclf/rng.hpp"
#include "memeclf/text.hpp"
#include "memeclf/vilt.hpp"

namespace memeclf {

enum class Augmentation { Off, Online, Offline };

Augmentation parse_augmentation(const std::string& name);
std::string to_string(Augmentation mode);

/// Model-ready samples: preprocessed images and padded token ids.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<Tensor<float>> images;  // each [H x W x 3] in [-1, 1]
  IndexMatrix token_ids;              // [n x T]
  IndexMatrix text_mask;              // [n x T]
  std::optional<std::vector<int>> labels;

  Index size() const { return static_cast<Index>(ids.size()); }
};

/// Decodes every image and tokenizes every text. Texts must already be
/// resolved (see resolve_texts); labels are kept only when every record has one.
Dataset build_dataset(const Corpus& corpus, const Vocab& vocab, const ViltConfig& config);

/// A corpus with resolved texts and every image decoded and resized once,
/// so several datasets (splits, folds) can share the work.
struct PreparedCorpus {
  Corpus corpus;
  std::vector<Tensor<float>> images;  // parallel to corpus.records
};

PreparedCorpus prepare_corpus(Corpus corpus, Index image_height, Index image_width);

/// Vocabulary over the texts of the records at `indices`.
Vocab vocab_for(const PreparedCorpus& prepared, const std::vector<std::size_t>& indices, std::size_t min_freq = 1);

/// Dataset over the records at `indices`, in that order.
Dataset make_dataset(const PreparedCorpus& prepared, const std::vector<std::size_t>& indices, const Vocab& vocab,
                     const ViltConfig& config);

/// Offline augmentation: the original samples followed by one rotated copy
/// of each (id suffixed "#rot"), angles drawn per record id from `seed`.
Dataset expand_with_rotations(const Dataset& data, std::uint64_t seed, double max_deg = 15.0);

/// Online augmentation for one epoch: sample `id` is rotated by an angle
/// drawn from root.derive(id).derive(epoch).
struct OnlineRotation {
  RngStream root;
  std::uint64_t epoch = 0;
  double max_deg = 15.0;
};

/// Index groups of at most `batch_size`: manifest order, or a permutation
/// drawn from `rng` when `shuffle` is set. Only the last group may be short.
std::vector<std::vector<Index>> plan_batches(Index count, Index batch_size, bool shuffle, RngStream& rng);

Batch<float> make_batch(const Dataset& data, const std::vector<Index>& indices,
                        const OnlineRotation* rotation = nullptr);

std::vector<Batch<float>> make_batches(const Dataset& data, Index batch_size, bool shuffle,
                                       RngStream& rng, const OnlineRotation* rotation = nullptr);

}  // namespace memeclf
