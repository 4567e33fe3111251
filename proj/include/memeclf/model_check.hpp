#pragma once

#include <cstdint>

#include "memeclf/gradcheck.hpp"
#include "memeclf/vilt.hpp"

namespace memeclf {

/// A labelled batch of `size` random samples for `config`: images uniform in
/// [-1, 1], random token ids with a random-length text mask, alternating
/// labels 1, 0, 1, ...
template <typename Scalar>
Batch<Scalar> random_batch(const ViltConfig& config, Index size, const RngStream& rng);

/// Central-difference check of the mean BCE loss against loss_and_gradients,
/// in double precision with dropout disabled (infer mode), over a random
/// batch and parameters drawn with InitScale::FanIn. At the standard 0.02
/// scale the text rows have a spread near 0.03, so a step of 1e-3 is a
/// large move after layer norm and truncation error dominates.
GradCheckReport check_model_gradient(const ViltConfig& config, Index batch_size,
                                     std::uint64_t seed, const GradCheckOptions& options);

}  // namespace memeclf
