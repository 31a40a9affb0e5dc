#pragma once

#include <span>
#include <vector>

#include "cloak/clf/model.hpp"
#include "cloak/nn/net.hpp"

namespace cloak::clf {

inline constexpr std::size_t kInferChunk = 64;

/// Inference-mode logits for each example, evaluated in fixed chunks of
/// kInferChunk so the arithmetic is the same for any thread count.
std::vector<std::vector<double>> batch_logits(const nn::Net& net, std::span<const Example> xs);

/// Packs rows into a [n, input_shape...] batch.
nn::Tensor pack_batch(const nn::Net& net, std::span<const std::span<const double>> rows);

}  // namespace cloak::clf
