#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cloak/nn/net.hpp"

namespace cloak::nn {

inline constexpr int kModelFormatVersion = 1;

/// Tensor as nested JSON arrays following its shape.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, const Shape& expected);

nlohmann::json norm_stats_to_json(const std::optional<NormStats>& stats);
std::optional<NormStats> norm_stats_from_json(const nlohmann::json& j);

/// Versioned model document: layer specs, every parameter tensor, batch-norm
/// running statistics, NormStats and the initialization seed.
nlohmann::json net_to_json(const Net& net);
Net net_from_json(const nlohmann::json& j);

void save_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json load_json(const std::filesystem::path& path);

}  // namespace cloak::nn
