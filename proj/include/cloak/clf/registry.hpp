#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cloak/clf/cnn.hpp"
#include "cloak/clf/model.hpp"

namespace cloak::clf {

/// Known family names: cnn, linear, knn-{fine,medium,coarse,cosine,cubic,
/// weighted}, tree-{fine,medium,coarse}, and pca-<knn or tree family>.
std::vector<std::string> classifier_families();

/// Fits the named family on the train split of a normalized dataset. Neural
/// families use `train` and report per-epoch metrics into `history` when
/// given. The CNN takes its input length and class count from the dataset.
std::unique_ptr<Classifier> train_classifier(const std::string& family, const Dataset& ds, const TrainConfig& train,
                                             History* history = nullptr);

nlohmann::json classifier_to_json(const Classifier& clf);
std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& j);

void save_classifier(const std::filesystem::path& path, const Classifier& clf);
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

}  // namespace cloak::clf
