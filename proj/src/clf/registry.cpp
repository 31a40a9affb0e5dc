#include "cloak/clf/registry.hpp"

#include "cloak/clf/knn.hpp"
#include "cloak/clf/pca.hpp"
#include "cloak/clf/tree.hpp"
#include "cloak/error.hpp"
#include "cloak/nn/serialize.hpp"

namespace cloak::clf {
namespace {

const std::vector<std::string> kKnnPresets = {"fine", "medium", "coarse", "cosine", "cubic", "weighted"};
const std::vector<std::string> kTreePresets = {"fine", "medium", "coarse"};

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::unique_ptr<Classifier> fit_classical(const std::string& family, std::span<const Example> train,
                                          std::size_t n_classes) {
  if (starts_with(family, "knn-")) {
    return std::make_unique<KnnClassifier>(train, n_classes, KnnConfig::preset(family.substr(4)), family);
  }
  if (starts_with(family, "tree-")) {
    return std::make_unique<TreeClassifier>(tree_fit(train, n_classes, TreeConfig::preset(family.substr(5))), family);
  }
  throw ConfigError("unknown classifier family: " + family);
}

}  // namespace

std::vector<std::string> classifier_families() {
  std::vector<std::string> out = {"cnn", "linear"};
  for (const auto& p : kKnnPresets) out.push_back("knn-" + p);
  for (const auto& p : kTreePresets) out.push_back("tree-" + p);
  for (const auto& p : kKnnPresets) out.push_back("pca-knn-" + p);
  for (const auto& p : kTreePresets) out.push_back("pca-tree-" + p);
  return out;
}

std::unique_ptr<Classifier> train_classifier(const std::string& family, const Dataset& ds, const TrainConfig& train,
                                             History* history) {
  const auto train_set = examples(ds, Split::Train);
  if (train_set.empty()) throw Error("no training data");
  const std::size_t d = train_set[0].x.size();
  const auto n_classes = static_cast<std::size_t>(ds.n_classes);

  if (family == "cnn" || family == "linear") {
    nn::Net net;
    if (family == "cnn") {
      CnnConfig c;
      c.input_len = d;
      c.n_classes = n_classes;
      net = build_cnn(c, train.seed);
    } else {
      net = build_linear(d, n_classes, train.seed);
    }
    auto [trained, h] = train_cnn(net, ds, train);
    if (history) *history = std::move(h);
    return std::make_unique<NetClassifier>(std::move(trained), family);
  }
  if (starts_with(family, "pca-")) {
    auto pca = pca_fit(train_set);
    std::vector<std::vector<double>> reduced;
    reduced.reserve(train_set.size());
    for (const auto& ex : train_set) reduced.push_back(pca_transform(pca, ex.x));
    std::vector<Example> reduced_set;
    for (std::size_t i = 0; i < reduced.size(); ++i) reduced_set.push_back({reduced[i], train_set[i].label});
    auto inner = fit_classical(family.substr(4), reduced_set, n_classes);
    return std::make_unique<PcaClassifier>(std::move(pca), std::move(inner));
  }
  return fit_classical(family, train_set, n_classes);
}

nlohmann::json classifier_to_json(const Classifier& clf) {
  auto j = clf.to_json();
  j["format_version"] = nn::kModelFormatVersion;
  return j;
}

std::unique_ptr<Classifier> classifier_from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != nn::kModelFormatVersion) throw Error("unsupported model format_version");
  const auto kind = j.at("model").get<std::string>();
  if (kind == "net") return std::make_unique<NetClassifier>(nn::net_from_json(j), j.value("family", std::string("cnn")));
  if (kind == "knn") return std::make_unique<KnnClassifier>(KnnClassifier::from_json(j));
  if (kind == "tree") {
    return std::make_unique<TreeClassifier>(DecisionTree::from_json(j), j.at("family").get<std::string>());
  }
  if (kind == "pca") {
    auto inner = j.at("inner");
    inner["format_version"] = nn::kModelFormatVersion;
    return std::make_unique<PcaClassifier>(PcaModel::from_json(j.at("pca")), classifier_from_json(inner));
  }
  throw Error("unknown model kind: " + kind);
}

void save_classifier(const std::filesystem::path& path, const Classifier& clf) {
  nn::save_json(path, classifier_to_json(clf));
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  return classifier_from_json(nn::load_json(path));
}

}  // namespace cloak::clf
