#include "cloak/nn/serialize.hpp"

#include <fstream>

#include "cloak/error.hpp"

namespace cloak::nn {
namespace {

using nlohmann::json;

json nested(const double* data, const Shape& shape, std::size_t axis) {
  json arr = json::array();
  if (axis + 1 == shape.size()) {
    for (std::size_t i = 0; i < shape[axis]; ++i) arr.push_back(data[i]);
    return arr;
  }
  std::size_t stride = 1;
  for (std::size_t a = axis + 1; a < shape.size(); ++a) stride *= shape[a];
  for (std::size_t i = 0; i < shape[axis]; ++i) arr.push_back(nested(data + i * stride, shape, axis + 1));
  return arr;
}

void flatten_into(const json& j, const Shape& shape, std::size_t axis, std::vector<double>& out) {
  if (!j.is_array() || j.size() != shape[axis]) throw Error("model tensor does not match shape " + shape_string(shape));
  for (const auto& e : j) {
    if (axis + 1 == shape.size()) {
      out.push_back(e.get<double>());
    } else {
      flatten_into(e, shape, axis + 1, out);
    }
  }
}

}  // namespace

json tensor_to_json(const Tensor& t) { return nested(t.data(), t.shape(), 0); }

Tensor tensor_from_json(const json& j, const Shape& expected) {
  std::vector<double> data;
  data.reserve(shape_size(expected));
  flatten_into(j, expected, 0, data);
  return Tensor(expected, std::move(data));
}

json norm_stats_to_json(const std::optional<NormStats>& stats) {
  if (!stats) return nullptr;
  json arr = json::array();
  for (auto [lo, hi] : stats->range) arr.push_back({lo, hi});
  return arr;
}

std::optional<NormStats> norm_stats_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  NormStats s;
  for (const auto& r : j) s.range.emplace_back(r.at(0).get<double>(), r.at(1).get<double>());
  return s;
}

json net_to_json(const Net& net) {
  json layers = json::array();
  for (const auto& layer : net.layers()) {
    json l;
    if (const auto* c = std::get_if<Conv1D>(&layer)) {
      l = {{"type", "conv1d"},
           {"filters", c->spec().filters},
           {"kernel", c->spec().kernel},
           {"stride", c->spec().stride},
           {"weight", tensor_to_json(c->weight)},
           {"bias", tensor_to_json(c->bias)}};
    } else if (const auto* p = std::get_if<MaxPool1D>(&layer)) {
      l = {{"type", "maxpool1d"}, {"window", p->spec().window}};
    } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
      l = {{"type", "batchnorm"},
           {"eps", b->spec().eps},
           {"momentum", b->spec().momentum},
           {"gamma", tensor_to_json(b->gamma)},
           {"beta", tensor_to_json(b->beta)},
           {"running_mean", tensor_to_json(b->running_mean)},
           {"running_var", tensor_to_json(b->running_var)},
           {"running_seeded", b->running_seeded}};
    } else if (const auto* d = std::get_if<Dropout>(&layer)) {
      l = {{"type", "dropout"}, {"rate", d->spec().rate}};
    } else if (std::holds_alternative<Flatten>(layer)) {
      l = {{"type", "flatten"}};
    } else if (const auto* dn = std::get_if<Dense>(&layer)) {
      l = {{"type", "dense"},
           {"units", dn->spec().units},
           {"weight", tensor_to_json(dn->weight)},
           {"bias", tensor_to_json(dn->bias)}};
    } else if (const auto* s = std::get_if<SoftmaxOutput>(&layer)) {
      l = {{"type", "softmax_output"}, {"classes", s->spec().classes}, {"temperature", s->spec().temperature}};
    }
    layers.push_back(std::move(l));
  }
  return {{"format_version", kModelFormatVersion},
          {"model", "net"},
          {"input_shape", net.input_shape()},
          {"seed", net.seed()},
          {"norm_stats", norm_stats_to_json(net.norm_stats)},
          {"layers", std::move(layers)}};
}

Net net_from_json(const json& j) {
  if (j.value("format_version", 0) != kModelFormatVersion) throw Error("unsupported model format_version");
  std::vector<LayerSpec> specs;
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "conv1d") {
      specs.push_back(Conv1DSpec{l.at("filters"), l.at("kernel"), l.at("stride")});
    } else if (type == "maxpool1d") {
      specs.push_back(MaxPool1DSpec{l.at("window")});
    } else if (type == "batchnorm") {
      specs.push_back(BatchNormSpec{l.at("eps"), l.at("momentum")});
    } else if (type == "dropout") {
      specs.push_back(DropoutSpec{l.at("rate")});
    } else if (type == "flatten") {
      specs.push_back(FlattenSpec{});
    } else if (type == "dense") {
      specs.push_back(DenseSpec{l.at("units")});
    } else if (type == "softmax_output") {
      specs.push_back(SoftmaxOutputSpec{l.at("classes"), l.at("temperature")});
    } else {
      throw Error("unknown layer type '" + type + "'");
    }
  }
  Net net(j.at("input_shape").get<Shape>(), specs, j.at("seed").get<std::uint64_t>());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& l = j.at("layers")[i];
    auto& layer = net.layers()[i];
    if (auto* c = std::get_if<Conv1D>(&layer)) {
      c->weight = tensor_from_json(l.at("weight"), c->weight.shape());
      c->bias = tensor_from_json(l.at("bias"), c->bias.shape());
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      b->gamma = tensor_from_json(l.at("gamma"), b->gamma.shape());
      b->beta = tensor_from_json(l.at("beta"), b->beta.shape());
      b->running_mean = tensor_from_json(l.at("running_mean"), b->running_mean.shape());
      b->running_var = tensor_from_json(l.at("running_var"), b->running_var.shape());
      b->running_seeded = l.value("running_seeded", true);
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      d->weight = tensor_from_json(l.at("weight"), d->weight.shape());
      d->bias = tensor_from_json(l.at("bias"), d->bias.shape());
    }
  }
  net.norm_stats = norm_stats_from_json(j.at("norm_stats"));
  return net;
}

void save_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace cloak::nn
