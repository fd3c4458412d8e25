#include "oqr/nn.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace oqr {

namespace {
constexpr const char* kFormat = "oqr-mlp";
constexpr int kVersion = 1;
}  // namespace

std::string to_json(const Mlp<double>& model) {
  nlohmann::json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["config"] = {{"input_dim", model.input_dim()},
                   {"hidden", model.hidden_widths()},
                   {"dropout_rate", model.dropout_rate()}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.layers()) {
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) weights.push_back(layer.weight(i, j));
    std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"rows", layer.weight.rows()},
                      {"cols", layer.weight.cols()},
                      {"weights", weights},
                      {"bias", bias}});
  }
  doc["layers"] = layers;
  return doc.dump();
}

Mlp<double> mlp_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  if (doc.value("format", "") != kFormat) throw DataError("checkpoint: unknown format");
  if (doc.value("version", 0) != kVersion) throw DataError("checkpoint: unsupported version");

  std::vector<DenseLayer<double>> layers;
  std::size_t k = 0;
  for (const auto& entry : doc.at("layers")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto weights = entry.at("weights").get<std::vector<double>>();
    const auto bias = entry.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(weights.size()) != rows * cols ||
        static_cast<Eigen::Index>(bias.size()) != rows)
      throw DimensionError("checkpoint layer " + std::to_string(k) + ": payload size mismatch");
    DenseLayer<double> layer{MatrixX<double>(rows, cols), VectorX<double>(rows)};
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) layer.weight(i, j) = weights[i * cols + j];
      layer.bias(i) = bias[i];
    }
    layers.push_back(std::move(layer));
    ++k;
  }
  Mlp<double> model(std::move(layers), doc.at("config").at("dropout_rate").get<double>());
  if (model.input_dim() != doc.at("config").at("input_dim").get<Eigen::Index>())
    throw DimensionError("checkpoint: config input_dim disagrees with layer 0");
  return model;
}

void save_checkpoint(const Mlp<double>& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << to_json(model) << '\n';
}

Mlp<double> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return mlp_from_json(buffer.str());
}

}  // namespace oqr
