#pragma once

// JSON checkpoints.
//
// MLP document:
//   {"format": "aeromtl.mlp", "version": 1,
//    "layer_sizes": [3, 32, 1], "hidden_activation": "tanh", "output_activation": "identity",
//    "seed_lineage": [7, 11],
//    "weights": [[row-major entries of layer 0], ...], "biases": [[...], ...]}
//
// ClusterNet document:
//   {"format": "aeromtl.clusternet", "version": 1, "clusters": q,
//    "members": [{"function": <MLP document>, "context": <MLP document>}, ...]}
//
// Doubles are written in shortest round-trip form, so save -> load -> save is byte-identical.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "aeromtl/clusternet.hpp"
#include "aeromtl/nn_core.hpp"

namespace aeromtl {

inline constexpr int kCheckpointVersion = 1;

template <typename Scalar>
nlohmann::json mlp_to_json(const Mlp<Scalar>& net) {
  nlohmann::json weights = nlohmann::json::array();
  nlohmann::json biases = nlohmann::json::array();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) w.push_back(static_cast<double>(net.weights[l](r, c)));
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) b.push_back(static_cast<double>(net.biases[l](r)));
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  return {{"format", "aeromtl.mlp"},
          {"version", kCheckpointVersion},
          {"layer_sizes", net.layer_sizes},
          {"hidden_activation", std::string(to_string(net.hidden_activation))},
          {"output_activation", std::string(to_string(net.output_activation))},
          {"seed_lineage", net.seed_lineage},
          {"weights", std::move(weights)},
          {"biases", std::move(biases)}};
}

namespace detail {
inline void expect_format(const nlohmann::json& doc, const char* format) {
  if (!doc.is_object() || doc.value("format", "") != format)
    throw ParseError(std::string("checkpoint is not an ") + format + " document", 0);
  if (doc.value("version", 0) != kCheckpointVersion) throw ParseError("unsupported checkpoint version", 0);
}
}  // namespace detail

template <typename Scalar = double>
Mlp<Scalar> mlp_from_json(const nlohmann::json& doc) {
  detail::expect_format(doc, "aeromtl.mlp");
  try {
    Mlp<Scalar> net;
    net.layer_sizes = doc.at("layer_sizes").get<std::vector<Eigen::Index>>();
    net.hidden_activation = activation_from_string(doc.at("hidden_activation").get<std::string>());
    net.output_activation = activation_from_string(doc.at("output_activation").get<std::string>());
    net.seed_lineage = doc.at("seed_lineage").get<std::vector<std::uint64_t>>();
    const auto& weights = doc.at("weights");
    const auto& biases = doc.at("biases");
    if (net.layer_sizes.size() < 2 || weights.size() + 1 != net.layer_sizes.size() || biases.size() != weights.size())
      throw ParseError("checkpoint layer count is inconsistent", 0);
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto rows = net.layer_sizes[l + 1], cols = net.layer_sizes[l];
      if (static_cast<Eigen::Index>(weights[l].size()) != rows * cols || static_cast<Eigen::Index>(biases[l].size()) != rows)
        throw ParseError("checkpoint parameter shape mismatch at layer " + std::to_string(l), l);
      Matrix<Scalar> w(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = static_cast<Scalar>(weights[l][static_cast<std::size_t>(r * cols + c)].get<double>());
      Vector<Scalar> b(rows);
      for (Eigen::Index r = 0; r < rows; ++r) b(r) = static_cast<Scalar>(biases[l][static_cast<std::size_t>(r)].get<double>());
      net.weights.push_back(std::move(w));
      net.biases.push_back(std::move(b));
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed MLP checkpoint: ") + e.what(), 0);
  }
}

template <typename Scalar>
nlohmann::json clusternet_to_json(const ClusterNet<Scalar>& model) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& cluster : model.clusters)
    members.push_back({{"function", mlp_to_json(cluster.function_net)}, {"context", mlp_to_json(cluster.context_net)}});
  return {{"format", "aeromtl.clusternet"},
          {"version", kCheckpointVersion},
          {"clusters", model.q()},
          {"members", std::move(members)}};
}

template <typename Scalar = double>
ClusterNet<Scalar> clusternet_from_json(const nlohmann::json& doc) {
  detail::expect_format(doc, "aeromtl.clusternet");
  try {
    ClusterNet<Scalar> model;
    const auto& members = doc.at("members");
    if (static_cast<int>(members.size()) != doc.at("clusters").get<int>() || members.empty())
      throw ParseError("cluster count does not match the member list", 0);
    for (const auto& member : members)
      model.clusters.push_back({mlp_from_json<Scalar>(member.at("function")), mlp_from_json<Scalar>(member.at("context"))});
    for (const auto& cluster : model.clusters) {
      if (cluster.function_net.input_width() != model.input_width() ||
          cluster.context_net.input_width() != model.input_width() ||
          cluster.function_net.output_width() != model.output_width() || cluster.context_net.output_width() != 1)
        throw ParseError("ClusterNet members are not dimensionally identical", 0);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed ClusterNet checkpoint: ") + e.what(), 0);
  }
}

/// Pretty-printed JSON with a trailing newline.
std::string dump_json(const nlohmann::json& doc);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace aeromtl
