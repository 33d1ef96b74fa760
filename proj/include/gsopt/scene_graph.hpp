#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gsopt/grammar.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

struct SceneNode {
  int id = 0;
  int class_id = 0;
  std::vector<double> attrs;        // width a_in: one-hot, then continuous
  std::vector<std::uint8_t> mask;   // mutable flags, same width

  double continuous(const Grammar& g, int attr) const {
    return attrs[g.n_classes() + static_cast<std::size_t>(attr)];
  }
};

// Rooted tree sampled from a Grammar. Node ids are depth-first pre-order,
// so the root is always node 0 and parents precede children.
struct SceneGraph {
  std::vector<std::string> classes;  // grammar class order (one-hot layout)
  std::vector<SceneNode> nodes;      // indexed by id
  std::vector<std::pair<int, int>> edges;  // parent -> child
  int root = 0;
  int id = 0;  // provenance: index of this sample within its dataset

  std::size_t a_in() const { return classes.size() + kNumContinuous; }
  const SceneNode& node(int id) const { return nodes.at(id); }
  int parent_of(int id) const;             // -1 for the root
  std::vector<int> children_of(int id) const;

  // Node attribute rows stacked into an [n_nodes, a_in] matrix.
  Tensor attr_matrix() const;
  // Mutable flags in the same layout.
  std::vector<std::uint8_t> mask_matrix() const;

  void validate() const;

  nlohmann::json to_json() const;
  static SceneGraph from_json(const nlohmann::json& doc, const Grammar& g);
};

SceneGraph sample_scene_graph(const Grammar& g, Rng& rng);

// Replaces mutable attribute slots with the predicted values; everything
// else is copied bit-identically. predictions: [n_nodes, a_in].
SceneGraph apply_transform(const SceneGraph& graph, const Tensor& predictions);

}  // namespace gsopt
