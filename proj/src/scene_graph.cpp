#include "gsopt/scene_graph.hpp"

#include <algorithm>
#include <set>

namespace gsopt {

int SceneGraph::parent_of(int id) const {
  for (const auto& [p, c] : edges)
    if (c == id) return p;
  return -1;
}

std::vector<int> SceneGraph::children_of(int id) const {
  std::vector<int> out;
  for (const auto& [p, c] : edges)
    if (p == id) out.push_back(c);
  return out;
}

Tensor SceneGraph::attr_matrix() const {
  Tensor m({nodes.size(), a_in()});
  for (std::size_t i = 0; i < nodes.size(); ++i)
    std::copy(nodes[i].attrs.begin(), nodes[i].attrs.end(),
              m.data() + i * a_in());
  return m;
}

std::vector<std::uint8_t> SceneGraph::mask_matrix() const {
  std::vector<std::uint8_t> m;
  m.reserve(nodes.size() * a_in());
  for (const SceneNode& n : nodes) m.insert(m.end(), n.mask.begin(), n.mask.end());
  return m;
}

void SceneGraph::validate() const {
  if (nodes.empty()) raise(ErrorKind::Structural, "scene graph has no nodes");
  if (edges.size() != nodes.size() - 1)
    raise(ErrorKind::Structural,
          "scene graph is not a tree: " + std::to_string(nodes.size()) +
              " nodes, " + std::to_string(edges.size()) + " edges");
  if (root < 0 || static_cast<std::size_t>(root) >= nodes.size())
    raise(ErrorKind::Structural, "root id out of range");

  const std::size_t width = a_in();
  std::vector<int> indegree(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const SceneNode& n = nodes[i];
    if (n.id != static_cast<int>(i))
      raise(ErrorKind::Structural, "node ids must be dense and ordered");
    if (n.attrs.size() != width || n.mask.size() != width)
      raise(ErrorKind::Structural, "node " + std::to_string(n.id) +
                                       ": attribute width mismatch");
    if (n.class_id < 0 ||
        static_cast<std::size_t>(n.class_id) >= classes.size())
      raise(ErrorKind::Structural, "node class id out of range");
    int ones = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (n.attrs[c] == 1.0)
        ++ones;
      else if (n.attrs[c] != 0.0)
        raise(ErrorKind::Structural, "one-hot entries must be 0 or 1");
    }
    if (ones != 1 || n.attrs[n.class_id] != 1.0)
      raise(ErrorKind::Structural,
            "node " + std::to_string(n.id) + ": malformed class one-hot");
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (n.mask[c])
        raise(ErrorKind::Structural,
              "node " + std::to_string(n.id) + ": class slots are immutable");
    for (std::size_t a = classes.size(); a < width; ++a)
      if (n.attrs[a] < 0.0 || n.attrs[a] > 1.0)
        raise(ErrorKind::Structural, "node " + std::to_string(n.id) +
                                         ": continuous attribute outside "
                                         "[0,1]");
  }
  for (const auto& [p, c] : edges) {
    if (p < 0 || c < 0 || static_cast<std::size_t>(p) >= nodes.size() ||
        static_cast<std::size_t>(c) >= nodes.size())
      raise(ErrorKind::Structural, "edge references unknown node");
    ++indegree[c];
  }
  if (indegree[root] != 0)
    raise(ErrorKind::Structural, "root has a parent");
  // Connectivity: every non-root node has exactly one parent, and the
  // parent-before-child ordering guarantees reachability from the root.
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (static_cast<int>(i) == root) continue;
    if (indegree[i] != 1)
      raise(ErrorKind::Structural,
            "node " + std::to_string(i) + " has in-degree " +
                std::to_string(indegree[i]));
  }
  for (const auto& [p, c] : edges)
    if (p >= c)
      raise(ErrorKind::Structural,
            "edges must point from lower to higher ids (pre-order)");
}

nlohmann::json SceneGraph::to_json() const {
  nlohmann::json doc;
  doc["id"] = id;
  doc["root"] = root;
  nlohmann::json jnodes = nlohmann::json::array();
  for (const SceneNode& n : nodes) {
    nlohmann::json jn;
    jn["id"] = n.id;
    jn["class"] = classes.at(n.class_id);
    jn["attrs"] = n.attrs;
    nlohmann::json jm = nlohmann::json::array();
    for (std::uint8_t b : n.mask) jm.push_back(b != 0);
    jn["mask"] = jm;
    jnodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(jnodes);
  nlohmann::json jedges = nlohmann::json::array();
  for (const auto& [p, c] : edges) jedges.push_back({p, c});
  doc["edges"] = std::move(jedges);
  return doc;
}

SceneGraph SceneGraph::from_json(const nlohmann::json& doc, const Grammar& g) {
  if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("edges") ||
      !doc.contains("root"))
    raise(ErrorKind::Data, "scene graph needs keys nodes/edges/root");
  SceneGraph out;
  out.classes = g.classes();
  out.root = doc.at("root").get<int>();
  out.id = doc.value("id", 0);
  for (const auto& jn : doc.at("nodes")) {
    SceneNode n;
    n.id = jn.at("id").get<int>();
    n.class_id = g.class_id(jn.at("class").get<std::string>());
    n.attrs = jn.at("attrs").get<std::vector<double>>();
    for (const auto& b : jn.at("mask")) n.mask.push_back(b.get<bool>() ? 1 : 0);
    out.nodes.push_back(std::move(n));
  }
  for (const auto& je : doc.at("edges")) {
    if (!je.is_array() || je.size() != 2)
      raise(ErrorKind::Data, "edge entries must be [parent, child] pairs");
    out.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
  }
  out.validate();
  return out;
}

namespace {

struct Sampler {
  const Grammar& g;
  Rng& rng;
  SceneGraph out;

  int expand(int cls, int depth, const ChildSlot* slot) {
    if (depth > g.max_depth())
      raise(ErrorKind::Generation,
            "expansion exceeded max_depth " + std::to_string(g.max_depth()));
    const int id = static_cast<int>(out.nodes.size());
    SceneNode n;
    n.id = id;
    n.class_id = cls;
    n.attrs.assign(g.a_in(), 0.0);
    n.mask.assign(g.a_in(), 0);
    n.attrs[cls] = 1.0;
    for (std::size_t a = 0; a < kNumContinuous; ++a) {
      const int attr = static_cast<int>(a);
      const Prior* p = nullptr;
      if (slot) {
        auto it = slot->prior_overrides.find(attr);
        if (it != slot->prior_overrides.end()) p = &it->second;
      }
      if (!p && g.has_prior(cls, attr)) p = &g.prior(cls, attr);
      if (!p) {
        // No physical attribute: neutral filler, immutable.
        n.attrs[g.n_classes() + a] = 0.5;
        continue;
      }
      const double physical = p->sample(rng);
      n.attrs[g.n_classes() + a] = normalize_attr(g, cls, attr, physical);
      n.mask[g.n_classes() + a] = g.attr_mutable(cls, attr) ? 1 : 0;
    }
    out.nodes.push_back(std::move(n));

    for (const ChildSlot& child_slot : g.rule(cls)) {
      const int count = child_slot.count.sample(rng);
      for (int k = 0; k < count; ++k) {
        const int child_cls = child_slot.sample_class(rng);
        const int child_id = expand(child_cls, depth + 1, &child_slot);
        out.edges.emplace_back(id, child_id);
      }
    }
    return id;
  }
};

}  // namespace

SceneGraph sample_scene_graph(const Grammar& g, Rng& rng) {
  Sampler s{g, rng, {}};
  s.out.classes = g.classes();
  s.out.root = 0;
  s.expand(g.root_class(), 0, nullptr);
  // Pre-order guarantees parent < child, but edges are appended after the
  // whole subtree returns; restore id order for a stable layout.
  std::sort(s.out.edges.begin(), s.out.edges.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });
  s.out.validate();
  return s.out;
}

SceneGraph apply_transform(const SceneGraph& graph, const Tensor& predictions) {
  if (predictions.rank() != 2 ||
      predictions.dim(0) != graph.nodes.size() ||
      predictions.dim(1) != graph.a_in())
    raise(ErrorKind::Structural,
          "predictions shape " + predictions.shape_str() +
              " does not match graph with " +
              std::to_string(graph.nodes.size()) + " nodes of width " +
              std::to_string(graph.a_in()));
  SceneGraph out = graph;
  for (std::size_t i = 0; i < out.nodes.size(); ++i)
    for (std::size_t a = 0; a < out.a_in(); ++a)
      if (out.nodes[i].mask[a])
        out.nodes[i].attrs[a] = predictions.at(i, a);
  return out;
}

}  // namespace gsopt
