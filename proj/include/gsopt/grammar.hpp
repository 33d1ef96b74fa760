#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsopt/common.hpp"

namespace gsopt {

// Continuous attribute slots, in the fixed order they follow the class
// one-hot inside a node's attribute vector.
enum ContinuousAttr : int {
  kAttrRotation = 0,
  kAttrLocationX = 1,
  kAttrLocationY = 2,
  kAttrSize = 3,
};
inline constexpr std::size_t kNumContinuous = 4;
inline constexpr std::array<const char*, kNumContinuous> kContinuousNames = {
    "rotation", "locationX", "locationY", "size"};

int continuous_attr_index(const std::string& name);  // Config error if unknown

// Prior over one physical attribute value.
struct Prior {
  enum class Kind { Uniform, Const, Categorical };
  Kind kind = Kind::Uniform;
  double lo = 0.0, hi = 0.0;    // uniform
  double value = 0.0;           // const
  std::vector<double> values;   // categorical support (physical values)
  std::vector<double> weights;  // categorical weights, sum to 1

  double sample(Rng& rng) const;
};

// Physical range for normalizing one (class, attribute) pair.
struct AttrRange {
  double lo = 0.0, hi = 1.0;
  std::string units;
};

// Distribution over how many children a rule slot produces.
struct CountSpec {
  std::vector<int> values{1};
  std::vector<double> weights{1.0};  // sum to 1
  int sample(Rng& rng) const;
};

// One child slot of a production rule. `choices` holds the candidate child
// class ids (one entry = fixed class); `prior_overrides` replace the class
// priors for nodes born in this slot (keyed by continuous attr index).
struct ChildSlot {
  std::vector<int> choices;
  std::vector<double> choice_weights;  // empty = uniform
  CountSpec count;
  std::map<int, Prior> prior_overrides;

  int sample_class(Rng& rng) const;
};

class Grammar {
 public:
  static Grammar from_json(const nlohmann::json& doc);
  static Grammar load(const std::string& path);

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t n_classes() const { return classes_.size(); }
  std::size_t a_in() const { return n_classes() + kNumContinuous; }
  int class_id(const std::string& name) const;  // Data error if unknown
  // The root class is classes[0] by convention (documented in the schema).
  int root_class() const { return 0; }
  int max_depth() const { return max_depth_; }

  const std::vector<ChildSlot>& rule(int cls) const;  // empty for terminals
  bool has_prior(int cls, int attr) const;
  const Prior& prior(int cls, int attr) const;
  bool has_range(int cls, int attr) const;
  // Missing entries act as the identity range [0,1].
  const AttrRange& range(int cls, int attr) const;
  bool attr_mutable(int cls, int attr) const;

  void validate() const;

 private:
  std::vector<std::string> classes_;
  std::map<int, std::vector<ChildSlot>> rules_;
  std::map<std::pair<int, int>, Prior> priors_;
  std::map<std::pair<int, int>, AttrRange> ranges_;
  std::map<std::pair<int, int>, bool> mutable_;
  int max_depth_ = 1;
};

// v_norm = (v - lo) / (hi - lo). Out-of-range physical input -> Range error.
double normalize_attr(const Grammar& g, int cls, int attr, double physical);
// Inverse map; out-of-[0,1] input is clamped and reported via the flag.
struct Denorm {
  double value = 0.0;
  bool clamped = false;
};
Denorm denormalize_attr(const Grammar& g, int cls, int attr, double norm);

// Vector forms over the four continuous slots in fixed order.
std::array<double, kNumContinuous> normalize_attributes(
    const Grammar& g, int cls, const std::array<double, kNumContinuous>& raw);
struct DenormVec {
  std::array<double, kNumContinuous> values{};
  bool clamped = false;
};
DenormVec denormalize_attributes(const Grammar& g, int cls,
                                 const std::array<double, kNumContinuous>& nrm);

}  // namespace gsopt
