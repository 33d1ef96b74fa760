#include "gsopt/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gsopt {

namespace {

constexpr double kWeightTol = 1e-9;

void require_keys(const nlohmann::json& obj,
                  const std::set<std::string>& allowed,
                  const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      raise(ErrorKind::Config, "unknown key \"" + key + "\" in " + where);
}

double get_number(const nlohmann::json& obj, const std::string& key,
                  const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_number())
    raise(ErrorKind::Config, where + ": missing numeric \"" + key + "\"");
  return obj.at(key).get<double>();
}

void check_weights(const std::vector<double>& w, const std::string& where) {
  double sum = 0.0;
  for (double v : w) {
    if (v < 0.0) raise(ErrorKind::Config, where + ": negative weight");
    sum += v;
  }
  if (std::abs(sum - 1.0) > kWeightTol)
    raise(ErrorKind::Config,
          where + ": weights sum to " + std::to_string(sum) + ", expected 1");
}

// Shared weighted pick: one uniform draw against the cumulative weights.
std::size_t pick_weighted(const std::vector<double>& weights, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return weights.size() - 1;  // guard against rounding at u ~ 1
}

Prior parse_prior(const nlohmann::json& spec, const std::string& where) {
  if (!spec.is_object())
    raise(ErrorKind::Config, where + ": prior must be an object");
  const std::string type = spec.value("type", "");
  Prior p;
  if (type == "uniform") {
    require_keys(spec, {"type", "lo", "hi"}, where);
    p.kind = Prior::Kind::Uniform;
    p.lo = get_number(spec, "lo", where);
    p.hi = get_number(spec, "hi", where);
    if (!(p.lo < p.hi))
      raise(ErrorKind::Config, where + ": uniform prior needs lo < hi");
  } else if (type == "const") {
    require_keys(spec, {"type", "value"}, where);
    p.kind = Prior::Kind::Const;
    p.value = get_number(spec, "value", where);
    if (!std::isfinite(p.value))
      raise(ErrorKind::Config, where + ": const prior must be finite");
  } else if (type == "categorical") {
    require_keys(spec, {"type", "values", "weights"}, where);
    p.kind = Prior::Kind::Categorical;
    if (!spec.contains("values") || !spec.at("values").is_array() ||
        spec.at("values").empty())
      raise(ErrorKind::Config, where + ": categorical needs values");
    p.values = spec.at("values").get<std::vector<double>>();
    if (spec.contains("weights")) {
      p.weights = spec.at("weights").get<std::vector<double>>();
      if (p.weights.size() != p.values.size())
        raise(ErrorKind::Config, where + ": weights/values size mismatch");
    } else {
      p.weights.assign(p.values.size(), 1.0 / p.values.size());
    }
    check_weights(p.weights, where);
  } else {
    raise(ErrorKind::Config, where + ": unknown prior type \"" + type + "\"");
  }
  return p;
}

CountSpec parse_count(const nlohmann::json& spec, const std::string& where) {
  CountSpec c;
  if (spec.is_number_integer()) {
    const int n = spec.get<int>();
    if (n < 0) raise(ErrorKind::Config, where + ": count must be >= 0");
    c.values = {n};
    c.weights = {1.0};
    return c;
  }
  if (spec.is_object()) {
    require_keys(spec, {"values", "weights"}, where);
    if (!spec.contains("values"))
      raise(ErrorKind::Config, where + ": count object needs values");
    c.values = spec.at("values").get<std::vector<int>>();
    if (c.values.empty())
      raise(ErrorKind::Config, where + ": empty count values");
    for (int v : c.values)
      if (v < 0) raise(ErrorKind::Config, where + ": count must be >= 0");
    if (spec.contains("weights"))
      c.weights = spec.at("weights").get<std::vector<double>>();
    else
      c.weights.assign(c.values.size(), 1.0 / c.values.size());
    if (c.weights.size() != c.values.size())
      raise(ErrorKind::Config, where + ": count weights size mismatch");
    check_weights(c.weights, where);
    return c;
  }
  raise(ErrorKind::Config, where + ": count must be an integer or object");
}

}  // namespace

int continuous_attr_index(const std::string& name) {
  for (std::size_t i = 0; i < kNumContinuous; ++i)
    if (name == kContinuousNames[i]) return static_cast<int>(i);
  raise(ErrorKind::Config, "unknown attribute name \"" + name + "\"");
}

double Prior::sample(Rng& rng) const {
  switch (kind) {
    case Kind::Uniform:
      return rng.uniform(lo, hi);
    case Kind::Const:
      return value;
    case Kind::Categorical:
      return values[pick_weighted(weights, rng)];
  }
  raise(ErrorKind::Contract, "bad prior kind");
}

int CountSpec::sample(Rng& rng) const {
  if (values.size() == 1) return values[0];
  return values[pick_weighted(weights, rng)];
}

int ChildSlot::sample_class(Rng& rng) const {
  if (choices.size() == 1) return choices[0];
  if (choice_weights.empty())
    return choices[rng.uniform_index(choices.size())];
  return choices[pick_weighted(choice_weights, rng)];
}

int Grammar::class_id(const std::string& name) const {
  for (std::size_t i = 0; i < classes_.size(); ++i)
    if (classes_[i] == name) return static_cast<int>(i);
  raise(ErrorKind::Data, "unknown class \"" + name + "\"");
}

const std::vector<ChildSlot>& Grammar::rule(int cls) const {
  static const std::vector<ChildSlot> kEmpty;
  auto it = rules_.find(cls);
  return it == rules_.end() ? kEmpty : it->second;
}

bool Grammar::has_prior(int cls, int attr) const {
  return priors_.count({cls, attr}) != 0;
}

const Prior& Grammar::prior(int cls, int attr) const {
  auto it = priors_.find({cls, attr});
  if (it == priors_.end())
    raise(ErrorKind::Contract, "no prior for class " + classes_.at(cls) +
                                   " attr " + kContinuousNames.at(attr));
  return it->second;
}

bool Grammar::has_range(int cls, int attr) const {
  return ranges_.count({cls, attr}) != 0;
}

const AttrRange& Grammar::range(int cls, int attr) const {
  static const AttrRange kIdentity{0.0, 1.0, "unit"};
  auto it = ranges_.find({cls, attr});
  return it == ranges_.end() ? kIdentity : it->second;
}

bool Grammar::attr_mutable(int cls, int attr) const {
  auto it = mutable_.find({cls, attr});
  return it != mutable_.end() && it->second;
}

Grammar Grammar::load(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, "cannot parse grammar " + path + ": " + e.what());
  }
  return from_json(doc);
}

Grammar Grammar::from_json(const nlohmann::json& doc) {
  if (!doc.is_object())
    raise(ErrorKind::Config, "grammar document must be a JSON object");
  require_keys(doc, {"classes", "rules", "priors", "mutable", "ranges",
                     "max_depth"},
               "grammar");

  Grammar g;
  if (!doc.contains("classes") || !doc.at("classes").is_array() ||
      doc.at("classes").empty())
    raise(ErrorKind::Config, "grammar needs a non-empty \"classes\" array");
  g.classes_ = doc.at("classes").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < g.classes_.size(); ++i) {
    if (g.classes_[i].empty())
      raise(ErrorKind::Config, "empty class name");
    for (std::size_t j = 0; j < i; ++j)
      if (g.classes_[i] == g.classes_[j])
        raise(ErrorKind::Config, "duplicate class \"" + g.classes_[i] + "\"");
  }

  g.max_depth_ = doc.value("max_depth", 8);
  if (g.max_depth_ < 1)
    raise(ErrorKind::Config, "max_depth must be positive");

  // Bind each optional section to a local: json::value() returns a temporary,
  // and items() over it would dangle inside the range-for.
  const nlohmann::json rules = doc.value("rules", nlohmann::json::object());
  for (const auto& [cls_name, slots] : rules.items()) {
    const int cls = g.class_id(cls_name);
    if (!slots.is_array())
      raise(ErrorKind::Config, "rule for " + cls_name + " must be an array");
    std::vector<ChildSlot> parsed;
    for (const auto& slot : slots) {
      const std::string where = "rule " + cls_name;
      require_keys(slot, {"class", "choice", "weights", "count", "priors"},
                   where);
      ChildSlot cs;
      if (slot.contains("class") == slot.contains("choice"))
        raise(ErrorKind::Config,
              where + ": slot needs exactly one of \"class\"/\"choice\"");
      if (slot.contains("class")) {
        cs.choices = {g.class_id(slot.at("class").get<std::string>())};
      } else {
        for (const auto& name : slot.at("choice"))
          cs.choices.push_back(g.class_id(name.get<std::string>()));
        if (cs.choices.empty())
          raise(ErrorKind::Config, where + ": empty choice list");
        if (slot.contains("weights")) {
          cs.choice_weights = slot.at("weights").get<std::vector<double>>();
          if (cs.choice_weights.size() != cs.choices.size())
            raise(ErrorKind::Config, where + ": choice weights size mismatch");
          check_weights(cs.choice_weights, where);
        }
      }
      if (slot.contains("count"))
        cs.count = parse_count(slot.at("count"), where);
      const nlohmann::json overrides =
          slot.value("priors", nlohmann::json::object());
      for (const auto& [attr_name, prior_spec] : overrides.items()) {
        const int attr = continuous_attr_index(attr_name);
        cs.prior_overrides[attr] =
            parse_prior(prior_spec, where + " override " + attr_name);
      }
      parsed.push_back(std::move(cs));
    }
    g.rules_[cls] = std::move(parsed);
  }

  const nlohmann::json priors = doc.value("priors", nlohmann::json::object());
  for (const auto& [cls_name, attrs] : priors.items()) {
    const int cls = g.class_id(cls_name);
    for (const auto& [attr_name, spec] : attrs.items()) {
      const int attr = continuous_attr_index(attr_name);
      g.priors_[{cls, attr}] =
          parse_prior(spec, "prior " + cls_name + "." + attr_name);
    }
  }

  const nlohmann::json ranges = doc.value("ranges", nlohmann::json::object());
  for (const auto& [cls_name, attrs] : ranges.items()) {
    const int cls = g.class_id(cls_name);
    for (const auto& [attr_name, spec] : attrs.items()) {
      const int attr = continuous_attr_index(attr_name);
      const std::string where = "range " + cls_name + "." + attr_name;
      require_keys(spec, {"lo", "hi", "units"}, where);
      AttrRange r;
      r.lo = get_number(spec, "lo", where);
      r.hi = get_number(spec, "hi", where);
      r.units = spec.value("units", "");
      if (!(r.lo < r.hi))
        raise(ErrorKind::Config, where + ": needs lo < hi");
      g.ranges_[{cls, attr}] = r;
    }
  }

  const nlohmann::json mut = doc.value("mutable", nlohmann::json::object());
  for (const auto& [cls_name, attrs] : mut.items()) {
    const int cls = g.class_id(cls_name);
    if (!attrs.is_array())
      raise(ErrorKind::Config, "mutable." + cls_name + " must be an array");
    for (const auto& attr_name : attrs)
      g.mutable_[{cls, continuous_attr_index(attr_name.get<std::string>())}] =
          true;
  }

  g.validate();
  return g;
}

void Grammar::validate() const {
  // Prior support must sit inside the declared range so normalization can
  // never fail at sampling time.
  for (const auto& [key, p] : priors_) {
    const AttrRange& r = range(key.first, key.second);
    const std::string where = "prior " + classes_.at(key.first) + "." +
                              kContinuousNames.at(key.second);
    auto inside = [&](double v) { return v >= r.lo && v <= r.hi; };
    switch (p.kind) {
      case Prior::Kind::Uniform:
        if (!inside(p.lo) || !inside(p.hi))
          raise(ErrorKind::Config, where + ": support exceeds range");
        break;
      case Prior::Kind::Const:
        if (!inside(p.value))
          raise(ErrorKind::Config, where + ": value outside range");
        break;
      case Prior::Kind::Categorical:
        for (double v : p.values)
          if (!inside(v))
            raise(ErrorKind::Config, where + ": value outside range");
        break;
    }
  }

  // Mutable attributes must actually be sampled for that class.
  for (const auto& [key, is_mut] : mutable_)
    if (is_mut && !has_prior(key.first, key.second))
      raise(ErrorKind::Config,
            "mutable attribute " + classes_.at(key.first) + "." +
                kContinuousNames.at(key.second) + " has no prior");

  // The class reference graph must be acyclic and shallow enough. Iterative
  // DFS over classes; depth counted in edges from the root.
  std::vector<int> state(classes_.size(), 0);  // 0=unseen 1=active 2=done
  std::vector<int> depth(classes_.size(), -1);
  auto dfs = [&](auto&& self, int cls, int d) -> void {
    if (d > max_depth_)
      raise(ErrorKind::Config,
            "rule expansion for \"" + classes_.at(cls) +
                "\" exceeds max_depth " + std::to_string(max_depth_));
    if (state[cls] == 1)
      raise(ErrorKind::Config,
            "rule cycle through class \"" + classes_.at(cls) + "\"");
    if (state[cls] == 2 && depth[cls] >= d) return;
    state[cls] = 1;
    depth[cls] = std::max(depth[cls], d);
    for (const ChildSlot& slot : rule(cls))
      for (int child : slot.choices) self(self, child, d + 1);
    state[cls] = 2;
  };
  dfs(dfs, root_class(), 0);

  // Slot prior overrides obey the same range containment.
  for (const auto& [cls, slots] : rules_)
    for (const ChildSlot& slot : slots)
      for (const auto& [attr, p] : slot.prior_overrides)
        for (int child : slot.choices) {
          const AttrRange& r = range(child, attr);
          const std::string where = "override for " + classes_.at(child) +
                                    "." + kContinuousNames.at(attr);
          if (p.kind == Prior::Kind::Uniform && (p.lo < r.lo || p.hi > r.hi))
            raise(ErrorKind::Config, where + ": support exceeds range");
          if (p.kind == Prior::Kind::Const &&
              (p.value < r.lo || p.value > r.hi))
            raise(ErrorKind::Config, where + ": value outside range");
        }
}

double normalize_attr(const Grammar& g, int cls, int attr, double physical) {
  const AttrRange& r = g.range(cls, attr);
  if (physical < r.lo || physical > r.hi)
    raise(ErrorKind::Range,
          "value " + std::to_string(physical) + " outside range [" +
              std::to_string(r.lo) + "," + std::to_string(r.hi) + "] for " +
              g.classes().at(cls) + "." + kContinuousNames.at(attr));
  return (physical - r.lo) / (r.hi - r.lo);
}

Denorm denormalize_attr(const Grammar& g, int cls, int attr, double norm) {
  Denorm d;
  double n = norm;
  if (n < 0.0) {
    n = 0.0;
    d.clamped = true;
  } else if (n > 1.0) {
    n = 1.0;
    d.clamped = true;
  }
  const AttrRange& r = g.range(cls, attr);
  d.value = r.lo + n * (r.hi - r.lo);
  return d;
}

std::array<double, kNumContinuous> normalize_attributes(
    const Grammar& g, int cls, const std::array<double, kNumContinuous>& raw) {
  std::array<double, kNumContinuous> out{};
  for (std::size_t a = 0; a < kNumContinuous; ++a)
    out[a] = normalize_attr(g, cls, static_cast<int>(a), raw[a]);
  return out;
}

DenormVec denormalize_attributes(
    const Grammar& g, int cls,
    const std::array<double, kNumContinuous>& nrm) {
  DenormVec out;
  for (std::size_t a = 0; a < kNumContinuous; ++a) {
    const Denorm d = denormalize_attr(g, cls, static_cast<int>(a), nrm[a]);
    out.values[a] = d.value;
    out.clamped = out.clamped || d.clamped;
  }
  return out;
}

}  // namespace gsopt
