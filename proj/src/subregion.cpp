#include "autoseg/subregion.hpp"

#include <algorithm>

#include "autoseg/error.hpp"

namespace autoseg {

int SubregionSpec::find(const std::string& name) const {
  for (size_t i = 0; i < classes.size(); ++i) {
    if (classes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::set<int> SubregionSpec::label_alphabet() const {
  std::set<int> out{0};
  for (const auto& c : classes) out.insert(c.index.begin(), c.index.end());
  return out;
}

bool SubregionSpec::overlapping() const {
  std::set<int> seen;
  for (const auto& c : classes) {
    for (int v : c.index) {
      if (!seen.insert(v).second) return true;
    }
  }
  return false;
}

void SubregionSpec::validate() const {
  if (classes.empty()) throw ValidationError("class_names must list at least one subregion");
  std::set<std::string> names;
  for (const auto& c : classes) {
    if (c.name.empty()) throw ValidationError("subregion with empty name");
    if (!names.insert(c.name).second) throw ValidationError("duplicate subregion name '" + c.name + "'");
    if (c.index.empty()) throw ValidationError("subregion '" + c.name + "' has an empty index set");
    for (int v : c.index) {
      if (v <= 0) throw ValidationError("subregion '" + c.name + "' lists non-positive label " + std::to_string(v));
    }
  }
  if (!sigmoid && overlapping()) {
    throw ValidationError("overlapping class index sets require sigmoid: true (multi-label)");
  }
}

std::vector<int> SubregionSpec::nesting_order() const {
  std::vector<int> order(classes.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return classes[a].index.size() > classes[b].index.size();
  });
  for (size_t i = 0; i + 1 < order.size(); ++i) {
    const auto& outer = classes[order[i]].index;
    const auto& inner = classes[order[i + 1]].index;
    if (outer == inner || !std::includes(outer.begin(), outer.end(), inner.begin(), inner.end())) {
      throw ValidationError("subregions '" + classes[order[i]].name + "' and '" + classes[order[i + 1]].name +
                            "' are not strictly nested");
    }
  }
  return order;
}

SubregionSpec SubregionSpec::brats() {
  return SubregionSpec{{{"wt", {1, 2, 3}}, {"tc", {1, 3}}, {"et", {3}}}, true};
}

}  // namespace autoseg
