#pragma once

#include <set>
#include <string>
#include <vector>

namespace autoseg {

struct SubregionClass {
  std::string name;
  std::set<int> index;  // source integer labels that belong to this subregion
  bool operator==(const SubregionClass&) const = default;
};

// Ordered mapping from integer labels to (possibly overlapping) binary channels.
struct SubregionSpec {
  std::vector<SubregionClass> classes;
  bool sigmoid = true;

  size_t size() const { return classes.size(); }
  int find(const std::string& name) const;  // -1 if absent
  std::set<int> label_alphabet() const;     // {0} plus every index
  bool overlapping() const;

  // Throws ValidationError on duplicate names, empty index sets, non-positive
  // labels, or overlapping sets without the sigmoid formulation.
  void validate() const;

  // Class order from outermost to innermost; throws ValidationError unless the
  // index sets form a chain under inclusion.
  std::vector<int> nesting_order() const;

  // wt = {1,2,3}, tc = {1,3}, et = {3}
  static SubregionSpec brats();

  bool operator==(const SubregionSpec&) const = default;
};

}  // namespace autoseg
