#include "apseg/types.hpp"

#include <algorithm>
#include <set>

namespace apseg {

int InstanceMap::max_label() const {
  return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::vector<int> InstanceMap::instance_ids() const {
  std::set<int> ids;
  for (int v : labels)
    if (v != 0) ids.insert(v);
  return {ids.begin(), ids.end()};
}

}  // namespace apseg
