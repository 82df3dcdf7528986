// Big-to-small patching: groups patch grid coordinates into η×η regions and
// lays a bag out region by region. Tissue filtering is the caller's job; only
// tissue patches are passed in.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "advmil/core_data.hpp"

namespace advmil {

struct PatchGrid {
  CoordMatrix coords;      // (row, col) of each patch at the working magnification
  int eta = 4;             // region side in patches
  int patch_px = 256;      // a
  double magnification = 20.0;

  int patches_per_region() const { return eta * eta; }
};

namespace detail {
inline std::pair<std::int32_t, std::int32_t> region_key(const PatchGrid& g, Eigen::Index j) {
  return {g.coords(j, 0) / g.eta, g.coords(j, 1) / g.eta};
}

inline void check_grid(const PatchGrid& grid) {
  if (grid.eta < 1) throw Error("eta must be >= 1");
  if ((grid.coords.array() < 0).any()) throw Error("patch coordinates must be nonnegative");
}
}  // namespace detail

/// Dense region index of every patch; regions are numbered in lexicographic
/// (region_row, region_col) order.
inline std::vector<std::int32_t> assign_regions(const PatchGrid& grid) {
  detail::check_grid(grid);
  std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> dense;
  for (Eigen::Index j = 0; j < grid.coords.rows(); ++j) dense.emplace(detail::region_key(grid, j), 0);
  std::int32_t next = 0;
  for (auto& [key, idx] : dense) idx = next++;
  std::vector<std::int32_t> out(static_cast<std::size_t>(grid.coords.rows()));
  for (Eigen::Index j = 0; j < grid.coords.rows(); ++j)
    out[static_cast<std::size_t>(j)] = dense.at(detail::region_key(grid, j));
  return out;
}

/// Builds a region-ordered bag. Regions with fewer than η² tissue patches are
/// filled with zero rows at their unused grid slots and masked invalid.
inline FeatureBag build_bag(const PatchGrid& grid, const FeatureMatrix& features, std::string patient_id = {}) {
  if (grid.coords.rows() == 0) throw Error("empty patch grid");
  if (features.rows() != grid.coords.rows()) throw Error("feature row count does not match coordinate count");
  const auto regions = assign_regions(grid);
  {
    std::set<std::pair<std::int32_t, std::int32_t>> seen;
    for (Eigen::Index j = 0; j < grid.coords.rows(); ++j)
      if (!seen.emplace(grid.coords(j, 0), grid.coords(j, 1)).second) throw Error("duplicate patch coordinates");
  }
  const int s = grid.patches_per_region();
  const int n_regions = regions.empty() ? 0 : *std::max_element(regions.begin(), regions.end()) + 1;

  // Bucket patches per region, row-major within the region.
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(n_regions));
  for (Eigen::Index j = 0; j < grid.coords.rows(); ++j) members[static_cast<std::size_t>(regions[static_cast<std::size_t>(j)])].push_back(j);
  for (auto& mem : members)
    std::sort(mem.begin(), mem.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::make_pair(grid.coords(a, 0), grid.coords(a, 1)) < std::make_pair(grid.coords(b, 0), grid.coords(b, 1));
    });

  FeatureBag bag;
  bag.patient_id = std::move(patient_id);
  bag.patches_per_region = s;
  const Eigen::Index m = static_cast<Eigen::Index>(n_regions) * s;
  bag.features = FeatureMatrix::Zero(m, features.cols());
  bag.coords.resize(m, 2);
  bag.region_ids.assign(static_cast<std::size_t>(m), 0);
  bag.valid.assign(static_cast<std::size_t>(m), 0);

  Eigen::Index row = 0;
  for (int r = 0; r < n_regions; ++r) {
    const auto& mem = members[static_cast<std::size_t>(r)];
    std::set<std::pair<std::int32_t, std::int32_t>> used;
    for (Eigen::Index j : mem) {
      bag.features.row(row) = features.row(j);
      bag.coords.row(row) = grid.coords.row(j);
      bag.region_ids[static_cast<std::size_t>(row)] = r;
      bag.valid[static_cast<std::size_t>(row)] = 1;
      used.emplace(grid.coords(j, 0), grid.coords(j, 1));
      ++row;
    }
    const auto [rr, rc] = detail::region_key(grid, mem.front());
    for (int dr = 0; dr < grid.eta && static_cast<int>(used.size()) < s; ++dr) {
      for (int dc = 0; dc < grid.eta && static_cast<int>(used.size()) < s; ++dc) {
        const std::pair<std::int32_t, std::int32_t> slot{rr * grid.eta + dr, rc * grid.eta + dc};
        if (!used.insert(slot).second) continue;
        bag.coords(row, 0) = slot.first;
        bag.coords(row, 1) = slot.second;
        bag.region_ids[static_cast<std::size_t>(row)] = r;
        ++row;
      }
    }
  }
  return bag;
}

}  // namespace advmil
