#pragma once

#include <vector>

#include "advmil/autodiff.hpp"
#include "advmil/core_data.hpp"

namespace advmil {

/// Network-ready view of a FeatureBag: valid rows only, in double precision,
/// plus the averaging matrix that pools rows into their regions.
struct PreparedBag {
  std::string patient_id;
  Matrix features;                 // n_valid × c
  Matrix region_pool;              // k × n_valid, row τ averages region τ's valid rows
  std::vector<int> region_of_row;  // dense index into region_pool rows
  int n_regions_declared = 0;      // regions in the container, including empty ones
  bool has_empty_region = false;

  int n_rows() const { return static_cast<int>(features.rows()); }
  int n_regions() const { return static_cast<int>(region_pool.rows()); }
};

inline PreparedBag prepare_bag(const FeatureBag& bag) {
  PreparedBag out;
  out.patient_id = bag.patient_id;
  const int n_valid = bag.n_valid();
  if (n_valid == 0) throw Error("bag " + bag.patient_id + " has no valid patches");
  out.n_regions_declared = bag.n_regions();

  std::vector<int> counts(static_cast<std::size_t>(out.n_regions_declared), 0);
  for (int j = 0; j < bag.m(); ++j)
    if (bag.valid[static_cast<std::size_t>(j)]) ++counts[static_cast<std::size_t>(bag.region_ids[static_cast<std::size_t>(j)])];
  std::vector<int> dense(counts.size(), -1);
  int k = 0;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    if (counts[r] > 0) dense[r] = k++;
    else out.has_empty_region = true;
  }

  out.features.resize(n_valid, bag.c());
  out.region_pool = Matrix::Zero(k, n_valid);
  out.region_of_row.resize(static_cast<std::size_t>(n_valid));
  int row = 0;
  for (int j = 0; j < bag.m(); ++j) {
    if (!bag.valid[static_cast<std::size_t>(j)]) continue;
    const auto r = static_cast<std::size_t>(bag.region_ids[static_cast<std::size_t>(j)]);
    out.features.row(row) = bag.features.row(j).cast<double>();
    out.region_of_row[static_cast<std::size_t>(row)] = dense[r];
    out.region_pool(dense[r], row) = 1.0 / counts[r];
    ++row;
  }
  return out;
}

}  // namespace advmil
