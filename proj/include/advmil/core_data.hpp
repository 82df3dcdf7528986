// Bag and label data model: feature bags, survival records, the cohort
// manifest, time normalization, the binary bag container and CV splitting.
#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace advmil {

static_assert(std::endian::native == std::endian::little, "bag container I/O assumes a little-endian host");

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CoordMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// One patient's patches. Rows are grouped by region: region r occupies rows
/// [r*s, (r+1)*s). Rows with valid == 0 are zero padding.
struct FeatureBag {
  std::string patient_id;
  FeatureMatrix features;
  CoordMatrix coords;
  std::vector<std::int32_t> region_ids;
  std::vector<std::uint8_t> valid;
  int patches_per_region = 1;

  int m() const { return static_cast<int>(features.rows()); }
  int c() const { return static_cast<int>(features.cols()); }
  int n_regions() const { return patches_per_region > 0 ? m() / patches_per_region : 0; }
  int n_valid() const { return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1})); }

  bool operator==(const FeatureBag& o) const {
    return patient_id == o.patient_id && features == o.features && coords == o.coords &&
           region_ids == o.region_ids && valid == o.valid && patches_per_region == o.patches_per_region;
  }
};

/// Throws Error describing the first violated bag invariant.
inline void validate_bag(const FeatureBag& bag) {
  const int m = bag.m();
  const int s = bag.patches_per_region;
  if (m < 1 || bag.c() < 1) throw Error("bag must have at least one patch and one feature");
  if (s < 1 || m % s != 0) throw Error("bag size must be a multiple of patches_per_region");
  if (bag.coords.rows() != m || static_cast<int>(bag.region_ids.size()) != m ||
      static_cast<int>(bag.valid.size()) != m)
    throw Error("bag arrays disagree on patch count");
  std::vector<int> counts(static_cast<std::size_t>(m / s), 0);
  for (int j = 0; j < m; ++j) {
    const int r = bag.region_ids[static_cast<std::size_t>(j)];
    if (r < 0 || r >= m / s) throw Error("region id out of range");
    ++counts[static_cast<std::size_t>(r)];
    if (bag.valid[static_cast<std::size_t>(j)] > 1) throw Error("validity mask must be 0 or 1");
  }
  for (int n : counts)
    if (n != s) throw Error("every region must hold exactly patches_per_region rows");
  std::set<std::pair<std::int32_t, std::int32_t>> seen;
  for (int j = 0; j < m; ++j)
    if (!seen.emplace(bag.coords(j, 0), bag.coords(j, 1)).second) throw Error("duplicate patch coordinates");
}

struct SurvivalRecord {
  double t_raw = 0.0;
  double t = 0.0;   // normalized to [0,1]
  int delta = 0;    // 0 = event observed, 1 = censored
};

struct ManifestEntry {
  std::string patient_id;
  std::string bag_path;
  std::optional<SurvivalRecord> label;  // absent for the unlabeled pool
  int fold = -1;

  bool labeled() const { return label.has_value(); }
};

inline constexpr int kNumFolds = 5;

struct CohortManifest {
  std::vector<ManifestEntry> entries;
  double t_max = 0.0;
  /// Per test fold, the patient ids held out of training for validation.
  std::array<std::vector<std::string>, kNumFolds> validation;

  std::size_t index_of(const std::string& patient_id) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].patient_id == patient_id) return i;
    throw Error("unknown patient: " + patient_id);
  }
};

// ---------------------------------------------------------------------------
// Time normalization

/// Divides every labeled t_raw by `t_max` and clips to 1.
inline CohortManifest apply_time_normalizer(CohortManifest manifest, double t_max) {
  if (!(t_max > 0.0)) throw Error("time normalizer must be positive");
  manifest.t_max = t_max;
  for (auto& e : manifest.entries)
    if (e.label) e.label->t = std::min(e.label->t_raw / t_max, 1.0);
  return manifest;
}

/// Sets T_max to the largest labeled t_raw among training entries (every entry
/// outside `test_fold`, or all entries when no fold is given) and normalizes.
inline CohortManifest normalize_times(CohortManifest manifest, std::optional<int> test_fold = std::nullopt) {
  double t_max = 0.0;
  bool any = false;
  for (const auto& e : manifest.entries) {
    if (!e.label) continue;
    if (e.label->t_raw < 0.0) throw Error("negative follow-up time for " + e.patient_id);
    if (test_fold && e.fold == *test_fold) continue;
    any = true;
    t_max = std::max(t_max, e.label->t_raw);
  }
  if (!any) throw Error("no labeled survival records");
  // An all-zero cohort keeps t = 0.
  if (t_max == 0.0) t_max = 1.0;
  return apply_time_normalizer(std::move(manifest), t_max);
}

// ---------------------------------------------------------------------------
// Bag container

namespace detail {
inline constexpr char kBagMagic[4] = {'A', 'M', 'B', '1'};
inline constexpr std::uint32_t kBagVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}
}  // namespace detail

inline void write_bag(const FeatureBag& bag, const std::filesystem::path& path) {
  validate_bag(bag);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open bag for writing: " + path.string());
  os.write(detail::kBagMagic, 4);
  detail::put(os, detail::kBagVersion);
  detail::put(os, static_cast<std::uint32_t>(bag.m()));
  detail::put(os, static_cast<std::uint32_t>(bag.c()));
  detail::put(os, static_cast<std::uint32_t>(bag.patches_per_region));
  os.write(reinterpret_cast<const char*>(bag.features.data()),
           static_cast<std::streamsize>(bag.features.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(bag.coords.data()),
           static_cast<std::streamsize>(bag.coords.size() * sizeof(std::int32_t)));
  os.write(reinterpret_cast<const char*>(bag.region_ids.data()),
           static_cast<std::streamsize>(bag.region_ids.size() * sizeof(std::int32_t)));
  os.write(reinterpret_cast<const char*>(bag.valid.data()), static_cast<std::streamsize>(bag.valid.size()));
  if (!os) throw Error("failed writing bag: " + path.string());
}

/// Reads a bag container. The patient id is taken from the file stem.
inline FeatureBag read_bag(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open bag: " + path.string());
  char magic[4] = {};
  std::uint32_t version = 0, m = 0, c = 0, s = 0;
  if (!is.read(magic, 4) || std::memcmp(magic, detail::kBagMagic, 4) != 0 || !detail::get(is, version) ||
      version != detail::kBagVersion)
    throw Error("unrecognized bag container");
  if (!detail::get(is, m) || !detail::get(is, c) || !detail::get(is, s)) throw Error("corrupt bag");
  if (m == 0 || c == 0 || s == 0 || m % s != 0) throw Error("corrupt bag");

  const std::uint64_t payload = std::uint64_t{m} * c * sizeof(float) + std::uint64_t{m} * 2 * sizeof(std::int32_t) +
                                std::uint64_t{m} * sizeof(std::int32_t) + std::uint64_t{m};
  const auto header_end = is.tellg();
  is.seekg(0, std::ios::end);
  const auto file_end = is.tellg();
  if (static_cast<std::uint64_t>(file_end - header_end) != payload) throw Error("corrupt bag");
  is.seekg(header_end);

  FeatureBag bag;
  bag.patient_id = path.stem().string();
  bag.patches_per_region = static_cast<int>(s);
  bag.features.resize(m, c);
  bag.coords.resize(m, 2);
  bag.region_ids.resize(m);
  bag.valid.resize(m);
  is.read(reinterpret_cast<char*>(bag.features.data()), static_cast<std::streamsize>(bag.features.size() * sizeof(float)));
  is.read(reinterpret_cast<char*>(bag.coords.data()), static_cast<std::streamsize>(bag.coords.size() * sizeof(std::int32_t)));
  is.read(reinterpret_cast<char*>(bag.region_ids.data()), static_cast<std::streamsize>(m * sizeof(std::int32_t)));
  is.read(reinterpret_cast<char*>(bag.valid.data()), static_cast<std::streamsize>(m));
  if (!is) throw Error("corrupt bag");
  try {
    validate_bag(bag);
  } catch (const Error&) {
    throw Error("corrupt bag");
  }
  return bag;
}

// ---------------------------------------------------------------------------
// Manifest CSV: patient_id,bag_path,t_raw,delta,fold

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace detail

inline void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot open manifest for writing: " + path.string());
  os << "patient_id,bag_path,t_raw,delta,fold\n";
  for (const auto& e : manifest.entries) {
    if (e.patient_id.find_first_of(",\n\"") != std::string::npos ||
        e.bag_path.find_first_of(",\n\"") != std::string::npos)
      throw Error("manifest fields may not contain commas, quotes or newlines");
    os << e.patient_id << ',' << e.bag_path << ',';
    if (e.label) os << detail::format_double(e.label->t_raw) << ',' << e.label->delta;
    else os << ',';
    os << ',';
    if (e.fold >= 0) os << e.fold;
    os << '\n';
  }
}

inline CohortManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error("empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "patient_id,bag_path,t_raw,delta,fold") throw Error("unexpected manifest header: " + line);
  CohortManifest manifest;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 5) throw Error("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    ManifestEntry e;
    e.patient_id = f[0];
    e.bag_path = f[1];
    try {
      if (f[2].empty() != f[3].empty())
        throw Error("t_raw and delta must both be present or both empty");
      if (!f[2].empty()) {
        SurvivalRecord r;
        r.t_raw = std::stod(f[2]);
        r.delta = std::stoi(f[3]);
        if (r.delta != 0 && r.delta != 1) throw Error("delta must be 0 or 1");
        if (r.t_raw < 0.0) throw Error("t_raw must be nonnegative");
        e.label = r;
      }
      e.fold = f[4].empty() ? -1 : std::stoi(f[4]);
    } catch (const std::logic_error&) {
      throw Error("manifest line " + std::to_string(lineno) + ": malformed number");
    } catch (const Error& err) {
      throw Error("manifest line " + std::to_string(lineno) + ": " + err.what());
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Cross-validation

inline std::size_t count_labeled(const CohortManifest& manifest) {
  return static_cast<std::size_t>(std::count_if(manifest.entries.begin(), manifest.entries.end(),
                                                [](const ManifestEntry& e) { return e.labeled(); }));
}

/// For each fold, holds out 20% of the labeled training patients (those not in
/// the test fold) as a validation set. Deterministic given `seed`.
inline CohortManifest assign_validation(CohortManifest manifest, std::uint64_t seed) {
  for (int f = 0; f < kNumFolds; ++f) {
    std::vector<std::string> pool;
    for (const auto& e : manifest.entries)
      if (e.labeled() && e.fold != f) pool.push_back(e.patient_id);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(f) + 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(pool.size())));
    pool.resize(n_val);
    std::sort(pool.begin(), pool.end());
    manifest.validation[static_cast<std::size_t>(f)] = std::move(pool);
  }
  return manifest;
}

/// Patient-level 5-fold assignment followed by the per-fold 80/20 train/validation split.
inline CohortManifest make_cv_splits(CohortManifest manifest, std::uint64_t seed) {
  if (count_labeled(manifest) < static_cast<std::size_t>(kNumFolds))
    throw Error("cross-validation needs at least 5 labeled patients");
  std::vector<std::size_t> order(manifest.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    manifest.entries[order[pos]].fold = static_cast<int>(pos % kNumFolds);
  return assign_validation(std::move(manifest), seed);
}

/// Entry indices of one CV fold.
struct FoldSplit {
  std::vector<std::size_t> train;       // labeled training patients
  std::vector<std::size_t> validation;  // labeled validation patients
  std::vector<std::size_t> unlabeled;   // training-portion patients without labels
  std::vector<std::size_t> test;        // labeled test patients
};

inline FoldSplit fold_split(const CohortManifest& manifest, int fold) {
  if (fold < 0 || fold >= kNumFolds) throw Error("fold must be in 0..4");
  const auto& val = manifest.validation[static_cast<std::size_t>(fold)];
  const std::set<std::string> val_ids(val.begin(), val.end());
  FoldSplit split;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.fold < 0) throw Error("patient " + e.patient_id + " has no fold assignment");
    if (e.fold == fold) {
      if (e.labeled()) split.test.push_back(i);
    } else if (!e.labeled()) {
      split.unlabeled.push_back(i);
    } else if (val_ids.count(e.patient_id) != 0) {
      split.validation.push_back(i);
    } else {
      split.train.push_back(i);
    }
  }
  return split;
}

}  // namespace advmil
