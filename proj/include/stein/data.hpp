#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stein/types.hpp"

namespace stein {

/// Immutable-by-convention tabular sample: response y, nuisance block x
/// (n rows, p columns) and feature block z (n rows, q columns).
struct Dataset {
  Vector y;
  Matrix x;
  Matrix z;
  std::vector<std::string> names_x;
  std::vector<std::string> names_z;

  Index n() const { return y.size(); }
  Index p() const { return x.cols(); }
  Index q() const { return z.cols(); }
};

enum class ColumnRole { Response, Nuisance, Feature, Drop };

std::string role_name(ColumnRole role);
ColumnRole role_from_name(const std::string& name);

/// Maps header columns to roles. Rules are matched in order; a rule name
/// ending in '*' matches any column with that prefix. Columns matched by
/// no rule get default_role.
struct ColumnManifest {
  std::string response;
  std::vector<std::pair<std::string, ColumnRole>> rules;
  ColumnRole default_role = ColumnRole::Drop;
  double missing_rate_cap = 0.30;

  static ColumnManifest from_file(const std::string& path);
  std::string to_json() const;
  static ColumnManifest from_json(const std::string& text);
};

/// Per-column centering/scaling state, kept so new data can be placed on
/// the training scale. Zero-variance columns are dropped, not scaled.
struct ScalingParams {
  std::vector<std::string> names_x, names_z;
  Vector mean_x, sd_x, mean_z, sd_z;
  std::vector<std::string> dropped;
  bool y_scaled = false;
  double mean_y = 0.0, sd_y = 1.0;

  std::string to_json() const;
  static ScalingParams from_json(const std::string& text);
};

/// First-appearance category lists for every integer-encoded column,
/// kept so new data can be scored with the training encoding.
struct TableEncoding {
  std::map<std::string, std::vector<std::string>> categories;

  std::string to_json() const;
  static TableEncoding from_json(const std::string& text);
};

/// Loads a delimited text file with a header row. Rows with a missing
/// response are removed; non-response columns whose missing rate exceeds
/// the manifest cap are dropped; remaining missing numeric entries are
/// mean-imputed; categorical columns are integer-encoded by first
/// appearance and then mean-imputed.
Dataset load_table(const std::string& path, const ColumnManifest& manifest,
                   char delimiter = ',', TableEncoding* encoding = nullptr);

/// Scoring-time loader: reads exactly the named columns (every name must
/// be present in the header), applies the stored categorical encoding,
/// imputes missing or unseen values with the given per-column fill, and
/// keeps all rows. The response column is optional; absent responses
/// load as zero. Zero data rows are allowed.
Dataset load_for_scoring(const std::string& path,
                         const std::string& response,
                         const std::vector<std::string>& names_x,
                         const std::vector<std::string>& names_z,
                         const TableEncoding& encoding, const Vector& fill_x,
                         const Vector& fill_z, char delimiter = ',');

std::pair<Dataset, ScalingParams> standardize(const Dataset& d,
                                              bool scale_y = false);

/// Indices of the k columns of z with the largest sample variance,
/// descending; ties broken by the lower column index.
std::vector<Index> variance_prescreen(const Matrix& z, Index k);

/// Restrict the feature block to the given column indices (in order).
Dataset select_features(const Dataset& d, const std::vector<Index>& keep);

struct FoldSplit {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// Deterministic k-fold partition of [0, n); test sizes differ by at
/// most one.
std::vector<FoldSplit> kfold_split(Index n, int k, std::uint64_t seed);

Dataset take_rows(const Dataset& d, const std::vector<Index>& rows);

}  // namespace stein
