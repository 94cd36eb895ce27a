#include "stein/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "stein/types.hpp"

namespace stein {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool is_missing_token(const std::string& cell) {
  static const std::unordered_set<std::string> tokens = {
      "", "na", "n/a", "nan", "null", "?"};
  std::string low;
  low.reserve(cell.size());
  for (char c : cell) low.push_back(static_cast<char>(std::tolower(c)));
  return tokens.count(low) > 0;
}

bool parse_number(const std::string& cell, double& out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (end == begin) return false;
  while (*end != '\0') {
    if (!std::isspace(static_cast<unsigned char>(*end))) return false;
    ++end;
  }
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == delim) {
      cells.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

bool matches_rule(const std::string& rule, const std::string& name) {
  if (!rule.empty() && rule.back() == '*')
    return name.compare(0, rule.size() - 1, rule, 0, rule.size() - 1) == 0;
  return rule == name;
}

}  // namespace

std::string role_name(ColumnRole role) {
  switch (role) {
    case ColumnRole::Response:
      return "response";
    case ColumnRole::Nuisance:
      return "nuisance";
    case ColumnRole::Feature:
      return "feature";
    case ColumnRole::Drop:
      return "drop";
  }
  return "?";
}

ColumnRole role_from_name(const std::string& name) {
  if (name == "response") return ColumnRole::Response;
  if (name == "nuisance") return ColumnRole::Nuisance;
  if (name == "feature") return ColumnRole::Feature;
  if (name == "drop") return ColumnRole::Drop;
  throw std::invalid_argument("unknown column role: " + name);
}

ColumnManifest ColumnManifest::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string ColumnManifest::to_json() const {
  json roles = json::object();
  for (const auto& [name, role] : rules) roles[name] = role_name(role);
  json j{{"response", response},
         {"roles", roles},
         {"default_role", role_name(default_role)},
         {"missing_rate_cap", missing_rate_cap}};
  return j.dump(2);
}

ColumnManifest ColumnManifest::from_json(const std::string& text) {
  json j = json::parse(text);
  ColumnManifest m;
  if (!j.contains("response") || !j["response"].is_string())
    throw std::runtime_error("manifest: a single string \"response\" is required");
  m.response = j["response"].get<std::string>();
  if (j.contains("roles")) {
    for (const auto& [name, role] : j["roles"].items()) {
      const ColumnRole r = role_from_name(role.get<std::string>());
      if (r == ColumnRole::Response)
        throw std::runtime_error(
            "manifest: the response is named by the \"response\" key, not a role");
      m.rules.emplace_back(name, r);
    }
  }
  if (j.contains("default_role"))
    m.default_role = role_from_name(j["default_role"].get<std::string>());
  if (m.default_role == ColumnRole::Response)
    throw std::runtime_error("manifest: default_role cannot be response");
  if (j.contains("missing_rate_cap")) {
    m.missing_rate_cap = j["missing_rate_cap"].get<double>();
    if (m.missing_rate_cap < 0.0 || m.missing_rate_cap > 1.0)
      throw std::runtime_error("manifest: missing_rate_cap must lie in [0,1]");
  }
  return m;
}

std::string ScalingParams::to_json() const {
  auto vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  json j{{"names_x", names_x},   {"names_z", names_z},
         {"mean_x", vec(mean_x)}, {"sd_x", vec(sd_x)},
         {"mean_z", vec(mean_z)}, {"sd_z", vec(sd_z)},
         {"dropped", dropped},   {"y_scaled", y_scaled},
         {"mean_y", mean_y},     {"sd_y", sd_y}};
  return j.dump();
}

ScalingParams ScalingParams::from_json(const std::string& text) {
  json j = json::parse(text);
  ScalingParams s;
  auto vec = [](const json& a) {
    Vector v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i];
    return v;
  };
  s.names_x = j["names_x"].get<std::vector<std::string>>();
  s.names_z = j["names_z"].get<std::vector<std::string>>();
  s.mean_x = vec(j["mean_x"]);
  s.sd_x = vec(j["sd_x"]);
  s.mean_z = vec(j["mean_z"]);
  s.sd_z = vec(j["sd_z"]);
  s.dropped = j["dropped"].get<std::vector<std::string>>();
  s.y_scaled = j["y_scaled"].get<bool>();
  s.mean_y = j["mean_y"].get<double>();
  s.sd_y = j["sd_y"].get<double>();
  return s;
}

std::string TableEncoding::to_json() const {
  json j = json::object();
  for (const auto& [name, cats] : categories) j[name] = cats;
  return j.dump();
}

TableEncoding TableEncoding::from_json(const std::string& text) {
  TableEncoding enc;
  json j = json::parse(text);
  for (const auto& [name, cats] : j.items())
    enc.categories[name] = cats.get<std::vector<std::string>>();
  return enc;
}

Dataset load_table(const std::string& path, const ColumnManifest& manifest,
                   char delimiter, TableEncoding* encoding) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file: " + path);

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty data file: " + path);
  const std::vector<std::string> header = split_line(line, delimiter);
  const std::size_t ncol = header.size();

  // Resolve roles. Exact manifest names must exist in the header.
  std::unordered_set<std::string> header_set(header.begin(), header.end());
  if (!header_set.count(manifest.response))
    throw std::runtime_error("unknown column in manifest: " + manifest.response);
  for (const auto& [name, role] : manifest.rules) {
    (void)role;
    if (name.empty()) throw std::runtime_error("manifest: empty column name");
    if (name.back() != '*' && !header_set.count(name))
      throw std::runtime_error("unknown column in manifest: " + name);
  }

  std::vector<ColumnRole> roles(ncol, manifest.default_role);
  Index response_col = -1;
  for (std::size_t c = 0; c < ncol; ++c) {
    if (header[c] == manifest.response) {
      if (response_col >= 0)
        throw std::runtime_error("duplicate response column: " + header[c]);
      roles[c] = ColumnRole::Response;
      response_col = static_cast<Index>(c);
      continue;
    }
    for (const auto& [name, role] : manifest.rules) {
      if (matches_rule(name, header[c])) {
        roles[c] = role;
        break;
      }
    }
  }

  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> row = split_line(line, delimiter);
    if (row.size() != ncol)
      throw std::runtime_error("row with " + std::to_string(row.size()) +
                               " cells, expected " + std::to_string(ncol));
    cells.push_back(std::move(row));
  }

  // Drop rows whose response is missing or non-numeric-missing.
  std::vector<std::size_t> keep_rows;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    if (!is_missing_token(cells[r][static_cast<std::size_t>(response_col)]))
      keep_rows.push_back(r);
  }
  const std::size_t n = keep_rows.size();
  if (n == 0) throw std::runtime_error("zero rows after filtering");

  // Missing-rate cap applies to non-response columns on the retained rows.
  std::vector<bool> col_kept(ncol, true);
  for (std::size_t c = 0; c < ncol; ++c) {
    if (roles[c] == ColumnRole::Drop) {
      col_kept[c] = false;
      continue;
    }
    if (static_cast<Index>(c) == response_col) continue;
    std::size_t missing = 0;
    for (std::size_t r : keep_rows)
      if (is_missing_token(cells[r][c])) ++missing;
    if (static_cast<double>(missing) / static_cast<double>(n) >
        manifest.missing_rate_cap)
      col_kept[c] = false;
  }

  // Parse columns: numeric unless some non-missing cell fails to parse,
  // in which case integer codes by first appearance.
  auto parse_column = [&](std::size_t c) {
    Vector out(static_cast<Index>(n));
    bool numeric = true;
    for (std::size_t r : keep_rows) {
      const std::string& cell = cells[r][c];
      double v;
      if (!is_missing_token(cell) && !parse_number(cell, v)) {
        numeric = false;
        break;
      }
    }
    if (!numeric && static_cast<Index>(c) == response_col)
      throw std::runtime_error("response column must be numeric: " + header[c]);

    std::unordered_map<std::string, double> codes;
    std::vector<std::string> cats;
    double sum = 0.0;
    Index observed = 0;
    std::vector<Index> missing_at;
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& cell = cells[keep_rows[i]][c];
      if (is_missing_token(cell)) {
        missing_at.push_back(static_cast<Index>(i));
        continue;
      }
      double v = 0.0;
      if (numeric) {
        parse_number(cell, v);
      } else {
        auto it = codes.find(cell);
        if (it == codes.end()) {
          it = codes.emplace(cell, static_cast<double>(codes.size())).first;
          cats.push_back(cell);
        }
        v = it->second;
      }
      out[static_cast<Index>(i)] = v;
      sum += v;
      ++observed;
    }
    const double mean = observed > 0 ? sum / static_cast<double>(observed) : 0.0;
    for (Index i : missing_at) out[i] = mean;
    if (!numeric && encoding) encoding->categories[header[c]] = cats;
    return out;
  };

  Dataset d;
  d.y = parse_column(static_cast<std::size_t>(response_col));

  std::vector<Vector> xcols, zcols;
  for (std::size_t c = 0; c < ncol; ++c) {
    if (!col_kept[c] || static_cast<Index>(c) == response_col) continue;
    if (roles[c] == ColumnRole::Nuisance) {
      xcols.push_back(parse_column(c));
      d.names_x.push_back(header[c]);
    } else if (roles[c] == ColumnRole::Feature) {
      zcols.push_back(parse_column(c));
      d.names_z.push_back(header[c]);
    }
  }
  if (zcols.empty())
    throw std::runtime_error("no feature columns remain after filtering");

  d.x.resize(static_cast<Index>(n), static_cast<Index>(xcols.size()));
  for (std::size_t c = 0; c < xcols.size(); ++c)
    d.x.col(static_cast<Index>(c)) = xcols[c];
  d.z.resize(static_cast<Index>(n), static_cast<Index>(zcols.size()));
  for (std::size_t c = 0; c < zcols.size(); ++c)
    d.z.col(static_cast<Index>(c)) = zcols[c];

  if (!d.y.allFinite() || !d.x.allFinite() || !d.z.allFinite())
    throw std::runtime_error("non-finite values after loading " + path);
  return d;
}

Dataset load_for_scoring(const std::string& path, const std::string& response,
                         const std::vector<std::string>& names_x,
                         const std::vector<std::string>& names_z,
                         const TableEncoding& encoding, const Vector& fill_x,
                         const Vector& fill_z, char delimiter) {
  if (fill_x.size() != static_cast<Index>(names_x.size()) ||
      fill_z.size() != static_cast<Index>(names_z.size()))
    throw std::invalid_argument("load_for_scoring: fill length mismatch");

  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty data file: " + path);
  const std::vector<std::string> header = split_line(line, delimiter);

  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t c = 0; c < header.size(); ++c) pos[header[c]] = c;

  auto locate = [&](const std::string& name) {
    const auto it = pos.find(name);
    if (it == pos.end())
      throw std::invalid_argument("column missing from data file: " + name);
    return it->second;
  };
  std::vector<std::size_t> x_pos, z_pos;
  for (const auto& name : names_x) x_pos.push_back(locate(name));
  for (const auto& name : names_z) z_pos.push_back(locate(name));
  const bool has_response = pos.count(response) > 0;
  const std::size_t y_pos = has_response ? pos[response] : 0;

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> row = split_line(line, delimiter);
    if (row.size() != header.size())
      throw std::runtime_error("row with " + std::to_string(row.size()) +
                               " cells, expected " +
                               std::to_string(header.size()));
    rows.push_back(std::move(row));
  }

  const Index n = static_cast<Index>(rows.size());
  Dataset d;
  d.names_x = names_x;
  d.names_z = names_z;
  d.y = Vector::Zero(n);
  d.x.resize(n, static_cast<Index>(names_x.size()));
  d.z.resize(n, static_cast<Index>(names_z.size()));

  auto cell_value = [&](const std::string& name, const std::string& cell,
                        double fill) {
    if (is_missing_token(cell)) return fill;
    const auto enc = encoding.categories.find(name);
    if (enc != encoding.categories.end()) {
      const auto& cats = enc->second;
      const auto it = std::find(cats.begin(), cats.end(), cell);
      // Unseen category: treat like a missing cell.
      return it == cats.end() ? fill
                              : static_cast<double>(it - cats.begin());
    }
    double v;
    if (!parse_number(cell, v)) return fill;
    return v;
  };

  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (has_response) {
      double v;
      if (parse_number(row[y_pos], v)) d.y[i] = v;
    }
    for (std::size_t c = 0; c < x_pos.size(); ++c)
      d.x(i, static_cast<Index>(c)) =
          cell_value(names_x[c], row[x_pos[c]], fill_x[static_cast<Index>(c)]);
    for (std::size_t c = 0; c < z_pos.size(); ++c)
      d.z(i, static_cast<Index>(c)) =
          cell_value(names_z[c], row[z_pos[c]], fill_z[static_cast<Index>(c)]);
  }
  return d;
}

namespace {

struct ColumnStats {
  Vector mean, sd;
  std::vector<bool> keep;
};

ColumnStats column_stats(const Matrix& m) {
  const Index n = m.rows();
  ColumnStats s;
  s.mean = m.colwise().mean();
  s.sd.resize(m.cols());
  s.keep.assign(static_cast<std::size_t>(m.cols()), true);
  for (Index c = 0; c < m.cols(); ++c) {
    const double var =
        (m.col(c).array() - s.mean[c]).square().sum() / static_cast<double>(n - 1);
    s.sd[c] = std::sqrt(var);
    if (!(s.sd[c] > 1e-12 * (1.0 + std::abs(s.mean[c]))))
      s.keep[static_cast<std::size_t>(c)] = false;
  }
  return s;
}

}  // namespace

std::pair<Dataset, ScalingParams> standardize(const Dataset& d, bool scale_y) {
  if (d.n() < 2) throw std::invalid_argument("standardize: need n >= 2");

  const ColumnStats sx = column_stats(d.x);
  const ColumnStats sz = column_stats(d.z);

  Dataset out;
  ScalingParams params;

  auto apply_block = [](const Matrix& m, const ColumnStats& st,
                        const std::vector<std::string>& names, Matrix& dst,
                        std::vector<std::string>& dst_names, Vector& means,
                        Vector& sds, std::vector<std::string>& dropped) {
    Index kept = 0;
    for (bool k : st.keep) kept += k ? 1 : 0;
    dst.resize(m.rows(), kept);
    means.resize(kept);
    sds.resize(kept);
    Index o = 0;
    for (Index c = 0; c < m.cols(); ++c) {
      if (!st.keep[static_cast<std::size_t>(c)]) {
        dropped.push_back(names[static_cast<std::size_t>(c)]);
        continue;
      }
      dst.col(o) = (m.col(c).array() - st.mean[c]) / st.sd[c];
      dst_names.push_back(names[static_cast<std::size_t>(c)]);
      means[o] = st.mean[c];
      sds[o] = st.sd[c];
      ++o;
    }
  };

  apply_block(d.x, sx, d.names_x, out.x, out.names_x, params.mean_x,
              params.sd_x, params.dropped);
  apply_block(d.z, sz, d.names_z, out.z, out.names_z, params.mean_z,
              params.sd_z, params.dropped);
  params.names_x = out.names_x;
  params.names_z = out.names_z;

  out.y = d.y;
  if (scale_y) {
    params.y_scaled = true;
    params.mean_y = d.y.mean();
    const double var = (d.y.array() - params.mean_y).square().sum() /
                       static_cast<double>(d.n() - 1);
    params.sd_y = std::sqrt(var);
    if (!(params.sd_y > 0.0))
      throw std::invalid_argument("standardize: constant response");
    out.y = (d.y.array() - params.mean_y) / params.sd_y;
  }
  return {std::move(out), std::move(params)};
}

std::vector<Index> variance_prescreen(const Matrix& z, Index k) {
  const Index q = z.cols();
  if (k < 1 || k > q)
    throw std::invalid_argument("variance_prescreen: k out of range");
  const Index n = z.rows();
  std::vector<std::pair<double, Index>> vars;
  vars.reserve(static_cast<std::size_t>(q));
  for (Index c = 0; c < q; ++c) {
    const double mean = z.col(c).mean();
    const double var = (z.col(c).array() - mean).square().sum() /
                       static_cast<double>(std::max<Index>(n - 1, 1));
    vars.emplace_back(var, c);
  }
  std::stable_sort(vars.begin(), vars.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<Index> keep(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) keep[static_cast<std::size_t>(i)] = vars[static_cast<std::size_t>(i)].second;
  return keep;
}

Dataset select_features(const Dataset& d, const std::vector<Index>& keep) {
  Dataset out;
  out.y = d.y;
  out.x = d.x;
  out.names_x = d.names_x;
  out.z.resize(d.n(), static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= d.q())
      throw std::invalid_argument("select_features: index out of range");
    out.z.col(static_cast<Index>(i)) = d.z.col(keep[i]);
    out.names_z.push_back(d.names_z[static_cast<std::size_t>(keep[i])]);
  }
  return out;
}

std::vector<FoldSplit> kfold_split(Index n, int k, std::uint64_t seed) {
  if (k < 2 || static_cast<Index>(k) > n)
    throw std::invalid_argument("kfold_split: need 2 <= k <= n");
  Rng rng(mix_seed(seed, 0x6b666f6cULL));
  std::vector<Index> perm = rng.permutation(n);

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  const Index base = n / k;
  const Index extra = n % k;
  Index pos = 0;
  for (int f = 0; f < k; ++f) {
    const Index size = base + (static_cast<Index>(f) < extra ? 1 : 0);
    auto& split = folds[static_cast<std::size_t>(f)];
    split.test.assign(perm.begin() + pos, perm.begin() + pos + size);
    pos += size;
  }
  for (int f = 0; f < k; ++f) {
    auto& split = folds[static_cast<std::size_t>(f)];
    std::sort(split.test.begin(), split.test.end());
    std::vector<bool> in_test(static_cast<std::size_t>(n), false);
    for (Index i : split.test) in_test[static_cast<std::size_t>(i)] = true;
    for (Index i = 0; i < n; ++i)
      if (!in_test[static_cast<std::size_t>(i)]) split.train.push_back(i);
  }
  return folds;
}

Dataset take_rows(const Dataset& d, const std::vector<Index>& rows) {
  Dataset out;
  out.names_x = d.names_x;
  out.names_z = d.names_z;
  const Index m = static_cast<Index>(rows.size());
  out.y.resize(m);
  out.x.resize(m, d.p());
  out.z.resize(m, d.q());
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= d.n())
      throw std::invalid_argument("take_rows: index out of range");
    out.y[i] = d.y[r];
    out.x.row(i) = d.x.row(r);
    out.z.row(i) = d.z.row(r);
  }
  return out;
}

}  // namespace stein
