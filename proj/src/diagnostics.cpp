#include "pft/diagnostics.hpp"

#include <cmath>
#include <numeric>
#include <utility>

namespace pft {

namespace detail {

void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, std::int64_t d) {
  const auto n = static_cast<std::size_t>(d);
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  double total = 0.0;
  for (double x : a) total += x * x;
  const double stop = 1e-26 * std::max(total, 1e-300);

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off <= stop) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

}  // namespace detail

SphereProjection project_to_sphere(const Tensor<double>& rows) {
  if (rows.rank() != 2) throw dimension_error("sphere projection expects a rank-2 matrix");
  const std::int64_t nrows = rows.rows();
  const std::int64_t d = rows.cols();
  if (nrows < 3) throw data_error("sphere projection needs at least 3 samples, got " +
                                  std::to_string(nrows));

  const auto nd = static_cast<std::size_t>(d);
  std::vector<double> m(nd * nd, 0.0);
  for (std::int64_t i = 0; i < nrows; ++i)
    for (std::int64_t p = 0; p < d; ++p) {
      const double xp = rows.at(i, p);
      for (std::int64_t q = 0; q < d; ++q)
        m[static_cast<std::size_t>(p) * nd + static_cast<std::size_t>(q)] += xp * rows.at(i, q);
    }
  for (double& x : m) x /= static_cast<double>(nrows);

  std::vector<double> vecs;
  detail::jacobi_eigen(m, vecs, d);

  std::vector<std::int64_t> order(nd);
  std::iota(order.begin(), order.end(), 0);
  auto eig = [&](std::int64_t i) { return m[static_cast<std::size_t>(i) * nd + static_cast<std::size_t>(i)]; };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int64_t a, std::int64_t b) { return eig(a) > eig(b); });

  const double lam_max = eig(order.front());
  const double tol = 1e-12 * std::max(lam_max, 1e-300);

  SphereProjection out;
  out.rank = 0;
  for (std::int64_t i : order)
    if (eig(i) > tol) ++out.rank;

  // components as columns of a [d x 3] matrix; deficient ones stay zero
  std::vector<double> comp(nd * 3, 0.0);
  const std::int64_t kept = std::min<std::int64_t>(3, out.rank);
  for (std::int64_t j = 0; j < kept; ++j) {
    const auto col = static_cast<std::size_t>(order[static_cast<std::size_t>(j)]);
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < nd; ++i) {
      const double mag = std::abs(vecs[i * nd + col]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    const double flip = vecs[arg * nd + col] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < nd; ++i)
      comp[i * 3 + static_cast<std::size_t>(j)] = flip * vecs[i * nd + col];
  }
  out.rank_deficient = out.rank < 3;

  out.points = Tensor<double>(nrows, 3);
  for (std::int64_t i = 0; i < nrows; ++i) {
    double proj[3] = {0.0, 0.0, 0.0};
    for (std::int64_t p = 0; p < d; ++p) {
      const double x = rows.at(i, p);
      for (int j = 0; j < 3; ++j) proj[j] += x * comp[static_cast<std::size_t>(p) * 3 + static_cast<std::size_t>(j)];
    }
    const double norm = std::sqrt(proj[0] * proj[0] + proj[1] * proj[1] + proj[2] * proj[2]);
    for (int j = 0; j < 3; ++j) out.points.at(i, j) = norm > 1e-300 ? proj[j] / norm : 0.0;
  }
  return out;
}

std::vector<GainRow> gain_vs_variance_table(
    const std::vector<RunRecord>& records,
    const std::map<std::string, VarianceReport>& variance_by_dataset) {
  struct Cell {
    double sum = 0.0;
    std::int64_t count = 0;
  };
  std::map<std::pair<std::string, std::string>, Cell> cells;
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    auto& cell = cells[{r.dataset, r.strategy}];
    cell.sum += r.test_accuracy;
    cell.count += 1;
  }
  if (cells.empty()) throw data_error("no successful run records");

  const std::string zero_shot{to_string(StrategyKind::ZeroShot)};
  std::map<std::string, double> baseline;
  for (const auto& [key, cell] : cells)
    if (key.second == zero_shot) baseline[key.first] = cell.sum / static_cast<double>(cell.count);

  std::vector<GainRow> rows;
  for (const auto& [key, cell] : cells) {
    const auto& [dataset, strategy] = key;
    auto base = baseline.find(dataset);
    if (base == baseline.end())
      throw data_error("dataset '" + dataset + "' has no zero-shot baseline");
    auto var = variance_by_dataset.find(dataset);
    if (var == variance_by_dataset.end())
      throw data_error("dataset '" + dataset + "' has no variance report");
    GainRow row;
    row.dataset = dataset;
    row.strategy = strategy;
    row.var_v = var->second.var_v;
    row.var_t = var->second.var_t;
    row.accuracy = cell.sum / static_cast<double>(cell.count);
    row.gain = row.accuracy - base->second;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_gain_table_csv(const std::filesystem::path& path, const std::vector<GainRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.reserve(rows.size());
  for (const auto& r : rows)
    cells.push_back({r.dataset, csv_number(r.var_v), csv_number(r.var_t), r.strategy,
                     csv_number(r.accuracy), csv_number(r.gain)});
  write_csv(path, {"dataset", "var_v", "var_t", "strategy", "accuracy", "gain"}, cells);
}

}  // namespace pft
