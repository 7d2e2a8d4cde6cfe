#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "h4d/errors.hpp"

namespace h4d {

/// Marks an edge that may never be matched.
inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct Assignment {
  std::vector<std::pair<int, int>> matches;  // (row, col), sorted by row
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;
  double total_cost = 0.0;
};

/// Rectangular assignment. Among matchings that use only allowed (finite)
/// entries, picks one of maximum cardinality and, among those, of minimum
/// total cost. Forbidden entries are +infinity.
inline Assignment assign(const Eigen::MatrixXd& cost) {
  const int R = static_cast<int>(cost.rows());
  const int C = static_cast<int>(cost.cols());
  Assignment out;
  if (R == 0 || C == 0) {
    for (int i = 0; i < R; ++i) out.unmatched_rows.push_back(i);
    for (int j = 0; j < C; ++j) out.unmatched_cols.push_back(j);
    return out;
  }
  double sum = 0.0;
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) {
      const double c = cost(i, j);
      if (std::isnan(c) || c == -kForbidden) throw InputError("assign: costs must be finite or +inf");
      if (std::isfinite(c)) sum += std::abs(c);
    }
  // Any matching with fewer forbidden edges is cheaper than any with more.
  const double big = 1.0 + 2.0 * sum;
  const int n = std::max(R, C);
  auto a = [&](int i, int j) -> double {
    if (i >= R || j >= C) return 0.0;
    const double c = cost(i, j);
    return std::isfinite(c) ? c : big;
  };

  // Shortest augmenting paths with potentials; 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_match(R, -1), col_match(C, -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1, c = j - 1;
    if (i < R && c < C && std::isfinite(cost(i, c))) {
      row_match[i] = c;
      col_match[c] = i;
    }
  }
  for (int i = 0; i < R; ++i) {
    if (row_match[i] >= 0) {
      out.matches.emplace_back(i, row_match[i]);
      out.total_cost += cost(i, row_match[i]);
    } else {
      out.unmatched_rows.push_back(i);
    }
  }
  for (int j = 0; j < C; ++j)
    if (col_match[j] < 0) out.unmatched_cols.push_back(j);
  return out;
}

/// Matching of maximum total score over all entries, keeping only matched
/// pairs whose score exceeds `min_score`. Scores must be finite.
inline std::vector<std::pair<int, int>> match_max_score(const Eigen::MatrixXd& score, double min_score = 0.0) {
  std::vector<std::pair<int, int>> out;
  if (score.size() == 0) return out;
  if (!score.allFinite()) throw InputError("match_max_score: scores must be finite");
  const double top = score.maxCoeff();
  const Assignment a = assign((top - score.array()).matrix());
  for (auto [i, j] : a.matches)
    if (score(i, j) > min_score) out.emplace_back(i, j);
  return out;
}

}  // namespace h4d
