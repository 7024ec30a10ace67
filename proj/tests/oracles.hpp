#pragma once

// Reference computations written independently of the library code paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

// rank_vectors[r][i] is ranker r's rank of option i + 1. Counts how many
// rankers place each option in each position, scores positions n-1 .. 0 and
// orders by score then option number.
inline std::vector<int> borda_order(const std::vector<std::vector<int>>& rank_vectors) {
  const int n = static_cast<int>(rank_vectors.front().size());
  std::vector<std::vector<long long>> at_position(n, std::vector<long long>(n, 0));
  for (const auto& rv : rank_vectors) {
    std::vector<int> option_at(n);
    for (int i = 0; i < n; ++i) option_at[rv[i] - 1] = i;
    for (int pos = 0; pos < n; ++pos) ++at_position[option_at[pos]][pos];
  }
  std::vector<long long> score(n, 0);
  for (int opt = 0; opt < n; ++opt) {
    for (int pos = 0; pos < n; ++pos) score[opt] += at_position[opt][pos] * (n - 1 - pos);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  for (int& o : order) ++o;
  return order;
}

// Textbook closed form: W = (12 sum R_j^2 - 3 m^2 n (n+1)^2) / (m^2 n (n^2 - 1)).
inline double w_rank_sum(const std::vector<std::vector<int>>& rows) {
  const double m = static_cast<double>(rows.size());
  const std::size_t n_items = rows.front().size();
  const double n = static_cast<double>(n_items);
  double sum_sq = 0;
  for (std::size_t j = 0; j < n_items; ++j) {
    double r = 0;
    for (const auto& row : rows) r += row[j];
    sum_sq += r * r;
  }
  return (12.0 * sum_sq - 3.0 * m * m * n * (n + 1) * (n + 1)) / (m * m * n * (n * n - 1));
}

// W from the mean pairwise Spearman correlation: W = ((m - 1) rbar + 1) / m.
inline double w_spearman(const std::vector<std::vector<int>>& rows) {
  const std::size_t m = rows.size();
  const double n = static_cast<double>(rows.front().size());
  double sum = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      double d2 = 0;
      for (std::size_t j = 0; j < rows[a].size(); ++j) {
        const double d = rows[a][j] - rows[b][j];
        d2 += d * d;
      }
      sum += 1.0 - 6.0 * d2 / (n * (n * n - 1));
      ++pairs;
    }
  }
  const double rbar = sum / static_cast<double>(pairs);
  return ((static_cast<double>(m) - 1) * rbar + 1) / static_cast<double>(m);
}

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double fa, double fm, double fb, double whole, double eps,
                               int depth) {
  const double m = (a + b) / 2;
  const double lm = (a + m) / 2;
  const double rm = (m + b) / 2;
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) <= 15 * eps) {
    return left + right + (left + right - whole) / 15;
  }
  return adaptive_simpson(f, a, m, fa, flm, fm, left, eps / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, eps / 2, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double eps) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f((a + b) / 2);
  return adaptive_simpson(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), eps, 60);
}

// Chi-square survival function by quadrature of the density. Integrates in
// u = sqrt(t) so the df = 1 singularity at 0 disappears.
inline double chi_square_sf(double x, double df) {
  if (x <= 0) return 1.0;
  const double log_norm = (df / 2) * std::log(2.0) + std::lgamma(df / 2);
  auto g = [&](double u) {
    if (u == 0) return df == 1 ? 2.0 * std::exp(-log_norm) : 0.0;
    return 2.0 * std::exp((df - 1) * std::log(u) - u * u / 2 - log_norm);
  };
  return 1.0 - integrate(g, 0.0, std::sqrt(x), 1e-13);
}

// Every sequence of m permutations of 1..n.
inline void for_each_profile(int m, int n,
                             const std::function<void(const std::vector<std::vector<int>>&)>& fn) {
  std::vector<std::vector<int>> perms;
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 1);
  do perms.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));

  std::vector<std::size_t> idx(m, 0);
  std::vector<std::vector<int>> rows(m);
  for (;;) {
    for (int r = 0; r < m; ++r) rows[r] = perms[idx[r]];
    fn(rows);
    int r = m - 1;
    while (r >= 0 && ++idx[r] == perms.size()) idx[r--] = 0;
    if (r < 0) break;
  }
}

}  // namespace oracle
