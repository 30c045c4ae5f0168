#include "cplmix/assignment.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cplmix::assignment {

namespace {

void check_square(const std::vector<std::vector<double>>& score) {
  if (score.empty()) throw std::domain_error("assignment: empty matrix");
  for (const auto& row : score)
    if (row.size() != score.size())
      throw std::domain_error("assignment: matrix must be square");
}

}  // namespace

double permutation_score(const std::vector<std::vector<double>>& score,
                         const std::vector<std::size_t>& perm) {
  double s = 0.0;
  for (std::size_t i = 0; i < perm.size(); ++i) s += score[i][perm[i]];
  return s;
}

std::vector<std::size_t> best_permutation_exhaustive(
    const std::vector<std::vector<double>>& score) {
  check_square(score);
  const std::size_t n = score.size();
  std::vector<std::size_t> perm(n), best(n);
  std::iota(perm.begin(), perm.end(), 0);
  best = perm;
  double best_score = permutation_score(score, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double s = permutation_score(score, perm);
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  }
  return best;
}

std::vector<std::size_t> best_permutation_hungarian(
    const std::vector<std::vector<double>>& score) {
  check_square(score);
  const int n = static_cast<int>(score.size());
  // minimize cost = -score; 1-based arrays, shortest augmenting paths
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
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -score[i0 - 1][j - 1] - u[i0] - v[j];
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
    } while (j0);
  }
  std::vector<std::size_t> perm(n);
  for (int j = 1; j <= n; ++j)
    if (p[j]) perm[p[j] - 1] = static_cast<std::size_t>(j - 1);
  return perm;
}

std::vector<std::size_t> best_permutation(
    const std::vector<std::vector<double>>& score) {
  check_square(score);
  return score.size() <= 8 ? best_permutation_exhaustive(score)
                           : best_permutation_hungarian(score);
}

}  // namespace cplmix::assignment
