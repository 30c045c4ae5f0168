#pragma once

#include <cstddef>
#include <vector>

namespace cplmix::assignment {

// Maximize sum_i score[i][perm[i]] over permutations. `score` must be
// square. Exhaustive search; factorial cost, callers keep n <= 8.
std::vector<std::size_t> best_permutation_exhaustive(
    const std::vector<std::vector<double>>& score);

// Jonker-Volgenant style shortest augmenting path solver, O(n^3), same
// maximization contract as the exhaustive version.
std::vector<std::size_t> best_permutation_hungarian(
    const std::vector<std::vector<double>>& score);

// Dispatches on size: exhaustive for n <= 8, Hungarian otherwise.
std::vector<std::size_t> best_permutation(
    const std::vector<std::vector<double>>& score);

double permutation_score(const std::vector<std::vector<double>>& score,
                         const std::vector<std::size_t>& perm);

}  // namespace cplmix::assignment
