#pragma once

#include <vector>

namespace lflow {

// Exact balanced assignment (min-cost perfect matching on a dense n x n cost
// matrix) by shortest augmenting paths with potentials, O(n^3). Handles
// negative costs; the returned total is re-summed from the chosen entries in
// row order so it is bit-identical to a brute-force scan of the same
// permutation.
//
// cost is row-major n x n; assignment (optional) receives column of row i.
double solve_assignment(const std::vector<double>& cost, int n,
                        std::vector<int>* assignment = nullptr);

}  // namespace lflow
