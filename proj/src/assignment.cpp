#include "lflow/assignment.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lflow {

double solve_assignment(const std::vector<double>& cost, int n, std::vector<int>* assignment) {
    if (n <= 0) return 0.0;
    if (static_cast<int>(cost.size()) != n * n)
        throw std::invalid_argument("solve_assignment: cost matrix size mismatch");
    for (double c : cost)
        if (!std::isfinite(c)) throw std::invalid_argument("solve_assignment: non-finite cost");

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        minv.assign(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[i * n + row_to_col[i]];
    if (assignment) *assignment = row_to_col;
    return total;
}

}  // namespace lflow
