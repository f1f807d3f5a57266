#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "vpd/corpus.hpp"

namespace dtw_oracle {

// Walks every sequence of symmetricP2 steps from (0,0) and keeps the
// cheapest one that lands exactly on (n-1, m-1). Exponential; short inputs only.
inline double brute_force(const vpd::FeatureSequence& a, const vpd::FeatureSequence& b) {
    const int n = static_cast<int>(a.rows()), m = static_cast<int>(b.rows());
    auto d = [&](int i, int j) { return (a.row(i).cast<double>() - b.row(j).cast<double>()).norm(); };
    double best = std::numeric_limits<double>::infinity();
    auto walk = [&](auto&& self, int i, int j, double acc) -> void {
        if (i == n - 1 && j == m - 1) {
            best = std::min(best, acc);
            return;
        }
        if (i + 2 < n && j + 3 < m)
            self(self, i + 2, j + 3, acc + 2 * d(i + 1, j + 1) + 2 * d(i + 2, j + 2) + d(i + 2, j + 3));
        if (i + 1 < n && j + 1 < m) self(self, i + 1, j + 1, acc + 2 * d(i + 1, j + 1));
        if (i + 3 < n && j + 2 < m)
            self(self, i + 3, j + 2, acc + 2 * d(i + 1, j + 1) + 2 * d(i + 2, j + 2) + d(i + 3, j + 2));
    };
    walk(walk, 0, 0, 2 * d(0, 0));
    return std::isinf(best) ? best : best / double(n + m);
}

}  // namespace dtw_oracle
