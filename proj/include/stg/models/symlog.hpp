// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdlib>

namespace stg::models {

// Symmetric log of the signed index gap: sign(j - i) * ln(1 + |j - i|).
inline double symlog_distance(long long i, long long j) {
    const long long gap = j - i;
    if (gap == 0) return 0.0;
    const double mag = std::log1p(static_cast<double>(std::llabs(gap)));
    return gap > 0 ? mag : -mag;
}

}  // namespace stg::models
