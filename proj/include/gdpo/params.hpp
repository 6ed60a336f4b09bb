#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gdpo/errors.hpp"

namespace gdpo {

// Flat ordered list of 64-bit reals; the layout is a pure function of the
// owning architecture's metadata.
using ParamVector = std::vector<double>;

inline void require_finite(const ParamVector& v, const std::string& what) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericError(what + ": non-finite entry at index " + std::to_string(i));
}

}  // namespace gdpo
