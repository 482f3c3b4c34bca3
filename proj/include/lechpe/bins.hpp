#pragma once
// Angle-bin geometry: C classes of width r degrees covering a symmetric range.
// Decoding a one-hot at bin i gives r * (i - (1+C)/2), which equals the bin
// center, so classification and expected-value regression share one grid.

#include <cmath>
#include <stdexcept>
#include <string>

#include "lechpe/matrix.hpp"

namespace lechpe {

struct AngleBinSpec {
    int num_bins = 66;
    double bin_width_deg = 3.0;
    double min_angle_deg = -99.0;

    double max_angle_deg() const { return min_angle_deg + num_bins * bin_width_deg; }

    void validate() const {
        if (num_bins < 2) throw std::invalid_argument("AngleBinSpec: num_bins must be >= 2");
        if (!(bin_width_deg > 0.0))
            throw std::invalid_argument("AngleBinSpec: bin_width_deg must be positive");
        // the expected-value decoding assumes a range symmetric about 0
        if (std::fabs(min_angle_deg + num_bins * bin_width_deg / 2.0) > 1e-9) {
            throw std::invalid_argument(
                "AngleBinSpec: range must be symmetric about 0 (min_angle_deg = -C*r/2), got "
                "min " +
                std::to_string(min_angle_deg));
        }
    }
};

// 1-indexed bin of an angle; bins are left-closed, right-open
inline int angle_to_bin(double angle_deg, const AngleBinSpec& spec) {
    if (!(angle_deg >= spec.min_angle_deg) || !(angle_deg < spec.max_angle_deg())) {
        throw std::out_of_range("angle_to_bin: angle " + std::to_string(angle_deg) +
                                " outside [" + std::to_string(spec.min_angle_deg) + ", " +
                                std::to_string(spec.max_angle_deg()) + ")");
    }
    int bin = static_cast<int>(std::floor((angle_deg - spec.min_angle_deg) / spec.bin_width_deg)) + 1;
    if (bin > spec.num_bins) bin = spec.num_bins;  // guards the exact upper edge under rounding
    return bin;
}

inline double bin_center_deg(int bin, const AngleBinSpec& spec) {
    if (bin < 1 || bin > spec.num_bins) {
        throw std::out_of_range("bin_center_deg: bin " + std::to_string(bin) + " outside [1, " +
                                std::to_string(spec.num_bins) + "]");
    }
    return spec.bin_width_deg * (bin - (1.0 + spec.num_bins) / 2.0);
}

// Cx1 column of per-bin decode weights r * (i - (1+C)/2), i = 1..C
inline Matrix decode_weights(const AngleBinSpec& spec) {
    Matrix w(spec.num_bins, 1);
    for (int i = 1; i <= spec.num_bins; ++i) {
        w(i - 1, 0) = spec.bin_width_deg * (i - (1.0 + spec.num_bins) / 2.0);
    }
    return w;
}

}  // namespace lechpe
