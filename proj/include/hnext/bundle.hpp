#pragma once

#include <vector>

#include "hnext/grid.hpp"

namespace hnext {

// Channels grouped by rotation order m. Orders form the integer interval
// [min_order, min_order + streams.size()) and must contain 0. All grids in a
// bundle share one spatial size.
struct StreamBundle {
    int min_order = 0;
    std::vector<std::vector<ComplexGrid>> streams;

    int num_orders() const { return static_cast<int>(streams.size()); }
    int max_order() const { return min_order + num_orders() - 1; }
    bool has_order(int m) const { return m >= min_order && m <= max_order(); }

    std::vector<ComplexGrid>& channels(int m) { return streams[m - min_order]; }
    const std::vector<ComplexGrid>& channels(int m) const { return streams[m - min_order]; }

    int height() const { return streams.at(0).at(0).height(); }
    int width() const { return streams.at(0).at(0).width(); }

    int total_channels() const {
        int n = 0;
        for (const auto& s : streams) n += static_cast<int>(s.size());
        return n;
    }

    void validate() const;

    static StreamBundle single(ComplexGrid grid, int order = 0);
};

// Rotates every channel of every stream (used by the verifier to evaluate the
// phase law on whole bundles).
StreamBundle rotate_bundle(const StreamBundle& input, double theta);

// max over pixels/channels of |a - b|
double max_abs_diff(const StreamBundle& a, const StreamBundle& b);

}  // namespace hnext
