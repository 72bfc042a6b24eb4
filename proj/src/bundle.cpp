#include "hnext/bundle.hpp"

#include <algorithm>

namespace hnext {

void StreamBundle::validate() const {
    if (streams.empty()) throw WiringError("bundle has no streams");
    if (!has_order(0)) throw WiringError("order interval must contain 0");
    int h = -1;
    int w = -1;
    for (const auto& channels : streams) {
        for (const ComplexGrid& g : channels) {
            if (h < 0) {
                h = g.height();
                w = g.width();
            } else if (g.height() != h || g.width() != w) {
                throw ShapeError("bundle channels disagree on spatial size");
            }
        }
    }
}

StreamBundle StreamBundle::single(ComplexGrid grid, int order) {
    StreamBundle b;
    b.min_order = std::min(order, 0);
    b.streams.resize(static_cast<std::size_t>(std::max(order, 0) - b.min_order + 1));
    b.streams[order - b.min_order].push_back(std::move(grid));
    return b;
}

StreamBundle rotate_bundle(const StreamBundle& input, double theta) {
    StreamBundle out;
    out.min_order = input.min_order;
    out.streams.resize(input.streams.size());
    for (std::size_t s = 0; s < input.streams.size(); ++s) {
        out.streams[s].reserve(input.streams[s].size());
        for (const ComplexGrid& g : input.streams[s])
            out.streams[s].push_back(rotate_resample(g, theta));
    }
    return out;
}

double max_abs_diff(const StreamBundle& a, const StreamBundle& b) {
    double worst = 0.0;
    for (std::size_t s = 0; s < a.streams.size(); ++s) {
        for (std::size_t c = 0; c < a.streams[s].size(); ++c) {
            const auto& va = a.streams[s][c].values();
            const auto& vb = b.streams[s][c].values();
            for (std::size_t i = 0; i < va.size(); ++i)
                worst = std::max(worst, std::abs(va[i] - vb[i]));
        }
    }
    return worst;
}

}  // namespace hnext
