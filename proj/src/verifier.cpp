#include "hnext/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "hnext/rng.hpp"

namespace hnext {
namespace {

constexpr double kDegToRad = 3.141592653589793238462643383279502884 / 180.0;

void require_upright(const RotatedDataset& ds, const char* what) {
    if (ds.size() == 0) throw DataError(std::string(what) + ": empty split");
    for (double a : ds.angles)
        if (a != 0.0)
            throw DataError(std::string(what) +
                            ": expects upright images (rotation is applied inside)");
}

struct PairKey {
    std::string layer;
    int order;
    double theta;
    bool operator<(const PairKey& o) const {
        if (layer != o.layer) return layer < o.layer;
        if (order != o.order) return order < o.order;
        return theta < o.theta;
    }
};

}  // namespace

double EquivarianceReport::max_abs_residual() const {
    double worst = 0.0;
    for (const EquivarianceRow& r : rows) worst = std::max(worst, r.abs_residual);
    return worst;
}

double EquivarianceReport::mean_abs_residual() const {
    if (rows.empty()) return 0.0;
    double sum = 0.0;
    for (const EquivarianceRow& r : rows) sum += r.abs_residual;
    return sum / static_cast<double>(rows.size());
}

double EquivarianceReport::mean_mag_residual() const {
    if (rows.empty()) return 0.0;
    double sum = 0.0;
    for (const EquivarianceRow& r : rows) sum += r.mag_residual;
    return sum / static_cast<double>(rows.size());
}

double InvarianceReport::invariance_gap() const {
    double acc0 = -1.0;
    double acc45 = -1.0;
    for (std::size_t i = 0; i < angles_deg.size(); ++i) {
        if (angles_deg[i] == 0.0) acc0 = accuracy[i];
        if (angles_deg[i] == 45.0) acc45 = accuracy[i];
    }
    if (acc0 < 0.0 || acc45 < 0.0)
        throw DataError("invariance gap needs accuracies at 0 and 45 degrees");
    return acc0 - acc45;
}

std::vector<EquivarianceRow> phase_law_residual(const Model& model, const ParamStore& params,
                                                std::vector<BatchNormState>& bn_states,
                                                const RealGrid& input, double theta_rad,
                                                int order) {
    if (order < 0 || order > model.config().max_order)
        throw WiringError("phase_law_residual: order not carried by this configuration");
    (void)bn_states;

    // batch-statistics mode: per-sample spatial statistics are rotation
    // invariant on masked grids and keep every layer at unit scale, so the
    // residual thresholds compare like against like at any depth
    TapRecorder taps_plain;
    TapRecorder taps_rot;
    model.forward({input}, params, nullptr, true, 0.0, nullptr, &taps_plain);
    model.forward({rotate_resample(input, theta_rad)}, params, nullptr, true, 0.0, nullptr,
                  &taps_rot);

    std::vector<EquivarianceRow> rows;
    const cplx phase{std::cos(order * theta_rad), std::sin(order * theta_rad)};
    for (std::size_t layer = 0; layer < taps_plain[0].size(); ++layer) {
        const LayerTap& plain = taps_plain[0][layer];
        const LayerTap& rot = taps_rot[0][layer];
        if (!plain.bundle.has_order(order)) continue;
        EquivarianceRow row;
        row.layer = plain.name;
        row.order = order;
        row.theta_deg = theta_rad / kDegToRad;
        double peak = 0.0;
        for (std::size_t c = 0; c < plain.bundle.channels(order).size(); ++c) {
            const ComplexGrid rotated = rotate_resample(plain.bundle.channels(order)[c],
                                                        theta_rad);
            const ComplexGrid& observed = rot.bundle.channels(order)[c];
            for (std::size_t i = 0; i < rotated.size(); ++i) {
                const cplx expected = phase * rotated.values()[i];
                row.abs_residual = std::max(row.abs_residual,
                                            std::abs(observed.values()[i] - expected));
                peak = std::max(peak, std::abs(plain.bundle.channels(order)[c].values()[i]));
            }
            // magnitude comparison: |F(rot x)| vs rot(|F x|)
            RealGrid mag_plain(rotated.height(), rotated.width());
            const ComplexGrid& plain_grid = plain.bundle.channels(order)[c];
            for (std::size_t i = 0; i < plain_grid.size(); ++i)
                mag_plain.values()[i] = std::abs(plain_grid.values()[i]);
            const RealGrid mag_rotated = rotate_resample(mag_plain, theta_rad);
            for (std::size_t i = 0; i < mag_rotated.size(); ++i)
                row.mag_residual = std::max(
                    row.mag_residual,
                    std::abs(std::abs(observed.values()[i]) - mag_rotated.values()[i]));
        }
        row.mag_residual /= std::max(peak, 1e-30);
        rows.push_back(std::move(row));
    }
    return rows;
}

EquivarianceReport measure_equivariance(const Model& model, const ParamStore& params,
                                        std::vector<BatchNormState>& bn_states,
                                        const std::vector<RealGrid>& inputs,
                                        const std::vector<double>& angles_deg) {
    EquivarianceReport report;
    report.upscale = model.config().upscale;
    report.mask = model.config().mask;
    report.filter_mode = model.config().filter_mode;

    std::map<PairKey, EquivarianceRow> agg;
    for (const RealGrid& input : inputs) {
        for (double angle : angles_deg) {
            for (int order = 0; order <= model.config().max_order; ++order) {
                const auto rows =
                    phase_law_residual(model, params, bn_states, input, angle * kDegToRad, order);
                for (const EquivarianceRow& row : rows) {
                    PairKey key{row.layer, row.order, row.theta_deg};
                    auto it = agg.find(key);
                    if (it == agg.end()) {
                        agg.emplace(key, row);
                    } else {
                        it->second.abs_residual =
                            std::max(it->second.abs_residual, row.abs_residual);
                        it->second.mag_residual =
                            std::max(it->second.mag_residual, row.mag_residual);
                    }
                }
            }
        }
    }
    for (auto& [key, row] : agg) report.rows.push_back(row);
    return report;
}

double invariance_gap(const Model& model, const ParamStore& params,
                      std::vector<BatchNormState>& bn_states, const RotatedDataset& valid,
                      int limit) {
    require_upright(valid, "invariance_gap");
    const double acc0 =
        evaluate_accuracy(model, params, bn_states, valid, 0.0, limit);
    const double acc45 =
        evaluate_accuracy(model, params, bn_states, valid, 45.0, limit);
    return acc0 - acc45;
}

double head_drift(const Model& model, const ParamStore& params,
                  const std::vector<RealGrid>& probes, double theta_rad) {
    double acc = 0.0;
    for (const RealGrid& x : probes) {
        ForwardCache plain;
        ForwardCache rotated;
        model.forward({x}, params, nullptr, true, 0.0, &plain);
        model.forward({rotate_resample(x, theta_rad)}, params, nullptr, true, 0.0, &rotated);
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < plain.features[0].size(); ++i) {
            const double d = plain.features[0][i] - rotated.features[0][i];
            num += d * d;
            den += plain.features[0][i] * plain.features[0][i];
        }
        acc += std::sqrt(num / (den + 1e-30));
    }
    return acc / static_cast<double>(probes.size());
}

InvarianceReport fixed_angle_table(const Model& model, const ParamStore& params,
                                   std::vector<BatchNormState>& bn_states,
                                   const RotatedDataset& test,
                                   const std::vector<double>& angles_deg, int limit) {
    require_upright(test, "fixed_angle_table");
    InvarianceReport report;
    report.angles_deg = angles_deg;
    double sum = 0.0;
    for (double angle : angles_deg) {
        const double acc = evaluate_accuracy(model, params, bn_states, test, angle, limit);
        report.accuracy.push_back(acc);
        sum += acc;
    }
    report.overall_accuracy = angles_deg.empty() ? 0.0 : sum / angles_deg.size();
    return report;
}

namespace {

// separable (1,2,1)/4 blur with edge clamping
RealGrid binomial_blur(const RealGrid& g) {
    const int h = g.height();
    const int w = g.width();
    RealGrid tmp(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double left = g.at(i, std::max(j - 1, 0));
            const double right = g.at(i, std::min(j + 1, w - 1));
            tmp.at(i, j) = 0.25 * left + 0.5 * g.at(i, j) + 0.25 * right;
        }
    RealGrid out(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double up = tmp.at(std::max(i - 1, 0), j);
            const double down = tmp.at(std::min(i + 1, h - 1), j);
            out.at(i, j) = 0.25 * up + 0.5 * tmp.at(i, j) + 0.25 * down;
        }
    return out;
}

}  // namespace

std::vector<RealGrid> make_probe_inputs(int count, int size, bool masked, std::uint64_t seed,
                                        int smooth_passes) {
    Rng rng(seed);
    const RealGrid mask = make_circular_mask(size, size);
    std::vector<RealGrid> inputs;
    inputs.reserve(count);
    for (int i = 0; i < count; ++i) {
        RealGrid g(size, size);
        for (double& v : g.values()) v = rng.uniform01();
        for (int p = 0; p < smooth_passes; ++p) g = binomial_blur(g);
        inputs.push_back(masked ? apply_mask(g, mask) : g);
    }
    return inputs;
}

void write_invariance_csv(const InvarianceReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "angle_deg,accuracy\n";
    char buf[64];
    for (std::size_t i = 0; i < report.angles_deg.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%g,%.6f\n", report.angles_deg[i], report.accuracy[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "OA,%.6f\n", report.overall_accuracy);
    out << buf;
}

void write_equivariance_csv(const EquivarianceReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    out << "layer,order,theta_deg,abs_residual,mag_residual\n";
    char buf[160];
    for (const EquivarianceRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%g,%.12e,%.12e\n", r.layer.c_str(), r.order,
                      r.theta_deg, r.abs_residual, r.mag_residual);
        out << buf;
    }
}

}  // namespace hnext
