#pragma once

#include <string>
#include <vector>

#include "hnext/data.hpp"
#include "hnext/model.hpp"
#include "hnext/trainer.hpp"

namespace hnext {

// One aggregated phase-law measurement: max absolute residual of
// F(rot x)[m] - e^{im theta} rot(F(x)[m]) over pixels and probe inputs, plus
// the magnitude residual relative to the layer's peak magnitude.
struct EquivarianceRow {
    std::string layer;
    int order = 0;
    double theta_deg = 0.0;
    double abs_residual = 0.0;
    double mag_residual = 0.0;
};

struct EquivarianceReport {
    std::vector<EquivarianceRow> rows;
    int upscale = 1;
    bool mask = false;
    FilterMode filter_mode = FilterMode::HNEXT;

    double max_abs_residual() const;
    double mean_abs_residual() const;
    double mean_mag_residual() const;
};

struct InvarianceReport {
    std::vector<double> angles_deg;
    std::vector<double> accuracy;
    double overall_accuracy = 0.0;  // unweighted mean over the fixed angles

    double invariance_gap() const;  // accuracy@0 - accuracy@45 when both present
};

// Per-layer phase-law residuals for one input and one angle; order m must be
// carried by the model's streams.
std::vector<EquivarianceRow> phase_law_residual(const Model& model, const ParamStore& params,
                                                std::vector<BatchNormState>& bn_states,
                                                const RealGrid& input, double theta_rad,
                                                int order);

// Max-aggregated residuals over a set of probe inputs and angles, all layers
// and all orders.
EquivarianceReport measure_equivariance(const Model& model, const ParamStore& params,
                                        std::vector<BatchNormState>& bn_states,
                                        const std::vector<RealGrid>& inputs,
                                        const std::vector<double>& angles_deg);

// acc@0 - acc@45 over the validation split (images must be upright; the
// rotation is applied inside).
double invariance_gap(const Model& model, const ParamStore& params,
                      std::vector<BatchNormState>& bn_states, const RotatedDataset& valid,
                      int limit = 0);

// Mean relative drift of the pooled feature vector under rotation by theta:
// ||features(rot x) - features(x)|| / ||features(x)||, averaged over probes.
// The scalar behind the head-drift ordering comparisons.
double head_drift(const Model& model, const ParamStore& params,
                  const std::vector<RealGrid>& probes, double theta_rad);

// Accuracy at each requested angle plus the unweighted mean (OA). Input
// images must be upright.
InvarianceReport fixed_angle_table(const Model& model, const ParamStore& params,
                                   std::vector<BatchNormState>& bn_states,
                                   const RotatedDataset& test,
                                   const std::vector<double>& angles_deg, int limit = 0);

// uniform noise probes, circularly masked when the config masks its channels;
// smooth_passes > 0 applies that many separable binomial blurs, giving
// band-limited probes for the arbitrary-angle ordering checks
std::vector<RealGrid> make_probe_inputs(int count, int size, bool masked, std::uint64_t seed,
                                        int smooth_passes = 0);

// CSV schemas: `angle_deg,accuracy` rows then `OA,<value>`; equivariance
// reports as `layer,order,theta_deg,abs_residual,mag_residual`.
void write_invariance_csv(const InvarianceReport& report, const std::string& path);
void write_equivariance_csv(const EquivarianceReport& report, const std::string& path);

}  // namespace hnext
