#pragma once

#include <optional>
#include <utility>

#include "rmfnn/fidelity.hpp"
#include "rmfnn/net.hpp"

namespace rmfnn::surrogate {

enum class Method { RMFNN, RMFNN_ALT, MFNN, HFNN, HFM };
const char* method_name(Method m);
Method method_from_name(const std::string& s);

/// How theta enters the networks: mapped to the unit box (the default, used
/// whenever the domain is offset or anisotropic) or fed raw (zero-centered
/// domains train markedly better unmapped).
enum class InputScaling { UnitBox, Raw };

/// Min-max map for the Q_LF input channel, fitted on training data.
struct ChannelMap {
    double lo = 0.0;
    double width = 1.0;
    double to_unit(double v) const { return (v - lo) / width; }
};

/// Small network learning the residual F(theta, Q_LF) = Q_HF - Q_LF.
/// Inputs are (theta in unit box, min-max normalized q_lf); the target is raw.
struct ResidualSurrogate {
    net::Network network;
    fidelity::BoxMap theta_map;
    ChannelMap qlf_map;

    double predict(std::span<const double> theta, double q_lf) const;
};

/// Deep surrogate for theta -> Q_HF (or Q_LF when used as the composite's
/// low-fidelity block).
struct TargetSurrogate {
    net::Network network;
    fidelity::BoxMap theta_map;
    Method method = Method::RMFNN;

    double predict(std::span<const double> theta) const;
};

/// Baseline learning (theta, Q_LF) -> Q_HF directly; needs a Q_LF value at
/// query time.
struct MfnnSurrogate {
    net::Network network;
    fidelity::BoxMap theta_map;
    ChannelMap qlf_map;

    double predict(std::span<const double> theta, double q_lf) const;
};

/// Composite variant: prediction = lf(theta) + residual(theta, lf(theta)),
/// where lf is either a trained network or the direct Q_LF evaluator.
struct CompositeSurrogate {
    std::optional<TargetSurrogate> lf_network;
    fidelity::Evaluator lf_direct;  // used when lf_network is empty
    ResidualSurrogate residual;
};

double rmfnn_alt_predict(const CompositeSurrogate& c, const std::vector<double>& theta);

/// Trains the residual network on the real-provenance records (theta, q_lf)
/// -> (q_hf - q_lf). Throws when no usable records exist.
std::pair<ResidualSurrogate, net::TrainReport> train_resnn(
    const fidelity::Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling = InputScaling::UnitBox);

/// Fills every missing q_hf with q_lf + residual prediction and marks the
/// record synthetic. Existing q_hf values are untouched.
fidelity::Dataset synthesize_hf(const ResidualSurrogate& res, const fidelity::Dataset& data);

/// Trains theta -> q_hf on all records (real + synthetic); every record must
/// carry q_hf.
std::pair<TargetSurrogate, net::TrainReport> train_dnn(
    const fidelity::Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling = InputScaling::UnitBox);

struct RmfnnBuild {
    TargetSurrogate surrogate;
    ResidualSurrogate residual;
    fidelity::Dataset dataset;
    net::TrainReport resnn_report;
    net::TrainReport dnn_report;
};

/// Steps 1-3 end to end: assemble, train the residual net, synthesize
/// high-fidelity data, train the deep surrogate.
RmfnnBuild rmfnn_build(fidelity::FidelityPair& pair, const fidelity::DesignPlan& plan,
                       const net::NetworkSpec& resnn_spec, const net::TrainConfig& resnn_cfg,
                       const net::NetworkSpec& dnn_spec, const net::TrainConfig& dnn_cfg,
                       InputScaling scaling = InputScaling::UnitBox);

std::pair<MfnnSurrogate, net::TrainReport> mfnn_build(
    const fidelity::Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling = InputScaling::UnitBox);

/// Trains theta -> q_hf on real-provenance records only.
std::pair<TargetSurrogate, net::TrainReport> hfnn_build(
    const fidelity::Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling = InputScaling::UnitBox);

/// C1 ||f||_inf^2 / (K L) + C2 (K^-2 + L^-4)
double conjecture_bound(double k, double l, double f_inf_norm, double c1, double c2);

}  // namespace rmfnn::surrogate
