#include "rmfnn/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rmfnn::surrogate {

namespace {

using fidelity::Dataset;
using fidelity::Provenance;
using fidelity::Record;

// Rows with a real-provenance high-fidelity value, in record order.
std::vector<const Record*> real_hf_rows(const Dataset& data) {
    std::vector<const Record*> rows;
    for (const auto& r : data.records)
        if (r.q_hf && r.provenance == Provenance::Real) rows.push_back(&r);
    return rows;
}

ChannelMap fit_channel_map(const std::vector<const Record*>& rows) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto* r : rows) {
        lo = std::min(lo, r->q_lf);
        hi = std::max(hi, r->q_lf);
    }
    ChannelMap m;
    m.lo = lo;
    m.width = hi > lo ? hi - lo : 1.0;
    return m;
}

fidelity::BoxMap domain_map(const Dataset& data, InputScaling scaling) {
    // Builds consume raw datasets; a pre-normalized dataset already lives in
    // the unit box, so further mapping is the identity.
    if (scaling == InputScaling::Raw || !data.normalization.is_identity())
        return fidelity::BoxMap::identity(data.domain.dim());
    return fidelity::BoxMap::for_box(data.domain);
}

double predict_theta_qlf(const net::Network& network, const fidelity::BoxMap& theta_map,
                         const ChannelMap& qlf_map, std::span<const double> theta,
                         double q_lf) {
    const std::size_t d = theta_map.lo.size();
    if (theta.size() != d)
        throw std::invalid_argument("predict: theta has wrong dimension");
    std::vector<double> x(d + 1);
    theta_map.to_unit(theta, x.data());
    x[d] = qlf_map.to_unit(q_lf);
    return net::forward(network, x)[0];
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::RMFNN: return "rmfnn";
        case Method::RMFNN_ALT: return "rmfnn_alt";
        case Method::MFNN: return "mfnn";
        case Method::HFNN: return "hfnn";
        case Method::HFM: return "hfm";
    }
    return "?";
}

Method method_from_name(const std::string& s) {
    if (s == "rmfnn") return Method::RMFNN;
    if (s == "rmfnn_alt") return Method::RMFNN_ALT;
    if (s == "mfnn") return Method::MFNN;
    if (s == "hfnn") return Method::HFNN;
    if (s == "hfm") return Method::HFM;
    throw std::invalid_argument("unknown method '" + s + "'");
}

double ResidualSurrogate::predict(std::span<const double> theta, double q_lf) const {
    return predict_theta_qlf(network, theta_map, qlf_map, theta, q_lf);
}

double TargetSurrogate::predict(std::span<const double> theta) const {
    const std::size_t d = theta_map.lo.size();
    if (theta.size() != d) throw std::invalid_argument("predict: theta has wrong dimension");
    std::vector<double> x(d);
    theta_map.to_unit(theta, x.data());
    return net::forward(network, x)[0];
}

double MfnnSurrogate::predict(std::span<const double> theta, double q_lf) const {
    return predict_theta_qlf(network, theta_map, qlf_map, theta, q_lf);
}

double rmfnn_alt_predict(const CompositeSurrogate& c, const std::vector<double>& theta) {
    const double lf = c.lf_network ? c.lf_network->predict(theta) : c.lf_direct(theta);
    return lf + c.residual.predict(theta, lf);
}

std::pair<ResidualSurrogate, net::TrainReport> train_resnn(
    const Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling) {
    const std::size_t d = data.domain.dim();
    if (spec.input_dim != d + 1)
        throw std::invalid_argument("train_resnn: spec.input_dim must be d+1 = " +
                                    std::to_string(d + 1));
    if (spec.output_dim != 1)
        throw std::invalid_argument("train_resnn: spec.output_dim must be 1");

    const auto rows = real_hf_rows(data);
    if (rows.empty())
        throw std::invalid_argument(
            "train_resnn: no records with real high-fidelity values");

    ResidualSurrogate s;
    s.theta_map = domain_map(data, scaling);
    s.qlf_map = fit_channel_map(rows);

    net::Samples samples;
    samples.inputs = Matrix(rows.size(), d + 1);
    samples.targets = Matrix(rows.size(), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Record& r = *rows[i];
        s.theta_map.to_unit(r.theta, samples.inputs.row(i));
        samples.inputs(i, d) = s.qlf_map.to_unit(r.q_lf);
        samples.targets(i, 0) = *r.q_hf - r.q_lf;
    }

    auto result = net::train(samples, spec, cfg);
    s.network = std::move(result.network);
    return {std::move(s), std::move(result.report)};
}

Dataset synthesize_hf(const ResidualSurrogate& res, const Dataset& data) {
    Dataset out = data;
    for (auto& r : out.records) {
        if (r.q_hf) continue;
        r.q_hf = r.q_lf + res.predict(r.theta, r.q_lf);
        r.provenance = Provenance::Synthetic;
    }
    return out;
}

std::pair<TargetSurrogate, net::TrainReport> train_dnn(
    const Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling) {
    const std::size_t d = data.domain.dim();
    if (spec.input_dim != d)
        throw std::invalid_argument("train_dnn: spec.input_dim must be d = " +
                                    std::to_string(d));
    if (spec.output_dim != 1)
        throw std::invalid_argument("train_dnn: spec.output_dim must be 1");
    for (std::size_t i = 0; i < data.records.size(); ++i)
        if (!data.records[i].q_hf)
            throw std::invalid_argument("train_dnn: record " + std::to_string(i) +
                                        " has no q_hf target");

    TargetSurrogate s;
    s.theta_map = domain_map(data, scaling);
    s.method = Method::RMFNN;

    net::Samples samples;
    samples.inputs = Matrix(data.size(), d);
    samples.targets = Matrix(data.size(), 1);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Record& r = data.records[i];
        s.theta_map.to_unit(r.theta, samples.inputs.row(i));
        samples.targets(i, 0) = *r.q_hf;
    }

    auto result = net::train(samples, spec, cfg);
    s.network = std::move(result.network);
    return {std::move(s), std::move(result.report)};
}

RmfnnBuild rmfnn_build(fidelity::FidelityPair& pair, const fidelity::DesignPlan& plan,
                       const net::NetworkSpec& resnn_spec, const net::TrainConfig& resnn_cfg,
                       const net::NetworkSpec& dnn_spec, const net::TrainConfig& dnn_cfg,
                       InputScaling scaling) {
    RmfnnBuild out;
    Dataset assembled = fidelity::assemble(pair, plan);
    auto [resnn, resnn_report] = train_resnn(assembled, resnn_spec, resnn_cfg, scaling);
    out.dataset = synthesize_hf(resnn, assembled);
    auto [dnn, dnn_report] = train_dnn(out.dataset, dnn_spec, dnn_cfg, scaling);
    out.surrogate = std::move(dnn);
    out.residual = std::move(resnn);
    out.resnn_report = std::move(resnn_report);
    out.dnn_report = std::move(dnn_report);
    return out;
}

std::pair<MfnnSurrogate, net::TrainReport> mfnn_build(
    const Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling) {
    const std::size_t d = data.domain.dim();
    if (spec.input_dim != d + 1)
        throw std::invalid_argument("mfnn_build: spec.input_dim must be d+1 = " +
                                    std::to_string(d + 1));
    const auto rows = real_hf_rows(data);
    if (rows.empty())
        throw std::invalid_argument("mfnn_build: no records with real high-fidelity values");

    MfnnSurrogate s;
    s.theta_map = domain_map(data, scaling);
    s.qlf_map = fit_channel_map(rows);

    net::Samples samples;
    samples.inputs = Matrix(rows.size(), d + 1);
    samples.targets = Matrix(rows.size(), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Record& r = *rows[i];
        s.theta_map.to_unit(r.theta, samples.inputs.row(i));
        samples.inputs(i, d) = s.qlf_map.to_unit(r.q_lf);
        samples.targets(i, 0) = *r.q_hf;
    }

    auto result = net::train(samples, spec, cfg);
    s.network = std::move(result.network);
    return {std::move(s), std::move(result.report)};
}

std::pair<TargetSurrogate, net::TrainReport> hfnn_build(
    const Dataset& data, const net::NetworkSpec& spec, const net::TrainConfig& cfg,
    InputScaling scaling) {
    const auto rows = real_hf_rows(data);
    if (rows.empty())
        throw std::invalid_argument("hfnn_build: no records with real high-fidelity values");

    Dataset real_only;
    real_only.domain = data.domain;
    real_only.normalization = data.normalization;
    for (const auto* r : rows) real_only.records.push_back(*r);

    auto [s, report] = train_dnn(real_only, spec, cfg, scaling);
    s.method = Method::HFNN;
    return {std::move(s), std::move(report)};
}

double conjecture_bound(double k, double l, double f_inf_norm, double c1, double c2) {
    if (!(k >= 1.0) || !(l >= 1.0))
        throw std::invalid_argument("conjecture_bound: K and L must be >= 1");
    return c1 * f_inf_norm * f_inf_norm / (k * l) +
           c2 * (1.0 / (k * k) + 1.0 / (l * l * l * l));
}

}  // namespace rmfnn::surrogate
