#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rmfnn/fidelity.hpp"
#include "rmfnn/net.hpp"
#include "rmfnn/problems.hpp"
#include "rmfnn/surrogate.hpp"

namespace rmfnn::uq {

/// One tolerance level of a study: solver resolutions, sample counts, and
/// the network/training configurations for both networks.
struct ToleranceBudget {
    problems::ProblemId problem;
    double eps_tol = 0.0;
    unsigned long long n_theta = 0;
    double h_hf = 0.0;
    double h_lf = 0.0;
    std::size_t n = 0;
    std::size_t n_i = 0;
    std::size_t stride = 0;      // theta_I selection stride
    double order_q = 2.0;        // discretization order q
    double gamma = 1.0;          // time-space dimension exponent
    double p_exponent = 0.5;     // N ~ eps^-p
    bool extrapolated = false;   // true when scaled off a table row
    surrogate::InputScaling input_scaling = surrogate::InputScaling::UnitBox;
    net::NetworkSpec resnn_spec, dnn_spec;
    net::TrainConfig resnn_cfg, dnn_cfg;
};

/// Tabulated rows for the IVP and wave studies, returned verbatim for the
/// six preset tolerance levels. Other tolerances require
/// allow_scaling and apply the stated scalings (N_theta ~ eps^-2,
/// h ~ eps^(1/q), N ~ eps^-p) anchored at the nearest row.
ToleranceBudget plan_tolerance(problems::ProblemId problem, double eps_tol,
                               bool allow_scaling = false);

struct McEstimate {
    double value = 0.0;
    double stderr_value = 0.0;
    unsigned long long n_theta = 0;
    std::uint64_t seed = 0;
};

using Model = std::function<double(const std::vector<double>&)>;

/// Plain Monte Carlo over i.i.d. uniform draws from the domain box.
McEstimate mc_estimate(const Model& model, const fidelity::Box& domain,
                       unsigned long long n_theta, std::uint64_t seed);

struct ErrorReport {
    double eps_mse = 0.0;
    double eps_abs = 0.0;
    double eps_rel = 0.0;
    bool rel_defined = true;
    unsigned long long n_eval = 0;
    std::string reference;
};

enum class EvalDesign { Grid, Random };

/// MSE of model vs exact over the evaluation design, plus absolute/relative
/// errors in the mean. The reference E[Q] defaults to the same-design
/// sample mean of `exact`; pass reference_mean to use an external one.
ErrorReport error_report(const Model& model, const Model& exact, const fidelity::Box& domain,
                         unsigned long long n_eval, EvalDesign design, std::uint64_t seed = 0,
                         double reference_mean = std::numeric_limits<double>::quiet_NaN(),
                         const std::string& reference_desc = "");

/// High-resolution reference mean: tensor-grid averaging for d <= 2,
/// seeded Monte Carlo otherwise.
double compute_reference_mean(const Model& exact, const fidelity::Box& domain,
                              unsigned long long n, std::uint64_t seed = 424242);

struct CostInputs {
    unsigned long long n_i = 0;
    unsigned long long n = 0;
    unsigned long long n_theta = 0;
    double w_hf = 0.0;
    double w_lf = 0.0;
    double w_dnn = 0.0;
    double w_resnn = 0.0;
    double w_t1 = 0.0;  // residual-network training seconds
    double w_t2 = 0.0;  // deep-network training seconds
};

struct CostLedger {
    CostInputs in;
    double w_rmfnn = 0.0;
    double w_hfm = 0.0;
    double w_hfnn = 0.0;
    double w_rmfnn_with_training = 0.0;
    double w_hfnn_with_training = 0.0;
};

/// W_RMFNN = N_I W_HF + N_theta W_DNN; W_HFM = N_theta W_HF;
/// W_HFNN = N W_HF + N_theta W_DNN; the *_with_training totals add the
/// measured training times.
CostLedger cost_totals(const CostInputs& in);

/// Least-squares slope in log-log space; needs >= 3 positive points.
double slope_fit(std::span<const double> xs, std::span<const double> ys);

/// Fraction of (error, tolerance) trials whose error exceeds the tolerance;
/// needs >= 20 trials.
double failure_probability_check(const std::vector<std::pair<double, double>>& trials);

/// Process-CPU monotonic clock in seconds (falls back to steady wall clock).
double process_clock_s();

}  // namespace rmfnn::uq
