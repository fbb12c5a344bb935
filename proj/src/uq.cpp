#include "rmfnn/uq.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <stdexcept>

namespace rmfnn::uq {

namespace {

net::NetworkSpec make_spec(std::size_t input_dim, std::size_t layers, std::size_t width) {
    net::NetworkSpec s;
    s.input_dim = input_dim;
    s.hidden_widths.assign(layers, width);
    s.output_dim = 1;
    s.shortcut_period = 0;
    return s;
}

net::TrainConfig make_cfg(std::size_t epochs, std::size_t batch) {
    net::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch;
    c.initial_lr = 0.005;
    c.tikhonov_lambda = 0.0;  // the ODE/PDE studies use no regularization
    c.validation_fraction = 0.05;
    return c;
}

struct TableRow {
    double eps;
    unsigned long long n_theta;
    double h_hf, h_lf;
    std::size_t n_i, n;
    std::size_t resnn_epochs, resnn_batch;
    std::size_t dnn_epochs, dnn_batch;
};

// Tabulated study rows: tolerance, realizations, resolutions, data counts,
// and per-network epoch/batch settings.
constexpr TableRow kIvpRows[] = {
    {1e-2, 135000ULL, 0.1, 0.5, 25, 241, 100, 10, 400, 40},
    {1e-3, 13500000ULL, 0.025, 0.25, 81, 801, 1500, 30, 8000, 80},
    {1e-4, 1350000000ULL, 0.01, 0.1, 321, 3201, 5000, 50, 20000, 50},
};
constexpr TableRow kWaveRows[] = {
    {1e-1, 150ULL, 1.0 / 32, 1.0 / 20, 324, 3498, 100, 50, 200, 50},
    {1e-2, 15000ULL, 1.0 / 128, 1.0 / 32, 451, 4961, 200, 50, 500, 50},
    {1e-3, 1500000ULL, 1.0 / 320, 1.0 / 40, 714, 8003, 1000, 50, 4000, 50},
};

ToleranceBudget budget_from_row(problems::ProblemId problem, const TableRow& row) {
    ToleranceBudget b;
    b.problem = problem;
    b.eps_tol = row.eps;
    b.n_theta = row.n_theta;
    b.h_hf = row.h_hf;
    b.h_lf = row.h_lf;
    b.n = row.n;
    b.n_i = row.n_i;
    b.order_q = 2.0;
    b.resnn_cfg = make_cfg(row.resnn_epochs, row.resnn_batch);
    b.dnn_cfg = make_cfg(row.dnn_epochs, row.dnn_batch);
    if (problem == problems::ProblemId::ParametricIVP) {
        b.stride = 10;
        b.gamma = 1.0;
        b.p_exponent = 0.5;
        b.resnn_spec = make_spec(2, 2, 10);
        b.dnn_spec = make_spec(1, 4, 20);
        // The ODE's parameter domain is already the centered interval
        // [-1, 1]; feeding it unmapped trains far more reliably than the
        // unit-box map (measured: the mapped variant stalls near the mean).
        b.input_scaling = surrogate::InputScaling::Raw;
        b.resnn_cfg.initial_lr = 0.02;
        // The tabulated epoch budget under-trains the deep net; a longer
        // plateau schedule reaches the target accuracy and stops early once
        // the learning rate bottoms out.
        b.dnn_cfg.initial_lr = 0.01;
        b.dnn_cfg.epochs = std::max<std::size_t>(row.dnn_epochs, 6000);
        b.dnn_cfg.plateau_patience = 300;
    } else {
        b.stride = 11;
        b.gamma = 3.0;
        b.p_exponent = 0.2;
        b.resnn_spec = make_spec(3, 2, 20);
        b.dnn_spec = make_spec(2, 4, 30);
        b.input_scaling = surrogate::InputScaling::UnitBox;
    }
    return b;
}

double snap_step(double raw, double total) {
    const double n = std::max(1.0, std::round(total / raw));
    return total / n;
}

}  // namespace

ToleranceBudget plan_tolerance(problems::ProblemId problem, double eps_tol, bool allow_scaling) {
    const TableRow* rows = nullptr;
    std::size_t count = 0;
    double total_time = 0.0;
    switch (problem) {
        case problems::ProblemId::ParametricIVP:
            rows = kIvpRows;
            count = std::size(kIvpRows);
            total_time = problems::ivp_terminal_time;
            break;
        case problems::ProblemId::WaveIBVP:
            rows = kWaveRows;
            count = std::size(kWaveRows);
            total_time = 2.0;  // spatial extent; steps snap to 2/h
            break;
        default:
            throw std::invalid_argument(
                "plan_tolerance: tolerance studies exist for ivp and wave only");
    }
    if (!(eps_tol > 0.0) || !(eps_tol < 0.5))
        throw std::invalid_argument("plan_tolerance: eps_tol must lie in (0, 0.5)");

    for (std::size_t i = 0; i < count; ++i)
        if (std::abs(std::log10(eps_tol) - std::log10(rows[i].eps)) < 1e-9)
            return budget_from_row(problem, rows[i]);

    if (!allow_scaling)
        throw std::invalid_argument(
            "plan_tolerance: eps_tol is not a tabulated level (pass allow_scaling to "
            "extrapolate)");

    // Nearest row in log space anchors the stated scalings:
    // N_theta ~ eps^-2, h ~ eps^(1/q), N ~ eps^-p.
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < count; ++i) {
        const double dist = std::abs(std::log10(eps_tol) - std::log10(rows[i].eps));
        if (dist < best_dist) {
            best_dist = dist;
            best = i;
        }
    }
    const TableRow& row = rows[best];
    ToleranceBudget b = budget_from_row(problem, row);
    const double ratio = eps_tol / row.eps;
    b.eps_tol = eps_tol;
    b.extrapolated = true;
    b.n_theta = static_cast<unsigned long long>(
        std::llround(static_cast<double>(row.n_theta) * std::pow(ratio, -2.0)));
    b.h_hf = snap_step(row.h_hf * std::pow(ratio, 1.0 / b.order_q), total_time);
    const double s = row.h_lf / row.h_hf;
    b.h_lf = snap_step(s * b.h_hf, total_time);
    b.n = static_cast<std::size_t>(
        std::llround(static_cast<double>(row.n) * std::pow(ratio, -b.p_exponent)));
    b.n = std::max<std::size_t>(b.n, 2 * b.stride);
    b.n_i = (b.n - 1) / b.stride + 1;

    // Shrunken data sets must keep batch <= training-split size.
    auto clamp_batch = [](net::TrainConfig& cfg, std::size_t rows) {
        std::size_t n_val = 0;
        if (cfg.validation_fraction > 0.0)
            n_val = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::llround(cfg.validation_fraction *
                                                         static_cast<double>(rows))));
        const std::size_t train_rows = rows > n_val ? rows - n_val : 1;
        cfg.batch_size = std::min(cfg.batch_size, std::max<std::size_t>(1, train_rows));
    };
    clamp_batch(b.resnn_cfg, b.n_i);
    clamp_batch(b.dnn_cfg, b.n);
    return b;
}

McEstimate mc_estimate(const Model& model, const fidelity::Box& domain,
                       unsigned long long n_theta, std::uint64_t seed) {
    if (n_theta < 2) throw std::invalid_argument("mc_estimate: n_theta must be >= 2");
    domain.validate();
    Rng rng(seed);
    std::vector<double> theta(domain.dim());

    // Chunked pairwise accumulation keeps the reduction deterministic and
    // accurate for very long streams without storing all samples.
    constexpr std::size_t kChunk = 4096;
    std::vector<double> buf;
    buf.reserve(kChunk);
    std::vector<double> buf_sq;
    buf_sq.reserve(kChunk);
    std::vector<double> chunk_sums, chunk_sq_sums;

    for (unsigned long long i = 0; i < n_theta; ++i) {
        for (std::size_t k = 0; k < domain.dim(); ++k)
            theta[k] = rng.uniform(domain.lower[k], domain.upper[k]);
        const double v = model(theta);
        buf.push_back(v);
        buf_sq.push_back(v * v);
        if (buf.size() == kChunk) {
            chunk_sums.push_back(pairwise_sum(buf));
            chunk_sq_sums.push_back(pairwise_sum(buf_sq));
            buf.clear();
            buf_sq.clear();
        }
    }
    if (!buf.empty()) {
        chunk_sums.push_back(pairwise_sum(buf));
        chunk_sq_sums.push_back(pairwise_sum(buf_sq));
    }
    const double sum = pairwise_sum(chunk_sums);
    const double sum_sq = pairwise_sum(chunk_sq_sums);
    const double n = static_cast<double>(n_theta);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));

    McEstimate est;
    est.value = mean;
    est.stderr_value = std::sqrt(var / n);
    est.n_theta = n_theta;
    est.seed = seed;
    return est;
}

namespace {

std::vector<std::vector<double>> eval_points(const fidelity::Box& domain,
                                             unsigned long long n_eval, EvalDesign design,
                                             std::uint64_t seed) {
    if (design == EvalDesign::Random) {
        Rng rng(seed);
        return fidelity::random_points(domain, static_cast<std::size_t>(n_eval), rng);
    }
    return fidelity::uniform_grid(domain, static_cast<std::size_t>(n_eval));
}

}  // namespace

ErrorReport error_report(const Model& model, const Model& exact, const fidelity::Box& domain,
                         unsigned long long n_eval, EvalDesign design, std::uint64_t seed,
                         double reference_mean, const std::string& reference_desc) {
    if (n_eval < 1) throw std::invalid_argument("error_report: n_eval must be >= 1");
    const auto pts = eval_points(domain, n_eval, design, seed);

    std::vector<double> sq_err(pts.size()), model_vals(pts.size()), exact_vals(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double m = model(pts[i]);
        const double e = exact(pts[i]);
        model_vals[i] = m;
        exact_vals[i] = e;
        const double d = m - e;
        sq_err[i] = d * d;
    }

    ErrorReport rep;
    rep.n_eval = pts.size();
    rep.eps_mse = pairwise_sum(sq_err) / static_cast<double>(pts.size());

    double ref = reference_mean;
    if (std::isnan(ref)) {
        ref = pairwise_sum(exact_vals) / static_cast<double>(pts.size());
        rep.reference = "same-design sample mean of exact Q over n_eval points";
    } else {
        rep.reference = reference_desc.empty() ? "external reference mean" : reference_desc;
    }
    const double estimate = pairwise_sum(model_vals) / static_cast<double>(pts.size());
    rep.eps_abs = std::abs(ref - estimate);
    if (ref != 0.0) {
        rep.eps_rel = rep.eps_abs / std::abs(ref);
        rep.rel_defined = true;
    } else {
        rep.eps_rel = 0.0;
        rep.rel_defined = false;
    }
    return rep;
}

double compute_reference_mean(const Model& exact, const fidelity::Box& domain,
                              unsigned long long n, std::uint64_t seed) {
    domain.validate();
    if (domain.dim() <= 2) {
        const auto pts = fidelity::uniform_grid(domain, static_cast<std::size_t>(n));
        std::vector<double> vals(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = exact(pts[i]);
        return pairwise_sum(vals) / static_cast<double>(pts.size());
    }
    return mc_estimate(exact, domain, n, seed).value;
}

CostLedger cost_totals(const CostInputs& in) {
    if (in.w_hf < 0 || in.w_lf < 0 || in.w_dnn < 0 || in.w_resnn < 0 || in.w_t1 < 0 ||
        in.w_t2 < 0)
        throw std::invalid_argument("cost_totals: costs must be >= 0");
    CostLedger led;
    led.in = in;
    const double n_i = static_cast<double>(in.n_i);
    const double n = static_cast<double>(in.n);
    const double n_theta = static_cast<double>(in.n_theta);
    led.w_rmfnn = n_i * in.w_hf + n_theta * in.w_dnn;
    led.w_hfm = n_theta * in.w_hf;
    led.w_hfnn = n * in.w_hf + n_theta * in.w_dnn;
    led.w_rmfnn_with_training = led.w_rmfnn + in.w_t1 + in.w_t2;
    led.w_hfnn_with_training = led.w_hfnn + in.w_t2;
    return led;
}

double slope_fit(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("slope_fit: length mismatch");
    if (xs.size() < 3) throw std::invalid_argument("slope_fit: need at least 3 points");
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0))
            throw std::invalid_argument("slope_fit: values must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    const double n = static_cast<double>(xs.size());
    const double mx = pairwise_sum(lx) / n;
    const double my = pairwise_sum(ly) / n;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    if (den == 0.0) throw std::invalid_argument("slope_fit: degenerate abscissae");
    return num / den;
}

double failure_probability_check(const std::vector<std::pair<double, double>>& trials) {
    if (trials.size() < 20)
        throw std::invalid_argument("failure_probability_check: need at least 20 trials");
    std::size_t failures = 0;
    for (const auto& [err, tol] : trials)
        if (err > tol) ++failures;
    return static_cast<double>(failures) / static_cast<double>(trials.size());
}

double process_clock_s() {
    // Monotonic nanosecond-resolution clock. The process-CPU clock would be
    // the natural choice for cost measurements, but it is jiffy-quantized
    // (10 ms) on some kernels, which swamps the short prediction loops
    // measured here; the timed sections are single-threaded and CPU-bound,
    // so steady wall time measures the same thing at full resolution.
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace rmfnn::uq
