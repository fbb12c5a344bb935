// Experiment runner: reproduces the study artifacts (CSV/JSON) and exposes
// the pipeline stages as scriptable subcommands.
//
// Exit codes: 0 ok, 2 usage/config, 3 numerical failure, 4 io failure.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rmfnn/fidelity.hpp"
#include "rmfnn/net.hpp"
#include "rmfnn/problems.hpp"
#include "rmfnn/rng.hpp"
#include "rmfnn/surrogate.hpp"
#include "rmfnn/uq.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rmfnn;

namespace {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json load_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Rejects unknown config keys so typos fail loudly.
void check_config_keys(const json& cfg, const std::set<std::string>& allowed,
                       const std::string& what) {
    if (!cfg.is_object()) throw std::invalid_argument(what + ": config must be a JSON object");
    for (const auto& [key, value] : cfg.items()) {
        (void)value;
        if (!allowed.count(key))
            throw std::invalid_argument(what + ": unknown config key '" + key + "'");
    }
}

uint64_t trial_stream(uint64_t base, uint64_t a, uint64_t b, uint64_t c) {
    return derive_seed(derive_seed(derive_seed(base, a), b), c);
}

// ---------------------------------------------------------------------------
// Surrogate bundles: manifest + checkpoint files in one directory.

json boxmap_to_json(const fidelity::BoxMap& m) {
    return json{{"lo", m.lo}, {"width", m.width}};
}

fidelity::BoxMap boxmap_from_json(const json& j) {
    fidelity::BoxMap m;
    m.lo = j.at("lo").get<std::vector<double>>();
    m.width = j.at("width").get<std::vector<double>>();
    return m;
}

struct Bundle {
    std::string method;
    std::string problem;
    fidelity::BoxMap theta_map;
    surrogate::ChannelMap qlf_map;
    net::Network network;
};

void save_bundle(const fs::path& dir, const std::string& method, const std::string& problem,
                 const net::Network& network, const fidelity::BoxMap& theta_map,
                 const surrogate::ChannelMap* qlf_map, const json& extra) {
    ensure_dir(dir);
    net::save_network(network, dir / "net.json");
    json manifest{{"method", method},
                  {"problem", problem},
                  {"normalization", {{"theta", boxmap_to_json(theta_map)}}},
                  {"checkpoints", {{"net", "net.json"}}}};
    if (qlf_map)
        manifest["normalization"]["q_lf"] = {{"lo", qlf_map->lo}, {"width", qlf_map->width}};
    for (const auto& [k, v] : extra.items()) manifest[k] = v;
    write_json(dir / "manifest.json", manifest);
}

Bundle load_bundle(const fs::path& dir) {
    const json manifest = load_json(dir / "manifest.json");
    Bundle b;
    try {
        b.method = manifest.at("method").get<std::string>();
        b.problem = manifest.value("problem", std::string{});
        b.theta_map = boxmap_from_json(manifest.at("normalization").at("theta"));
        if (manifest.at("normalization").contains("q_lf")) {
            b.qlf_map.lo = manifest["normalization"]["q_lf"].at("lo").get<double>();
            b.qlf_map.width = manifest["normalization"]["q_lf"].at("width").get<double>();
        }
        const std::string net_file =
            manifest.at("checkpoints").at("net").get<std::string>();
        b.network = net::load_network(dir / net_file);
    } catch (const json::exception& e) {
        throw IoError(dir.string() + "/manifest.json: " + e.what());
    }
    return b;
}

double bundle_predict(const Bundle& b, const std::vector<double>& theta, double q_lf) {
    const std::size_t d = b.theta_map.lo.size();
    std::vector<double> x(b.network.spec.input_dim);
    b.theta_map.to_unit(theta, x.data());
    if (b.network.spec.input_dim == d + 1) x[d] = b.qlf_map.to_unit(q_lf);
    return net::forward(b.network, x)[0];
}

// ---------------------------------------------------------------------------
// plan

int cmd_plan(const std::string& problem_name, double eps, bool allow_scaling,
             const std::string& out) {
    const auto problem = problems::problem_from_name(problem_name);
    const auto b = uq::plan_tolerance(problem, eps, allow_scaling);
    json j{{"problem", problems::name(b.problem)},
           {"eps_tol", b.eps_tol},
           {"n_theta", b.n_theta},
           {"h_hf", b.h_hf},
           {"h_lf", b.h_lf},
           {"n", b.n},
           {"n_i", b.n_i},
           {"stride", b.stride},
           {"order_q", b.order_q},
           {"gamma", b.gamma},
           {"p_exponent", b.p_exponent},
           {"extrapolated", b.extrapolated},
           {"resnn", {{"hidden_widths", b.resnn_spec.hidden_widths},
                      {"epochs", b.resnn_cfg.epochs},
                      {"batch", b.resnn_cfg.batch_size},
                      {"lr", b.resnn_cfg.initial_lr}}},
           {"dnn", {{"hidden_widths", b.dnn_spec.hidden_widths},
                    {"epochs", b.dnn_cfg.epochs},
                    {"batch", b.dnn_cfg.batch_size},
                    {"lr", b.dnn_cfg.initial_lr}}}};
    if (out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(out, j);
    return 0;
}

// ---------------------------------------------------------------------------
// pedagogy

int cmd_pedagogy(const fs::path& out_dir, double dt, std::size_t points) {
    ensure_dir(out_dir);
    problems::DampedOscillator osc;
    std::string models = "theta,q_lf,q_hf\n";
    std::string scatter = "q_lf,q_hf\n";
    std::string residual = "theta,f\n";
    for (std::size_t i = 0; i < points; ++i) {
        const double theta =
            10.0 + 40.0 * static_cast<double>(i) / static_cast<double>(points - 1);
        const double lf = osc.lf(theta);
        const double hf = osc.hf(theta, dt);
        models += fmt17(theta) + "," + fmt17(lf) + "," + fmt17(hf) + "\n";
        scatter += fmt17(lf) + "," + fmt17(hf) + "\n";
        residual += fmt17(theta) + "," + fmt17(hf - lf) + "\n";
    }
    write_text(out_dir / "pedagogy_models.csv", models);
    write_text(out_dir / "pedagogy_scatter.csv", scatter);
    write_text(out_dir / "pedagogy_residual.csv", residual);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep (pulsed-oscillator method comparison)

struct SweepConfig {
    std::vector<std::size_t> n_hf{250, 500, 1000};
    std::vector<uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t test_points = 100000;
    std::size_t epochs = 800;
    std::size_t batch = 25;
    double lr = 0.005;
    std::size_t patience = 100;
    std::vector<std::string> methods{"rmfnn", "mfnn", "hfnn"};
    std::size_t jobs = 1;
    uint64_t base_seed = 20240901;
    bool emit_datasets = false;
};

struct TrialResult {
    std::string method;
    std::size_t n_hf = 0;
    uint64_t seed = 0;
    double mse = 0.0;
    bool diverged = false;
};

net::NetworkSpec sweep_net_spec(std::size_t input_dim, uint64_t seed) {
    net::NetworkSpec s;
    s.input_dim = input_dim;
    s.hidden_widths.assign(6, 7);  // L = 7 layers, K = 7 neurons
    s.output_dim = 1;
    s.shortcut_period = 2;
    s.seed = seed;
    return s;
}

// Training data shared across methods for a given (n_hf, seed).
fidelity::Dataset sweep_trial_dataset(const SweepConfig& cfg, std::size_t n_hf,
                                      uint64_t seed) {
    const auto box = problems::domain(problems::ProblemId::PulsedOscillator);
    Rng data_rng(trial_stream(cfg.base_seed, 1, n_hf, seed));
    fidelity::Dataset ds;
    ds.domain = box;
    ds.normalization = fidelity::BoxMap::identity(4);
    ds.records.reserve(n_hf);
    for (std::size_t i = 0; i < n_hf; ++i) {
        fidelity::Record r;
        r.theta.resize(4);
        for (int k = 0; k < 4; ++k) r.theta[k] = data_rng.uniform(box.lower[k], box.upper[k]);
        const std::array<double, 4> th{r.theta[0], r.theta[1], r.theta[2], r.theta[3]};
        r.q_lf = problems::pulsed_asymptotic(th);
        r.q_hf = problems::pulsed_exact(th);
        ds.records.push_back(std::move(r));
    }
    return ds;
}

TrialResult run_sweep_trial(const SweepConfig& cfg, const std::string& method,
                            std::size_t n_hf, uint64_t seed,
                            const std::vector<std::vector<double>>& test_pts,
                            const std::vector<double>& test_exact,
                            const std::vector<double>& test_lf) {
    const fidelity::Dataset ds = sweep_trial_dataset(cfg, n_hf, seed);

    net::TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch;
    tc.initial_lr = cfg.lr;
    tc.tikhonov_lambda = 1e-6;
    tc.validation_fraction = 0.05;
    tc.plateau_patience = cfg.patience;
    const uint64_t method_tag =
        method == "rmfnn" ? 101 : (method == "mfnn" ? 102 : 103);
    tc.seed = trial_stream(cfg.base_seed, 2 * 1000 + method_tag, n_hf, seed);
    const uint64_t init_seed = trial_stream(cfg.base_seed, 3 * 1000 + method_tag, n_hf, seed);

    TrialResult out;
    out.method = method;
    out.n_hf = n_hf;
    out.seed = seed;

    try {
        std::vector<double> pred(test_pts.size());
        if (method == "rmfnn") {
            // Alternative composite approach with the direct low-fidelity model.
            const auto [res, rep] =
                surrogate::train_resnn(ds, sweep_net_spec(5, init_seed), tc);
            (void)rep;
            for (std::size_t i = 0; i < test_pts.size(); ++i)
                pred[i] = test_lf[i] + res.predict(test_pts[i], test_lf[i]);
        } else if (method == "mfnn") {
            const auto [mf, rep] = surrogate::mfnn_build(ds, sweep_net_spec(5, init_seed), tc);
            (void)rep;
            for (std::size_t i = 0; i < test_pts.size(); ++i)
                pred[i] = mf.predict(test_pts[i], test_lf[i]);
        } else if (method == "hfnn") {
            const auto [hf, rep] = surrogate::hfnn_build(ds, sweep_net_spec(4, init_seed), tc);
            (void)rep;
            for (std::size_t i = 0; i < test_pts.size(); ++i)
                pred[i] = hf.predict(test_pts[i]);
        } else {
            throw std::invalid_argument("sweep: unknown method '" + method + "'");
        }
        std::vector<double> sq(test_pts.size());
        for (std::size_t i = 0; i < test_pts.size(); ++i) {
            const double d = pred[i] - test_exact[i];
            sq[i] = d * d;
        }
        out.mse = pairwise_sum(sq) / static_cast<double>(sq.size());
    } catch (const net::TrainingDivergedError&) {
        out.diverged = true;
        out.mse = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

int cmd_sweep(const SweepConfig& cfg, const fs::path& out_dir) {
    ensure_dir(out_dir);
    const auto box = problems::domain(problems::ProblemId::PulsedOscillator);

    // Fixed test set shared by every trial.
    Rng test_rng(derive_seed(cfg.base_seed, 99));
    std::vector<std::vector<double>> test_pts =
        fidelity::random_points(box, cfg.test_points, test_rng);
    std::vector<double> test_exact(test_pts.size()), test_lf(test_pts.size());
    for (std::size_t i = 0; i < test_pts.size(); ++i) {
        const std::array<double, 4> th{test_pts[i][0], test_pts[i][1], test_pts[i][2],
                                       test_pts[i][3]};
        test_exact[i] = problems::pulsed_exact(th);
        test_lf[i] = problems::pulsed_asymptotic(th);
    }

    struct Key {
        std::string method;
        std::size_t n_hf;
        uint64_t seed;
    };
    std::vector<Key> keys;
    for (const auto& method : cfg.methods)
        for (std::size_t n : cfg.n_hf)
            for (uint64_t seed : cfg.seeds) keys.push_back({method, n, seed});

    std::vector<TrialResult> results(keys.size());
    const std::size_t jobs = std::max<std::size_t>(1, cfg.jobs);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= keys.size()) return;
            results[i] = run_sweep_trial(cfg, keys[i].method, keys[i].n_hf, keys[i].seed,
                                         test_pts, test_exact, test_lf);
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::future<void>> pool;
        for (std::size_t j = 0; j < jobs; ++j)
            pool.push_back(std::async(std::launch::async, worker));
        for (auto& f : pool) f.get();
    }

    // Trial CSV (deterministic order: methods x n_hf x seeds as configured).
    std::string trials_csv = "method,n_hf,seed,mse,diverged\n";
    for (const auto& r : results)
        trials_csv += r.method + "," + std::to_string(r.n_hf) + "," + std::to_string(r.seed) +
                      "," + (r.diverged ? std::string("") : fmt17(r.mse)) + "," +
                      (r.diverged ? "1" : "0") + "\n";
    write_text(out_dir / "sweep_trials.csv", trials_csv);

    // Aggregates.
    std::string agg_csv = "method,n_hf,mean_mse,std_mse,n_trials\n";
    std::map<std::string, std::map<std::size_t, double>> mean_by_method;
    for (const auto& method : cfg.methods) {
        for (std::size_t n : cfg.n_hf) {
            std::vector<double> vals;
            for (const auto& r : results)
                if (r.method == method && r.n_hf == n && !r.diverged) vals.push_back(r.mse);
            double mean = 0.0, sd = 0.0;
            if (!vals.empty()) {
                mean = pairwise_sum(vals) / static_cast<double>(vals.size());
                for (double v : vals) sd += (v - mean) * (v - mean);
                sd = vals.size() > 1 ? std::sqrt(sd / static_cast<double>(vals.size() - 1))
                                     : 0.0;
            }
            mean_by_method[method][n] = mean;
            agg_csv += method + "," + std::to_string(n) + "," + fmt17(mean) + "," + fmt17(sd) +
                       "," + std::to_string(vals.size()) + "\n";
        }
    }
    write_text(out_dir / "sweep_aggregate.csv", agg_csv);

    // Conjecture-style bound curves: constants fitted to the HFNN means by
    // minimum-norm least squares, then reused with ||F||_inf for RMFNN.
    const auto pair = problems::make_pulsed_pair();
    const auto grid = fidelity::tensor_grid(box, {20, 20, 20, 20});
    const auto stats = fidelity::residual_ratio(pair, grid);
    const double k = 7.0, l = 7.0;
    const double reg_a = stats.max_hf * stats.max_hf / (k * l);
    const double reg_b = 1.0 / (k * k) + 1.0 / (l * l * l * l);
    double y_mean = 0.0;
    std::size_t y_count = 0;
    if (mean_by_method.count("hfnn")) {
        for (const auto& [n, m] : mean_by_method["hfnn"]) {
            (void)n;
            y_mean += m;
            ++y_count;
        }
    }
    y_mean = y_count ? y_mean / static_cast<double>(y_count) : 0.0;
    const double denom = reg_a * reg_a + reg_b * reg_b;
    const double c1 = denom > 0.0 ? reg_a * y_mean / denom : 0.0;
    const double c2 = denom > 0.0 ? reg_b * y_mean / denom : 0.0;
    std::string bounds_csv = "method,k,l,f_inf,c1,c2,bound\n";
    bounds_csv += "hfnn,7,7," + fmt17(stats.max_hf) + "," + fmt17(c1) + "," + fmt17(c2) + "," +
                  fmt17(surrogate::conjecture_bound(k, l, stats.max_hf, c1, c2)) + "\n";
    bounds_csv += "rmfnn,7,7," + fmt17(stats.max_residual) + "," + fmt17(c1) + "," + fmt17(c2) +
                  "," + fmt17(surrogate::conjecture_bound(k, l, stats.max_residual, c1, c2)) +
                  "\n";
    write_text(out_dir / "conjecture_bounds.csv", bounds_csv);

    json manifest{{"problem", "pulsed"},
                  {"methods", cfg.methods},
                  {"n_hf", cfg.n_hf},
                  {"seeds", cfg.seeds},
                  {"test_points", cfg.test_points},
                  {"epochs", cfg.epochs},
                  {"batch", cfg.batch},
                  {"lr", cfg.lr},
                  {"patience", cfg.patience},
                  {"base_seed", cfg.base_seed},
                  {"architecture", {{"k", 7}, {"l", 7}, {"shortcut_period", 2}}},
                  {"residual_stats",
                   {{"max_residual", stats.max_residual},
                    {"max_hf", stats.max_hf},
                    {"ratio", stats.ratio}}}};
    write_json(out_dir / "sweep_manifest.json", manifest);

    if (cfg.emit_datasets)
        for (std::size_t n : cfg.n_hf)
            for (uint64_t seed : cfg.seeds)
                fidelity::save_dataset_csv(
                    sweep_trial_dataset(cfg, n, seed),
                    out_dir / ("dataset_n" + std::to_string(n) + "_s" +
                               std::to_string(seed) + ".csv"));
    return 0;
}

// ---------------------------------------------------------------------------
// tolerance-study

struct StudyConfig {
    std::string problem = "ivp";
    std::vector<double> eps;
    std::size_t trials = 20;
    unsigned long long n_eval = 1000000;
    bool with_hfm = true;
    bool full_scale = false;
    uint64_t base_seed = 7070;
    unsigned long long hfm_cap = 200000;  // desk-scale guard for the direct MC
    bool emit_datasets = false;
    bool emit_checkpoints = false;
};

int cmd_tolerance_study(const StudyConfig& cfg, const fs::path& out_dir) {
    ensure_dir(out_dir);
    const auto problem = problems::problem_from_name(cfg.problem);
    if (problem != problems::ProblemId::ParametricIVP &&
        problem != problems::ProblemId::WaveIBVP)
        throw std::invalid_argument("tolerance-study: supported problems are ivp and wave");
    const bool is_ivp = problem == problems::ProblemId::ParametricIVP;
    const auto box = problems::domain(problem);

    std::vector<double> eps_list = cfg.eps;
    if (eps_list.empty())
        eps_list = is_ivp ? std::vector<double>{1e-1, std::pow(10.0, -1.5), 1e-2}
                          : std::vector<double>{1e-1};

    uq::Model exact;
    if (is_ivp)
        exact = [](const std::vector<double>& th) { return problems::ivp_exact(th[0]); };
    else
        exact = [](const std::vector<double>& th) {
            return problems::wave_exact({th[0], th[1]});
        };

    // Reference mean from a high-resolution grid of the closed form.
    const double ref_mean = uq::compute_reference_mean(exact, box, 2000000);

    std::string conv_csv =
        "eps_tol,cpu_time_hfm,cpu_time_rmfnn_total,cpu_time_rmfnn_predict,error\n";
    std::string scatter_csv = "eps_tol,trial,error\n";

    for (double eps : eps_list) {
        auto budget = uq::plan_tolerance(problem, eps, /*allow_scaling=*/true);
        if (!cfg.full_scale && budget.n_theta > cfg.hfm_cap && cfg.with_hfm)
            throw std::invalid_argument(
                "tolerance-study: N_theta = " + std::to_string(budget.n_theta) +
                " exceeds the desk-scale cap; pass --full-scale to run anyway");

        fidelity::DesignSpec dspec;
        dspec.stride = budget.stride;
        const std::size_t design_n = budget.n;
        if (!is_ivp) {
            // Tensor grid sized to the budget, aspect matched to the domain.
            const double aspect = (box.upper[0] - box.lower[0]) / (box.upper[1] - box.lower[1]);
            std::size_t best_a = 1;
            double best = 1e300;
            for (std::size_t a = 1; a <= design_n; ++a) {
                if (design_n % a) continue;
                const std::size_t bdim = design_n / a;
                const double score = std::abs(
                    std::log(static_cast<double>(a) / static_cast<double>(bdim)) -
                    std::log(aspect));
                if (score < best) {
                    best = score;
                    best_a = a;
                }
            }
            dspec.grid_dims = {best_a, design_n / best_a};
        }
        auto plan = fidelity::build_design(box, design_n, dspec);
        auto pair = is_ivp ? problems::make_ivp_pair(budget.h_hf, budget.h_lf)
                           : problems::make_wave_pair(budget.h_hf, budget.h_lf);

        auto resnn_spec = budget.resnn_spec;
        auto dnn_spec = budget.dnn_spec;
        auto resnn_cfg = budget.resnn_cfg;
        auto dnn_cfg = budget.dnn_cfg;
        resnn_spec.seed = trial_stream(cfg.base_seed, 11, 0, 0);
        dnn_spec.seed = trial_stream(cfg.base_seed, 12, 0, 0);
        resnn_cfg.seed = trial_stream(cfg.base_seed, 13, 0, 0);
        dnn_cfg.seed = trial_stream(cfg.base_seed, 14, 0, 0);

        const double t_build0 = uq::process_clock_s();
        auto build = surrogate::rmfnn_build(pair, plan, resnn_spec, resnn_cfg, dnn_spec,
                                            dnn_cfg, budget.input_scaling);
        const double t_build = uq::process_clock_s() - t_build0;

        uq::Model dnn_model = [&](const std::vector<double>& th) {
            return build.surrogate.predict(th);
        };

        // Headline estimate plus the measured predict-only time.
        const uint64_t mc_seed = trial_stream(cfg.base_seed, 15, 0, 0);
        const double t_pred0 = uq::process_clock_s();
        const auto a_rmfnn = uq::mc_estimate(dnn_model, box, budget.n_theta, mc_seed);
        const double t_pred = uq::process_clock_s() - t_pred0;

        // Error of the headline estimate: relative for the IVP study,
        // absolute for the wave study.
        auto estimate_error = [&](double value) {
            const double abs_err = std::abs(ref_mean - value);
            return is_ivp ? abs_err / std::abs(ref_mean) : abs_err;
        };
        const double headline_error = estimate_error(a_rmfnn.value);

        // Direct high-fidelity MC at desk scale.
        double t_hfm = 0.0;
        std::optional<uq::McEstimate> a_hf;
        if (cfg.with_hfm) {
            const double t0 = uq::process_clock_s();
            a_hf = uq::mc_estimate(pair.q_hf, box, budget.n_theta, mc_seed);
            t_hfm = uq::process_clock_s() - t0;
        }

        // Error scatter over repeated MC trials.
        std::vector<std::pair<double, double>> trial_errors;
        for (std::size_t t = 0; t < cfg.trials; ++t) {
            const auto est = uq::mc_estimate(dnn_model, box, budget.n_theta,
                                             trial_stream(cfg.base_seed, 16, t, 0));
            const double err = estimate_error(est.value);
            trial_errors.emplace_back(err, eps);
            scatter_csv += fmt17(eps) + "," + std::to_string(t) + "," + fmt17(err) + "\n";
        }
        const double failure_fraction =
            cfg.trials >= 20 ? uq::failure_probability_check(trial_errors) : 0.0;

        // Cost accounting: measured per-evaluation costs and training times.
        uq::CostInputs ci;
        ci.n_i = budget.n_i;
        ci.n = budget.n;
        ci.n_theta = budget.n_theta;
        ci.w_hf = pair.cost_hf_s;
        ci.w_lf = pair.cost_lf_s;
        ci.w_dnn = t_pred / static_cast<double>(budget.n_theta);
        ci.w_resnn = 0.0;
        ci.w_t1 = build.resnn_report.wall_time_s;
        ci.w_t2 = build.dnn_report.wall_time_s;
        const auto costs = uq::cost_totals(ci);
        const double rmfnn_total = static_cast<double>(budget.n_i) * pair.cost_hf_s +
                                   build.resnn_report.wall_time_s +
                                   build.dnn_report.wall_time_s + t_pred;

        const auto err_rep = uq::error_report(dnn_model, exact, box, cfg.n_eval,
                                              uq::EvalDesign::Grid, 0, ref_mean,
                                              "tensor-grid mean of the closed form (2e6)");

        conv_csv += fmt17(eps) + "," + fmt17(t_hfm) + "," + fmt17(rmfnn_total) + "," +
                    fmt17(t_pred) + "," + fmt17(headline_error) + "\n";

        char eps_tag[32];
        std::snprintf(eps_tag, sizeof(eps_tag), "%g", eps);
        json report{
            {"budget",
             {{"problem", problems::name(problem)},
              {"eps_tol", budget.eps_tol},
              {"n_theta", budget.n_theta},
              {"h_hf", budget.h_hf},
              {"h_lf", budget.h_lf},
              {"n", budget.n},
              {"n_i", budget.n_i},
              {"extrapolated", budget.extrapolated},
              {"design_n_i_actual", plan.theta_I.size()}}},
            {"estimates",
             {{"a_rmfnn", {{"value", a_rmfnn.value},
                           {"stderr", a_rmfnn.stderr_value},
                           {"n_theta", a_rmfnn.n_theta},
                           {"seed", a_rmfnn.seed}}},
              {"reference_mean", ref_mean}}},
            {"errors",
             {{"eps_mse", err_rep.eps_mse},
              {"eps_abs", err_rep.eps_abs},
              {"eps_rel", err_rep.rel_defined ? json(err_rep.eps_rel) : json()},
              {"n_eval", err_rep.n_eval},
              {"reference", err_rep.reference},
              {"headline_error", headline_error},
              {"failure_fraction", failure_fraction}}},
            {"costs",
             {{"w_hf", ci.w_hf},
              {"w_lf", ci.w_lf},
              {"w_dnn", ci.w_dnn},
              {"w_t1", ci.w_t1},
              {"w_t2", ci.w_t2},
              {"w_rmfnn_model", costs.w_rmfnn},
              {"w_hfm_model", costs.w_hfm},
              {"w_hfnn_model", costs.w_hfnn},
              {"cpu_time_hfm_measured", t_hfm},
              {"cpu_time_rmfnn_predict_measured", t_pred},
              {"cpu_time_rmfnn_total", rmfnn_total},
              {"cpu_time_build", t_build}}},
            {"seeds",
             {{"base", cfg.base_seed}, {"mc", mc_seed}, {"trials", cfg.trials}}}};
        if (a_hf)
            report["estimates"]["a_hf"] = {{"value", a_hf->value},
                                           {"stderr", a_hf->stderr_value}};
        write_json(out_dir / (std::string("report_eps") + eps_tag + ".json"), report);

        if (cfg.emit_datasets)
            fidelity::save_dataset_csv(build.dataset, out_dir / (std::string("dataset_eps") +
                                                                 eps_tag + ".csv"));
        if (cfg.emit_checkpoints)
            save_bundle(out_dir / (std::string("bundle_eps") + eps_tag), "rmfnn",
                        problems::name(problem), build.surrogate.network,
                        build.surrogate.theta_map, nullptr,
                        json{{"eps_tol", budget.eps_tol}});
    }

    write_text(out_dir / "convergence.csv", conv_csv);
    write_text(out_dir / "error_scatter.csv", scatter_csv);
    return 0;
}

// ---------------------------------------------------------------------------
// train / predict / mc

fidelity::Dataset load_dataset_for(const std::string& problem_name, const fs::path& csv) {
    auto ds = fidelity::load_dataset_csv(csv);
    if (!problem_name.empty()) {
        const auto box = problems::domain(problems::problem_from_name(problem_name));
        if (box.dim() != ds.domain.dim())
            throw std::invalid_argument("dataset dimension does not match problem domain");
        ds.domain = box;
    }
    return ds;
}

int cmd_train(const std::string& problem_name, const std::string& method, const fs::path& data,
              const fs::path& out_dir, const std::vector<std::size_t>& hidden,
              std::size_t epochs, std::size_t batch, double lr, uint64_t seed,
              bool raw_inputs, std::size_t shortcut_period) {
    const auto ds = load_dataset_for(problem_name, data);
    const std::size_t d = ds.domain.dim();
    const auto scaling =
        raw_inputs ? surrogate::InputScaling::Raw : surrogate::InputScaling::UnitBox;

    net::NetworkSpec spec;
    spec.hidden_widths = hidden;
    spec.output_dim = 1;
    spec.shortcut_period = shortcut_period;
    spec.seed = derive_seed(seed, 1);
    net::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.initial_lr = lr;
    cfg.tikhonov_lambda = 0.0;
    cfg.validation_fraction = 0.05;
    cfg.seed = derive_seed(seed, 2);

    ensure_dir(out_dir);
    net::TrainReport report;
    std::string pred_csv = "prediction\n";

    if (method == "resnn") {
        spec.input_dim = d + 1;
        auto [s, rep] = surrogate::train_resnn(ds, spec, cfg, scaling);
        report = rep;
        save_bundle(out_dir, "resnn", problem_name, s.network, s.theta_map, &s.qlf_map,
                    json{{"seed", seed}});
        for (const auto& r : ds.records) pred_csv += fmt17(s.predict(r.theta, r.q_lf)) + "\n";
    } else if (method == "dnn" || method == "hfnn") {
        spec.input_dim = d;
        surrogate::TargetSurrogate s;
        if (method == "dnn") {
            auto [built, rep] = surrogate::train_dnn(ds, spec, cfg, scaling);
            s = std::move(built);
            report = rep;
        } else {
            auto [built, rep] = surrogate::hfnn_build(ds, spec, cfg, scaling);
            s = std::move(built);
            report = rep;
        }
        save_bundle(out_dir, method, problem_name, s.network, s.theta_map, nullptr,
                    json{{"seed", seed}});
        for (const auto& r : ds.records) pred_csv += fmt17(s.predict(r.theta)) + "\n";
    } else if (method == "mfnn") {
        spec.input_dim = d + 1;
        auto [s, rep] = surrogate::mfnn_build(ds, spec, cfg, scaling);
        report = rep;
        save_bundle(out_dir, "mfnn", problem_name, s.network, s.theta_map, &s.qlf_map,
                    json{{"seed", seed}});
        for (const auto& r : ds.records) pred_csv += fmt17(s.predict(r.theta, r.q_lf)) + "\n";
    } else {
        throw std::invalid_argument("train: unknown method '" + method +
                                    "' (resnn|dnn|mfnn|hfnn)");
    }

    write_text(out_dir / "predictions.csv", pred_csv);
    json train_report{
        {"epochs_run", report.epochs_run},
        {"wall_time_s", report.wall_time_s},
        {"final_train_loss", report.train_loss_history.empty()
                                 ? json()
                                 : json(report.train_loss_history.back())},
        {"best_val_loss", report.val_loss_history.empty()
                              ? json()
                              : json(*std::min_element(report.val_loss_history.begin(),
                                                       report.val_loss_history.end()))}};
    write_json(out_dir / "train_report.json", train_report);
    return 0;
}

int cmd_predict(const fs::path& bundle_dir, const std::string& problem_name,
                const fs::path& data, const fs::path& out_csv) {
    const Bundle b = load_bundle(bundle_dir);
    const auto ds = load_dataset_for(problem_name.empty() ? b.problem : problem_name, data);
    std::string csv = "prediction\n";
    for (const auto& r : ds.records) csv += fmt17(bundle_predict(b, r.theta, r.q_lf)) + "\n";
    write_text(out_csv, csv);
    return 0;
}

int cmd_mc(const std::string& problem_name, const std::string& model_name,
           const fs::path& bundle_dir, unsigned long long n_theta, uint64_t seed, double h,
           const std::string& out) {
    const auto problem = problems::problem_from_name(problem_name);
    const auto box = problems::domain(problem);

    uq::Model model;
    if (model_name == "bundle") {
        if (bundle_dir.empty()) throw std::invalid_argument("mc: --bundle required");
        auto b = std::make_shared<Bundle>(load_bundle(bundle_dir));
        if (b->network.spec.input_dim != box.dim())
            throw std::invalid_argument(
                "mc: only theta->Q bundles can be sampled directly (this one also needs a "
                "q_lf input)");
        model = [b](const std::vector<double>& th) { return bundle_predict(*b, th, 0.0); };
    } else {
        auto make_eval = [&](bool high) -> uq::Model {
            switch (problem) {
                case problems::ProblemId::ParametricIVP: {
                    const double h_use = h > 0 ? h : (high ? 0.1 : 0.5);
                    return [h_use](const std::vector<double>& th) {
                        return problems::ivp_rk2(th[0], h_use);
                    };
                }
                case problems::ProblemId::WaveIBVP: {
                    const double h_use = h > 0 ? h : (high ? 1.0 / 32 : 1.0 / 20);
                    return [h_use](const std::vector<double>& th) {
                        return problems::wave_fd({th[0], th[1]}, h_use);
                    };
                }
                case problems::ProblemId::PulsedOscillator:
                    return [high](const std::vector<double>& th) {
                        const std::array<double, 4> t4{th[0], th[1], th[2], th[3]};
                        return high ? problems::pulsed_exact(t4)
                                    : problems::pulsed_asymptotic(t4);
                    };
                case problems::ProblemId::DampedOscillator: {
                    const double dt = h > 0 ? h : 1e-6;
                    return [high, dt](const std::vector<double>& th) {
                        problems::DampedOscillator osc;
                        return high ? osc.hf(th[0], dt) : osc.lf(th[0]);
                    };
                }
            }
            throw std::invalid_argument("mc: bad problem");
        };
        if (model_name == "exact") {
            switch (problem) {
                case problems::ProblemId::ParametricIVP:
                    model = [](const std::vector<double>& th) {
                        return problems::ivp_exact(th[0]);
                    };
                    break;
                case problems::ProblemId::WaveIBVP:
                    model = [](const std::vector<double>& th) {
                        return problems::wave_exact({th[0], th[1]});
                    };
                    break;
                case problems::ProblemId::PulsedOscillator:
                    model = make_eval(true);
                    break;
                default:
                    throw std::invalid_argument(
                        "mc: the damped oscillator has no closed-form exact model; use hf");
            }
        } else if (model_name == "hf") {
            model = make_eval(true);
        } else if (model_name == "lf") {
            model = make_eval(false);
        } else {
            throw std::invalid_argument("mc: unknown model '" + model_name +
                                        "' (exact|hf|lf|bundle)");
        }
    }

    const auto est = uq::mc_estimate(model, box, n_theta, seed);
    json j{{"problem", problem_name},
           {"model", model_name},
           {"value", est.value},
           {"stderr", est.stderr_value},
           {"n_theta", est.n_theta},
           {"seed", est.seed}};
    if (out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json(out, j);
    return 0;
}

// ---------------------------------------------------------------------------

template <typename T>
void maybe_get(const json& cfg, const char* key, T& into) {
    if (cfg.contains(key)) into = cfg.at(key).get<T>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual multi-fidelity surrogate toolkit"};
    app.require_subcommand(1);

    // plan
    auto* plan = app.add_subcommand("plan", "Print the tolerance budget for a study level");
    std::string plan_problem = "ivp", plan_out;
    double plan_eps = 1e-2;
    bool plan_scale = false;
    plan->add_option("--problem", plan_problem, "ivp|wave")->required();
    plan->add_option("--eps", plan_eps, "tolerance level")->required();
    plan->add_flag("--allow-scaling", plan_scale, "extrapolate off the tabulated rows");
    plan->add_option("--out", plan_out, "write JSON here instead of stdout");

    // pedagogy
    auto* ped = app.add_subcommand("pedagogy", "Damped-oscillator motivation CSVs");
    std::string ped_out = "pedagogy_out";
    double ped_dt = 1e-6;
    std::size_t ped_points = 400;
    ped->add_option("--out", ped_out, "output directory");
    ped->add_option("--dt", ped_dt, "forward-Euler step for the high-fidelity model");
    ped->add_option("--points", ped_points, "theta grid size");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Pulsed-oscillator method comparison");
    SweepConfig scfg;
    std::string sweep_out = "sweep_out", sweep_config;
    std::size_t sweep_seed_count = 0;
    sweep->add_option("--out", sweep_out, "output directory");
    sweep->add_option("--config", sweep_config, "JSON config (flags override)");
    sweep->add_option("--n-hf", scfg.n_hf, "training-set sizes");
    sweep->add_option("--seeds", sweep_seed_count, "number of seeds (0 = keep default)");
    sweep->add_option("--test-points", scfg.test_points, "test-set size");
    sweep->add_option("--epochs", scfg.epochs, "training epochs");
    sweep->add_option("--batch", scfg.batch, "batch size");
    sweep->add_option("--lr", scfg.lr, "initial learning rate");
    sweep->add_option("--patience", scfg.patience, "plateau patience");
    sweep->add_option("--jobs", scfg.jobs, "parallel trials");
    sweep->add_option("--base-seed", scfg.base_seed, "base seed for all streams");

    // tolerance-study
    auto* study = app.add_subcommand("tolerance-study", "Tolerance/cost convergence study");
    StudyConfig tcfg;
    std::string study_out = "study_out", study_config;
    study->add_option("--problem", tcfg.problem, "ivp|wave");
    study->add_option("--out", study_out, "output directory");
    study->add_option("--config", study_config, "JSON config (flags override)");
    study->add_option("--eps", tcfg.eps, "tolerance levels");
    study->add_option("--trials", tcfg.trials, "MC repetitions for the error scatter");
    study->add_option("--n-eval", tcfg.n_eval, "MSE evaluation points");
    study->add_flag("--full-scale", tcfg.full_scale, "allow full-scale sample counts");
    bool no_hfm = false;
    study->add_flag("--no-hfm", no_hfm, "skip the direct high-fidelity MC");
    study->add_option("--base-seed", tcfg.base_seed, "base seed");
    study->add_flag("--emit-datasets", tcfg.emit_datasets, "write assembled datasets");
    study->add_flag("--emit-checkpoints", tcfg.emit_checkpoints, "write surrogate bundles");

    // train
    auto* train = app.add_subcommand("train", "Train one network from a dataset CSV");
    std::string train_problem, train_method = "dnn";
    std::string train_data, train_out = "train_out";
    std::vector<std::size_t> train_hidden{20, 20};
    std::size_t train_epochs = 500, train_batch = 20, train_shortcut = 0;
    double train_lr = 0.005;
    uint64_t train_seed = 0;
    bool train_raw = false;
    train->add_option("--problem", train_problem, "problem name (sets the domain box)");
    train->add_option("--method", train_method, "resnn|dnn|mfnn|hfnn")->required();
    train->add_option("--data", train_data, "dataset CSV")->required();
    train->add_option("--out", train_out, "output bundle directory");
    train->add_option("--hidden", train_hidden, "hidden-layer widths");
    train->add_option("--epochs", train_epochs, "epochs");
    train->add_option("--batch", train_batch, "batch size");
    train->add_option("--lr", train_lr, "initial learning rate");
    train->add_option("--seed", train_seed, "seed");
    train->add_option("--shortcut-period", train_shortcut, "identity-skip period (0 = none)");
    train->add_flag("--raw-inputs", train_raw, "skip the unit-box input map");

    // predict
    auto* predict = app.add_subcommand("predict", "Evaluate a saved bundle on a dataset CSV");
    std::string pred_bundle, pred_problem, pred_data, pred_out = "predictions.csv";
    predict->add_option("--bundle", pred_bundle, "bundle directory")->required();
    predict->add_option("--problem", pred_problem, "problem name (domain override)");
    predict->add_option("--data", pred_data, "dataset CSV")->required();
    predict->add_option("--out", pred_out, "output CSV");

    // mc
    auto* mc = app.add_subcommand("mc", "Monte-Carlo mean of a model or bundle");
    std::string mc_problem = "ivp", mc_model = "exact", mc_bundle, mc_out;
    unsigned long long mc_n = 1000;
    uint64_t mc_seed = 0;
    double mc_h = 0.0;
    mc->add_option("--problem", mc_problem, "problem name")->required();
    mc->add_option("--model", mc_model, "exact|hf|lf|bundle");
    mc->add_option("--bundle", mc_bundle, "bundle directory (model=bundle)");
    mc->add_option("--n-theta", mc_n, "sample count")->required();
    mc->add_option("--seed", mc_seed, "seed");
    mc->add_option("--step", mc_h, "discretization step for hf/lf models");
    mc->add_option("--out", mc_out, "write JSON here instead of stdout");

    try {
        app.parse(argc, argv);

        if (*plan) return cmd_plan(plan_problem, plan_eps, plan_scale, plan_out);
        if (*ped) return cmd_pedagogy(ped_out, ped_dt, ped_points);
        if (*sweep) {
            if (!sweep_config.empty()) {
                const json cfg = load_json(sweep_config);
                check_config_keys(cfg,
                                  {"problem", "methods", "n_hf", "seeds", "test_points",
                                   "epochs", "batch", "lr", "patience", "jobs", "base_seed",
                                   "output_dir", "emit"},
                                  "sweep");
                if (cfg.contains("emit")) {
                    check_config_keys(cfg["emit"],
                                      {"datasets", "checkpoints", "reports", "figure_csv"},
                                      "sweep.emit");
                    maybe_get(cfg["emit"], "datasets", scfg.emit_datasets);
                }
                maybe_get(cfg, "methods", scfg.methods);
                maybe_get(cfg, "n_hf", scfg.n_hf);
                maybe_get(cfg, "test_points", scfg.test_points);
                maybe_get(cfg, "epochs", scfg.epochs);
                maybe_get(cfg, "batch", scfg.batch);
                maybe_get(cfg, "lr", scfg.lr);
                maybe_get(cfg, "patience", scfg.patience);
                maybe_get(cfg, "jobs", scfg.jobs);
                maybe_get(cfg, "base_seed", scfg.base_seed);
                if (cfg.contains("seeds"))
                    scfg.seeds = cfg["seeds"].get<std::vector<uint64_t>>();
                if (cfg.contains("output_dir") && sweep_out == "sweep_out")
                    sweep_out = cfg["output_dir"].get<std::string>();
            }
            if (sweep_seed_count > 0) {
                scfg.seeds.clear();
                for (uint64_t s = 0; s < sweep_seed_count; ++s) scfg.seeds.push_back(s);
            }
            return cmd_sweep(scfg, sweep_out);
        }
        if (*study) {
            if (!study_config.empty()) {
                const json cfg = load_json(study_config);
                check_config_keys(cfg,
                                  {"problem", "eps_tol", "trials", "n_eval", "with_hfm",
                                   "full_scale", "base_seed", "output_dir", "emit"},
                                  "tolerance-study");
                maybe_get(cfg, "problem", tcfg.problem);
                if (cfg.contains("eps_tol"))
                    tcfg.eps = cfg["eps_tol"].get<std::vector<double>>();
                maybe_get(cfg, "trials", tcfg.trials);
                maybe_get(cfg, "n_eval", tcfg.n_eval);
                maybe_get(cfg, "full_scale", tcfg.full_scale);
                maybe_get(cfg, "base_seed", tcfg.base_seed);
                if (cfg.contains("with_hfm")) tcfg.with_hfm = cfg["with_hfm"].get<bool>();
                if (cfg.contains("output_dir") && study_out == "study_out")
                    study_out = cfg["output_dir"].get<std::string>();
                if (cfg.contains("emit")) {
                    check_config_keys(cfg["emit"],
                                      {"datasets", "checkpoints", "reports", "figure_csv"},
                                      "tolerance-study.emit");
                    maybe_get(cfg["emit"], "datasets", tcfg.emit_datasets);
                    maybe_get(cfg["emit"], "checkpoints", tcfg.emit_checkpoints);
                }
            }
            if (no_hfm) tcfg.with_hfm = false;
            return cmd_tolerance_study(tcfg, study_out);
        }
        if (*train)
            return cmd_train(train_problem, train_method, train_data, train_out, train_hidden,
                             train_epochs, train_batch, train_lr, train_seed, train_raw,
                             train_shortcut);
        if (*predict) return cmd_predict(pred_bundle, pred_problem, pred_data, pred_out);
        if (*mc) return cmd_mc(mc_problem, mc_model, mc_bundle, mc_n, mc_seed, mc_h, mc_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        // --help lands here with exit code 0.
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const net::TrainingDivergedError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const net::CheckpointError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
