#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "rmfnn/problems.hpp"
#include "rmfnn/rng.hpp"

using namespace rmfnn;
using namespace rmfnn::problems;

namespace {

// --- Oracles (independent re-implementations used only by tests) ---

// Classical RK4 for the 2-state system u' = A u + cos(w t) b.
std::array<double, 2> rk4_linear_forced(const std::array<double, 4>& a,
                                        const std::array<double, 2>& b,
                                        const std::array<double, 2>& u0, double w,
                                        double t_end, double dt) {
    auto rhs = [&](double t, const std::array<double, 2>& u) {
        const double f = std::cos(w * t);
        return std::array<double, 2>{a[0] * u[0] + a[1] * u[1] + f * b[0],
                                     a[2] * u[0] + a[3] * u[1] + f * b[1]};
    };
    std::array<double, 2> u = u0;
    const long long n = std::llround(t_end / dt);
    for (long long k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        const auto k1 = rhs(t, u);
        const auto k2 = rhs(t + 0.5 * dt, {u[0] + 0.5 * dt * k1[0], u[1] + 0.5 * dt * k1[1]});
        const auto k3 = rhs(t + 0.5 * dt, {u[0] + 0.5 * dt * k2[0], u[1] + 0.5 * dt * k2[1]});
        const auto k4 = rhs(t + dt, {u[0] + dt * k3[0], u[1] + dt * k3[1]});
        u[0] += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        u[1] += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    return u;
}

// Scaling-and-squaring Taylor series for e^{tA}, 2x2.
std::array<double, 4> expm_series(const std::array<double, 4>& a, double t) {
    double norm = 0.0;
    for (double v : a) norm = std::max(norm, std::abs(v) * std::abs(t));
    int squarings = 0;
    double scale = 1.0;
    while (norm * scale > 0.5) {
        scale *= 0.5;
        ++squarings;
    }
    const std::array<double, 4> b{a[0] * t * scale, a[1] * t * scale, a[2] * t * scale,
                                  a[3] * t * scale};
    auto mul = [](const std::array<double, 4>& x, const std::array<double, 4>& y) {
        return std::array<double, 4>{x[0] * y[0] + x[1] * y[2], x[0] * y[1] + x[1] * y[3],
                                     x[2] * y[0] + x[3] * y[2], x[2] * y[1] + x[3] * y[3]};
    };
    std::array<double, 4> result{1.0, 0.0, 0.0, 1.0};
    std::array<double, 4> term{1.0, 0.0, 0.0, 1.0};
    for (int k = 1; k <= 24; ++k) {
        term = mul(term, b);
        for (double& v : term) v /= static_cast<double>(k);
        for (int i = 0; i < 4; ++i) result[i] += term[i];
    }
    for (int s = 0; s < squarings; ++s) result = mul(result, result);
    return result;
}

double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(xs[i]);
        my += std::log(ys[i]);
    }
    mx /= n;
    my /= n;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (std::log(xs[i]) - mx) * (std::log(ys[i]) - my);
        den += (std::log(xs[i]) - mx) * (std::log(xs[i]) - mx);
    }
    return num / den;
}

constexpr std::array<double, 4> kDampedA{0.0, 1.0, -3.0, -3.0};

}  // namespace

TEST_CASE("mat2_exp agrees with the series oracle on all eigenvalue cases") {
    const std::vector<std::array<double, 4>> cases{
        kDampedA,                      // complex pair
        {1.0, 2.0, 0.5, -0.25},        // real distinct
        {-2.0, 0.0, 0.0, -0.25},       // diagonal
        {3.0, 1.0, 0.0, 3.0},          // repeated eigenvalue, defective
        {0.0, 0.0, 0.0, 0.0},          // zero matrix
    };
    for (const auto& a : cases) {
        for (double t : {0.25, 1.0, 2.0}) {
            const auto got = mat2_exp(a, t);
            const auto want = expm_series(a, t);
            for (int i = 0; i < 4; ++i)
                CHECK(std::abs(got[i] - want[i]) < 1e-12 * std::max(1.0, std::abs(want[i])));
        }
    }
}

TEST_CASE("damped_hf matches an RK4 reference at theta = 10") {
    DampedOscillator osc;
    const double q = osc.hf(10.0, 1e-6);
    const auto u = rk4_linear_forced(kDampedA, {0.0, 0.6}, {0.0, 0.0}, 10.0, 1.0, 1e-5);
    const double ref = u[1] * u[1];
    CHECK(std::abs(q - ref) / std::abs(ref) < 1e-5);
}

TEST_CASE("damped oscillator trivia: zero forcing, dt validation") {
    DampedOscillator zero;
    zero.b = {0.0, 0.0};
    CHECK(zero.hf(10.0, 1e-4) == 0.0);
    CHECK(zero.lf(10.0) == 0.0);
    CHECK_THROWS_AS(DampedOscillator{}.hf(10.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(DampedOscillator{}.lf(0.0), std::invalid_argument);
}

TEST_CASE("damped_hf converges at first order in dt") {
    DampedOscillator osc;
    const auto u = rk4_linear_forced(kDampedA, {0.0, 0.6}, {0.0, 0.0}, 10.0, 1.0, 1e-5);
    const double ref = u[1] * u[1];
    const std::vector<double> dts{1e-3, 5e-4, 2.5e-4};
    std::vector<double> errs;
    for (double dt : dts) errs.push_back(std::abs(osc.hf(10.0, dt) - ref));
    CHECK(fit_loglog_slope(dts, errs) == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("damped LF deteriorates at low frequency") {
    DampedOscillator osc;
    const double gap_low = std::abs(osc.lf(10.0) - osc.hf(10.0, 1e-5));
    const double gap_high = std::abs(osc.lf(50.0) - osc.hf(50.0, 1e-5));
    CHECK(gap_high < gap_low);
}

TEST_CASE("damped_hf accepts a final partial step") {
    DampedOscillator osc;
    // dt = 3e-7 does not divide T = 1; the result must still be close to the
    // dt = 1e-6 value.
    const double a = osc.hf(10.0, 1e-6);
    const double b = osc.hf(10.0, 3e-7);
    CHECK(std::abs(a - b) < 1e-4 * std::max(1.0, std::abs(a)));
}

TEST_CASE("pulsed_exact: initial condition comes back untouched at t = 0") {
    CHECK(pulsed_exact({5.0, 0.0, 0.0, 0.0}) == std::sqrt(401.0));
    CHECK(pulsed_exact({50.0, 0.0, 0.2, 4.5}) == std::sqrt(401.0));
    CHECK(pulsed_exact({17.3, 0.0, 0.1, 4.2}) == std::sqrt(401.0));
}

TEST_CASE("pulsed_exact matches an RK4 oracle at a generic point") {
    const std::array<double, 4> theta{5.0, 6.0, 0.2, 4.5};
    const double q = pulsed_exact(theta);
    const auto u = rk4_linear_forced({-2.0, 0.0, 0.0, -0.25}, {0.2, 4.5}, {1.0, 20.0}, 5.0,
                                     6.0, 1e-7);
    const double ref = std::sqrt(u[0] * u[0] + u[1] * u[1]);
    CHECK(std::abs(q - ref) / ref < 1e-8);
}

TEST_CASE("pulsed_asymptotic equals pulsed_exact when unforced") {
    for (double t : {0.0, 1.5, 6.0}) {
        const std::array<double, 4> theta{12.0, t, 0.0, 0.0};
        CHECK(pulsed_asymptotic(theta) == pulsed_exact(theta));
    }
}

TEST_CASE("pulsed_asymptotic: forcing term vanishes at omega t = pi") {
    const double omega = 8.0;
    const double t = 3.14159265358979323846 / omega;
    const std::array<double, 4> theta{omega, t, 0.2, 4.4};
    const double expect = std::sqrt(std::pow(std::exp(-2.0 * t), 2) +
                                    std::pow(20.0 * std::exp(-0.25 * t), 2));
    CHECK(pulsed_asymptotic(theta) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("pulsed asymptotic error decays like omega^-2") {
    // Mean gap over a (t, b) grid at omega = 5 vs omega = 50.
    auto mean_gap = [](double omega) {
        double acc = 0.0;
        int count = 0;
        for (double t = 0.5; t <= 6.0; t += 0.5)
            for (double b1 : {0.0, 0.1, 0.2})
                for (double b2 : {4.0, 4.25, 4.5}) {
                    const std::array<double, 4> th{omega, t, b1, b2};
                    acc += std::abs(pulsed_exact(th) - pulsed_asymptotic(th));
                    ++count;
                }
        return acc / count;
    };
    const double ratio = mean_gap(5.0) / mean_gap(50.0);
    // Ideal scaling gives (50/5)^2 = 100; allow a factor of 5.
    CHECK(ratio > 20.0);
    CHECK(ratio < 500.0);
}

TEST_CASE("ivp_exact: pinned values and duplicate transcription") {
    CHECK(ivp_exact(0.0) == 0.5);
    // |0.5 + 2 sin 12 + 18 sin 200 sin 10|, pinned pre-build.
    CHECK(ivp_exact(1.0) == doctest::Approx(7.9785131478058770).epsilon(1e-12));

    Rng rng(321);
    for (int i = 0; i < 1000000; ++i) {
        const double th = rng.uniform(-1.0, 1.0);
        const double dup = std::abs(0.5 + 2.0 * std::sin(12.0 * th) +
                                    6.0 * std::sin(2.0 * 100.0) * std::sin(10.0 * th) *
                                        (1.0 + 2.0 * th * th));
        CHECK(ivp_exact(th) == dup);
    }
}

TEST_CASE("ivp_forcing: theta = 0 gives 0.25, residual vanishes, odd asymmetry") {
    for (double t : {0.0, 1.0, 50.0, 100.0}) CHECK(ivp_forcing(t, 0.0) == 0.25);

    // u_t + 0.5 u - f == 0 with u_t taken by central differences.
    const double h = 1e-6;
    for (double th : {-0.7, 0.2, 0.9})
        for (double t : {0.5, 10.0, 99.5}) {
            const double ut = (ivp_solution(t + h, th) - ivp_solution(t - h, th)) / (2.0 * h);
            const double residual = ut + 0.5 * ivp_solution(t, th) - ivp_forcing(t, th);
            CHECK(std::abs(residual) < 1e-5);
        }

    CHECK(ivp_forcing(1.0, 0.37) != ivp_forcing(1.0, -0.37));
}

TEST_CASE("rk2_step reproduces the second-order Taylor growth factor exactly") {
    const double lambda = -0.5, h = 0.25;  // binary-exact coefficients
    auto rhs = [lambda](double, double u) { return lambda * u; };
    const double got = rk2_step(rhs, 0.0, 1.0, h);
    const double lh = lambda * h;
    CHECK(got == 1.0 + lh + 0.5 * lh * lh);
}

TEST_CASE("ivp_rk2 converges at second order and rejects non-divisor steps") {
    const double exact = ivp_exact(0.3);
    const std::vector<double> hs{0.1, 0.05, 0.025};
    std::vector<double> errs;
    for (double h : hs) errs.push_back(std::abs(ivp_rk2(0.3, h) - exact));
    CHECK(fit_loglog_slope(hs, errs) == doctest::Approx(2.0).epsilon(0.1));

    // h_LF/h_HF = 5 should blow the error up by roughly s^2 = 25.
    const double ratio = std::abs(ivp_rk2(0.3, 0.5) - exact) / errs[0];
    CHECK(ratio > 25.0 / 3.0);
    CHECK(ratio < 25.0 * 3.0);

    CHECK_THROWS_AS(ivp_rk2(0.3, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(ivp_rk2(0.3, -0.1), std::invalid_argument);
}

TEST_CASE("wave_exact: pinned value, zero at theta2 = 2 pi, periodic in theta1") {
    // |sin(298) sin(2)|, pinned pre-build.
    CHECK(wave_exact({10.0, 4.0}) == doctest::Approx(0.39657882392435559).epsilon(1e-12));
    CHECK(wave_exact({10.0, 2.0 * 3.14159265358979323846}) < 1e-14);

    const double period = 2.0 * 3.14159265358979323846 / 30.0;
    for (double th1 : {10.2, 10.7})
        CHECK(wave_exact({th1 + period, 5.0}) ==
              doctest::Approx(wave_exact({th1, 5.0})).epsilon(1e-12));
}

TEST_CASE("wave_fd: zero data propagates the zero field, stats are definitional") {
    SolverStats stats;
    CHECK(wave_fd_at({0.0, 0.0}, 0.125, 1.0, &stats) == 0.0);

    const double h = 1.0 / 20.0;
    wave_fd({10.0, 4.0}, h, &stats);
    CHECK(stats.grid_nodes == 41 * 41);
    CHECK(stats.steps == 1200);  // T / (h/2) = 30 * 40
    CHECK_FALSE(stats.interpolated_qoi);
    CHECK(stats.wall_time_s > 0.0);

    CHECK_THROWS_AS(wave_fd({10.0, 4.0}, 0.3, &stats), std::invalid_argument);
}

TEST_CASE("wave_fd converges at second order against the exact solution (T = 5)") {
    const std::array<double, 2> theta{10.0, 4.0};
    const double exact = wave_exact_at(theta, 5.0);
    const std::vector<double> hs{1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0};
    std::vector<double> errs;
    for (double h : hs) errs.push_back(std::abs(wave_fd_at(theta, h, 5.0) - exact));
    CHECK(fit_loglog_slope(hs, errs) == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("pair factories wire the evaluators coherently") {
    auto pulsed = make_pulsed_pair();
    const std::vector<double> th{25.0, 3.0, 0.1, 4.25};
    CHECK(pulsed.q_hf(th) == pulsed_exact({25.0, 3.0, 0.1, 4.25}));
    CHECK(pulsed.q_lf(th) == pulsed_asymptotic({25.0, 3.0, 0.1, 4.25}));

    auto ivp = make_ivp_pair(0.1, 0.5);
    CHECK(ivp.ratio_s == doctest::Approx(5.0));
    CHECK(ivp.q_hf({0.3}) == ivp_rk2(0.3, 0.1));
    CHECK_THROWS_AS(make_ivp_pair(0.5, 0.1), std::invalid_argument);

    auto wave = make_wave_pair(1.0 / 32.0, 1.0 / 20.0);
    CHECK(wave.q_hf({10.5, 5.0}) == wave_fd({10.5, 5.0}, 1.0 / 32.0));

    // Purity: identical inputs give bitwise-identical outputs.
    CHECK(pulsed.q_hf(th) == pulsed.q_hf(th));
    CHECK(ivp.q_lf({0.3}) == ivp.q_lf({0.3}));
}
