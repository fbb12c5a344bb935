#include "rmfnn/problems.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace rmfnn::problems {

namespace {

constexpr double kDivisibilityTol = 1e-8;

long long checked_step_count(double total, double step, const char* what) {
    if (step <= 0.0) throw std::invalid_argument(std::string(what) + ": step must be > 0");
    const double ratio = total / step;
    const long long n = static_cast<long long>(std::llround(ratio));
    if (n < 1 || std::abs(static_cast<double>(n) * step - total) >
                     kDivisibilityTol * std::max(1.0, total))
        throw std::invalid_argument(std::string(what) + ": step " + std::to_string(step) +
                                    " does not divide " + std::to_string(total));
    return n;
}

// Damped oscillator system matrix.
constexpr std::array<double, 4> kDampedA{0.0, 1.0, -3.0, -3.0};

}  // namespace

const char* name(ProblemId id) {
    switch (id) {
        case ProblemId::DampedOscillator: return "damped";
        case ProblemId::PulsedOscillator: return "pulsed";
        case ProblemId::ParametricIVP: return "ivp";
        case ProblemId::WaveIBVP: return "wave";
    }
    return "?";
}

ProblemId problem_from_name(const std::string& s) {
    if (s == "damped") return ProblemId::DampedOscillator;
    if (s == "pulsed") return ProblemId::PulsedOscillator;
    if (s == "ivp") return ProblemId::ParametricIVP;
    if (s == "wave") return ProblemId::WaveIBVP;
    throw std::invalid_argument("unknown problem '" + s + "' (damped|pulsed|ivp|wave)");
}

fidelity::Box domain(ProblemId id) {
    switch (id) {
        case ProblemId::DampedOscillator: return {{10.0}, {50.0}};
        case ProblemId::PulsedOscillator: return {{5.0, 0.0, 0.0, 4.0}, {50.0, 6.0, 0.2, 4.5}};
        case ProblemId::ParametricIVP: return {{-1.0}, {1.0}};
        case ProblemId::WaveIBVP: return {{10.0, 4.0}, {11.0, 6.0}};
    }
    throw std::invalid_argument("domain: bad problem id");
}

std::array<double, 4> mat2_exp(const std::array<double, 4>& a, double t) {
    // e^{tA} = e^{mu t} (phi0 I + phi1 B), B = A - mu I, B^2 = D I,
    // D = mu^2 - det A. phi0/phi1 are cosh/sinh, cos/sin, or the degenerate
    // limit depending on the sign of D.
    const double mu = 0.5 * (a[0] + a[3]);
    const double det = a[0] * a[3] - a[1] * a[2];
    const double d = mu * mu - det;
    const double scale = std::max({1.0, std::abs(a[0]), std::abs(a[1]), std::abs(a[2]),
                                   std::abs(a[3])});

    double phi0, phi1;
    if (d > 1e-14 * scale * scale) {
        const double w = std::sqrt(d);
        phi0 = std::cosh(w * t);
        phi1 = std::sinh(w * t) / w;
    } else if (d < -1e-14 * scale * scale) {
        const double w = std::sqrt(-d);
        phi0 = std::cos(w * t);
        phi1 = std::sin(w * t) / w;
    } else {
        phi0 = 1.0;
        phi1 = t;
    }
    const double e = std::exp(mu * t);
    return {e * (phi0 + phi1 * (a[0] - mu)), e * phi1 * a[1],
            e * phi1 * a[2], e * (phi0 + phi1 * (a[3] - mu))};
}

double DampedOscillator::hf(double theta, double dt) const {
    if (dt <= 0.0) throw std::invalid_argument("damped_hf: dt must be > 0");
    const double t_end = terminal_time;
    const long long n_full = static_cast<long long>(t_end / dt);
    double u1 = u0[0], u2 = u0[1];
    double t = 0.0;
    for (long long k = 0; k < n_full; ++k) {
        t = static_cast<double>(k) * dt;
        const double f = std::cos(theta * t);
        const double du1 = kDampedA[0] * u1 + kDampedA[1] * u2 + f * b[0];
        const double du2 = kDampedA[2] * u1 + kDampedA[3] * u2 + f * b[1];
        u1 += dt * du1;
        u2 += dt * du2;
    }
    // Final partial step up to T when dt does not divide it.
    const double rem = t_end - static_cast<double>(n_full) * dt;
    if (rem > kDivisibilityTol) {
        t = static_cast<double>(n_full) * dt;
        const double f = std::cos(theta * t);
        const double du1 = kDampedA[0] * u1 + kDampedA[1] * u2 + f * b[0];
        const double du2 = kDampedA[2] * u1 + kDampedA[3] * u2 + f * b[1];
        u1 += rem * du1;
        u2 += rem * du2;
    }
    return u2 * u2;
}

double DampedOscillator::lf(double theta) const {
    if (theta == 0.0) throw std::invalid_argument("damped_lf: theta must be nonzero");
    const double t = terminal_time;
    const auto e = mat2_exp(kDampedA, t);
    const double s = std::sin(theta * t) / theta;
    const double u2 = e[2] * u0[0] + e[3] * u0[1] + s * b[1];
    return u2 * u2;
}

namespace {
constexpr std::array<double, 2> kPulsedA{-2.0, -0.25};
constexpr std::array<double, 2> kPulsedU0{1.0, 20.0};
}  // namespace

double pulsed_exact(const std::array<double, 4>& theta) {
    const double omega = theta[0], t = theta[1];
    const std::array<double, 2> b{theta[2], theta[3]};
    double q = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double a = kPulsedA[i];
        const double e = std::exp(a * t);
        // Convolution of the harmonic forcing; vanishes identically at t = 0.
        const double force = b[i] * ((-a * std::cos(omega * t) + omega * std::sin(omega * t) +
                                      a * e) /
                                     (a * a + omega * omega));
        const double u = kPulsedU0[i] * e + force;
        q += u * u;
    }
    return std::sqrt(q);
}

double pulsed_asymptotic(const std::array<double, 4>& theta) {
    const double omega = theta[0], t = theta[1];
    if (omega == 0.0) throw std::invalid_argument("pulsed_asymptotic: omega must be nonzero");
    const std::array<double, 2> b{theta[2], theta[3]};
    const double s = std::sin(omega * t) / omega;
    double q = 0.0;
    for (int i = 0; i < 2; ++i) {
        const double u = kPulsedU0[i] * std::exp(kPulsedA[i] * t) + s * b[i];
        q += u * u;
    }
    return std::sqrt(q);
}

double ivp_solution(double t, double theta) {
    return 0.5 + 2.0 * std::sin(12.0 * theta) +
           6.0 * std::sin(2.0 * t) * std::sin(10.0 * theta) * (1.0 + 2.0 * theta * theta);
}

double ivp_exact(double theta) { return std::abs(ivp_solution(ivp_terminal_time, theta)); }

double ivp_forcing(double t, double theta) {
    const double ut =
        12.0 * std::cos(2.0 * t) * std::sin(10.0 * theta) * (1.0 + 2.0 * theta * theta);
    return ut + 0.5 * ivp_solution(t, theta);
}

double ivp_rk2(double theta, double h) {
    const long long steps = checked_step_count(ivp_terminal_time, h, "ivp_rk2");
    // u' = -0.5 u + f(t, theta); theta-only factors hoisted out of the loop.
    const double osc = std::sin(10.0 * theta) * (1.0 + 2.0 * theta * theta);
    const double base = 0.25 + std::sin(12.0 * theta);  // 0.5 * (0.5 + 2 sin(12 theta))
    auto rhs = [&](double t, double u) {
        const double f = 12.0 * std::cos(2.0 * t) * osc +
                         (base + 3.0 * std::sin(2.0 * t) * osc);
        return -0.5 * u + f;
    };
    double u = ivp_solution(0.0, theta);
    for (long long k = 0; k < steps; ++k)
        u = rk2_step(rhs, static_cast<double>(k) * h, u, h);
    return std::abs(u);
}

double wave_solution(double t, double x1, double x2, const std::array<double, 2>& theta) {
    return std::sin(theta[0] * t - theta[1] * x1) * std::sin(theta[1] * x2);
}

double wave_exact_at(const std::array<double, 2>& theta, double t_final) {
    return std::abs(wave_solution(t_final, 0.5, 0.5, theta));
}

double wave_exact(const std::array<double, 2>& theta) {
    return wave_exact_at(theta, wave_terminal_time);
}

double wave_fd_at(const std::array<double, 2>& theta, double h, double t_final,
                  SolverStats* stats) {
    const auto t_start = std::chrono::steady_clock::now();
    const long long m = checked_step_count(2.0, h, "wave_fd");  // nodes per side - 1
    const double dt = 0.5 * h;
    const long long steps = checked_step_count(t_final, dt, "wave_fd");
    const std::size_t side = static_cast<std::size_t>(m) + 1;

    const double th1 = theta[0], th2 = theta[1];
    const double coeff = 2.0 * th2 * th2 - th1 * th1;  // f = coeff * u

    // u(t, x1, x2) = (sin(th1 t) cos(th2 x1) - cos(th1 t) sin(th2 x1)) sin(th2 x2):
    // per-axis factors are precomputed, only sin/cos(th1 t) vary per step.
    std::vector<double> cos1(side), sin1(side), sin2(side);
    for (std::size_t i = 0; i < side; ++i) {
        const double x = -1.0 + h * static_cast<double>(i);
        cos1[i] = std::cos(th2 * x);
        sin1[i] = std::sin(th2 * x);
        sin2[i] = std::sin(th2 * x);
    }
    auto exact_row_factor = [&](double t, std::vector<double>& ax) {
        const double st = std::sin(th1 * t), ct = std::cos(th1 * t);
        for (std::size_t i = 0; i < side; ++i) ax[i] = st * cos1[i] - ct * sin1[i];
    };

    std::vector<double> ax(side);
    std::vector<double> u_prev(side * side), u_cur(side * side), u_next(side * side);
    auto at = [side](std::vector<double>& u, std::size_t i, std::size_t j) -> double& {
        return u[i * side + j];
    };

    // Initial data g1 and the Taylor-seeded second-order first step:
    // u^1 = u^0 + dt g2 + dt^2/2 (lap u^0 + f^0), g2 = th1 cos(th2 x1) sin(th2 x2).
    exact_row_factor(0.0, ax);
    for (std::size_t i = 0; i < side; ++i)
        for (std::size_t j = 0; j < side; ++j) at(u_prev, i, j) = ax[i] * sin2[j];

    const double inv_h2 = 1.0 / (h * h);
    const double half_dt2 = 0.5 * dt * dt;
    for (std::size_t i = 1; i + 1 < side; ++i) {
        for (std::size_t j = 1; j + 1 < side; ++j) {
            const double u0 = at(u_prev, i, j);
            const double lap = (at(u_prev, i + 1, j) + at(u_prev, i - 1, j) +
                                at(u_prev, i, j + 1) + at(u_prev, i, j - 1) - 4.0 * u0) *
                               inv_h2;
            const double g2 = th1 * cos1[i] * sin2[j];
            at(u_cur, i, j) = u0 + dt * g2 + half_dt2 * (lap + coeff * u0);
        }
    }
    exact_row_factor(dt, ax);
    for (std::size_t i = 0; i < side; ++i) {
        at(u_cur, i, 0) = ax[i] * sin2[0];
        at(u_cur, i, side - 1) = ax[i] * sin2[side - 1];
        at(u_cur, 0, i) = ax[0] * sin2[i];
        at(u_cur, side - 1, i) = ax[side - 1] * sin2[i];
    }

    const double dt2 = dt * dt;
    for (long long n = 1; n < steps; ++n) {
        const double t = static_cast<double>(n) * dt;
        exact_row_factor(t, ax);
        for (std::size_t i = 1; i + 1 < side; ++i) {
            const double fi = coeff * ax[i];
            for (std::size_t j = 1; j + 1 < side; ++j) {
                const double uc = at(u_cur, i, j);
                const double lap = (at(u_cur, i + 1, j) + at(u_cur, i - 1, j) +
                                    at(u_cur, i, j + 1) + at(u_cur, i, j - 1) - 4.0 * uc) *
                                   inv_h2;
                at(u_next, i, j) = 2.0 * uc - at(u_prev, i, j) + dt2 * (lap + fi * sin2[j]);
            }
        }
        exact_row_factor(t + dt, ax);
        for (std::size_t i = 0; i < side; ++i) {
            at(u_next, i, 0) = ax[i] * sin2[0];
            at(u_next, i, side - 1) = ax[i] * sin2[side - 1];
            at(u_next, 0, i) = ax[0] * sin2[i];
            at(u_next, side - 1, i) = ax[side - 1] * sin2[i];
        }
        std::swap(u_prev, u_cur);
        std::swap(u_cur, u_next);
    }

    // QoI at (0.5, 0.5): exact node when 1.5/h is integral, else bilinear.
    const double pos = 1.5 / h;
    const std::size_t iq = static_cast<std::size_t>(std::llround(pos));
    double value;
    bool interpolated = false;
    if (std::abs(static_cast<double>(iq) * h - 1.5) <= kDivisibilityTol) {
        value = at(u_cur, iq, iq);
    } else {
        interpolated = true;
        const std::size_t i0 = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(i0);
        value = (1.0 - w) * (1.0 - w) * at(u_cur, i0, i0) +
                w * (1.0 - w) * (at(u_cur, i0 + 1, i0) + at(u_cur, i0, i0 + 1)) +
                w * w * at(u_cur, i0 + 1, i0 + 1);
    }

    if (stats) {
        stats->steps = steps;
        stats->grid_nodes = static_cast<long long>(side) * static_cast<long long>(side);
        stats->interpolated_qoi = interpolated;
        stats->wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    }
    return std::abs(value);
}

double wave_fd(const std::array<double, 2>& theta, double h, SolverStats* stats) {
    return wave_fd_at(theta, h, wave_terminal_time, stats);
}

namespace {

std::array<double, 4> theta4(const std::vector<double>& v) {
    if (v.size() != 4) throw std::invalid_argument("pulsed evaluator: theta must have 4 entries");
    return {v[0], v[1], v[2], v[3]};
}

std::array<double, 2> theta2(const std::vector<double>& v) {
    if (v.size() != 2) throw std::invalid_argument("wave evaluator: theta must have 2 entries");
    return {v[0], v[1]};
}

double theta1(const std::vector<double>& v) {
    if (v.size() != 1) throw std::invalid_argument("evaluator: theta must have 1 entry");
    return v[0];
}

}  // namespace

fidelity::FidelityPair make_damped_pair(double dt_hf) {
    fidelity::FidelityPair p;
    p.q_lf = [](const std::vector<double>& th) { return DampedOscillator{}.lf(theta1(th)); };
    p.q_hf = [dt_hf](const std::vector<double>& th) {
        return DampedOscillator{}.hf(theta1(th), dt_hf);
    };
    p.order_q = 2.0;  // LF truncation error is O(theta^-2)
    return p;
}

fidelity::FidelityPair make_pulsed_pair() {
    fidelity::FidelityPair p;
    p.q_lf = [](const std::vector<double>& th) { return pulsed_asymptotic(theta4(th)); };
    p.q_hf = [](const std::vector<double>& th) { return pulsed_exact(theta4(th)); };
    p.order_q = 2.0;
    return p;
}

fidelity::FidelityPair make_ivp_pair(double h_hf, double h_lf) {
    if (!(h_hf > 0.0) || !(h_lf > h_hf))
        throw std::invalid_argument("make_ivp_pair: need 0 < h_hf < h_lf");
    fidelity::FidelityPair p;
    p.q_lf = [h_lf](const std::vector<double>& th) { return ivp_rk2(theta1(th), h_lf); };
    p.q_hf = [h_hf](const std::vector<double>& th) { return ivp_rk2(theta1(th), h_hf); };
    p.order_q = 2.0;
    p.ratio_s = h_lf / h_hf;
    return p;
}

fidelity::FidelityPair make_wave_pair(double h_hf, double h_lf) {
    if (!(h_hf > 0.0) || !(h_lf > h_hf))
        throw std::invalid_argument("make_wave_pair: need 0 < h_hf < h_lf");
    fidelity::FidelityPair p;
    p.q_lf = [h_lf](const std::vector<double>& th) { return wave_fd(theta2(th), h_lf); };
    p.q_hf = [h_hf](const std::vector<double>& th) { return wave_fd(theta2(th), h_hf); };
    p.order_q = 2.0;
    p.ratio_s = h_lf / h_hf;
    return p;
}

}  // namespace rmfnn::problems
