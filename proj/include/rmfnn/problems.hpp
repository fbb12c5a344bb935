#pragma once

#include <array>
#include <string>

#include "rmfnn/fidelity.hpp"

namespace rmfnn::problems {

enum class ProblemId { DampedOscillator, PulsedOscillator, ParametricIVP, WaveIBVP };

const char* name(ProblemId id);
ProblemId problem_from_name(const std::string& s);
fidelity::Box domain(ProblemId id);

/// Closed-form 2x2 matrix exponential e^{tA} (row-major), all eigenvalue cases.
std::array<double, 4> mat2_exp(const std::array<double, 4>& a, double t);

/// Forced damped oscillator u' = A u + cos(theta t) b with
/// A = [[0,1],[-3,-3]], QoI u_2(1)^2. High fidelity integrates forward
/// Euler; low fidelity evaluates the first-order asymptotic closed form.
struct DampedOscillator {
    std::array<double, 2> u0{0.0, 0.0};
    std::array<double, 2> b{0.0, 0.6};
    static constexpr double terminal_time = 1.0;

    double hf(double theta, double dt) const;
    double lf(double theta) const;
};

/// Pulsed oscillator u_i' = a_i u_i + b_i cos(omega t), a = (-2, -0.25),
/// u(0) = (1, 20), QoI sqrt(u_1^2 + u_2^2). theta = (omega, t, b1, b2).
double pulsed_exact(const std::array<double, 4>& theta);
double pulsed_asymptotic(const std::array<double, 4>& theta);

/// Parametric IVP u_t + 0.5 u = f(t, theta) with manufactured solution
/// u = 0.5 + 2 sin(12 theta) + 6 sin(2t) sin(10 theta)(1 + 2 theta^2),
/// QoI |u(100, theta)|.
double ivp_solution(double t, double theta);
double ivp_exact(double theta);
double ivp_forcing(double t, double theta);
constexpr double ivp_terminal_time = 100.0;

/// One explicit-midpoint step for u' = rhs(t, u).
template <typename Rhs>
double rk2_step(Rhs&& rhs, double t, double u, double h) {
    const double k1 = rhs(t, u);
    const double k2 = rhs(t + 0.5 * h, u + 0.5 * h * k1);
    return u + h * k2;
}

/// Explicit-midpoint RK2 for the IVP; h must divide T = 100.
double ivp_rk2(double theta, double h);

struct SolverStats {
    double wall_time_s = 0.0;
    long long steps = 0;
    long long grid_nodes = 0;
    bool interpolated_qoi = false;
};

/// Wave IBVP u_tt - lap(u) = f on [-1,1]^2 with manufactured solution
/// u = sin(theta1 t - theta2 x1) sin(theta2 x2); QoI |u(T, (0.5, 0.5))|.
double wave_solution(double t, double x1, double x2, const std::array<double, 2>& theta);
double wave_exact_at(const std::array<double, 2>& theta, double t_final);
double wave_exact(const std::array<double, 2>& theta);  // T = 30
constexpr double wave_terminal_time = 30.0;

/// Second-order leapfrog with 5-point Laplacian, dt = h/2; 2/h must be an
/// integer. QoI read at the grid node nearest (0.5, 0.5) (exact node for
/// all conforming h used here; bilinear interpolation otherwise, flagged).
double wave_fd_at(const std::array<double, 2>& theta, double h, double t_final,
                  SolverStats* stats = nullptr);
double wave_fd(const std::array<double, 2>& theta, double h, SolverStats* stats = nullptr);

// Fidelity pair factories.
fidelity::FidelityPair make_damped_pair(double dt_hf = 1e-6);
fidelity::FidelityPair make_pulsed_pair();
fidelity::FidelityPair make_ivp_pair(double h_hf, double h_lf);
fidelity::FidelityPair make_wave_pair(double h_hf, double h_lf);

}  // namespace rmfnn::problems
