#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmfnn/rng.hpp"

namespace rmfnn::fidelity {

/// Axis-aligned parameter box.
struct Box {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t dim() const { return lower.size(); }
    void validate() const;
    bool contains(std::span<const double> theta) const;
};

using Evaluator = std::function<double(const std::vector<double>&)>;

/// Low/high-fidelity evaluator pair with discretization metadata.
/// order_q / ratio_s are 0 when not applicable (analytic pairs).
struct FidelityPair {
    Evaluator q_lf;
    Evaluator q_hf;
    double order_q = 0.0;
    double ratio_s = 0.0;     // h_LF = s * h_HF, s > 1 when set
    double cost_lf_s = 0.0;   // measured mean seconds per evaluation
    double cost_hf_s = 0.0;

    void validate() const;
};

enum class DesignRule { GridStride, RandomStride };

struct DesignSpec {
    DesignRule rule = DesignRule::GridStride;
    std::size_t stride = 2;
    std::uint64_t seed = 0;
    // Optional explicit per-dimension grid sizes (product must equal N).
    std::vector<std::size_t> grid_dims;
};

struct DesignPlan {
    std::vector<std::vector<double>> theta_I;
    std::vector<std::vector<double>> theta_II;
    Box domain;
    DesignSpec spec;

    std::size_t total() const { return theta_I.size() + theta_II.size(); }
};

enum class Provenance { Real, Synthetic };

struct Record {
    std::vector<double> theta;
    double q_lf = 0.0;
    std::optional<double> q_hf;
    Provenance provenance = Provenance::Real;
};

/// Per-dimension affine map between a box and the unit cube.
struct BoxMap {
    std::vector<double> lo;
    std::vector<double> width;

    static BoxMap identity(std::size_t dim);
    static BoxMap for_box(const Box& box);
    bool is_identity() const;

    void to_unit(std::span<const double> x, double* out) const;
    void from_unit(std::span<const double> u, double* out) const;
};

struct Dataset {
    std::vector<Record> records;
    Box domain;
    BoxMap normalization;  // map already applied to record thetas

    std::size_t size() const { return records.size(); }
};

/// Uniform tensor grid with explicit per-dimension counts, row-major order
/// (last dimension fastest).
std::vector<std::vector<double>> tensor_grid(const Box& box, const std::vector<std::size_t>& dims);

/// Tensor grid of n total points, aspect chosen from the box widths.
std::vector<std::vector<double>> uniform_grid(const Box& box, std::size_t n);

std::vector<std::vector<double>> random_points(const Box& box, std::size_t n, Rng& rng);

DesignPlan build_design(const Box& box, std::size_t n, const DesignSpec& spec);

/// Evaluates the pair over the plan: q_lf at all points, q_hf on theta_I.
/// Mean per-call wall times are written back into the pair's cost fields.
Dataset assemble(FidelityPair& pair, const DesignPlan& plan);

/// (1 + s^q) * eps_tol
double residual_bound(double s, double q, double eps_tol);

struct ResidualStats {
    double max_residual = 0.0;
    double max_hf = 0.0;
    double ratio = 0.0;
};

ResidualStats residual_ratio(const FidelityPair& pair,
                             const std::vector<std::vector<double>>& grid);

/// Affine map of record thetas into [0,1]^d using the dataset domain.
/// Targets are never normalized.
Dataset normalize(const Dataset& ds);
Dataset denormalize(const Dataset& ds);

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path);

/// Mean seconds per evaluation over `reps` repeats (monotonic clock).
double measure_eval_cost(const Evaluator& f, const std::vector<double>& theta, int reps = 10);

}  // namespace rmfnn::fidelity
