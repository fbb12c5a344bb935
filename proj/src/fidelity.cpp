#include "rmfnn/fidelity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rmfnn::fidelity {

namespace {

void format_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

void Box::validate() const {
    if (lower.empty() || lower.size() != upper.size())
        throw std::invalid_argument("Box: lower/upper must be non-empty and equal length");
    for (std::size_t i = 0; i < lower.size(); ++i)
        if (!(lower[i] < upper[i]))
            throw std::invalid_argument("Box: lower must be strictly below upper in dim " +
                                        std::to_string(i));
}

bool Box::contains(std::span<const double> theta) const {
    if (theta.size() != dim()) return false;
    for (std::size_t i = 0; i < theta.size(); ++i)
        if (theta[i] < lower[i] || theta[i] > upper[i]) return false;
    return true;
}

void FidelityPair::validate() const {
    if (!q_lf || !q_hf) throw std::invalid_argument("FidelityPair: evaluators must be set");
    if (ratio_s != 0.0 && !(ratio_s > 1.0))
        throw std::invalid_argument("FidelityPair: ratio_s must be > 1 when set");
    if (cost_lf_s < 0.0 || cost_hf_s < 0.0)
        throw std::invalid_argument("FidelityPair: costs must be >= 0");
}

BoxMap BoxMap::identity(std::size_t dim) {
    BoxMap m;
    m.lo.assign(dim, 0.0);
    m.width.assign(dim, 1.0);
    return m;
}

BoxMap BoxMap::for_box(const Box& box) {
    box.validate();
    BoxMap m;
    m.lo = box.lower;
    m.width.resize(box.dim());
    for (std::size_t i = 0; i < box.dim(); ++i) {
        m.width[i] = box.upper[i] - box.lower[i];
        if (!(m.width[i] > 0.0))
            throw std::invalid_argument("BoxMap: degenerate domain in dim " + std::to_string(i));
    }
    return m;
}

bool BoxMap::is_identity() const {
    for (double v : lo)
        if (v != 0.0) return false;
    for (double v : width)
        if (v != 1.0) return false;
    return true;
}

void BoxMap::to_unit(std::span<const double> x, double* out) const {
    for (std::size_t i = 0; i < lo.size(); ++i) out[i] = (x[i] - lo[i]) / width[i];
}

void BoxMap::from_unit(std::span<const double> u, double* out) const {
    for (std::size_t i = 0; i < lo.size(); ++i) out[i] = lo[i] + u[i] * width[i];
}

std::vector<std::vector<double>> tensor_grid(const Box& box,
                                             const std::vector<std::size_t>& dims) {
    box.validate();
    if (dims.size() != box.dim())
        throw std::invalid_argument("tensor_grid: dims rank does not match the box");
    std::size_t total = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("tensor_grid: zero-sized dimension");
        total *= d;
    }
    // Per-axis coordinates, endpoints included (single-point axes sit at the center).
    std::vector<std::vector<double>> axes(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
        axes[k].resize(dims[k]);
        if (dims[k] == 1) {
            axes[k][0] = 0.5 * (box.lower[k] + box.upper[k]);
        } else {
            const double w = box.upper[k] - box.lower[k];
            for (std::size_t i = 0; i < dims[k]; ++i)
                axes[k][i] = box.lower[k] +
                             static_cast<double>(i) * w / static_cast<double>(dims[k] - 1);
        }
    }
    std::vector<std::vector<double>> pts;
    pts.reserve(total);
    std::vector<std::size_t> idx(dims.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::vector<double> p(dims.size());
        for (std::size_t k = 0; k < dims.size(); ++k) p[k] = axes[k][idx[k]];
        pts.push_back(std::move(p));
        // row-major increment, last dimension fastest
        for (std::size_t k = dims.size(); k-- > 0;) {
            if (++idx[k] < dims[k]) break;
            idx[k] = 0;
        }
    }
    return pts;
}

std::vector<std::vector<double>> uniform_grid(const Box& box, std::size_t n) {
    box.validate();
    const std::size_t d = box.dim();
    if (d == 1) return tensor_grid(box, {n});
    if (d == 2) {
        // Pick the divisor split whose aspect best matches the domain widths.
        const double target = (box.upper[0] - box.lower[0]) / (box.upper[1] - box.lower[1]);
        std::size_t best_a = 1;
        double best_score = std::numeric_limits<double>::infinity();
        for (std::size_t a = 1; a <= n; ++a) {
            if (n % a != 0) continue;
            const std::size_t b = n / a;
            const double score = std::abs(std::log(static_cast<double>(a) /
                                                   static_cast<double>(b)) -
                                          std::log(target));
            if (score < best_score) {
                best_score = score;
                best_a = a;
            }
        }
        return tensor_grid(box, {best_a, n / best_a});
    }
    throw std::invalid_argument(
        "uniform_grid: pass explicit grid_dims for boxes of dimension > 2");
}

std::vector<std::vector<double>> random_points(const Box& box, std::size_t n, Rng& rng) {
    box.validate();
    std::vector<std::vector<double>> pts(n);
    for (auto& p : pts) {
        p.resize(box.dim());
        for (std::size_t k = 0; k < box.dim(); ++k)
            p[k] = rng.uniform(box.lower[k], box.upper[k]);
    }
    return pts;
}

DesignPlan build_design(const Box& box, std::size_t n, const DesignSpec& spec) {
    box.validate();
    if (n < 2) throw std::invalid_argument("build_design: need at least 2 points");
    if (spec.stride < 2) throw std::invalid_argument("build_design: stride must be >= 2");

    std::vector<std::vector<double>> pts;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    switch (spec.rule) {
        case DesignRule::GridStride: {
            if (!spec.grid_dims.empty()) {
                std::size_t total = 1;
                for (std::size_t d : spec.grid_dims) total *= d;
                if (total != n)
                    throw std::invalid_argument(
                        "build_design: grid_dims product does not equal n");
                pts = tensor_grid(box, spec.grid_dims);
            } else {
                pts = uniform_grid(box, n);
            }
            break;
        }
        case DesignRule::RandomStride: {
            Rng rng(spec.seed);
            pts = random_points(box, n, rng);
            rng.shuffle(order);
            break;
        }
    }

    DesignPlan plan;
    plan.domain = box;
    plan.spec = spec;
    // Flattened indices {0, k, 2k, ...} (of the shuffle for the random rule)
    // form theta_I; everything else is theta_II.
    for (std::size_t i = 0; i < n; ++i) {
        if (i % spec.stride == 0)
            plan.theta_I.push_back(pts[order[i]]);
        else
            plan.theta_II.push_back(pts[order[i]]);
    }
    if (plan.theta_I.empty() || plan.theta_II.empty())
        throw std::invalid_argument("build_design: both sets need at least one point");
    return plan;
}

Dataset assemble(FidelityPair& pair, const DesignPlan& plan) {
    pair.validate();
    using clock = std::chrono::steady_clock;
    Dataset ds;
    ds.domain = plan.domain;
    ds.normalization = BoxMap::identity(plan.domain.dim());
    ds.records.reserve(plan.total());

    double lf_seconds = 0.0, hf_seconds = 0.0;
    auto timed = [](const Evaluator& f, const std::vector<double>& th, double& acc) {
        const auto t0 = clock::now();
        const double v = f(th);
        acc += std::chrono::duration<double>(clock::now() - t0).count();
        return v;
    };

    for (const auto& th : plan.theta_I) {
        Record r;
        r.theta = th;
        r.q_lf = timed(pair.q_lf, th, lf_seconds);
        r.q_hf = timed(pair.q_hf, th, hf_seconds);
        r.provenance = Provenance::Real;
        ds.records.push_back(std::move(r));
    }
    for (const auto& th : plan.theta_II) {
        Record r;
        r.theta = th;
        r.q_lf = timed(pair.q_lf, th, lf_seconds);
        r.provenance = Provenance::Real;
        ds.records.push_back(std::move(r));
    }

    pair.cost_lf_s = lf_seconds / static_cast<double>(plan.total());
    if (!plan.theta_I.empty())
        pair.cost_hf_s = hf_seconds / static_cast<double>(plan.theta_I.size());
    return ds;
}

double residual_bound(double s, double q, double eps_tol) {
    if (!(s > 1.0)) throw std::invalid_argument("residual_bound: s must be > 1");
    if (!(q > 0.0)) throw std::invalid_argument("residual_bound: q must be > 0");
    if (!(eps_tol > 0.0)) throw std::invalid_argument("residual_bound: eps_tol must be > 0");
    return (1.0 + std::pow(s, q)) * eps_tol;
}

ResidualStats residual_ratio(const FidelityPair& pair,
                             const std::vector<std::vector<double>>& grid) {
    if (grid.empty()) throw std::invalid_argument("residual_ratio: empty grid");
    ResidualStats st;
    for (const auto& th : grid) {
        const double hf = pair.q_hf(th);
        const double lf = pair.q_lf(th);
        st.max_residual = std::max(st.max_residual, std::abs(hf - lf));
        st.max_hf = std::max(st.max_hf, std::abs(hf));
    }
    st.ratio = st.max_hf > 0.0 ? st.max_residual / st.max_hf : 0.0;
    return st;
}

Dataset normalize(const Dataset& ds) {
    if (!ds.normalization.is_identity())
        throw std::invalid_argument("normalize: dataset is already normalized");
    const BoxMap map = BoxMap::for_box(ds.domain);
    Dataset out = ds;
    out.normalization = map;
    for (auto& r : out.records) map.to_unit(r.theta, r.theta.data());
    return out;
}

Dataset denormalize(const Dataset& ds) {
    if (ds.normalization.is_identity()) return ds;
    Dataset out = ds;
    for (auto& r : out.records) ds.normalization.from_unit(r.theta, r.theta.data());
    out.normalization = BoxMap::identity(ds.domain.dim());
    return out;
}

void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_dataset_csv: cannot open " + path.string());
    const std::size_t d = ds.domain.dim();
    std::string line;
    for (std::size_t k = 0; k < d; ++k) line += "theta_" + std::to_string(k) + ",";
    line += "q_lf,q_hf,provenance\n";
    f << line;
    for (const auto& r : ds.records) {
        line.clear();
        for (std::size_t k = 0; k < d; ++k) {
            format_double(line, r.theta[k]);
            line += ',';
        }
        format_double(line, r.q_lf);
        line += ',';
        if (r.q_hf) format_double(line, *r.q_hf);
        line += ',';
        line += r.provenance == Provenance::Real ? "real" : "synthetic";
        line += '\n';
        f << line;
    }
    if (!f) throw std::runtime_error("save_dataset_csv: write failed for " + path.string());
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_dataset_csv: cannot open " + path.string());
    std::string header;
    if (!std::getline(f, header))
        throw std::runtime_error("load_dataset_csv: empty file " + path.string());

    std::size_t d = 0;
    {
        std::stringstream ss(header);
        std::string col;
        while (std::getline(ss, col, ',')) {
            if (col.rfind("theta_", 0) == 0) ++d;
        }
        if (d == 0)
            throw std::runtime_error("load_dataset_csv: no theta columns in " + path.string());
    }

    Dataset ds;
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Record r;
        r.theta.resize(d);
        for (std::size_t k = 0; k < d; ++k) {
            if (!std::getline(ss, cell, ','))
                throw std::runtime_error("load_dataset_csv: short row at line " +
                                         std::to_string(line_no));
            r.theta[k] = std::stod(cell);
        }
        if (!std::getline(ss, cell, ','))
            throw std::runtime_error("load_dataset_csv: missing q_lf at line " +
                                     std::to_string(line_no));
        r.q_lf = std::stod(cell);
        if (!std::getline(ss, cell, ','))
            throw std::runtime_error("load_dataset_csv: missing q_hf cell at line " +
                                     std::to_string(line_no));
        if (!cell.empty()) r.q_hf = std::stod(cell);
        if (!std::getline(ss, cell))
            throw std::runtime_error("load_dataset_csv: missing provenance at line " +
                                     std::to_string(line_no));
        if (cell == "real")
            r.provenance = Provenance::Real;
        else if (cell == "synthetic")
            r.provenance = Provenance::Synthetic;
        else
            throw std::runtime_error("load_dataset_csv: bad provenance '" + cell +
                                     "' at line " + std::to_string(line_no));
        ds.records.push_back(std::move(r));
    }
    if (ds.records.empty())
        throw std::runtime_error("load_dataset_csv: no records in " + path.string());

    // The CSV schema does not carry the domain; default to the data's
    // bounding box (callers that know the problem overwrite this).
    ds.domain.lower.assign(d, std::numeric_limits<double>::infinity());
    ds.domain.upper.assign(d, -std::numeric_limits<double>::infinity());
    for (const auto& r : ds.records) {
        for (std::size_t k = 0; k < d; ++k) {
            ds.domain.lower[k] = std::min(ds.domain.lower[k], r.theta[k]);
            ds.domain.upper[k] = std::max(ds.domain.upper[k], r.theta[k]);
        }
    }
    for (std::size_t k = 0; k < d; ++k) {
        if (!(ds.domain.lower[k] < ds.domain.upper[k])) {
            ds.domain.lower[k] -= 0.5;
            ds.domain.upper[k] += 0.5;
        }
    }
    ds.normalization = BoxMap::identity(d);
    return ds;
}

double measure_eval_cost(const Evaluator& f, const std::vector<double>& theta, int reps) {
    if (reps < 1) throw std::invalid_argument("measure_eval_cost: reps must be >= 1");
    using clock = std::chrono::steady_clock;
    volatile double sink = 0.0;
    const auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) sink = f(theta);
    const double total = std::chrono::duration<double>(clock::now() - t0).count();
    (void)sink;
    return total / static_cast<double>(reps);
}

}  // namespace rmfnn::fidelity
