#include "rmfnn/net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "rmfnn/rng.hpp"

namespace rmfnn::net {

namespace {

std::vector<std::size_t> layer_widths(const NetworkSpec& spec) {
    std::vector<std::size_t> w;
    w.reserve(spec.hidden_widths.size() + 2);
    w.push_back(spec.input_dim);
    for (std::size_t h : spec.hidden_widths) w.push_back(h);
    w.push_back(spec.output_dim);
    return w;
}

// Hidden layers at which a shortcut block ends: 1 + k*period, k >= 1.
// Layer 1 is the plain input projection; a trailing partial block gets no skip.
bool skip_ends_at(const NetworkSpec& spec, std::size_t hidden_layer) {
    if (spec.shortcut_period == 0 || hidden_layer <= 1) return false;
    return (hidden_layer - 1) % spec.shortcut_period == 0;
}

bool all_finite(const Network& n) {
    for (const auto& w : n.weights)
        for (double v : w.data)
            if (!std::isfinite(v)) return false;
    for (const auto& b : n.biases)
        for (double v : b)
            if (!std::isfinite(v)) return false;
    return true;
}

// Forward/backward scratch space for one sample.
struct Workspace {
    std::vector<std::vector<double>> pre;   // z_l per layer (1..L)
    std::vector<std::vector<double>> act;   // x_l per layer (0..L), post-skip
    std::vector<std::vector<double>> delta; // dL/dx_l accumulators

    explicit Workspace(const NetworkSpec& spec) {
        const auto widths = layer_widths(spec);
        act.resize(widths.size());
        pre.resize(widths.size());
        delta.resize(widths.size());
        for (std::size_t l = 0; l < widths.size(); ++l) {
            act[l].assign(widths[l], 0.0);
            pre[l].assign(widths[l], 0.0);
            delta[l].assign(widths[l], 0.0);
        }
    }
};

void forward_sample(const Network& n, const double* x, Workspace& ws) {
    const std::size_t hidden = n.spec.hidden_widths.size();
    std::copy(x, x + n.spec.input_dim, ws.act[0].begin());
    for (std::size_t l = 1; l <= hidden; ++l) {
        matvec(n.weights[l - 1], ws.act[l - 1].data(), ws.pre[l].data());
        const auto& b = n.biases[l - 1];
        for (std::size_t i = 0; i < b.size(); ++i) {
            const double z = ws.pre[l][i] + b[i];
            ws.pre[l][i] = z;
            ws.act[l][i] = z > 0.0 ? z : 0.0;
        }
        if (skip_ends_at(n.spec, l)) {
            const auto& src = ws.act[l - n.spec.shortcut_period];
            for (std::size_t i = 0; i < src.size(); ++i) ws.act[l][i] += src[i];
        }
    }
    const std::size_t out = hidden + 1;
    matvec(n.weights[out - 1], ws.act[out - 1].data(), ws.act[out].data());
    const auto& b = n.biases[out - 1];
    for (std::size_t i = 0; i < b.size(); ++i) ws.act[out][i] += b[i];
}

// Backpropagates dL/dy (already in ws.delta[L]) into grads; assumes
// forward_sample has just filled ws for the same input.
void backward_sample(const Network& n, Workspace& ws, Gradients& grads) {
    const std::size_t hidden = n.spec.hidden_widths.size();
    const std::size_t out = hidden + 1;
    for (std::size_t l = 0; l < out; ++l)
        std::fill(ws.delta[l].begin(), ws.delta[l].end(), 0.0);

    // Output layer: affine.
    {
        Matrix& gw = grads.weight_grads[out - 1];
        auto& gb = grads.bias_grads[out - 1];
        const auto& d = ws.delta[out];
        const auto& xin = ws.act[out - 1];
        for (std::size_t i = 0; i < gw.rows; ++i) {
            const double di = d[i];
            gb[i] += di;
            double* gwi = gw.row(i);
            for (std::size_t j = 0; j < gw.cols; ++j) gwi[j] += di * xin[j];
        }
        matvec_transposed_add(n.weights[out - 1], d.data(), ws.delta[out - 1].data());
    }

    for (std::size_t l = hidden; l >= 1; --l) {
        auto& d = ws.delta[l];
        if (skip_ends_at(n.spec, l)) {
            // Identity path feeds the block source directly.
            auto& src = ws.delta[l - n.spec.shortcut_period];
            for (std::size_t i = 0; i < d.size(); ++i) src[i] += d[i];
        }
        // ReLU subgradient: 0 at z == 0.
        for (std::size_t i = 0; i < d.size(); ++i)
            if (!(ws.pre[l][i] > 0.0)) d[i] = 0.0;

        Matrix& gw = grads.weight_grads[l - 1];
        auto& gb = grads.bias_grads[l - 1];
        const auto& xin = ws.act[l - 1];
        for (std::size_t i = 0; i < gw.rows; ++i) {
            const double di = d[i];
            gb[i] += di;
            double* gwi = gw.row(i);
            for (std::size_t j = 0; j < gw.cols; ++j) gwi[j] += di * xin[j];
        }
        matvec_transposed_add(n.weights[l - 1], d.data(), ws.delta[l - 1].data());
    }
}

double mse_only(const Network& n, const Samples& s, Workspace& ws) {
    double acc = 0.0;
    for (std::size_t r = 0; r < s.size(); ++r) {
        forward_sample(n, s.inputs.row(r), ws);
        const double* t = s.targets.row(r);
        const auto& y = ws.act.back();
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double e = y[k] - t[k];
            acc += e * e;
        }
    }
    return acc / static_cast<double>(s.size());
}

double weight_squared_sum(const Network& n) {
    double acc = 0.0;
    for (const auto& w : n.weights)
        for (double v : w.data) acc += v * v;
    return acc;
}

// One fused pass: fills grads (must be zeroed) and returns the batch loss.
double loss_and_gradients(const Network& n, const Samples& batch, double lambda,
                          Gradients& g, Workspace& ws) {
    double data_loss = 0.0;
    const double scale = 2.0 / static_cast<double>(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
        forward_sample(n, batch.inputs.row(r), ws);
        const double* t = batch.targets.row(r);
        auto& dout = ws.delta.back();
        const auto& y = ws.act.back();
        for (std::size_t k = 0; k < y.size(); ++k) {
            const double e = y[k] - t[k];
            data_loss += e * e;
            dout[k] = scale * e;
        }
        backward_sample(n, ws, g);
    }
    data_loss /= static_cast<double>(batch.size());
    if (lambda != 0.0) {
        for (std::size_t l = 0; l < n.weights.size(); ++l) {
            const auto& w = n.weights[l].data;
            auto& gw = g.weight_grads[l].data;
            for (std::size_t i = 0; i < w.size(); ++i) gw[i] += 2.0 * lambda * w[i];
        }
        data_loss += lambda * weight_squared_sum(n);
    }
    return data_loss;
}

Gradients zero_gradients(const Network& n) {
    Gradients g;
    for (const auto& w : n.weights) g.weight_grads.emplace_back(w.rows, w.cols);
    for (const auto& b : n.biases) g.bias_grads.emplace_back(b.size(), 0.0);
    return g;
}

void format_double(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

void NetworkSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("NetworkSpec: input_dim must be >= 1");
    if (output_dim == 0) throw std::invalid_argument("NetworkSpec: output_dim must be >= 1");
    for (std::size_t w : hidden_widths)
        if (w == 0) throw std::invalid_argument("NetworkSpec: hidden widths must be >= 1");
    if (shortcut_period > 0) {
        for (std::size_t l = 2; l <= hidden_widths.size(); ++l) {
            if ((l - 1) % shortcut_period != 0) continue;
            const std::size_t src = l - shortcut_period;
            if (hidden_widths[l - 1] != hidden_widths[src - 1])
                throw std::invalid_argument(
                    "NetworkSpec: shortcut joins hidden layers of unequal width (" +
                    std::to_string(src) + " -> " + std::to_string(l) + ")");
        }
    }
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (initial_lr <= 0.0) throw std::invalid_argument("TrainConfig: initial_lr must be > 0");
    if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0)
        throw std::invalid_argument("TrainConfig: adam betas must lie in (0,1)");
    if (tikhonov_lambda < 0.0) throw std::invalid_argument("TrainConfig: tikhonov_lambda < 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
        throw std::invalid_argument("TrainConfig: validation_fraction must lie in [0,1)");
    if (plateau_patience == 0) throw std::invalid_argument("TrainConfig: plateau_patience == 0");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw std::invalid_argument("TrainConfig: plateau_factor must lie in (0,1)");
    if (min_lr <= 0.0) throw std::invalid_argument("TrainConfig: min_lr must be > 0");
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    for (const auto& b : biases) n += b.size();
    return n;
}

Samples Samples::select(std::span<const std::size_t> rows) const {
    Samples out;
    out.inputs = Matrix(rows.size(), inputs.cols);
    out.targets = Matrix(rows.size(), targets.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(inputs.row(rows[i]), inputs.row(rows[i]) + inputs.cols, out.inputs.row(i));
        std::copy(targets.row(rows[i]), targets.row(rows[i]) + targets.cols, out.targets.row(i));
    }
    return out;
}

AdamState AdamState::for_network(const Network& n) {
    AdamState s;
    for (const auto& w : n.weights) {
        s.m_weights.emplace_back(w.rows, w.cols);
        s.v_weights.emplace_back(w.rows, w.cols);
    }
    for (const auto& b : n.biases) {
        s.m_biases.emplace_back(b.size(), 0.0);
        s.v_biases.emplace_back(b.size(), 0.0);
    }
    return s;
}

Network init_network(const NetworkSpec& spec) {
    spec.validate();
    Network n;
    n.spec = spec;
    Rng rng(spec.seed);
    const auto widths = layer_widths(spec);
    for (std::size_t l = 1; l < widths.size(); ++l) {
        Matrix w(widths[l], widths[l - 1]);
        const double stddev = std::sqrt(2.0 / static_cast<double>(widths[l - 1]));
        for (double& v : w.data) v = stddev * rng.normal();
        n.weights.push_back(std::move(w));
        n.biases.emplace_back(widths[l], 0.0);
    }
    return n;
}

std::vector<double> forward(const Network& n, std::span<const double> x) {
    if (x.size() != n.spec.input_dim)
        throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                    " entries, expected " + std::to_string(n.spec.input_dim));
    thread_local std::unique_ptr<Workspace> ws;
    thread_local std::vector<std::size_t> ws_widths;
    const auto widths = layer_widths(n.spec);
    if (!ws || ws_widths != widths) {
        ws = std::make_unique<Workspace>(n.spec);
        ws_widths = widths;
    }
    forward_sample(n, x.data(), *ws);
    return ws->act.back();
}

double loss(const Network& n, const Samples& batch, double lambda) {
    if (batch.size() == 0) throw std::invalid_argument("loss: empty batch");
    Workspace ws(n.spec);
    double v = mse_only(n, batch, ws);
    if (lambda != 0.0) v += lambda * weight_squared_sum(n);
    return v;
}

Gradients gradients(const Network& n, const Samples& batch, double lambda) {
    if (batch.size() == 0) throw std::invalid_argument("gradients: empty batch");
    Gradients g = zero_gradients(n);
    Workspace ws(n.spec);
    loss_and_gradients(n, batch, lambda, g, ws);
    return g;
}

void adam_step(Network& n, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg, double lr) {
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

    auto update = [&](double* p, const double* g, double* m, double* v, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    };

    for (std::size_t l = 0; l < n.weights.size(); ++l) {
        update(n.weights[l].data.data(), grads.weight_grads[l].data.data(),
               state.m_weights[l].data.data(), state.v_weights[l].data.data(),
               n.weights[l].size());
        update(n.biases[l].data(), grads.bias_grads[l].data(),
               state.m_biases[l].data(), state.v_biases[l].data(), n.biases[l].size());
    }
}

TrainResult train(const Samples& data, const NetworkSpec& spec, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (data.size() < 2) throw std::invalid_argument("train: need at least 2 records");
    if (data.inputs.cols != spec.input_dim || data.targets.cols != spec.output_dim)
        throw std::invalid_argument("train: sample dimensions do not match the network spec");

    const auto start = std::chrono::steady_clock::now();
    Rng rng(cfg.seed);

    // Seeded shuffle, validation = tail of the shuffle.
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::size_t n_val = 0;
    if (cfg.validation_fraction > 0.0) {
        n_val = static_cast<std::size_t>(
            std::llround(cfg.validation_fraction * static_cast<double>(data.size())));
        n_val = std::max<std::size_t>(1, std::min(n_val, data.size() - 1));
    }
    const std::size_t n_train = data.size() - n_val;
    if (cfg.batch_size > n_train)
        throw std::invalid_argument("train: batch_size exceeds the training split (" +
                                    std::to_string(cfg.batch_size) + " > " +
                                    std::to_string(n_train) + ")");

    Samples train_set = data.select(std::span(order).first(n_train));
    Samples val_set = n_val > 0 ? data.select(std::span(order).subspan(n_train)) : Samples{};

    Network network = init_network(spec);
    AdamState adam = AdamState::for_network(network);
    Workspace ws(spec);

    TrainResult result;
    result.network = network;  // epochs == 0 returns the initialized net
    TrainReport& report = result.report;

    double lr = cfg.initial_lr;
    double best_monitored = std::numeric_limits<double>::infinity();
    // The plateau reference resets after every decay: one noisy dip must not
    // trigger a cascade that freezes the learning rate.
    double plateau_ref = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_improve = 0;

    std::vector<std::size_t> batch_order(n_train);
    std::iota(batch_order.begin(), batch_order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (lr < cfg.min_lr) break;

        rng.shuffle(batch_order);
        double epoch_loss_acc = 0.0;
        std::size_t batches = 0;
        Gradients g = zero_gradients(network);
        for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n_train - begin);
            Samples batch = train_set.select(std::span(batch_order).subspan(begin, count));
            for (auto& gw : g.weight_grads) gw.fill(0.0);
            for (auto& gb : g.bias_grads) std::fill(gb.begin(), gb.end(), 0.0);
            epoch_loss_acc += loss_and_gradients(network, batch, cfg.tikhonov_lambda, g, ws);
            adam_step(network, g, adam, cfg, lr);
            ++batches;
        }
        const double train_loss = epoch_loss_acc / static_cast<double>(batches);
        const double monitored =
            n_val > 0 ? mse_only(network, val_set, ws) : mse_only(network, train_set, ws);

        report.train_loss_history.push_back(train_loss);
        report.val_loss_history.push_back(monitored);
        report.lr_history.push_back(lr);
        report.epochs_run = epoch;

        if (!std::isfinite(train_loss) || !std::isfinite(monitored))
            throw TrainingDivergedError(epoch);

        if (monitored < best_monitored) {
            best_monitored = monitored;
            result.network = network;
        }
        if (monitored < plateau_ref) {
            plateau_ref = monitored;
            epochs_since_improve = 0;
        } else {
            ++epochs_since_improve;
        }
        if (epochs_since_improve >= cfg.plateau_patience) {
            lr *= cfg.plateau_factor;
            epochs_since_improve = 0;
            plateau_ref = monitored;
        }
    }

    report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

void save_network(const Network& n, const std::filesystem::path& path) {
    if (!all_finite(n))
        throw CheckpointError("save_network: network contains non-finite values");

    // Hand-rolled writer: fixed field order, 17-significant-digit decimals
    // (lossless double round trip).
    std::string out;
    out.reserve(n.parameter_count() * 22 + 256);
    out += "{\"spec\":{\"input_dim\":" + std::to_string(n.spec.input_dim);
    out += ",\"hidden_widths\":[";
    for (std::size_t i = 0; i < n.spec.hidden_widths.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(n.spec.hidden_widths[i]);
    }
    out += "],\"output_dim\":" + std::to_string(n.spec.output_dim);
    out += ",\"shortcut_period\":" + std::to_string(n.spec.shortcut_period);
    out += ",\"seed\":" + std::to_string(n.spec.seed);
    out += "},\"weights\":[";
    for (std::size_t l = 0; l < n.weights.size(); ++l) {
        if (l) out += ',';
        out += '[';
        const auto& w = n.weights[l].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (i) out += ',';
            format_double(out, w[i]);
        }
        out += ']';
    }
    out += "],\"biases\":[";
    for (std::size_t l = 0; l < n.biases.size(); ++l) {
        if (l) out += ',';
        out += '[';
        for (std::size_t i = 0; i < n.biases[l].size(); ++i) {
            if (i) out += ',';
            format_double(out, n.biases[l][i]);
        }
        out += ']';
    }
    out += "]}\n";

    std::ofstream f(path);
    if (!f) throw CheckpointError("save_network: cannot open " + path.string());
    f << out;
    if (!f) throw CheckpointError("save_network: write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw CheckpointError("load_network: cannot open " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError("load_network: " + path.string() + ": " + e.what());
    }

    try {
        NetworkSpec spec;
        const auto& js = j.at("spec");
        spec.input_dim = js.at("input_dim").get<std::size_t>();
        spec.hidden_widths = js.at("hidden_widths").get<std::vector<std::size_t>>();
        spec.output_dim = js.at("output_dim").get<std::size_t>();
        spec.shortcut_period = js.at("shortcut_period").get<std::size_t>();
        spec.seed = js.at("seed").get<std::uint64_t>();
        spec.validate();

        Network n;
        n.spec = spec;
        const auto widths = layer_widths(spec);
        const auto& jw = j.at("weights");
        const auto& jb = j.at("biases");
        if (jw.size() != widths.size() - 1 || jb.size() != widths.size() - 1)
            throw CheckpointError("load_network: layer count mismatch in " + path.string());
        for (std::size_t l = 1; l < widths.size(); ++l) {
            const auto wl = jw.at(l - 1).get<std::vector<double>>();
            if (wl.size() != widths[l] * widths[l - 1])
                throw CheckpointError("load_network: weights[" + std::to_string(l - 1) +
                                      "] has " + std::to_string(wl.size()) +
                                      " entries, expected " +
                                      std::to_string(widths[l] * widths[l - 1]));
            Matrix w(widths[l], widths[l - 1]);
            w.data = wl;
            n.weights.push_back(std::move(w));

            const auto bl = jb.at(l - 1).get<std::vector<double>>();
            if (bl.size() != widths[l])
                throw CheckpointError("load_network: biases[" + std::to_string(l - 1) +
                                      "] has " + std::to_string(bl.size()) +
                                      " entries, expected " + std::to_string(widths[l]));
            n.biases.push_back(bl);
        }
        return n;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_network: " + path.string() + ": " + e.what());
    }
}

}  // namespace rmfnn::net
