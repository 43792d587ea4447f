#pragma once

// Adam with decoupled weight decay, exponential learning-rate decay,
// mini-batch training with RMSE early stopping, and grid search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/model.hpp"

namespace lpm {

struct TrainConfig {
    double learning_rate = 0.002;
    double lr_decay = 0.97;
    std::size_t batch_size = 1000;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    std::size_t threads = 1;  // evaluation passes only
    ModelConfig model;

    void validate() const {
        if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error("lr_decay must lie in (0, 1]");
        if (batch_size == 0) throw Error("batch_size must be positive");
        if (max_epochs == 0) throw Error("max_epochs must be positive");
        if (patience == 0) throw Error("patience must be at least 1");
        if (weight_decay < 0.0) throw Error("weight_decay must be non-negative");
        model.validate();
    }

    bool operator==(const TrainConfig&) const = default;
};

/// Consensus setting used for the LINCS compound/CRISPR-KO contexts.
inline TrainConfig lincs_consensus() {
    TrainConfig cfg;
    cfg.learning_rate = 0.002;
    cfg.lr_decay = 0.97;
    cfg.batch_size = 1000;
    cfg.model.hidden_layers = 2;
    cfg.model.dropout_rate = 0.1;
    cfg.model.hidden_dim = 256;
    cfg.model.d_embed = 128;
    return cfg;
}

/// Consensus setting used for the Replogle CRISPRi contexts.
inline TrainConfig replogle_consensus() {
    TrainConfig cfg;
    cfg.learning_rate = 0.002;
    cfg.lr_decay = 0.99;
    cfg.batch_size = 5000;
    cfg.model.hidden_layers = 2;
    cfg.model.dropout_rate = 0.0;
    cfg.model.hidden_dim = 512;
    cfg.model.d_embed = 32;
    return cfg;
}

struct GridAxes {
    std::vector<double> learning_rate{0.001, 0.002, 0.01};
    std::vector<double> lr_decay{0.99, 0.97};
    std::vector<std::size_t> hidden_layers{1, 2};
    std::vector<double> dropout_rate{0.0, 0.1, 0.25};
    std::vector<std::size_t> hidden_dim{256, 512};
    std::vector<std::size_t> d_embed{128, 64, 32};
    std::vector<std::size_t> batch_size{1000, 5000, 10000};
};

/// Cartesian product of the axes, learning rate varying slowest. Fields not
/// on an axis come from `base`.
inline std::vector<TrainConfig> expand_grid(const TrainConfig& base, const GridAxes& axes = {}) {
    std::vector<TrainConfig> grid;
    for (auto lr : axes.learning_rate)
        for (auto decay : axes.lr_decay)
            for (auto layers : axes.hidden_layers)
                for (auto dropout : axes.dropout_rate)
                    for (auto hidden : axes.hidden_dim)
                        for (auto embed : axes.d_embed)
                            for (auto batch : axes.batch_size) {
                                TrainConfig cfg = base;
                                cfg.learning_rate = lr;
                                cfg.lr_decay = decay;
                                cfg.model.hidden_layers = layers;
                                cfg.model.dropout_rate = dropout;
                                cfg.model.hidden_dim = hidden;
                                cfg.model.d_embed = embed;
                                cfg.batch_size = batch;
                                grid.push_back(cfg);
                            }
    return grid;
}

template <typename Real>
struct OptimizerState {
    struct TableMoments {
        std::vector<Real> first;
        std::vector<Real> second;
        std::vector<std::uint64_t> row_steps;
    };

    std::uint64_t step_count = 0;
    TableMoments emb_p;
    TableMoments emb_r;
    TableMoments emb_c;
    std::vector<DenseLayerGradient<Real>> first;
    std::vector<DenseLayerGradient<Real>> second;
};

template <typename Real>
OptimizerState<Real> init_optimizer_state(const BasicModelParameters<Real>& params) {
    OptimizerState<Real> state;
    auto table = [](const EmbeddingTable<Real>& t) {
        typename OptimizerState<Real>::TableMoments m;
        m.first.assign(t.values().size(), Real(0));
        m.second.assign(t.values().size(), Real(0));
        m.row_steps.assign(t.rows(), 0);
        return m;
    };
    state.emb_p = table(params.emb_p);
    state.emb_r = table(params.emb_r);
    state.emb_c = table(params.emb_c);
    for (const auto& layer : params.mlp.layers) {
        state.first.push_back({std::vector<Real>(layer.weight.size(), Real(0)), std::vector<Real>(layer.bias.size(), Real(0))});
        state.second.push_back({std::vector<Real>(layer.weight.size(), Real(0)), std::vector<Real>(layer.bias.size(), Real(0))});
    }
    return state;
}

namespace detail {

struct AdamCoefficients {
    double lr;
    double beta1;
    double beta2;
    double epsilon;
    double weight_decay;
};

// Updates one contiguous parameter block that has reached its `step`-th update.
template <typename Real>
void adam_update(std::span<Real> theta, std::span<const Real> grad, std::span<Real> m, std::span<Real> v, std::uint64_t step,
                 const AdamCoefficients& c) {
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double g = grad[k];
        const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * g;
        const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
        m[k] = static_cast<Real>(mk);
        v[k] = static_cast<Real>(vk);
        const double m_hat = mk / bc1;
        const double v_hat = vk / bc2;
        const double t = theta[k];
        theta[k] = static_cast<Real>(t - c.lr * (m_hat / (std::sqrt(v_hat) + c.epsilon) + c.weight_decay * t));
    }
}

template <typename Real>
void adam_sparse(EmbeddingTable<Real>& table, const SparseRowGradient<Real>& grad,
                 typename OptimizerState<Real>::TableMoments& moments, const AdamCoefficients& c) {
    if (!grad.rows.empty() && grad.cols != table.cols()) throw Error("embedding gradient width mismatch");
    const auto d = table.cols();
    for (std::size_t k = 0; k < grad.rows.size(); ++k) {
        const auto row = grad.rows[k];
        if (row >= table.rows()) throw Error("embedding gradient row out of range");
        const auto step = ++moments.row_steps[row];
        adam_update<Real>(table.row(row), grad.row(k), std::span<Real>(moments.first.data() + row * d, d),
                          std::span<Real>(moments.second.data() + row * d, d), step, c);
    }
}

}  // namespace detail

/// One Adam step with decoupled weight decay. Embedding rows absent from the
/// gradient are left untouched, including their moments; each row's bias
/// correction uses the number of updates that row has received.
template <typename Real>
void adam_step(BasicModelParameters<Real>& params, const GradientSet<Real>& grads, OptimizerState<Real>& state, double lr_t,
               const TrainConfig& cfg) {
    if (grads.mlp.size() != params.mlp.layers.size() || state.first.size() != params.mlp.layers.size()) {
        throw Error("gradient/optimizer layer count does not match parameters");
    }
    for (std::size_t l = 0; l < params.mlp.layers.size(); ++l) {
        const auto& layer = params.mlp.layers[l];
        if (grads.mlp[l].weight.size() != layer.weight.size() || grads.mlp[l].bias.size() != layer.bias.size()) {
            throw Error("gradient shape mismatch in layer " + std::to_string(l));
        }
    }
    const detail::AdamCoefficients c{lr_t, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay};
    ++state.step_count;
    for (std::size_t l = 0; l < params.mlp.layers.size(); ++l) {
        auto& layer = params.mlp.layers[l];
        detail::adam_update<Real>(layer.weight, grads.mlp[l].weight, state.first[l].weight, state.second[l].weight, state.step_count, c);
        detail::adam_update<Real>(layer.bias, grads.mlp[l].bias, state.first[l].bias, state.second[l].bias, state.step_count, c);
    }
    detail::adam_sparse(params.emb_p, grads.emb_p, state.emb_p, c);
    detail::adam_sparse(params.emb_r, grads.emb_r, state.emb_r, c);
    detail::adam_sparse(params.emb_c, grads.emb_c, state.emb_c, c);
}

inline double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_rmse = 0.0;
    double learning_rate = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;  // 1-based; 0 before any epoch
    double best_val_rmse = std::numeric_limits<double>::infinity();
    std::vector<EpochRecord> history;

    bool operator==(const TrainReport&) const = default;
};

template <typename Real>
struct TrainResult {
    BasicModelParameters<Real> params;
    TrainReport report;
};

template <typename Real>
double rmse_on(const BasicModelParameters<Real>& params, const ObservationSet& data, std::span<const std::size_t> indices,
               std::size_t threads = 1) {
    const auto queries = queries_of(data, indices);
    const auto pred = forward_batch(params, std::span<const Query>(queries), false, 0, threads);
    double sse = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const double e = static_cast<double>(pred[k]) - data[indices[k]].value;
        sse += e * e;
    }
    return std::sqrt(sse / static_cast<double>(indices.size()));
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from a fresh initialization and returns the best-validation
/// snapshot.
template <typename Real = float>
TrainResult<Real> train(const ObservationSet& data, const SplitAssignment& split, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (split.train.empty()) throw Error("training fold is empty");
    if (split.validation.empty()) throw Error("validation fold is empty");
    for (auto i : split.train)
        if (i >= data.size()) throw Error("split index out of range");
    for (auto i : split.validation)
        if (i >= data.size()) throw Error("split index out of range");

    auto params = init_parameters<Real>(cfg.model, vocab_sizes(data));
    auto state = init_optimizer_state(params);
    TrainResult<Real> result{params, {}};
    auto& report = result.report;

    std::vector<std::size_t> order = split.train;
    std::vector<Query> batch;
    std::vector<Real> targets;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        order = split.train;
        std::mt19937_64 rng(detail::hash_combine(cfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        const double lr_t = lr_schedule(cfg, epoch);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const auto end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            targets.clear();
            for (auto k = start; k < end; ++k) {
                const auto& o = data[order[k]];
                batch.push_back(Query::from(o));
                targets.push_back(static_cast<Real>(o.value));
            }
            const auto dropout_seed = detail::hash_combine(cfg.seed, epoch, batch_index, 0xd50);
            auto lg = loss_and_gradients<Real>(params, batch, targets, true, dropout_seed);
            loss_sum += static_cast<double>(lg.loss) * static_cast<double>(end - start);
            adam_step(params, lg.grads, state, lr_t, cfg);
        }

        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_rmse = rmse_on(params, data, split.validation, cfg.threads);
        rec.learning_rate = lr_t;
        report.history.push_back(rec);
        report.epochs_run = rec.epoch;
        if (on_epoch) on_epoch(rec);

        if (rec.val_rmse < report.best_val_rmse) {
            report.best_val_rmse = rec.val_rmse;
            report.best_epoch = rec.epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return result;
}

struct GridSearchResult {
    std::size_t best_index = 0;
    TrainConfig best;
    std::vector<TrainReport> reports;
};

/// Trains every config; the lowest best validation RMSE wins, earlier grid
/// position on ties.
template <typename Real = float>
GridSearchResult grid_search(const ObservationSet& data, const SplitAssignment& split, std::span<const TrainConfig> grid,
                             const std::function<void(std::size_t, const TrainReport&)>& on_config = {}) {
    if (grid.empty()) throw Error("grid is empty");
    GridSearchResult result;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto trained = train<Real>(data, split, grid[i]);
        if (on_config) on_config(i, trained.report);
        if (i == 0 || trained.report.best_val_rmse < result.reports[result.best_index].best_val_rmse) result.best_index = i;
        result.reports.push_back(std::move(trained.report));
    }
    result.best = grid[result.best_index];
    return result;
}

}  // namespace lpm
