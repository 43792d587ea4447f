#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lpm/lpm.hpp"

namespace lpm::fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("lpm-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Random queries over the given vocabulary sizes, with combos of up to
/// `max_parts` distinct perturbations.
inline std::vector<Query> random_queries(const VocabSizes& sizes, std::size_t n, std::size_t max_parts, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick_p(0, sizes.perturbations - 1), pick_r(0, sizes.readouts - 1),
        pick_c(0, sizes.contexts - 1), pick_k(1, std::min(max_parts, sizes.perturbations));
    std::vector<Query> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = pick_k(rng);
        std::vector<SymbolId> parts;
        while (parts.size() < k) {
            const auto p = static_cast<SymbolId>(pick_p(rng));
            if (std::find(parts.begin(), parts.end(), p) == parts.end()) parts.push_back(p);
        }
        out.push_back(Query{PerturbationSpec(parts), static_cast<SymbolId>(pick_r(rng)), static_cast<SymbolId>(pick_c(rng))});
    }
    return out;
}

struct GradientCheck {
    double max_relative_error = 0.0;
    std::size_t checked = 0;
};

namespace detail_fd {

inline double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

template <typename F>
void probe(double& slot, double analytic, double h, const F& loss, GradientCheck& out) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss();
    slot = saved - h;
    const double down = loss();
    slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_relative_error = std::max(out.max_relative_error, rel(analytic, numeric));
    ++out.checked;
}

}  // namespace detail_fd

/// Central finite differences over every parameter, including embedding rows
/// that received no gradient (their analytic gradient is zero).
inline GradientCheck finite_difference_check(ModelParameters params, std::span<const Query> batch, std::span<const double> targets,
                                             bool train_mode, std::uint64_t dropout_seed, double h = 1e-5) {
    const auto analytic = loss_and_gradients(params, batch, targets, train_mode, dropout_seed);
    auto loss = [&] { return loss_and_gradients(params, batch, targets, train_mode, dropout_seed).loss; };
    GradientCheck out;
    auto check_table = [&](EmbeddingTable<double>& table, const SparseRowGradient<double>& g) {
        for (std::size_t row = 0; row < table.rows(); ++row) {
            const auto it = std::find(g.rows.begin(), g.rows.end(), static_cast<SymbolId>(row));
            for (std::size_t k = 0; k < table.cols(); ++k) {
                const double a = it == g.rows.end() ? 0.0 : g.row(static_cast<std::size_t>(it - g.rows.begin()))[k];
                detail_fd::probe(table.row(row)[k], a, h, loss, out);
            }
        }
    };
    check_table(params.emb_p, analytic.grads.emb_p);
    check_table(params.emb_r, analytic.grads.emb_r);
    check_table(params.emb_c, analytic.grads.emb_c);
    for (std::size_t l = 0; l < params.mlp.layers.size(); ++l) {
        auto& layer = params.mlp.layers[l];
        for (std::size_t i = 0; i < layer.weight.size(); ++i) detail_fd::probe(layer.weight[i], analytic.grads.mlp[l].weight[i], h, loss, out);
        for (std::size_t i = 0; i < layer.bias.size(); ++i) detail_fd::probe(layer.bias[i], analytic.grads.mlp[l].bias[i], h, loss, out);
    }
    return out;
}

/// Two contexts, a control and `n_p` perturbations over `n_r` readouts with
/// a deterministic pattern of values.
inline ObservationSet small_screen(std::size_t n_p = 12, std::size_t n_r = 4, std::size_t n_c = 2) {
    ObservationSet data;
    for (std::size_t c = 0; c < n_c; ++c) {
        const auto ctx = "c" + std::to_string(c);
        for (std::size_t r = 0; r < n_r; ++r) data.add(ctx, "CTRL", "g" + std::to_string(r), 0.1 * static_cast<double>(r + c));
        for (std::size_t p = 0; p < n_p; ++p)
            for (std::size_t r = 0; r < n_r; ++r)
                data.add(ctx, "p" + std::to_string(p), "g" + std::to_string(r),
                         std::sin(static_cast<double>(p * 7 + r * 3 + c)) + 0.1 * static_cast<double>(r + c));
    }
    return data;
}

inline TrainConfig tiny_train_config(std::uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.lr_decay = 0.99;
    cfg.batch_size = 16;
    cfg.max_epochs = 40;
    cfg.patience = 10;
    cfg.seed = seed;
    cfg.model.d_embed = 8;
    cfg.model.hidden_dim = 16;
    cfg.model.hidden_layers = 2;
    cfg.model.dropout_rate = 0.0;
    cfg.model.seed = seed;
    return cfg;
}

}  // namespace lpm::fixtures
