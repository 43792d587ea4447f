#pragma once

// Perturbation/readout/context embedding tables feeding a ReLU MLP that
// predicts a scalar readout value. Forward and backward passes are written
// out by hand; every example's arithmetic is independent of the rest of its
// batch, so results do not depend on batch composition or thread count.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"

namespace lpm {

struct ModelConfig {
    std::size_t d_embed = 128;
    std::size_t hidden_dim = 256;
    std::size_t hidden_layers = 2;
    double dropout_rate = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (d_embed == 0) throw Error("d_embed must be positive");
        if (hidden_dim == 0) throw Error("hidden_dim must be positive");
        if (hidden_layers != 1 && hidden_layers != 2) throw Error("hidden_layers must be 1 or 2");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error("dropout_rate must lie in [0, 1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

template <typename Real>
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, Real(0)) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<Real> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
    std::span<const Real> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }

    std::vector<Real>& values() noexcept { return values_; }
    const std::vector<Real>& values() const noexcept { return values_; }

    bool operator==(const EmbeddingTable&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> values_;
};

/// Affine layer. weight is row-major inputs x outputs: weight[i * outputs + j]
/// connects input i to output j.
template <typename Real>
struct DenseLayer {
    std::size_t inputs = 0;
    std::size_t outputs = 0;
    std::vector<Real> weight;
    std::vector<Real> bias;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out) : inputs(in), outputs(out), weight(in * out, Real(0)), bias(out, Real(0)) {}

    bool operator==(const DenseLayer&) const = default;
};

template <typename Real>
struct MlpParameters {
    std::vector<DenseLayer<Real>> layers;

    bool operator==(const MlpParameters&) const = default;
};

template <typename Real>
struct BasicModelParameters {
    ModelConfig config;
    EmbeddingTable<Real> emb_p;
    EmbeddingTable<Real> emb_r;
    EmbeddingTable<Real> emb_c;
    MlpParameters<Real> mlp;

    std::size_t input_width() const noexcept { return 3 * config.d_embed; }

    bool operator==(const BasicModelParameters&) const = default;
};

using ModelParameters = BasicModelParameters<double>;
using ModelParametersF = BasicModelParameters<float>;

template <typename To, typename From>
BasicModelParameters<To> cast_parameters(const BasicModelParameters<From>& from) {
    auto convert_table = [](const EmbeddingTable<From>& t) {
        EmbeddingTable<To> out(t.rows(), t.cols());
        std::transform(t.values().begin(), t.values().end(), out.values().begin(), [](From v) { return static_cast<To>(v); });
        return out;
    };
    BasicModelParameters<To> to;
    to.config = from.config;
    to.emb_p = convert_table(from.emb_p);
    to.emb_r = convert_table(from.emb_r);
    to.emb_c = convert_table(from.emb_c);
    for (const auto& layer : from.mlp.layers) {
        DenseLayer<To> l(layer.inputs, layer.outputs);
        std::transform(layer.weight.begin(), layer.weight.end(), l.weight.begin(), [](From v) { return static_cast<To>(v); });
        std::transform(layer.bias.begin(), layer.bias.end(), l.bias.begin(), [](From v) { return static_cast<To>(v); });
        to.mlp.layers.push_back(std::move(l));
    }
    return to;
}

struct VocabSizes {
    std::size_t perturbations = 0;
    std::size_t readouts = 0;
    std::size_t contexts = 0;
};

inline VocabSizes vocab_sizes(const ObservationSet& data) {
    return {data.vocab_p().size(), data.vocab_r().size(), data.vocab_c().size()};
}

/// Embeddings ~ N(0, 1/sqrt(d)), weights ~ N(0, sqrt(2/fan_in)), zero biases.
template <typename Real = double>
BasicModelParameters<Real> init_parameters(const ModelConfig& cfg, VocabSizes sizes) {
    cfg.validate();
    if (sizes.perturbations == 0 || sizes.readouts == 0 || sizes.contexts == 0) {
        throw Error("vocabulary sizes must be positive");
    }
    std::mt19937_64 rng(cfg.seed);
    BasicModelParameters<Real> params;
    params.config = cfg;
    std::normal_distribution<double> emb_dist(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.d_embed)));
    auto fill_table = [&](EmbeddingTable<Real>& table, std::size_t rows) {
        table = EmbeddingTable<Real>(rows, cfg.d_embed);
        for (auto& v : table.values()) v = static_cast<Real>(emb_dist(rng));
    };
    fill_table(params.emb_p, sizes.perturbations);
    fill_table(params.emb_r, sizes.readouts);
    fill_table(params.emb_c, sizes.contexts);

    std::size_t width = params.input_width();
    for (std::size_t l = 0; l <= cfg.hidden_layers; ++l) {
        const std::size_t out = l == cfg.hidden_layers ? 1 : cfg.hidden_dim;
        DenseLayer<Real> layer(width, out);
        std::normal_distribution<double> w_dist(0.0, std::sqrt(2.0 / static_cast<double>(width)));
        for (auto& w : layer.weight) w = static_cast<Real>(w_dist(rng));
        params.mlp.layers.push_back(std::move(layer));
        width = out;
    }
    return params;
}

struct Query {
    PerturbationSpec perturbation;
    SymbolId readout = 0;
    SymbolId context = 0;

    static Query from(const Observation& o) { return {o.perturbation, o.readout, o.context}; }
};

inline std::vector<Query> queries_of(const ObservationSet& data) {
    std::vector<Query> qs;
    qs.reserve(data.size());
    for (const auto& o : data.observations()) qs.push_back(Query::from(o));
    return qs;
}

inline std::vector<Query> queries_of(const ObservationSet& data, std::span<const std::size_t> indices) {
    std::vector<Query> qs;
    qs.reserve(indices.size());
    for (auto i : indices) qs.push_back(Query::from(data[i]));
    return qs;
}

template <typename Real>
void check_query(const BasicModelParameters<Real>& params, const Query& q) {
    if (q.perturbation.size() == 0) throw Error("query has an empty perturbation spec");
    for (auto p : q.perturbation.parts()) {
        if (p >= params.emb_p.rows()) throw Error("perturbation id " + std::to_string(p) + " not in model vocabulary");
    }
    if (q.readout >= params.emb_r.rows()) throw Error("readout id " + std::to_string(q.readout) + " not in model vocabulary");
    if (q.context >= params.emb_c.rows()) throw Error("context id " + std::to_string(q.context) + " not in model vocabulary");
}

/// Mean of the perturbation rows of a (possibly multi-part) spec.
template <typename Real>
std::vector<Real> embed_perturbation(const BasicModelParameters<Real>& params, const PerturbationSpec& spec) {
    if (spec.size() == 0) throw Error("empty perturbation spec");
    const auto d = params.config.d_embed;
    std::vector<Real> out(d, Real(0));
    for (auto p : spec.parts()) {
        if (p >= params.emb_p.rows()) throw Error("perturbation id " + std::to_string(p) + " not in model vocabulary");
        const auto row = params.emb_p.row(p);
        for (std::size_t k = 0; k < d; ++k) out[k] += row[k];
    }
    if (spec.size() > 1) {
        const Real n = static_cast<Real>(spec.size());
        for (auto& v : out) v /= n;
    }
    return out;
}

namespace detail {

// out[b, :] += in[b, :] * W for b < rows, with W (n_in x n_out) row-major.
// Each output element accumulates its products in ascending input order, and
// zero inputs (inactive ReLU units) are skipped.
template <typename Real>
void accumulate_product(const Real* __restrict in, std::size_t n_in, const Real* __restrict w, std::size_t n_out,
                        Real* __restrict out, std::size_t rows) {
    for (std::size_t b = 0; b < rows; ++b) {
        Real* __restrict ob = out + b * n_out;
        const Real* __restrict xb = in + b * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
            const Real xi = xb[i];
            if (xi == Real(0)) continue;
            const Real* __restrict wi = w + i * n_out;
            for (std::size_t j = 0; j < n_out; ++j) ob[j] += xi * wi[j];
        }
    }
}

// g[i, :] += sum_b in[b, i] * d[b, :], accumulated in ascending b.
template <typename Real>
void accumulate_outer(const Real* __restrict in, std::size_t n_in, const Real* __restrict d, std::size_t n_out,
                      Real* __restrict g, std::size_t rows) {
    for (std::size_t b = 0; b < rows; ++b) {
        const Real* __restrict db = d + b * n_out;
        const Real* __restrict xb = in + b * n_in;
        for (std::size_t i = 0; i < n_in; ++i) {
            const Real xi = xb[i];
            if (xi == Real(0)) continue;
            Real* __restrict gi = g + i * n_out;
            for (std::size_t j = 0; j < n_out; ++j) gi[j] += xi * db[j];
        }
    }
}

template <typename Real>
void affine_forward(const DenseLayer<Real>& layer, const Real* in, Real* out, std::size_t rows) {
    for (std::size_t b = 0; b < rows; ++b) std::copy(layer.bias.begin(), layer.bias.end(), out + b * layer.outputs);
    accumulate_product(in, layer.inputs, layer.weight.data(), layer.outputs, out, rows);
}

inline bool dropout_keep(std::uint64_t seed, std::uint64_t example, std::size_t layer, std::size_t unit, double rate) {
    return to_unit(hash_combine(seed, example, layer, unit)) >= rate;
}

template <typename Real>
struct ForwardTrace {
    std::size_t rows = 0;
    std::vector<Real> input;                    // rows x 3d
    std::vector<std::vector<Real>> pre;         // per hidden layer: rows x hidden
    std::vector<std::vector<Real>> post;        // per hidden layer, after ReLU and dropout
    std::vector<std::vector<Real>> mask_scale;  // per hidden layer when dropout active
    std::vector<Real> output;                   // rows
};

template <typename Real>
void gather_inputs(const BasicModelParameters<Real>& params, std::span<const Query> queries, Real* input) {
    const auto d = params.config.d_embed;
    const auto width = 3 * d;
    for (std::size_t b = 0; b < queries.size(); ++b) {
        const auto& q = queries[b];
        check_query(params, q);
        Real* x = input + b * width;
        std::fill(x, x + d, Real(0));
        for (auto p : q.perturbation.parts()) {
            const auto row = params.emb_p.row(p);
            for (std::size_t k = 0; k < d; ++k) x[k] += row[k];
        }
        if (q.perturbation.size() > 1) {
            const Real n = static_cast<Real>(q.perturbation.size());
            for (std::size_t k = 0; k < d; ++k) x[k] /= n;
        }
        const auto r = params.emb_r.row(q.readout);
        const auto c = params.emb_c.row(q.context);
        std::copy(r.begin(), r.end(), x + d);
        std::copy(c.begin(), c.end(), x + 2 * d);
    }
}

// `first_example` is the batch position of queries[0]; dropout masks are keyed
// on (dropout_seed, batch position, layer, unit).
template <typename Real>
void forward_rows(const BasicModelParameters<Real>& params, std::span<const Query> queries, std::size_t first_example,
                  bool train_mode, std::uint64_t dropout_seed, ForwardTrace<Real>& trace) {
    const auto rows = queries.size();
    const auto hidden_layers = params.mlp.layers.size() - 1;
    const double rate = params.config.dropout_rate;
    const bool dropout = train_mode && rate > 0.0;
    const Real scale = static_cast<Real>(1.0 / (1.0 - rate));

    trace.rows = rows;
    trace.input.assign(rows * params.input_width(), Real(0));
    gather_inputs(params, queries, trace.input.data());
    trace.pre.resize(hidden_layers);
    trace.post.resize(hidden_layers);
    trace.mask_scale.resize(dropout ? hidden_layers : 0);

    const Real* in = trace.input.data();
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        const auto& layer = params.mlp.layers[l];
        auto& pre = trace.pre[l];
        auto& post = trace.post[l];
        pre.assign(rows * layer.outputs, Real(0));
        affine_forward(layer, in, pre.data(), rows);
        post.resize(pre.size());
        for (std::size_t k = 0; k < pre.size(); ++k) post[k] = pre[k] > Real(0) ? pre[k] : Real(0);
        if (dropout) {
            auto& mask = trace.mask_scale[l];
            mask.resize(pre.size());
            for (std::size_t b = 0; b < rows; ++b) {
                for (std::size_t j = 0; j < layer.outputs; ++j) {
                    const auto k = b * layer.outputs + j;
                    mask[k] = dropout_keep(dropout_seed, first_example + b, l, j, rate) ? scale : Real(0);
                    post[k] *= mask[k];
                }
            }
        }
        in = post.data();
    }
    trace.output.assign(rows, Real(0));
    affine_forward(params.mlp.layers.back(), in, trace.output.data(), rows);
}

}  // namespace detail

/// Evaluates a batch. With threads > 1 the batch is cut into fixed chunks
/// evaluated concurrently; output is identical to the sequential run.
template <typename Real>
std::vector<Real> forward_batch(const BasicModelParameters<Real>& params, std::span<const Query> batch, bool train_mode = false,
                                std::uint64_t dropout_seed = 0, std::size_t threads = 1) {
    std::vector<Real> out(batch.size());
    constexpr std::size_t chunk = 512;
    const std::size_t chunks = (batch.size() + chunk - 1) / chunk;
    auto run_chunk = [&](std::size_t ci) {
        detail::ForwardTrace<Real> trace;
        const auto begin = ci * chunk;
        const auto len = std::min(chunk, batch.size() - begin);
        detail::forward_rows(params, batch.subspan(begin, len), begin, train_mode, dropout_seed, trace);
        std::copy(trace.output.begin(), trace.output.end(), out.begin() + static_cast<std::ptrdiff_t>(begin));
    };
    if (threads <= 1 || chunks <= 1) {
        for (std::size_t ci = 0; ci < chunks; ++ci) run_chunk(ci);
        return out;
    }
    const auto workers = std::min(threads, chunks);
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t ci = w; ci < chunks; ci += workers) run_chunk(ci);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

template <typename Real>
Real forward(const BasicModelParameters<Real>& params, const Query& query, bool train_mode = false, std::uint64_t dropout_seed = 0) {
    return forward_batch(params, std::span<const Query>(&query, 1), train_mode, dropout_seed).front();
}

template <typename Real>
Real forward(const BasicModelParameters<Real>& params, const PerturbationSpec& spec, SymbolId readout, SymbolId context,
             bool train_mode = false, std::uint64_t dropout_seed = 0) {
    return forward(params, Query{spec, readout, context}, train_mode, dropout_seed);
}

/// Gradient rows for the embedding rows a batch touched, in first-touch order.
template <typename Real>
struct SparseRowGradient {
    std::size_t cols = 0;
    std::vector<SymbolId> rows;
    std::vector<Real> values;  // rows.size() x cols

    std::span<const Real> row(std::size_t k) const { return {values.data() + k * cols, cols}; }
    std::span<Real> row(std::size_t k) { return {values.data() + k * cols, cols}; }
};

template <typename Real>
struct DenseLayerGradient {
    std::vector<Real> weight;
    std::vector<Real> bias;
};

template <typename Real>
struct GradientSet {
    SparseRowGradient<Real> emb_p;
    SparseRowGradient<Real> emb_r;
    SparseRowGradient<Real> emb_c;
    std::vector<DenseLayerGradient<Real>> mlp;
};

template <typename Real>
struct LossAndGradients {
    Real loss = 0;
    GradientSet<Real> grads;
};

namespace detail {

template <typename Real>
class RowAccumulator {
public:
    RowAccumulator(std::size_t table_rows, std::size_t cols) : slot_(table_rows, -1) { grad_.cols = cols; }

    void add(SymbolId row, const Real* g, Real factor) {
        auto& slot = slot_[row];
        if (slot < 0) {
            slot = static_cast<std::int64_t>(grad_.rows.size());
            grad_.rows.push_back(row);
            grad_.values.resize(grad_.values.size() + grad_.cols, Real(0));
        }
        Real* dst = grad_.values.data() + static_cast<std::size_t>(slot) * grad_.cols;
        for (std::size_t k = 0; k < grad_.cols; ++k) dst[k] += g[k] * factor;
    }

    SparseRowGradient<Real> take() { return std::move(grad_); }

private:
    std::vector<std::int64_t> slot_;
    SparseRowGradient<Real> grad_;
};

}  // namespace detail

/// Mean squared error over the batch and its exact gradient.
template <typename Real>
LossAndGradients<Real> loss_and_gradients(const BasicModelParameters<Real>& params, std::span<const Query> batch,
                                          std::span<const Real> targets, bool train_mode = false, std::uint64_t dropout_seed = 0) {
    if (batch.size() != targets.size()) {
        throw Error("batch has " + std::to_string(batch.size()) + " queries but " + std::to_string(targets.size()) + " targets");
    }
    if (batch.empty()) throw Error("empty batch");
    const auto rows = batch.size();
    const auto& layers = params.mlp.layers;

    detail::ForwardTrace<Real> trace;
    detail::forward_rows(params, batch, 0, train_mode, dropout_seed, trace);

    LossAndGradients<Real> result;
    const Real inv_n = Real(1) / static_cast<Real>(rows);
    std::vector<Real> delta(rows);
    Real loss = 0;
    for (std::size_t b = 0; b < rows; ++b) {
        const Real err = trace.output[b] - targets[b];
        loss += err * err;
        delta[b] = Real(2) * err * inv_n;
    }
    result.loss = loss * inv_n;

    result.grads.mlp.resize(layers.size());
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        const Real* in = l == 0 ? trace.input.data() : trace.post[l - 1].data();
        auto& g = result.grads.mlp[l];
        g.weight.assign(layer.weight.size(), Real(0));
        g.bias.assign(layer.outputs, Real(0));
        for (std::size_t b = 0; b < rows; ++b) {
            const Real* d = delta.data() + b * layer.outputs;
            for (std::size_t j = 0; j < layer.outputs; ++j) g.bias[j] += d[j];
        }
        detail::accumulate_outer(in, layer.inputs, delta.data(), layer.outputs, g.weight.data(), rows);
        // Back-propagate into this layer's input: d_in = delta * W^T.
        std::vector<Real> wt(layer.weight.size());
        for (std::size_t i = 0; i < layer.inputs; ++i) {
            for (std::size_t j = 0; j < layer.outputs; ++j) wt[j * layer.inputs + i] = layer.weight[i * layer.outputs + j];
        }
        std::vector<Real> d_in(rows * layer.inputs, Real(0));
        detail::accumulate_product(delta.data(), layer.outputs, wt.data(), layer.inputs, d_in.data(), rows);
        if (l > 0) {
            // Through dropout and ReLU of hidden layer l-1.
            const auto& pre = trace.pre[l - 1];
            const bool masked = !trace.mask_scale.empty();
            for (std::size_t k = 0; k < d_in.size(); ++k) {
                Real v = pre[k] > Real(0) ? d_in[k] : Real(0);
                if (masked) v *= trace.mask_scale[l - 1][k];
                d_in[k] = v;
            }
        }
        delta = std::move(d_in);
    }

    const auto d = params.config.d_embed;
    const auto width = 3 * d;
    detail::RowAccumulator<Real> acc_p(params.emb_p.rows(), d);
    detail::RowAccumulator<Real> acc_r(params.emb_r.rows(), d);
    detail::RowAccumulator<Real> acc_c(params.emb_c.rows(), d);
    for (std::size_t b = 0; b < rows; ++b) {
        const Real* g = delta.data() + b * width;
        const auto& q = batch[b];
        const Real share = q.perturbation.size() > 1 ? Real(1) / static_cast<Real>(q.perturbation.size()) : Real(1);
        for (auto p : q.perturbation.parts()) acc_p.add(p, g, share);
        acc_r.add(q.readout, g + d, Real(1));
        acc_c.add(q.context, g + 2 * d, Real(1));
    }
    result.grads.emb_p = acc_p.take();
    result.grads.emb_r = acc_r.take();
    result.grads.emb_c = acc_c.take();
    return result;
}

}  // namespace lpm
