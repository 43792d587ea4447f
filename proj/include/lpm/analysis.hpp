#pragma once

// Embedding export and representation-space analyses: RMSE distances,
// neighbourhoods, recall of known positives and a kNN annotation probe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/model.hpp"

namespace lpm {

struct EmbeddingExport {
    Dimension dimension = Dimension::perturbation;
    std::vector<std::string> symbols;
    std::size_t cols = 0;
    std::vector<double> values;  // symbols.size() x cols

    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    std::size_t index_of(const std::string& symbol) const {
        const auto it = std::find(symbols.begin(), symbols.end(), symbol);
        if (it == symbols.end()) throw Error("symbol '" + symbol + "' not in embedding export");
        return static_cast<std::size_t>(it - symbols.begin());
    }
};

/// label per symbol, e.g. a mechanism cluster or an inhibitor target.
using AnnotationSet = std::map<std::string, std::string>;

template <typename Real>
EmbeddingExport export_embeddings(const BasicModelParameters<Real>& params, const Vocabulary& vocab, Dimension dimension) {
    const EmbeddingTable<Real>* table = nullptr;
    switch (dimension) {
        case Dimension::perturbation: table = &params.emb_p; break;
        case Dimension::readout: table = &params.emb_r; break;
        case Dimension::context: table = &params.emb_c; break;
    }
    if (table->rows() != vocab.size()) throw Error("vocabulary size does not match embedding table");
    EmbeddingExport out;
    out.dimension = dimension;
    out.symbols = vocab.symbols();
    out.cols = table->cols();
    out.values.assign(table->values().begin(), table->values().end());
    return out;
}

inline void write_embeddings_tsv(const EmbeddingExport& e, std::ostream& out) {
    out << "symbol";
    for (std::size_t k = 0; k < e.cols; ++k) out << "\te" << k;
    out << '\n';
    for (std::size_t i = 0; i < e.symbols.size(); ++i) {
        out << e.symbols[i];
        for (double v : e.row(i)) out << '\t' << detail::format_double(v);
        out << '\n';
    }
}

inline double rmse_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("rmse_distance: length mismatch");
    if (a.empty()) throw Error("rmse_distance: empty vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

struct Neighbor {
    std::string symbol;
    double distance = 0.0;
};

/// All other symbols by ascending distance (ties: symbol string), first k.
inline std::vector<Neighbor> nearest_neighbors(const EmbeddingExport& e, const std::string& reference, std::size_t k) {
    if (k == 0) throw Error("k must be at least 1");
    const auto ref = e.index_of(reference);
    std::vector<Neighbor> all;
    for (std::size_t i = 0; i < e.symbols.size(); ++i) {
        if (i == ref) continue;
        all.push_back({e.symbols[i], rmse_distance(e.row(ref), e.row(i))});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.distance != b.distance ? a.distance < b.distance : a.symbol < b.symbol;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

/// recall(k) = |top-k neighbours of reference that are positives| / |positives|
/// for k = 1..max_k.
inline std::vector<std::pair<std::size_t, double>> recall_curve(const EmbeddingExport& e, const std::string& reference,
                                                                const std::set<std::string>& positives, std::size_t max_k) {
    if (positives.empty()) throw Error("recall_curve: positives must be non-empty");
    for (const auto& p : positives) e.index_of(p);
    if (max_k == 0) throw Error("recall_curve: max_k must be at least 1");
    const auto ranked = nearest_neighbors(e, reference, max_k);
    std::vector<std::pair<std::size_t, double>> curve;
    std::size_t hits = 0;
    for (std::size_t k = 1; k <= max_k; ++k) {
        if (k <= ranked.size() && positives.contains(ranked[k - 1].symbol)) ++hits;
        curve.emplace_back(k, static_cast<double>(hits) / static_cast<double>(positives.size()));
    }
    return curve;
}

/// One-vs-rest ROC AUC with the midrank convention for tied scores.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
    if (scores.size() != positive.size()) throw Error("roc_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j - 1) + 1.0;
        for (std::size_t t = i; t < j; ++t) rank[order[t]] = mid;
        i = j;
    }
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (positive[i]) {
            rank_sum += rank[i];
            ++n_pos;
        }
    }
    const auto n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw Error("roc_auc needs both classes");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

namespace detail {

// Hypergeometric pmf: h successes in k draws from `total` items of which
// `marked` are successes.
inline double hypergeometric_pmf(std::size_t h, std::size_t total, std::size_t marked, std::size_t k) {
    if (h > marked || h > k || k - h > total - marked) return 0.0;
    auto log_choose = [](std::size_t a, std::size_t b) {
        return std::lgamma(static_cast<double>(a) + 1.0) - std::lgamma(static_cast<double>(b) + 1.0) -
               std::lgamma(static_cast<double>(a - b) + 1.0);
    };
    return std::exp(log_choose(marked, h) + log_choose(total - marked, k - h) - log_choose(total, k));
}

}  // namespace detail

/// Leave-one-out kNN probe. For each annotated symbol and label, the count of
/// that label among the k nearest other annotated symbols is mapped through
/// its null distribution (k draws without replacement from the other n - 1
/// symbols): score = P(count < h) + u * P(count = h), u ~ U(0, 1) from the
/// seed, or 0.5 when the count cannot vary. Returns the per-label
/// one-vs-rest AUC averaged over labels, then over seeds. Seeds only order
/// equidistant neighbours and equal counts.
inline double knn_annotation_score(const EmbeddingExport& e, const AnnotationSet& annotations, std::size_t k,
                                   std::span<const std::uint64_t> seeds) {
    if (k == 0) throw Error("k must be at least 1");
    if (seeds.empty()) throw Error("at least one seed is required");
    std::vector<std::size_t> rows;
    std::vector<std::string> label_of;
    std::map<std::string, std::size_t> label_index;
    for (const auto& [symbol, label] : annotations) {
        rows.push_back(e.index_of(symbol));
        label_of.push_back(label);
        label_index.emplace(label, 0);
    }
    if (label_index.size() < 2) throw Error("knn_annotation_score needs at least 2 distinct labels");
    std::size_t next = 0;
    for (auto& [label, idx] : label_index) idx = next++;
    const auto n = rows.size();
    const auto n_labels = label_index.size();
    std::vector<std::size_t> y(n);
    std::vector<std::size_t> label_count(n_labels, 0);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = label_index.at(label_of[i]);
        ++label_count[y[i]];
    }
    const auto kk = std::min(k, n - 1);

    std::vector<double> dist(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dist[i * n + j] = dist[j * n + i] = rmse_distance(e.row(rows[i]), e.row(rows[j]));

    double total = 0.0;
    for (const auto seed : seeds) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> uniform(0.0, 1.0);
        std::vector<double> scores(n * n_labels, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<double, std::uint64_t>> keyed;
            std::vector<std::size_t> others;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                others.push_back(j);
                keyed.emplace_back(dist[i * n + j], rng());
            }
            std::vector<std::size_t> order(others.size());
            for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keyed[a] < keyed[b]; });
            std::vector<std::size_t> hits(n_labels, 0);
            for (std::size_t t = 0; t < kk; ++t) ++hits[y[others[order[t]]]];
            for (std::size_t l = 0; l < n_labels; ++l) {
                const auto marked = label_count[l] - (y[i] == l ? 1 : 0);
                double below = 0.0;
                for (std::size_t h = 0; h < hits[l]; ++h) below += detail::hypergeometric_pmf(h, n - 1, marked, kk);
                const double at = detail::hypergeometric_pmf(hits[l], n - 1, marked, kk);
                const double u = uniform(rng);
                scores[i * n_labels + l] = at >= 1.0 - 1e-12 ? 0.5 : below + u * at;
            }
        }
        double auc_sum = 0.0;
        for (std::size_t l = 0; l < n_labels; ++l) {
            std::vector<double> s(n);
            std::vector<bool> pos(n);
            for (std::size_t i = 0; i < n; ++i) {
                s[i] = scores[i * n_labels + l];
                pos[i] = y[i] == l;
            }
            auc_sum += roc_auc(s, pos);
        }
        total += auc_sum / static_cast<double>(n_labels);
    }
    return total / static_cast<double>(seeds.size());
}

}  // namespace lpm
