#pragma once

// Imputation of unobserved perturbations and network-inference augmentation:
// edges scored on observed data are unioned with edges scored on
// model-imputed data, and evaluated by false omission rate.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/model.hpp"

namespace lpm {

using EdgeKey = std::pair<SymbolId, SymbolId>;  // (source perturbation, target readout)
using EdgeSet = std::set<EdgeKey>;

struct EdgeScoreTable {
    SymbolId context = 0;
    std::map<EdgeKey, double> scores;
};

struct NetworkEvalReport {
    std::optional<double> false_omission_rate;  // empty when every candidate was predicted
    std::size_t edge_count = 0;
    std::size_t truth_size = 0;
};

/// Appends an eval-mode prediction for every (spec, readout) pair where the
/// spec is observed in some context but not in `target_context`, and the
/// readout is observed in it. Appended observations carry `imputed = true`.
template <typename Real>
ObservationSet impute_missing(const BasicModelParameters<Real>& model, const ObservationSet& data, SymbolId target_context,
                              std::size_t threads = 1) {
    if (!data.vocab_c().contains(target_context)) throw Error("target context id out of range");
    std::set<PerturbationSpec> in_target;
    std::vector<SymbolId> readouts;
    std::set<SymbolId> readout_seen;
    for (const auto& o : data.observations()) {
        if (o.context != target_context) continue;
        in_target.insert(o.perturbation);
        if (readout_seen.insert(o.readout).second) readouts.push_back(o.readout);
    }
    std::vector<PerturbationSpec> missing;
    std::set<PerturbationSpec> seen;
    for (const auto& o : data.observations()) {
        if (data.is_control(o.perturbation) || in_target.contains(o.perturbation)) continue;
        if (seen.insert(o.perturbation).second) missing.push_back(o.perturbation);
    }
    for (const auto& spec : missing) {
        for (auto p : spec.parts()) {
            if (p >= model.emb_p.rows()) {
                throw Error("perturbation '" + data.vocab_p().symbol(p) + "' is not in the model vocabulary");
            }
        }
    }
    std::vector<Query> queries;
    for (const auto& spec : missing)
        for (auto r : readouts) queries.push_back(Query{spec, r, target_context});
    const auto pred = forward_batch(model, std::span<const Query>(queries), false, 0, threads);
    std::vector<Observation> all = data.observations();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        all.push_back(Observation{queries[i].perturbation, queries[i].readout, target_context, static_cast<double>(pred[i]), true});
    }
    return data.with_observations(std::move(all));
}

inline ObservationSet imputed_only(const ObservationSet& data) {
    std::vector<Observation> picked;
    for (const auto& o : data.observations())
        if (o.imputed) picked.push_back(o);
    return data.with_observations(std::move(picked));
}

inline ObservationSet observed_only(const ObservationSet& data) {
    std::vector<Observation> picked;
    for (const auto& o : data.observations())
        if (!o.imputed) picked.push_back(o);
    return data.with_observations(std::move(picked));
}

/// score(p -> r) = |mean of r under single perturbation p - control mean of r|
/// within `context`. Combinations and controls are not edge sources.
inline EdgeScoreTable mean_difference_scores(const ObservationSet& data, const ControlStats& controls, SymbolId context) {
    std::map<EdgeKey, std::pair<double, std::size_t>> sums;
    for (const auto& o : data.observations()) {
        if (o.context != context || !o.perturbation.is_single() || data.is_control(o.perturbation)) continue;
        auto& [s, n] = sums[{o.perturbation.front(), o.readout}];
        s += o.value;
        ++n;
    }
    EdgeScoreTable table;
    table.context = context;
    for (const auto& [key, acc] : sums) {
        const auto ctrl = controls.mean(context, key.second);
        if (!ctrl) {
            throw Error("no control mean for (" + data.vocab_c().symbol(context) + ", " + data.vocab_r().symbol(key.second) + ")");
        }
        table.scores[key] = std::abs(acc.first / static_cast<double>(acc.second) - *ctrl);
    }
    return table;
}

using EdgeScorer = std::function<EdgeScoreTable(const ObservationSet&, const ControlStats&, SymbolId)>;

inline EdgeScorer mean_difference_scorer() { return &mean_difference_scores; }

/// The k best-scoring edges; ties go to the smaller (source, target).
inline std::vector<std::pair<EdgeKey, double>> ranked_edges(const EdgeScoreTable& table, std::size_t k) {
    std::vector<std::pair<EdgeKey, double>> ranked(table.scores.begin(), table.scores.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

inline EdgeSet top_k_edges(const EdgeScoreTable& table, std::size_t k) {
    if (k == 0) throw Error("k must be at least 1");
    EdgeSet out;
    for (const auto& [edge, score] : ranked_edges(table, k)) out.insert(edge);
    return out;
}

/// top_k(scorer(real)) united with top_k(scorer(imputed-only)).
inline EdgeSet two_step_union(const ObservationSet& real, const ObservationSet& imputed, const ControlStats& controls, SymbolId context,
                              const EdgeScorer& scorer, std::size_t k) {
    auto edges = top_k_edges(scorer(real, controls, context), k);
    const auto second = top_k_edges(scorer(imputed, controls, context), k);
    edges.insert(second.begin(), second.end());
    return edges;
}

/// Single non-control perturbations x readouts observed in `context`.
inline EdgeSet candidate_universe(const ObservationSet& data, SymbolId context) {
    std::set<SymbolId> sources, targets;
    for (const auto& o : data.observations()) {
        if (o.context != context) continue;
        targets.insert(o.readout);
        if (o.perturbation.is_single() && !data.is_control(o.perturbation)) sources.insert(o.perturbation.front());
    }
    EdgeSet universe;
    for (auto s : sources)
        for (auto t : targets) universe.insert({s, t});
    return universe;
}

/// Among candidate pairs not predicted, the fraction that are true edges.
inline NetworkEvalReport false_omission_rate(const EdgeSet& predicted, const EdgeSet& truth, const EdgeSet& universe) {
    for (const auto& e : predicted)
        if (!universe.contains(e)) throw Error("predicted edge outside the candidate universe");
    for (const auto& e : truth)
        if (!universe.contains(e)) throw Error("true edge outside the candidate universe");
    NetworkEvalReport report;
    report.edge_count = predicted.size();
    report.truth_size = truth.size();
    std::size_t negatives = 0, missed = 0;
    for (const auto& e : universe) {
        if (predicted.contains(e)) continue;
        ++negatives;
        if (truth.contains(e)) ++missed;
    }
    if (negatives > 0) report.false_omission_rate = static_cast<double>(missed) / static_cast<double>(negatives);
    return report;
}

inline void write_edges_tsv(const ObservationSet& data, const EdgeSet& edges, std::ostream& out) {
    out << "source\ttarget\n";
    for (const auto& [s, t] : edges) out << data.vocab_p().symbol(s) << '\t' << data.vocab_r().symbol(t) << '\n';
}

inline void write_scored_edges_tsv(const ObservationSet& data, const EdgeScoreTable& table, std::size_t k, std::ostream& out) {
    out << "source\ttarget\tscore\n";
    for (const auto& [edge, score] : ranked_edges(table, k)) {
        out << data.vocab_p().symbol(edge.first) << '\t' << data.vocab_r().symbol(edge.second) << '\t' << detail::format_double(score)
            << '\n';
    }
}

}  // namespace lpm
