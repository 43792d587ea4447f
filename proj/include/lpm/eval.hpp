#pragma once

// Regression metrics, test-set slices and the NoPerturb baseline.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/model.hpp"

namespace lpm {

/// pearson and r2 are empty when undefined (zero variance).
struct MetricsReport {
    std::string subset_label = "full";
    std::size_t n = 0;
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> pearson;
    std::optional<double> r2;
};

inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("pearson: length mismatch");
    if (a.size() < 2) return std::nullopt;
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline MetricsReport metric_suite(std::span<const double> truth, std::span<const double> pred, std::string label = "full") {
    if (truth.size() != pred.size()) throw Error("metric_suite: truth and prediction lengths differ");
    if (truth.size() < 2) throw Error("metric_suite: need at least 2 pairs");
    MetricsReport r;
    r.subset_label = std::move(label);
    r.n = truth.size();
    const double n = static_cast<double>(truth.size());
    double sse = 0.0, sae = 0.0, mean_t = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!std::isfinite(truth[i]) || !std::isfinite(pred[i])) throw Error("metric_suite: non-finite input");
        const double e = truth[i] - pred[i];
        sse += e * e;
        sae += std::abs(e);
        mean_t += truth[i];
    }
    mean_t /= n;
    double sst = 0.0;
    for (double t : truth) sst += (t - mean_t) * (t - mean_t);
    r.rmse = std::sqrt(sse / n);
    r.mae = sae / n;
    if (sst > 0.0) {
        r.pearson = pearson(truth, pred);
        r.r2 = 1.0 - sse / sst;
    }
    return r;
}

/// Pearson between control-subtracted truth and prediction; keys[i] names the
/// (context, readout) whose control mean is subtracted from element i.
inline std::optional<double> pearson_delta(std::span<const double> truth, std::span<const double> pred, const ControlStats& controls,
                                           std::span<const ContextReadout> keys) {
    if (truth.size() != pred.size() || truth.size() != keys.size()) throw Error("pearson_delta: length mismatch");
    std::vector<double> dt(truth.size()), dp(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto ctrl = controls.mean(keys[i].first, keys[i].second);
        if (!ctrl) {
            throw Error("no control mean for context " + std::to_string(keys[i].first) + ", readout " + std::to_string(keys[i].second));
        }
        dt[i] = truth[i] - *ctrl;
        dp[i] = pred[i] - *ctrl;
    }
    return pearson(dt, dp);
}

inline std::vector<ContextReadout> keys_of(const ObservationSet& data) {
    std::vector<ContextReadout> keys;
    keys.reserve(data.size());
    for (const auto& o : data.observations()) keys.emplace_back(o.context, o.readout);
    return keys;
}

inline std::vector<double> values_of(const ObservationSet& data) {
    std::vector<double> v;
    v.reserve(data.size());
    for (const auto& o : data.observations()) v.push_back(o.value);
    return v;
}

namespace detail {

inline double control_mean_or_throw(const ObservationSet& data, const ControlStats& controls, const Observation& o) {
    if (auto m = controls.mean(o.context, o.readout)) return *m;
    throw Error("no control mean for (" + data.vocab_c().symbol(o.context) + ", " + data.vocab_r().symbol(o.readout) + ")");
}

inline std::size_t ceil_count(double fraction, std::size_t n) {
    return std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
}

// Ranks groups by descending magnitude (ties: ascending key) and returns the
// sorted observation indices of the top ceil(fraction * groups).
template <typename Key>
std::vector<std::size_t> top_fraction_of_groups(const std::map<Key, std::pair<double, std::vector<std::size_t>>>& groups,
                                                double fraction) {
    std::vector<std::pair<double, const Key*>> ranked;
    for (const auto& [key, g] : groups) ranked.emplace_back(g.first, &key);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto keep = ceil_count(fraction, ranked.size());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep; ++i) {
        const auto& idx = groups.at(*ranked[i].second).second;
        out.insert(out.end(), idx.begin(), idx.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline void check_fraction(double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction must lie in (0, 1]");
}

}  // namespace detail

using ContextSpec = std::pair<SymbolId, PerturbationSpec>;

/// Observations of the perturbation specs (per context) whose RMSE against
/// the control means is largest.
inline std::vector<std::size_t> strongest_perturbation_subset(const ObservationSet& test, const ControlStats& controls,
                                                              double fraction) {
    detail::check_fraction(fraction);
    std::map<ContextSpec, std::pair<double, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& o = test[i];
        const double d = o.value - detail::control_mean_or_throw(test, controls, o);
        auto& g = groups[{o.context, o.perturbation}];
        g.first += d * d;
        g.second.push_back(i);
    }
    for (auto& [key, g] : groups) g.first = std::sqrt(g.first / static_cast<double>(g.second.size()));
    return detail::top_fraction_of_groups(groups, fraction);
}

/// Observations of the readouts (per context) that move furthest from their
/// control mean, measured as RMSE.
inline std::vector<std::size_t> most_moving_readout_subset(const ObservationSet& test, const ControlStats& controls, double fraction) {
    detail::check_fraction(fraction);
    std::map<ContextReadout, std::pair<double, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& o = test[i];
        const double d = o.value - detail::control_mean_or_throw(test, controls, o);
        auto& g = groups[{o.context, o.readout}];
        g.first += d * d;
        g.second.push_back(i);
    }
    for (auto& [key, g] : groups) g.first = std::sqrt(g.first / static_cast<double>(g.second.size()));
    return detail::top_fraction_of_groups(groups, fraction);
}

/// Per (context, spec): observations of the k readouts with the largest
/// absolute shift of the observed mean from control.
inline std::map<ContextSpec, std::vector<std::size_t>> topk_de_subset(const ObservationSet& test, const ControlStats& controls,
                                                                      std::size_t k) {
    if (k == 0) throw Error("k must be at least 1");
    struct ReadoutAcc {
        double sum = 0.0;
        std::vector<std::size_t> idx;
    };
    std::map<ContextSpec, std::map<SymbolId, ReadoutAcc>> per_spec;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& o = test[i];
        auto& acc = per_spec[{o.context, o.perturbation}][o.readout];
        acc.sum += o.value;
        acc.idx.push_back(i);
    }
    std::map<ContextSpec, std::vector<std::size_t>> out;
    for (const auto& [key, readouts] : per_spec) {
        std::vector<std::pair<double, SymbolId>> shifts;
        for (const auto& [r, acc] : readouts) {
            const auto ctrl = controls.mean(key.first, r);
            if (!ctrl) {
                throw Error("no control mean for (" + test.vocab_c().symbol(key.first) + ", " + test.vocab_r().symbol(r) + ")");
            }
            shifts.emplace_back(std::abs(acc.sum / static_cast<double>(acc.idx.size()) - *ctrl), r);
        }
        std::stable_sort(shifts.begin(), shifts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        auto& idx = out[key];
        for (std::size_t j = 0; j < std::min(k, shifts.size()); ++j) {
            const auto& acc = readouts.at(shifts[j].second);
            idx.insert(idx.end(), acc.idx.begin(), acc.idx.end());
        }
        std::sort(idx.begin(), idx.end());
    }
    return out;
}

/// Predicts the training mean of each (context, readout), ignoring the
/// perturbation.
class NoPerturbBaseline {
public:
    explicit NoPerturbBaseline(const ObservationSet& train) {
        std::map<ContextReadout, std::pair<double, std::size_t>> sums;
        for (const auto& o : train.observations()) {
            auto& [s, n] = sums[{o.context, o.readout}];
            s += o.value;
            ++n;
        }
        for (const auto& [key, acc] : sums) means_[key] = acc.first / static_cast<double>(acc.second);
    }

    double predict(const Query& q) const {
        if (auto it = means_.find({q.context, q.readout}); it != means_.end()) return it->second;
        throw Error("NoPerturb: (context " + std::to_string(q.context) + ", readout " + std::to_string(q.readout) +
                    ") not observed in training data");
    }

    std::vector<double> predict(const ObservationSet& data) const {
        std::vector<double> out;
        out.reserve(data.size());
        for (const auto& o : data.observations()) out.push_back(predict(Query::from(o)));
        return out;
    }

private:
    std::map<ContextReadout, double> means_;
};

inline double no_perturb_predict(const ObservationSet& train, const Query& query) { return NoPerturbBaseline(train).predict(query); }

struct SubsetSpec {
    enum class Kind { full, strongest_perturbations, most_moving_readouts, topk_de };

    Kind kind = Kind::full;
    double fraction = 1.0;
    std::size_t k = 0;

    static SubsetSpec full() { return {}; }
    static SubsetSpec strongest(double f) { return {Kind::strongest_perturbations, f, 0}; }
    static SubsetSpec moving(double f) { return {Kind::most_moving_readouts, f, 0}; }
    static SubsetSpec topk(std::size_t k) { return {Kind::topk_de, 1.0, k}; }

    std::string label() const {
        auto pct = [](double f) { return std::to_string(static_cast<int>(std::lround(f * 100))) + "%"; };
        switch (kind) {
            case Kind::full: return "full";
            case Kind::strongest_perturbations: return "strongest_perturbations_" + pct(fraction);
            case Kind::most_moving_readouts: return "most_moving_readouts_" + pct(fraction);
            case Kind::topk_de: return "top" + std::to_string(k) + "_de";
        }
        return "?";
    }
};

/// The slices reported for every benchmark: full, 25% and 10% strongest
/// perturbations and most moving readouts, and the top-20 DE readouts.
inline std::vector<SubsetSpec> standard_subsets() {
    return {SubsetSpec::full(),        SubsetSpec::strongest(0.25), SubsetSpec::strongest(0.10),
            SubsetSpec::moving(0.25),  SubsetSpec::moving(0.10),    SubsetSpec::topk(20)};
}

/// Maps every observation of a set to a prediction.
using Predictor = std::function<std::vector<double>(const ObservationSet&)>;

template <typename Real>
Predictor model_predictor(const BasicModelParameters<Real>& params, std::size_t threads = 1) {
    return [&params, threads](const ObservationSet& data) {
        const auto qs = queries_of(data);
        const auto raw = forward_batch(params, std::span<const Query>(qs), false, 0, threads);
        return std::vector<double>(raw.begin(), raw.end());
    };
}

inline Predictor no_perturb_predictor(const NoPerturbBaseline& baseline) {
    return [&baseline](const ObservationSet& data) { return baseline.predict(data); };
}

namespace detail {

inline MetricsReport suite_on(std::span<const double> truth, std::span<const double> pred, std::span<const std::size_t> idx,
                              std::string label) {
    std::vector<double> t, p;
    for (auto i : idx) {
        t.push_back(truth[i]);
        p.push_back(pred[i]);
    }
    return metric_suite(t, p, std::move(label));
}

}  // namespace detail

/// One report per subset. For topk_de the metrics are computed per spec and
/// averaged without weighting; specs with fewer than two pairs are skipped.
inline std::vector<MetricsReport> evaluate_model(const Predictor& predictor, const ObservationSet& test, const ControlStats& controls,
                                                 std::span<const SubsetSpec> subsets) {
    if (test.empty()) throw Error("test fold is empty");
    const auto truth = values_of(test);
    const auto pred = predictor(test);
    if (pred.size() != truth.size()) throw Error("predictor returned the wrong number of values");
    std::vector<MetricsReport> reports;
    for (const auto& s : subsets) {
        switch (s.kind) {
            case SubsetSpec::Kind::full: {
                std::vector<std::size_t> all(test.size());
                for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
                reports.push_back(detail::suite_on(truth, pred, all, s.label()));
                break;
            }
            case SubsetSpec::Kind::strongest_perturbations:
                reports.push_back(detail::suite_on(truth, pred, strongest_perturbation_subset(test, controls, s.fraction), s.label()));
                break;
            case SubsetSpec::Kind::most_moving_readouts:
                reports.push_back(detail::suite_on(truth, pred, most_moving_readout_subset(test, controls, s.fraction), s.label()));
                break;
            case SubsetSpec::Kind::topk_de: {
                MetricsReport agg;
                agg.subset_label = s.label();
                double pearson_sum = 0.0, r2_sum = 0.0;
                std::size_t specs = 0, pearson_n = 0, r2_n = 0;
                for (const auto& [key, idx] : topk_de_subset(test, controls, s.k)) {
                    if (idx.size() < 2) continue;
                    const auto m = detail::suite_on(truth, pred, idx, s.label());
                    agg.n += m.n;
                    agg.rmse += m.rmse;
                    agg.mae += m.mae;
                    ++specs;
                    if (m.pearson) {
                        pearson_sum += *m.pearson;
                        ++pearson_n;
                    }
                    if (m.r2) {
                        r2_sum += *m.r2;
                        ++r2_n;
                    }
                }
                if (specs == 0) throw Error("topk_de: no perturbation spec has at least two readouts");
                agg.rmse /= static_cast<double>(specs);
                agg.mae /= static_cast<double>(specs);
                if (pearson_n > 0) agg.pearson = pearson_sum / static_cast<double>(pearson_n);
                if (r2_n > 0) agg.r2 = r2_sum / static_cast<double>(r2_n);
                reports.push_back(std::move(agg));
                break;
            }
        }
    }
    return reports;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? detail::format_double(*v) : "NA"; }

inline void write_metrics_csv(std::span<const MetricsReport> reports, std::ostream& out) {
    out << "subset,n,rmse,mae,pearson,r2\n";
    for (const auto& r : reports) {
        out << r.subset_label << ',' << r.n << ',' << detail::format_double(r.rmse) << ',' << detail::format_double(r.mae) << ','
            << format_optional(r.pearson) << ',' << format_optional(r.r2) << '\n';
    }
}

}  // namespace lpm
