#pragma once

// Data-scaling harness on synthetic screens: held-out Pearson as a function of
// (a) how many perturbations of the target context are available for training
// and (b) how many contexts are available for training.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/eval.hpp"
#include "lpm/model.hpp"
#include "lpm/synth.hpp"
#include "lpm/train.hpp"

namespace lpm {

struct ScaleStudyConfig {
    SynthConfig synth;
    std::vector<std::size_t> perturbation_ladder{25, 50, 100, 200};
    std::vector<std::size_t> context_ladder{1, 2, 4};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t validation_perturbations = 20;
    std::size_t test_perturbations = 40;
    // Target-context training perturbations on the context axis.
    std::size_t context_axis_perturbations = 25;
    // Contexts (target included) trained on along the perturbation axis. The
    // others are fully observed, so held-out perturbations are known there.
    std::size_t perturbation_axis_contexts = 2;
    TrainConfig train;

    void validate() const {
        if (perturbation_ladder.empty() || context_ladder.empty()) throw Error("scale study ladders must be non-empty");
        if (seeds.empty()) throw Error("scale study needs at least one seed");
        const auto max_p = *std::max_element(perturbation_ladder.begin(), perturbation_ladder.end());
        const auto max_c = *std::max_element(context_ladder.begin(), context_ladder.end());
        const auto held_out = validation_perturbations + test_perturbations;
        if (validation_perturbations == 0 || test_perturbations < 2) throw Error("scale study needs validation and test perturbations");
        if (synth.n_p < held_out + std::max(max_p, context_axis_perturbations)) {
            throw Error("synth n_p too small for the perturbation ladder plus held-out perturbations");
        }
        if (*std::min_element(context_ladder.begin(), context_ladder.end()) == 0) throw Error("context ladder levels must be >= 1");
        if (synth.n_c < max_c) throw Error("synth n_c smaller than the largest context ladder level");
        if (perturbation_axis_contexts == 0 || perturbation_axis_contexts > synth.n_c) {
            throw Error("perturbation_axis_contexts must lie in [1, synth n_c]");
        }
        for (auto l : perturbation_ladder)
            if (l == 0) throw Error("perturbation ladder levels must be >= 1");
        train.validate();
    }
};

struct ScaleRow {
    std::string axis;  // "perturbations" or "contexts"
    std::size_t level = 0;
    std::uint64_t seed = 0;
    double pearson = 0.0;
    double noperturb_pearson = 0.0;
    TrainReport report;
};

namespace detail {

struct ScaleSeedData {
    ObservationSet screen;
    std::vector<std::size_t> pool;  // target-context training candidates, teacher ids
    std::set<std::size_t> validation;
    std::set<std::size_t> test;
};

inline double pearson_or_zero(std::span<const double> a, std::span<const double> b) { return pearson(a, b).value_or(0.0); }

// Builds the split for the given selection of observations (indices into the
// full screen); train/validation/test are assigned by teacher perturbation.
inline std::pair<ObservationSet, SplitAssignment> scale_subset(const TeacherModel& teacher, const ScaleSeedData& sd,
                                                               const std::set<std::size_t>& target_train,
                                                               const std::set<std::size_t>& extra_contexts) {
    std::map<std::string, std::size_t> teacher_id;
    for (std::size_t p = 0; p < teacher.config().n_p; ++p) teacher_id[teacher.perturbation_symbol(p)] = p;
    const auto& screen = sd.screen;
    const auto target = screen.vocab_c().id(teacher.context_symbol(0));
    std::vector<std::size_t> keep;
    enum class Fold { train, validation, test };
    std::vector<Fold> folds;
    for (std::size_t i = 0; i < screen.size(); ++i) {
        const auto& o = screen[i];
        const bool control = screen.is_control(o.perturbation);
        if (o.context != target) {
            const auto c_symbol = screen.vocab_c().symbol(o.context);
            bool wanted = false;
            for (auto c : extra_contexts) wanted = wanted || teacher.context_symbol(c) == c_symbol;
            if (wanted) {
                keep.push_back(i);
                folds.push_back(Fold::train);
            }
            continue;
        }
        if (control) {
            keep.push_back(i);
            folds.push_back(Fold::train);
            continue;
        }
        const auto p = teacher_id.at(screen.format_perturbation(o.perturbation));
        if (target_train.contains(p)) {
            keep.push_back(i);
            folds.push_back(Fold::train);
        } else if (sd.validation.contains(p)) {
            keep.push_back(i);
            folds.push_back(Fold::validation);
        } else if (sd.test.contains(p)) {
            keep.push_back(i);
            folds.push_back(Fold::test);
        }
    }
    auto subset = screen.subset(keep);
    SplitAssignment split;
    split.strategy = "scale-study";
    for (std::size_t k = 0; k < keep.size(); ++k) {
        switch (folds[k]) {
            case Fold::train: split.train.push_back(k); break;
            case Fold::validation: split.validation.push_back(k); break;
            case Fold::test: split.test.push_back(k); break;
        }
    }
    return {std::move(subset), std::move(split)};
}

}  // namespace detail

/// Runs every ladder level for every seed. Rows come out grouped by seed, then
/// axis, then level. The NoPerturb column is fixed per (axis, seed): on the
/// perturbation axis it is fitted to the largest level's training fold, on
/// the context axis the target-context training fold never changes.
template <typename Real = float>
std::vector<ScaleRow> run_scale_study(const ScaleStudyConfig& cfg, const std::function<void(const ScaleRow&)>& on_row = {}) {
    cfg.validate();
    std::vector<ScaleRow> rows;
    for (const auto seed : cfg.seeds) {
        SynthConfig sc = cfg.synth;
        sc.seed = detail::hash_combine(cfg.synth.seed, seed);
        const auto teacher = generate_teacher(sc);

        detail::ScaleSeedData sd;
        sd.screen = sample_screen(teacher, iota_ids(sc.n_c), iota_ids(sc.n_p), detail::hash_combine(sc.seed, 1));
        auto perts = iota_ids(sc.n_p);
        std::mt19937_64 rng(detail::hash_combine(sc.seed, 2));
        std::shuffle(perts.begin(), perts.end(), rng);
        sd.test.insert(perts.begin(), perts.begin() + static_cast<std::ptrdiff_t>(cfg.test_perturbations));
        sd.validation.insert(perts.begin() + static_cast<std::ptrdiff_t>(cfg.test_perturbations),
                             perts.begin() + static_cast<std::ptrdiff_t>(cfg.test_perturbations + cfg.validation_perturbations));
        sd.pool.assign(perts.begin() + static_cast<std::ptrdiff_t>(cfg.test_perturbations + cfg.validation_perturbations), perts.end());

        TrainConfig tc = cfg.train;
        tc.seed = detail::hash_combine(cfg.train.seed, seed);
        tc.model.seed = detail::hash_combine(cfg.train.model.seed, seed);

        auto run_level = [&](const std::string& axis, std::size_t level, const std::set<std::size_t>& target_train,
                             const std::set<std::size_t>& extra_contexts, std::optional<double> noperturb) {
            auto [subset, split] = detail::scale_subset(teacher, sd, target_train, extra_contexts);
            auto trained = train<Real>(subset, split, tc);
            const auto test = subset.subset(split.test);
            const auto truth = values_of(test);
            const auto pred = model_predictor(trained.params, tc.threads)(test);
            ScaleRow row;
            row.axis = axis;
            row.level = level;
            row.seed = seed;
            row.pearson = detail::pearson_or_zero(truth, pred);
            if (noperturb) {
                row.noperturb_pearson = *noperturb;
            } else {
                const NoPerturbBaseline baseline(subset.subset(split.train));
                row.noperturb_pearson = detail::pearson_or_zero(truth, baseline.predict(test));
            }
            row.report = std::move(trained.report);
            if (on_row) on_row(row);
            rows.push_back(std::move(row));
        };

        std::set<std::size_t> aux_contexts;
        for (std::size_t c = 1; c < cfg.perturbation_axis_contexts; ++c) aux_contexts.insert(c);

        // NoPerturb reference on the perturbation axis: largest level's fold.
        const auto max_level = *std::max_element(cfg.perturbation_ladder.begin(), cfg.perturbation_ladder.end());
        double np_reference = 0.0;
        {
            std::set<std::size_t> widest(sd.pool.begin(), sd.pool.begin() + static_cast<std::ptrdiff_t>(max_level));
            auto [subset, split] = detail::scale_subset(teacher, sd, widest, aux_contexts);
            const auto test = subset.subset(split.test);
            const NoPerturbBaseline baseline(subset.subset(split.train));
            np_reference = detail::pearson_or_zero(values_of(test), baseline.predict(test));
        }
        for (auto level : cfg.perturbation_ladder) {
            std::set<std::size_t> target_train(sd.pool.begin(), sd.pool.begin() + static_cast<std::ptrdiff_t>(level));
            run_level("perturbations", level, target_train, aux_contexts, np_reference);
        }
        const std::set<std::size_t> fixed_train(sd.pool.begin(),
                                                sd.pool.begin() + static_cast<std::ptrdiff_t>(cfg.context_axis_perturbations));
        for (auto level : cfg.context_ladder) {
            std::set<std::size_t> extra;
            for (std::size_t c = 1; c < level; ++c) extra.insert(c);
            run_level("contexts", level, fixed_train, extra, std::nullopt);
        }
    }
    return rows;
}

inline void write_scale_csv(std::span<const ScaleRow> rows, std::ostream& out) {
    out << "axis,level,seed,pearson,noperturb_pearson\n";
    for (const auto& r : rows) {
        out << r.axis << ',' << r.level << ',' << r.seed << ',' << detail::format_double(r.pearson) << ','
            << detail::format_double(r.noperturb_pearson) << '\n';
    }
}

}  // namespace lpm
