// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "support.hpp"

using namespace lpm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

// Every training run in this binary, for the early-stopping check.
struct RunLog {
    std::string where;
    TrainReport report;
    std::size_t patience = 0;
};
std::vector<RunLog> g_runs;

TrainResult<float> logged_train(const std::string& where, const ObservationSet& data, const SplitAssignment& split,
                                const TrainConfig& cfg) {
    auto r = train<float>(data, split, cfg);
    g_runs.push_back({where, r.report, cfg.patience});
    return r;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

// ---------------------------------------------------------------------------

Outcome gradient_exactness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> d_pick(1, 8), h_pick(1, 16), l_pick(1, 2), v_pick(3, 6), b_pick(1, 6);
    std::uniform_real_distribution<double> drop_pick(0.0, 0.4);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    std::size_t checked = 0;
    for (int m = 0; m < 25; ++m) {
        ModelConfig cfg;
        cfg.d_embed = d_pick(rng);
        cfg.hidden_dim = h_pick(rng);
        cfg.hidden_layers = l_pick(rng);
        cfg.dropout_rate = m % 2 == 0 ? 0.0 : drop_pick(rng);
        cfg.seed = rng();
        const VocabSizes sizes{v_pick(rng), v_pick(rng), v_pick(rng) - 2};
        auto params = init_parameters<double>(cfg, sizes);
        // Push biases off zero so few ReLU inputs sit on the kink.
        for (auto& layer : params.mlp.layers)
            for (auto& b : layer.bias) b = 0.3 * normal(rng);
        const auto batch = fixtures::random_queries(sizes, b_pick(rng), 3, rng);
        std::vector<double> targets;
        for (std::size_t i = 0; i < batch.size(); ++i) targets.push_back(normal(rng));
        const auto r = fixtures::finite_difference_check(params, batch, targets, cfg.dropout_rate > 0.0, rng());
        worst = std::max(worst, r.max_relative_error);
        checked += r.checked;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 30.0,
            "25 models, " + std::to_string(checked) + " parameters, max rel error " + fmt(worst, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome optimizer_oracle() {
    ModelConfig cfg;
    cfg.d_embed = 1;
    cfg.hidden_dim = 1;
    cfg.hidden_layers = 1;
    cfg.dropout_rate = 0.0;
    auto p = init_parameters<double>(cfg, {1, 1, 1});
    auto state = init_optimizer_state(p);
    GradientSet<double> g;
    g.emb_p.cols = g.emb_r.cols = g.emb_c.cols = 1;
    for (const auto& l : p.mlp.layers) g.mlp.push_back({std::vector<double>(l.weight.size(), 0.0), std::vector<double>(l.bias.size(), 0.0)});
    g.mlp.back().bias[0] = 1.0;
    const double before = p.mlp.layers.back().bias[0];
    adam_step(p, g, state, 0.001, TrainConfig{});
    const double step = p.mlp.layers.back().bias[0] - before;
    const double err = std::abs(step - (-0.000999999990));
    return {err <= 1e-12, "t=1 step " + fmt(step, 12) + ", |error| " + fmt(err, 3)};
}

Outcome metric_oracles() {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng() % 60);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = normal(rng) * 3.0 + 1.0;
            b[i] = 0.5 * a[i] + normal(rng);
        }
        long double sa = 0, sb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sa += a[i];
            sb += b[i];
        }
        const long double ma = sa / n, mb = sb / n;
        long double sab = 0, saa = 0, sbb = 0, sse = 0, sae = 0;
        for (std::size_t i = 0; i < n; ++i) {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma) * (a[i] - ma);
            sbb += (b[i] - mb) * (b[i] - mb);
            sse += (a[i] - b[i]) * (a[i] - b[i]);
            sae += std::fabs(static_cast<long double>(a[i] - b[i]));
        }
        const auto m = metric_suite(a, b);
        worst = std::max({worst, std::abs(m.rmse - static_cast<double>(std::sqrt(sse / n))),
                          std::abs(m.mae - static_cast<double>(sae / n)),
                          std::abs(*m.pearson - static_cast<double>(sab / std::sqrt(saa * sbb))),
                          std::abs(*m.r2 - static_cast<double>(1.0L - sse / saa))});
    }
    const std::vector<double> x{1, 2, 3}, y{1, 3, 2};
    const double p = *pearson(x, y);
    const bool ok = worst <= 1e-12 && std::abs(p - 0.5) <= 1e-12;
    return {ok, "100 pairs max |error| " + fmt(worst, 3) + ", pearson([1,2,3],[1,3,2]) = " + fmt(p, 17)};
}

Outcome teacher_student() {
    const auto t0 = Clock::now();
    std::size_t wins = 0;
    std::string detail;
    for (auto seed : kSeeds) {
        SynthConfig sc;
        sc.n_p = 200;
        sc.n_r = 50;
        sc.n_c = 2;
        sc.cluster_count = 4;
        sc.noise_sigma = 0.05;
        sc.seed = 100 + seed;
        const auto teacher = generate_teacher(sc);
        const auto data = sample_screen(teacher, iota_ids(2), iota_ids(200), detail::hash_combine(sc.seed, 1));
        const auto target = data.vocab_c().id(teacher.context_symbol(0));
        const auto split = split_stratified(data, target, seed);

        TrainConfig cfg;
        cfg.model.d_embed = 32;
        cfg.model.hidden_dim = 256;
        cfg.model.hidden_layers = 2;
        cfg.model.dropout_rate = 0.0;
        cfg.model.seed = seed;
        cfg.learning_rate = 0.002;
        cfg.lr_decay = 0.99;
        cfg.batch_size = 1000;
        cfg.seed = seed;
        const auto trained = logged_train("teacher-student seed " + std::to_string(seed), data, split, cfg);

        const auto test = data.subset(split.test);
        const auto controls = compute_control_stats(data);
        const auto truth = values_of(test);
        const auto keys = keys_of(test);
        const auto lpm_pred = model_predictor(trained.params)(test);
        const NoPerturbBaseline baseline(data.subset(split.train));
        const auto np_pred = baseline.predict(test);
        const double lpm_r = pearson(truth, lpm_pred).value_or(0.0);
        const double lpm_delta = pearson_delta(truth, lpm_pred, controls, keys).value_or(0.0);
        const double np_r = pearson(truth, np_pred).value_or(0.0);
        const double np_delta = pearson_delta(truth, np_pred, controls, keys).value_or(0.0);
        const bool ok = lpm_r >= 0.9 && lpm_r > np_delta && lpm_delta > np_delta;
        wins += ok ? 1 : 0;
        detail += " [seed " + std::to_string(seed) + ": lpm " + fmt(lpm_r) + " (delta " + fmt(lpm_delta) + "), noperturb " + fmt(np_r) +
                  " (delta " + fmt(np_delta) + ")]";
    }
    const double secs = seconds_since(t0);
    return {wins == kSeeds.size() && secs < 600.0, std::to_string(wins) + "/5 seeds," + detail + ", " + fmt(secs, 3) + " s"};
}

Outcome embedding_average_law() {
    ModelConfig cfg;
    cfg.d_embed = 7;
    cfg.hidden_dim = 12;
    cfg.hidden_layers = 2;
    cfg.dropout_rate = 0.0;
    cfg.seed = 5;
    const VocabSizes sizes{21, 6, 3};
    auto params = init_parameters<float>(cfg, {sizes.perturbations + 1, sizes.readouts, sizes.contexts});
    const SymbolId scratch = static_cast<SymbolId>(sizes.perturbations);
    std::mt19937_64 rng(11);
    std::size_t exact = 0;
    for (int t = 0; t < 100; ++t) {
        auto q = fixtures::random_queries(sizes, 1, 3, rng).front();
        if (q.perturbation.size() == 1) {
            std::vector<SymbolId> parts(q.perturbation.parts().begin(), q.perturbation.parts().end());
            parts.push_back(static_cast<SymbolId>((parts[0] + 1) % sizes.perturbations));
            q.perturbation = PerturbationSpec(parts);
        }
        // Place the averaged row into the scratch slot and predict as a single.
        for (std::size_t k = 0; k < cfg.d_embed; ++k) {
            float s = 0.0f;
            for (auto p : q.perturbation.parts()) s += params.emb_p.row(p)[k];
            params.emb_p.row(scratch)[k] = s / static_cast<float>(q.perturbation.size());
        }
        const float combo = forward(params, q);
        const float single = forward(params, PerturbationSpec::single(scratch), q.readout, q.context);
        exact += std::memcmp(&combo, &single, sizeof(float)) == 0 ? 1 : 0;
    }
    return {exact == 100, std::to_string(exact) + "/100 combos bit-identical"};
}

EmbeddingExport perturbation_rows(const ModelParametersF& params, const ObservationSet& data) {
    const auto all = export_embeddings(params, data.vocab_p(), Dimension::perturbation);
    EmbeddingExport out;
    out.dimension = all.dimension;
    out.cols = all.cols;
    for (std::size_t i = 0; i < all.symbols.size(); ++i) {
        if (all.symbols[i] == data.control_symbol()) continue;
        out.symbols.push_back(all.symbols[i]);
        const auto row = all.row(i);
        out.values.insert(out.values.end(), row.begin(), row.end());
    }
    return out;
}

Outcome representation_retrieval() {
    double recall_sum = 0.0;
    std::size_t auc_wins = 0;
    std::string detail;
    for (auto seed : kSeeds) {
        SynthConfig sc;
        sc.n_p = 40;
        sc.n_r = 50;
        sc.n_c = 2;
        sc.cluster_count = 4;
        sc.cluster_jitter = 0.1;
        sc.center_scale = 3.0;
        sc.edge_effect = 0.0;
        sc.noise_sigma = 0.05;
        sc.seed = 200 + seed;
        const auto teacher = generate_teacher(sc);
        const auto data = sample_screen(teacher, iota_ids(2), iota_ids(40), detail::hash_combine(sc.seed, 1));
        const auto split = split_stratified(data, data.vocab_c().id(teacher.context_symbol(0)), seed);
        auto cfg = fixtures::tiny_train_config(seed);
        cfg.model.d_embed = 8;
        cfg.model.hidden_dim = 64;
        cfg.learning_rate = 0.005;
        cfg.batch_size = 64;
        cfg.max_epochs = 200;
        cfg.weight_decay = 1.0;
        const auto trained = logged_train("retrieval seed " + std::to_string(seed), data, split, cfg);

        const auto e = perturbation_rows(trained.params, data);
        AnnotationSet labels;
        std::map<std::string, std::set<std::string>> members;
        for (std::size_t p = 0; p < sc.n_p; ++p) {
            const auto label = "k" + std::to_string(teacher.cluster_of(p));
            labels[teacher.perturbation_symbol(p)] = label;
            members[label].insert(teacher.perturbation_symbol(p));
        }
        double recall = 0.0;
        for (const auto& [symbol, label] : labels) {
            auto positives = members[label];
            positives.erase(symbol);
            recall += recall_curve(e, symbol, positives, 9).back().second;
        }
        recall /= static_cast<double>(labels.size());
        recall_sum += recall;

        const std::vector<std::uint64_t> knn_seeds{0, 1, 2};
        const double auc_true = knn_annotation_score(e, labels, 9, knn_seeds);
        std::vector<std::string> pool;
        for (const auto& [s, l] : labels) pool.push_back(l);
        std::mt19937_64 rng(seed);
        std::shuffle(pool.begin(), pool.end(), rng);
        AnnotationSet permuted;
        std::size_t i = 0;
        for (const auto& [s, l] : labels) permuted[s] = pool[i++];
        const double auc_perm = knn_annotation_score(e, permuted, 9, knn_seeds);
        auc_wins += auc_perm < auc_true ? 1 : 0;
        detail += " [seed " + std::to_string(seed) + ": recall@9 " + fmt(recall) + ", auc " + fmt(auc_true) + " vs permuted " + fmt(auc_perm) + "]";
    }
    const double mean_recall = recall_sum / static_cast<double>(kSeeds.size());
    return {mean_recall >= 0.8 && auc_wins == kSeeds.size(),
            "mean recall@9 " + fmt(mean_recall) + ", true > permuted AUC on " + std::to_string(auc_wins) + "/5," + detail};
}

Outcome network_inference() {
    std::size_t wins = 0;
    std::string detail;
    for (auto seed : kSeeds) {
        SynthConfig sc;
        sc.n_p = 100;
        sc.n_r = 50;
        sc.n_c = 2;
        sc.noise_sigma = 0.05;
        sc.edge_effect = 5.0;
        sc.seed = 300 + seed;
        const auto teacher = generate_teacher(sc);
        const std::vector<std::size_t> c0{0}, c1{1};
        const auto data = merge(sample_screen(teacher, c0, iota_ids(50), detail::hash_combine(sc.seed, 1)),
                                sample_screen(teacher, c1, iota_ids(50, 50), detail::hash_combine(sc.seed, 2)));
        const auto target = data.vocab_c().id(teacher.context_symbol(0));
        const auto split = split_stratified(data, target, seed);
        auto cfg = fixtures::tiny_train_config(seed);
        cfg.model.d_embed = 32;
        cfg.model.hidden_dim = 128;
        cfg.learning_rate = 0.005;
        cfg.batch_size = 128;
        cfg.max_epochs = 200;
        const auto trained = logged_train("netinfer seed " + std::to_string(seed), data, split, cfg);

        const auto completed = impute_missing(trained.params, data, target);
        const auto controls = compute_control_stats(data);
        const auto universe = candidate_universe(completed, target);
        const std::size_t k = universe.size() / 10;
        const auto augmented = two_step_union(data, imputed_only(completed), controls, target, mean_difference_scorer(), k);
        const auto real_only = top_k_edges(mean_difference_scores(data, controls, target), 2 * k);
        const auto truth_all = edges_in_vocabulary(teacher, completed);
        const EdgeSet truth(truth_all.begin(), truth_all.end());
        const auto f_aug = false_omission_rate(augmented, truth, universe).false_omission_rate.value_or(1.0);
        const auto f_real = false_omission_rate(real_only, truth, universe).false_omission_rate.value_or(1.0);
        wins += f_aug < f_real ? 1 : 0;
        detail += " [seed " + std::to_string(seed) + ": k " + std::to_string(k) + ", FOR union " + fmt(f_aug) + " vs real " + fmt(f_real) + "]";
    }
    return {wins >= 4, std::to_string(wins) + "/5 seeds," + detail};
}

Outcome scaling_trend() {
    const auto t0 = Clock::now();
    ScaleStudyConfig cfg;
    cfg.synth.n_p = 260;
    cfg.synth.n_r = 20;
    cfg.synth.n_c = 4;
    cfg.synth.noise_sigma = 0.05;
    cfg.synth.seed = 0;
    cfg.seeds = kSeeds;
    cfg.train.learning_rate = 0.005;
    cfg.train.lr_decay = 0.99;
    cfg.train.batch_size = 128;
    cfg.train.max_epochs = 200;
    cfg.train.model.d_embed = 16;
    cfg.train.model.hidden_dim = 64;
    cfg.train.model.hidden_layers = 2;
    cfg.train.model.dropout_rate = 0.0;
    const auto rows = run_scale_study<float>(cfg);
    std::map<std::pair<std::string, std::uint64_t>, std::map<std::size_t, double>> by;
    for (const auto& r : rows) {
        by[{r.axis, r.seed}][r.level] = r.pearson;
        g_runs.push_back({"scale " + r.axis + " " + std::to_string(r.level) + " seed " + std::to_string(r.seed), r.report, cfg.train.patience});
    }
    std::map<std::string, std::size_t> wins;
    std::map<std::string, std::pair<double, double>> mean;
    for (const auto& [key, levels] : by) {
        const double lo = levels.begin()->second, hi = levels.rbegin()->second;
        wins[key.first] += hi > lo ? 1 : 0;
        mean[key.first].first += lo / static_cast<double>(kSeeds.size());
        mean[key.first].second += hi / static_cast<double>(kSeeds.size());
    }
    const bool ok = wins["perturbations"] >= 4 && wins["contexts"] >= 4;
    std::string detail;
    for (const char* axis : {"perturbations", "contexts"}) {
        detail += std::string(" [") + axis + ": top > bottom on " + std::to_string(wins[axis]) + "/5, mean " + fmt(mean[axis].first) + " -> " +
                  fmt(mean[axis].second) + "]";
    }
    return {ok, fmt(seconds_since(t0), 3) + " s," + detail};
}

Outcome early_stopping_contract() {
    std::size_t bad = 0;
    std::string worst;
    for (const auto& r : g_runs) {
        const bool ok = r.report.epochs_run >= r.report.best_epoch && r.report.epochs_run - r.report.best_epoch <= r.patience &&
                        r.patience == 10;
        if (!ok) {
            ++bad;
            worst = r.where;
        }
    }
    return {!g_runs.empty() && bad == 0,
            std::to_string(g_runs.size()) + " training runs, " + std::to_string(bad) + " violations" + (bad ? " (e.g. " + worst + ")" : "")};
}

// --- command reproducibility -------------------------------------------------

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LPM_CLI_PATH) + " --threads 1 " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
    fixtures::TempDir dir("accept");
    auto f = [&](const std::string& name) { return dir.file(name); };
    const std::vector<std::pair<std::string, std::vector<std::string>>> commands{
        {"synth --n-p 40 --n-r 15 --n-c 2 --noise 0.05 --seed 4 --layout disjoint --out {}screen.tsv --truth {}truth.json",
         {"screen.tsv", "truth.json"}},
        {"train --data @screen.tsv --target-context C0 --seed 2 --embed 8 --hidden 32 --batch 64 --lr 0.01 --max-epochs 25 "
         "--dropout 0.1 --out {}m",
         {"m.blob", "m.manifest.json", "m.report.csv"}},
        {"predict --checkpoint @m --queries @q.tsv --out {}pred.tsv", {"pred.tsv"}},
        {"evaluate --checkpoint @m --data @screen.tsv --target-context C0 --seed 2 --out {}metrics.csv", {"metrics.csv"}},
        {"evaluate --checkpoint @m --data @screen.tsv --target-context C0 --seed 2 --method noperturb --out {}np.csv", {"np.csv"}},
        {"embed --checkpoint @m --dimension P --out {}emb.tsv", {"emb.tsv"}},
        {"impute --checkpoint @m --data @screen.tsv --target-context C0 --out {}full.tsv --imputed-out {}imp.tsv", {"full.tsv", "imp.tsv"}},
        {"netinfer --data @screen.tsv --context C0 --k 30 --checkpoint @m --truth @truth.json --out {}edges.tsv",
         {"edges.tsv", "edges.tsv.eval.json"}},
        {"netinfer --data @screen.tsv --context C0 --k 30 --out {}scored.tsv", {"scored.tsv"}},
        {"train --data @screen.tsv --target-context C0 --grid --max-epochs 1 --out {}g", {"g.grid.csv", "g.blob"}},
        {"scale-study --n-p 90 --n-r 8 --n-c 2 --perturbation-ladder 10,30 --context-ladder 1,2 --seeds 0,1 "
         "--validation-perturbations 10 --test-perturbations 20 --context-axis-perturbations 10 --max-epochs 15 --out {}scale.csv",
         {"scale.csv"}},
    };
    auto expand = [](std::string s, const std::string& from, const std::string& to) {
        for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
        return s;
    };
    std::size_t identical = 0, total = 0;
    std::vector<std::string> mismatched;
    for (const char* run : {"a/", "b/"}) std::filesystem::create_directories(f(run));
    for (const auto& [tmpl, outputs] : commands) {
        std::map<std::string, std::string> first;
        for (const char* run : {"a/", "b/"}) {
            const auto prefix = f(run);
            std::ofstream(prefix + "q.tsv") << "context\tperturbation\treadout\nC0\tP00\tR00\nC1\tP05+P31\tR07\nC0\tCTRL\tR14\n";
            const auto args = expand(expand(tmpl, "{}", prefix), "@", prefix);
            if (run_cli(args) != 0) {
                mismatched.push_back("exit status of '" + tmpl.substr(0, tmpl.find(' ')) + "'");
                continue;
            }
            for (const auto& out : outputs) {
                const auto bytes = read_file_bytes(prefix + out);
                if (std::string(run) == "a/") {
                    first[out] = bytes;
                } else {
                    ++total;
                    if (first[out] == bytes) {
                        ++identical;
                    } else {
                        mismatched.push_back(out);
                    }
                }
            }
        }
    }

    // In-process checkpoint round trip.
    const auto ck = load_checkpoint(CheckpointPaths::from_prefix(f("a/m")));
    const auto again = CheckpointPaths::from_prefix(f("roundtrip"));
    save_checkpoint(ck.params, ck.vocab_p, ck.vocab_r, ck.vocab_c, ck.control_symbol, again);
    const auto back = load_checkpoint(again);
    const bool bit_exact = back.params == ck.params && read_file_bytes(again.blob) == read_file_bytes(f("a/m.blob")) &&
                           read_file_bytes(again.manifest) == read_file_bytes(f("a/m.manifest.json"));

    std::string detail = std::to_string(identical) + "/" + std::to_string(total) + " outputs byte-identical across repeated runs of " +
                         std::to_string(commands.size()) + " commands, checkpoint round trip " + (bit_exact ? "bit-exact" : "NOT bit-exact");
    for (const auto& m : mismatched) detail += ", mismatch: " + m;
    return {mismatched.empty() && identical == total && total > 0 && bit_exact, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient_exactness", gradient_exactness},
        {"optimizer_oracle", optimizer_oracle},
        {"metric_oracles", metric_oracles},
        {"teacher_student_recovery", teacher_student},
        {"embedding_average_law", embedding_average_law},
        {"representation_retrieval", representation_retrieval},
        {"network_inference_augmentation", network_inference},
        {"scaling_trend", scaling_trend},
        {"early_stopping_contract", early_stopping_contract},
        {"reproducibility", reproducibility},
    };
    std::size_t failed = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
