// lpm: command-line front end for training, querying and analysing the
// perturbation model. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpm/lpm.hpp"

namespace {

using nlohmann::json;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

json to_json(const lpm::ModelConfig& m) {
    return {{"d_embed", m.d_embed}, {"hidden_dim", m.hidden_dim}, {"hidden_layers", m.hidden_layers}, {"dropout_rate", m.dropout_rate},
            {"seed", m.seed}};
}

json to_json(const lpm::TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"lr_decay", c.lr_decay},   {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},       {"patience", c.patience},   {"weight_decay", c.weight_decay},
            {"beta1", c.beta1},                 {"beta2", c.beta2},         {"epsilon", c.epsilon},
            {"seed", c.seed},                   {"model", to_json(c.model)}};
}

std::string write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw lpm::Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw lpm::Error("failed writing '" + path + "'");
    return path;
}

/// Provenance record written next to a command's primary output.
class RunManifest {
public:
    RunManifest(std::string command, int argc, char** argv) : start_(std::chrono::steady_clock::now()) {
        doc_["command"] = std::move(command);
        doc_["argv"] = std::vector<std::string>(argv, argv + argc);
        doc_["inputs"] = json::object();
        doc_["outputs"] = json::array();
    }

    void input(const std::string& path) { doc_["inputs"][path] = lpm::sha256_file(path); }
    void output(const std::string& path) { doc_["outputs"].push_back(path); }
    json& config() { return doc_["config"]; }
    json& seeds() { return doc_["seeds"]; }

    void write(const std::string& primary_output) {
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        doc_["wall_clock_seconds"] = elapsed;
        write_text_file(primary_output + ".run.json", doc_.dump(2) + "\n");
    }

private:
    json doc_;
    std::chrono::steady_clock::time_point start_;
};

lpm::SymbolId context_id(const lpm::ObservationSet& data, const std::string& symbol) {
    if (auto id = data.vocab_c().find(symbol)) return *id;
    throw lpm::Error("context '" + symbol + "' does not occur in the data");
}

lpm::ObservationSet load_data_for(const lpm::Checkpoint& ck, const std::string& path) {
    const auto raw = lpm::ingest_long_format(path, ck.control_symbol);
    return lpm::remap_to_vocabularies(raw, ck.vocab_p, ck.vocab_r, ck.vocab_c);
}

struct SynthFlags {
    lpm::SynthConfig cfg;

    void add(CLI::App* app) {
        app->add_option("--n-p", cfg.n_p, "number of perturbations")->capture_default_str();
        app->add_option("--n-r", cfg.n_r, "number of readouts")->capture_default_str();
        app->add_option("--n-c", cfg.n_c, "number of contexts")->capture_default_str();
        app->add_option("--d-star", cfg.d_star, "teacher latent dimension")->capture_default_str();
        app->add_option("--clusters", cfg.cluster_count, "mechanism clusters")->capture_default_str();
        app->add_option("--jitter", cfg.cluster_jitter, "within-cluster jitter")->capture_default_str();
        app->add_option("--center-scale", cfg.center_scale, "std of cluster centers")->capture_default_str();
        app->add_option("--edge-effect", cfg.edge_effect, "additive effect of a causal edge")->capture_default_str();
        app->add_option("--edge-fraction", cfg.edge_fraction, "probability a readout has a parent")->capture_default_str();
        app->add_option("--noise", cfg.noise_sigma, "observation noise sigma")->capture_default_str();
        app->add_option("--hidden-width", cfg.hidden_width, "teacher hidden width")->capture_default_str();
    }
};

json to_json(const lpm::SynthConfig& c) {
    return {{"n_p", c.n_p},
            {"n_r", c.n_r},
            {"n_c", c.n_c},
            {"d_star", c.d_star},
            {"cluster_count", c.cluster_count},
            {"cluster_jitter", c.cluster_jitter},
            {"center_scale", c.center_scale},
            {"edge_effect", c.edge_effect},
            {"edge_fraction", c.edge_fraction},
            {"noise_sigma", c.noise_sigma},
            {"hidden_width", c.hidden_width},
            {"seed", c.seed}};
}

struct HyperFlags {
    std::string preset = "lincs";
    std::optional<double> lr, lr_decay, dropout, weight_decay;
    std::optional<std::size_t> layers, hidden, embed, batch;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::vector<CLI::Option*> grid_conflicts;

    void add(CLI::App* app) {
        grid_conflicts.push_back(app->add_option("--preset", preset, "consensus preset: lincs or replogle")
                                     ->check(CLI::IsMember({"lincs", "replogle"}))
                                     ->capture_default_str());
        grid_conflicts.push_back(app->add_option("--lr", lr, "learning rate"));
        grid_conflicts.push_back(app->add_option("--lr-decay", lr_decay, "per-epoch learning-rate decay"));
        grid_conflicts.push_back(app->add_option("--layers", layers, "hidden layers (1 or 2)"));
        grid_conflicts.push_back(app->add_option("--dropout", dropout, "dropout rate"));
        grid_conflicts.push_back(app->add_option("--hidden", hidden, "hidden width"));
        grid_conflicts.push_back(app->add_option("--embed", embed, "embedding width"));
        grid_conflicts.push_back(app->add_option("--batch", batch, "batch size"));
        app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
        app->add_option("--max-epochs", max_epochs, "epoch cap")->capture_default_str();
        app->add_option("--patience", patience, "early-stopping patience")->capture_default_str();
    }

    lpm::TrainConfig resolve(std::uint64_t seed, std::size_t threads) const {
        auto cfg = preset == "replogle" ? lpm::replogle_consensus() : lpm::lincs_consensus();
        if (lr) cfg.learning_rate = *lr;
        if (lr_decay) cfg.lr_decay = *lr_decay;
        if (layers) cfg.model.hidden_layers = *layers;
        if (dropout) cfg.model.dropout_rate = *dropout;
        if (hidden) cfg.model.hidden_dim = *hidden;
        if (embed) cfg.model.d_embed = *embed;
        if (batch) cfg.batch_size = *batch;
        if (weight_decay) cfg.weight_decay = *weight_decay;
        cfg.max_epochs = max_epochs;
        cfg.patience = patience;
        cfg.seed = seed;
        cfg.model.seed = seed;
        cfg.threads = threads;
        try {
            cfg.validate();
        } catch (const lpm::Error& e) {
            throw UsageError(e.what());
        }
        return cfg;
    }
};

void write_train_report(const lpm::TrainReport& report, const std::string& path) {
    std::ostringstream out;
    out << "epoch,train_loss,val_rmse,learning_rate\n";
    for (const auto& r : report.history) {
        out << r.epoch << ',' << lpm::detail::format_double(r.train_loss) << ',' << lpm::detail::format_double(r.val_rmse) << ','
            << lpm::detail::format_double(r.learning_rate) << '\n';
    }
    write_text_file(path, out.str());
}

std::vector<std::size_t> distribute(std::size_t c, std::size_t n_c, std::size_t n_p) {
    std::vector<std::size_t> ids;
    for (std::size_t p = c * n_p / n_c; p < (c + 1) * n_p / n_c; ++p) ids.push_back(p);
    return ids;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lpm: perturbation-response model over (perturbation, readout, context) triples"};
    app.require_subcommand(1);
    std::size_t threads = 1;
    app.add_option("--threads", threads, "threads for evaluation passes")->envname("LPM_THREADS")->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "sample a synthetic screen with known ground truth");
    SynthFlags synth_flags;
    synth_flags.add(synth);
    std::uint64_t synth_seed = 0;
    std::string synth_layout = "full", synth_out, synth_truth;
    synth->add_option("--seed", synth_seed, "teacher and noise seed")->capture_default_str();
    synth->add_option("--layout", synth_layout, "full: every perturbation in every context; disjoint: perturbations split across contexts")
        ->check(CLI::IsMember({"full", "disjoint"}))
        ->capture_default_str();
    synth->add_option("--out", synth_out, "long-format TSV")->required();
    synth->add_option("--truth", synth_truth, "truth JSON (clusters and edges)")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model (or grid-search) on a long-format file");
    std::string train_data, train_target, train_out, train_report;
    std::uint64_t train_seed = 0;
    bool train_grid = false, exclude_controls = false;
    HyperFlags hyper;
    train->add_option("--data", train_data, "long-format TSV")->required()->check(CLI::ExistingFile);
    train->add_option("--target-context", train_target, "context whose perturbations are split 70/15/15")->required();
    train->add_option("--seed", train_seed, "seed for split, initialisation and shuffling")->capture_default_str();
    hyper.add(train);
    auto* grid_flag = train->add_flag("--grid", train_grid, "sweep the full hyper-parameter grid");
    for (auto* opt : hyper.grid_conflicts) grid_flag->excludes(opt);
    train->add_flag("--exclude-controls", exclude_controls, "leave control observations out of training");
    train->add_option("--out", train_out, "checkpoint prefix")->required();
    train->add_option("--report", train_report, "per-epoch CSV (default <out>.report.csv)");

    // predict
    auto* predict = app.add_subcommand("predict", "predict readout values for symbolic queries");
    std::string pred_ckpt, pred_queries, pred_out;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint prefix")->required();
    predict->add_option("--queries", pred_queries, "TSV with header context<TAB>perturbation<TAB>readout")
        ->required()
        ->check(CLI::ExistingFile);
    predict->add_option("--out", pred_out, "predictions TSV")->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score a model or NoPerturb on the held-out fold");
    std::string eval_ckpt, eval_data, eval_target, eval_out, eval_method = "lpm";
    std::uint64_t eval_seed = 0;
    bool eval_exclude_controls = false;
    evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint prefix")->required();
    evaluate->add_option("--data", eval_data, "long-format TSV used for training")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--target-context", eval_target, "target context")->required();
    evaluate->add_option("--seed", eval_seed, "split seed used for training")->capture_default_str();
    evaluate->add_option("--method", eval_method, "lpm or noperturb")->check(CLI::IsMember({"lpm", "noperturb"}))->capture_default_str();
    evaluate->add_flag("--exclude-controls", eval_exclude_controls, "split as trained with --exclude-controls");
    evaluate->add_option("--out", eval_out, "metrics CSV")->required();

    // embed
    auto* embed = app.add_subcommand("embed", "export one embedding table as TSV");
    std::string embed_ckpt, embed_dim = "P", embed_out;
    embed->add_option("--checkpoint", embed_ckpt, "checkpoint prefix")->required();
    embed->add_option("--dimension", embed_dim, "P, R or C")->check(CLI::IsMember({"P", "R", "C"}))->capture_default_str();
    embed->add_option("--out", embed_out, "embedding TSV")->required();

    // impute
    auto* impute = app.add_subcommand("impute", "fill in perturbations unobserved in a context");
    std::string imp_ckpt, imp_data, imp_target, imp_out, imp_only_out;
    impute->add_option("--checkpoint", imp_ckpt, "checkpoint prefix")->required();
    impute->add_option("--data", imp_data, "long-format TSV")->required()->check(CLI::ExistingFile);
    impute->add_option("--target-context", imp_target, "context to complete")->required();
    impute->add_option("--out", imp_out, "observed plus imputed, long format")->required();
    impute->add_option("--imputed-out", imp_only_out, "imputed rows only, long format");

    // netinfer
    auto* netinfer = app.add_subcommand("netinfer", "mean-difference edge scoring, optionally augmented by imputation");
    std::string ni_data, ni_context, ni_ckpt, ni_truth, ni_out, ni_report;
    std::size_t ni_k = 2500;
    netinfer->add_option("--data", ni_data, "long-format TSV")->required()->check(CLI::ExistingFile);
    netinfer->add_option("--context", ni_context, "context to infer edges in")->required();
    netinfer->add_option("--k", ni_k, "edges kept per step")->capture_default_str();
    netinfer->add_option("--checkpoint", ni_ckpt, "model for the imputation step (two-step union)");
    netinfer->add_option("--truth", ni_truth, "truth JSON for false omission rate")->check(CLI::ExistingFile);
    netinfer->add_option("--out", ni_out, "edge TSV")->required();
    netinfer->add_option("--report", ni_report, "evaluation JSON (default <out>.eval.json when --truth is given)");

    // scale-study
    auto* scale = app.add_subcommand("scale-study", "held-out Pearson versus training perturbations and contexts");
    SynthFlags scale_synth;
    scale_synth.cfg.n_p = 260;
    scale_synth.cfg.n_r = 20;
    scale_synth.cfg.n_c = 4;
    scale_synth.cfg.noise_sigma = 0.05;
    scale_synth.add(scale);
    lpm::ScaleStudyConfig scale_cfg;
    std::uint64_t scale_seed = 0;
    std::string scale_out;
    std::size_t scale_embed = 16, scale_hidden = 64, scale_batch = 128, scale_layers = 2;
    double scale_lr = 0.005, scale_decay = 0.99;
    std::size_t scale_epochs = 200;
    scale->add_option("--perturbation-ladder", scale_cfg.perturbation_ladder, "target-context training perturbations per level")
        ->delimiter(',')
        ->capture_default_str();
    scale->add_option("--context-ladder", scale_cfg.context_ladder, "training contexts per level")->delimiter(',')->capture_default_str();
    scale->add_option("--seeds", scale_cfg.seeds, "replicate seeds")->delimiter(',')->capture_default_str();
    scale->add_option("--synth-seed", scale_seed, "base teacher seed")->capture_default_str();
    scale->add_option("--validation-perturbations", scale_cfg.validation_perturbations)->capture_default_str();
    scale->add_option("--test-perturbations", scale_cfg.test_perturbations)->capture_default_str();
    scale->add_option("--context-axis-perturbations", scale_cfg.context_axis_perturbations)->capture_default_str();
    scale->add_option("--perturbation-axis-contexts", scale_cfg.perturbation_axis_contexts,
                      "contexts trained on along the perturbation axis, target included")
        ->capture_default_str();
    scale->add_option("--embed", scale_embed)->capture_default_str();
    scale->add_option("--hidden", scale_hidden)->capture_default_str();
    scale->add_option("--layers", scale_layers)->capture_default_str();
    scale->add_option("--batch", scale_batch)->capture_default_str();
    scale->add_option("--lr", scale_lr)->capture_default_str();
    scale->add_option("--lr-decay", scale_decay)->capture_default_str();
    scale->add_option("--max-epochs", scale_epochs)->capture_default_str();
    scale->add_option("--out", scale_out, "trend CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            RunManifest manifest("synth", argc, argv);
            auto cfg = synth_flags.cfg;
            cfg.seed = synth_seed;
            const auto teacher = lpm::generate_teacher(cfg);
            const auto noise_seed = lpm::detail::hash_combine(synth_seed, 0x5c4ee7);
            lpm::ObservationSet data;
            if (synth_layout == "full") {
                data = lpm::sample_screen(teacher, lpm::iota_ids(cfg.n_c), lpm::iota_ids(cfg.n_p), noise_seed);
            } else {
                if (cfg.n_c > cfg.n_p) throw UsageError("disjoint layout needs n_p >= n_c");
                for (std::size_t c = 0; c < cfg.n_c; ++c) {
                    const std::vector<std::size_t> ctx{c};
                    const auto perts = distribute(c, cfg.n_c, cfg.n_p);
                    data = lpm::merge(data, lpm::sample_screen(teacher, ctx, perts, lpm::detail::hash_combine(noise_seed, c)));
                }
            }
            lpm::write_long_format(data, synth_out);
            write_text_file(synth_truth, lpm::truth_json(teacher).dump(2) + "\n");
            manifest.config() = to_json(cfg);
            manifest.config()["layout"] = synth_layout;
            manifest.seeds() = {{"seed", synth_seed}};
            manifest.output(synth_out);
            manifest.output(synth_truth);
            manifest.write(synth_out);
            return 0;
        }

        if (*train) {
            RunManifest manifest(train_grid ? "train --grid" : "train", argc, argv);
            const auto cfg = hyper.resolve(train_seed, threads);
            const auto data = lpm::ingest_long_format(train_data);
            const auto target = context_id(data, train_target);
            const lpm::SplitOptions options{!exclude_controls};
            const auto split = lpm::split_stratified(data, target, train_seed, {}, options);
            manifest.input(train_data);
            manifest.seeds() = {{"seed", train_seed}};
            lpm::TrainConfig chosen = cfg;
            if (train_grid) {
                const auto grid = lpm::expand_grid(cfg);
                auto result = lpm::grid_search<float>(data, split, grid, [&](std::size_t i, const lpm::TrainReport& r) {
                    std::cerr << "grid " << (i + 1) << "/" << grid.size() << " best_val_rmse=" << r.best_val_rmse << '\n';
                });
                chosen = result.best;
                std::ostringstream out;
                out << "index,learning_rate,lr_decay,layers,dropout,hidden,embed,batch,best_val_rmse,best_epoch,epochs_run\n";
                for (std::size_t i = 0; i < grid.size(); ++i) {
                    const auto& g = grid[i];
                    const auto& r = result.reports[i];
                    out << i << ',' << lpm::detail::format_double(g.learning_rate) << ',' << lpm::detail::format_double(g.lr_decay) << ','
                        << g.model.hidden_layers << ',' << lpm::detail::format_double(g.model.dropout_rate) << ',' << g.model.hidden_dim
                        << ',' << g.model.d_embed << ',' << g.batch_size << ',' << lpm::detail::format_double(r.best_val_rmse) << ','
                        << r.best_epoch << ',' << r.epochs_run << '\n';
                }
                const auto grid_path = train_out + ".grid.csv";
                write_text_file(grid_path, out.str());
                manifest.output(grid_path);
            }
            auto trained = lpm::train<float>(data, split, chosen);
            const auto paths = lpm::CheckpointPaths::from_prefix(train_out);
            lpm::save_checkpoint(trained.params, data, paths);
            const auto report_path = train_report.empty() ? train_out + ".report.csv" : train_report;
            write_train_report(trained.report, report_path);
            std::cerr << "epochs_run=" << trained.report.epochs_run << " best_epoch=" << trained.report.best_epoch
                      << " best_val_rmse=" << trained.report.best_val_rmse << '\n';
            manifest.config() = to_json(chosen);
            manifest.config()["target_context"] = train_target;
            manifest.config()["exclude_controls"] = exclude_controls;
            manifest.output(paths.manifest);
            manifest.output(paths.blob);
            manifest.output(report_path);
            manifest.write(train_out);
            return 0;
        }

        if (*predict) {
            RunManifest manifest("predict", argc, argv);
            const auto paths = lpm::CheckpointPaths::from_prefix(pred_ckpt);
            const auto ck = lpm::load_checkpoint(paths);
            lpm::ObservationSet vocab(ck.vocab_p, ck.vocab_r, ck.vocab_c, ck.control_symbol);
            std::ifstream in(pred_queries);
            std::string line;
            std::getline(in, line);
            if (lpm::detail::chomp(line) != "context\tperturbation\treadout") {
                throw lpm::ParseError(1, "query header must be 'context<TAB>perturbation<TAB>readout'");
            }
            std::vector<lpm::Query> queries;
            std::vector<std::string> rows;
            std::set<std::string> unknown;
            std::size_t line_no = 1;
            while (std::getline(in, line)) {
                ++line_no;
                const auto text = lpm::detail::chomp(line);
                if (text.empty()) continue;
                const auto f = lpm::detail::split_fields(text, '\t');
                if (f.size() != 3) throw lpm::ParseError(line_no, "expected 3 tab-separated fields");
                const auto c = ck.vocab_c.find(f[0]);
                const auto r = ck.vocab_r.find(f[2]);
                if (!c) unknown.insert("context '" + std::string(f[0]) + "'");
                if (!r) unknown.insert("readout '" + std::string(f[2]) + "'");
                for (const auto part : lpm::detail::split_fields(f[1], '+')) {
                    if (!ck.vocab_p.find(part)) unknown.insert("perturbation '" + std::string(part) + "'");
                }
                if (!unknown.empty()) continue;
                auto spec = vocab.lookup_perturbation(f[1]);
                queries.push_back(lpm::Query{*spec, *r, *c});
                rows.emplace_back(text);
            }
            if (!unknown.empty()) {
                std::string msg = "out-of-vocabulary symbols:";
                for (const auto& u : unknown) msg += " " + u;
                throw lpm::Error(msg);
            }
            const auto pred = lpm::forward_batch(ck.params, std::span<const lpm::Query>(queries), false, 0, threads);
            std::ostringstream out;
            out << "context\tperturbation\treadout\tprediction\n";
            for (std::size_t i = 0; i < rows.size(); ++i) out << rows[i] << '\t' << lpm::detail::format_double(pred[i]) << '\n';
            write_text_file(pred_out, out.str());
            manifest.input(paths.manifest);
            manifest.input(paths.blob);
            manifest.input(pred_queries);
            manifest.output(pred_out);
            manifest.write(pred_out);
            return 0;
        }

        if (*evaluate) {
            RunManifest manifest("evaluate", argc, argv);
            const auto paths = lpm::CheckpointPaths::from_prefix(eval_ckpt);
            const auto ck = lpm::load_checkpoint(paths);
            const auto data = load_data_for(ck, eval_data);
            const auto target = context_id(data, eval_target);
            const auto split = lpm::split_stratified(data, target, eval_seed, {}, lpm::SplitOptions{!eval_exclude_controls});
            const auto test = data.subset(split.test);
            const auto controls = lpm::compute_control_stats(data);
            const auto subsets = lpm::standard_subsets();
            const lpm::NoPerturbBaseline baseline(data.subset(split.train));
            const auto predictor =
                eval_method == "lpm" ? lpm::model_predictor(ck.params, threads) : lpm::no_perturb_predictor(baseline);
            const auto reports = lpm::evaluate_model(predictor, test, controls, subsets);
            std::ostringstream out;
            lpm::write_metrics_csv(reports, out);
            write_text_file(eval_out, out.str());
            const auto truth = lpm::values_of(test);
            const auto keys = lpm::keys_of(test);
            std::cerr << "pearson_delta=" << lpm::format_optional(lpm::pearson_delta(truth, predictor(test), controls, keys)) << '\n';
            manifest.input(paths.manifest);
            manifest.input(paths.blob);
            manifest.input(eval_data);
            manifest.seeds() = {{"split_seed", eval_seed}};
            manifest.config() = {{"method", eval_method}, {"target_context", eval_target}};
            manifest.output(eval_out);
            manifest.write(eval_out);
            return 0;
        }

        if (*embed) {
            RunManifest manifest("embed", argc, argv);
            const auto paths = lpm::CheckpointPaths::from_prefix(embed_ckpt);
            const auto ck = lpm::load_checkpoint(paths);
            const auto dim = embed_dim == "P" ? lpm::Dimension::perturbation
                             : embed_dim == "R" ? lpm::Dimension::readout
                                                : lpm::Dimension::context;
            const auto& vocab = dim == lpm::Dimension::perturbation ? ck.vocab_p : dim == lpm::Dimension::readout ? ck.vocab_r : ck.vocab_c;
            std::ostringstream out;
            lpm::write_embeddings_tsv(lpm::export_embeddings(ck.params, vocab, dim), out);
            write_text_file(embed_out, out.str());
            manifest.input(paths.manifest);
            manifest.input(paths.blob);
            manifest.config() = {{"dimension", embed_dim}};
            manifest.output(embed_out);
            manifest.write(embed_out);
            return 0;
        }

        if (*impute) {
            RunManifest manifest("impute", argc, argv);
            const auto paths = lpm::CheckpointPaths::from_prefix(imp_ckpt);
            const auto ck = lpm::load_checkpoint(paths);
            const auto data = load_data_for(ck, imp_data);
            const auto completed = lpm::impute_missing(ck.params, data, context_id(data, imp_target), threads);
            lpm::write_long_format(completed, imp_out);
            manifest.output(imp_out);
            if (!imp_only_out.empty()) {
                lpm::write_long_format(lpm::imputed_only(completed), imp_only_out);
                manifest.output(imp_only_out);
            }
            manifest.input(paths.manifest);
            manifest.input(paths.blob);
            manifest.input(imp_data);
            manifest.config() = {{"target_context", imp_target}};
            manifest.write(imp_out);
            return 0;
        }

        if (*netinfer) {
            if (ni_k == 0) throw UsageError("--k must be at least 1");
            RunManifest manifest("netinfer", argc, argv);
            manifest.input(ni_data);
            lpm::ObservationSet data;
            std::optional<lpm::Checkpoint> ck;
            if (!ni_ckpt.empty()) {
                const auto paths = lpm::CheckpointPaths::from_prefix(ni_ckpt);
                ck = lpm::load_checkpoint(paths);
                data = load_data_for(*ck, ni_data);
                manifest.input(paths.manifest);
                manifest.input(paths.blob);
            } else {
                data = lpm::ingest_long_format(ni_data);
            }
            const auto context = context_id(data, ni_context);
            const auto controls = lpm::compute_control_stats(data);
            std::ostringstream out;
            lpm::EdgeSet predicted;
            lpm::EdgeSet universe;
            if (ck) {
                const auto completed = lpm::impute_missing(ck->params, data, context, threads);
                const auto imputed = lpm::imputed_only(completed);
                predicted = lpm::two_step_union(data, imputed, controls, context, lpm::mean_difference_scorer(), ni_k);
                universe = lpm::candidate_universe(completed, context);
                lpm::write_edges_tsv(data, predicted, out);
            } else {
                const auto table = lpm::mean_difference_scores(data, controls, context);
                predicted = lpm::top_k_edges(table, ni_k);
                universe = lpm::candidate_universe(data, context);
                lpm::write_scored_edges_tsv(data, table, ni_k, out);
            }
            write_text_file(ni_out, out.str());
            manifest.output(ni_out);
            if (!ni_truth.empty()) {
                manifest.input(ni_truth);
                const auto truth_doc = json::parse(lpm::read_file_bytes(ni_truth));
                lpm::EdgeSet truth;
                for (const auto& [src, dst] : lpm::read_truth_edges(truth_doc)) {
                    const auto p = data.vocab_p().find(src);
                    const auto r = data.vocab_r().find(dst);
                    if (p && r && universe.contains({*p, *r})) truth.insert({*p, *r});
                }
                const auto report = lpm::false_omission_rate(predicted, truth, universe);
                json eval = {{"false_omission_rate", report.false_omission_rate ? json(*report.false_omission_rate) : json(nullptr)},
                             {"edge_count", report.edge_count},
                             {"truth_size", report.truth_size},
                             {"universe_size", universe.size()}};
                const auto report_path = ni_report.empty() ? ni_out + ".eval.json" : ni_report;
                write_text_file(report_path, eval.dump(2) + "\n");
                manifest.output(report_path);
                std::cerr << "false_omission_rate=" << lpm::format_optional(report.false_omission_rate) << '\n';
            }
            manifest.config() = {{"context", ni_context}, {"k", ni_k}, {"two_step", ck.has_value()}};
            manifest.write(ni_out);
            return 0;
        }

        if (*scale) {
            RunManifest manifest("scale-study", argc, argv);
            scale_cfg.synth = scale_synth.cfg;
            scale_cfg.synth.seed = scale_seed;
            scale_cfg.train.learning_rate = scale_lr;
            scale_cfg.train.lr_decay = scale_decay;
            scale_cfg.train.batch_size = scale_batch;
            scale_cfg.train.max_epochs = scale_epochs;
            scale_cfg.train.threads = threads;
            scale_cfg.train.model.d_embed = scale_embed;
            scale_cfg.train.model.hidden_dim = scale_hidden;
            scale_cfg.train.model.hidden_layers = scale_layers;
            scale_cfg.train.model.dropout_rate = 0.0;
            try {
                scale_cfg.validate();
            } catch (const lpm::Error& e) {
                throw UsageError(e.what());
            }
            const auto rows = lpm::run_scale_study<float>(scale_cfg, [](const lpm::ScaleRow& r) {
                std::cerr << r.axis << " level=" << r.level << " seed=" << r.seed << " pearson=" << r.pearson << '\n';
            });
            std::ostringstream out;
            lpm::write_scale_csv(rows, out);
            write_text_file(scale_out, out.str());
            manifest.config() = {{"synth", to_json(scale_cfg.synth)},
                                 {"train", to_json(scale_cfg.train)},
                                 {"perturbation_ladder", scale_cfg.perturbation_ladder},
                                 {"context_ladder", scale_cfg.context_ladder},
                                 {"perturbation_axis_contexts", scale_cfg.perturbation_axis_contexts}};
            manifest.seeds() = scale_cfg.seeds;
            manifest.output(scale_out);
            manifest.write(scale_out);
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
