#pragma once

// Synthetic teacher: latent perturbation/readout/context embeddings, a fixed
// random response network, mechanism clusters and planted causal edges.
// Screens sampled from it carry known ground truth for every downstream check.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lpm/common.hpp"
#include "lpm/data.hpp"

namespace lpm {

struct SynthConfig {
    std::size_t n_p = 40;
    std::size_t n_r = 30;
    std::size_t n_c = 2;
    std::size_t d_star = 8;
    std::size_t cluster_count = 4;
    double cluster_jitter = 0.3;
    double center_scale = 1.0;   // std of cluster centers
    double edge_effect = 1.0;
    double edge_fraction = 1.0;  // probability that a readout gets a parent
    double noise_sigma = 0.0;
    std::size_t hidden_width = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_p == 0 || n_r == 0 || n_c == 0) throw Error("synth: n_p, n_r, n_c must be positive");
        if (d_star == 0) throw Error("synth: d_star must be at least 1");
        if (cluster_count == 0 || cluster_count > n_p) throw Error("synth: cluster_count must lie in [1, n_p]");
        if (cluster_jitter < 0.0 || noise_sigma < 0.0 || center_scale < 0.0) throw Error("synth: scales must be non-negative");
        if (edge_fraction < 0.0 || edge_fraction > 1.0) throw Error("synth: edge_fraction must lie in [0, 1]");
        if (hidden_width == 0) throw Error("synth: hidden_width must be positive");
    }
};

using Edge = std::pair<std::size_t, std::size_t>;  // (perturbation, readout)

class TeacherModel {
public:
    const SynthConfig& config() const noexcept { return cfg_; }

    std::span<const double> perturbation_embedding(std::size_t p) const { return {emb_p_.data() + p * cfg_.d_star, cfg_.d_star}; }
    std::span<const double> readout_embedding(std::size_t r) const { return {emb_r_.data() + r * cfg_.d_star, cfg_.d_star}; }
    std::span<const double> context_embedding(std::size_t c) const { return {emb_c_.data() + c * cfg_.d_star, cfg_.d_star}; }

    std::size_t cluster_of(std::size_t p) const { return cluster_of_.at(p); }
    const std::set<Edge>& edges() const noexcept { return edges_; }
    bool has_edge(std::size_t p, std::size_t r) const { return edges_.contains({p, r}); }

    /// Smooth part of the response for an arbitrary perturbation latent.
    double smooth_response(std::span<const double> z_p, std::size_t r, std::size_t c) const {
        const auto d = cfg_.d_star;
        const auto h = cfg_.hidden_width;
        std::vector<double> x(3 * d);
        std::copy(z_p.begin(), z_p.end(), x.begin());
        const auto zr = readout_embedding(r);
        const auto zc = context_embedding(c);
        std::copy(zr.begin(), zr.end(), x.begin() + static_cast<std::ptrdiff_t>(d));
        std::copy(zc.begin(), zc.end(), x.begin() + static_cast<std::ptrdiff_t>(2 * d));
        std::vector<double> h1(h), h2(h);
        for (std::size_t j = 0; j < h; ++j) {
            double s = b1_[j];
            for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w1_[i * h + j];
            h1[j] = std::tanh(s);
        }
        for (std::size_t j = 0; j < h; ++j) {
            double s = b2_[j];
            for (std::size_t i = 0; i < h; ++i) s += h1[i] * w2_[i * h + j];
            h2[j] = std::tanh(s);
        }
        double y = b3_;
        for (std::size_t j = 0; j < h; ++j) y += h2[j] * w3_[j];
        return y;
    }

    /// Noise-free response; `p` empty means the control (zero latent).
    double response(std::optional<std::size_t> p, std::size_t r, std::size_t c) const {
        if (!p) return smooth_response(std::vector<double>(cfg_.d_star, 0.0), r, c);
        double y = smooth_response(perturbation_embedding(*p), r, c);
        if (has_edge(*p, r)) y += cfg_.edge_effect;
        return y;
    }

    std::string perturbation_symbol(std::size_t p) const { return symbol('P', p, cfg_.n_p); }
    std::string readout_symbol(std::size_t r) const { return symbol('R', r, cfg_.n_r); }
    std::string context_symbol(std::size_t c) const { return symbol('C', c, cfg_.n_c); }

    friend TeacherModel generate_teacher(const SynthConfig& cfg);

private:
    static std::string symbol(char prefix, std::size_t i, std::size_t n) {
        const auto width = std::to_string(n > 0 ? n - 1 : 0).size();
        std::ostringstream s;
        s << prefix << std::setw(static_cast<int>(width)) << std::setfill('0') << i;
        return s.str();
    }

    SynthConfig cfg_;
    std::vector<double> emb_p_, emb_r_, emb_c_;
    std::vector<double> w1_, b1_, w2_, b2_, w3_;
    double b3_ = 0.0;
    std::vector<std::size_t> cluster_of_;
    std::set<Edge> edges_;
};

inline TeacherModel generate_teacher(const SynthConfig& cfg) {
    cfg.validate();
    TeacherModel t;
    t.cfg_ = cfg;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = cfg.d_star;
    const auto h = cfg.hidden_width;

    std::vector<double> centers(cfg.cluster_count * d);
    for (auto& v : centers) v = cfg.center_scale * normal(rng);
    t.cluster_of_.resize(cfg.n_p);
    t.emb_p_.resize(cfg.n_p * d);
    for (std::size_t p = 0; p < cfg.n_p; ++p) {
        const auto k = p % cfg.cluster_count;
        t.cluster_of_[p] = k;
        for (std::size_t i = 0; i < d; ++i) t.emb_p_[p * d + i] = centers[k * d + i] + cfg.cluster_jitter * normal(rng);
    }
    t.emb_r_.resize(cfg.n_r * d);
    for (auto& v : t.emb_r_) v = normal(rng);
    t.emb_c_.resize(cfg.n_c * d);
    for (auto& v : t.emb_c_) v = normal(rng);

    const double s1 = 1.0 / std::sqrt(static_cast<double>(3 * d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
    t.w1_.resize(3 * d * h);
    for (auto& v : t.w1_) v = s1 * normal(rng);
    t.b1_.resize(h);
    for (auto& v : t.b1_) v = 0.5 * normal(rng);
    t.w2_.resize(h * h);
    for (auto& v : t.w2_) v = 1.5 * s2 * normal(rng);
    t.b2_.resize(h);
    for (auto& v : t.b2_) v = 0.5 * normal(rng);
    t.w3_.resize(h);
    for (auto& v : t.w3_) v = 2.0 * s2 * normal(rng);
    t.b3_ = 0.0;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> parent(0, cfg.n_p - 1);
    for (std::size_t r = 0; r < cfg.n_r; ++r) {
        const double u = unit(rng);
        const auto p = parent(rng);
        if (u < cfg.edge_fraction) t.edges_.insert({p, r});
    }
    return t;
}

/// One observation per (context, perturbation, readout) in the slab plus one
/// control observation per (context, readout). Noise is Gaussian.
inline ObservationSet sample_screen(const TeacherModel& teacher, std::span<const std::size_t> contexts,
                                    std::span<const std::size_t> perturbations, std::uint64_t seed,
                                    std::string control_symbol = std::string(default_control_symbol)) {
    if (contexts.empty() || perturbations.empty()) throw Error("sample_screen: empty context or perturbation subset");
    const auto& cfg = teacher.config();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto noise = [&] { return cfg.noise_sigma > 0.0 ? cfg.noise_sigma * normal(rng) : 0.0; };
    ObservationSet data(control_symbol);
    for (auto c : contexts) {
        if (c >= cfg.n_c) throw Error("sample_screen: context id out of range");
        const auto ctx = teacher.context_symbol(c);
        for (std::size_t r = 0; r < cfg.n_r; ++r) {
            data.add(ctx, control_symbol, teacher.readout_symbol(r), teacher.response(std::nullopt, r, c) + noise());
        }
        for (auto p : perturbations) {
            if (p >= cfg.n_p) throw Error("sample_screen: perturbation id out of range");
            const auto pert = teacher.perturbation_symbol(p);
            for (std::size_t r = 0; r < cfg.n_r; ++r) {
                data.add(ctx, pert, teacher.readout_symbol(r), teacher.response(p, r, c) + noise());
            }
        }
    }
    return data;
}

inline std::vector<std::size_t> iota_ids(std::size_t n, std::size_t first = 0) {
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = first + i;
    return ids;
}

inline std::set<Edge> ground_truth_edges(const TeacherModel& teacher) { return teacher.edges(); }

/// Teacher edges expressed in a data set's perturbation/readout ids; edges
/// whose symbols the set does not know are dropped.
inline std::set<std::pair<SymbolId, SymbolId>> edges_in_vocabulary(const TeacherModel& teacher, const ObservationSet& data) {
    std::set<std::pair<SymbolId, SymbolId>> out;
    for (const auto& [p, r] : teacher.edges()) {
        const auto pid = data.vocab_p().find(teacher.perturbation_symbol(p));
        const auto rid = data.vocab_r().find(teacher.readout_symbol(r));
        if (pid && rid) out.insert({*pid, *rid});
    }
    return out;
}

inline nlohmann::json truth_json(const TeacherModel& teacher) {
    const auto& cfg = teacher.config();
    nlohmann::json j;
    j["config"] = {{"n_p", cfg.n_p},
                   {"n_r", cfg.n_r},
                   {"n_c", cfg.n_c},
                   {"d_star", cfg.d_star},
                   {"cluster_count", cfg.cluster_count},
                   {"cluster_jitter", cfg.cluster_jitter},
                   {"center_scale", cfg.center_scale},
                   {"edge_effect", cfg.edge_effect},
                   {"edge_fraction", cfg.edge_fraction},
                   {"noise_sigma", cfg.noise_sigma},
                   {"hidden_width", cfg.hidden_width},
                   {"seed", cfg.seed}};
    nlohmann::json clusters = nlohmann::json::object();
    for (std::size_t p = 0; p < cfg.n_p; ++p) clusters[teacher.perturbation_symbol(p)] = teacher.cluster_of(p);
    j["clusters"] = clusters;
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [p, r] : teacher.edges()) edges.push_back({teacher.perturbation_symbol(p), teacher.readout_symbol(r)});
    j["edges"] = edges;
    return j;
}

/// Edges listed in a truth document as (perturbation symbol, readout symbol).
inline std::vector<std::pair<std::string, std::string>> read_truth_edges(const nlohmann::json& truth) {
    std::vector<std::pair<std::string, std::string>> edges;
    if (!truth.contains("edges") || !truth["edges"].is_array()) throw Error("truth document has no 'edges' array");
    for (const auto& e : truth["edges"]) {
        if (!e.is_array() || e.size() != 2) throw Error("truth edge must be a [source, target] pair");
        edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return edges;
}

}  // namespace lpm
