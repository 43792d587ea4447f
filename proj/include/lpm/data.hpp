#pragma once

// Symbol vocabularies, observation storage, text ingestion and split protocols.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lpm/common.hpp"

namespace lpm {

enum class Dimension { perturbation, readout, context };

inline std::string_view to_string(Dimension d) {
    switch (d) {
        case Dimension::perturbation: return "perturbation";
        case Dimension::readout: return "readout";
        case Dimension::context: return "context";
    }
    return "?";
}

/// Bidirectional symbol <-> dense id mapping for one dimension. Ids are
/// assigned in first-appearance order.
class Vocabulary {
public:
    explicit Vocabulary(Dimension dimension = Dimension::perturbation) : dimension_(dimension) {}

    static Vocabulary from_symbols(Dimension dimension, const std::vector<std::string>& symbols) {
        Vocabulary v(dimension);
        for (const auto& s : symbols) {
            if (v.find(s)) throw Error("duplicate " + std::string(to_string(dimension)) + " symbol '" + s + "'");
            v.intern(s);
        }
        return v;
    }

    SymbolId intern(std::string_view symbol) {
        if (auto it = index_.find(symbol); it != index_.end()) return it->second;
        const auto id = static_cast<SymbolId>(symbols_.size());
        symbols_.emplace_back(symbol);
        index_.emplace(symbols_.back(), id);
        return id;
    }

    std::optional<SymbolId> find(std::string_view symbol) const {
        if (auto it = index_.find(symbol); it != index_.end()) return it->second;
        return std::nullopt;
    }

    SymbolId id(std::string_view symbol) const {
        if (auto found = find(symbol)) return *found;
        throw Error("unknown " + std::string(to_string(dimension_)) + " symbol '" + std::string(symbol) + "'");
    }

    const std::string& symbol(SymbolId id) const {
        if (id >= symbols_.size()) {
            throw Error(std::string(to_string(dimension_)) + " id " + std::to_string(id) + " out of range");
        }
        return symbols_[id];
    }

    std::size_t size() const noexcept { return symbols_.size(); }
    bool contains(SymbolId id) const noexcept { return id < symbols_.size(); }
    const std::vector<std::string>& symbols() const noexcept { return symbols_; }
    Dimension dimension() const noexcept { return dimension_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
        return a.dimension_ == b.dimension_ && a.symbols_ == b.symbols_;
    }

private:
    Dimension dimension_;
    std::vector<std::string> symbols_;
    std::map<std::string, SymbolId, std::less<>> index_;
};

/// A single or multi-perturbation: a non-empty sorted set of perturbation ids.
class PerturbationSpec {
public:
    PerturbationSpec() = default;

    explicit PerturbationSpec(std::vector<SymbolId> parts) : parts_(std::move(parts)) {
        if (parts_.empty()) throw Error("perturbation spec must have at least one part");
        std::sort(parts_.begin(), parts_.end());
        if (std::adjacent_find(parts_.begin(), parts_.end()) != parts_.end()) {
            throw Error("perturbation spec has duplicate parts");
        }
    }

    static PerturbationSpec single(SymbolId id) { return PerturbationSpec(std::vector<SymbolId>{id}); }

    std::span<const SymbolId> parts() const noexcept { return parts_; }
    std::size_t size() const noexcept { return parts_.size(); }
    bool is_single() const noexcept { return parts_.size() == 1; }
    SymbolId front() const { return parts_.front(); }

    auto operator<=>(const PerturbationSpec&) const = default;
    bool operator==(const PerturbationSpec&) const = default;

private:
    std::vector<SymbolId> parts_;
};

struct Observation {
    PerturbationSpec perturbation;
    SymbolId readout = 0;
    SymbolId context = 0;
    double value = 0.0;
    bool imputed = false;

    bool operator==(const Observation&) const = default;
};

inline constexpr std::string_view default_control_symbol = "CTRL";

/// Columnar-ish store of (perturbation, readout, context, value) records with
/// their three vocabularies. Replicates of a key are allowed.
class ObservationSet {
public:
    explicit ObservationSet(std::string control_symbol = std::string(default_control_symbol))
        : control_symbol_(std::move(control_symbol)) {}

    ObservationSet(Vocabulary vocab_p, Vocabulary vocab_r, Vocabulary vocab_c, std::string control_symbol)
        : vocab_p_(std::move(vocab_p)), vocab_r_(std::move(vocab_r)), vocab_c_(std::move(vocab_c)),
          control_symbol_(std::move(control_symbol)) {}

    /// Parses "pA+pB" into a spec, interning each part. The control symbol
    /// may only appear alone.
    PerturbationSpec parse_perturbation(std::string_view text) {
        if (text.empty()) throw Error("empty perturbation field");
        std::vector<SymbolId> parts;
        std::size_t start = 0;
        while (true) {
            const auto plus = text.find('+', start);
            const auto part = text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
            if (part.empty()) throw Error("empty part in perturbation '" + std::string(text) + "'");
            parts.push_back(vocab_p_.intern(part));
            if (plus == std::string_view::npos) break;
            start = plus + 1;
        }
        PerturbationSpec spec(std::move(parts));
        check_control_alone(spec);
        return spec;
    }

    /// Like parse_perturbation but never grows the vocabulary.
    std::optional<PerturbationSpec> lookup_perturbation(std::string_view text) const {
        std::vector<SymbolId> parts;
        std::size_t start = 0;
        while (true) {
            const auto plus = text.find('+', start);
            const auto part = text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
            auto id = vocab_p_.find(part);
            if (!id) return std::nullopt;
            parts.push_back(*id);
            if (plus == std::string_view::npos) break;
            start = plus + 1;
        }
        PerturbationSpec spec(std::move(parts));
        check_control_alone(spec);
        return spec;
    }

    void add(std::string_view context, std::string_view perturbation, std::string_view readout, double value) {
        auto spec = parse_perturbation(perturbation);
        const auto r = vocab_r_.intern(readout);
        const auto c = vocab_c_.intern(context);
        add(Observation{std::move(spec), r, c, value});
    }

    void add(Observation obs) {
        if (!std::isfinite(obs.value)) throw Error("observation value is not finite");
        for (auto p : obs.perturbation.parts()) {
            if (!vocab_p_.contains(p)) throw Error("perturbation id " + std::to_string(p) + " out of range");
        }
        if (obs.perturbation.size() == 0) throw Error("observation has empty perturbation spec");
        if (!vocab_r_.contains(obs.readout)) throw Error("readout id " + std::to_string(obs.readout) + " out of range");
        if (!vocab_c_.contains(obs.context)) throw Error("context id " + std::to_string(obs.context) + " out of range");
        check_control_alone(obs.perturbation);
        observations_.push_back(std::move(obs));
    }

    SymbolId intern_perturbation(std::string_view s) { return vocab_p_.intern(s); }
    SymbolId intern_readout(std::string_view s) { return vocab_r_.intern(s); }
    SymbolId intern_context(std::string_view s) { return vocab_c_.intern(s); }

    const std::vector<Observation>& observations() const noexcept { return observations_; }
    const Observation& operator[](std::size_t i) const { return observations_[i]; }
    std::size_t size() const noexcept { return observations_.size(); }
    bool empty() const noexcept { return observations_.empty(); }

    const Vocabulary& vocab_p() const noexcept { return vocab_p_; }
    const Vocabulary& vocab_r() const noexcept { return vocab_r_; }
    const Vocabulary& vocab_c() const noexcept { return vocab_c_; }
    const std::string& control_symbol() const noexcept { return control_symbol_; }

    std::optional<SymbolId> control_id() const { return vocab_p_.find(control_symbol_); }

    bool is_control(const PerturbationSpec& spec) const {
        const auto ctrl = control_id();
        return ctrl && spec.is_single() && spec.front() == *ctrl;
    }

    std::string format_perturbation(const PerturbationSpec& spec) const {
        std::string out;
        for (auto p : spec.parts()) {
            if (!out.empty()) out += '+';
            out += vocab_p_.symbol(p);
        }
        return out;
    }

    /// Same vocabularies, different records.
    ObservationSet with_observations(std::vector<Observation> observations) const {
        ObservationSet out(vocab_p_, vocab_r_, vocab_c_, control_symbol_);
        out.observations_.reserve(observations.size());
        for (auto& o : observations) out.add(std::move(o));
        return out;
    }

    ObservationSet subset(std::span<const std::size_t> indices) const {
        std::vector<Observation> picked;
        picked.reserve(indices.size());
        for (auto i : indices) picked.push_back(observations_.at(i));
        return with_observations(std::move(picked));
    }

private:
    void check_control_alone(const PerturbationSpec& spec) const {
        if (spec.size() < 2) return;
        if (const auto ctrl = control_id()) {
            for (auto p : spec.parts()) {
                if (p == *ctrl) throw Error("control symbol '" + control_symbol_ + "' cannot be part of a combination");
            }
        }
    }

    Vocabulary vocab_p_{Dimension::perturbation};
    Vocabulary vocab_r_{Dimension::readout};
    Vocabulary vocab_c_{Dimension::context};
    std::string control_symbol_;
    std::vector<Observation> observations_;
};

/// Re-expresses `data` in the given vocabularies. Throws listing every symbol
/// that is missing from them.
inline ObservationSet remap_to_vocabularies(const ObservationSet& data, const Vocabulary& vocab_p,
                                            const Vocabulary& vocab_r, const Vocabulary& vocab_c) {
    std::set<std::string> missing;
    auto map_id = [&missing](const Vocabulary& from, const Vocabulary& to, SymbolId id) -> SymbolId {
        const auto& sym = from.symbol(id);
        if (auto found = to.find(sym)) return *found;
        missing.insert(std::string(to_string(to.dimension())) + " '" + sym + "'");
        return 0;
    };
    ObservationSet out(vocab_p, vocab_r, vocab_c, data.control_symbol());
    std::vector<Observation> mapped;
    mapped.reserve(data.size());
    for (const auto& o : data.observations()) {
        std::vector<SymbolId> parts;
        for (auto p : o.perturbation.parts()) parts.push_back(map_id(data.vocab_p(), vocab_p, p));
        const auto r = map_id(data.vocab_r(), vocab_r, o.readout);
        const auto c = map_id(data.vocab_c(), vocab_c, o.context);
        if (missing.empty()) mapped.push_back(Observation{PerturbationSpec(std::move(parts)), r, c, o.value, o.imputed});
    }
    if (!missing.empty()) {
        std::string msg = "out-of-vocabulary symbols:";
        for (const auto& m : missing) msg += " " + m;
        throw Error(msg);
    }
    for (auto& o : mapped) out.add(std::move(o));
    return out;
}

/// Appends `extra` to `base`, interning any new symbols by name.
inline ObservationSet merge(const ObservationSet& base, const ObservationSet& extra) {
    if (base.control_symbol() != extra.control_symbol()) throw Error("cannot merge sets with different control symbols");
    ObservationSet out = base;
    for (const auto& o : extra.observations()) {
        std::vector<SymbolId> parts;
        for (auto p : o.perturbation.parts()) parts.push_back(out.intern_perturbation(extra.vocab_p().symbol(p)));
        const auto r = out.intern_readout(extra.vocab_r().symbol(o.readout));
        const auto c = out.intern_context(extra.vocab_c().symbol(o.context));
        out.add(Observation{PerturbationSpec(std::move(parts)), r, c, o.value, o.imputed});
    }
    return out;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

inline std::string_view chomp(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

inline std::optional<double> parse_double(std::string_view text) {
    double v = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || first == last) return std::nullopt;
    return v;
}

// Shortest representation that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace detail

inline constexpr std::string_view long_format_header = "context\tperturbation\treadout\tvalue";

inline ObservationSet read_long_format(std::istream& in, std::string control_symbol = std::string(default_control_symbol)) {
    ObservationSet data(std::move(control_symbol));
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    ++line_no;
    if (detail::chomp(line) != long_format_header) {
        throw ParseError(line_no, "malformed header, expected '" + std::string(long_format_header) + "'");
    }
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::chomp(line);
        if (text.empty()) continue;
        const auto fields = detail::split_fields(text, '\t');
        if (fields.size() != 4) throw ParseError(line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
        if (fields[0].empty()) throw ParseError(line_no, "empty context field");
        if (fields[1].empty()) throw ParseError(line_no, "empty perturbation field");
        if (fields[2].empty()) throw ParseError(line_no, "empty readout field");
        const auto value = detail::parse_double(fields[3]);
        if (!value) throw ParseError(line_no, "non-numeric value '" + std::string(fields[3]) + "'");
        try {
            data.add(fields[0], fields[1], fields[2], *value);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return data;
}

inline ObservationSet ingest_long_format(const std::string& path, std::string control_symbol = std::string(default_control_symbol)) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_long_format(in, std::move(control_symbol));
}

inline void write_long_format(const ObservationSet& data, std::ostream& out) {
    out << long_format_header << '\n';
    for (const auto& o : data.observations()) {
        out << data.vocab_c().symbol(o.context) << '\t' << data.format_perturbation(o.perturbation) << '\t'
            << data.vocab_r().symbol(o.readout) << '\t' << detail::format_double(o.value) << '\n';
    }
}

inline void write_long_format(const ObservationSet& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    write_long_format(data, out);
}

/// Matrix-shaped screen: first column holds perturbation symbols, the other
/// column headers are readouts. Empty cells are missing readouts.
inline ObservationSet read_wide_matrix(std::istream& in, std::string_view context,
                                       std::string control_symbol = std::string(default_control_symbol)) {
    ObservationSet data(std::move(control_symbol));
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    const auto header = detail::split_fields(detail::chomp(line), ',');
    if (header.size() < 2) throw ParseError(1, "header needs a perturbation column and at least one readout");
    std::set<std::string_view> seen;
    for (std::size_t j = 1; j < header.size(); ++j) {
        if (header[j].empty()) throw ParseError(1, "empty readout header in column " + std::to_string(j + 1));
        if (!seen.insert(header[j]).second) throw ParseError(1, "duplicate readout header '" + std::string(header[j]) + "'");
    }
    const std::vector<std::string> readouts(header.begin() + 1, header.end());
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = detail::chomp(line);
        if (text.empty()) continue;
        const auto fields = detail::split_fields(text, ',');
        if (fields.size() != header.size()) {
            throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        }
        if (fields[0].empty()) throw ParseError(line_no, "empty perturbation field");
        for (std::size_t j = 1; j < fields.size(); ++j) {
            if (fields[j].empty()) continue;
            const auto value = detail::parse_double(fields[j]);
            if (!value) throw ParseError(line_no, "non-numeric cell '" + std::string(fields[j]) + "'");
            try {
                data.add(context, fields[0], readouts[j - 1], *value);
            } catch (const ParseError&) {
                throw;
            } catch (const Error& e) {
                throw ParseError(line_no, e.what());
            }
        }
    }
    if (data.empty()) throw Error("wide matrix has no non-empty cells");
    return data;
}

inline ObservationSet ingest_wide_matrix(const std::string& path, std::string_view context,
                                         std::string control_symbol = std::string(default_control_symbol)) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_wide_matrix(in, context, std::move(control_symbol));
}

// ---------------------------------------------------------------------------
// Control statistics and aggregation

using ContextReadout = std::pair<SymbolId, SymbolId>;

struct ControlEntry {
    double mean = 0.0;
    std::size_t count = 0;
};

class ControlStats {
public:
    std::optional<double> mean(SymbolId context, SymbolId readout) const {
        if (auto it = entries_.find({context, readout}); it != entries_.end()) return it->second.mean;
        return std::nullopt;
    }

    std::size_t count(SymbolId context, SymbolId readout) const {
        if (auto it = entries_.find({context, readout}); it != entries_.end()) return it->second.count;
        return 0;
    }

    bool contains(SymbolId context, SymbolId readout) const { return entries_.contains({context, readout}); }
    const std::map<ContextReadout, ControlEntry>& entries() const noexcept { return entries_; }

    void set(SymbolId context, SymbolId readout, ControlEntry entry) { entries_[{context, readout}] = entry; }

    bool operator==(const ControlStats& other) const {
        if (entries_.size() != other.entries_.size()) return false;
        for (const auto& [key, e] : entries_) {
            auto it = other.entries_.find(key);
            if (it == other.entries_.end() || it->second.mean != e.mean || it->second.count != e.count) return false;
        }
        return true;
    }

private:
    std::map<ContextReadout, ControlEntry> entries_;
};

inline ControlStats compute_control_stats(const ObservationSet& data) {
    std::map<ContextReadout, std::pair<double, std::size_t>> sums;
    for (const auto& o : data.observations()) {
        if (!data.is_control(o.perturbation)) continue;
        auto& [sum, n] = sums[{o.context, o.readout}];
        sum += o.value;
        ++n;
    }
    ControlStats stats;
    for (const auto& [key, acc] : sums) {
        stats.set(key.first, key.second, ControlEntry{acc.first / static_cast<double>(acc.second), acc.second});
    }
    return stats;
}

/// Collapses replicates of each (P, R, C) key into their arithmetic mean,
/// keeping keys in first-appearance order.
inline ObservationSet mean_aggregate(const ObservationSet& data) {
    struct Acc {
        std::size_t first;
        double sum = 0.0;
        std::size_t count = 0;
        bool all_imputed = true;
    };
    using Key = std::tuple<SymbolId, SymbolId, PerturbationSpec>;
    std::map<Key, Acc> groups;
    std::vector<const Key*> order;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        auto [it, inserted] = groups.try_emplace(Key{o.context, o.readout, o.perturbation}, Acc{i});
        if (inserted) order.push_back(&it->first);
        it->second.sum += o.value;
        ++it->second.count;
        it->second.all_imputed = it->second.all_imputed && o.imputed;
    }
    std::vector<Observation> out;
    out.reserve(order.size());
    for (const auto* key : order) {
        const auto& acc = groups.at(*key);
        const auto& first = data[acc.first];
        out.push_back(Observation{first.perturbation, first.readout, first.context,
                                  acc.sum / static_cast<double>(acc.count), acc.all_imputed});
    }
    return data.with_observations(std::move(out));
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
    double train = 0.70;
    double validation = 0.15;
    double test = 0.15;
};

struct SplitOptions {
    // Control observations of every context go to train when set; when unset
    // they are left out of all three folds.
    bool include_controls = true;
};

struct SplitAssignment {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::string strategy;
    std::uint64_t seed = 0;
};

/// Distinct non-control perturbation specs observed in `context`, in
/// first-appearance order.
inline std::vector<PerturbationSpec> specs_in_context(const ObservationSet& data, SymbolId context) {
    std::vector<PerturbationSpec> specs;
    std::set<PerturbationSpec> seen;
    for (const auto& o : data.observations()) {
        if (o.context != context || data.is_control(o.perturbation)) continue;
        if (seen.insert(o.perturbation).second) specs.push_back(o.perturbation);
    }
    return specs;
}

namespace detail {
inline std::size_t floor_count(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}
}  // namespace detail

/// Partitions the perturbation specs of `target_context` into train /
/// validation / test by ratio. Everything outside the target context, and the
/// target's controls, is training data.
inline SplitAssignment split_stratified(const ObservationSet& data, SymbolId target_context, std::uint64_t seed,
                                        SplitRatios ratios = {}, SplitOptions options = {}) {
    if (!data.vocab_c().contains(target_context)) throw Error("target context id out of range");
    const double total = ratios.train + ratios.validation + ratios.test;
    if (std::abs(total - 1.0) > 1e-9 || ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) {
        throw Error("split ratios must be non-negative and sum to 1");
    }
    auto specs = specs_in_context(data, target_context);
    if (specs.size() < 3) {
        throw Error("target context '" + data.vocab_c().symbol(target_context) + "' has " + std::to_string(specs.size()) +
                    " perturbation specs; at least 3 are required");
    }
    std::mt19937_64 rng(seed);
    std::shuffle(specs.begin(), specs.end(), rng);
    const auto n_val = detail::floor_count(ratios.validation, specs.size());
    const auto n_test = detail::floor_count(ratios.test, specs.size());
    const auto n_train = specs.size() - n_val - n_test;

    enum class Fold { train, validation, test };
    std::map<PerturbationSpec, Fold> fold_of;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        fold_of[specs[i]] = i < n_train ? Fold::train : (i < n_train + n_val ? Fold::validation : Fold::test);
    }

    SplitAssignment split;
    split.strategy = "stratified:" + data.vocab_c().symbol(target_context);
    split.seed = seed;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        if (data.is_control(o.perturbation)) {
            if (options.include_controls) split.train.push_back(i);
            continue;
        }
        if (o.context != target_context) {
            split.train.push_back(i);
            continue;
        }
        switch (fold_of.at(o.perturbation)) {
            case Fold::train: split.train.push_back(i); break;
            case Fold::validation: split.validation.push_back(i); break;
            case Fold::test: split.test.push_back(i); break;
        }
    }
    return split;
}

/// One stratified split per context, each isolating that context's test data.
inline std::vector<std::pair<SymbolId, SplitAssignment>> leave_one_context_folds(const ObservationSet& data,
                                                                                std::uint64_t seed,
                                                                                SplitRatios ratios = {},
                                                                                SplitOptions options = {}) {
    if (data.vocab_c().size() < 2) {
        throw Error("leave-one-context folds need at least 2 contexts; use split_stratified for a single context");
    }
    std::vector<std::pair<SymbolId, SplitAssignment>> folds;
    for (SymbolId c = 0; c < data.vocab_c().size(); ++c) {
        auto split = split_stratified(data, c, seed, ratios, options);
        split.strategy = "leave-one-context:" + data.vocab_c().symbol(c);
        folds.emplace_back(c, std::move(split));
    }
    return folds;
}

}  // namespace lpm
