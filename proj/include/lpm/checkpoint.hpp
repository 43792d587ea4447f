#pragma once

// Two-file checkpoint: a JSON manifest (config, vocabularies, tensor
// directory, blob digest) next to a blob of little-endian IEEE-754 float32
// tensor payloads.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "lpm/common.hpp"
#include "lpm/data.hpp"
#include "lpm/model.hpp"

namespace lpm {

inline std::string sha256_hex(const void* data, std::size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
    std::ostringstream out;
    for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline std::string sha256_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return sha256_hex(bytes.data(), bytes.size());
}

inline constexpr int checkpoint_format_version = 1;

struct CheckpointPaths {
    std::string manifest;
    std::string blob;

    static CheckpointPaths from_prefix(const std::string& prefix) { return {prefix + ".manifest.json", prefix + ".blob"}; }
};

struct Checkpoint {
    ModelParametersF params;
    Vocabulary vocab_p{Dimension::perturbation};
    Vocabulary vocab_r{Dimension::readout};
    Vocabulary vocab_c{Dimension::context};
    std::string control_symbol = std::string(default_control_symbol);
};

namespace detail {

inline void append_f32(std::string& blob, float v) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_f32(const std::string& blob, std::size_t offset) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i])) << (8 * i);
    return std::bit_cast<float>(bits);
}

struct TensorEntry {
    std::string name;
    std::vector<std::size_t> shape;
    float* target;
    std::size_t count;
};

inline std::vector<TensorEntry> tensor_directory(ModelParametersF& p) {
    std::vector<TensorEntry> out;
    out.push_back({"emb_p", {p.emb_p.rows(), p.emb_p.cols()}, p.emb_p.values().data(), p.emb_p.values().size()});
    out.push_back({"emb_r", {p.emb_r.rows(), p.emb_r.cols()}, p.emb_r.values().data(), p.emb_r.values().size()});
    out.push_back({"emb_c", {p.emb_c.rows(), p.emb_c.cols()}, p.emb_c.values().data(), p.emb_c.values().size()});
    for (std::size_t l = 0; l < p.mlp.layers.size(); ++l) {
        auto& layer = p.mlp.layers[l];
        out.push_back({"mlp." + std::to_string(l) + ".weight", {layer.inputs, layer.outputs}, layer.weight.data(), layer.weight.size()});
        out.push_back({"mlp." + std::to_string(l) + ".bias", {layer.outputs}, layer.bias.data(), layer.bias.size()});
    }
    return out;
}

}  // namespace detail

/// Writes both files. Parameters wider than float32 are rounded on the way out.
template <typename Real>
void save_checkpoint(const BasicModelParameters<Real>& params, const Vocabulary& vocab_p, const Vocabulary& vocab_r,
                     const Vocabulary& vocab_c, const std::string& control_symbol, const CheckpointPaths& paths) {
    auto p32 = cast_parameters<float>(params);
    if (p32.emb_p.rows() != vocab_p.size() || p32.emb_r.rows() != vocab_r.size() || p32.emb_c.rows() != vocab_c.size()) {
        throw Error("vocabulary sizes do not match embedding tables");
    }
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& t : detail::tensor_directory(p32)) {
        const auto offset = blob.size();
        for (std::size_t i = 0; i < t.count; ++i) detail::append_f32(blob, t.target[i]);
        tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"length", t.count * 4}});
    }
    const auto& cfg = params.config;
    nlohmann::json manifest;
    manifest["format"] = "lpm-checkpoint";
    manifest["version"] = checkpoint_format_version;
    manifest["dtype"] = "float32-le";
    manifest["config"] = {{"d_embed", cfg.d_embed},
                          {"hidden_dim", cfg.hidden_dim},
                          {"hidden_layers", cfg.hidden_layers},
                          {"dropout_rate", cfg.dropout_rate},
                          {"seed", cfg.seed}};
    manifest["control_symbol"] = control_symbol;
    manifest["vocabularies"] = {{"perturbation", vocab_p.symbols()}, {"readout", vocab_r.symbols()}, {"context", vocab_c.symbols()}};
    manifest["tensors"] = tensors;
    manifest["blob_bytes"] = blob.size();
    manifest["blob_sha256"] = sha256_hex(blob.data(), blob.size());

    {
        std::ofstream out(paths.blob, std::ios::binary);
        if (!out) throw Error("cannot write '" + paths.blob + "'");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    std::ofstream out(paths.manifest, std::ios::binary);
    if (!out) throw Error("cannot write '" + paths.manifest + "'");
    out << manifest.dump(2) << '\n';
}

template <typename Real>
void save_checkpoint(const BasicModelParameters<Real>& params, const ObservationSet& vocabularies, const CheckpointPaths& paths) {
    save_checkpoint(params, vocabularies.vocab_p(), vocabularies.vocab_r(), vocabularies.vocab_c(), vocabularies.control_symbol(), paths);
}

inline Checkpoint load_checkpoint(const CheckpointPaths& paths) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file_bytes(paths.manifest));
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    try {
        if (manifest.value("format", "") != "lpm-checkpoint") throw Error("not an lpm checkpoint manifest");
        if (manifest.at("version").get<int>() != checkpoint_format_version) {
            throw Error("unsupported checkpoint format version " + manifest.at("version").dump());
        }
        if (manifest.value("dtype", "") != "float32-le") throw Error("unsupported tensor dtype");
        const auto blob = read_file_bytes(paths.blob);
        if (blob.size() != manifest.at("blob_bytes").get<std::size_t>() ||
            sha256_hex(blob.data(), blob.size()) != manifest.at("blob_sha256").get<std::string>()) {
            throw Error("checkpoint blob hash mismatch");
        }

        Checkpoint ck;
        const auto& cfg_json = manifest.at("config");
        ModelConfig cfg;
        cfg.d_embed = cfg_json.at("d_embed").get<std::size_t>();
        cfg.hidden_dim = cfg_json.at("hidden_dim").get<std::size_t>();
        cfg.hidden_layers = cfg_json.at("hidden_layers").get<std::size_t>();
        cfg.dropout_rate = cfg_json.at("dropout_rate").get<double>();
        cfg.seed = cfg_json.at("seed").get<std::uint64_t>();
        cfg.validate();
        const auto& vocabs = manifest.at("vocabularies");
        ck.vocab_p = Vocabulary::from_symbols(Dimension::perturbation, vocabs.at("perturbation").get<std::vector<std::string>>());
        ck.vocab_r = Vocabulary::from_symbols(Dimension::readout, vocabs.at("readout").get<std::vector<std::string>>());
        ck.vocab_c = Vocabulary::from_symbols(Dimension::context, vocabs.at("context").get<std::vector<std::string>>());
        ck.control_symbol = manifest.at("control_symbol").get<std::string>();

        // Allocate the expected shapes, then fill from the directory.
        ck.params = init_parameters<float>(cfg, {ck.vocab_p.size(), ck.vocab_r.size(), ck.vocab_c.size()});
        auto expected = detail::tensor_directory(ck.params);
        const auto& tensors = manifest.at("tensors");
        if (tensors.size() != expected.size()) throw Error("checkpoint tensor count does not match the model config");
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& t = tensors[i];
            const auto& want = expected[i];
            if (t.at("name").get<std::string>() != want.name) throw Error("unexpected tensor '" + t.at("name").get<std::string>() + "'");
            if (t.at("shape").get<std::vector<std::size_t>>() != want.shape) throw Error("shape mismatch for tensor '" + want.name + "'");
            const auto offset = t.at("offset").get<std::size_t>();
            const auto length = t.at("length").get<std::size_t>();
            if (length != want.count * 4 || offset + length > blob.size()) throw Error("bad extent for tensor '" + want.name + "'");
            for (std::size_t k = 0; k < want.count; ++k) want.target[k] = detail::read_f32(blob, offset + 4 * k);
        }
        return ck;
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed checkpoint manifest: " + std::string(e.what()));
    }
}

}  // namespace lpm
