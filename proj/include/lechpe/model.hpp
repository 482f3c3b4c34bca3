#pragma once
// The encoder (affine + ReLU stack, affine final layer) and the three
// per-angle fully-connected heads. Checkpoints are a text manifest plus one
// little-endian float64 blob per tensor.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lechpe/autodiff.hpp"
#include "lechpe/matrix.hpp"
#include "lechpe/rng.hpp"

namespace lechpe {

struct EncoderConfig {
    int input_dim = 32;
    std::vector<int> hidden_dims = {64, 64};
    int latent_dim = 16;

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("EncoderConfig: input_dim < 1");
        for (int h : hidden_dims)
            if (h < 1) throw std::invalid_argument("EncoderConfig: hidden dim < 1");
        // clustering in a 1-D latent space degenerates
        if (latent_dim < 2) throw std::invalid_argument("EncoderConfig: latent_dim must be >= 2");
    }

    // widths of the affine layers, input to latent
    std::vector<std::pair<int, int>> layer_shapes() const {
        std::vector<std::pair<int, int>> shapes;
        int in = input_dim;
        for (int h : hidden_dims) {
            shapes.emplace_back(in, h);
            in = h;
        }
        shapes.emplace_back(in, latent_dim);
        return shapes;
    }
};

struct AffineParams {
    Matrix weight;  // in x out
    Matrix bias;    // 1 x out
};

struct ModelParams {
    EncoderConfig encoder_config;
    int num_bins = 66;
    std::vector<AffineParams> encoder;  // hidden layers then the latent layer
    AffineParams head_yaw, head_pitch, head_roll;
    std::optional<Matrix> cluster_centers;  // K x latent_dim once stage 2 is initialized

    // Glorot-style uniform init, biases zero, deterministic under the seed.
    static ModelParams init(const EncoderConfig& config, int num_bins, std::uint64_t seed) {
        config.validate();
        if (num_bins < 2) throw std::invalid_argument("ModelParams: num_bins must be >= 2");
        ModelParams p;
        p.encoder_config = config;
        p.num_bins = num_bins;
        Rng rng(mix_seed(seed, 0x17171717ULL));
        auto init_affine = [&rng](int in, int out) {
            AffineParams a;
            a.weight = Matrix(in, out);
            a.bias = Matrix(1, out, 0.0);
            const double bound = std::sqrt(6.0 / (in + out));
            for (std::size_t i = 0; i < a.weight.size(); ++i)
                a.weight.data()[i] = rng.uniform(-bound, bound);
            return a;
        };
        for (auto [in, out] : config.layer_shapes()) p.encoder.push_back(init_affine(in, out));
        p.head_yaw = init_affine(config.latent_dim, num_bins);
        p.head_pitch = init_affine(config.latent_dim, num_bins);
        p.head_roll = init_affine(config.latent_dim, num_bins);
        return p;
    }

    // Stable name -> tensor listing; cluster centers come last when present.
    std::vector<std::pair<std::string, Matrix*>> tensors() {
        std::vector<std::pair<std::string, Matrix*>> out;
        for (std::size_t l = 0; l < encoder.size(); ++l) {
            out.emplace_back("encoder." + std::to_string(l) + ".weight", &encoder[l].weight);
            out.emplace_back("encoder." + std::to_string(l) + ".bias", &encoder[l].bias);
        }
        out.emplace_back("head.yaw.weight", &head_yaw.weight);
        out.emplace_back("head.yaw.bias", &head_yaw.bias);
        out.emplace_back("head.pitch.weight", &head_pitch.weight);
        out.emplace_back("head.pitch.bias", &head_pitch.bias);
        out.emplace_back("head.roll.weight", &head_roll.weight);
        out.emplace_back("head.roll.bias", &head_roll.bias);
        if (cluster_centers) out.emplace_back("clusters.centers", &*cluster_centers);
        return out;
    }

    std::vector<std::pair<std::string, const Matrix*>> tensors() const {
        auto mutable_list = const_cast<ModelParams*>(this)->tensors();
        std::vector<std::pair<std::string, const Matrix*>> out;
        out.reserve(mutable_list.size());
        for (auto& [name, m] : mutable_list) out.emplace_back(name, m);
        return out;
    }
};

// Leaf nodes for one training step, in ModelParams::tensors() order.
struct ModelGraph {
    std::vector<std::pair<std::string, ad::Var>> leaves;
    std::size_t n_encoder_layers = 0;

    static ModelGraph from(const ModelParams& params) {
        ModelGraph g;
        g.n_encoder_layers = params.encoder.size();
        for (const auto& [name, tensor] : params.tensors()) {
            g.leaves.emplace_back(name, ad::parameter(*tensor));
        }
        return g;
    }

    const ad::Var& leaf(const std::string& name) const {
        for (const auto& [n, v] : leaves)
            if (n == name) return v;
        throw std::invalid_argument("ModelGraph: no tensor named " + name);
    }

    // affine + ReLU stack; the latent layer stays affine so the embedding
    // space is unbounded
    ad::Var encode(const ad::Var& input) const {
        ad::Var x = input;
        for (std::size_t l = 0; l < n_encoder_layers; ++l) {
            const auto& w = leaves[2 * l].second;
            const auto& b = leaves[2 * l + 1].second;
            x = ad::add_row_broadcast(ad::matmul(x, w), b);
            if (l + 1 < n_encoder_layers) x = ad::relu(x);
        }
        return x;
    }

    ad::Var head(const std::string& angle, const ad::Var& latents) const {
        return ad::add_row_broadcast(ad::matmul(latents, leaf("head." + angle + ".weight")),
                                     leaf("head." + angle + ".bias"));
    }

    ad::Var centers() const { return leaf("clusters.centers"); }
};

struct LatentBatch {
    Matrix embeddings;  // N x latent_dim
};

struct AngleLogits {
    Matrix yaw, pitch, roll;  // each N x C
};

inline LatentBatch encode(const ModelParams& params, const Matrix& batch) {
    if (batch.cols() != params.encoder_config.input_dim) {
        throw std::invalid_argument("encode: batch has " + std::to_string(batch.cols()) +
                                    " columns, encoder expects " +
                                    std::to_string(params.encoder_config.input_dim));
    }
    auto g = ModelGraph::from(params);
    return {g.encode(ad::constant(batch))->value};
}

inline AngleLogits angle_heads(const ModelParams& params, const LatentBatch& latents) {
    if (latents.embeddings.cols() != params.encoder_config.latent_dim) {
        throw std::invalid_argument("angle_heads: latent width " +
                                    std::to_string(latents.embeddings.cols()) + " vs head input " +
                                    std::to_string(params.encoder_config.latent_dim));
    }
    auto g = ModelGraph::from(params);
    auto l = ad::constant(latents.embeddings);
    return {g.head("yaw", l)->value, g.head("pitch", l)->value, g.head("roll", l)->value};
}

// --------------------------------------------------------------------------
// checkpoints
// --------------------------------------------------------------------------

namespace detail {

inline void write_f64_le(std::ofstream& out, double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64_le(std::ifstream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated tensor blob");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
}

inline std::string join_ints(const std::vector<int>& v) {
    if (v.empty()) return "none";
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

inline std::vector<int> split_ints(const std::string& s) {
    if (s == "none") return {};
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
}

}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir);
    manifest << "format_version 1\n";
    manifest << "input_dim " << params.encoder_config.input_dim << "\n";
    manifest << "hidden_dims " << detail::join_ints(params.encoder_config.hidden_dims) << "\n";
    manifest << "latent_dim " << params.encoder_config.latent_dim << "\n";
    manifest << "num_bins " << params.num_bins << "\n";
    for (const auto& [name, tensor] : params.tensors()) {
        manifest << "tensor " << name << " " << tensor->rows() << " " << tensor->cols() << "\n";
        std::ofstream blob(fs::path(dir) / (name + ".bin"), std::ios::binary);
        if (!blob) throw std::runtime_error("save_checkpoint: cannot write " + name + ".bin");
        for (std::size_t i = 0; i < tensor->size(); ++i) detail::write_f64_le(blob, tensor->data()[i]);
    }
}

inline ModelParams load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw std::runtime_error("load_checkpoint: no manifest.txt in " + dir);

    EncoderConfig config;
    int num_bins = 0;
    std::vector<std::pair<std::string, std::pair<int, int>>> tensor_specs;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "format_version") {
            int v;
            ss >> v;
            if (v != 1) throw std::runtime_error("load_checkpoint: unsupported format_version");
        } else if (key == "input_dim") {
            ss >> config.input_dim;
        } else if (key == "hidden_dims") {
            std::string dims;
            ss >> dims;
            config.hidden_dims = detail::split_ints(dims);
        } else if (key == "latent_dim") {
            ss >> config.latent_dim;
        } else if (key == "num_bins") {
            ss >> num_bins;
        } else if (key == "tensor") {
            std::string name;
            int r, c;
            ss >> name >> r >> c;
            tensor_specs.emplace_back(name, std::make_pair(r, c));
        } else {
            throw std::runtime_error("load_checkpoint: unknown manifest key '" + key + "'");
        }
    }

    ModelParams params = ModelParams::init(config, num_bins, 0);
    for (const auto& [name, shape] : tensor_specs) {
        if (name == "clusters.centers") {
            params.cluster_centers = Matrix(shape.first, shape.second);
        }
    }
    std::map<std::string, Matrix*> by_name;
    for (auto& [name, tensor] : params.tensors()) by_name[name] = tensor;

    for (const auto& [name, shape] : tensor_specs) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("load_checkpoint: unexpected tensor " + name);
        require_shape(*it->second, shape.first, shape.second,
                      ("load_checkpoint: " + name).c_str());
        std::ifstream blob(fs::path(dir) / (name + ".bin"), std::ios::binary);
        if (!blob) throw std::runtime_error("load_checkpoint: missing blob for " + name);
        for (std::size_t i = 0; i < it->second->size(); ++i)
            it->second->data()[i] = detail::read_f64_le(blob);
        require_finite(*it->second, ("load_checkpoint: " + name).c_str());
    }
    if (tensor_specs.size() != params.tensors().size()) {
        throw std::runtime_error("load_checkpoint: manifest lists " +
                                 std::to_string(tensor_specs.size()) + " tensors, model needs " +
                                 std::to_string(params.tensors().size()));
    }
    return params;
}

// FNV-1a over the manifest text and every tensor blob, for reproducibility checks
inline std::uint64_t checkpoint_checksum(const std::string& dir) {
    namespace fs = std::filesystem;
    std::uint64_t h = 0xCBF29CE484222325ULL;
    auto fold_file = [&h](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw std::runtime_error("checkpoint_checksum: cannot read " + p.string());
        char c;
        while (in.get(c)) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ULL;
        }
    };
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) fold_file(f);
    return h;
}

}  // namespace lechpe
