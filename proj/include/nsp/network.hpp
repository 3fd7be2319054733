#pragma once

// Feedforward affine+ReLU networks over exact rationals, their double
// mirror for training, and the affine embedding/unembedding maps.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsp/rational.hpp"

namespace nsp {

using json = nlohmann::json;

struct FormatError : std::runtime_error {
    std::string path;  // JSON field path
    FormatError(std::string path_, const std::string& msg)
        : std::runtime_error(path_.empty() ? msg : path_ + ": " + msg),
          path(std::move(path_)) {}
};

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class EvalMode { Float64, ExactRational };

struct Layer {
    std::vector<std::vector<Rat>> weights;  // rows x cols
    std::vector<Rat> bias;                  // rows
    bool relu = false;

    int rows() const { return static_cast<int>(weights.size()); }
    int cols() const { return weights.empty() ? 0 : static_cast<int>(weights[0].size()); }
};

struct Network {
    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().cols(); }
    int output_dim() const { return layers.empty() ? 0 : layers.back().rows(); }
};

// Checks widths, the identity final layer, and rectangular weight matrices.
// Desk-scale overruns (layers > 4 or total neurons > 64) only warn.
inline void validate_network(const Network& net, std::vector<std::string>* warnings = nullptr) {
    if (net.layers.empty()) throw FormatError("layers", "at least one layer");
    int width = net.layers[0].cols();
    int total = 0;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        std::string where = "layers[" + std::to_string(i) + "]";
        if (l.weights.empty()) throw FormatError(where + ".weights", "empty weight matrix");
        for (size_t r = 0; r < l.weights.size(); ++r)
            if (static_cast<int>(l.weights[r].size()) != l.cols())
                throw FormatError(where + ".weights[" + std::to_string(r) + "]",
                                  "ragged weight matrix");
        if (l.cols() != width)
            throw DimensionError(where + ": expects input width " + std::to_string(l.cols()) +
                                 ", previous layer provides " + std::to_string(width));
        if (static_cast<int>(l.bias.size()) != l.rows())
            throw DimensionError(where + ": bias length " + std::to_string(l.bias.size()) +
                                 " does not match " + std::to_string(l.rows()) + " rows");
        width = l.rows();
        total += l.rows();
    }
    if (net.layers.back().relu)
        throw FormatError("layers", "final layer activation must be identity");
    if (warnings) {
        if (net.layers.size() > 4)
            warnings->push_back("network has " + std::to_string(net.layers.size()) +
                                " layers; tooling is tuned for at most 4");
        if (total > 64)
            warnings->push_back("network has " + std::to_string(total) +
                                " neurons; tooling is tuned for at most 64");
    }
}

namespace detail {

inline Rat parse_rat_field(const json& v, const std::string& path, bool trust_floats) {
    if (v.is_string()) {
        auto r = try_parse_rational(v.get<std::string>());
        if (!r) throw FormatError(path, "bad rational '" + v.get<std::string>() + "'");
        return *r;
    }
    if (v.is_number_integer()) return rat(v.get<long>());
    if (v.is_number_float()) {
        if (!trust_floats)
            throw FormatError(path,
                              "floating point literal; re-export with string rationals or "
                              "pass --trust-floats to adopt its exact binary value");
        return rat_from_double(v.get<double>());
    }
    throw FormatError(path, "expected a rational");
}

}  // namespace detail

inline Network network_from_json(const json& j, bool trust_floats = false,
                                 std::vector<std::string>* warnings = nullptr) {
    if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array())
        throw FormatError("layers", "missing layer list");
    Network net;
    size_t li = 0;
    for (const auto& jl : j["layers"]) {
        std::string where = "layers[" + std::to_string(li++) + "]";
        Layer l;
        if (!jl.contains("weights") || !jl["weights"].is_array())
            throw FormatError(where + ".weights", "missing weight matrix");
        size_t ri = 0;
        for (const auto& row : jl["weights"]) {
            if (!row.is_array())
                throw FormatError(where + ".weights[" + std::to_string(ri) + "]",
                                  "expected a row array");
            std::vector<Rat> r;
            size_t ci = 0;
            for (const auto& w : row)
                r.push_back(detail::parse_rat_field(
                    w, where + ".weights[" + std::to_string(ri) + "][" + std::to_string(ci++) + "]",
                    trust_floats));
            l.weights.push_back(std::move(r));
            ++ri;
        }
        if (!jl.contains("bias") || !jl["bias"].is_array())
            throw FormatError(where + ".bias", "missing bias vector");
        size_t bi = 0;
        for (const auto& b : jl["bias"])
            l.bias.push_back(
                detail::parse_rat_field(b, where + ".bias[" + std::to_string(bi++) + "]",
                                        trust_floats));
        std::string act = jl.value("activation", std::string());
        if (act == "relu") l.relu = true;
        else if (act == "identity") l.relu = false;
        else throw FormatError(where + ".activation", "expected \"relu\" or \"identity\"");
        net.layers.push_back(std::move(l));
    }
    validate_network(net, warnings);
    return net;
}

inline json network_to_json(const Network& net) {
    json layers = json::array();
    for (const auto& l : net.layers) {
        json rows = json::array();
        for (const auto& r : l.weights) {
            json row = json::array();
            for (const auto& w : r) row.push_back(to_string(w));
            rows.push_back(std::move(row));
        }
        json bias = json::array();
        for (const auto& b : l.bias) bias.push_back(to_string(b));
        layers.push_back(json{{"weights", std::move(rows)},
                              {"bias", std::move(bias)},
                              {"activation", l.relu ? "relu" : "identity"}});
    }
    return json{{"layers", std::move(layers)}};
}

inline Network load_network(const std::string& file, bool trust_floats = false,
                            std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(file);
    if (!in) throw FormatError("", "cannot open " + file);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("", file + ": " + e.what());
    }
    return network_from_json(j, trust_floats, warnings);
}

inline void save_network(const Network& net, const std::string& file) {
    std::ofstream out(file);
    if (!out) throw FormatError("", "cannot write " + file);
    out << network_to_json(net).dump(2) << "\n";
}

// Canonical single-line serialization; certificate digests hash this.
inline std::string canonical_network_text(const Network& net) {
    return network_to_json(net).dump();
}

inline std::vector<Rat> eval_exact(const Network& net, std::vector<Rat> x) {
    if (static_cast<int>(x.size()) != net.input_dim())
        throw DimensionError("eval: input length " + std::to_string(x.size()) +
                             ", network expects " + std::to_string(net.input_dim()));
    for (const Layer& l : net.layers) {
        std::vector<Rat> y(l.rows());
        for (int r = 0; r < l.rows(); ++r) {
            Rat acc = l.bias[r];
            for (int c = 0; c < l.cols(); ++c) acc += l.weights[r][c] * x[c];
            if (l.relu && acc < 0) acc = 0;
            y[r] = acc;
        }
        x = std::move(y);
    }
    return x;
}

inline std::vector<double> eval_float(const Network& net, std::vector<double> x) {
    if (static_cast<int>(x.size()) != net.input_dim())
        throw DimensionError("eval: input length " + std::to_string(x.size()) +
                             ", network expects " + std::to_string(net.input_dim()));
    for (const Layer& l : net.layers) {
        std::vector<double> y(l.rows());
        for (int r = 0; r < l.rows(); ++r) {
            double acc = to_double(l.bias[r]);
            for (int c = 0; c < l.cols(); ++c) acc += to_double(l.weights[r][c]) * x[c];
            y[r] = l.relu && acc < 0 ? 0.0 : acc;
        }
        x = std::move(y);
    }
    return x;
}

inline std::vector<Rat> eval(const Network& net, const std::vector<Rat>& x, EvalMode mode) {
    if (mode == EvalMode::ExactRational) return eval_exact(net, x);
    std::vector<double> xd(x.size());
    for (size_t i = 0; i < x.size(); ++i) xd[i] = to_double(x[i]);
    std::vector<double> yd = eval_float(net, std::move(xd));
    std::vector<Rat> y(yd.size());
    for (size_t i = 0; i < yd.size(); ++i) y[i] = rat_from_double(yd[i]);
    return y;
}

// ---- embedding / unembedding ----

struct AffineDim {
    Rat scale;   // strictly positive
    Rat offset;
};

struct EmbeddingSpec {
    std::vector<AffineDim> input_map;   // e : problem space -> network inputs
    std::vector<AffineDim> output_map;  // u : network outputs -> problem space
};

inline EmbeddingSpec embedding_from_json(const json& j, bool trust_floats = false) {
    auto parse_map = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_array())
            throw FormatError(key, "missing map");
        std::vector<AffineDim> m;
        size_t i = 0;
        for (const auto& d : j[key]) {
            std::string where = std::string(key) + "[" + std::to_string(i++) + "]";
            if (!d.contains("scale") || !d.contains("offset"))
                throw FormatError(where, "needs scale and offset");
            AffineDim a{detail::parse_rat_field(d["scale"], where + ".scale", trust_floats),
                        detail::parse_rat_field(d["offset"], where + ".offset", trust_floats)};
            if (a.scale <= 0)
                throw FormatError(where + ".scale", "must be strictly positive");
            m.push_back(std::move(a));
        }
        if (m.empty()) throw FormatError(key, "empty map");
        return m;
    };
    return EmbeddingSpec{parse_map("input_map"), parse_map("output_map")};
}

inline json embedding_to_json(const EmbeddingSpec& emb) {
    auto dump_map = [](const std::vector<AffineDim>& m) {
        json a = json::array();
        for (const auto& d : m)
            a.push_back(json{{"scale", to_string(d.scale)}, {"offset", to_string(d.offset)}});
        return a;
    };
    return json{{"input_map", dump_map(emb.input_map)},
                {"output_map", dump_map(emb.output_map)}};
}

inline EmbeddingSpec load_embedding(const std::string& file, bool trust_floats = false) {
    std::ifstream in(file);
    if (!in) throw FormatError("", "cannot open " + file);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("", file + ": " + e.what());
    }
    return embedding_from_json(j, trust_floats);
}

inline std::vector<Rat> apply_affine(const std::vector<AffineDim>& m, const std::vector<Rat>& x,
                                     const char* what) {
    if (x.size() != m.size())
        throw DimensionError(std::string(what) + ": got " + std::to_string(x.size()) +
                             " coordinates, map has " + std::to_string(m.size()));
    std::vector<Rat> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = m[i].scale * x[i] + m[i].offset;
    return y;
}

inline std::vector<Rat> embed(const EmbeddingSpec& emb, const std::vector<Rat>& problem_input) {
    return apply_affine(emb.input_map, problem_input, "embed");
}

inline std::vector<Rat> unembed(const EmbeddingSpec& emb, const std::vector<Rat>& net_output) {
    return apply_affine(emb.output_map, net_output, "unembed");
}

// Inverse of embed, for mapping verified-region corners back to problem space.
inline std::vector<Rat> embed_inverse(const EmbeddingSpec& emb, const std::vector<Rat>& x) {
    if (x.size() != emb.input_map.size())
        throw DimensionError("embed_inverse: dimension mismatch");
    std::vector<Rat> y(x.size());
    for (size_t i = 0; i < x.size(); ++i)
        y[i] = (x[i] - emb.input_map[i].offset) / emb.input_map[i].scale;
    return y;
}

inline std::vector<Rat> eval_solution(const Network& net, const EmbeddingSpec& emb,
                                      const std::vector<Rat>& problem_input, EvalMode mode) {
    return unembed(emb, eval(net, embed(emb, problem_input), mode));
}

// ---- double mirror for the training loop ----
//
// Parameter layout per layer: all weights row-major, then the bias. This
// ordering is shared with the autodiff tape and the finite-difference
// oracle in the tests.

struct FloatNet {
    struct FLayer {
        std::vector<std::vector<double>> w;
        std::vector<double> b;
        bool relu;
    };
    std::vector<FLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : (int)layers.front().w[0].size(); }
    int output_dim() const { return layers.empty() ? 0 : (int)layers.back().w.size(); }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& l : layers) n += l.w.size() * l.w[0].size() + l.b.size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> p;
        p.reserve(param_count());
        for (const auto& l : layers) {
            for (const auto& row : l.w) p.insert(p.end(), row.begin(), row.end());
            p.insert(p.end(), l.b.begin(), l.b.end());
        }
        return p;
    }

    void unflatten(const std::vector<double>& p) {
        size_t k = 0;
        for (auto& l : layers) {
            for (auto& row : l.w)
                for (auto& w : row) w = p[k++];
            for (auto& b : l.b) b = p[k++];
        }
    }
};

inline FloatNet to_float_net(const Network& net) {
    FloatNet f;
    for (const auto& l : net.layers) {
        FloatNet::FLayer fl;
        fl.relu = l.relu;
        for (const auto& row : l.weights) {
            std::vector<double> r(row.size());
            for (size_t i = 0; i < row.size(); ++i) r[i] = to_double(row[i]);
            fl.w.push_back(std::move(r));
        }
        fl.b.resize(l.bias.size());
        for (size_t i = 0; i < l.bias.size(); ++i) fl.b[i] = to_double(l.bias[i]);
        f.layers.push_back(std::move(fl));
    }
    return f;
}

// Rounds every parameter to the nearest multiple of 2^-bits. Small dyadic
// weights keep the exact verification arithmetic cheap.
inline Network to_network_quantized(const FloatNet& f, unsigned bits) {
    Network net;
    double s = std::ldexp(1.0, (int)bits);
    auto q = [&](double x) { return dyadic(std::llround(x * s), bits); };
    for (const auto& fl : f.layers) {
        Layer l;
        l.relu = fl.relu;
        for (const auto& row : fl.w) {
            std::vector<Rat> r(row.size());
            for (size_t i = 0; i < row.size(); ++i) r[i] = q(row[i]);
            l.weights.push_back(std::move(r));
        }
        l.bias.resize(fl.b.size());
        for (size_t i = 0; i < fl.b.size(); ++i) l.bias[i] = q(fl.b[i]);
        net.layers.push_back(std::move(l));
    }
    validate_network(net);
    return net;
}

}  // namespace nsp
