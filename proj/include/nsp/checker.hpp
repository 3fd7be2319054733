#pragma once

// Independent certificate checker. Deliberately minimal: it re-parses its
// inputs, recomputes interval bounds and relaxation rows from scratch, and
// for each leaf verifies one linear combination in exact rational
// arithmetic. It runs no LP and no search, and shares no decision code
// with the verifier; only the file formats are common. Everything here is
// exact rational arithmetic.
//
// The row layout recomputed below is the documented certificate contract;
// it must stay in lockstep with the format notes in docs/formats.md.

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nsp/certificate.hpp"

namespace nsp {

struct CheckResult {
    bool accepted = false;
    std::string reason;  // "accepted" or a machine-readable rejection code
    std::string detail;
    long leaves_checked = 0;
    Rat max_multiplier;
};

namespace checker_detail {

struct Row {
    std::vector<Rat> a;
    Rat b;
};

struct Bounds {
    Rat lo, hi;
};

// 0 = unsplit, 1 = active, 2 = inactive
using PhaseVec = std::vector<std::vector<int>>;

inline Rat nonneg(const Rat& v) { return v > 0 ? v : rat(0); }

// interval pass: pre-activation bounds are natural, post-activation bounds
// are refined by the split phase (active keeps [max(lo,0), max(hi,0)],
// inactive pins [0,0]) and flow downstream
inline std::vector<std::vector<Bounds>> bounds_pass(const Network& net,
                                                    const std::vector<Interval>& box,
                                                    const PhaseVec& phase) {
    std::vector<std::vector<Bounds>> pre;
    std::vector<Bounds> cur;
    for (const auto& iv : box) cur.push_back({iv.lo, iv.hi});
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& lay = net.layers[l];
        std::vector<Bounds> p(lay.rows()), post(lay.rows());
        for (int r = 0; r < lay.rows(); ++r) {
            Rat lo = lay.bias[r], hi = lay.bias[r];
            for (int c = 0; c < lay.cols(); ++c) {
                const Rat& w = lay.weights[r][c];
                if (w >= 0) {
                    lo += w * cur[c].lo;
                    hi += w * cur[c].hi;
                } else {
                    lo += w * cur[c].hi;
                    hi += w * cur[c].lo;
                }
            }
            p[r] = {lo, hi};
            if (!lay.relu) {
                post[r] = p[r];
            } else if (phase[l][r] == 2) {
                post[r] = {rat(0), rat(0)};
            } else {
                post[r] = {nonneg(lo), nonneg(hi)};
            }
        }
        pre.push_back(std::move(p));
        cur = std::move(post);
    }
    return pre;
}

// rebuilds the full leaf system in the documented row order
inline std::vector<Row> leaf_rows(const VerifyQuery& q, const PhaseVec& phase) {
    const Network& net = q.net;
    int n_in = net.input_dim();
    auto pre = bounds_pass(net, q.box, phase);

    std::vector<int> z_off(net.layers.size()), y_off(net.layers.size(), -1);
    int nv = n_in;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        z_off[l] = nv;
        nv += net.layers[l].rows();
        if (net.layers[l].relu) {
            y_off[l] = nv;
            nv += net.layers[l].rows();
        }
    }
    std::vector<int> sqv = q.sq_vars();
    std::vector<int> q_var(n_in, -1);
    for (int v : sqv) q_var[v] = nv++;

    std::vector<Row> rows;
    auto add = [&](std::vector<Rat> a, Rat b) { rows.push_back({std::move(a), std::move(b)}); };
    auto zero = [&] { return std::vector<Rat>(nv, rat(0)); };

    for (int i = 0; i < n_in; ++i) {
        auto a = zero();
        a[i] = 1;
        add(std::move(a), q.box[i].hi);
        a = zero();
        a[i] = -1;
        add(std::move(a), Rat(-q.box[i].lo));
    }
    for (const auto& r : q.input_lin) {
        auto a = zero();
        for (int j = 0; j < n_in; ++j) a[j] = r.a[j];
        add(std::move(a), r.b);
    }
    for (int v : sqv) {
        const Rat& lo = q.box[v].lo;
        const Rat& hi = q.box[v].hi;
        auto a = zero();  // x^2 >= 2 lo x - lo^2
        a[v] = 2 * lo;
        a[q_var[v]] = -1;
        add(std::move(a), Rat(lo * lo));
        a = zero();  // x^2 >= 2 hi x - hi^2
        a[v] = 2 * hi;
        a[q_var[v]] = -1;
        add(std::move(a), Rat(hi * hi));
        a = zero();  // x^2 <= (lo+hi) x - lo hi
        a[v] = -(lo + hi);
        a[q_var[v]] = 1;
        add(std::move(a), Rat(-(lo * hi)));
    }
    for (const auto& r : q.input_sq) {
        auto a = zero();
        for (int j = 0; j < n_in; ++j) a[j] = r.lin[j];
        for (const auto& [v, c] : r.sq) a[q_var[v]] = c;
        add(std::move(a), r.rhs);
    }
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& lay = net.layers[l];
        int in_off = l == 0 ? 0 : (net.layers[l - 1].relu ? y_off[l - 1] : z_off[l - 1]);
        for (int r = 0; r < lay.rows(); ++r) {
            int zv = z_off[l] + r;
            auto a = zero();
            a[zv] = 1;
            for (int c = 0; c < lay.cols(); ++c) a[in_off + c] = -lay.weights[r][c];
            add(std::move(a), lay.bias[r]);
            a = zero();
            a[zv] = -1;
            for (int c = 0; c < lay.cols(); ++c) a[in_off + c] = lay.weights[r][c];
            add(std::move(a), Rat(-lay.bias[r]));
            a = zero();
            a[zv] = 1;
            add(std::move(a), pre[l][r].hi);
            a = zero();
            a[zv] = -1;
            add(std::move(a), Rat(-pre[l][r].lo));
            if (!lay.relu) continue;
            int yv = y_off[l] + r;
            auto eq_zy = [&] {
                auto e = zero();
                e[yv] = 1;
                e[zv] = -1;
                add(std::move(e), rat(0));
                e = zero();
                e[yv] = -1;
                e[zv] = 1;
                add(std::move(e), rat(0));
            };
            auto y_zero = [&] {
                auto e = zero();
                e[yv] = 1;
                add(std::move(e), rat(0));
                e = zero();
                e[yv] = -1;
                add(std::move(e), rat(0));
            };
            int ph = phase[l][r];
            if (ph == 1) {
                auto e = zero();
                e[zv] = -1;
                add(std::move(e), rat(0));
                eq_zy();
            } else if (ph == 2) {
                auto e = zero();
                e[zv] = 1;
                add(std::move(e), rat(0));
                y_zero();
            } else if (pre[l][r].hi <= 0) {
                y_zero();
            } else if (pre[l][r].lo >= 0) {
                eq_zy();
            } else {
                const Rat& lo = pre[l][r].lo;
                const Rat& hi = pre[l][r].hi;
                auto e = zero();
                e[yv] = -1;
                add(std::move(e), rat(0));
                e = zero();
                e[zv] = 1;
                e[yv] = -1;
                add(std::move(e), rat(0));
                e = zero();
                e[yv] = hi - lo;
                e[zv] = -hi;
                add(std::move(e), Rat(-(hi * lo)));
            }
        }
    }
    int out_off = z_off.back();
    for (const auto& r : q.violation) {
        auto a = zero();
        for (size_t j = 0; j < r.a.size(); ++j) a[out_off + (int)j] = r.a[j];
        add(std::move(a), r.b);
    }
    return rows;
}

struct Walk {
    const VerifyQuery& q;
    CheckResult res;
    PhaseVec phase;
    std::string path;

    explicit Walk(const VerifyQuery& query) : q(query) {
        phase.resize(q.net.layers.size());
        for (size_t l = 0; l < q.net.layers.size(); ++l)
            phase[l].assign(q.net.layers[l].rows(), 0);
    }

    bool reject(const std::string& reason, const std::string& detail) {
        res.accepted = false;
        res.reason = reason;
        res.detail = detail + (path.empty() ? "" : " at path" + path);
        return false;
    }

    bool leaf(const CertNode& node) {
        std::vector<Row> rows = leaf_rows(q, phase);
        if (node.multipliers.size() != rows.size())
            return reject("leaf-system-mismatch",
                          "leaf has " + std::to_string(node.multipliers.size()) +
                              " multipliers for " + std::to_string(rows.size()) + " rows");
        int nv = rows.empty() ? 0 : (int)rows[0].a.size();
        std::vector<Rat> combo(nv, rat(0));
        Rat rhs = 0;
        for (size_t i = 0; i < rows.size(); ++i) {
            const Rat& m = node.multipliers[i];
            if (m < 0)
                return reject("negative-multiplier",
                              "multiplier " + std::to_string(i) + " is " + to_string(m));
            if (m > res.max_multiplier) res.max_multiplier = m;
            if (m == 0) continue;
            for (int v = 0; v < nv; ++v) combo[v] += m * rows[i].a[v];
            rhs += m * rows[i].b;
        }
        for (int v = 0; v < nv; ++v)
            if (combo[v] != 0)
                return reject("invalid-combination",
                              "combined coefficient on variable " + std::to_string(v) +
                                  " is " + to_string(combo[v]) + ", not 0");
        if (rhs >= 0)
            return reject("invalid-combination",
                          "combined bound is " + to_string(rhs) + ", not negative");
        if (rhs != node.contradiction)
            return reject("invalid-combination",
                          "stated contradiction " + to_string(node.contradiction) +
                              " differs from computed " + to_string(rhs));
        ++res.leaves_checked;
        return true;
    }

    bool walk(const CertNode& node) {
        if (node.leaf()) return leaf(node);
        if (node.layer >= (int)q.net.layers.size())
            return reject("malformed-tree", "split layer out of range");
        if (!q.net.layers[node.layer].relu)
            return reject("malformed-tree", "split on a non-relu layer");
        if (node.neuron >= q.net.layers[node.layer].rows())
            return reject("malformed-tree", "split neuron out of range");
        if (phase[node.layer][node.neuron] != 0)
            return reject("duplicate-split",
                          "layer " + std::to_string(node.layer) + " neuron " +
                              std::to_string(node.neuron) + " split twice on one path");
        std::string mark = " (" + std::to_string(node.layer) + "," +
                           std::to_string(node.neuron) + ")";
        size_t keep = path.size();
        phase[node.layer][node.neuron] = 1;
        path += mark + "+";
        if (!walk(*node.active)) return false;
        phase[node.layer][node.neuron] = 2;
        path.resize(keep);
        path += mark + "-";
        if (!walk(*node.inactive)) return false;
        phase[node.layer][node.neuron] = 0;
        path.resize(keep);
        return true;
    }
};

}  // namespace checker_detail

inline CheckResult check_certificate(const ProofCertificate& cert, const Network& net,
                                     const VerifyQuery& query,
                                     const std::string& query_text) {
    checker_detail::Walk w(query);
    std::string want = certificate_digest(net, query_text);
    if (cert.digest != want) {
        w.reject("digest-mismatch",
                 "certificate digest " + cert.digest + " does not match " + want);
        return w.res;
    }
    if (!cert.tree) {
        w.reject("malformed-tree", "certificate has no tree");
        return w.res;
    }
    if (w.walk(*cert.tree)) {
        w.res.accepted = true;
        w.res.reason = "accepted";
    }
    return w.res;
}

inline CheckResult check_certificate(const ProofCertificate& cert, const Network& net,
                                     const VerifyQuery& query) {
    return check_certificate(cert, net, query, export_query(query));
}

// all three inputs untrusted; parse failures of the certificate map to
// rejection codes, unreadable network/query files stay exceptions
inline CheckResult check_certificate_files(const std::string& cert_path,
                                           const std::string& network_path,
                                           const std::string& query_path) {
    Network net = load_network(network_path);
    std::ifstream qin(query_path);
    if (!qin) throw std::runtime_error("cannot read " + query_path);
    std::stringstream qbuf;
    qbuf << qin.rdbuf();
    std::string query_text = qbuf.str();
    VerifyQuery query = parse_query(query_text, net);
    try {
        ProofCertificate cert = load_certificate(cert_path);
        return check_certificate(cert, net, query, query_text);
    } catch (const CertParseError& e) {
        CheckResult res;
        res.accepted = false;
        res.reason = e.reason;
        res.detail = e.what();
        return res;
    }
}

}  // namespace nsp
