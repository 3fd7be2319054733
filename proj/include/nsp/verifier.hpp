#pragma once

// Complete branch-and-bound verifier over ReLU phases with exact-rational
// LP leaves. A VerifyQuery is the negation of a universally quantified
// property: UNSAT of the query on the region means the property holds.
//
// Leaf linear systems follow a fixed row order (input bounds, input linear
// rows, square relaxations, square rows, per-layer affine/bound/activation
// rows, violation rows); the certificate checker rebuilds the same system
// independently, so any change here is a certificate format change.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "nsp/ast.hpp"
#include "nsp/interval.hpp"
#include "nsp/network.hpp"
#include "nsp/simplex.hpp"

namespace nsp {

struct QueryBuildError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// coeff-weighted squares of input vars plus a linear part:
//   sum sq[v]*x_v^2 + sum lin[j]*x_j  <=  rhs
struct SquareRow {
    std::map<int, Rat> sq;
    std::vector<Rat> lin;
    Rat rhs;
    bool strict = false;
};

struct VerifyQuery {
    Network net;
    std::vector<std::string> input_names;  // reporting only, may be empty
    std::vector<Interval> box;             // per network input
    std::vector<LinRow> input_lin;         // over inputs
    std::vector<SquareRow> input_sq;
    std::vector<LinRow> violation;         // over outputs; conjunction

    // input vars that appear squared anywhere, ascending
    std::vector<int> sq_vars() const {
        std::set<int> s;
        for (const auto& r : input_sq)
            for (const auto& [v, c] : r.sq) s.insert(v);
        return {s.begin(), s.end()};
    }
};

struct Counterexample {
    std::vector<Rat> input;
    std::vector<Rat> output;
    std::string violated;
};

// Split tree produced by a Verified run; leaves carry Farkas witnesses
// over the leaf system built from the path's splits.
struct BnbNode {
    int layer = -1, neuron = -1;  // internal nodes
    std::unique_ptr<BnbNode> active, inactive;
    FarkasWitness witness;  // leaves
    bool leaf() const { return !active && !inactive; }
};

struct VerifyOutcome {
    enum class Status { Verified, Refuted, ResourceLimit };
    Status status = Status::ResourceLimit;
    std::unique_ptr<BnbNode> tree;  // Verified only
    bool boundary_caveat = false;   // Verified, but some closure leaf touched the boundary;
                                    // no certificate in that case
    Counterexample cex;             // Refuted only
    long nodes = 0;
    std::string note;
};

struct BnbLimits {
    long max_splits = 200000;
    double timeout_sec = 0;  // 0 = unlimited
};

// ---- leaf system construction ----

struct LeafSystem {
    LinearSystem sys;
    int n_in = 0, n_out = 0;
    std::vector<int> z_off;            // var index of z[l][0]
    std::vector<int> y_off;            // var index of y[l][0], -1 for identity layers
    std::map<int, int> q_var;          // squared input var -> aux var index
    std::vector<int> in_hi, in_lo;     // row indices per input
    std::vector<std::vector<int>> zb_hi, zb_lo;  // row indices per layer/neuron
    std::vector<std::vector<int>> act_first;     // first activation row, -1 if none
    std::vector<int> violation_row;
};

// The box interval never shrinks during relu branch-and-bound, so the
// input rows and square relaxations are identical across all leaves; only
// activation rows vary with the splits.
inline LeafSystem build_leaf_system(const VerifyQuery& q, const SplitMap& splits,
                                    const IntervalBox& ib) {
    const Network& net = q.net;
    LeafSystem ls;
    ls.n_in = net.input_dim();
    ls.n_out = net.output_dim();

    int nv = ls.n_in;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        ls.z_off.push_back(nv);
        nv += net.layers[l].rows();
        if (net.layers[l].relu) {
            ls.y_off.push_back(nv);
            nv += net.layers[l].rows();
        } else {
            ls.y_off.push_back(-1);
        }
    }
    std::vector<int> sqv = q.sq_vars();
    for (int v : sqv) ls.q_var[v] = nv++;
    ls.sys.n_vars = nv;

    auto zero = [&] { return std::vector<Rat>(nv, rat(0)); };

    // input bounds
    for (int i = 0; i < ls.n_in; ++i) {
        auto a = zero();
        a[i] = 1;
        ls.in_hi.push_back((int)ls.sys.rows.size());
        ls.sys.add(a, q.box[i].hi, false, "in_hi " + std::to_string(i));
        a = zero();
        a[i] = -1;
        ls.in_lo.push_back((int)ls.sys.rows.size());
        ls.sys.add(a, Rat(-q.box[i].lo), false, "in_lo " + std::to_string(i));
    }
    // linear input rows (closures; strict flags kept for point checks)
    for (size_t k = 0; k < q.input_lin.size(); ++k) {
        auto a = zero();
        for (int j = 0; j < ls.n_in; ++j) a[j] = q.input_lin[k].a[j];
        ls.sys.add(a, q.input_lin[k].b, q.input_lin[k].strict, "lin " + std::to_string(k));
    }
    // secant/tangent relaxation rows per squared var, then the square rows
    for (int v : sqv) {
        int qv = ls.q_var[v];
        QuadRelax r = relax_quadratic(q.box[v].lo, q.box[v].hi);
        auto a = zero();  // q >= lo1_a*v + lo1_b  ->  lo1_a*v - q <= -lo1_b
        a[v] = r.lo1_a;
        a[qv] = -1;
        ls.sys.add(a, Rat(-r.lo1_b), false, "sq_t1 " + std::to_string(v));
        a = zero();
        a[v] = r.lo2_a;
        a[qv] = -1;
        ls.sys.add(a, Rat(-r.lo2_b), false, "sq_t2 " + std::to_string(v));
        a = zero();  // q <= up_a*v + up_b
        a[v] = -r.up_a;
        a[qv] = 1;
        ls.sys.add(a, r.up_b, false, "sq_sec " + std::to_string(v));
    }
    for (size_t k = 0; k < q.input_sq.size(); ++k) {
        auto a = zero();
        for (int j = 0; j < ls.n_in; ++j) a[j] = q.input_sq[k].lin[j];
        for (const auto& [v, c] : q.input_sq[k].sq) a[ls.q_var.at(v)] = c;
        ls.sys.add(a, q.input_sq[k].rhs, q.input_sq[k].strict, "sq " + std::to_string(k));
    }
    // layer blocks
    ls.zb_hi.resize(net.layers.size());
    ls.zb_lo.resize(net.layers.size());
    ls.act_first.resize(net.layers.size());
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& lay = net.layers[l];
        int in_off = l == 0 ? 0 : (net.layers[l - 1].relu ? ls.y_off[l - 1] : ls.z_off[l - 1]);
        ls.act_first[l].assign(lay.rows(), -1);
        for (int r = 0; r < lay.rows(); ++r) {
            int zv = ls.z_off[l] + r;
            std::string lr = std::to_string(l) + " " + std::to_string(r);
            // affine pair: z - w·inp = b
            auto a = zero();
            a[zv] = 1;
            for (int c = 0; c < lay.cols(); ++c) a[in_off + c] = -lay.weights[r][c];
            ls.sys.add(a, lay.bias[r], false, "aff+ " + lr);
            for (auto& x : a) x = -x;
            ls.sys.add(a, Rat(-lay.bias[r]), false, "aff- " + lr);
            // natural pre-activation bounds
            const Interval& pre = ib.pre[l][r];
            a = zero();
            a[zv] = 1;
            ls.zb_hi[l].push_back((int)ls.sys.rows.size());
            ls.sys.add(a, pre.hi, false, "zb_hi " + lr);
            a = zero();
            a[zv] = -1;
            ls.zb_lo[l].push_back((int)ls.sys.rows.size());
            ls.sys.add(a, Rat(-pre.lo), false, "zb_lo " + lr);
            if (!lay.relu) continue;
            int yv = ls.y_off[l] + r;
            ls.act_first[l][r] = (int)ls.sys.rows.size();
            Phase ph = splits[l][r];
            auto add_eq_zy = [&] {  // y = z
                auto e = zero();
                e[yv] = 1;
                e[zv] = -1;
                ls.sys.add(e, rat(0), false, "act_yz+ " + lr);
                e = zero();
                e[yv] = -1;
                e[zv] = 1;
                ls.sys.add(e, rat(0), false, "act_yz- " + lr);
            };
            auto add_y0 = [&] {  // y = 0
                auto e = zero();
                e[yv] = 1;
                ls.sys.add(e, rat(0), false, "act_y0+ " + lr);
                e = zero();
                e[yv] = -1;
                ls.sys.add(e, rat(0), false, "act_y0- " + lr);
            };
            if (ph == Phase::Active) {
                auto e = zero();  // z >= 0
                e[zv] = -1;
                ls.sys.add(e, rat(0), false, "act_pos " + lr);
                add_eq_zy();
            } else if (ph == Phase::Inactive) {
                auto e = zero();  // z <= 0
                e[zv] = 1;
                ls.sys.add(e, rat(0), false, "act_neg " + lr);
                add_y0();
            } else if (pre.hi <= 0) {
                add_y0();
            } else if (pre.lo >= 0) {
                add_eq_zy();
            } else {
                // triangle: y >= 0, y >= z, (hi-lo)y - hi z <= -hi lo
                auto e = zero();
                e[yv] = -1;
                ls.sys.add(e, rat(0), false, "act_tri0 " + lr);
                e = zero();
                e[zv] = 1;
                e[yv] = -1;
                ls.sys.add(e, rat(0), false, "act_tri1 " + lr);
                e = zero();
                e[yv] = pre.hi - pre.lo;
                e[zv] = -pre.hi;
                ls.sys.add(e, Rat(-(pre.hi * pre.lo)), false, "act_tri2 " + lr);
            }
        }
    }
    // violation rows over the final layer's z variables
    int out_off = ls.z_off.back();
    for (size_t k = 0; k < q.violation.size(); ++k) {
        auto a = zero();
        for (int j = 0; j < ls.n_out; ++j) a[out_off + j] = q.violation[k].a[j];
        ls.violation_row.push_back((int)ls.sys.rows.size());
        ls.sys.add(a, q.violation[k].b, q.violation[k].strict, "out " + std::to_string(k));
    }
    return ls;
}

// ---- exact point checks against the query itself ----

inline bool satisfies_domain(const VerifyQuery& q, const std::vector<Rat>& x) {
    for (int i = 0; i < (int)q.box.size(); ++i)
        if (x[i] < q.box[i].lo || x[i] > q.box[i].hi) return false;
    for (const LinRow& r : q.input_lin) {
        Rat lhs = 0;
        for (size_t j = 0; j < x.size(); ++j) lhs += r.a[j] * x[j];
        if (r.strict ? !(lhs < r.b) : !(lhs <= r.b)) return false;
    }
    for (const SquareRow& r : q.input_sq) {
        Rat lhs = 0;
        for (size_t j = 0; j < x.size(); ++j) lhs += r.lin[j] * x[j];
        for (const auto& [v, c] : r.sq) lhs += c * x[v] * x[v];
        if (r.strict ? !(lhs < r.rhs) : !(lhs <= r.rhs)) return false;
    }
    return true;
}

inline bool satisfies_violation(const VerifyQuery& q, const std::vector<Rat>& out) {
    for (const LinRow& r : q.violation) {
        Rat lhs = 0;
        for (size_t j = 0; j < out.size(); ++j) lhs += r.a[j] * out[j];
        if (r.strict ? !(lhs < r.b) : !(lhs <= r.b)) return false;
    }
    return true;
}

// true counterexample: in the domain exactly, violating the property exactly
inline bool is_true_violation(const VerifyQuery& q, const std::vector<Rat>& x) {
    if (!satisfies_domain(q, x)) return false;
    return satisfies_violation(q, eval_exact(q.net, x));
}

inline std::string render_row(const std::vector<Rat>& a, const Rat& b, bool strict,
                              const char* var) {
    std::ostringstream os;
    bool first = true;
    for (size_t j = 0; j < a.size(); ++j) {
        if (a[j] == 0) continue;
        if (!first) os << " + ";
        os << to_string(a[j]) << "*" << var << j;
        first = false;
    }
    if (first) os << "0";
    os << (strict ? " < " : " <= ") << to_string(b);
    return os.str();
}

// ---- branch and bound ----

namespace detail {

struct CexFound {
    Counterexample cex;
};
struct LimitHit {
    std::string note;
};

class Bnb {
  public:
    Bnb(const VerifyQuery& q, const BnbLimits& lim)
        : q_(q), lim_(lim), start_(std::chrono::steady_clock::now()) {}

    VerifyOutcome run() {
        VerifyOutcome out;
        SplitMap splits = empty_splits(q_.net);
        try {
            out.tree = explore(splits);
            out.status = VerifyOutcome::Status::Verified;
            if (boundary_) {
                out.boundary_caveat = true;
                out.tree.reset();
                out.note =
                    "violation region touches the property boundary only; verified for the "
                    "strict property, no certificate emitted";
            }
        } catch (const CexFound& c) {
            out.status = VerifyOutcome::Status::Refuted;
            out.cex = c.cex;
        } catch (const LimitHit& l) {
            out.status = VerifyOutcome::Status::ResourceLimit;
            out.note = l.note;
        }
        out.nodes = nodes_;
        return out;
    }

  private:
    const VerifyQuery& q_;
    BnbLimits lim_;
    std::chrono::steady_clock::time_point start_;
    long nodes_ = 0;
    bool boundary_ = false;

    void tick() {
        if (++nodes_ > lim_.max_splits) throw LimitHit{"split limit exceeded"};
        if (lim_.timeout_sec > 0) {
            auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_);
            if (dt.count() > lim_.timeout_sec) throw LimitHit{"timeout"};
        }
    }

    std::unique_ptr<BnbNode> explore(SplitMap& splits) {
        tick();
        IntervalBox ib = interval_propagate(q_.net, q_.box, splits);
        LeafSystem ls = build_leaf_system(q_, splits, ib);

        if (ib.conflict) return conflict_leaf(ls, *ib.conflict);
        if (auto leaf = ibp_prune(ls, ib)) return leaf;

        LpResult lp = lp_feasible(ls.sys);
        if (std::holds_alternative<FarkasWitness>(lp)) {
            auto node = std::make_unique<BnbNode>();
            node->witness = std::get<FarkasWitness>(std::move(lp));
            return node;
        }

        const auto& pt = std::get<LpFeasible>(lp).point;
        std::vector<Rat> x(pt.begin(), pt.begin() + ls.n_in);
        if (is_true_violation(q_, x)) throw_cex(std::move(x));

        // split the widest ambiguous unsplit relu, lowest index on ties
        int bl = -1, br = -1;
        Rat bw;
        for (size_t l = 0; l < q_.net.layers.size(); ++l) {
            if (!q_.net.layers[l].relu) continue;
            for (int r = 0; r < q_.net.layers[l].rows(); ++r) {
                if (splits[l][r] != Phase::None) continue;
                const Interval& pre = ib.pre[l][r];
                if (!(pre.lo < 0 && 0 < pre.hi)) continue;
                Rat w = pre.hi - pre.lo;
                if (bl < 0 || w > bw) {
                    bw = w;
                    bl = (int)l;
                    br = r;
                }
            }
        }
        if (bl >= 0) {
            auto node = std::make_unique<BnbNode>();
            node->layer = bl;
            node->neuron = br;
            splits[bl][br] = Phase::Active;
            node->active = explore(splits);
            splits[bl][br] = Phase::Inactive;
            node->inactive = explore(splits);
            splits[bl][br] = Phase::None;
            return node;
        }

        // fully split: the relu encoding is exact, so spuriousness comes
        // from strictness or the square relaxation
        return settle_leaf(ls);
    }

    [[noreturn]] void throw_cex(std::vector<Rat> x) {
        Counterexample cex;
        cex.output = eval_exact(q_.net, x);
        cex.input = std::move(x);
        if (q_.violation.empty())
            cex.violated = "domain is reachable (property has no output condition)";
        else
            cex.violated = render_row(q_.violation[0].a, q_.violation[0].b,
                                      q_.violation[0].strict, "y");
        throw CexFound{std::move(cex)};
    }

    std::unique_ptr<BnbNode> conflict_leaf(const LeafSystem& ls,
                                           const IntervalBox::Conflict& c) {
        // split row plus the opposing natural bound row sum to 0 <= -gap
        auto node = std::make_unique<BnbNode>();
        node->witness.mult.assign(ls.sys.rows.size(), rat(0));
        int act = ls.act_first[c.layer][c.neuron];
        if (c.phase == Phase::Active) {
            node->witness.mult[act] = 1;  // -z <= 0
            node->witness.mult[ls.zb_hi[c.layer][c.neuron]] = 1;
        } else {
            node->witness.mult[act] = 1;  // z <= 0
            node->witness.mult[ls.zb_lo[c.layer][c.neuron]] = 1;
        }
        Rat contra = 0;
        for (size_t i = 0; i < ls.sys.rows.size(); ++i)
            contra += node->witness.mult[i] * ls.sys.rows[i].b;
        node->witness.contradiction = contra;
        if (!check_witness(ls.sys, node->witness))
            throw std::logic_error("bnb: conflict witness failed recheck");
        return node;
    }

    // interval refutation of one violation conjunct, expressed as a Farkas
    // witness over the output bound rows so every leaf uses the same rule
    std::unique_ptr<BnbNode> ibp_prune(const LeafSystem& ls, const IntervalBox& ib) {
        size_t last = q_.net.layers.size() - 1;
        for (size_t k = 0; k < q_.violation.size(); ++k) {
            const LinRow& row = q_.violation[k];
            Rat lo = 0;
            for (int j = 0; j < ls.n_out; ++j) {
                const Rat& a = row.a[j];
                if (a > 0) lo += a * ib.pre[last][j].lo;
                else if (a < 0) lo += a * ib.pre[last][j].hi;
            }
            if (lo <= row.b) continue;
            auto node = std::make_unique<BnbNode>();
            node->witness.mult.assign(ls.sys.rows.size(), rat(0));
            node->witness.mult[ls.violation_row[k]] = 1;
            for (int j = 0; j < ls.n_out; ++j) {
                const Rat& a = row.a[j];
                if (a > 0) node->witness.mult[ls.zb_lo[last][j]] = a;
                else if (a < 0) node->witness.mult[ls.zb_hi[last][j]] = -a;
            }
            node->witness.contradiction = row.b - lo;
            if (!check_witness(ls.sys, node->witness))
                throw std::logic_error("bnb: interval witness failed recheck");
            return node;
        }
        return nullptr;
    }

    std::unique_ptr<BnbNode> settle_leaf(const LeafSystem& ls) {
        bool any_strict = false;
        for (const auto& r : ls.sys.rows) any_strict |= r.strict;

        if (any_strict) {
            // max slack over the strict rows; 0 means boundary contact only
            LinearSystem aug;
            aug.n_vars = ls.sys.n_vars + 1;
            for (const auto& r : ls.sys.rows) {
                std::vector<Rat> a = r.a;
                a.push_back(r.strict ? rat(1) : rat(0));
                aug.add(std::move(a), r.b);
            }
            std::vector<Rat> cap(aug.n_vars, rat(0));
            cap.back() = 1;
            aug.add(cap, rat(1));
            std::vector<Rat> obj(aug.n_vars, rat(0));
            obj.back() = 1;
            LpOptimum o = lp_maximize(aug, obj);
            if (!o.feasible) throw std::logic_error("bnb: slack LP lost feasibility");
            if (o.value == 0) {
                boundary_ = true;
                auto node = std::make_unique<BnbNode>();  // placeholder leaf, no witness
                return node;
            }
            std::vector<Rat> x(o.argmax.begin(), o.argmax.begin() + ls.n_in);
            if (is_true_violation(q_, x)) throw_cex(std::move(x));
            // strictly feasible in the relaxation yet not a true violation:
            // the square relaxation gap is the only remaining explanation
            if (ls.q_var.empty())
                throw std::logic_error("bnb: strict leaf recheck failed without squares");
        } else if (ls.q_var.empty()) {
            throw std::logic_error("bnb: exact leaf LP point failed semantic recheck");
        }
        sample_for_cex();
        throw LimitHit{
            "square relaxation left an undecided leaf and sampling found no violation"};
    }

    // last-resort hunt inside the true (unrelaxed) region
    void sample_for_cex() {
        std::mt19937_64 rng(12345);
        int n = (int)q_.box.size();
        for (int it = 0; it < 20000; ++it) {
            std::vector<Rat> x(n);
            for (int i = 0; i < n; ++i) {
                long k = (long)(rng() >> 44);  // 20-bit dyadic lattice
                x[i] = q_.box[i].lo + (q_.box[i].hi - q_.box[i].lo) * dyadic(k, 20);
            }
            if (is_true_violation(q_, x)) throw_cex(std::move(x));
        }
    }
};

}  // namespace detail

inline VerifyOutcome bnb_verify(const VerifyQuery& q, const BnbLimits& lim = {}) {
    return detail::Bnb(q, lim).run();
}

// ---- query text format ----
//
// Line-oriented, whitespace-separated, '#' comments. Rationals a/b.
//   Inputs n / Outputs m
//   Names x0..x{n-1}                 optional source-level input names
//   Bound i lo hi
//   Linear a0..a{n-1} rel b          rel in {<=, <}
//   Square s0..s{n-1} a0..a{n-1} rel b    (si multiplies x_i^2)
//   Output c0..c{m-1} rel b
// Parsing export_query output reproduces the query exactly.

inline std::string export_query(const VerifyQuery& q) {
    std::ostringstream os;
    int n = (int)q.box.size();
    os << "# reachability query: find a point in the domain whose outputs satisfy\n";
    os << "# every Output row; UNSAT proves the source property\n";
    os << "Inputs " << n << "\n";
    os << "Outputs " << q.net.output_dim() << "\n";
    if (!q.input_names.empty()) {
        os << "Names";
        for (const auto& s : q.input_names) os << " " << s;
        os << "\n";
    }
    for (int i = 0; i < n; ++i)
        os << "Bound " << i << " " << to_string(q.box[i].lo) << " " << to_string(q.box[i].hi)
           << "\n";
    for (const auto& r : q.input_lin) {
        os << "Linear";
        for (const auto& a : r.a) os << " " << to_string(a);
        os << (r.strict ? " < " : " <= ") << to_string(r.b) << "\n";
    }
    for (const auto& r : q.input_sq) {
        os << "Square";
        for (int i = 0; i < n; ++i) {
            auto it = r.sq.find(i);
            os << " " << (it == r.sq.end() ? "0" : to_string(it->second));
        }
        for (const auto& a : r.lin) os << " " << to_string(a);
        os << (r.strict ? " < " : " <= ") << to_string(r.rhs) << "\n";
    }
    for (int v : q.sq_vars()) {
        QuadRelax rr = relax_quadratic(q.box[v].lo, q.box[v].hi);
        os << "# x" << v << "^2 relaxed: <= " << to_string(rr.up_a) << "*x" << v << " + "
           << to_string(rr.up_b) << ", >= " << to_string(rr.lo1_a) << "*x" << v << " + "
           << to_string(rr.lo1_b) << ", >= " << to_string(rr.lo2_a) << "*x" << v << " + "
           << to_string(rr.lo2_b) << "\n";
    }
    for (const auto& r : q.violation) {
        os << "Output";
        for (const auto& a : r.a) os << " " << to_string(a);
        os << (r.strict ? " < " : " <= ") << to_string(r.b) << "\n";
    }
    return os.str();
}

struct QueryParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline VerifyQuery parse_query(const std::string& text, const Network& net) {
    VerifyQuery q;
    q.net = net;
    int n = -1, m = -1;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto need = [&](bool ok, const std::string& msg) {
        if (!ok) throw QueryParseError("query line " + std::to_string(lineno) + ": " + msg);
    };
    auto get_rat = [&](std::istringstream& ss) {
        std::string tok;
        need(static_cast<bool>(ss >> tok), "missing rational");
        auto r = try_parse_rational(tok);
        need(r.has_value(), "bad rational '" + tok + "'");
        return *r;
    };
    auto get_rel = [&](std::istringstream& ss) {
        std::string tok;
        need(static_cast<bool>(ss >> tok), "missing relation");
        need(tok == "<=" || tok == "<", "bad relation '" + tok + "'");
        return tok == "<";
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string kw;
        if (!(ss >> kw)) continue;
        if (kw == "Inputs") {
            need(static_cast<bool>(ss >> n) && n > 0, "bad input count");
            need(n == net.input_dim(), "input count does not match the network");
            q.box.assign(n, Interval{rat(0), rat(0)});
        } else if (kw == "Outputs") {
            need(static_cast<bool>(ss >> m) && m > 0, "bad output count");
            need(m == net.output_dim(), "output count does not match the network");
        } else if (kw == "Names") {
            need(n > 0, "Names before Inputs");
            q.input_names.clear();
            std::string name;
            while (ss >> name) q.input_names.push_back(name);
            need((int)q.input_names.size() == n, "name count does not match Inputs");
        } else if (kw == "Bound") {
            need(n > 0, "Bound before Inputs");
            int i;
            need(static_cast<bool>(ss >> i) && i >= 0 && i < n, "bad bound index");
            Rat lo = get_rat(ss), hi = get_rat(ss);
            need(lo <= hi, "empty bound interval");
            q.box[i] = Interval{lo, hi};
        } else if (kw == "Linear") {
            need(n > 0, "Linear before Inputs");
            LinRow r;
            for (int i = 0; i < n; ++i) r.a.push_back(get_rat(ss));
            r.strict = get_rel(ss);
            r.b = get_rat(ss);
            q.input_lin.push_back(std::move(r));
        } else if (kw == "Square") {
            need(n > 0, "Square before Inputs");
            SquareRow r;
            for (int i = 0; i < n; ++i) {
                Rat s = get_rat(ss);
                if (s != 0) r.sq[i] = s;
            }
            for (int i = 0; i < n; ++i) r.lin.push_back(get_rat(ss));
            r.strict = get_rel(ss);
            r.rhs = get_rat(ss);
            q.input_sq.push_back(std::move(r));
        } else if (kw == "Output") {
            need(m > 0, "Output before Outputs");
            LinRow r;
            for (int j = 0; j < m; ++j) r.a.push_back(get_rat(ss));
            r.strict = get_rel(ss);
            r.b = get_rat(ss);
            q.violation.push_back(std::move(r));
        } else {
            need(false, "unknown directive '" + kw + "'");
        }
        std::string extra;
        need(!(ss >> extra), "trailing tokens");
    }
    need(n > 0 && m > 0, "missing Inputs/Outputs header");
    return q;
}

inline bool query_equal(const VerifyQuery& a, const VerifyQuery& b) {
    auto rows_eq = [](const std::vector<LinRow>& x, const std::vector<LinRow>& y) {
        if (x.size() != y.size()) return false;
        for (size_t i = 0; i < x.size(); ++i)
            if (x[i].a != y[i].a || x[i].b != y[i].b || x[i].strict != y[i].strict)
                return false;
        return true;
    };
    if (a.box != b.box || a.input_names != b.input_names) return false;
    if (!rows_eq(a.input_lin, b.input_lin) || !rows_eq(a.violation, b.violation)) return false;
    if (a.input_sq.size() != b.input_sq.size()) return false;
    for (size_t i = 0; i < a.input_sq.size(); ++i) {
        const auto& x = a.input_sq[i];
        const auto& y = b.input_sq[i];
        if (x.sq != y.sq || x.lin != y.lin || x.rhs != y.rhs || x.strict != y.strict)
            return false;
    }
    return true;
}

// ---- formula to queries ----

namespace detail {

// NetApply nodes whose arguments are all constants evaluate away
inline TermPtr fold_nets(const TermPtr& t, const std::map<std::string, Network>& nets) {
    switch (t->kind) {
        case Term::Kind::Var:
        case Term::Kind::Const: return t;
        case Term::Kind::Add: return t_add(fold_nets(t->lhs, nets), fold_nets(t->rhs, nets));
        case Term::Kind::Sub: return t_sub(fold_nets(t->lhs, nets), fold_nets(t->rhs, nets));
        case Term::Kind::ScalarMul: return t_smul(t->value, fold_nets(t->lhs, nets));
        case Term::Kind::Square: return t_square(fold_nets(t->lhs, nets));
        case Term::Kind::NetApply: {
            std::vector<TermPtr> args;
            bool all_const = true;
            for (const auto& a : t->args) {
                args.push_back(fold_nets(a, nets));
                all_const &= args.back()->kind == Term::Kind::Const;
            }
            if (all_const) {
                auto it = nets.find(t->name);
                if (it == nets.end())
                    throw QueryBuildError("unknown network '" + t->name + "'");
                std::vector<Rat> x;
                for (const auto& a : args) x.push_back(a->value);
                return t_const(eval_exact(it->second, x)[t->out_index], t->line, t->col);
            }
            return t_apply(t->name, std::move(args), t->out_index, t->line, t->col);
        }
        case Term::Kind::NormDiff: {
            std::vector<TermPtr> a, b;
            for (const auto& x : t->args) a.push_back(fold_nets(x, nets));
            for (const auto& x : t->args2) b.push_back(fold_nets(x, nets));
            return t_normdiff(t->norm, std::move(a), std::move(b), t->line, t->col);
        }
    }
    throw QueryBuildError("unreachable");
}

inline FormulaPtr fold_nets_f(const FormulaPtr& f, const std::map<std::string, Network>& nets) {
    switch (f->kind) {
        case Formula::Kind::Atom:
            return f_atom(f->cmp, fold_nets(f->a, nets), fold_nets(f->b, nets), f->line, f->col);
        case Formula::Kind::And:
        case Formula::Kind::Or:
        case Formula::Kind::Implies:
            return f_binary(f->kind, fold_nets_f(f->l, nets), fold_nets_f(f->r, nets));
        case Formula::Kind::Not: return f_not(fold_nets_f(f->l, nets));
        default: throw QueryBuildError("nested quantifiers cannot be verified");
    }
}

// rewrite norm atoms into boolean combinations of linear atoms
inline FormulaPtr expand_norms(const FormulaPtr& f);

inline FormulaPtr expand_norm_atom(Cmp cmp, const TermPtr& nd, const TermPtr& rhs) {
    // reduce to <= / < by swapping sides is impossible for norms (the norm
    // must stay alone on the left), so handle all four comparisons
    std::vector<TermPtr> diffs;
    for (size_t i = 0; i < nd->args.size(); ++i)
        diffs.push_back(t_sub(nd->args[i], nd->args2[i]));

    bool upper = cmp == Cmp::Le || cmp == Cmp::Lt;  // norm <= rhs: conjunction
    auto join = [&](FormulaPtr a, FormulaPtr b) {
        return upper ? f_and(std::move(a), std::move(b)) : f_or(std::move(a), std::move(b));
    };
    FormulaPtr acc;
    auto emit = [&](const TermPtr& t) {
        FormulaPtr at = f_atom(cmp, t, rhs);
        acc = acc ? join(std::move(acc), std::move(at)) : std::move(at);
    };
    if (nd->norm == NormKind::Linf) {
        for (const auto& d : diffs) {
            emit(d);
            emit(t_smul(rat(-1), d));
        }
    } else {
        // L1: enumerate sign patterns of sum s_i * d_i
        size_t m = diffs.size();
        if (m > 16) throw QueryBuildError("l1_dist over more than 16 components");
        for (size_t bits = 0; bits < (size_t(1) << m); ++bits) {
            TermPtr sum;
            for (size_t i = 0; i < m; ++i) {
                TermPtr d = (bits >> i) & 1 ? t_smul(rat(-1), diffs[i]) : diffs[i];
                sum = sum ? t_add(sum, d) : d;
            }
            emit(sum);
        }
    }
    return acc;
}

inline FormulaPtr expand_norms(const FormulaPtr& f) {
    switch (f->kind) {
        case Formula::Kind::Atom: {
            bool lhs_norm = f->a->kind == Term::Kind::NormDiff;
            bool rhs_norm = f->b->kind == Term::Kind::NormDiff;
            if (lhs_norm && rhs_norm)
                throw QueryBuildError("cannot verify a comparison of two norms");
            if (lhs_norm) return expand_norm_atom(f->cmp, f->a, f->b);
            if (rhs_norm) {
                // a cmp norm  ==  norm cmp' a with the comparison mirrored
                Cmp c = f->cmp == Cmp::Le ? Cmp::Ge
                        : f->cmp == Cmp::Lt ? Cmp::Gt
                        : f->cmp == Cmp::Ge ? Cmp::Le
                                            : Cmp::Lt;
                return expand_norm_atom(c, f->b, f->a);
            }
            return f;
        }
        case Formula::Kind::And:
        case Formula::Kind::Or:
        case Formula::Kind::Implies:
            return f_binary(f->kind, expand_norms(f->l), expand_norms(f->r));
        case Formula::Kind::Not: return f_not(expand_norms(f->l));
        default: throw QueryBuildError("nested quantifiers cannot be verified");
    }
}

inline Cmp negate_cmp(Cmp c) {
    switch (c) {
        case Cmp::Le: return Cmp::Gt;
        case Cmp::Lt: return Cmp::Ge;
        case Cmp::Ge: return Cmp::Lt;
        case Cmp::Gt: return Cmp::Le;
    }
    return Cmp::Le;
}

// negation normal form with atoms as leaves
inline FormulaPtr nnf(const FormulaPtr& f, bool neg) {
    switch (f->kind) {
        case Formula::Kind::Atom:
            return neg ? f_atom(negate_cmp(f->cmp), f->a, f->b, f->line, f->col) : f;
        case Formula::Kind::Not: return nnf(f->l, !neg);
        case Formula::Kind::And: {
            auto l = nnf(f->l, neg), r = nnf(f->r, neg);
            return neg ? f_or(std::move(l), std::move(r)) : f_and(std::move(l), std::move(r));
        }
        case Formula::Kind::Or: {
            auto l = nnf(f->l, neg), r = nnf(f->r, neg);
            return neg ? f_and(std::move(l), std::move(r)) : f_or(std::move(l), std::move(r));
        }
        case Formula::Kind::Implies:
            // P => Q  ==  not P or Q
            if (!neg) return f_or(nnf(f->l, true), nnf(f->r, false));
            return f_and(nnf(f->l, false), nnf(f->r, true));
        default: throw QueryBuildError("nested quantifiers cannot be verified");
    }
}

inline void dnf(const FormulaPtr& f, std::vector<std::vector<FormulaPtr>>& out) {
    if (f->kind == Formula::Kind::Atom) {
        out.push_back({f});
        return;
    }
    if (f->kind == Formula::Kind::Or) {
        dnf(f->l, out);
        dnf(f->r, out);
        return;
    }
    if (f->kind == Formula::Kind::And) {
        std::vector<std::vector<FormulaPtr>> ls, rs;
        dnf(f->l, ls);
        dnf(f->r, rs);
        for (const auto& a : ls)
            for (const auto& b : rs) {
                std::vector<FormulaPtr> c = a;
                c.insert(c.end(), b.begin(), b.end());
                out.push_back(std::move(c));
            }
        return;
    }
    throw QueryBuildError("formula not in negation normal form");
}

struct NetSig {
    std::string name;
    std::vector<std::string> args;
    bool operator==(const NetSig&) const = default;
};

inline void collect_sigs(const TermPtr& t, std::vector<NetSig>& sigs) {
    switch (t->kind) {
        case Term::Kind::NetApply: {
            NetSig s;
            s.name = t->name;
            for (const auto& a : t->args) {
                if (a->kind != Term::Kind::Var)
                    throw QueryBuildError(
                        "network arguments must be quantifier variables (or all constants)");
                s.args.push_back(a->name);
            }
            for (const auto& prev : sigs)
                if (!(prev == s))
                    throw QueryBuildError(
                        "all network applications must share one argument list");
            if (sigs.empty()) sigs.push_back(std::move(s));
            for (const auto& a : t->args) collect_sigs(a, sigs);
            break;
        }
        case Term::Kind::Add:
        case Term::Kind::Sub:
            collect_sigs(t->lhs, sigs);
            collect_sigs(t->rhs, sigs);
            break;
        case Term::Kind::ScalarMul:
        case Term::Kind::Square: collect_sigs(t->lhs, sigs); break;
        case Term::Kind::NormDiff:
            for (const auto& a : t->args) collect_sigs(a, sigs);
            for (const auto& a : t->args2) collect_sigs(a, sigs);
            break;
        default: break;
    }
}

struct Decomp {
    std::map<int, Rat> in_lin;  // input index -> coeff
    std::map<int, Rat> in_sq;   // input index -> coeff on its square
    std::map<int, Rat> out;     // output index -> coeff
    Rat c;
};

inline void decompose(const TermPtr& t, const Rat& mult, const std::map<std::string, int>& vmap,
                      const NetSig* sig, Decomp& d) {
    switch (t->kind) {
        case Term::Kind::Const: d.c += mult * t->value; return;
        case Term::Kind::Var: {
            auto it = vmap.find(t->name);
            if (it == vmap.end())
                throw QueryBuildError("variable '" + t->name + "' does not feed the network");
            d.in_lin[it->second] += mult;
            return;
        }
        case Term::Kind::Add:
            decompose(t->lhs, mult, vmap, sig, d);
            decompose(t->rhs, mult, vmap, sig, d);
            return;
        case Term::Kind::Sub:
            decompose(t->lhs, mult, vmap, sig, d);
            decompose(t->rhs, Rat(-mult), vmap, sig, d);
            return;
        case Term::Kind::ScalarMul:
            decompose(t->lhs, Rat(mult * t->value), vmap, sig, d);
            return;
        case Term::Kind::Square: {
            if (t->lhs->kind != Term::Kind::Var)
                throw QueryBuildError("only squares of plain variables can be verified");
            auto it = vmap.find(t->lhs->name);
            if (it == vmap.end())
                throw QueryBuildError("variable '" + t->lhs->name +
                                      "' does not feed the network");
            d.in_sq[it->second] += mult;
            return;
        }
        case Term::Kind::NetApply: {
            if (!sig || t->name != sig->name)
                throw QueryBuildError("unexpected network application of '" + t->name + "'");
            d.out[t->out_index] += mult;
            return;
        }
        case Term::Kind::NormDiff:
            throw QueryBuildError("norms must appear alone on one side of a comparison");
    }
}

// atom -> canonical row over (inputs, squares, outputs): lhs <= rhs form
struct ClassifiedRow {
    Decomp d;       // moved-from atom difference, <= 0 form
    bool strict;
};

inline ClassifiedRow atom_row(const FormulaPtr& atom, const std::map<std::string, int>& vmap,
                              const NetSig* sig) {
    Decomp d;
    decompose(atom->a, rat(1), vmap, sig, d);
    decompose(atom->b, rat(-1), vmap, sig, d);
    bool flip = atom->cmp == Cmp::Ge || atom->cmp == Cmp::Gt;
    if (flip) {
        for (auto& [k, v] : d.in_lin) v = -v;
        for (auto& [k, v] : d.in_sq) v = -v;
        for (auto& [k, v] : d.out) v = -v;
        d.c = -d.c;
    }
    bool strict = atom->cmp == Cmp::Lt || atom->cmp == Cmp::Gt;
    return ClassifiedRow{std::move(d), strict};
}

}  // namespace detail

// Compiles a universally quantified property into one query per disjunct of
// the negated body. UNSAT of every query proves the property.
inline std::vector<VerifyQuery> formula_to_queries(const FormulaPtr& prop,
                                                   const std::map<std::string, Network>& nets) {
    using namespace detail;
    if (prop->kind == Formula::Kind::Exists)
        throw QueryBuildError("only universal properties can be verified");
    if (prop->kind != Formula::Kind::Forall)
        throw QueryBuildError("property must be universally quantified");

    FormulaPtr body = expand_norms(fold_nets_f(prop->body, nets));

    std::vector<NetSig> sigs;
    std::function<void(const FormulaPtr&)> walk = [&](const FormulaPtr& f) {
        if (f->kind == Formula::Kind::Atom) {
            collect_sigs(f->a, sigs);
            collect_sigs(f->b, sigs);
        } else if (f->kind == Formula::Kind::Not) {
            walk(f->l);
        } else {
            walk(f->l);
            walk(f->r);
        }
    };
    walk(body);
    if (sigs.empty())
        throw QueryBuildError("property does not reference a network");
    const NetSig& sig = sigs[0];
    auto nit = nets.find(sig.name);
    if (nit == nets.end()) throw QueryBuildError("unknown network '" + sig.name + "'");
    const Network& net = nit->second;

    // input i of the query is quantifier variable sig.args[i]
    std::map<std::string, int> vmap;
    for (size_t i = 0; i < sig.args.size(); ++i) {
        if (!vmap.emplace(sig.args[i], (int)i).second)
            throw QueryBuildError("network arguments must be distinct variables");
    }
    std::map<std::string, int> qpos;
    for (size_t i = 0; i < prop->vars.size(); ++i) qpos[prop->vars[i]] = (int)i;
    for (const auto& v : prop->vars)
        if (!vmap.count(v))
            throw QueryBuildError("quantified variable '" + v + "' does not feed the network");

    VerifyQuery base;
    base.net = net;
    base.input_names = sig.args;
    for (const auto& a : sig.args) {
        auto it = qpos.find(a);
        if (it == qpos.end())
            throw QueryBuildError("network argument '" + a + "' is not quantified here");
        base.box.push_back(Interval{prop->dom.box[it->second].first,
                                    prop->dom.box[it->second].second});
    }

    int n_in = (int)base.box.size();
    auto add_row = [&](VerifyQuery& q, const ClassifiedRow& row, bool from_domain) {
        const Decomp& d = row.d;
        bool has_out = !d.out.empty();
        bool has_sq = !d.in_sq.empty();
        bool has_in = !d.in_lin.empty();
        if (has_out && (has_sq || has_in))
            throw QueryBuildError(
                "a comparison may constrain inputs or outputs, not both");
        if (has_out && from_domain)
            throw QueryBuildError("domain constraints cannot mention network outputs");
        if (has_out) {
            LinRow r;
            r.a.assign(net.output_dim(), rat(0));
            for (const auto& [j, c] : d.out) r.a[j] = c;
            r.b = -d.c;
            r.strict = row.strict;
            q.violation.push_back(std::move(r));
        } else if (has_sq) {
            SquareRow r;
            r.lin.assign(n_in, rat(0));
            for (const auto& [j, c] : d.in_lin) r.lin[j] = c;
            r.sq = d.in_sq;
            r.rhs = -d.c;
            r.strict = row.strict;
            q.input_sq.push_back(std::move(r));
        } else if (has_in) {
            LinRow r;
            r.a.assign(n_in, rat(0));
            for (const auto& [j, c] : d.in_lin) r.a[j] = c;
            r.b = -d.c;
            r.strict = row.strict;
            q.input_lin.push_back(std::move(r));
        } else {
            // constant comparison: either trivially true (drop) or the whole
            // conjunct is unsatisfiable (flagged by caller via empty marker)
            bool holds = row.strict ? d.c < 0 : d.c <= 0;
            if (!holds) throw QueryBuildError("__constant_false__");
        }
    };

    for (const auto& sc : prop->dom.side_constraints) {
        FormulaPtr folded = expand_norms(fold_nets_f(sc, nets));
        if (folded->kind != Formula::Kind::Atom)
            throw QueryBuildError("side constraints must be plain comparisons");
        add_row(base, atom_row(folded, vmap, &sig), true);
    }

    std::vector<std::vector<FormulaPtr>> disjuncts;
    dnf(nnf(body, /*neg=*/true), disjuncts);

    std::vector<VerifyQuery> out;
    for (const auto& conj : disjuncts) {
        VerifyQuery q = base;
        bool impossible = false;
        for (const auto& atom : conj) {
            try {
                add_row(q, atom_row(atom, vmap, &sig), false);
            } catch (const QueryBuildError& e) {
                if (std::string(e.what()) == "__constant_false__") {
                    impossible = true;
                    break;
                }
                throw;
            }
        }
        if (!impossible) out.push_back(std::move(q));
    }
    return out;
}

}  // namespace nsp
