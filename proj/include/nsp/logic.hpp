#pragma once

// Quantitative interpretation of property formulas as training losses.
//
// A formula compiles into two parallel trees that share scalar subexpressions
// and quantifier ids: a loss tree whose value drives gradient descent, and a
// boolean mirror giving the exact satisfaction semantics at the same sample
// points. Under the Lawvere interpretation the two are linked by
// construction: the loss is 0 at a sample set exactly when the mirror accepts
// every sampled point. Strict comparisons are closed in the mirror (a hinge
// loss cannot distinguish a = b from a < b); gate conditions keep them
// strict, since they are evaluated as booleans, not as losses.

#include <nsp/ast.hpp>
#include <nsp/network.hpp>
#include <nsp/rational.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace nsp {

enum class Logic { Godel, Lukasiewicz, LawvereLoss };
enum class QuantMode { MinMax, PMean };

struct LogicConfig {
    Logic logic = Logic::LawvereLoss;
    QuantMode quant = QuantMode::MinMax;
    double p = 8;          // PMean exponent magnitude; the sign is per quantifier
    Rat tau = rat(1, 10);  // atom smoothing width in the [0,1] logics; 0 = sharp
    int sample_count = 512;
    std::uint64_t seed = 0;
    // The Lawvere quantale multiplies truth values, but on losses (0 = true)
    // multiplication lets one satisfied conjunct erase every other violation,
    // so conjunction defaults to addition, which keeps falsity monotone.
    bool lawvere_mul_and = false;
};

struct UnsupportedConstruct : std::runtime_error {
    int line, col;
    UnsupportedConstruct(const std::string& msg, int l, int c)
        : std::runtime_error(msg + " (line " + std::to_string(l) + ", col " +
                             std::to_string(c) + ")"),
          line(l),
          col(c) {}
};

struct SamplingExhausted : std::runtime_error {
    std::size_t accepted;
    long attempts;
    SamplingExhausted(std::size_t acc, long att)
        : std::runtime_error("domain sampling exhausted: " + std::to_string(acc) +
                             " points accepted in " + std::to_string(att) + " attempts"),
          accepted(acc),
          attempts(att) {}
};

struct LossExpr;
using LossExprPtr = std::shared_ptr<const LossExpr>;
struct BoolExpr;
using BoolExprPtr = std::shared_ptr<const BoolExpr>;

// Scalar expression over sampled coordinates and one network's outputs.
// Aggregate folds its body over every sample of one quantifier; Gate applies
// its body only where the condition holds (antecedent filtering) and carries
// no gradient through the condition. Ties in Min/Max/Hinge/Clamp01 take the
// first argument's branch so subgradients are deterministic.
struct LossExpr {
    enum class Kind {
        Const,
        Coord,  // sampled coordinate
        Net,    // one network output at compiled argument values
        Add,
        Sub,
        Mul,
        Hinge,     // max(0, a)
        Min,       // binary
        Max,       // binary
        Clamp01,   // clamp(a, 0, 1)
        OneMinus,  // 1 - a
        Gate,      // cond ? a : b
        Aggregate,
    };
    enum class Agg { Min, Max, Sum, PMean };

    Kind kind;
    Rat value;                      // Const
    int qid = -1;                   // Coord, Aggregate
    int coord = -1;                 // Coord
    int out_index = 0;              // Net
    std::vector<LossExprPtr> args;  // Net inputs
    LossExprPtr a, b;
    BoolExprPtr cond;          // Gate
    Agg agg = Agg::Sum;        // Aggregate
    double p = 0;              // Aggregate: signed PMean exponent
};

// Exact boolean counterpart; atom sides reuse the scalar expression trees.
struct BoolExpr {
    enum class Kind { Atom, And, Or, Not, All, Any };
    Kind kind;
    Cmp cmp = Cmp::Le;          // Atom
    bool exact_strict = false;  // Atom: keep < and > strict
    LossExprPtr a, b;           // Atom sides
    BoolExprPtr l, r;           // And/Or; Not/All/Any use l
    int qid = -1;               // All, Any
};

struct QuantInfo {
    std::vector<std::string> vars;
    QuantDomain dom;
    bool universal = true;
    // Regression data enters as a pseudo-quantifier whose sample set is fixed;
    // draw_samples copies it verbatim instead of resampling.
    std::vector<std::vector<Rat>> fixed;
};

struct Samples {
    std::vector<std::vector<std::vector<Rat>>> per_quant;  // qid -> sample -> coord
};

struct LossTerm {
    LossExprPtr loss;
    BoolExprPtr mirror;  // exact satisfaction at the same samples
    std::vector<QuantInfo> quants;
    LogicConfig cfg;
    FormulaPtr source;
    std::string net_name;  // sole network referenced, empty if none
};

// M_p of nonnegative values; the p -> -inf / +inf limits are min and max. A
// zero value with negative p is already the min limit, returned directly so
// 0^p never evaluates.
inline double power_mean(const std::vector<double>& v, double p) {
    if (p < 0)
        for (double x : v)
            if (x == 0) return 0;
    double s = 0;
    for (double x : v) s += std::pow(x, p);
    return std::pow(s / (double)v.size(), 1.0 / p);
}

namespace logic_detail {

inline LossExprPtr lx(LossExpr e) { return std::make_shared<LossExpr>(std::move(e)); }

inline LossExprPtr lx_const(Rat v) {
    LossExpr e;
    e.kind = LossExpr::Kind::Const;
    e.value = std::move(v);
    return lx(std::move(e));
}

inline LossExprPtr lx1(LossExpr::Kind k, LossExprPtr a) {
    LossExpr e;
    e.kind = k;
    e.a = std::move(a);
    return lx(std::move(e));
}

inline LossExprPtr lx2(LossExpr::Kind k, LossExprPtr a, LossExprPtr b) {
    LossExpr e;
    e.kind = k;
    e.a = std::move(a);
    e.b = std::move(b);
    return lx(std::move(e));
}

inline BoolExprPtr bx(BoolExpr e) { return std::make_shared<BoolExpr>(std::move(e)); }

struct Compiler {
    LogicConfig cfg;
    std::vector<QuantInfo> quants;
    std::map<const Formula*, int> qid_of;
    std::map<std::string, std::pair<int, int>> env;  // var -> (qid, coord)
    std::string net_name;

    // Quantifier ids are assigned in one pre-pass so the loss tree and the
    // boolean mirror agree on which sample set each variable reads.
    void assign_qids(const FormulaPtr& f) {
        switch (f->kind) {
            case Formula::Kind::Atom:
                return;
            case Formula::Kind::Not:
                assign_qids(f->l);
                return;
            case Formula::Kind::And:
            case Formula::Kind::Or:
            case Formula::Kind::Implies:
                assign_qids(f->l);
                assign_qids(f->r);
                return;
            case Formula::Kind::Forall:
            case Formula::Kind::Exists: {
                if (!qid_of.count(f.get())) {
                    qid_of[f.get()] = (int)quants.size();
                    QuantInfo q;
                    q.vars = f->vars;
                    q.dom = f->dom;
                    q.universal = f->kind == Formula::Kind::Forall;
                    quants.push_back(std::move(q));
                }
                assign_qids(f->body);
                return;
            }
        }
    }

    LossExprPtr scalar(const TermPtr& t) {
        switch (t->kind) {
            case Term::Kind::Var: {
                auto it = env.find(t->name);
                if (it == env.end())
                    throw UnsupportedConstruct("unbound variable '" + t->name + "'", t->line,
                                               t->col);
                LossExpr e;
                e.kind = LossExpr::Kind::Coord;
                e.qid = it->second.first;
                e.coord = it->second.second;
                return lx(std::move(e));
            }
            case Term::Kind::Const:
                return lx_const(t->value);
            case Term::Kind::Add:
                return lx2(LossExpr::Kind::Add, scalar(t->lhs), scalar(t->rhs));
            case Term::Kind::Sub:
                return lx2(LossExpr::Kind::Sub, scalar(t->lhs), scalar(t->rhs));
            case Term::Kind::ScalarMul:
                return lx2(LossExpr::Kind::Mul, lx_const(t->value), scalar(t->lhs));
            case Term::Kind::Square: {
                LossExprPtr s = scalar(t->lhs);
                return lx2(LossExpr::Kind::Mul, s, s);
            }
            case Term::Kind::NetApply: {
                if (net_name.empty()) net_name = t->name;
                if (net_name != t->name)
                    throw UnsupportedConstruct(
                        "loss compilation supports a single network per property", t->line,
                        t->col);
                LossExpr e;
                e.kind = LossExpr::Kind::Net;
                e.out_index = t->out_index;
                for (const auto& a : t->args) e.args.push_back(scalar(a));
                return lx(std::move(e));
            }
            case Term::Kind::NormDiff: {
                LossExprPtr acc;
                for (size_t i = 0; i < t->args.size(); ++i) {
                    LossExprPtr d =
                        lx2(LossExpr::Kind::Sub, scalar(t->args[i]), scalar(t->args2[i]));
                    LossExprPtr ad =
                        lx2(LossExpr::Kind::Max, d,
                            lx2(LossExpr::Kind::Sub, lx_const(rat(0)), d));
                    if (!acc)
                        acc = ad;
                    else
                        acc = lx2(t->norm == NormKind::Linf ? LossExpr::Kind::Max
                                                            : LossExpr::Kind::Add,
                                  acc, ad);
                }
                return acc;
            }
        }
        throw std::logic_error("scalar: unreachable");
    }

    // lhs - rhs oriented so the atom reads d <= 0
    LossExprPtr atom_diff(const FormulaPtr& f) {
        LossExprPtr av = scalar(f->a), bv = scalar(f->b);
        if (f->cmp == Cmp::Le || f->cmp == Cmp::Lt)
            return lx2(LossExpr::Kind::Sub, std::move(av), std::move(bv));
        return lx2(LossExpr::Kind::Sub, std::move(bv), std::move(av));
    }

    BoolExprPtr batom(const FormulaPtr& f, bool exact_strict) {
        BoolExpr e;
        e.kind = BoolExpr::Kind::Atom;
        e.cmp = f->cmp;
        e.exact_strict = exact_strict;
        e.a = scalar(f->a);
        e.b = scalar(f->b);
        return bx(std::move(e));
    }

    LossExprPtr atom01(const FormulaPtr& f) {
        if (cfg.tau == 0) {
            // sharp indicator, the tau -> 0 limit; for semantic tests only
            LossExpr e;
            e.kind = LossExpr::Kind::Gate;
            e.cond = batom(f, false);
            e.a = lx_const(rat(1));
            e.b = lx_const(rat(0));
            return lx(std::move(e));
        }
        LossExprPtr h = lx1(LossExpr::Kind::Hinge, atom_diff(f));
        LossExprPtr scaled = lx2(LossExpr::Kind::Mul, lx_const(Rat(1 / cfg.tau)), std::move(h));
        return lx1(LossExpr::Kind::Clamp01, lx1(LossExpr::Kind::OneMinus, std::move(scaled)));
    }

    void push_vars(const Formula* f, int qid) {
        for (size_t i = 0; i < f->vars.size(); ++i) env[f->vars[i]] = {qid, (int)i};
    }
    void pop_vars(const Formula* f) {
        for (const auto& v : f->vars) env.erase(v);
    }

    LossExprPtr loss(const FormulaPtr& f) {
        bool lawvere = cfg.logic == Logic::LawvereLoss;
        switch (f->kind) {
            case Formula::Kind::Atom:
                return lawvere ? lx1(LossExpr::Kind::Hinge, atom_diff(f)) : atom01(f);
            case Formula::Kind::And: {
                LossExprPtr a = loss(f->l), b = loss(f->r);
                switch (cfg.logic) {
                    case Logic::Godel:
                        return lx2(LossExpr::Kind::Min, std::move(a), std::move(b));
                    case Logic::Lukasiewicz:
                        return lx1(LossExpr::Kind::Hinge,
                                   lx2(LossExpr::Kind::Sub,
                                       lx2(LossExpr::Kind::Add, std::move(a), std::move(b)),
                                       lx_const(rat(1))));
                    case Logic::LawvereLoss:
                        return lx2(cfg.lawvere_mul_and ? LossExpr::Kind::Mul
                                                       : LossExpr::Kind::Add,
                                   std::move(a), std::move(b));
                }
                break;
            }
            case Formula::Kind::Or: {
                LossExprPtr a = loss(f->l), b = loss(f->r);
                switch (cfg.logic) {
                    case Logic::Godel:
                        return lx2(LossExpr::Kind::Max, std::move(a), std::move(b));
                    case Logic::Lukasiewicz:
                        return lx2(LossExpr::Kind::Min, lx_const(rat(1)),
                                   lx2(LossExpr::Kind::Add, std::move(a), std::move(b)));
                    case Logic::LawvereLoss:
                        return lx2(LossExpr::Kind::Min, std::move(a), std::move(b));
                }
                break;
            }
            case Formula::Kind::Not:
                if (lawvere)
                    throw UnsupportedConstruct(
                        "negation has no interpretation in the Lawvere loss logic", f->line,
                        f->col);
                return lx1(LossExpr::Kind::OneMinus, loss(f->l));
            case Formula::Kind::Implies: {
                if (lawvere) {
                    LossExpr e;
                    e.kind = LossExpr::Kind::Gate;
                    e.cond = boolean(f->l, true);
                    e.a = loss(f->r);
                    e.b = lx_const(rat(0));
                    return lx(std::move(e));
                }
                return loss(f_or(f_not(f->l), f->r));
            }
            case Formula::Kind::Forall:
            case Formula::Kind::Exists: {
                int qid = qid_of.at(f.get());
                push_vars(f.get(), qid);
                LossExprPtr body = loss(f->body);
                pop_vars(f.get());
                bool forall = f->kind == Formula::Kind::Forall;
                LossExpr e;
                e.kind = LossExpr::Kind::Aggregate;
                e.qid = qid;
                e.a = std::move(body);
                if (cfg.quant == QuantMode::MinMax) {
                    if (lawvere)
                        e.agg = forall ? LossExpr::Agg::Sum : LossExpr::Agg::Min;
                    else
                        e.agg = forall ? LossExpr::Agg::Min : LossExpr::Agg::Max;
                } else {
                    e.agg = LossExpr::Agg::PMean;
                    double mag = std::abs(cfg.p);
                    // toward min in the [0,1] logics, toward max on losses
                    if (lawvere)
                        e.p = forall ? mag : -mag;
                    else
                        e.p = forall ? -mag : mag;
                }
                return lx(std::move(e));
            }
        }
        throw std::logic_error("loss: unreachable");
    }

    BoolExprPtr boolean(const FormulaPtr& f, bool exact_strict) {
        switch (f->kind) {
            case Formula::Kind::Atom:
                return batom(f, exact_strict);
            case Formula::Kind::And:
            case Formula::Kind::Or: {
                BoolExpr e;
                e.kind = f->kind == Formula::Kind::And ? BoolExpr::Kind::And
                                                       : BoolExpr::Kind::Or;
                e.l = boolean(f->l, exact_strict);
                e.r = boolean(f->r, exact_strict);
                return bx(std::move(e));
            }
            case Formula::Kind::Not: {
                BoolExpr e;
                e.kind = BoolExpr::Kind::Not;
                e.l = boolean(f->l, exact_strict);
                return bx(std::move(e));
            }
            case Formula::Kind::Implies: {
                BoolExpr n;
                n.kind = BoolExpr::Kind::Not;
                n.l = boolean(f->l, true);  // matches the loss tree's gate condition
                BoolExpr e;
                e.kind = BoolExpr::Kind::Or;
                e.l = bx(std::move(n));
                e.r = boolean(f->r, exact_strict);
                return bx(std::move(e));
            }
            case Formula::Kind::Forall:
            case Formula::Kind::Exists: {
                int qid = qid_of.at(f.get());
                push_vars(f.get(), qid);
                BoolExprPtr body = boolean(f->body, exact_strict);
                pop_vars(f.get());
                BoolExpr e;
                e.kind = f->kind == Formula::Kind::Forall ? BoolExpr::Kind::All
                                                          : BoolExpr::Kind::Any;
                e.qid = qid;
                e.l = std::move(body);
                return bx(std::move(e));
            }
        }
        throw std::logic_error("boolean: unreachable");
    }
};

}  // namespace logic_detail

inline LossTerm compile_loss(const FormulaPtr& f, const LogicConfig& cfg) {
    if (cfg.quant == QuantMode::PMean && (cfg.p == 0 || !std::isfinite(cfg.p)))
        throw std::invalid_argument("p-mean exponent must be finite and nonzero");
    if (cfg.tau < 0) throw std::invalid_argument("atom sharpness must be nonnegative");
    logic_detail::Compiler c;
    c.cfg = cfg;
    c.assign_qids(f);
    LossTerm t;
    t.loss = c.loss(f);
    t.mirror = c.boolean(f, false);
    t.quants = std::move(c.quants);
    t.cfg = cfg;
    t.source = f;
    t.net_name = c.net_name;
    return t;
}

// ---- domain sampling ----

namespace logic_detail {

inline Rat eval_ground(const TermPtr& t, const std::map<std::string, Rat>& env) {
    switch (t->kind) {
        case Term::Kind::Var: {
            auto it = env.find(t->name);
            if (it == env.end())
                throw UnsupportedConstruct("unbound variable '" + t->name + "'", t->line,
                                           t->col);
            return it->second;
        }
        case Term::Kind::Const:
            return t->value;
        case Term::Kind::Add:
            return eval_ground(t->lhs, env) + eval_ground(t->rhs, env);
        case Term::Kind::Sub:
            return eval_ground(t->lhs, env) - eval_ground(t->rhs, env);
        case Term::Kind::ScalarMul:
            return t->value * eval_ground(t->lhs, env);
        case Term::Kind::Square: {
            Rat v = eval_ground(t->lhs, env);
            return Rat(v * v);
        }
        case Term::Kind::NormDiff: {
            Rat acc;
            for (size_t i = 0; i < t->args.size(); ++i) {
                Rat d = eval_ground(t->args[i], env) - eval_ground(t->args2[i], env);
                if (d < 0) d = -d;
                if (t->norm == NormKind::L1)
                    acc += d;
                else if (i == 0 || d > acc)
                    acc = d;
            }
            return acc;
        }
        case Term::Kind::NetApply:
            throw UnsupportedConstruct("sampling constraints must be network-free", t->line,
                                       t->col);
    }
    throw std::logic_error("eval_ground: unreachable");
}

inline bool holds_cmp(Cmp c, const Rat& a, const Rat& b, bool exact_strict) {
    switch (c) {
        case Cmp::Le:
            return a <= b;
        case Cmp::Lt:
            return exact_strict ? a < b : a <= b;
        case Cmp::Ge:
            return a >= b;
        case Cmp::Gt:
            return exact_strict ? a > b : a >= b;
    }
    return false;
}

}  // namespace logic_detail

// Uniform points from the box, rejection-filtered by the side constraints
// (evaluated exactly; strictness is respected). Deterministic for a fixed
// seed: one 53-bit dyadic fraction per coordinate per attempt.
inline std::vector<std::vector<Rat>> sample_domain(const QuantDomain& dom,
                                                   const std::vector<std::string>& vars,
                                                   int n, std::uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("sample count must be positive");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<Rat>> out;
    long attempts = 0;
    const long cap = 100L * n;
    while ((int)out.size() < n && attempts < cap) {
        ++attempts;
        std::vector<Rat> pt(dom.box.size());
        std::map<std::string, Rat> env;
        for (size_t i = 0; i < dom.box.size(); ++i) {
            Rat frac = dyadic((long)(rng() >> 11), 53);
            pt[i] = dom.box[i].first + Rat(frac * (dom.box[i].second - dom.box[i].first));
            env[vars[i]] = pt[i];
        }
        bool ok = true;
        for (const auto& sc : dom.side_constraints) {
            Rat a = logic_detail::eval_ground(sc->a, env);
            Rat b = logic_detail::eval_ground(sc->b, env);
            if (!logic_detail::holds_cmp(sc->cmp, a, b, true)) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back(std::move(pt));
    }
    if ((int)out.size() < n) throw SamplingExhausted(out.size(), attempts);
    return out;
}

// Per-quantifier seeds are seed + qid; fixed sample sets are copied verbatim.
// n_override > 0 replaces cfg.sample_count (the trainer's batch size).
inline Samples draw_samples(const LossTerm& t, std::uint64_t seed, int n_override = 0) {
    Samples s;
    s.per_quant.resize(t.quants.size());
    int n = n_override > 0 ? n_override : t.cfg.sample_count;
    for (size_t i = 0; i < t.quants.size(); ++i) {
        const QuantInfo& q = t.quants[i];
        s.per_quant[i] = q.fixed.empty()
                             ? sample_domain(q.dom, q.vars, n, seed + (std::uint64_t)i)
                             : q.fixed;
    }
    return s;
}

// ---- evaluation ----

namespace logic_detail {

template <class S>
S from_rat(const Rat& r) {
    if constexpr (std::is_same_v<S, double>)
        return to_double(r);
    else
        return r;
}

template <class S, class NetT>
struct EvalCtx {
    const NetT& net;
    const Samples& samples;
    std::vector<int> idx;           // per-qid current sample, -1 when unsampled
    std::vector<char>* sig;         // branch signature sink, may be null
    std::vector<double>* gp;        // parameter gradient sink (double mode only)
    std::vector<std::size_t> loff;  // flat parameter offset per layer
};

inline void mark(std::vector<char>* sig, char c) {
    if (sig) sig->push_back(c);
}

template <class S, class NetT>
S eval_expr(const LossExprPtr& e, EvalCtx<S, NetT>& c);

template <class S, class NetT>
bool eval_bool(const BoolExprPtr& e, EvalCtx<S, NetT>& c) {
    switch (e->kind) {
        case BoolExpr::Kind::Atom: {
            S a = eval_expr(e->a, c);
            S b = eval_expr(e->b, c);
            bool v;
            switch (e->cmp) {
                case Cmp::Le:
                    v = a <= b;
                    break;
                case Cmp::Lt:
                    v = e->exact_strict ? a < b : a <= b;
                    break;
                case Cmp::Ge:
                    v = a >= b;
                    break;
                case Cmp::Gt:
                    v = e->exact_strict ? a > b : a >= b;
                    break;
                default:
                    v = false;
            }
            mark(c.sig, v ? 1 : 0);
            return v;
        }
        case BoolExpr::Kind::And: {
            // both sides always evaluate so branch signatures stay aligned
            bool l = eval_bool(e->l, c), r = eval_bool(e->r, c);
            return l && r;
        }
        case BoolExpr::Kind::Or: {
            bool l = eval_bool(e->l, c), r = eval_bool(e->r, c);
            return l || r;
        }
        case BoolExpr::Kind::Not:
            return !eval_bool(e->l, c);
        case BoolExpr::Kind::All:
        case BoolExpr::Kind::Any: {
            const auto& pts = c.samples.per_quant.at(e->qid);
            if (pts.empty()) throw std::logic_error("no samples for quantifier");
            bool all = true, any = false;
            for (size_t i = 0; i < pts.size(); ++i) {
                c.idx[e->qid] = (int)i;
                bool v = eval_bool(e->l, c);
                all = all && v;
                any = any || v;
            }
            c.idx[e->qid] = -1;
            return e->kind == BoolExpr::Kind::All ? all : any;
        }
    }
    throw std::logic_error("eval_bool: unreachable");
}

// forward through the network at arg values; double mode records relu bits
template <class S, class NetT>
S net_forward(const LossExprPtr& e, EvalCtx<S, NetT>& c) {
    std::vector<S> x;
    x.reserve(e->args.size());
    for (const auto& a : e->args) x.push_back(eval_expr(a, c));
    if constexpr (std::is_same_v<NetT, Network>) {
        std::vector<Rat> y = eval_exact(c.net, x);
        return y.at(e->out_index);
    } else {
        for (const auto& l : c.net.layers) {
            std::vector<double> z(l.w.size());
            for (size_t r = 0; r < l.w.size(); ++r) {
                double s = l.b[r];
                for (size_t k = 0; k < l.w[r].size(); ++k) s += l.w[r][k] * x[k];
                if (l.relu) {
                    mark(c.sig, s > 0 ? 1 : 0);
                    if (s <= 0) s = 0;
                }
                z[r] = s;
            }
            x = std::move(z);
        }
        return x.at(e->out_index);
    }
}

template <class S, class NetT>
S eval_expr(const LossExprPtr& e, EvalCtx<S, NetT>& c) {
    using K = LossExpr::Kind;
    switch (e->kind) {
        case K::Const:
            return from_rat<S>(e->value);
        case K::Coord: {
            int i = c.idx.at(e->qid);
            if (i < 0) throw std::logic_error("read of an unsampled variable");
            return from_rat<S>(c.samples.per_quant[e->qid][i].at(e->coord));
        }
        case K::Net:
            return net_forward(e, c);
        case K::Add:
            return S(eval_expr(e->a, c) + eval_expr(e->b, c));
        case K::Sub:
            return S(eval_expr(e->a, c) - eval_expr(e->b, c));
        case K::Mul:
            return S(eval_expr(e->a, c) * eval_expr(e->b, c));
        case K::Hinge: {
            S v = eval_expr(e->a, c);
            bool pos = v > 0;
            mark(c.sig, pos ? 1 : 0);
            return pos ? v : S(0);
        }
        case K::Min: {
            S a = eval_expr(e->a, c), b = eval_expr(e->b, c);
            bool first = a <= b;
            mark(c.sig, first ? 1 : 0);
            return first ? a : b;
        }
        case K::Max: {
            S a = eval_expr(e->a, c), b = eval_expr(e->b, c);
            bool first = a >= b;
            mark(c.sig, first ? 1 : 0);
            return first ? a : b;
        }
        case K::Clamp01: {
            S v = eval_expr(e->a, c);
            char region = v < 0 ? 0 : (v > 1 ? 2 : 1);
            mark(c.sig, region);
            if (region == 0) return S(0);
            if (region == 2) return S(1);
            return v;
        }
        case K::OneMinus:
            return S(1 - eval_expr(e->a, c));
        case K::Gate: {
            bool g = eval_bool(e->cond, c);
            mark(c.sig, g ? 1 : 0);
            // both branches evaluate so signatures do not depend on the gate
            S a = eval_expr(e->a, c), b = eval_expr(e->b, c);
            return g ? a : b;
        }
        case K::Aggregate: {
            const auto& pts = c.samples.per_quant.at(e->qid);
            if (pts.empty()) throw std::logic_error("no samples for quantifier");
            if (e->agg == LossExpr::Agg::PMean) {
                if constexpr (std::is_same_v<S, double>) {
                    std::vector<double> vs(pts.size());
                    for (size_t i = 0; i < pts.size(); ++i) {
                        c.idx[e->qid] = (int)i;
                        vs[i] = eval_expr(e->a, c);
                    }
                    c.idx[e->qid] = -1;
                    return power_mean(vs, e->p);
                } else {
                    throw UnsupportedConstruct("p-mean has no exact evaluation", 0, 0);
                }
            }
            S acc = S(0);
            std::size_t pick = 0;
            for (size_t i = 0; i < pts.size(); ++i) {
                c.idx[e->qid] = (int)i;
                S v = eval_expr(e->a, c);
                switch (e->agg) {
                    case LossExpr::Agg::Sum:
                        acc = S(acc + v);
                        break;
                    case LossExpr::Agg::Min:
                        if (i == 0 || v < acc) {
                            acc = v;
                            pick = i;
                        }
                        break;
                    case LossExpr::Agg::Max:
                        if (i == 0 || v > acc) {
                            acc = v;
                            pick = i;
                        }
                        break;
                    default:
                        break;
                }
            }
            c.idx[e->qid] = -1;
            if (c.sig && e->agg != LossExpr::Agg::Sum) {
                // winning sample index is part of the branch signature
                c.sig->push_back((char)(pick & 0xff));
                c.sig->push_back((char)((pick >> 8) & 0xff));
            }
            return acc;
        }
    }
    throw std::logic_error("eval_expr: unreachable");
}

template <class S, class NetT>
EvalCtx<S, NetT> make_ctx(const LossTerm& t, const NetT& net, const Samples& s,
                          std::vector<char>* sig) {
    if (s.per_quant.size() != t.quants.size())
        throw std::logic_error("sample sets do not match the term's quantifiers");
    EvalCtx<S, NetT> c{net, s, {}, sig, nullptr, {}};
    c.idx.assign(t.quants.size(), -1);
    return c;
}

}  // namespace logic_detail

inline double eval_loss(const LossTerm& t, const FloatNet& net, const Samples& s,
                        std::vector<char>* sig = nullptr) {
    auto c = logic_detail::make_ctx<double, FloatNet>(t, net, s, sig);
    return logic_detail::eval_expr(t.loss, c);
}

inline Rat eval_loss_exact(const LossTerm& t, const Network& net, const Samples& s) {
    auto c = logic_detail::make_ctx<Rat, Network>(t, net, s, nullptr);
    return logic_detail::eval_expr(t.loss, c);
}

// Exact satisfaction of the source formula at the sampled points, with strict
// atoms closed wherever they feed a loss (the mirror of the loss's zero set).
inline bool bool_eval(const LossTerm& t, const Network& net, const Samples& s) {
    auto c = logic_detail::make_ctx<Rat, Network>(t, net, s, nullptr);
    return logic_detail::eval_bool(t.mirror, c);
}

// ---- gradients ----

struct LossGrad {
    double value = 0;
    std::vector<double> grad;
};

namespace logic_detail {

using DCtx = EvalCtx<double, FloatNet>;

inline void backward(const LossExprPtr& e, double adj, DCtx& c);

// Backprop through one network application: parameter gradients accumulate
// into c.gp at the flatten() layout offsets, input adjoints flow to the args.
inline void net_backward(const LossExprPtr& e, double adj, DCtx& c) {
    std::vector<double> x;
    for (const auto& a : e->args) x.push_back(eval_expr(a, c));
    std::vector<std::vector<double>> ins;   // input of each layer
    std::vector<std::vector<double>> pre;   // pre-activation of each layer
    for (const auto& l : c.net.layers) {
        ins.push_back(x);
        std::vector<double> z(l.w.size());
        for (size_t r = 0; r < l.w.size(); ++r) {
            double s = l.b[r];
            for (size_t k = 0; k < l.w[r].size(); ++k) s += l.w[r][k] * x[k];
            z[r] = s;
        }
        pre.push_back(z);
        if (l.relu)
            for (auto& v : z)
                if (v <= 0) v = 0;
        x = std::move(z);
    }
    std::vector<double> delta(x.size(), 0.0);
    delta.at(e->out_index) = adj;
    for (int l = (int)c.net.layers.size() - 1; l >= 0; --l) {
        const auto& fl = c.net.layers[l];
        if (fl.relu)
            for (size_t r = 0; r < delta.size(); ++r)
                if (pre[l][r] <= 0) delta[r] = 0;  // relu'(0) = 0, the hinge convention
        std::vector<double> dx(ins[l].size(), 0.0);
        std::size_t off = c.loff[l];
        std::size_t cols = ins[l].size();
        for (size_t r = 0; r < fl.w.size(); ++r) {
            for (size_t k = 0; k < cols; ++k) {
                (*c.gp)[off + r * cols + k] += delta[r] * ins[l][k];
                dx[k] += delta[r] * fl.w[r][k];
            }
            (*c.gp)[off + fl.w.size() * cols + r] += delta[r];
        }
        delta = std::move(dx);
    }
    for (size_t i = 0; i < e->args.size(); ++i) backward(e->args[i], delta[i], c);
}

inline void backward(const LossExprPtr& e, double adj, DCtx& c) {
    using K = LossExpr::Kind;
    if (adj == 0) return;
    switch (e->kind) {
        case K::Const:
        case K::Coord:
            return;
        case K::Net:
            net_backward(e, adj, c);
            return;
        case K::Add:
            backward(e->a, adj, c);
            backward(e->b, adj, c);
            return;
        case K::Sub:
            backward(e->a, adj, c);
            backward(e->b, -adj, c);
            return;
        case K::Mul: {
            double av = eval_expr(e->a, c), bv = eval_expr(e->b, c);
            backward(e->a, adj * bv, c);
            backward(e->b, adj * av, c);
            return;
        }
        case K::Hinge:
            if (eval_expr(e->a, c) > 0) backward(e->a, adj, c);
            return;
        case K::Min: {
            double av = eval_expr(e->a, c), bv = eval_expr(e->b, c);
            if (av <= bv)
                backward(e->a, adj, c);
            else
                backward(e->b, adj, c);
            return;
        }
        case K::Max: {
            double av = eval_expr(e->a, c), bv = eval_expr(e->b, c);
            if (av >= bv)
                backward(e->a, adj, c);
            else
                backward(e->b, adj, c);
            return;
        }
        case K::Clamp01: {
            double v = eval_expr(e->a, c);
            if (v >= 0 && v <= 1) backward(e->a, adj, c);
            return;
        }
        case K::OneMinus:
            backward(e->a, -adj, c);
            return;
        case K::Gate:
            if (eval_bool(e->cond, c))
                backward(e->a, adj, c);
            else
                backward(e->b, adj, c);
            return;
        case K::Aggregate: {
            const auto& pts = c.samples.per_quant.at(e->qid);
            switch (e->agg) {
                case LossExpr::Agg::Sum:
                    for (size_t i = 0; i < pts.size(); ++i) {
                        c.idx[e->qid] = (int)i;
                        backward(e->a, adj, c);
                    }
                    break;
                case LossExpr::Agg::Min:
                case LossExpr::Agg::Max: {
                    size_t pick = 0;
                    double best = 0;
                    for (size_t i = 0; i < pts.size(); ++i) {
                        c.idx[e->qid] = (int)i;
                        double v = eval_expr(e->a, c);
                        bool better = e->agg == LossExpr::Agg::Min ? v < best : v > best;
                        if (i == 0 || better) {
                            best = v;
                            pick = i;
                        }
                    }
                    c.idx[e->qid] = (int)pick;
                    backward(e->a, adj, c);
                    break;
                }
                case LossExpr::Agg::PMean: {
                    std::vector<double> vs(pts.size());
                    for (size_t i = 0; i < pts.size(); ++i) {
                        c.idx[e->qid] = (int)i;
                        vs[i] = eval_expr(e->a, c);
                    }
                    double m = power_mean(vs, e->p);
                    if (m == 0) break;  // flat limit, zero subgradient
                    bool zero = false;
                    for (double v : vs) zero = zero || v == 0;
                    if (zero && e->p < 1) break;
                    for (size_t i = 0; i < pts.size(); ++i) {
                        double w = std::pow(vs[i], e->p - 1) *
                                   std::pow(m, 1.0 - e->p) / (double)pts.size();
                        c.idx[e->qid] = (int)i;
                        backward(e->a, adj * w, c);
                    }
                    break;
                }
            }
            c.idx[e->qid] = -1;
            return;
        }
    }
}

}  // namespace logic_detail

inline LossGrad grad_loss(const LossTerm& t, const FloatNet& net, const Samples& s) {
    auto c = logic_detail::make_ctx<double, FloatNet>(t, net, s, nullptr);
    LossGrad g;
    g.grad.assign(net.param_count(), 0.0);
    c.gp = &g.grad;
    c.loff.resize(net.layers.size());
    std::size_t off = 0;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        c.loff[l] = off;
        off += net.layers[l].w.size() * net.layers[l].w[0].size() + net.layers[l].b.size();
    }
    g.value = logic_detail::eval_expr(t.loss, c);
    logic_detail::backward(t.loss, 1.0, c);
    return g;
}

// ---- finite-difference validation ----

struct GradCheckReport {
    double max_rel_err = 0;
    int compared = 0;
    int excluded = 0;  // parameters whose perturbation crossed a branch kink
};

// Central differences against grad_loss. A parameter is excluded when the
// branch signature (relu phases, min/max winners, hinge/clamp/gate states)
// differs between the +h and -h evaluations: the loss is not differentiable
// there and no finite-difference comparison is meaningful. Components below
// 1e-4 in magnitude are compared absolutely, since central differences carry
// roughly 1e-10 of cancellation noise at h = 1e-6.
inline GradCheckReport grad_check(const LossTerm& t, const FloatNet& net, const Samples& s,
                                  double h) {
    if (h <= 0) throw std::invalid_argument("finite-difference step must be positive");
    LossGrad g = grad_loss(t, net, s);
    std::vector<double> p0 = net.flatten();
    FloatNet w = net;
    GradCheckReport rep;
    for (size_t i = 0; i < p0.size(); ++i) {
        std::vector<double> p = p0;
        std::vector<char> sig_plus, sig_minus;
        p[i] = p0[i] + h;
        w.unflatten(p);
        double lp = eval_loss(t, w, s, &sig_plus);
        p[i] = p0[i] - h;
        w.unflatten(p);
        double lm = eval_loss(t, w, s, &sig_minus);
        if (sig_plus != sig_minus) {
            ++rep.excluded;
            continue;
        }
        double fd = (lp - lm) / (2 * h);
        double denom = std::max({std::abs(g.grad[i]), std::abs(fd), 1e-4});
        double rel = std::abs(g.grad[i] - fd) / denom;
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        ++rep.compared;
    }
    return rep;
}

}  // namespace nsp
