#pragma once

// Obligation (2): the verified network-level property transfers to problem
// space through the embedding. All checks are exact and coefficient-wise;
// nothing here samples. The embedded image of the problem-space precondition
// region must sit inside the verified input region, and the verified output
// bound, pushed through the order-preserving unembedding, must imply the
// problem-space bound.

#include <nsp/ast.hpp>
#include <nsp/checker.hpp>
#include <nsp/network.hpp>
#include <nsp/simulate.hpp>
#include <nsp/verifier.hpp>

#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nsp {

struct BridgeCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct BridgeReport {
    std::vector<BridgeCheck> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return !checks.empty();
    }
    std::string text() const {
        std::ostringstream os;
        for (const auto& c : checks)
            os << (c.pass ? "pass" : "FAIL") << "  " << c.name << ": " << c.detail << '\n';
        return os.str();
    }
};

namespace bridge_detail {

// one inequality sum(sq[v] * v^2) + sum(lin[v] * v) <= rhs (< when strict)
struct PolyRow {
    std::map<std::string, Rat> sq, lin;
    Rat rhs;
    bool strict = false;
};

inline void collect(const TermPtr& t, const Rat& k, PolyRow& r, Rat& cst) {
    switch (t->kind) {
        case Term::Kind::Var:
            r.lin[t->name] += k;
            return;
        case Term::Kind::Const:
            cst += k * t->value;
            return;
        case Term::Kind::Add:
            collect(t->lhs, k, r, cst);
            collect(t->rhs, k, r, cst);
            return;
        case Term::Kind::Sub:
            collect(t->lhs, k, r, cst);
            collect(t->rhs, Rat(-k), r, cst);
            return;
        case Term::Kind::ScalarMul:
            collect(t->lhs, Rat(k * t->value), r, cst);
            return;
        case Term::Kind::Square:
            if (t->lhs->kind != Term::Kind::Var)
                throw UnsupportedConstruct("bridge constraints may square variables only",
                                           t->line, t->col);
            r.sq[t->lhs->name] += k;
            return;
        default:
            throw UnsupportedConstruct("bridge constraints must be polynomial", t->line,
                                       t->col);
    }
}

inline PolyRow atom_to_row(const FormulaPtr& f) {
    if (f->kind != Formula::Kind::Atom)
        throw UnsupportedConstruct("bridge constraints must be comparisons", f->line, f->col);
    PolyRow r;
    Rat cst;
    bool flip = f->cmp == Cmp::Ge || f->cmp == Cmp::Gt;
    collect(f->a, rat(flip ? -1 : 1), r, cst);
    collect(f->b, rat(flip ? 1 : -1), r, cst);
    r.rhs = -cst;
    r.strict = f->cmp == Cmp::Lt || f->cmp == Cmp::Gt;
    for (auto it = r.sq.begin(); it != r.sq.end();)
        it = it->second == 0 ? r.sq.erase(it) : std::next(it);
    for (auto it = r.lin.begin(); it != r.lin.end();)
        it = it->second == 0 ? r.lin.erase(it) : std::next(it);
    return r;
}

inline std::string row_text(const PolyRow& r) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [v, c] : r.sq) {
        os << (first ? "" : " + ") << to_string(c) << "*" << v << "^2";
        first = false;
    }
    for (const auto& [v, c] : r.lin) {
        os << (first ? "" : " + ") << to_string(c) << "*" << v;
        first = false;
    }
    if (first) os << "0";
    os << (r.strict ? " < " : " <= ") << to_string(r.rhs);
    return os.str();
}

// does `have` imply `want`? exact positive-scaling comparison of the rows
inline bool row_implies(const PolyRow& have, const PolyRow& want) {
    const Rat* h = nullptr;
    const Rat* w = nullptr;
    if (!want.sq.empty()) {
        auto it = have.sq.find(want.sq.begin()->first);
        if (it == have.sq.end()) return false;
        h = &it->second;
        w = &want.sq.begin()->second;
    } else if (!want.lin.empty()) {
        auto it = have.lin.find(want.lin.begin()->first);
        if (it == have.lin.end()) return false;
        h = &it->second;
        w = &want.lin.begin()->second;
    } else {
        return false;
    }
    if (*h == 0) return false;
    Rat lam = *w / *h;
    if (lam <= 0) return false;
    auto matches = [&](const std::map<std::string, Rat>& a, const std::map<std::string, Rat>& b) {
        if (a.size() != b.size()) return false;
        for (const auto& [v, c] : a) {
            auto it = b.find(v);
            if (it == b.end() || Rat(lam * c) != it->second) return false;
        }
        return true;
    };
    if (!matches(have.sq, want.sq) || !matches(have.lin, want.lin)) return false;
    Rat scaled = Rat(lam * have.rhs);
    if (want.strict && !have.strict) return scaled < want.rhs;
    return scaled <= want.rhs;
}

// exact supremum of the row's left side over the box alone (side constraints
// ignored, so this is a conservative fallback)
inline Rat row_sup_on_box(const PolyRow& r, const std::map<std::string, Interval>& box) {
    Rat s;
    for (const auto& [v, c] : r.lin) {
        const Interval& iv = box.at(v);
        s += c * (c >= 0 ? iv.hi : iv.lo);
    }
    for (const auto& [v, c] : r.sq) {
        const Interval& iv = box.at(v);
        Rat mx = rat_max(Rat(iv.lo * iv.lo), Rat(iv.hi * iv.hi));
        Rat mn = (iv.lo <= 0 && iv.hi >= 0) ? rat(0)
                                            : rat_min(Rat(iv.lo * iv.lo), Rat(iv.hi * iv.hi));
        s += c * (c >= 0 ? mx : mn);
    }
    return s;
}

struct ProblemShape {
    std::vector<std::string> vars;
    std::map<std::string, Interval> box;
    std::vector<PolyRow> side;  // over problem vars
    int out_index = 0;
    bool upper = true;  // body bounds the solution output from above
    bool strict = false;
    Rat bound;
};

inline ProblemShape parse_problem(const FormulaPtr& f) {
    if (f->kind != Formula::Kind::Forall)
        throw UnsupportedConstruct("the bridge expects a universal problem property", f->line,
                                   f->col);
    ProblemShape ps;
    ps.vars = f->vars;
    for (size_t i = 0; i < f->vars.size(); ++i)
        ps.box[f->vars[i]] = Interval{f->dom.box[i].first, f->dom.box[i].second};
    for (const auto& sc : f->dom.side_constraints) ps.side.push_back(atom_to_row(sc));

    const FormulaPtr& body = f->body;
    if (body->kind != Formula::Kind::Atom)
        throw UnsupportedConstruct("the bridge expects a single output bound", body->line,
                                   body->col);
    TermPtr app = body->a, cst = body->b;
    bool app_left = true;
    if (app->kind != Term::Kind::NetApply) {
        std::swap(app, cst);
        app_left = false;
    }
    if (app->kind != Term::Kind::NetApply || cst->kind != Term::Kind::Const)
        throw UnsupportedConstruct("the bridge expects `network <= constant` as the bound",
                                   body->line, body->col);
    if (app->args.size() != ps.vars.size())
        throw UnsupportedConstruct("problem bound must apply the network to the quantified "
                                   "variables",
                                   app->line, app->col);
    for (size_t i = 0; i < app->args.size(); ++i)
        if (app->args[i]->kind != Term::Kind::Var || app->args[i]->name != ps.vars[i])
            throw UnsupportedConstruct("problem bound must apply the network to the quantified "
                                       "variables in order",
                                       app->line, app->col);
    ps.out_index = app->out_index;
    ps.bound = cst->value;
    bool le = body->cmp == Cmp::Le || body->cmp == Cmp::Lt;
    ps.upper = app_left == le;
    ps.strict = body->cmp == Cmp::Lt || body->cmp == Cmp::Gt;
    return ps;
}

}  // namespace bridge_detail

// The query must already be Verified; this only checks that the verified
// statement entails the problem-space property through the embedding.
inline BridgeReport check_embedding_bridge(const EmbeddingSpec& emb, const VerifyQuery& q,
                                           const FormulaPtr& problem) {
    using namespace bridge_detail;
    ProblemShape ps = parse_problem(problem);
    BridgeReport rep;
    size_t n = (size_t)q.net.input_dim();
    if (ps.vars.size() != n || emb.input_map.size() != n) {
        rep.checks.push_back({"input-dimension", false,
                              "problem binds " + std::to_string(ps.vars.size()) +
                                  " variables, network takes " + std::to_string(n)});
        return rep;
    }

    // (a) the embedded problem box lands inside the verified box
    for (size_t i = 0; i < n; ++i) {
        const AffineDim& m = emb.input_map[i];
        const Interval& pb = ps.box.at(ps.vars[i]);
        Rat lo = Rat(m.scale * pb.lo + m.offset);
        Rat hi = Rat(m.scale * pb.hi + m.offset);
        bool ok = lo >= q.box[i].lo && hi <= q.box[i].hi;
        rep.checks.push_back({"input-box[" + std::to_string(i) + "]", ok,
                              "embedded [" + to_string(lo) + ", " + to_string(hi) +
                                  "] vs verified [" + to_string(q.box[i].lo) + ", " +
                                  to_string(q.box[i].hi) + "]"});
    }

    // (a) every extra verified-region constraint, pulled back to problem
    // coordinates, must be implied by a problem-side constraint or by the
    // problem box alone
    auto pull_back = [&](const std::map<int, Rat>& sq, const std::vector<Rat>& lin,
                         const Rat& rhs, bool strict) {
        PolyRow r;
        Rat shift;
        for (const auto& [i, c] : sq) {
            const AffineDim& m = emb.input_map[i];
            r.sq[ps.vars[i]] += c * m.scale * m.scale;
            r.lin[ps.vars[i]] += 2 * c * m.scale * m.offset;
            shift += c * m.offset * m.offset;
        }
        for (size_t i = 0; i < lin.size(); ++i) {
            if (lin[i] == 0) continue;
            const AffineDim& m = emb.input_map[i];
            r.lin[ps.vars[i]] += lin[i] * m.scale;
            shift += lin[i] * m.offset;
        }
        r.rhs = rhs - shift;
        r.strict = strict;
        for (auto it = r.sq.begin(); it != r.sq.end();)
            it = it->second == 0 ? r.sq.erase(it) : std::next(it);
        for (auto it = r.lin.begin(); it != r.lin.end();)
            it = it->second == 0 ? r.lin.erase(it) : std::next(it);
        return r;
    };
    auto check_region_row = [&](const PolyRow& want, const std::string& name) {
        for (const auto& have : ps.side)
            if (row_implies(have, want)) {
                rep.checks.push_back(
                    {name, true, "implied by precondition: " + row_text(want)});
                return;
            }
        Rat sup = row_sup_on_box(want, ps.box);
        bool ok = want.strict ? sup < want.rhs : sup <= want.rhs;
        rep.checks.push_back({name, ok,
                              (ok ? "implied by the box: " : "not implied: ") + row_text(want) +
                                  ", box supremum " + to_string(sup)});
    };
    for (size_t k = 0; k < q.input_lin.size(); ++k) {
        PolyRow want = pull_back({}, q.input_lin[k].a, q.input_lin[k].b, q.input_lin[k].strict);
        check_region_row(want, "input-row[" + std::to_string(k) + "]");
    }
    for (size_t k = 0; k < q.input_sq.size(); ++k) {
        PolyRow want =
            pull_back(q.input_sq[k].sq, q.input_sq[k].lin, q.input_sq[k].rhs,
                      q.input_sq[k].strict);
        check_region_row(want, "square-row[" + std::to_string(k) + "]");
    }

    // (b) the refuted violation row, read as the guaranteed output bound and
    // pushed through the unembedding, implies the problem bound
    if (q.violation.size() != 1) {
        rep.checks.push_back({"output-bound", false,
                              "expected one violation row, query has " +
                                  std::to_string(q.violation.size())});
        return rep;
    }
    const LinRow& vr = q.violation[0];
    int j = -1;
    for (size_t i = 0; i < vr.a.size(); ++i)
        if (vr.a[i] != 0) {
            if (j >= 0) {
                rep.checks.push_back(
                    {"output-bound", false, "violation row mixes output coordinates"});
                return rep;
            }
            j = (int)i;
        }
    if (j != ps.out_index) {
        rep.checks.push_back({"output-bound", false,
                              "verified output " + std::to_string(j) + ", problem bounds output " +
                                  std::to_string(ps.out_index)});
        return rep;
    }
    // Verified means vr.a*y <= vr.b (strict or not) never holds, so the
    // negation is guaranteed: (-a)*y <= -b, strict iff vr was non-strict.
    Rat ga = -vr.a[j];
    Rat gb = -vr.b;
    bool gstrict = !vr.strict;
    // normalize to a bound on y_j
    bool upper = ga > 0;
    Rat ybound = Rat(gb / ga);
    const AffineDim& om = emb.output_map[j];
    Rat mapped = Rat(om.scale * ybound + om.offset);
    bool dir_ok = upper == ps.upper;
    bool val_ok = ps.upper ? (mapped < ps.bound || (mapped == ps.bound && (gstrict || !ps.strict)))
                           : (mapped > ps.bound || (mapped == ps.bound && (gstrict || !ps.strict)));
    std::string dirs = upper ? "<=" : ">=";
    rep.checks.push_back({"output-bound", dir_ok && val_ok,
                          "guaranteed y" + std::to_string(j) + " " + dirs + " " +
                              to_string(ybound) + " maps to " + to_string(mapped) +
                              ", problem requires " + (ps.upper ? "<= " : ">= ") +
                              to_string(ps.bound)});
    return rep;
}

// ---- lemma ledger ----

struct LemmaLedger {
    bool network_property = false;  // (1) certificate accepted
    std::string certificate_path;   // where the checked certificate lives
    std::string certificate_detail;
    bool solution_property = false;  // (2) bridge all-pass
    BridgeReport bridge;
    bool program_property = false;  // (3) falsification found nothing
    int sweep_runs = 0;
    int sweep_violations = 0;
    std::uint64_t sweep_seed = 0;
    std::string sweep_detail;
    bool discharged = false;  // at desk scale: (1) and (2) proven, (3) clean
};

inline LemmaLedger assemble_ledger(const CheckResult& cert, const BridgeReport& bridge,
                                   const SweepResult& sweep) {
    LemmaLedger l;
    l.network_property = cert.accepted;
    l.certificate_detail = cert.accepted
                               ? "certificate accepted, " + std::to_string(cert.leaves_checked) +
                                     " leaves checked"
                               : "certificate rejected: " + cert.reason +
                                     (cert.detail.empty() ? "" : " (" + cert.detail + ")");
    l.solution_property = bridge.all_pass();
    l.bridge = bridge;
    l.program_property = sweep.violations == 0 && sweep.runs > 0;
    l.sweep_runs = sweep.runs;
    l.sweep_violations = sweep.violations;
    l.sweep_seed = sweep.seed;
    if (sweep.violations > 0) {
        const auto& [v0, p0] = sweep.violating_starts.front();
        l.sweep_detail = "first violating start: v_rel = " + to_string(v0) +
                         ", p_rel = " + to_string(p0);
    } else if (sweep.runs == 0) {
        l.sweep_detail = "no falsification sweep performed";
    } else {
        l.sweep_detail =
            "no violation in " + std::to_string(sweep.runs) + " falsification runs";
    }
    l.discharged = l.network_property && l.solution_property && l.program_property;
    return l;
}

inline std::string ledger_text(const LemmaLedger& l) {
    std::ostringstream os;
    os << "lemma ledger: neural controller safety decomposition\n";
    os << "sign convention: v_rel < 0 means the cars are closing; a_rel < 0 opens the gap\n";
    os << "(1) network property:  " << (l.network_property ? "PROVEN" : "FAILED") << "  "
       << l.certificate_detail;
    if (!l.certificate_path.empty()) os << " [" << l.certificate_path << "]";
    os << '\n';
    os << "(2) solution property: " << (l.solution_property ? "PROVEN" : "FAILED")
       << "  bridge checks:\n";
    std::istringstream bs(l.bridge.text());
    for (std::string line; std::getline(bs, line);) os << "      " << line << '\n';
    os << "(3) program property:  " << (l.program_property ? "NO VIOLATION" : "FAILED") << "  "
       << l.sweep_detail << " (seed " << l.sweep_seed << ")\n";
    os << "    note: obligation (3) is testing, not proof; simulation evidence only\n";
    os << "overall: " << (l.discharged ? "discharged-at-desk-scale" : "NOT discharged") << '\n';
    return os.str();
}

inline nlohmann::json ledger_json(const LemmaLedger& l) {
    nlohmann::json j;
    j["obligation1"] = {{"status", l.network_property ? "proven" : "failed"},
                        {"certificate", l.certificate_path},
                        {"detail", l.certificate_detail}};
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : l.bridge.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    j["obligation2"] = {{"status", l.solution_property ? "proven" : "failed"},
                        {"checks", checks}};
    j["obligation3"] = {{"status", l.program_property
                                       ? "no violation in " + std::to_string(l.sweep_runs) +
                                             " falsification runs"
                                       : "failed"},
                        {"runs", l.sweep_runs},
                        {"violations", l.sweep_violations},
                        {"seed", l.sweep_seed},
                        {"detail", l.sweep_detail},
                        {"disclaimer", "testing, not proof"}};
    j["overall"] = l.discharged ? "discharged-at-desk-scale" : "not-discharged";
    j["sign_convention"] = "v_rel < 0 means closing; a_rel < 0 opens the gap";
    return j;
}

}  // namespace nsp
