#pragma once

// Semantic checks over a parsed spec. All violations are reported, each
// with a source location; the checker never stops at the first error.

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "nsp/ast.hpp"

namespace nsp {

struct TypeError {
    int line, col;
    std::string message;
};

inline std::string format_errors(const std::vector<TypeError>& errs) {
    std::string s;
    for (const auto& e : errs) {
        if (!s.empty()) s += "\n";
        s += std::to_string(e.line) + ":" + std::to_string(e.col) + ": " + e.message;
    }
    return s;
}

// PropertySpec plus the resolved symbol table.
struct TypedSpec {
    PropertySpec spec;
    std::map<std::string, NetworkDecl> networks;
    std::map<std::string, Rat> constants;
};

namespace detail {

class Checker {
  public:
    explicit Checker(const PropertySpec& spec) : spec_(spec) {}

    std::variant<TypedSpec, std::vector<TypeError>> run() {
        TypedSpec out;
        out.spec = spec_;
        for (const auto& n : spec_.networks) {
            if (out.networks.count(n.name))
                err(n.line, 1, "duplicate network '" + n.name + "'");
            if (n.input_dim <= 0 || n.output_dim <= 0)
                err(n.line, 1, "network '" + n.name + "' must have positive dimensions");
            out.networks[n.name] = n;
        }
        for (const auto& c : spec_.constants) out.constants[c.name] = c.value;
        std::set<std::string> prop_names;
        for (const auto& [name, f] : spec_.properties) {
            if (!prop_names.insert(name).second)
                err(f->line, f->col, "duplicate property '" + name + "'");
            check_formula(f);
        }
        if (!errors_.empty()) return errors_;
        return out;
    }

  private:
    const PropertySpec& spec_;
    std::vector<TypeError> errors_;
    std::vector<std::string> scope_;

    void err(int line, int col, std::string msg) {
        errors_.push_back(TypeError{line, col, std::move(msg)});
    }

    bool in_scope(const std::string& v) const {
        for (const auto& s : scope_)
            if (s == v) return true;
        return false;
    }

    const NetworkDecl* find_net(const std::string& name) const {
        for (const auto& n : spec_.networks)
            if (n.name == name) return &n;
        return nullptr;
    }

    void check_term(const TermPtr& t) {
        switch (t->kind) {
            case Term::Kind::Var:
                if (!in_scope(t->name)) err(t->line, t->col, "unbound variable " + t->name);
                break;
            case Term::Kind::Const: break;
            case Term::Kind::Add:
            case Term::Kind::Sub:
                check_term(t->lhs);
                check_term(t->rhs);
                break;
            case Term::Kind::ScalarMul:
            case Term::Kind::Square:
                check_term(t->lhs);
                break;
            case Term::Kind::NetApply: {
                const NetworkDecl* n = find_net(t->name);
                if (!n) {
                    err(t->line, t->col, "unknown network '" + t->name + "'");
                } else {
                    if (static_cast<int>(t->args.size()) != n->input_dim)
                        err(t->line, t->col,
                            "arity mismatch: expected " + std::to_string(n->input_dim) +
                                ", got " + std::to_string(t->args.size()));
                    if (t->out_index < 0 || t->out_index >= n->output_dim)
                        err(t->line, t->col,
                            "output index " + std::to_string(t->out_index) +
                                " out of range for '" + t->name + "' (" +
                                std::to_string(n->output_dim) + " outputs)");
                }
                for (const auto& a : t->args) check_term(a);
                break;
            }
            case Term::Kind::NormDiff: {
                if (t->args.empty())
                    err(t->line, t->col, "norm of an empty vector");
                if (t->args.size() != t->args2.size())
                    err(t->line, t->col,
                        "norm arguments have mismatched lengths " +
                            std::to_string(t->args.size()) + " and " +
                            std::to_string(t->args2.size()));
                for (const auto& a : t->args) check_term(a);
                for (const auto& a : t->args2) check_term(a);
                break;
            }
        }
    }

    // Side constraints must be affine in this quantifier's variables plus
    // rational multiples of Square(var); exactly one Square level.
    void check_side_term(const TermPtr& t, const std::vector<std::string>& vars) {
        auto local = [&](const std::string& v) {
            for (const auto& s : vars)
                if (s == v) return true;
            return false;
        };
        switch (t->kind) {
            case Term::Kind::Var:
                if (!local(t->name))
                    err(t->line, t->col,
                        "side constraint references '" + t->name +
                            "', which is not bound by this quantifier");
                break;
            case Term::Kind::Const: break;
            case Term::Kind::Add:
            case Term::Kind::Sub:
                check_side_term(t->lhs, vars);
                check_side_term(t->rhs, vars);
                break;
            case Term::Kind::ScalarMul:
                check_side_term(t->lhs, vars);
                break;
            case Term::Kind::Square:
                if (t->lhs->kind != Term::Kind::Var) {
                    err(t->line, t->col,
                        "side constraint squares are restricted to single variables");
                } else if (!local(t->lhs->name)) {
                    err(t->lhs->line, t->lhs->col,
                        "side constraint references '" + t->lhs->name +
                            "', which is not bound by this quantifier");
                }
                break;
            case Term::Kind::NetApply:
            case Term::Kind::NormDiff:
                err(t->line, t->col,
                    "side constraints must be linear or single-square expressions");
                break;
        }
    }

    void check_formula(const FormulaPtr& f) {
        switch (f->kind) {
            case Formula::Kind::Atom:
                check_term(f->a);
                check_term(f->b);
                break;
            case Formula::Kind::And:
            case Formula::Kind::Or:
            case Formula::Kind::Implies:
                check_formula(f->l);
                check_formula(f->r);
                break;
            case Formula::Kind::Not:
                check_formula(f->l);
                break;
            case Formula::Kind::Forall:
            case Formula::Kind::Exists: {
                if (f->vars.size() != f->dom.box.size())
                    err(f->line, f->col, "quantifier binds " + std::to_string(f->vars.size()) +
                                             " variables but has " +
                                             std::to_string(f->dom.box.size()) + " intervals");
                std::set<std::string> seen;
                for (const auto& v : f->vars) {
                    if (!seen.insert(v).second)
                        err(f->line, f->col, "duplicate bound variable '" + v + "'");
                    if (in_scope(v))
                        err(f->line, f->col, "variable '" + v + "' shadows an outer binding");
                }
                for (size_t i = 0; i < f->dom.box.size(); ++i) {
                    const auto& [lo, hi] = f->dom.box[i];
                    if (lo > hi)
                        err(f->line, f->col,
                            "empty interval for '" +
                                (i < f->vars.size() ? f->vars[i] : std::string("?")) + "': [" +
                                to_string(lo) + ", " + to_string(hi) + "]");
                }
                for (const auto& sc : f->dom.side_constraints) {
                    if (sc->kind != Formula::Kind::Atom) {
                        err(sc->line, sc->col, "side constraint must be a comparison");
                        continue;
                    }
                    check_side_term(sc->a, f->vars);
                    check_side_term(sc->b, f->vars);
                }
                size_t base = scope_.size();
                for (const auto& v : f->vars) scope_.push_back(v);
                check_formula(f->body);
                scope_.resize(base);
                break;
            }
        }
    }
};

}  // namespace detail

inline std::variant<TypedSpec, std::vector<TypeError>> typecheck(const PropertySpec& spec) {
    return detail::Checker(spec).run();
}

// Robustness of `net` around `center`: every input within eps of the center
// keeps every output within delta of the center's output. With the Linf norm
// the eps ball is exactly the quantifier box, so the antecedent disappears;
// with L1 the ball sits inside the box and remains as an implication guard.
inline FormulaPtr desugar_robustness(const NetworkDecl& net, const std::vector<Rat>& center,
                                     const Rat& eps, const Rat& delta, NormKind norm) {
    if (static_cast<int>(center.size()) != net.input_dim)
        throw std::invalid_argument("desugar_robustness: center has dimension " +
                                    std::to_string(center.size()) + ", network expects " +
                                    std::to_string(net.input_dim));
    if (eps <= 0) throw std::invalid_argument("desugar_robustness: eps must be positive");
    if (delta <= 0) throw std::invalid_argument("desugar_robustness: delta must be positive");

    std::vector<std::string> vars;
    QuantDomain dom;
    std::vector<TermPtr> center_terms, var_terms;
    for (int i = 0; i < net.input_dim; ++i) {
        vars.push_back("x" + std::to_string(i));
        dom.box.emplace_back(Rat(center[i] - eps), Rat(center[i] + eps));
        center_terms.push_back(t_const(center[i]));
        var_terms.push_back(t_var(vars.back()));
    }
    std::vector<TermPtr> out_center, out_var;
    for (int j = 0; j < net.output_dim; ++j) {
        out_center.push_back(t_apply(net.name, center_terms, j));
        out_var.push_back(t_apply(net.name, var_terms, j));
    }
    FormulaPtr consequent =
        f_atom(Cmp::Le, t_normdiff(norm, out_center, out_var), t_const(delta));
    FormulaPtr body = consequent;
    if (norm == NormKind::L1) {
        FormulaPtr antecedent =
            f_atom(Cmp::Le, t_normdiff(norm, center_terms, var_terms), t_const(eps));
        body = f_implies(antecedent, consequent);
    }
    return f_quant(Formula::Kind::Forall, std::move(vars), std::move(dom), std::move(body));
}

}  // namespace nsp
