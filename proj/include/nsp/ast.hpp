#pragma once

// Typed first-order property AST shared by the training and verification
// backends. Nodes are immutable and shared; builders return shared_ptr.

#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nsp/rational.hpp"

namespace nsp {

enum class Cmp { Le, Lt, Ge, Gt };
enum class NormKind { Linf, L1 };

inline const char* cmp_str(Cmp c) {
    switch (c) {
        case Cmp::Le: return "<=";
        case Cmp::Lt: return "<";
        case Cmp::Ge: return ">=";
        case Cmp::Gt: return ">";
    }
    return "?";
}

struct Term;
using TermPtr = std::shared_ptr<const Term>;

struct Term {
    enum class Kind { Var, Const, Add, Sub, ScalarMul, Square, NetApply, NormDiff };

    Kind kind;
    std::string name;            // Var; NetApply: network name
    Rat value;                   // Const; ScalarMul: coefficient
    TermPtr lhs, rhs;            // Add/Sub; ScalarMul and Square use lhs only
    std::vector<TermPtr> args;   // NetApply arguments; NormDiff left vector
    std::vector<TermPtr> args2;  // NormDiff right vector
    int out_index = 0;           // NetApply
    NormKind norm = NormKind::Linf;
    int line = 0, col = 0;
};

inline TermPtr t_var(std::string name, int line = 0, int col = 0) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::Var;
    t->name = std::move(name);
    t->line = line;
    t->col = col;
    return t;
}

inline TermPtr t_const(Rat v, int line = 0, int col = 0) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::Const;
    t->value = std::move(v);
    t->line = line;
    t->col = col;
    return t;
}

inline TermPtr t_add(TermPtr a, TermPtr b) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::Add;
    t->line = a->line;
    t->col = a->col;
    t->lhs = std::move(a);
    t->rhs = std::move(b);
    return t;
}

inline TermPtr t_sub(TermPtr a, TermPtr b) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::Sub;
    t->line = a->line;
    t->col = a->col;
    t->lhs = std::move(a);
    t->rhs = std::move(b);
    return t;
}

inline TermPtr t_smul(Rat coeff, TermPtr a) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::ScalarMul;
    t->value = std::move(coeff);
    t->line = a->line;
    t->col = a->col;
    t->lhs = std::move(a);
    return t;
}

inline TermPtr t_square(TermPtr a) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::Square;
    t->line = a->line;
    t->col = a->col;
    t->lhs = std::move(a);
    return t;
}

inline TermPtr t_apply(std::string net, std::vector<TermPtr> args, int out_index,
                       int line = 0, int col = 0) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::NetApply;
    t->name = std::move(net);
    t->args = std::move(args);
    t->out_index = out_index;
    t->line = line;
    t->col = col;
    return t;
}

inline TermPtr t_normdiff(NormKind norm, std::vector<TermPtr> a, std::vector<TermPtr> b,
                          int line = 0, int col = 0) {
    auto t = std::make_shared<Term>();
    t->kind = Term::Kind::NormDiff;
    t->norm = norm;
    t->args = std::move(a);
    t->args2 = std::move(b);
    t->line = line;
    t->col = col;
    return t;
}

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

// Bounded quantifier domain: a closed box per bound variable plus
// linear-or-single-square side constraints (stored as Atom formulas).
struct QuantDomain {
    std::vector<std::pair<Rat, Rat>> box;  // parallel to the quantifier's vars
    std::vector<FormulaPtr> side_constraints;
};

struct Formula {
    enum class Kind { Atom, And, Or, Not, Implies, Forall, Exists };

    Kind kind;
    Cmp cmp = Cmp::Le;  // Atom
    TermPtr a, b;       // Atom
    FormulaPtr l, r;    // And/Or/Implies; Not uses l
    std::vector<std::string> vars;  // quantifiers
    QuantDomain dom;
    FormulaPtr body;
    int line = 0, col = 0;
};

inline FormulaPtr f_atom(Cmp cmp, TermPtr a, TermPtr b, int line = 0, int col = 0) {
    auto f = std::make_shared<Formula>();
    f->kind = Formula::Kind::Atom;
    f->cmp = cmp;
    f->a = std::move(a);
    f->b = std::move(b);
    f->line = line;
    f->col = col;
    return f;
}

inline FormulaPtr f_binary(Formula::Kind k, FormulaPtr l, FormulaPtr r) {
    auto f = std::make_shared<Formula>();
    f->kind = k;
    f->line = l->line;
    f->col = l->col;
    f->l = std::move(l);
    f->r = std::move(r);
    return f;
}

inline FormulaPtr f_and(FormulaPtr l, FormulaPtr r) { return f_binary(Formula::Kind::And, std::move(l), std::move(r)); }
inline FormulaPtr f_or(FormulaPtr l, FormulaPtr r) { return f_binary(Formula::Kind::Or, std::move(l), std::move(r)); }
inline FormulaPtr f_implies(FormulaPtr l, FormulaPtr r) { return f_binary(Formula::Kind::Implies, std::move(l), std::move(r)); }

inline FormulaPtr f_not(FormulaPtr l) {
    auto f = std::make_shared<Formula>();
    f->kind = Formula::Kind::Not;
    f->line = l->line;
    f->col = l->col;
    f->l = std::move(l);
    return f;
}

inline FormulaPtr f_quant(Formula::Kind k, std::vector<std::string> vars, QuantDomain dom,
                          FormulaPtr body, int line = 0, int col = 0) {
    auto f = std::make_shared<Formula>();
    f->kind = k;
    f->vars = std::move(vars);
    f->dom = std::move(dom);
    f->body = std::move(body);
    f->line = line;
    f->col = col;
    return f;
}

struct NetworkDecl {
    std::string name;
    int input_dim = 0;
    int output_dim = 0;
    int line = 0;
};

struct ConstDecl {
    std::string name;
    Rat value;
    int line = 0;
};

struct PropertySpec {
    std::vector<NetworkDecl> networks;
    std::vector<ConstDecl> constants;
    std::vector<std::pair<std::string, FormulaPtr>> properties;
};

// ---- structural equality (ignores source locations) ----

inline bool term_equal(const TermPtr& x, const TermPtr& y) {
    if (x == y) return true;
    if (!x || !y) return false;
    if (x->kind != y->kind) return false;
    switch (x->kind) {
        case Term::Kind::Var: return x->name == y->name;
        case Term::Kind::Const: return x->value == y->value;
        case Term::Kind::Add:
        case Term::Kind::Sub:
            return term_equal(x->lhs, y->lhs) && term_equal(x->rhs, y->rhs);
        case Term::Kind::ScalarMul:
            return x->value == y->value && term_equal(x->lhs, y->lhs);
        case Term::Kind::Square: return term_equal(x->lhs, y->lhs);
        case Term::Kind::NetApply: {
            if (x->name != y->name || x->out_index != y->out_index) return false;
            if (x->args.size() != y->args.size()) return false;
            for (size_t i = 0; i < x->args.size(); ++i)
                if (!term_equal(x->args[i], y->args[i])) return false;
            return true;
        }
        case Term::Kind::NormDiff: {
            if (x->norm != y->norm) return false;
            if (x->args.size() != y->args.size() || x->args2.size() != y->args2.size()) return false;
            for (size_t i = 0; i < x->args.size(); ++i)
                if (!term_equal(x->args[i], y->args[i])) return false;
            for (size_t i = 0; i < x->args2.size(); ++i)
                if (!term_equal(x->args2[i], y->args2[i])) return false;
            return true;
        }
    }
    return false;
}

inline bool formula_equal(const FormulaPtr& x, const FormulaPtr& y) {
    if (x == y) return true;
    if (!x || !y) return false;
    if (x->kind != y->kind) return false;
    switch (x->kind) {
        case Formula::Kind::Atom:
            return x->cmp == y->cmp && term_equal(x->a, y->a) && term_equal(x->b, y->b);
        case Formula::Kind::And:
        case Formula::Kind::Or:
        case Formula::Kind::Implies:
            return formula_equal(x->l, y->l) && formula_equal(x->r, y->r);
        case Formula::Kind::Not: return formula_equal(x->l, y->l);
        case Formula::Kind::Forall:
        case Formula::Kind::Exists: {
            if (x->vars != y->vars) return false;
            if (x->dom.box != y->dom.box) return false;
            if (x->dom.side_constraints.size() != y->dom.side_constraints.size()) return false;
            for (size_t i = 0; i < x->dom.side_constraints.size(); ++i)
                if (!formula_equal(x->dom.side_constraints[i], y->dom.side_constraints[i])) return false;
            return formula_equal(x->body, y->body);
        }
    }
    return false;
}

inline bool spec_equal(const PropertySpec& a, const PropertySpec& b) {
    if (a.networks.size() != b.networks.size() || a.constants.size() != b.constants.size() ||
        a.properties.size() != b.properties.size())
        return false;
    for (size_t i = 0; i < a.networks.size(); ++i) {
        const auto& x = a.networks[i];
        const auto& y = b.networks[i];
        if (x.name != y.name || x.input_dim != y.input_dim || x.output_dim != y.output_dim) return false;
    }
    for (size_t i = 0; i < a.constants.size(); ++i)
        if (a.constants[i].name != b.constants[i].name || a.constants[i].value != b.constants[i].value)
            return false;
    for (size_t i = 0; i < a.properties.size(); ++i)
        if (a.properties[i].first != b.properties[i].first ||
            !formula_equal(a.properties[i].second, b.properties[i].second))
            return false;
    return true;
}

// ---- printer ----
//
// Fully parenthesized canonical form; parse_spec(print_spec(s)) yields a
// structurally identical spec.

inline void print_term(std::ostream& os, const TermPtr& t) {
    switch (t->kind) {
        case Term::Kind::Var: os << t->name; break;
        case Term::Kind::Const: os << to_string(t->value); break;
        case Term::Kind::Add:
            os << "(";
            print_term(os, t->lhs);
            os << " + ";
            print_term(os, t->rhs);
            os << ")";
            break;
        case Term::Kind::Sub:
            os << "(";
            print_term(os, t->lhs);
            os << " - ";
            print_term(os, t->rhs);
            os << ")";
            break;
        case Term::Kind::ScalarMul:
            os << "(" << to_string(t->value) << " * ";
            print_term(os, t->lhs);
            os << ")";
            break;
        case Term::Kind::Square:
            os << "(";
            print_term(os, t->lhs);
            os << " * ";
            print_term(os, t->lhs);
            os << ")";
            break;
        case Term::Kind::NetApply: {
            os << t->name << "[";
            for (size_t i = 0; i < t->args.size(); ++i) {
                if (i) os << ", ";
                print_term(os, t->args[i]);
            }
            os << "]!" << t->out_index;
            break;
        }
        case Term::Kind::NormDiff: {
            os << (t->norm == NormKind::Linf ? "linf_dist" : "l1_dist") << "([";
            for (size_t i = 0; i < t->args.size(); ++i) {
                if (i) os << ", ";
                print_term(os, t->args[i]);
            }
            os << "], [";
            for (size_t i = 0; i < t->args2.size(); ++i) {
                if (i) os << ", ";
                print_term(os, t->args2[i]);
            }
            os << "])";
            break;
        }
    }
}

inline void print_formula(std::ostream& os, const FormulaPtr& f) {
    switch (f->kind) {
        case Formula::Kind::Atom:
            print_term(os, f->a);
            os << " " << cmp_str(f->cmp) << " ";
            print_term(os, f->b);
            break;
        case Formula::Kind::And:
            os << "(";
            print_formula(os, f->l);
            os << " and ";
            print_formula(os, f->r);
            os << ")";
            break;
        case Formula::Kind::Or:
            os << "(";
            print_formula(os, f->l);
            os << " or ";
            print_formula(os, f->r);
            os << ")";
            break;
        case Formula::Kind::Implies:
            os << "(";
            print_formula(os, f->l);
            os << " => ";
            print_formula(os, f->r);
            os << ")";
            break;
        case Formula::Kind::Not:
            os << "not (";
            print_formula(os, f->l);
            os << ")";
            break;
        case Formula::Kind::Forall:
        case Formula::Kind::Exists: {
            // always parenthesized: a bare quantifier body extends as far
            // right as possible, which would change grouping under binary
            // connectives
            os << "(" << (f->kind == Formula::Kind::Forall ? "forall " : "exists ");
            for (size_t i = 0; i < f->vars.size(); ++i) {
                if (i) os << ", ";
                os << f->vars[i] << " in [" << to_string(f->dom.box[i].first) << ", "
                   << to_string(f->dom.box[i].second) << "]";
            }
            if (!f->dom.side_constraints.empty()) {
                os << " where ";
                for (size_t i = 0; i < f->dom.side_constraints.size(); ++i) {
                    if (i) os << ", ";
                    print_formula(os, f->dom.side_constraints[i]);
                }
            }
            os << " . ";
            print_formula(os, f->body);
            os << ")";
            break;
        }
    }
}

inline std::string print_spec(const PropertySpec& spec) {
    std::ostringstream os;
    for (const auto& n : spec.networks)
        os << "network " << n.name << " : " << n.input_dim << " -> " << n.output_dim << "\n";
    for (const auto& c : spec.constants)
        os << "const " << c.name << " = " << to_string(c.value) << "\n";
    for (const auto& p : spec.properties) {
        os << "prop " << p.first << ": ";
        print_formula(os, p.second);
        os << "\n";
    }
    return os.str();
}

}  // namespace nsp
