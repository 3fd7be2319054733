#pragma once

// Recursive-descent parser for .nsp property specs.
//
// Terms and formulas share one precedence tower and are told apart by the
// resulting node type, which keeps the grammar LL(1):
//
//   expr    := quantified | implies
//   implies := or ("=>" implies)?            right associative
//   or      := and ("or" and)*
//   and     := unary ("and" unary)*
//   unary   := "not" unary | cmp
//   cmp     := sum (CMPOP sum)?              at most one comparison
//   sum     := product (("+"|"-") product)*
//   product := neg (("*"|"/") neg)*
//   neg     := "-" neg | primary
//   primary := NUMBER | IDENT | IDENT "[" expr,* "]" "!" INT
//            | ("linf_dist"|"l1_dist") "(" "[" expr,* "]" "," "[" expr,* "]" ")"
//            | "(" expr ")"
//
// Products are lowered on the spot: const*const folds, const*t becomes
// ScalarMul, t*t with structurally equal factors becomes Square, anything
// else is rejected as a nonlinear product. Division requires a nonzero
// constant divisor. Declared constants are substituted at parse time, so
// the AST contains no free names besides quantifier-bound variables.

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nsp/ast.hpp"
#include "nsp/rational.hpp"

namespace nsp {

struct ParseError : std::runtime_error {
    int line, col;
    std::string message;
    std::vector<std::string> expected;

    ParseError(int line_, int col_, std::string msg, std::vector<std::string> exp = {})
        : std::runtime_error(format(line_, col_, msg, exp)),
          line(line_), col(col_), message(std::move(msg)), expected(std::move(exp)) {}

    static std::string format(int line, int col, const std::string& msg,
                              const std::vector<std::string>& exp) {
        std::string s = "parse error at " + std::to_string(line) + ":" + std::to_string(col) +
                        ": " + msg;
        if (!exp.empty()) {
            s += " (expected ";
            for (size_t i = 0; i < exp.size(); ++i) {
                if (i) s += ", ";
                s += exp[i];
            }
            s += ")";
        }
        return s;
    }
};

namespace detail {

enum class Tok {
    Ident, Number, Keyword,
    LParen, RParen, LBracket, RBracket,
    Comma, Dot, Colon, Bang,
    Plus, Minus, Star, Slash,
    Eq, Arrow, Implies,
    Le, Lt, Ge, Gt,
    Newline, End,
};

struct Token {
    Tok kind;
    std::string text;
    int line, col;
};

inline bool is_keyword(const std::string& s) {
    static const std::set<std::string> kw = {
        "network", "const", "prop", "forall", "exists", "where", "in",
        "and", "or", "not", "linf_dist", "l1_dist",
    };
    return kw.count(s) != 0;
}

inline std::vector<Token> lex(const std::string& text) {
    std::vector<Token> out;
    int line = 1, col = 1;
    size_t i = 0;
    const size_t n = text.size();
    auto push = [&](Tok k, std::string t, int l, int c) {
        out.push_back(Token{k, std::move(t), l, c});
    };
    while (i < n) {
        char c = text[i];
        if (c == '\n') {
            push(Tok::Newline, "\n", line, col);
            ++i;
            ++line;
            col = 1;
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            ++col;
            continue;
        }
        if (c == '#') {
            while (i < n && text[i] != '\n') ++i;
            continue;
        }
        int tl = line, tc = col;
        if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            // decimal point only when followed by a digit, so "1 . x" lexes
            // as three tokens while "1.5" stays one
            if (j + 1 < n && text[j] == '.' && std::isdigit(static_cast<unsigned char>(text[j + 1]))) {
                ++j;
                while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            }
            push(Tok::Number, text.substr(i, j - i), tl, tc);
            col += static_cast<int>(j - i);
            i = j;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t j = i;
            while (j < n && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) ++j;
            std::string word = text.substr(i, j - i);
            push(is_keyword(word) ? Tok::Keyword : Tok::Ident, word, tl, tc);
            col += static_cast<int>(j - i);
            i = j;
            continue;
        }
        auto two = [&](char a, char b) { return c == a && i + 1 < n && text[i + 1] == b; };
        if (two('<', '=')) { push(Tok::Le, "<=", tl, tc); i += 2; col += 2; continue; }
        if (two('>', '=')) { push(Tok::Ge, ">=", tl, tc); i += 2; col += 2; continue; }
        if (two('=', '>')) { push(Tok::Implies, "=>", tl, tc); i += 2; col += 2; continue; }
        if (two('-', '>')) { push(Tok::Arrow, "->", tl, tc); i += 2; col += 2; continue; }
        Tok k;
        switch (c) {
            case '(': k = Tok::LParen; break;
            case ')': k = Tok::RParen; break;
            case '[': k = Tok::LBracket; break;
            case ']': k = Tok::RBracket; break;
            case ',': k = Tok::Comma; break;
            case '.': k = Tok::Dot; break;
            case ':': k = Tok::Colon; break;
            case '!': k = Tok::Bang; break;
            case '+': k = Tok::Plus; break;
            case '-': k = Tok::Minus; break;
            case '*': k = Tok::Star; break;
            case '/': k = Tok::Slash; break;
            case '=': k = Tok::Eq; break;
            case '<': k = Tok::Lt; break;
            case '>': k = Tok::Gt; break;
            default:
                throw ParseError(tl, tc, std::string("unexpected character '") + c + "'");
        }
        push(k, std::string(1, c), tl, tc);
        ++i;
        ++col;
    }
    out.push_back(Token{Tok::End, "", line, col});
    return out;
}

// Either a term or a formula; resolved by context.
using Expr = std::variant<TermPtr, FormulaPtr>;

class Parser {
  public:
    explicit Parser(const std::string& text) : toks_(lex(text)) {}

    PropertySpec parse_spec() {
        PropertySpec spec;
        while (!at(Tok::End)) {
            if (at(Tok::Newline)) {
                advance();
                continue;
            }
            const Token& t = peek();
            if (t.kind == Tok::Keyword && t.text == "network") {
                spec.networks.push_back(parse_network());
            } else if (t.kind == Tok::Keyword && t.text == "const") {
                parse_const(spec);
            } else if (t.kind == Tok::Keyword && t.text == "prop") {
                spec.properties.push_back(parse_prop());
            } else {
                throw ParseError(t.line, t.col, "expected a declaration",
                                 {"network", "const", "prop"});
            }
            if (!at(Tok::End)) expect(Tok::Newline, "end of line");
        }
        return spec;
    }

  private:
    std::vector<Token> toks_;
    size_t pos_ = 0;
    std::map<std::string, Rat> consts_;
    std::set<std::string> net_names_;

    const Token& peek(size_t ahead = 0) const {
        size_t p = pos_ + ahead;
        return toks_[p < toks_.size() ? p : toks_.size() - 1];
    }
    bool at(Tok k) const { return peek().kind == k; }
    bool at_kw(const char* kw) const {
        return peek().kind == Tok::Keyword && peek().text == kw;
    }
    const Token& advance() { return toks_[pos_++]; }
    const Token& expect(Tok k, const char* what) {
        if (!at(k)) throw ParseError(peek().line, peek().col,
                                     "unexpected '" + describe(peek()) + "'", {what});
        return advance();
    }
    void expect_kw(const char* kw) {
        if (!at_kw(kw)) throw ParseError(peek().line, peek().col,
                                         "unexpected '" + describe(peek()) + "'", {kw});
        advance();
    }
    static std::string describe(const Token& t) {
        if (t.kind == Tok::End) return "end of input";
        if (t.kind == Tok::Newline) return "end of line";
        return t.text;
    }

    long parse_int() {
        const Token& t = expect(Tok::Number, "integer");
        if (t.text.find('.') != std::string::npos)
            throw ParseError(t.line, t.col, "expected an integer, got '" + t.text + "'");
        return std::stol(t.text);
    }

    NetworkDecl parse_network() {
        int line = peek().line;
        advance();  // network
        NetworkDecl d;
        d.line = line;
        d.name = expect(Tok::Ident, "network name").text;
        if (net_names_.count(d.name) || consts_.count(d.name))
            throw ParseError(line, peek().col, "duplicate declaration of '" + d.name + "'");
        expect(Tok::Colon, ":");
        d.input_dim = static_cast<int>(parse_int());
        expect(Tok::Arrow, "->");
        d.output_dim = static_cast<int>(parse_int());
        net_names_.insert(d.name);
        return d;
    }

    void parse_const(PropertySpec& spec) {
        int line = peek().line;
        advance();  // const
        std::string name = expect(Tok::Ident, "constant name").text;
        if (consts_.count(name) || net_names_.count(name))
            throw ParseError(line, peek().col, "duplicate declaration of '" + name + "'");
        expect(Tok::Eq, "=");
        Rat v = parse_const_term();
        consts_[name] = v;
        spec.constants.push_back(ConstDecl{name, v, line});
    }

    std::pair<std::string, FormulaPtr> parse_prop() {
        advance();  // prop
        std::string name = expect(Tok::Ident, "property name").text;
        expect(Tok::Colon, ":");
        return {name, parse_formula()};
    }

    // A term expression that must fold to a constant (box bounds,
    // const declarations).
    Rat parse_const_term() {
        const Token& t = peek();
        TermPtr e = as_term(parse_sum());
        if (e->kind != Term::Kind::Const)
            throw ParseError(t.line, t.col, "expected a constant expression");
        return e->value;
    }

    FormulaPtr parse_formula() {
        const Token& t = peek();
        Expr e = parse_expr();
        if (!std::holds_alternative<FormulaPtr>(e))
            throw ParseError(t.line, t.col, "expected a formula, got a term");
        return std::get<FormulaPtr>(e);
    }

    TermPtr as_term(Expr e) {
        if (std::holds_alternative<TermPtr>(e)) return std::get<TermPtr>(e);
        const auto& f = std::get<FormulaPtr>(e);
        throw ParseError(f->line, f->col, "expected a term, got a formula");
    }

    Expr parse_expr() {
        if (at_kw("forall") || at_kw("exists")) return parse_quantifier();
        return parse_implies();
    }

    Expr parse_quantifier() {
        const Token& q = advance();
        bool is_forall = q.text == "forall";
        std::vector<std::string> vars;
        QuantDomain dom;
        for (;;) {
            const Token& v = expect(Tok::Ident, "variable name");
            if (consts_.count(v.text) || net_names_.count(v.text))
                throw ParseError(v.line, v.col,
                                 "cannot bind '" + v.text + "': name is already declared");
            vars.push_back(v.text);
            expect_kw("in");
            expect(Tok::LBracket, "[");
            Rat lo = parse_const_term();
            expect(Tok::Comma, ",");
            Rat hi = parse_const_term();
            expect(Tok::RBracket, "]");
            dom.box.emplace_back(lo, hi);
            if (at(Tok::Comma)) { advance(); continue; }
            break;
        }
        if (at_kw("where")) {
            advance();
            for (;;) {
                const Token& t = peek();
                Expr e = parse_cmp();
                if (!std::holds_alternative<FormulaPtr>(e))
                    throw ParseError(t.line, t.col, "side constraint must be a comparison");
                dom.side_constraints.push_back(std::get<FormulaPtr>(e));
                if (at(Tok::Comma)) { advance(); continue; }
                break;
            }
        }
        expect(Tok::Dot, ".");
        const Token& bt = peek();
        Expr body = parse_expr();
        if (!std::holds_alternative<FormulaPtr>(body))
            throw ParseError(bt.line, bt.col, "quantifier body must be a formula");
        return f_quant(is_forall ? Formula::Kind::Forall : Formula::Kind::Exists,
                       std::move(vars), std::move(dom), std::get<FormulaPtr>(body),
                       q.line, q.col);
    }

    Expr parse_implies() {
        Expr l = parse_or();
        if (at(Tok::Implies)) {
            const Token& t = advance();
            Expr r = parse_implies();
            return f_implies(expect_formula(l, t), expect_formula(r, t));
        }
        return l;
    }

    Expr parse_or() {
        Expr l = parse_and();
        while (at_kw("or")) {
            const Token& t = advance();
            Expr r = parse_and();
            l = f_or(expect_formula(l, t), expect_formula(r, t));
        }
        return l;
    }

    Expr parse_and() {
        Expr l = parse_unary();
        while (at_kw("and")) {
            const Token& t = advance();
            Expr r = parse_unary();
            l = f_and(expect_formula(l, t), expect_formula(r, t));
        }
        return l;
    }

    Expr parse_unary() {
        if (at_kw("not")) {
            const Token& t = advance();
            Expr e = parse_unary();
            return f_not(expect_formula(e, t));
        }
        // quantifiers bind loosest on their right: the body extends as far
        // as the expression allows, so under a binary connective the
        // quantified operand is written parenthesized
        if (at_kw("forall") || at_kw("exists")) return parse_quantifier();
        return parse_cmp();
    }

    FormulaPtr expect_formula(const Expr& e, const Token& op) {
        if (!std::holds_alternative<FormulaPtr>(e))
            throw ParseError(op.line, op.col,
                             "operand of '" + op.text + "' must be a formula");
        return std::get<FormulaPtr>(e);
    }

    Expr parse_cmp() {
        Expr l = parse_sum();
        std::optional<Cmp> cmp;
        if (at(Tok::Le)) cmp = Cmp::Le;
        else if (at(Tok::Lt)) cmp = Cmp::Lt;
        else if (at(Tok::Ge)) cmp = Cmp::Ge;
        else if (at(Tok::Gt)) cmp = Cmp::Gt;
        if (!cmp) return l;
        const Token& t = advance();
        Expr r = parse_sum();
        return f_atom(*cmp, as_term(std::move(l)), as_term(std::move(r)), t.line, t.col);
    }

    Expr parse_sum() {
        Expr l = parse_product();
        while (at(Tok::Plus) || at(Tok::Minus)) {
            bool plus = at(Tok::Plus);
            advance();
            TermPtr a = as_term(std::move(l));
            TermPtr b = as_term(parse_product());
            if (a->kind == Term::Kind::Const && b->kind == Term::Kind::Const) {
                Rat v = plus ? Rat(a->value + b->value) : Rat(a->value - b->value);
                l = t_const(v, a->line, a->col);
            } else {
                l = plus ? t_add(a, b) : t_sub(a, b);
            }
        }
        return l;
    }

    Expr parse_product() {
        Expr l = parse_neg();
        while (at(Tok::Star) || at(Tok::Slash)) {
            bool mul = at(Tok::Star);
            const Token& t = advance();
            TermPtr a = as_term(std::move(l));
            TermPtr b = as_term(parse_neg());
            l = mul ? lower_mul(a, b, t) : lower_div(a, b, t);
        }
        return l;
    }

    static TermPtr lower_mul(const TermPtr& a, const TermPtr& b, const Token& t) {
        bool ac = a->kind == Term::Kind::Const;
        bool bc = b->kind == Term::Kind::Const;
        if (ac && bc) return t_const(Rat(a->value * b->value), a->line, a->col);
        if (ac) return t_smul(a->value, b);
        if (bc) return t_smul(b->value, a);
        if (term_equal(a, b)) return t_square(a);
        throw ParseError(t.line, t.col,
                         "nonlinear product: only constant factors or a square of "
                         "identical terms is allowed");
    }

    static TermPtr lower_div(const TermPtr& a, const TermPtr& b, const Token& t) {
        if (b->kind != Term::Kind::Const)
            throw ParseError(t.line, t.col, "divisor must be a constant expression");
        if (b->value == 0) throw ParseError(t.line, t.col, "division by zero");
        Rat inv = Rat(1) / b->value;
        if (a->kind == Term::Kind::Const) return t_const(Rat(a->value * inv), a->line, a->col);
        return t_smul(inv, a);
    }

    Expr parse_neg() {
        if (at(Tok::Minus)) {
            const Token& t = advance();
            TermPtr e = as_term(parse_neg());
            if (e->kind == Term::Kind::Const) return Expr(t_const(Rat(-e->value), t.line, t.col));
            return Expr(t_smul(rat(-1), e));
        }
        return parse_primary();
    }

    Expr parse_primary() {
        const Token& t = peek();
        switch (t.kind) {
            case Tok::Number: {
                advance();
                auto v = try_parse_rational(t.text);
                if (!v) throw ParseError(t.line, t.col, "bad number literal '" + t.text + "'");
                return Expr(t_const(*v, t.line, t.col));
            }
            case Tok::Ident: {
                advance();
                if (at(Tok::LBracket)) return parse_apply(t);
                auto it = consts_.find(t.text);
                if (it != consts_.end()) return Expr(t_const(it->second, t.line, t.col));
                return Expr(t_var(t.text, t.line, t.col));
            }
            case Tok::Keyword: {
                if (t.text == "linf_dist" || t.text == "l1_dist") {
                    advance();
                    return parse_normdiff(t);
                }
                break;
            }
            case Tok::LParen: {
                advance();
                Expr e = parse_expr();
                expect(Tok::RParen, ")");
                return e;
            }
            default: break;
        }
        throw ParseError(t.line, t.col, "unexpected '" + describe(t) + "'",
                         {"number", "identifier", "("});
    }

    Expr parse_apply(const Token& name) {
        expect(Tok::LBracket, "[");
        std::vector<TermPtr> args;
        if (!at(Tok::RBracket)) {
            for (;;) {
                args.push_back(as_term(parse_sum()));
                if (at(Tok::Comma)) { advance(); continue; }
                break;
            }
        }
        expect(Tok::RBracket, "]");
        expect(Tok::Bang, "!");
        long idx = parse_int();
        return Expr(t_apply(name.text, std::move(args), static_cast<int>(idx),
                            name.line, name.col));
    }

    Expr parse_normdiff(const Token& kw) {
        NormKind norm = kw.text == "linf_dist" ? NormKind::Linf : NormKind::L1;
        expect(Tok::LParen, "(");
        auto vec = [&]() {
            expect(Tok::LBracket, "[");
            std::vector<TermPtr> v;
            for (;;) {
                v.push_back(as_term(parse_sum()));
                if (at(Tok::Comma)) { advance(); continue; }
                break;
            }
            expect(Tok::RBracket, "]");
            return v;
        };
        std::vector<TermPtr> a = vec();
        expect(Tok::Comma, ",");
        std::vector<TermPtr> b = vec();
        expect(Tok::RParen, ")");
        return Expr(t_normdiff(norm, std::move(a), std::move(b), kw.line, kw.col));
    }
};

}  // namespace detail

inline PropertySpec parse_spec(const std::string& text) {
    return detail::Parser(text).parse_spec();
}

}  // namespace nsp
