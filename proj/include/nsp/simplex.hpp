#pragma once

// Exact rational LP over free variables with inequality rows a·x <= b.
// Feasibility returns either a rational point or Farkas multipliers
// y >= 0 with yᵀA = 0 and yᵀb < 0. An optimization entry point exists for
// the max-slack query on strict systems.
//
// Internals: x = p - q with p, q >= 0, one slack per row, artificial
// start basis, two-phase simplex under Bland's rule (so no cycling and
// guaranteed termination). At a phase-1 optimum with positive objective
// the Farkas multipliers are exactly the reduced costs of the slack
// columns; see check_witness for the invariant they must satisfy.

#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nsp/rational.hpp"

namespace nsp {

struct LinRow {
    std::vector<Rat> a;  // length n_vars
    Rat b;
    bool strict = false;  // a·x < b; ignored for UNSAT (closure), enforced on points
    std::string tag;      // row provenance, drives certificate row ordering docs
};

struct LinearSystem {
    int n_vars = 0;
    std::vector<LinRow> rows;

    void add(std::vector<Rat> a, Rat b, bool strict = false, std::string tag = {}) {
        rows.push_back(LinRow{std::move(a), std::move(b), strict, std::move(tag)});
    }
};

struct FarkasWitness {
    std::vector<Rat> mult;  // one per row, >= 0
    Rat contradiction;      // sum of mult·b, < 0
};

struct LpFeasible {
    std::vector<Rat> point;
};

using LpResult = std::variant<LpFeasible, FarkasWitness>;

// multipliers >= 0, sum mult·a = 0 componentwise, sum mult·b < 0
inline bool check_witness(const LinearSystem& sys, const FarkasWitness& w) {
    if (w.mult.size() != sys.rows.size()) return false;
    std::vector<Rat> acc(sys.n_vars, rat(0));
    Rat rhs = 0;
    for (size_t i = 0; i < sys.rows.size(); ++i) {
        if (w.mult[i] < 0) return false;
        if (w.mult[i] == 0) continue;
        for (int j = 0; j < sys.n_vars; ++j) acc[j] += w.mult[i] * sys.rows[i].a[j];
        rhs += w.mult[i] * sys.rows[i].b;
    }
    for (const Rat& v : acc)
        if (v != 0) return false;
    return rhs < 0 && rhs == w.contradiction;
}

inline bool check_point(const LinearSystem& sys, const std::vector<Rat>& x,
                        bool respect_strict = false) {
    if ((int)x.size() != sys.n_vars) return false;
    for (const LinRow& r : sys.rows) {
        Rat lhs = 0;
        for (int j = 0; j < sys.n_vars; ++j) lhs += r.a[j] * x[j];
        if (respect_strict && r.strict ? !(lhs < r.b) : !(lhs <= r.b)) return false;
    }
    return true;
}

namespace detail {

// Dense tableau for min cᵀv, Mv = d, v >= 0, d >= 0, artificial start.
class Simplex {
  public:
    Simplex(std::vector<std::vector<Rat>> M, std::vector<Rat> d)
        : T_(std::move(M)), d_(std::move(d)), rows_(T_.size()),
          cols_(rows_ ? T_[0].size() : 0) {
        basis_.resize(rows_);
        live_.assign(rows_, true);
        // artificial block appended: column cols_ + i basic in row i
        for (size_t i = 0; i < rows_; ++i) {
            for (size_t r = 0; r < rows_; ++r) T_[r].push_back(r == i ? rat(1) : rat(0));
            basis_[i] = cols_ + i;
        }
        total_ = cols_ + rows_;
    }

    // returns phase-1 objective (0 iff feasible); afterwards rc() has the
    // phase-1 reduced cost row
    Rat phase1() {
        std::vector<Rat> cost(total_, rat(0));
        for (size_t i = 0; i < rows_; ++i) cost[cols_ + i] = 1;
        return run(cost, /*allow_artificial=*/true);
    }

    // phase 2 on the original columns; artificials are pivoted out or their
    // rows dropped first. cost has size cols_.
    Rat phase2(std::vector<Rat> cost) {
        for (size_t i = 0; i < rows_; ++i) {
            if (!live_[i] || basis_[i] < cols_) continue;
            size_t piv = cols_;
            for (size_t j = 0; j < cols_; ++j)
                if (T_[i][j] != 0) { piv = j; break; }
            if (piv == cols_) {
                live_[i] = false;  // redundant row
                continue;
            }
            pivot(i, piv);
        }
        cost.resize(total_, rat(0));
        return run(cost, /*allow_artificial=*/false);
    }

    const Rat& rc(size_t col) const { return rc_[col]; }

    // value of variable col in the current basic solution
    Rat value(size_t col) const {
        for (size_t i = 0; i < rows_; ++i)
            if (live_[i] && basis_[i] == col) return d_[i];
        return rat(0);
    }

  private:
    std::vector<std::vector<Rat>> T_;
    std::vector<Rat> d_;
    std::vector<Rat> rc_;
    std::vector<size_t> basis_;
    std::vector<bool> live_;
    size_t rows_, cols_, total_ = 0;

    void pivot(size_t row, size_t col) {
        Rat p = T_[row][col];
        for (auto& v : T_[row]) v /= p;
        d_[row] /= p;
        for (size_t i = 0; i < rows_; ++i) {
            if (i == row || !live_[i] || T_[i][col] == 0) continue;
            Rat f = T_[i][col];
            for (size_t j = 0; j < total_; ++j) T_[i][j] -= f * T_[row][j];
            d_[i] -= f * d_[row];
        }
        basis_[row] = col;
    }

    Rat run(const std::vector<Rat>& cost, bool allow_artificial) {
        // rc = cost - cost_B · T, objective = cost_B · d
        rc_.assign(total_, rat(0));
        Rat obj = 0;
        for (size_t j = 0; j < total_; ++j) rc_[j] = cost[j];
        for (size_t i = 0; i < rows_; ++i) {
            if (!live_[i] || cost[basis_[i]] == 0) continue;
            const Rat& cb = cost[basis_[i]];
            for (size_t j = 0; j < total_; ++j) rc_[j] -= cb * T_[i][j];
            obj += cb * d_[i];
        }
        size_t limit = allow_artificial ? total_ : cols_;
        for (;;) {
            // Bland: lowest-index entering column with negative reduced cost
            size_t enter = limit;
            for (size_t j = 0; j < limit; ++j)
                if (rc_[j] < 0) { enter = j; break; }
            if (enter == limit) return obj;
            // ratio test, ties broken by lowest basic index
            size_t leave = rows_;
            Rat best;
            for (size_t i = 0; i < rows_; ++i) {
                if (!live_[i] || T_[i][enter] <= 0) continue;
                Rat ratio = d_[i] / T_[i][enter];
                if (leave == rows_ || ratio < best ||
                    (ratio == best && basis_[i] < basis_[leave])) {
                    best = ratio;
                    leave = i;
                }
            }
            if (leave == rows_)
                throw std::logic_error("simplex: unbounded objective");
            Rat f = rc_[enter];
            pivot(leave, enter);
            for (size_t j = 0; j < total_; ++j) rc_[j] -= f * T_[leave][j];
            obj += f * d_[leave];  // f < 0, d >= 0: objective never increases
        }
    }
};

struct Encoded {
    Simplex sx;
    std::vector<int> sign;  // row flip signs
    size_t n, m;
};

// columns: p (n), q (n), slack (m); rows flipped so d >= 0
inline Encoded encode(const LinearSystem& sys) {
    size_t n = sys.n_vars, m = sys.rows.size();
    std::vector<std::vector<Rat>> M(m, std::vector<Rat>(2 * n + m, rat(0)));
    std::vector<Rat> d(m);
    std::vector<int> sign(m, 1);
    for (size_t i = 0; i < m; ++i) {
        const LinRow& r = sys.rows[i];
        int s = r.b < 0 ? -1 : 1;
        sign[i] = s;
        for (size_t j = 0; j < n; ++j) {
            M[i][j] = s * r.a[j];
            M[i][n + j] = -s * r.a[j];
        }
        M[i][2 * n + i] = s;
        d[i] = s * r.b;
    }
    return Encoded{Simplex(std::move(M), std::move(d)), std::move(sign), n, m};
}

}  // namespace detail

inline LpResult lp_feasible(const LinearSystem& sys) {
    if (sys.rows.empty()) return LpFeasible{std::vector<Rat>(sys.n_vars, rat(0))};
    detail::Encoded e = detail::encode(sys);
    Rat infeas = e.sx.phase1();
    if (infeas > 0) {
        FarkasWitness w;
        w.mult.resize(e.m);
        w.contradiction = 0;
        for (size_t i = 0; i < e.m; ++i) {
            w.mult[i] = e.sx.rc(2 * e.n + i);
            w.contradiction += w.mult[i] * sys.rows[i].b;
        }
        if (!check_witness(sys, w))
            throw std::logic_error("simplex: extracted Farkas witness failed its recheck");
        return w;
    }
    std::vector<Rat> x(e.n);
    for (size_t j = 0; j < e.n; ++j) {
        Rat xj = e.sx.value(j) - e.sx.value(e.n + j);
        x[j] = xj;
    }
    if (!check_point(sys, x))
        throw std::logic_error("simplex: extracted point failed its recheck");
    return LpFeasible{std::move(x)};
}

struct LpOptimum {
    bool feasible = false;
    Rat value;
    std::vector<Rat> argmax;
};

// max cᵀx subject to sys; caller must ensure the objective is bounded on
// the feasible set (throws std::logic_error otherwise)
inline LpOptimum lp_maximize(const LinearSystem& sys, const std::vector<Rat>& c) {
    detail::Encoded e = detail::encode(sys);
    if (e.m > 0 && e.sx.phase1() > 0) return LpOptimum{};
    std::vector<Rat> cost(2 * e.n + e.m, rat(0));
    for (size_t j = 0; j < e.n; ++j) {
        cost[j] = -c[j];  // minimize -cᵀx
        cost[e.n + j] = c[j];
    }
    Rat neg = e.sx.phase2(std::move(cost));
    LpOptimum out;
    out.feasible = true;
    out.value = -neg;
    out.argmax.resize(e.n);
    for (size_t j = 0; j < e.n; ++j) out.argmax[j] = e.sx.value(j) - e.sx.value(e.n + j);
    if (!check_point(sys, out.argmax))
        throw std::logic_error("simplex: extracted optimum failed its recheck");
    return out;
}

}  // namespace nsp
