#pragma once

// Exact rational scalar type and string conversions. All arithmetic on the
// verification path goes through Rat; doubles appear only in training code.

#include <gmpxx.h>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nsp {

using Rat = mpq_class;

inline Rat rat(long num, long den = 1) {
    Rat r(num, den);
    r.canonicalize();
    return r;
}

inline std::string to_string(const Rat& r) {
    return r.get_str();
}

inline double to_double(const Rat& r) {
    return r.get_d();
}

// Exact binary value of a finite double.
inline Rat rat_from_double(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("rat_from_double: non-finite");
    Rat r(x);
    r.canonicalize();
    return r;
}

// num / 2^bits
inline Rat dyadic(long num, unsigned bits) {
    mpz_class d(1);
    d <<= bits;
    Rat r(mpz_class(num), d);
    r.canonicalize();
    return r;
}

// Accepts integers ("-3"), fractions ("3/10"), and decimals ("0.25", "-1.5").
// Decimals are read as exact base-10 rationals, never as binary floats.
inline std::optional<Rat> try_parse_rational(std::string_view s) {
    if (s.empty()) return std::nullopt;
    size_t i = 0;
    bool neg = false;
    if (s[i] == '+' || s[i] == '-') {
        neg = (s[i] == '-');
        ++i;
    }
    if (i >= s.size()) return std::nullopt;

    auto digits = [&](size_t& j) {
        size_t start = j;
        while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
        return j > start;
    };

    size_t j = i;
    if (!digits(j)) return std::nullopt;
    std::string intpart(s.substr(i, j - i));

    if (j == s.size()) {
        Rat r(intpart, 10);
        r.canonicalize();
        return neg ? Rat(-r) : r;
    }
    if (s[j] == '/') {
        size_t k = ++j;
        if (!digits(j) || j != s.size()) return std::nullopt;
        std::string den(s.substr(k, j - k));
        if (mpz_class(den, 10) == 0) return std::nullopt;
        Rat r(intpart + "/" + den, 10);
        r.canonicalize();
        return neg ? Rat(-r) : r;
    }
    if (s[j] == '.') {
        size_t k = ++j;
        if (!digits(j) || j != s.size()) return std::nullopt;
        std::string frac(s.substr(k, j - k));
        mpz_class num(intpart + frac, 10);
        mpz_class den(1);
        for (size_t d = 0; d < frac.size(); ++d) den *= 10;
        Rat r(num, den);
        r.canonicalize();
        return neg ? Rat(-r) : r;
    }
    return std::nullopt;
}

inline Rat parse_rational(const std::string& s) {
    auto r = try_parse_rational(s);
    if (!r) throw std::invalid_argument("not a rational literal: '" + s + "'");
    return *r;
}

inline Rat rat_abs(const Rat& r) { return r < 0 ? Rat(-r) : r; }
inline Rat rat_min(const Rat& a, const Rat& b) { return a <= b ? a : b; }
inline Rat rat_max(const Rat& a, const Rat& b) { return a >= b ? a : b; }

}  // namespace nsp
