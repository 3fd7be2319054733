#include <catch2/catch_amalgamated.hpp>

#include <nsp/logic.hpp>
#include <nsp/network.hpp>

#include <cmath>
#include <random>
#include <vector>

using namespace nsp;

namespace {

Network id_net() {
    Network n;
    Layer l;
    l.relu = false;
    l.weights = {{rat(1)}};
    l.bias = {rat(0)};
    n.layers.push_back(std::move(l));
    return n;
}

LogicConfig lcfg(Logic l, QuantMode q = QuantMode::MinMax) {
    LogicConfig c;
    c.logic = l;
    c.quant = q;
    return c;
}

// constant atom whose Godel/Lukasiewicz truth is exactly v (for v in [0,1])
FormulaPtr truth_atom(const Rat& v) {
    Rat c = Rat(rat(1, 10) * (1 - v));
    return f_atom(Cmp::Le, t_const(c), t_const(rat(0)));
}

Rat exact(const FormulaPtr& f, const LogicConfig& cfg, const Samples& s = {}) {
    LossTerm t = compile_loss(f, cfg);
    static const Network dummy = id_net();
    return eval_loss_exact(t, dummy, s);
}

Samples one_quant(std::vector<std::vector<Rat>> pts) {
    Samples s;
    s.per_quant.push_back(std::move(pts));
    return s;
}

QuantDomain box1(const Rat& lo, const Rat& hi) {
    QuantDomain d;
    d.box = {{lo, hi}};
    return d;
}

}  // namespace

TEST_CASE("atoms follow the stated hinge interpretations") {
    LogicConfig law = lcfg(Logic::LawvereLoss);
    CHECK(exact(f_atom(Cmp::Le, t_const(rat(3)), t_const(rat(1))), law) == rat(2));
    CHECK(exact(f_atom(Cmp::Le, t_const(rat(1)), t_const(rat(3))), law) == rat(0));
    CHECK(exact(f_atom(Cmp::Ge, t_const(rat(1)), t_const(rat(3))), law) == rat(2));

    LogicConfig godel = lcfg(Logic::Godel);
    CHECK(exact(f_and(truth_atom(rat(3, 10)), truth_atom(rat(7, 10))), godel) == rat(3, 10));
    CHECK(exact(f_or(truth_atom(rat(3, 10)), truth_atom(rat(7, 10))), godel) == rat(7, 10));

    LogicConfig luk = lcfg(Logic::Lukasiewicz);
    CHECK(exact(f_and(truth_atom(rat(3, 5)), truth_atom(rat(3, 5))), luk) == rat(1, 5));
    CHECK(exact(f_or(truth_atom(rat(3, 5)), truth_atom(rat(3, 5))), luk) == rat(1));

    // sharp atoms: the tau -> 0 limit keeps the closed comparison
    LogicConfig sharp = godel;
    sharp.tau = 0;
    CHECK(exact(f_atom(Cmp::Le, t_const(rat(3)), t_const(rat(1))), sharp) == rat(0));
    CHECK(exact(f_atom(Cmp::Le, t_const(rat(1)), t_const(rat(3))), sharp) == rat(1));
    CHECK(exact(f_atom(Cmp::Lt, t_const(rat(1)), t_const(rat(1))), sharp) == rat(1));

    // the double path agrees with the exact one
    LossTerm t = compile_loss(f_and(truth_atom(rat(3, 10)), truth_atom(rat(7, 10))), godel);
    FloatNet fn = to_float_net(id_net());
    CHECK(eval_loss(t, fn, Samples{}) == Catch::Approx(0.3).margin(1e-15));
}

TEST_CASE("Godel connective laws hold exactly on random values") {
    LogicConfig godel = lcfg(Logic::Godel);
    std::mt19937_64 rng(101);
    auto val = [&] { return dyadic((long)(rng() % 257), 8); };
    for (int it = 0; it < 10000; ++it) {
        Rat v1 = val(), v2 = val(), v3 = val();
        FormulaPtr a = truth_atom(v1), b = truth_atom(v2), c = truth_atom(v3);
        Rat m12 = rat_min(v1, v2);

        CHECK(exact(f_and(a, b), godel) == m12);
        CHECK(exact(f_and(b, a), godel) == m12);
        CHECK(exact(f_or(a, b), godel) == rat_max(v1, v2));
        CHECK(exact(f_or(b, a), godel) == rat_max(v1, v2));
        CHECK(exact(f_and(f_and(a, b), c), godel) == exact(f_and(a, f_and(b, c)), godel));
        CHECK(exact(f_or(f_or(a, b), c), godel) == exact(f_or(a, f_or(b, c)), godel));
        CHECK(exact(f_and(a, a), godel) == v1);
        CHECK(exact(f_or(a, a), godel) == v1);
        CHECK(exact(f_and(a, truth_atom(rat(1))), godel) == v1);
        if (v1 <= v2) {
            CHECK(exact(f_and(a, c), godel) <= exact(f_and(b, c), godel));
            CHECK(exact(f_or(a, c), godel) <= exact(f_or(b, c), godel));
        }
    }
}

TEST_CASE("Lukasiewicz connectives commute and satisfy De Morgan exactly") {
    LogicConfig luk = lcfg(Logic::Lukasiewicz);
    std::mt19937_64 rng(102);
    auto val = [&] { return dyadic((long)(rng() % 257), 8); };
    for (int it = 0; it < 10000; ++it) {
        FormulaPtr a = truth_atom(val()), b = truth_atom(val());
        CHECK(exact(f_and(a, b), luk) == exact(f_and(b, a), luk));
        CHECK(exact(f_or(a, b), luk) == exact(f_or(b, a), luk));
        CHECK(exact(f_not(f_and(a, b)), luk) == exact(f_or(f_not(a), f_not(b)), luk));
    }
}

TEST_CASE("Lawvere zero loss coincides with boolean satisfaction") {
    std::mt19937_64 rng(103);
    auto small = [&] { return dyadic((long)(rng() % 17) - 8, 3); };
    LogicConfig law = lcfg(Logic::LawvereLoss);
    law.sample_count = 8;
    int sat = 0, unsat = 0;
    for (int it = 0; it < 1000; ++it) {
        Network net;
        Layer h;
        h.relu = true;
        h.weights = {{small()}, {small()}};
        h.bias = {small(), small()};
        net.layers.push_back(std::move(h));
        Layer o;
        o.relu = false;
        o.weights = {{small(), small()}};
        o.bias = {small()};
        net.layers.push_back(std::move(o));

        Rat x0 = dyadic((long)(rng() % 17) - 8, 3);
        Rat c = eval_exact(net, {x0})[0] + dyadic((long)(rng() % 17) - 8, 3);
        FormulaPtr body = f_atom(Cmp::Le, t_apply("f", {t_var("x")}, 0), t_const(c));
        if (it % 3 == 0) body = f_implies(f_atom(Cmp::Ge, t_var("x"), t_const(rat(0))), body);
        FormulaPtr prop =
            f_quant(Formula::Kind::Forall, {"x"}, box1(rat(-1), rat(1)), body);

        LossTerm t = compile_loss(prop, law);
        Samples s = draw_samples(t, 1000 + (std::uint64_t)it);
        bool zero = eval_loss_exact(t, net, s) == 0;
        bool holds = bool_eval(t, net, s);
        REQUIRE(zero == holds);
        (zero ? sat : unsat) += 1;
    }
    CHECK(sat > 50);
    CHECK(unsat > 50);
}

TEST_CASE("the negative power mean approaches the minimum") {
    std::mt19937_64 rng(104);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int it = 0; it < 1000; ++it) {
        std::vector<double> v = {u(rng), u(rng), u(rng)};
        double mn = std::min({v[0], v[1], v[2]});
        double m = power_mean(v, -64);
        CHECK(std::abs(m - mn) <= 0.05);
        CHECK(m >= mn - 1e-12);
    }
    CHECK(power_mean({0.0, 0.5}, -8) == 0.0);
}

TEST_CASE("quantifier aggregation follows the configured semantics") {
    Samples s = one_quant({{rat(1)}, {rat(2)}, {rat(3)}});
    Network dummy = id_net();

    // truth(x) = clamp(1 - hinge(x - 2), 0, 1) under tau = 1
    LogicConfig godel = lcfg(Logic::Godel);
    godel.tau = rat(1);
    FormulaPtr le2 = f_atom(Cmp::Le, t_var("x"), t_const(rat(2)));
    FormulaPtr le10 = f_atom(Cmp::Le, t_var("x"), t_const(rat(10)));
    auto all = [&](FormulaPtr body) {
        return f_quant(Formula::Kind::Forall, {"x"}, box1(rat(0), rat(4)), std::move(body));
    };
    auto any = [&](FormulaPtr body) {
        return f_quant(Formula::Kind::Exists, {"x"}, box1(rat(0), rat(4)), std::move(body));
    };
    CHECK(eval_loss_exact(compile_loss(all(le10), godel), dummy, s) == rat(1));
    CHECK(eval_loss_exact(compile_loss(all(le2), godel), dummy, s) == rat(0));
    CHECK(eval_loss_exact(compile_loss(any(le2), godel), dummy, s) == rat(1));

    LogicConfig law = lcfg(Logic::LawvereLoss);
    CHECK(eval_loss_exact(compile_loss(all(le2), law), dummy, s) == rat(1));
    CHECK(eval_loss_exact(compile_loss(any(le2), law), dummy, s) == rat(0));

    // p-mean aggregation matches the reference mean, double path only
    LogicConfig pg = lcfg(Logic::Godel, QuantMode::PMean);
    pg.p = 64;
    pg.tau = rat(1);
    Samples two = one_quant({{rat(1, 2)}, {rat(0)}});
    FormulaPtr le0 = f_atom(Cmp::Le, t_var("x"), t_const(rat(0)));
    LossTerm tm = compile_loss(all(le0), pg);
    FloatNet fn = to_float_net(dummy);
    CHECK(eval_loss(tm, fn, two) ==
          Catch::Approx(power_mean({0.5, 1.0}, -64)).margin(1e-14));
    CHECK_THROWS_AS(eval_loss_exact(tm, dummy, two), UnsupportedConstruct);
}

TEST_CASE("sampling is deterministic and honors constraints exactly") {
    QuantDomain unit = box1(rat(0), rat(1));
    auto a = sample_domain(unit, {"x"}, 3, 42);
    auto b = sample_domain(unit, {"x"}, 3, 42);
    REQUIRE(a.size() == 3);
    REQUIRE(a == b);
    for (const auto& pt : a) {
        CHECK(pt[0] >= 0);
        CHECK(pt[0] <= 1);
    }
    CHECK(sample_domain(unit, {"x"}, 3, 43) != a);

    QuantDomain empty = unit;
    empty.side_constraints.push_back(f_atom(Cmp::Le, t_var("x"), t_const(rat(-1))));
    try {
        sample_domain(empty, {"x"}, 3, 42);
        FAIL("expected SamplingExhausted");
    } catch (const SamplingExhausted& e) {
        CHECK(e.accepted == 0);
        CHECK(e.attempts == 300);
    }

    // car precondition: p > v^2 / (2B) with B = 1, exactly on every sample
    QuantDomain car;
    car.box = {{rat(-5), rat(5)}, {rat(0), rat(10)}};
    car.side_constraints.push_back(
        f_atom(Cmp::Gt, t_var("p"), t_smul(rat(1, 2), t_square(t_var("v")))));
    auto pts = sample_domain(car, {"v", "p"}, 200, 7);
    REQUIRE(pts.size() == 200);
    for (const auto& pt : pts) CHECK(pt[1] > Rat(pt[0] * pt[0] * rat(1, 2)));
}

TEST_CASE("implication gates antecedent failures to zero") {
    LogicConfig law = lcfg(Logic::LawvereLoss);
    FormulaPtr impl = f_implies(f_atom(Cmp::Ge, t_var("x"), t_const(rat(0))),
                                f_atom(Cmp::Le, t_var("x"), t_const(rat(-1))));
    FormulaPtr prop = f_quant(Formula::Kind::Forall, {"x"}, box1(rat(-8), rat(8)), impl);
    LossTerm t = compile_loss(prop, law);
    Network dummy = id_net();

    CHECK(eval_loss_exact(t, dummy, one_quant({{rat(-5)}, {rat(2)}})) == rat(3));
    CHECK_FALSE(bool_eval(t, dummy, one_quant({{rat(-5)}, {rat(2)}})));
    CHECK(eval_loss_exact(t, dummy, one_quant({{rat(-5)}})) == rat(0));
    CHECK(bool_eval(t, dummy, one_quant({{rat(-5)}})));

    // a strict antecedent is evaluated strictly by the gate
    FormulaPtr strict = f_quant(
        Formula::Kind::Forall, {"x"}, box1(rat(-8), rat(8)),
        f_implies(f_atom(Cmp::Gt, t_var("x"), t_const(rat(0))),
                  f_atom(Cmp::Le, t_var("x"), t_const(rat(-1)))));
    LossTerm ts = compile_loss(strict, law);
    CHECK(eval_loss_exact(ts, dummy, one_quant({{rat(0)}})) == rat(0));
    CHECK(bool_eval(ts, dummy, one_quant({{rat(0)}})));
}

TEST_CASE("negation is rejected under the Lawvere loss with its location") {
    FormulaPtr neg = f_not(f_atom(Cmp::Le, t_const(rat(0)), t_const(rat(1)), 7, 3));
    try {
        compile_loss(neg, lcfg(Logic::LawvereLoss));
        FAIL("expected UnsupportedConstruct");
    } catch (const UnsupportedConstruct& e) {
        CHECK(e.line == 7);
        CHECK(e.col == 3);
        CHECK(std::string(e.what()).find("Lawvere") != std::string::npos);
    }
    // the same formula is fine in the [0,1] logics
    CHECK(exact(neg, lcfg(Logic::Godel)) == rat(0));
}

TEST_CASE("the additive Lawvere conjunction keeps violations visible") {
    LogicConfig add = lcfg(Logic::LawvereLoss);
    LogicConfig mul = add;
    mul.lawvere_mul_and = true;
    FormulaPtr sat = f_atom(Cmp::Le, t_const(rat(0)), t_const(rat(1)));
    FormulaPtr bad = f_atom(Cmp::Le, t_const(rat(3)), t_const(rat(1)));
    CHECK(exact(f_and(sat, bad), add) == rat(2));
    // multiplication annihilates the violation, the recorded reason it is
    // not the default
    CHECK(exact(f_and(sat, bad), mul) == rat(0));
}

TEST_CASE("gradients match central differences away from branch kinks") {
    std::mt19937_64 rng(105);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    LogicConfig law = lcfg(Logic::LawvereLoss);
    law.sample_count = 16;

    QuantDomain dom;
    dom.box = {{rat(-1), rat(1)}, {rat(-1), rat(1)}};
    dom.side_constraints.push_back(f_atom(
        Cmp::Ge, t_var("p"),
        t_sub(t_smul(rat(5, 2), t_square(t_var("v"))), t_const(rat(1)))));
    FormulaPtr prop = f_quant(
        Formula::Kind::Forall, {"v", "p"}, dom,
        f_atom(Cmp::Le, t_apply("f", {t_var("v"), t_var("p")}, 0), t_const(rat(-1, 2))));
    LossTerm t = compile_loss(prop, law);

    int total_compared = 0;
    for (int it = 0; it < 20; ++it) {
        FloatNet net;
        FloatNet::FLayer h;
        h.relu = true;
        h.w.assign(4, std::vector<double>(2));
        h.b.assign(4, 0.0);
        for (auto& row : h.w)
            for (auto& v : row) v = u(rng);
        for (auto& v : h.b) v = u(rng);
        FloatNet::FLayer o;
        o.relu = false;
        o.w.assign(1, std::vector<double>(4));
        o.b.assign(1, 0.0);
        for (auto& v : o.w[0]) v = u(rng);
        o.b[0] = u(rng);
        net.layers = {h, o};

        Samples s = draw_samples(t, 500 + (std::uint64_t)it);
        GradCheckReport rep = grad_check(t, net, s, 1e-6);
        if (rep.compared > 0) CHECK(rep.max_rel_err <= 1e-4);
        total_compared += rep.compared;
    }
    CHECK(total_compared > 100);
}

TEST_CASE("an inactive hinge yields zero loss and zero gradient") {
    FloatNet net;
    FloatNet::FLayer l;
    l.relu = false;
    l.w = {{1.0}};
    l.b = {0.0};
    net.layers = {l};

    auto bound = [&](const Rat& c) {
        return f_quant(Formula::Kind::Forall, {"x"}, box1(rat(2), rat(2)),
                       f_atom(Cmp::Le, t_apply("f", {t_var("x")}, 0), t_const(c)));
    };
    LogicConfig law = lcfg(Logic::LawvereLoss);
    law.sample_count = 1;

    LossTerm loose = compile_loss(bound(rat(5)), law);
    Samples s = draw_samples(loose, 0);
    REQUIRE(s.per_quant[0] == std::vector<std::vector<Rat>>{{rat(2)}});
    LossGrad g0 = grad_loss(loose, net, s);
    CHECK(g0.value == 0.0);
    CHECK(g0.grad == std::vector<double>{0.0, 0.0});

    LossTerm tight = compile_loss(bound(rat(1)), law);
    LossGrad g1 = grad_loss(tight, net, s);
    CHECK(g1.value == 1.0);
    CHECK(g1.grad == std::vector<double>{2.0, 1.0});
    GradCheckReport rep = grad_check(tight, net, s, 1e-6);
    CHECK(rep.compared == 2);
    CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("sample sets must match the term's quantifiers") {
    FormulaPtr prop = f_quant(Formula::Kind::Forall, {"x"}, box1(rat(0), rat(1)),
                              f_atom(Cmp::Le, t_var("x"), t_const(rat(1))));
    LossTerm t = compile_loss(prop, lcfg(Logic::LawvereLoss));
    CHECK_THROWS_AS(eval_loss_exact(t, id_net(), Samples{}), std::logic_error);
    CHECK_THROWS_AS(eval_loss_exact(t, id_net(), one_quant({})), std::logic_error);
}
