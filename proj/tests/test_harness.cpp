#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "nsp/bridge.hpp"
#include "nsp/certificate.hpp"
#include "nsp/checker.hpp"
#include "nsp/simulate.hpp"
#include "nsp/verifier.hpp"

using namespace nsp;

namespace {

Controller constant_controller(Rat a) {
    return [a](const Rat&, const Rat&, bool&) { return a; };
}

// single identity layer, output = bias regardless of the two inputs
Network constant_net(Rat out) {
    Network n;
    n.layers.push_back(Layer{{{rat(0), rat(0)}}, {out}, false});
    return n;
}

EmbeddingSpec car_embedding() {
    EmbeddingSpec e;
    e.input_map = {{rat(1, 5), rat(0)}, {rat(1, 5), rat(-1)}};  // v, p -> [-1,1]
    e.output_map = {{rat(2), rat(0)}};
    return e;
}

EmbeddingSpec identity_embedding(size_t in, size_t out) {
    EmbeddingSpec e;
    e.input_map.assign(in, AffineDim{rat(1), rat(0)});
    e.output_map.assign(out, AffineDim{rat(1), rat(0)});
    return e;
}

// forall (vn, pn) in [-1,1]^2 where pn >= (5/2) vn^2 - 1 . f[vn,pn]!0 <= bound
FormulaPtr network_car_property(Rat bound) {
    QuantDomain dom;
    dom.box = {{rat(-1), rat(1)}, {rat(-1), rat(1)}};
    dom.side_constraints.push_back(
        f_atom(Cmp::Ge, t_var("vn_p"),
               t_sub(t_smul(rat(5, 2), t_square(t_var("vn_v"))), t_const(rat(1)))));
    // domain variable order matches the vars vector below
    auto body = f_atom(Cmp::Le, t_apply("f", {t_var("vn_v"), t_var("vn_p")}, 0), t_const(bound));
    return f_quant(Formula::Kind::Forall, {"vn_v", "vn_p"}, dom, body);
}

// forall (v, p), v in [-5,5], p in [0,10] where p > v^2/(2B) . f[v,p]!0 <= bound
FormulaPtr problem_car_property(Rat bound, Rat B = rat(1)) {
    QuantDomain dom;
    dom.box = {{rat(-5), rat(5)}, {rat(0), rat(10)}};
    dom.side_constraints.push_back(
        f_atom(Cmp::Gt, t_var("p"), t_smul(Rat(1 / (2 * B)), t_square(t_var("v")))));
    auto body = f_atom(Cmp::Le, t_apply("f", {t_var("v"), t_var("p")}, 0), t_const(bound));
    return f_quant(Formula::Kind::Forall, {"v", "p"}, dom, body);
}

}  // namespace

TEST_CASE("constant braking reproduces the closed-form parabola exactly") {
    SimConfig cfg;  // B=1, p0=10, v0=-2, step 1/100, horizon 10
    auto traj = simulate_with(constant_controller(rat(-1)), cfg);
    REQUIRE(traj.size() == 1001);

    // with a_rel = -1: v(t) = -2 + t, p(t) = 10 - 2t + t^2/2, exactly, at
    // every grid point; the discrete integrator is exact for constant a
    for (const auto& s : traj) {
        CHECK(s.v_rel == Rat(rat(-2) + s.t));
        CHECK(s.p_rel == Rat(rat(10) - 2 * s.t + s.t * s.t / 2));
        CHECK(s.a_rel == rat(-1));
    }

    PostconditionResult post = check_postcondition(traj);
    CHECK(post.holds);
    CHECK(post.min_p == rat(8));
    CHECK(post.argmin_t == rat(2));
}

TEST_CASE("an opening gap never dips below the initial separation") {
    SimConfig cfg;
    cfg.v0 = rat(0);
    auto traj = simulate_with(constant_controller(rat(-1)), cfg);
    PostconditionResult post = check_postcondition(traj);
    CHECK(post.min_p == cfg.p0);
    CHECK(post.argmin_t == rat(0));
    for (size_t k = 1; k < traj.size(); ++k) CHECK(traj[k].p_rel > traj[k - 1].p_rel);
}

TEST_CASE("the controller is consulted at t = 0 and at each control instant") {
    SimConfig cfg;
    cfg.horizon = rat(1);
    int calls = 0;
    Controller counting = [&](const Rat&, const Rat&, bool&) {
        ++calls;
        return rat(-1);
    };
    auto traj = simulate_with(counting, cfg);
    // t = 0 plus the nine interior decision instants 0.1 .. 0.9; no decision
    // is taken at the horizon itself
    CHECK(calls == 10);
    REQUIRE(traj.size() == 101);

    SECTION("a one-step horizon decides exactly once") {
        SimConfig tiny;
        tiny.step = tiny.control_period = tiny.horizon = rat(1);
        calls = 0;
        auto t2 = simulate_with(counting, tiny);
        CHECK(calls == 1);
        REQUIRE(t2.size() == 2);
        CHECK(t2[1].t == rat(1));
    }
}

TEST_CASE("controller inputs clamp to the embedding domain and are flagged") {
    // constant braking opens the gap past p_max = 10, so late decisions clamp
    SimConfig cfg;
    auto traj = simulate(constant_net(rat(-1, 2)), car_embedding(), cfg);
    bool saw_clamp = false;
    for (const auto& s : traj) {
        if (s.clamped) {
            saw_clamp = true;
            CHECK(s.p_rel > cfg.p_max);
        }
        CHECK(s.a_rel == rat(-1));  // output map doubles the constant -1/2
    }
    CHECK(saw_clamp);
    CHECK(!traj[0].clamped);
}

TEST_CASE("simulation configs are validated before any stepping") {
    SimConfig ok;
    auto expect_throw = [](SimConfig c, const char* needle) {
        try {
            simulate_with([](const Rat&, const Rat&, bool&) { return rat(0); }, c);
            FAIL("expected invalid_argument");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    SimConfig c = ok;
    c.B = rat(0);
    expect_throw(c, "braking constant");
    c = ok;
    c.step = rat(1, 5);  // > control period
    expect_throw(c, "must not exceed the control period");
    c = ok;
    c.control_period = rat(11);
    expect_throw(c, "must not exceed the horizon");
    c = ok;
    c.horizon = rat(1, 3);
    expect_throw(c, "integer multiple");
    c = ok;
    c.control_period = rat(1, 3);
    expect_throw(c, "integer multiple");
    c = ok;
    c.p0 = rat(1);  // needs p0 > v0^2/2 = 2
    expect_throw(c, "braking precondition");
    c = ok;
    c.v_min = c.v_max;
    expect_throw(c, "domain ranges");
    c = ok;
    c.step = rat(1, 200001);
    expect_throw(c, "too fine");
}

TEST_CASE("the postcondition is violated when the gap reaches zero") {
    std::vector<SimState> traj = {{rat(0), rat(5), rat(-2), rat(0), false},
                                  {rat(1), rat(0), rat(-2), rat(0), false},
                                  {rat(2), rat(3), rat(-2), rat(0), false}};
    PostconditionResult post = check_postcondition(traj);
    CHECK(!post.holds);
    CHECK(post.min_p == rat(0));
    CHECK(post.argmin_t == rat(1));

    CHECK(check_postcondition({{rat(0), rat(5), rat(0), rat(0), false}}).holds);
    CHECK_THROWS_AS(check_postcondition({}), std::invalid_argument);
}

TEST_CASE("trajectories export as exact rational csv") {
    std::vector<SimState> traj = {{rat(0), rat(10), rat(-2), rat(-1), false},
                                  {rat(1, 100), Rat(rat(10) - rat(2, 100) - rat(1, 20000)),
                                   rat(-199, 100), rat(-1), true}};
    CHECK(trajectory_csv(traj) ==
          "t,p_rel,v_rel,a_rel,clamped\n"
          "0,10,-2,-1,0\n"
          "1/100,199599/20000,-199/100,-1,1\n");
}

TEST_CASE("a braking-rate controller passes the falsification sweep") {
    // output -1/2 unembeds to a_rel = -1 = -B; closed-loop minimum separation
    // is p0 - v0^2/2, positive on the whole precondition region
    Network net = constant_net(rat(-1, 2));
    SweepResult sweep = falsification_sweep(net, car_embedding(), SimConfig{}, 50, 99);
    CHECK(sweep.runs == 50);
    CHECK(sweep.violations == 0);
    CHECK(sweep.violating_starts.empty());

    SweepResult again = falsification_sweep(net, car_embedding(), SimConfig{}, 50, 99);
    CHECK(again.violations == sweep.violations);
}

TEST_CASE("an accelerating controller is caught by the sweep with its start") {
    // output +1/2 unembeds to a_rel = +1: the cars close faster and faster
    Network net = constant_net(rat(1, 2));
    SweepResult sweep = falsification_sweep(net, car_embedding(), SimConfig{}, 20, 7);
    CHECK(sweep.runs == 20);
    CHECK(sweep.violations > 0);
    REQUIRE(sweep.violating_starts.size() == (size_t)sweep.violations);

    // replaying the recorded start reproduces the violation
    SimConfig cfg;
    cfg.v0 = sweep.violating_starts[0].first;
    cfg.p0 = sweep.violating_starts[0].second;
    PostconditionResult post = check_postcondition(simulate(net, car_embedding(), cfg));
    CHECK(!post.holds);
}

TEST_CASE("the bridge accepts the car embedding coefficient-wise") {
    Network net = constant_net(rat(-1, 2));
    auto queries = formula_to_queries(network_car_property(rat(-1, 2)), {{"f", net}});
    REQUIRE(queries.size() == 1);

    BridgeReport rep =
        check_embedding_bridge(car_embedding(), queries[0], problem_car_property(rat(-1)));
    INFO(rep.text());
    CHECK(rep.all_pass());

    // box containment, one pulled-back precondition row, one output bound
    REQUIRE(rep.checks.size() == 4);
    CHECK(rep.checks[2].detail.find("implied by precondition") != std::string::npos);
    CHECK(rep.checks[3].name == "output-bound");
}

TEST_CASE("the bridge accepts an identity embedding with a box-implied row") {
    // verified: forall x in [-1,1]^2 with x0 + x1 <= 3 . f <= 1/4
    QuantDomain dom;
    dom.box = {{rat(-1), rat(1)}, {rat(-1), rat(1)}};
    dom.side_constraints.push_back(
        f_atom(Cmp::Le, t_add(t_var("a"), t_var("b")), t_const(rat(3))));
    auto verified = f_quant(Formula::Kind::Forall, {"a", "b"}, dom,
                            f_atom(Cmp::Le, t_apply("f", {t_var("a"), t_var("b")}, 0),
                                   t_const(rat(1, 4))));

    // problem: same box, no side constraint, weaker bound
    QuantDomain pdom;
    pdom.box = {{rat(-1), rat(1)}, {rat(-1), rat(1)}};
    auto problem = f_quant(Formula::Kind::Forall, {"a", "b"}, pdom,
                           f_atom(Cmp::Le, t_apply("f", {t_var("a"), t_var("b")}, 0),
                                  t_const(rat(1, 2))));

    Network net = constant_net(rat(0));
    auto queries = formula_to_queries(verified, {{"f", net}});
    REQUIRE(queries.size() == 1);
    BridgeReport rep =
        check_embedding_bridge(identity_embedding(2, 1), queries[0], problem);
    INFO(rep.text());
    CHECK(rep.all_pass());
    bool box_implied = false;
    for (const auto& c : rep.checks)
        if (c.pass && c.detail.find("implied by the box") != std::string::npos) box_implied = true;
    CHECK(box_implied);  // x0 + x1 <= 3 holds on the box outright
}

TEST_CASE("the bridge rejects an embedding that overshoots the verified box") {
    Network net = constant_net(rat(-1, 2));
    auto queries = formula_to_queries(network_car_property(rat(-1, 2)), {{"f", net}});
    EmbeddingSpec emb = car_embedding();
    emb.input_map[0].scale = rat(2);  // v in [-5,5] now embeds to [-10,10]

    BridgeReport rep =
        check_embedding_bridge(emb, queries[0], problem_car_property(rat(-1)));
    CHECK(!rep.all_pass());
    REQUIRE(!rep.checks.empty());
    CHECK(rep.checks[0].name == "input-box[0]");
    CHECK(!rep.checks[0].pass);
}

TEST_CASE("the bridge rejects a problem region wider than the verified one") {
    // verified only on vn <= 0, problem quantifies the full range
    QuantDomain dom;
    dom.box = {{rat(-1), rat(1)}, {rat(-1), rat(1)}};
    dom.side_constraints.push_back(f_atom(Cmp::Le, t_var("vn_v"), t_const(rat(0))));
    auto verified = f_quant(Formula::Kind::Forall, {"vn_v", "vn_p"}, dom,
                            f_atom(Cmp::Le, t_apply("f", {t_var("vn_v"), t_var("vn_p")}, 0),
                                   t_const(rat(-1, 2))));

    Network net = constant_net(rat(-1, 2));
    auto queries = formula_to_queries(verified, {{"f", net}});
    BridgeReport rep = check_embedding_bridge(car_embedding(), queries[0],
                                              problem_car_property(rat(-1)));
    CHECK(!rep.all_pass());
    bool failed_row = false;
    for (const auto& c : rep.checks)
        if (!c.pass && c.name.rfind("input-row", 0) == 0) failed_row = true;
    CHECK(failed_row);
}

TEST_CASE("the bridge checks the output bound direction and value") {
    Network net = constant_net(rat(-1, 2));
    auto queries = formula_to_queries(network_car_property(rat(-1, 2)), {{"f", net}});

    SECTION("a stronger problem bound fails") {
        BridgeReport rep = check_embedding_bridge(car_embedding(), queries[0],
                                                  problem_car_property(rat(-2)));
        CHECK(!rep.all_pass());
        CHECK(!rep.checks.back().pass);
        CHECK(rep.checks.back().name == "output-bound");
    }
    SECTION("a lower problem bound fails on direction") {
        QuantDomain dom;
        dom.box = {{rat(-5), rat(5)}, {rat(0), rat(10)}};
        auto problem = f_quant(Formula::Kind::Forall, {"v", "p"}, dom,
                               f_atom(Cmp::Ge, t_apply("f", {t_var("v"), t_var("p")}, 0),
                                      t_const(rat(-3))));
        BridgeReport rep = check_embedding_bridge(car_embedding(), queries[0], problem);
        CHECK(!rep.checks.back().pass);
    }
    SECTION("unsupported problem shapes are reported as such") {
        QuantDomain dom;
        dom.box = {{rat(-5), rat(5)}, {rat(0), rat(10)}};
        auto conj = f_and(f_atom(Cmp::Le, t_apply("f", {t_var("v"), t_var("p")}, 0),
                                 t_const(rat(-1))),
                          f_atom(Cmp::Le, t_var("v"), t_const(rat(5))));
        auto problem = f_quant(Formula::Kind::Forall, {"v", "p"}, dom, conj);
        CHECK_THROWS_AS(check_embedding_bridge(car_embedding(), queries[0], problem),
                        UnsupportedConstruct);
    }
}

TEST_CASE("the three-lemma ledger discharges only when every leg holds") {
    // obligation 1: verify the network property and check its certificate
    Network net = constant_net(rat(-1, 2));
    auto queries = formula_to_queries(network_car_property(rat(-1, 4)), {{"f", net}});
    REQUIRE(queries.size() == 1);
    VerifyOutcome out = bnb_verify(queries[0]);
    REQUIRE(out.status == VerifyOutcome::Status::Verified);
    REQUIRE(out.tree);
    ProofCertificate cert = make_certificate(net, queries[0], *out.tree);
    CheckResult cres = check_certificate(cert, net, queries[0], export_query(queries[0]));
    REQUIRE(cres.accepted);

    // obligation 2: the bound -1/4 unembeds to -1/2 in problem units
    BridgeReport bridge =
        check_embedding_bridge(car_embedding(), queries[0], problem_car_property(rat(-1, 2)));
    INFO(bridge.text());
    REQUIRE(bridge.all_pass());

    // obligation 3: sweep the precondition region
    SweepResult sweep = falsification_sweep(net, car_embedding(), SimConfig{}, 30, 1234);
    REQUIRE(sweep.violations == 0);

    LemmaLedger ledger = assemble_ledger(cres, bridge, sweep);
    CHECK(ledger.network_property);
    CHECK(ledger.solution_property);
    CHECK(ledger.program_property);
    CHECK(ledger.discharged);

    std::string text = ledger_text(ledger);
    CHECK(text.find("discharged-at-desk-scale") != std::string::npos);
    CHECK(text.find("testing, not proof") != std::string::npos);
    CHECK(text.find("v_rel < 0") != std::string::npos);

    nlohmann::json j = ledger_json(ledger);
    CHECK(j["overall"] == "discharged-at-desk-scale");
    CHECK(j["obligation1"]["status"] == "proven");
    CHECK(j["obligation3"]["status"] == "no violation in 30 falsification runs");

    SECTION("a rejected certificate blocks the ledger") {
        CheckResult bad;
        bad.accepted = false;
        bad.reason = "digest-mismatch";
        LemmaLedger l2 = assemble_ledger(bad, bridge, sweep);
        CHECK(!l2.network_property);
        CHECK(!l2.discharged);
        CHECK(ledger_text(l2).find("NOT discharged") != std::string::npos);
        CHECK(ledger_json(l2)["overall"] == "not-discharged");
    }
    SECTION("a sweep violation blocks the ledger and names the start") {
        SweepResult dirty = sweep;
        dirty.violations = 1;
        dirty.violating_starts = {{rat(-2), rat(3)}};
        LemmaLedger l3 = assemble_ledger(cres, bridge, dirty);
        CHECK(!l3.program_property);
        CHECK(!l3.discharged);
        CHECK(l3.sweep_detail.find("v_rel = -2") != std::string::npos);
    }
    SECTION("an empty sweep is no evidence") {
        SweepResult none;
        LemmaLedger l4 = assemble_ledger(cres, bridge, none);
        CHECK(!l4.program_property);
    }
}
