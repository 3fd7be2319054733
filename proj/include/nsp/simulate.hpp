#pragma once

// Closed-loop simulation of the two-car system with the neural controller.
// Relative coordinates, v_rel < 0 meaning the cars are closing; the dynamics
// are p' = v_rel, v' = -a_rel, so a braking command a_rel = -B opens the gap.
// Between control instants the acceleration is constant and the ODEs are
// integrated in closed form, which keeps every state exactly rational.

#include <nsp/logic.hpp>
#include <nsp/network.hpp>
#include <nsp/rational.hpp>

#include <cstdint>
#include <functional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nsp {

struct SimConfig {
    Rat B = rat(1);                   // braking constant, > 0
    Rat control_period = rat(1, 10);  // seconds between controller decisions
    Rat step = rat(1, 100);           // integration step, <= control_period
    Rat horizon = rat(10);
    Rat p0 = rat(10);
    Rat v0 = rat(-2);
    // embedding domain in problem units; controller inputs clamp to it
    Rat v_min = rat(-5), v_max = rat(5);
    Rat p_min = rat(0), p_max = rat(10);
    // physical-realism experiment: stop braking once the gap stops closing;
    // not part of the stated model and excluded from the ledger path
    bool stop_braking_at_zero = false;
};

struct SimState {
    Rat t;
    Rat p_rel;
    Rat v_rel;
    Rat a_rel;             // control in effect from this instant on
    bool clamped = false;  // the controller input was clamped at this decision
};

namespace sim_detail {

inline long as_integer_multiple(const Rat& whole, const Rat& part, const char* what) {
    Rat q = whole / part;
    if (q.get_den() != 1)
        throw std::invalid_argument(std::string(what) + " must be an integer multiple of the step");
    if (q.get_num() > 1000000) throw std::invalid_argument("simulation horizon is too fine");
    return q.get_num().get_si();
}

}  // namespace sim_detail

inline void validate_sim_config(const SimConfig& cfg) {
    if (cfg.B <= 0) throw std::invalid_argument("braking constant must be positive");
    if (cfg.step <= 0) throw std::invalid_argument("integration step must be positive");
    if (cfg.step > cfg.control_period)
        throw std::invalid_argument("integration step must not exceed the control period");
    if (cfg.control_period > cfg.horizon)
        throw std::invalid_argument("control period must not exceed the horizon");
    if (!(cfg.p0 > Rat(cfg.v0 * cfg.v0 / (2 * cfg.B))))
        throw std::invalid_argument("initial state violates the braking precondition");
    if (cfg.v_min >= cfg.v_max || cfg.p_min >= cfg.p_max)
        throw std::invalid_argument("embedding domain ranges are empty");
}

// controller: (v_rel, p_rel, clamped out-flag) -> a_rel
using Controller = std::function<Rat(const Rat&, const Rat&, bool&)>;

inline std::vector<SimState> simulate_with(const Controller& control, const SimConfig& cfg) {
    validate_sim_config(cfg);
    long steps = sim_detail::as_integer_multiple(cfg.horizon, cfg.step, "horizon");
    long per = sim_detail::as_integer_multiple(cfg.control_period, cfg.step, "control period");

    auto decide = [&](const Rat& v, const Rat& p, bool& clamped) {
        Rat a = control(v, p, clamped);
        if (cfg.stop_braking_at_zero && v >= 0) a = 0;
        return a;
    };

    std::vector<SimState> traj;
    traj.reserve(steps + 1);
    bool clamped = false;
    Rat p = cfg.p0, v = cfg.v0;
    Rat a = decide(v, p, clamped);
    traj.push_back({rat(0), p, v, a, clamped});
    for (long k = 1; k <= steps; ++k) {
        Rat dt = cfg.step;
        Rat p_next = p + v * dt - a * dt * dt / 2;
        Rat v_next = v - a * dt;
        p = p_next;
        v = v_next;
        clamped = false;
        if (k < steps && k % per == 0) a = decide(v, p, clamped);
        traj.push_back({Rat(cfg.step * k), p, v, a, clamped});
    }
    return traj;
}

// the paper's loop: a_rel := unembed(f(embed(v_rel, p_rel))), inputs clamped
// to the embedding domain
inline std::vector<SimState> simulate(const Network& net, const EmbeddingSpec& emb,
                                      const SimConfig& cfg) {
    Controller c = [&](const Rat& v, const Rat& p, bool& clamped) {
        Rat cv = rat_min(rat_max(v, cfg.v_min), cfg.v_max);
        Rat cp = rat_min(rat_max(p, cfg.p_min), cfg.p_max);
        clamped = cv != v || cp != p;
        return unembed(emb, eval_exact(net, embed(emb, {cv, cp})))[0];
    };
    return simulate_with(c, cfg);
}

struct PostconditionResult {
    bool holds = false;
    Rat min_p;
    Rat argmin_t;
};

inline PostconditionResult check_postcondition(const std::vector<SimState>& traj) {
    if (traj.empty()) throw std::invalid_argument("empty trajectory");
    PostconditionResult r{true, traj[0].p_rel, traj[0].t};
    for (const auto& s : traj)
        if (s.p_rel < r.min_p) {
            r.min_p = s.p_rel;
            r.argmin_t = s.t;
        }
    r.holds = r.min_p > 0;
    return r;
}

// exact rational fields; the clamped column is 0/1
inline void write_trajectory_csv(std::ostream& os, const std::vector<SimState>& traj) {
    os << "t,p_rel,v_rel,a_rel,clamped\n";
    for (const auto& s : traj)
        os << to_string(s.t) << ',' << to_string(s.p_rel) << ',' << to_string(s.v_rel) << ','
           << to_string(s.a_rel) << ',' << (s.clamped ? 1 : 0) << '\n';
}

inline std::string trajectory_csv(const std::vector<SimState>& traj) {
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    return os.str();
}

// ---- falsification sweep ----

struct SweepResult {
    int runs = 0;
    int violations = 0;
    std::uint64_t seed = 0;
    // initial (v_rel, p_rel) of each violating run, in order found
    std::vector<std::pair<Rat, Rat>> violating_starts;
};

// n independent simulations from initial states sampled uniformly from the
// precondition region p > v^2 / (2B) inside the embedding domain. Evidence,
// not proof: a clean sweep only reports that no counterexample was found.
inline SweepResult falsification_sweep(const Network& net, const EmbeddingSpec& emb,
                                       const SimConfig& base, int n, std::uint64_t seed) {
    QuantDomain dom;
    dom.box = {{base.v_min, base.v_max}, {base.p_min, base.p_max}};
    dom.side_constraints.push_back(f_atom(
        Cmp::Gt, t_var("p"), t_smul(Rat(1 / (2 * base.B)), t_square(t_var("v")))));
    auto starts = sample_domain(dom, {"v", "p"}, n, seed);
    SweepResult out;
    out.runs = n;
    out.seed = seed;
    for (const auto& s : starts) {
        SimConfig cfg = base;
        cfg.v0 = s[0];
        cfg.p0 = s[1];
        PostconditionResult post = check_postcondition(simulate(net, emb, cfg));
        if (!post.holds) {
            ++out.violations;
            out.violating_starts.push_back({s[0], s[1]});
        }
    }
    return out;
}

}  // namespace nsp
