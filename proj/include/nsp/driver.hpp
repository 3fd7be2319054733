#pragma once

// Command implementations behind the nsprove tool. Each command takes a
// ToolConfig and a pair of streams and returns a process exit code:
//   0  success, property verified, or ledger discharged
//   1  property refuted, certificate rejected, or ledger not discharged
//   2  usage or configuration error
//   3  resource limit hit (verifier budget, training divergence)
// Diagnostics go to the error stream; results go to the output stream and to
// files under the configured output directory, never anywhere else. Reruns
// with identical inputs produce byte-identical files.

#include <nsp/bridge.hpp>
#include <nsp/certificate.hpp>
#include <nsp/checker.hpp>
#include <nsp/config.hpp>
#include <nsp/logic.hpp>
#include <nsp/network.hpp>
#include <nsp/parser.hpp>
#include <nsp/simulate.hpp>
#include <nsp/train.hpp>
#include <nsp/typecheck.hpp>
#include <nsp/verifier.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace nsp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRefuted = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitResource = 3;

inline constexpr unsigned kTrainedNetBits = 12;  // dyadic quantization of saved nets

struct DriverIO {
    std::ostream& out;
    std::ostream& err;
};

namespace driver_detail {

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << content;
}

inline TypedSpec load_spec_checked(const std::string& path) {
    if (path.empty()) throw ConfigError("no spec file configured (paths.spec)");
    PropertySpec spec = parse_spec(read_text_file(path));
    auto r = typecheck(spec);
    if (std::holds_alternative<std::vector<TypeError>>(r))
        throw ConfigError(path + ":\n" +
                          format_errors(std::get<std::vector<TypeError>>(r)));
    return std::get<TypedSpec>(std::move(r));
}

inline const FormulaPtr& find_property(const PropertySpec& spec, const std::string& name,
                                       const char* what) {
    if (name.empty()) {
        if (spec.properties.size() == 1) return spec.properties[0].second;
        throw ConfigError(std::string("spec has ") + std::to_string(spec.properties.size()) +
                          " properties; set run." + what);
    }
    for (const auto& [n, f] : spec.properties)
        if (n == name) return f;
    throw ConfigError("no property named '" + name + "' in the spec");
}

inline Network load_network_checked(const ToolConfig& cfg) {
    if (cfg.network_path.empty())
        throw ConfigError("no network file configured (paths.network)");
    return load_network(cfg.network_path, cfg.trust_floats);
}

// the tool binds one network file to the spec's single declaration
inline std::map<std::string, Network> bind_network(const TypedSpec& ts, const Network& net) {
    if (ts.networks.size() != 1)
        throw ConfigError("the tool binds one network file; the spec declares " +
                          std::to_string(ts.networks.size()));
    const auto& [name, decl] = *ts.networks.begin();
    if (net.input_dim() != decl.input_dim || net.output_dim() != decl.output_dim)
        throw ConfigError("network file is " + std::to_string(net.input_dim()) + " -> " +
                          std::to_string(net.output_dim()) + ", spec declares " + name + " : " +
                          std::to_string(decl.input_dim) + " -> " +
                          std::to_string(decl.output_dim));
    return {{name, net}};
}

inline EmbeddingSpec load_embedding_checked(const ToolConfig& cfg) {
    if (cfg.embedding_path.empty())
        throw ConfigError("no embedding file configured (paths.embedding)");
    return load_embedding(cfg.embedding_path, cfg.trust_floats);
}

inline std::filesystem::path ensure_outdir(const ToolConfig& cfg) {
    std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---- exact evaluation of quantifier-free formulas at a rational point ----

inline Rat eval_term_exact(const TermPtr& t, const std::map<std::string, Rat>& env,
                           const std::map<std::string, Network>& nets);

inline Rat norm_diff_exact(const TermPtr& t, const std::map<std::string, Rat>& env,
                           const std::map<std::string, Network>& nets) {
    Rat acc;
    for (size_t i = 0; i < t->args.size(); ++i) {
        Rat d = rat_abs(Rat(eval_term_exact(t->args[i], env, nets) -
                            eval_term_exact(t->args2[i], env, nets)));
        acc = t->norm == NormKind::L1 ? Rat(acc + d) : rat_max(acc, d);
    }
    return acc;
}

inline Rat eval_term_exact(const TermPtr& t, const std::map<std::string, Rat>& env,
                           const std::map<std::string, Network>& nets) {
    switch (t->kind) {
        case Term::Kind::Var: {
            auto it = env.find(t->name);
            if (it == env.end()) throw ConfigError("unbound variable " + t->name);
            return it->second;
        }
        case Term::Kind::Const: return t->value;
        case Term::Kind::Add:
            return Rat(eval_term_exact(t->lhs, env, nets) + eval_term_exact(t->rhs, env, nets));
        case Term::Kind::Sub:
            return Rat(eval_term_exact(t->lhs, env, nets) - eval_term_exact(t->rhs, env, nets));
        case Term::Kind::ScalarMul: return Rat(t->value * eval_term_exact(t->lhs, env, nets));
        case Term::Kind::Square: {
            Rat v = eval_term_exact(t->lhs, env, nets);
            return Rat(v * v);
        }
        case Term::Kind::NetApply: {
            auto it = nets.find(t->name);
            if (it == nets.end()) throw ConfigError("unknown network " + t->name);
            std::vector<Rat> in;
            in.reserve(t->args.size());
            for (const auto& a : t->args) in.push_back(eval_term_exact(a, env, nets));
            return eval_exact(it->second, in)[t->out_index];
        }
        case Term::Kind::NormDiff: return norm_diff_exact(t, env, nets);
    }
    throw ConfigError("unreachable term kind");
}

inline bool formula_holds_exact(const FormulaPtr& f, const std::map<std::string, Rat>& env,
                                const std::map<std::string, Network>& nets) {
    switch (f->kind) {
        case Formula::Kind::Atom: {
            Rat a = eval_term_exact(f->a, env, nets);
            Rat b = eval_term_exact(f->b, env, nets);
            switch (f->cmp) {
                case Cmp::Le: return a <= b;
                case Cmp::Lt: return a < b;
                case Cmp::Ge: return a >= b;
                case Cmp::Gt: return a > b;
            }
            return false;
        }
        case Formula::Kind::And:
            return formula_holds_exact(f->l, env, nets) && formula_holds_exact(f->r, env, nets);
        case Formula::Kind::Or:
            return formula_holds_exact(f->l, env, nets) || formula_holds_exact(f->r, env, nets);
        case Formula::Kind::Implies:
            return !formula_holds_exact(f->l, env, nets) || formula_holds_exact(f->r, env, nets);
        case Formula::Kind::Not: return !formula_holds_exact(f->l, env, nets);
        default: throw ConfigError("nested quantifiers are not supported here");
    }
}

inline std::string point_text(const std::vector<std::string>& names,
                              const std::vector<Rat>& point) {
    std::string s;
    for (size_t i = 0; i < point.size(); ++i) {
        if (i) s += ", ";
        if (i < names.size()) s += names[i] + " = ";
        s += to_string(point[i]);
    }
    return s;
}

inline std::string cex_text(const Counterexample& cex, const std::vector<std::string>& names) {
    std::string s = "counterexample: " + point_text(names, cex.input) + " -> [";
    for (size_t i = 0; i < cex.output.size(); ++i)
        s += (i ? ", " : "") + to_string(cex.output[i]);
    s += "] satisfies " + cex.violated;
    return s;
}

// fixed-precision, locale-independent float formatting for history files
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Trained {
    TrainResult result;
    Network quantized;
};

inline Trained train_from_config(const TypedSpec& ts, const ToolConfig& cfg) {
    std::string tname = cfg.train_property.empty() ? cfg.property : cfg.train_property;
    const FormulaPtr& prop = find_property(ts.spec, tname, "train_property");
    LogicConfig lc = cfg.logic;
    lc.seed = cfg.seed;
    LossTerm loss = compile_loss(prop, lc);

    auto dit = ts.networks.find(loss.net_name);
    if (dit == ts.networks.end())
        throw ConfigError("property does not apply a declared network");
    const NetworkDecl& decl = dit->second;
    std::vector<int> widths;
    widths.push_back(decl.input_dim);
    for (int w : cfg.hidden) widths.push_back(w);
    widths.push_back(decl.output_dim);
    FloatNet init = make_float_net(widths, cfg.seed, cfg.train.init_scale);

    std::optional<LossTerm> reg;
    if (cfg.distill) {
        if (loss.quants.size() != 1)
            throw ConfigError("distillation needs a single-quantifier property");
        auto pts = sample_domain(loss.quants[0].dom, loss.quants[0].vars, cfg.distill_samples,
                                 cfg.seed + kDistillSeedOffset);
        Dataset ds;
        for (auto& p : pts)
            ds.push_back({p, std::vector<Rat>((size_t)decl.output_dim, cfg.distill_target)});
        reg = make_regression_loss(decl.input_dim, decl.output_dim, ds);
    }

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    Trained t{train(init, &loss, reg ? &*reg : nullptr, tc), {}};
    t.quantized = to_network_quantized(t.result.net, kTrainedNetBits);
    return t;
}

inline std::string history_csv(const TrainResult& r) {
    std::string s = "epoch,prop,reg,combined\n";
    for (size_t i = 0; i < r.history.size(); ++i) {
        const EpochRecord& e = r.history[i];
        s += std::to_string(i) + "," + fmt_double(e.prop) + "," + fmt_double(e.reg) + "," +
             fmt_double(e.combined) + "\n";
    }
    return s;
}

}  // namespace driver_detail

inline int cmd_check(const ToolConfig& cfg, DriverIO io) {
    TypedSpec ts = driver_detail::load_spec_checked(cfg.spec_path);
    io.out << cfg.spec_path << ": " << ts.networks.size() << " network(s), "
           << ts.constants.size() << " constant(s), " << ts.spec.properties.size()
           << " property(ies)\n";
    for (const auto& [name, f] : ts.spec.properties) io.out << "  " << name << ": ok\n";
    return kExitOk;
}

inline int cmd_train(const ToolConfig& cfg, DriverIO io) {
    using namespace driver_detail;
    TypedSpec ts = load_spec_checked(cfg.spec_path);
    auto dir = ensure_outdir(cfg);
    Trained t = train_from_config(ts, cfg);
    save_network(t.quantized, (dir / "trained_net.json").string());
    write_text_file((dir / "history.csv").string(), history_csv(t.result));
    io.out << "trained " << t.result.history.size() << " epochs, best epoch "
           << t.result.best_epoch << ", best loss " << fmt_double(t.result.best_loss) << "\n";
    io.out << "wrote " << (dir / "trained_net.json").string() << " and "
           << (dir / "history.csv").string() << "\n";
    return kExitOk;
}

inline int cmd_verify(const ToolConfig& cfg, DriverIO io) {
    using namespace driver_detail;
    TypedSpec ts = load_spec_checked(cfg.spec_path);
    Network net = load_network_checked(cfg);
    auto nets = bind_network(ts, net);
    std::string pname = cfg.property;
    const FormulaPtr& prop = find_property(ts.spec, pname, "property");
    if (pname.empty()) pname = ts.spec.properties[0].first;
    auto queries = formula_to_queries(prop, nets);
    auto dir = ensure_outdir(cfg);

    bool refuted = false, limited = false;
    for (size_t k = 0; k < queries.size(); ++k) {
        const VerifyQuery& q = queries[k];
        std::string stem = pname + "_q" + std::to_string(k);
        write_text_file((dir / (stem + ".query.txt")).string(), export_query(q));
        VerifyOutcome out = bnb_verify(q, cfg.verifier);
        switch (out.status) {
            case VerifyOutcome::Status::Verified:
                io.out << stem << ": verified, " << out.nodes << " node(s)";
                if (out.boundary_caveat) {
                    io.out << " [" << out.note << "]\n";
                } else {
                    ProofCertificate cert = make_certificate(q.net, q, *out.tree);
                    std::string cpath = (dir / (stem + ".cert.json")).string();
                    save_certificate(cert, cpath);
                    io.out << ", certificate " << cpath << "\n";
                }
                break;
            case VerifyOutcome::Status::Refuted:
                io.out << stem << ": refuted, " << cex_text(out.cex, q.input_names) << "\n";
                refuted = true;
                break;
            case VerifyOutcome::Status::ResourceLimit:
                io.err << stem << ": resource limit, " << out.note << "\n";
                limited = true;
                break;
        }
    }
    return refuted ? kExitRefuted : limited ? kExitResource : kExitOk;
}

inline int cmd_check_cert(const std::string& cert_path, const std::string& net_path,
                          const std::string& query_path, DriverIO io) {
    CheckResult res = check_certificate_files(cert_path, net_path, query_path);
    if (res.accepted) {
        io.out << "accepted: " << res.leaves_checked << " leaves checked\n";
        return kExitOk;
    }
    io.out << "rejected: " << res.reason << "\n";
    if (!res.detail.empty()) io.out << "  " << res.detail << "\n";
    return kExitRefuted;
}

inline int cmd_export(const ToolConfig& cfg, DriverIO io) {
    using namespace driver_detail;
    TypedSpec ts = load_spec_checked(cfg.spec_path);
    Network net = load_network_checked(cfg);
    auto nets = bind_network(ts, net);
    auto dir = ensure_outdir(cfg);
    for (const auto& [name, f] : ts.spec.properties) {
        if (!cfg.property.empty() && name != cfg.property) continue;
        auto queries = formula_to_queries(f, nets);
        for (size_t k = 0; k < queries.size(); ++k) {
            std::string path = (dir / (name + "_q" + std::to_string(k) + ".query.txt")).string();
            write_text_file(path, export_query(queries[k]));
            io.out << path << "\n";
        }
    }
    return kExitOk;
}

inline int cmd_simulate(const ToolConfig& cfg, DriverIO io) {
    using namespace driver_detail;
    Network net = load_network_checked(cfg);
    EmbeddingSpec emb = load_embedding_checked(cfg);
    auto traj = simulate(net, emb, cfg.sim);
    auto dir = ensure_outdir(cfg);
    write_text_file((dir / "trajectory.csv").string(), trajectory_csv(traj));
    PostconditionResult post = check_postcondition(traj);
    io.out << "wrote " << (dir / "trajectory.csv").string() << "\n";
    io.out << "min p_rel = " << to_string(post.min_p) << " at t = " << to_string(post.argmin_t)
           << ": " << (post.holds ? "no collision" : "COLLISION") << "\n";
    return post.holds ? kExitOk : kExitRefuted;
}

inline int cmd_pipeline(const ToolConfig& cfg, DriverIO io) {
    using namespace driver_detail;
    TypedSpec ts = load_spec_checked(cfg.spec_path);
    if (cfg.property.empty() || cfg.problem_property.empty())
        throw ConfigError("pipeline requires run.property and run.problem_property");
    const FormulaPtr& prop = find_property(ts.spec, cfg.property, "property");
    const FormulaPtr& problem = find_property(ts.spec, cfg.problem_property, "problem_property");
    EmbeddingSpec emb = load_embedding_checked(cfg);
    auto dir = ensure_outdir(cfg);

    // the verified network: loaded if configured, freshly trained otherwise
    Network net;
    std::string net_path;
    if (!cfg.network_path.empty()) {
        net = load_network_checked(cfg);
        net_path = cfg.network_path;
        io.out << "using network " << net_path << "\n";
    } else {
        Trained t = train_from_config(ts, cfg);
        net = t.quantized;
        net_path = (dir / "trained_net.json").string();
        save_network(net, net_path);
        write_text_file((dir / "history.csv").string(), history_csv(t.result));
        io.out << "trained " << t.result.history.size() << " epochs, best epoch "
               << t.result.best_epoch << ", best loss " << fmt_double(t.result.best_loss)
               << "\n";
    }
    auto nets = bind_network(ts, net);

    // sampled satisfaction of the network property, exact arithmetic
    if (prop->kind != Formula::Kind::Forall)
        throw ConfigError("pipeline requires a universal network property");
    auto pts = sample_domain(prop->dom, prop->vars, cfg.satisfaction_samples,
                             cfg.seed + kSatSeedOffset);
    long sat = 0;
    for (const auto& p : pts) {
        std::map<std::string, Rat> env;
        for (size_t i = 0; i < prop->vars.size(); ++i) env[prop->vars[i]] = p[i];
        if (formula_holds_exact(prop->body, env, nets)) ++sat;
    }
    io.out << "sampled satisfaction: " << sat << "/" << pts.size() << "\n";

    // obligation 1: verify and certify
    auto queries = formula_to_queries(prop, nets);
    if (queries.size() != 1)
        throw ConfigError("pipeline supports single-query properties; this one compiles to " +
                          std::to_string(queries.size()));
    const VerifyQuery& q = queries[0];
    std::string stem = cfg.property + "_q0";
    std::string qpath = (dir / (stem + ".query.txt")).string();
    write_text_file(qpath, export_query(q));

    VerifyOutcome out = bnb_verify(q, cfg.verifier);
    if (out.status == VerifyOutcome::Status::ResourceLimit) {
        io.err << "verifier hit its resource limit: " << out.note << "\n";
        return kExitResource;
    }

    CheckResult cres;
    std::string cpath;
    if (out.status == VerifyOutcome::Status::Refuted) {
        io.out << "property refuted, " << cex_text(out.cex, q.input_names) << "\n";
        cres.accepted = false;
        cres.reason = "property-refuted";
        cres.detail = cex_text(out.cex, q.input_names);
    } else if (out.boundary_caveat) {
        cres.accepted = false;
        cres.reason = "no-certificate";
        cres.detail = out.note;
    } else {
        ProofCertificate cert = make_certificate(q.net, q, *out.tree);
        cpath = (dir / (stem + ".cert.json")).string();
        save_certificate(cert, cpath);
        // the independent checker re-reads every artifact from disk
        cres = check_certificate_files(cpath, net_path, qpath);
        io.out << "verified, certificate " << (cres.accepted ? "accepted" : "REJECTED") << " ("
               << cres.leaves_checked << " leaves)\n";
    }

    // obligation 2: embedding bridge
    BridgeReport bridge;
    if (out.status == VerifyOutcome::Status::Verified)
        bridge = check_embedding_bridge(emb, q, problem);

    // obligation 3: falsification sweep
    SweepResult sweep;
    if (out.status == VerifyOutcome::Status::Verified)
        sweep = falsification_sweep(net, emb, cfg.sim, cfg.sweep_runs,
                                    cfg.seed + kSweepSeedOffset);

    LemmaLedger ledger = assemble_ledger(cres, bridge, sweep);
    ledger.certificate_path = cpath;
    write_text_file((dir / "ledger.txt").string(), ledger_text(ledger));
    write_text_file((dir / "ledger.json").string(), ledger_json(ledger).dump(2) + "\n");
    io.out << ledger_text(ledger);
    return ledger.discharged ? kExitOk : kExitRefuted;
}

// ---- argument parsing ----

inline const char* kUsage =
    "usage: nsprove <command> [args]\n"
    "\n"
    "commands:\n"
    "  check <spec.nsp>                    parse and typecheck a property spec\n"
    "  train <config>                      train a network against a property\n"
    "  verify <config>                     verify a property, emit certificates\n"
    "  check-cert <cert> <net> <query>     run the independent proof checker\n"
    "  export <config>                     write reachability queries as text\n"
    "  simulate <config>                   closed-loop simulation to CSV\n"
    "  pipeline <config>                   train, verify, certify, bridge, sweep\n"
    "\n"
    "options:\n"
    "  --set section.key=value             override any config key (repeatable)\n"
    "  --out <dir>                         shorthand for --set paths.output=<dir>\n"
    "  --trust-floats                      shorthand for --set paths.trust_floats=true\n"
    "  --version, --help\n"
    "\n"
    "exit codes: 0 success/discharged, 1 refuted or rejected, 2 usage error,\n"
    "3 resource limit\n";

inline int run_tool(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty()) {
        err << kUsage;
        return kExitUsage;
    }
    if (args[0] == "--help" || args[0] == "help") {
        out << kUsage;
        return kExitOk;
    }
    if (args[0] == "--version") {
        out << "nsprove 0.1.0\n";
        return kExitOk;
    }
    std::string cmd = args[0];
    std::vector<std::string> positional;
    std::vector<std::string> overrides;
    for (size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--set") {
            if (i + 1 == args.size()) {
                err << "--set needs an argument\n";
                return kExitUsage;
            }
            overrides.push_back(args[++i]);
        } else if (args[i] == "--out") {
            if (i + 1 == args.size()) {
                err << "--out needs an argument\n";
                return kExitUsage;
            }
            overrides.push_back("paths.output=" + args[++i]);
        } else if (args[i] == "--trust-floats") {
            overrides.push_back("paths.trust_floats=true");
        } else if (args[i].rfind("--", 0) == 0) {
            err << "unknown option " << args[i] << "\n";
            return kExitUsage;
        } else {
            positional.push_back(args[i]);
        }
    }

    DriverIO io{out, err};
    try {
        if (cmd == "check-cert") {
            if (positional.size() != 3) {
                err << "check-cert needs <cert.json> <network.json> <query.txt>\n";
                return kExitUsage;
            }
            return cmd_check_cert(positional[0], positional[1], positional[2], io);
        }

        ToolConfig cfg;
        if (!positional.empty()) {
            // a .nsp positional is a bare spec, anything else is a config file
            if (positional.size() > 1) {
                err << cmd << " takes one positional argument\n";
                return kExitUsage;
            }
            if (positional[0].size() > 4 &&
                positional[0].compare(positional[0].size() - 4, 4, ".nsp") == 0)
                cfg.spec_path = positional[0];
            else
                cfg = load_config(positional[0]);
        }
        for (const auto& o : overrides) apply_override(cfg, o);

        if (cmd == "check") return cmd_check(cfg, io);
        if (cmd == "train") return cmd_train(cfg, io);
        if (cmd == "verify") return cmd_verify(cfg, io);
        if (cmd == "export") return cmd_export(cfg, io);
        if (cmd == "simulate") return cmd_simulate(cfg, io);
        if (cmd == "pipeline") return cmd_pipeline(cfg, io);
        err << "unknown command " << cmd << "\n" << kUsage;
        return kExitUsage;
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << "\n";
        return kExitResource;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace nsp
