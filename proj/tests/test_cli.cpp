#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "nsp/nsp.hpp"

using namespace nsp;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.emplace_back("nsprove");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& a : full) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run_tool(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "nsprove_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("config files parse into typed settings") {
    ToolConfig cfg = parse_config(
        "# comment\n"
        "[paths]\n"
        "spec = fixtures/car.nsp\n"
        "network = net.json\n"
        "output = somewhere\n"
        "\n"
        "[logic]\n"
        "logic = godel\n"
        "quant = pmean\n"
        "p = 16\n"
        "tau = 1/20\n"
        "samples = 64\n"
        "\n"
        "[train]\n"
        "learning_rate = 1/8\n"
        "epochs = 12\n"
        "hidden = 4, 3\n"
        "\n"
        "[verifier]\n"
        "max_splits = 17\n"
        "\n"
        "[sim]\n"
        "B = 2\n"
        "p0 = 9\n"
        "\n"
        "[run]\n"
        "seed = 42\n"
        "property = safe\n"
        "distill_target = -3/4\n");
    CHECK(cfg.spec_path == "fixtures/car.nsp");
    CHECK(cfg.network_path == "net.json");
    CHECK(cfg.output_dir == "somewhere");
    CHECK(cfg.logic.logic == Logic::Godel);
    CHECK(cfg.logic.quant == QuantMode::PMean);
    CHECK(cfg.logic.p == 16.0);
    CHECK(cfg.logic.tau == rat(1, 20));
    CHECK(cfg.logic.sample_count == 64);
    CHECK(cfg.train.learning_rate == 0.125);
    CHECK(cfg.train.epochs == 12);
    CHECK(cfg.hidden == std::vector<int>{4, 3});
    CHECK(cfg.verifier.max_splits == 17);
    CHECK(cfg.sim.B == rat(2, 1));
    CHECK(cfg.sim.p0 == rat(9, 1));
    CHECK(cfg.seed == 42);
    CHECK(cfg.property == "safe");
    CHECK(cfg.distill);
    CHECK(cfg.distill_target == rat(-3, 4));

    SECTION("unknown keys and sections are rejected by name") {
        CHECK_THROWS_WITH(parse_config("[run]\nspeed = 3\n"),
                          Catch::Matchers::ContainsSubstring("unknown key run.speed"));
        CHECK_THROWS_WITH(parse_config("[runs]\nseed = 3\n"),
                          Catch::Matchers::ContainsSubstring("unknown section [runs]"));
    }
    SECTION("malformed lines report their line number") {
        CHECK_THROWS_WITH(parse_config("seed = 3\n"),
                          Catch::Matchers::ContainsSubstring("line 1"));
        CHECK_THROWS_WITH(parse_config("[run\nseed = 3\n"),
                          Catch::Matchers::ContainsSubstring("unterminated section"));
        CHECK_THROWS_WITH(parse_config("[run]\nno equals sign\n"),
                          Catch::Matchers::ContainsSubstring("expected key = value"));
    }
    SECTION("rational keys accept the spec language's literal forms") {
        CHECK(parse_config("[sim]\nB = 0.5\n").sim.B == rat(1, 2));
        CHECK(parse_config("[sim]\nB = -3/4\n").sim.B == rat(-3, 4));
        CHECK_THROWS_WITH(parse_config("[sim]\nB = fast\n"),
                          Catch::Matchers::ContainsSubstring("expected a rational"));
    }
    SECTION("overrides reuse the same typed paths") {
        apply_override(cfg, "run.seed=9");
        CHECK(cfg.seed == 9);
        apply_override(cfg, "paths.output=elsewhere");
        CHECK(cfg.output_dir == "elsewhere");
        CHECK_THROWS_AS(apply_override(cfg, "no-dot-or-equals"), ConfigError);
        CHECK_THROWS_AS(apply_override(cfg, "run.seed=-1"), ConfigError);
    }
}

TEST_CASE("check reports the shape of a spec") {
    CliResult r = run_cli({"check", "fixtures/car.nsp"});
    CHECK(r.code == 0);
    CHECK(contains(r.out, "1 network(s), 1 constant(s), 3 property(ies)"));
    CHECK(contains(r.out, "  margin: ok"));
    CHECK(contains(r.out, "  safe: ok"));
    CHECK(contains(r.out, "  problem_safe: ok"));

    SECTION("a missing spec is a usage error") {
        CliResult bad = run_cli({"check", "fixtures/nonexistent.nsp"});
        CHECK(bad.code == 2);
        CHECK(contains(bad.err, "error:"));
    }
    SECTION("a type error surfaces with the property name") {
        fs::path dir = fresh_dir("check_typeerr");
        spit(dir / "bad.nsp",
             "network f : 2 -> 1\n"
             "prop p: forall x in [0,1] . f[x]!0 <= 1\n");
        CliResult bad = run_cli({"check", (dir / "bad.nsp").string()});
        CHECK(bad.code == 2);
        CHECK(contains(bad.err, "error:"));
    }
}

TEST_CASE("verify emits certificates the checker accepts") {
    fs::path dir = fresh_dir("verify_abs");
    CliResult r = run_cli({"verify", "--set", "paths.spec=fixtures/tn_abs.nsp", "--set",
                           "paths.network=fixtures/tn_abs.json", "--out", dir.string()});
    CAPTURE(r.out, r.err);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "bounded_q0: verified"));
    fs::path cert = dir / "bounded_q0.cert.json";
    fs::path query = dir / "bounded_q0.query.txt";
    REQUIRE(fs::exists(cert));
    REQUIRE(fs::exists(query));

    SECTION("check-cert accepts the artifacts from disk") {
        CliResult c =
            run_cli({"check-cert", cert.string(), "fixtures/tn_abs.json", query.string()});
        CHECK(c.code == 0);
        CHECK(contains(c.out, "accepted:"));
        CHECK(contains(c.out, "leaves checked"));
    }
    SECTION("a tampered digest is rejected with its reason code") {
        nlohmann::json j = nlohmann::json::parse(slurp(cert));
        std::string d = j["digest"];
        d[0] = d[0] == 'a' ? 'b' : 'a';
        j["digest"] = d;
        fs::path bad = dir / "tampered.cert.json";
        spit(bad, j.dump());
        CliResult c = run_cli({"check-cert", bad.string(), "fixtures/tn_abs.json", query.string()});
        CHECK(c.code == 1);
        CHECK(contains(c.out, "rejected: digest-mismatch"));
    }
    SECTION("check-cert wants exactly three artifacts") {
        CliResult c = run_cli({"check-cert", cert.string(), "fixtures/tn_abs.json"});
        CHECK(c.code == 2);
    }
}

TEST_CASE("verify reports refutations with an exact witness") {
    fs::path dir = fresh_dir("verify_refuted");
    spit(dir / "tight.nsp",
         "network f : 1 -> 1\n"
         "prop tight: forall x in [-1,1] . f[x]!0 <= 1/2\n");
    CliResult r = run_cli({"verify", "--set", "paths.spec=" + (dir / "tight.nsp").string(),
                           "--set", "paths.network=fixtures/tn_abs.json", "--out", dir.string()});
    CHECK(r.code == 1);
    CHECK(contains(r.out, "refuted"));
    CHECK(contains(r.out, "counterexample: x = "));
}

TEST_CASE("export writes query text that parses back verbatim") {
    fs::path dir = fresh_dir("export_abs");
    CliResult r = run_cli({"export", "--set", "paths.spec=fixtures/tn_abs.nsp", "--set",
                           "paths.network=fixtures/tn_abs.json", "--out", dir.string()});
    REQUIRE(r.code == 0);
    fs::path qpath = dir / "bounded_q0.query.txt";
    CHECK(contains(r.out, qpath.string()));
    REQUIRE(fs::exists(qpath));

    Network net = load_network("fixtures/tn_abs.json");
    std::string text = slurp(qpath);
    VerifyQuery q = parse_query(text, net);
    CHECK(export_query(q) == text);
}

TEST_CASE("train writes a model that verify can consume") {
    fs::path dir = fresh_dir("train_then_verify");
    std::vector<std::string> common = {
        "--set", "paths.spec=fixtures/car.nsp",
        "--set", "run.property=safe",
        "--set", "run.train_property=margin",
        "--set", "run.distill_target=-3/4",
        "--set", "run.seed=7",
        "--set", "logic.tau=1/10",
        "--set", "train.learning_rate=1/16",
        "--out", dir.string()};

    std::vector<std::string> targs = {"train"};
    targs.insert(targs.end(), common.begin(), common.end());
    CliResult t = run_cli(targs);
    CAPTURE(t.out, t.err);
    REQUIRE(t.code == 0);
    CHECK(contains(t.out, "trained 500 epochs"));
    fs::path net_path = dir / "trained_net.json";
    REQUIRE(fs::exists(net_path));
    REQUIRE(fs::exists(dir / "history.csv"));
    CHECK(contains(slurp(dir / "history.csv"), "epoch,prop,reg,combined"));

    std::vector<std::string> vargs = {"verify"};
    vargs.insert(vargs.end(), common.begin(), common.end());
    vargs.insert(vargs.end(), {"--set", "paths.network=" + net_path.string()});
    CliResult v = run_cli(vargs);
    CAPTURE(v.out, v.err);
    CHECK(v.code == 0);
    CHECK(contains(v.out, "safe_q0: verified"));
}

TEST_CASE("the car pipeline discharges and reruns byte for byte") {
    fs::path dir = fresh_dir("pipeline_car");
    CliResult r = run_cli({"pipeline", "fixtures/car.ini", "--out", dir.string()});
    CAPTURE(r.out, r.err);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "sampled satisfaction: 10000/10000"));
    CHECK(contains(r.out, "verified, certificate accepted"));
    CHECK(contains(r.out, "overall: discharged-at-desk-scale"));

    nlohmann::json ledger = nlohmann::json::parse(slurp(dir / "ledger.json"));
    CHECK(ledger["overall"] == "discharged-at-desk-scale");
    CHECK(ledger["obligation1"]["status"] == "proven");
    CHECK(ledger["obligation2"]["status"] == "proven");
    CHECK(ledger["obligation3"]["disclaimer"] == "testing, not proof");

    SECTION("the same seed reproduces every artifact byte for byte") {
        std::string net1 = slurp(dir / "trained_net.json");
        std::string ledger1 = slurp(dir / "ledger.json");
        std::string cert1 = slurp(dir / "safe_q0.cert.json");
        CliResult again = run_cli({"pipeline", "fixtures/car.ini", "--out", dir.string()});
        REQUIRE(again.code == 0);
        CHECK(again.out == r.out);
        CHECK(slurp(dir / "trained_net.json") == net1);
        CHECK(slurp(dir / "ledger.json") == ledger1);
        CHECK(slurp(dir / "safe_q0.cert.json") == cert1);
    }
}

TEST_CASE("simulate writes an exact trajectory and a verdict") {
    fs::path dir = fresh_dir("simulate_const");
    Network brake;
    Layer out;
    out.weights = {{rat(0, 1), rat(0, 1)}};
    out.bias = {rat(-1, 1)};
    out.relu = false;
    brake.layers.push_back(out);
    fs::path net_path = dir / "brake.json";
    save_network(brake, net_path.string());

    CliResult r = run_cli({"simulate", "--set", "paths.network=" + net_path.string(), "--set",
                           "paths.embedding=fixtures/car_embedding.json", "--out", dir.string()});
    CAPTURE(r.out, r.err);
    REQUIRE(r.code == 0);
    CHECK(contains(r.out, "min p_rel = 9 at t = 1: no collision"));

    std::string csv = slurp(dir / "trajectory.csv");
    CHECK(contains(csv, "t,p_rel,v_rel,a_rel,clamped\n"));
    CHECK(contains(csv, "0,10,-2,-2,0\n"));

    SECTION("braking too weakly from a valid start is a collision exit") {
        // a_rel = -1/2 stops in v0^2 = 9 units, farther than the 5 available
        Network weak = brake;
        weak.layers[0].bias = {rat(-1, 4)};
        fs::path weak_path = dir / "weak.json";
        save_network(weak, weak_path.string());
        CliResult hit = run_cli({"simulate", "--set", "paths.network=" + weak_path.string(),
                                 "--set", "paths.embedding=fixtures/car_embedding.json", "--set",
                                 "sim.p0=5", "--set", "sim.v0=-3", "--out", dir.string()});
        CHECK(hit.code == 1);
        CHECK(contains(hit.out, "COLLISION"));
    }
    SECTION("a start inside the stopping parabola is refused up front") {
        CliResult bad = run_cli({"simulate", "--set", "paths.network=" + net_path.string(),
                                 "--set", "paths.embedding=fixtures/car_embedding.json", "--set",
                                 "sim.p0=1", "--set", "sim.v0=-3", "--out", dir.string()});
        CHECK(bad.code == 2);
        CHECK(contains(bad.err, "precondition"));
    }
}

TEST_CASE("exit codes separate usage errors from verdicts") {
    CHECK(run_cli({}).code == 2);
    CHECK(contains(run_cli({}).err, "usage:"));
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(contains(run_cli({"--help"}).out, "usage:"));
    CHECK(run_cli({"--version"}).code == 0);
    CHECK(contains(run_cli({"--version"}).out, "nsprove 0.1.0"));
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"check", "--set"}).code == 2);
    CHECK(run_cli({"check", "--bogus-flag"}).code == 2);
    CHECK(run_cli({"check", "a.nsp", "b.nsp"}).code == 2);
    CHECK(run_cli({"check", "fixtures/car.nsp", "--set", "run.seed=oops"}).code == 2);
    CHECK(run_cli({"verify", "no_such_config.ini"}).code == 2);

    SECTION("an exhausted split budget is a resource exit") {
        fs::path dir = fresh_dir("pipeline_limited");
        CliResult r = run_cli({"pipeline", "fixtures/car.ini", "--out", dir.string(), "--set",
                               "verifier.max_splits=0"});
        CHECK(r.code == 3);
        CHECK(contains(r.err, "resource limit"));
    }
}
