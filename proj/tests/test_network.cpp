#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "nsp/network.hpp"

using namespace nsp;

namespace {

std::vector<Rat> rvec(std::mt19937_64& rng, int n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<Rat> v(n);
    for (auto& x : v) x = rat_from_double(d(rng));
    return v;
}

Network random_net(std::mt19937_64& rng, int in, std::vector<int> widths) {
    std::uniform_real_distribution<double> d(-10, 10);
    Network net;
    int prev = in;
    for (size_t i = 0; i < widths.size(); ++i) {
        Layer l;
        l.relu = i + 1 < widths.size();
        for (int r = 0; r < widths[i]; ++r) {
            std::vector<Rat> row(prev);
            for (auto& w : row) w = rat_from_double(d(rng));
            l.weights.push_back(std::move(row));
            l.bias.push_back(rat_from_double(d(rng)));
        }
        prev = widths[i];
        net.layers.push_back(std::move(l));
    }
    return net;
}

}  // namespace

TEST_CASE("TN1 loads and evaluates") {
    Network net = load_network("fixtures/tn1.json");
    CHECK(net.input_dim() == 2);
    CHECK(net.output_dim() == 1);
    CHECK(eval_exact(net, {rat(1), rat(1)}) == std::vector<Rat>{rat(-2)});
    CHECK(eval_exact(net, {rat(-1), rat(-1)}) == std::vector<Rat>{rat(0)});
}

TEST_CASE("TN-ID is the identity") {
    Network net = load_network("fixtures/tn_id.json");
    for (long k : {-7L, 0L, 3L, 12345L})
        CHECK(eval_exact(net, {rat(k, 7)}) == std::vector<Rat>{rat(k, 7)});
}

TEST_CASE("TN-ABS computes absolute value") {
    Network net = load_network("fixtures/tn_abs.json");
    CHECK(eval_exact(net, {rat(-3, 4)}) == std::vector<Rat>{rat(3, 4)});
    CHECK(eval_exact(net, {rat(3, 4)}) == std::vector<Rat>{rat(3, 4)});
}

TEST_CASE("malformed network files are rejected with field paths") {
    CHECK_THROWS_AS(network_from_json(json{{"layers", json::array()}}), FormatError);

    json mismatched = json::parse(R"({"layers": [
        {"weights": [["1","2"]], "bias": ["0"], "activation": "relu"},
        {"weights": [["1","2","3"]], "bias": ["0"], "activation": "identity"}]})");
    CHECK_THROWS_AS(network_from_json(mismatched), DimensionError);

    json final_relu = json::parse(
        R"({"layers": [{"weights": [["1"]], "bias": ["0"], "activation": "relu"}]})");
    CHECK_THROWS_WITH(network_from_json(final_relu),
                      Catch::Matchers::ContainsSubstring("identity"));

    json bad_rat = json::parse(
        R"({"layers": [{"weights": [["x"]], "bias": ["0"], "activation": "identity"}]})");
    try {
        network_from_json(bad_rat);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.path == "layers[0].weights[0][0]");
    }
}

TEST_CASE("float literals are quarantined behind trust_floats") {
    json j = json::parse(
        R"({"layers": [{"weights": [[0.5]], "bias": ["0"], "activation": "identity"}]})");
    CHECK_THROWS_AS(network_from_json(j), FormatError);
    Network net = network_from_json(j, /*trust_floats=*/true);
    CHECK(net.layers[0].weights[0][0] == rat(1, 2));
    // 0.1 adopts its exact binary value, not 1/10
    json j2 = json::parse(
        R"({"layers": [{"weights": [[0.1]], "bias": ["0"], "activation": "identity"}]})");
    Network net2 = network_from_json(j2, true);
    CHECK(net2.layers[0].weights[0][0] != rat(1, 10));
    CHECK(net2.layers[0].weights[0][0] == rat_from_double(0.1));
}

TEST_CASE("oversize networks warn but load") {
    std::mt19937_64 rng(1);
    Network big = random_net(rng, 2, {40, 40, 1});
    std::vector<std::string> warnings;
    validate_network(big, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("neurons") != std::string::npos);
}

TEST_CASE("save and load round-trips exactly") {
    std::mt19937_64 rng(2);
    Network net = random_net(rng, 3, {4, 2});
    std::string tmp = "build/tmp_net_roundtrip.json";
    save_network(net, tmp);
    Network again = load_network(tmp);
    REQUIRE(net.layers.size() == again.layers.size());
    for (size_t i = 0; i < net.layers.size(); ++i) {
        CHECK(net.layers[i].weights == again.layers[i].weights);
        CHECK(net.layers[i].bias == again.layers[i].bias);
    }
    CHECK(canonical_network_text(net) == canonical_network_text(again));
}

TEST_CASE("float and exact eval agree within 1e-9") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Network net = random_net(rng, 2, {3, 3, 1});
        for (int i = 0; i < 1000; ++i) {
            std::vector<Rat> x = rvec(rng, 2, -1, 1);
            std::vector<Rat> ye = eval_exact(net, x);
            std::vector<Rat> yf = eval(net, x, EvalMode::Float64);
            for (size_t k = 0; k < ye.size(); ++k) {
                Rat diff = rat_abs(Rat(ye[k] - yf[k]));
                CHECK(diff <= rat(1, 1000000000));
            }
        }
    }
}

TEST_CASE("eval is affine on activation-stable segments") {
    std::mt19937_64 rng(4);
    Network net = random_net(rng, 2, {3, 2});

    auto pattern = [&](const std::vector<Rat>& x) {
        std::vector<int> sig;
        std::vector<Rat> cur = x;
        for (const Layer& l : net.layers) {
            std::vector<Rat> y(l.rows());
            for (int r = 0; r < l.rows(); ++r) {
                Rat acc = l.bias[r];
                for (int c = 0; c < l.cols(); ++c) acc += l.weights[r][c] * cur[c];
                if (l.relu) {
                    sig.push_back(acc >= 0 ? 1 : 0);
                    if (acc < 0) acc = 0;
                }
                y[r] = acc;
            }
            cur = std::move(y);
        }
        return sig;
    };

    int checked = 0;
    for (int trial = 0; trial < 50 && checked < 10; ++trial) {
        std::vector<Rat> x = rvec(rng, 2, -1, 1);
        std::vector<Rat> y = rvec(rng, 2, -1, 1);
        // 20 interpolation points sharing one activation pattern
        bool stable = true;
        std::vector<std::vector<Rat>> outs;
        auto sig0 = pattern(x);
        for (int k = 0; k <= 20 && stable; ++k) {
            Rat t = rat(k, 20);
            std::vector<Rat> z(2);
            for (int i = 0; i < 2; ++i) z[i] = x[i] + t * (y[i] - x[i]);
            if (pattern(z) != sig0) { stable = false; break; }
            outs.push_back(eval_exact(net, z));
        }
        if (!stable) continue;
        ++checked;
        // exact second differences vanish on an affine segment
        for (size_t k = 2; k < outs.size(); ++k)
            for (size_t d = 0; d < outs[k].size(); ++d)
                CHECK(Rat(outs[k][d] - 2 * outs[k - 1][d] + outs[k - 2][d]) == 0);
    }
    CHECK(checked >= 5);
}

TEST_CASE("embedding maps load, apply, and invert") {
    json j = json::parse(R"({
        "input_map": [{"scale": "1/5", "offset": "0"}, {"scale": "1/5", "offset": "-1"}],
        "output_map": [{"scale": "2", "offset": "0"}]})");
    EmbeddingSpec emb = embedding_from_json(j);
    CHECK(embed(emb, {rat(5), rat(10)}) == std::vector<Rat>{rat(1), rat(1)});
    CHECK(embed(emb, {rat(-5), rat(0)}) == std::vector<Rat>{rat(-1), rat(-1)});
    CHECK(unembed(emb, {rat(-3, 4)}) == std::vector<Rat>{rat(-3, 2)});
    CHECK(embed_inverse(emb, embed(emb, {rat(2), rat(7)})) ==
          std::vector<Rat>{rat(2), rat(7)});

    json bad = json::parse(R"({
        "input_map": [{"scale": "0", "offset": "0"}],
        "output_map": [{"scale": "1", "offset": "0"}]})");
    CHECK_THROWS_AS(embedding_from_json(bad), FormatError);
}

TEST_CASE("embed is strictly monotone per coordinate") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(0.01, 3.0);
    EmbeddingSpec emb;
    for (int i = 0; i < 3; ++i)
        emb.input_map.push_back(AffineDim{rat_from_double(d(rng)), rat_from_double(d(rng) - 1.5)});
    emb.output_map = emb.input_map;
    for (int t = 0; t < 100; ++t) {
        std::vector<Rat> x = rvec(rng, 3, -2, 2);
        std::vector<Rat> y = x;
        for (auto& yi : y) yi += rat_from_double(d(rng));
        std::vector<Rat> ex = embed(emb, x), ey = embed(emb, y);
        for (int i = 0; i < 3; ++i) CHECK(ex[i] < ey[i]);
    }
}

TEST_CASE("eval_solution composes unembed after eval after embed") {
    Network net = load_network("fixtures/tn_id.json");
    EmbeddingSpec emb;
    emb.input_map = {AffineDim{rat(1), rat(0)}};
    emb.output_map = {AffineDim{rat(1), rat(0)}};
    CHECK(eval_solution(net, emb, {rat(3)}, EvalMode::ExactRational) ==
          std::vector<Rat>{rat(3)});

    EmbeddingSpec bad = emb;
    bad.input_map.push_back(AffineDim{rat(1), rat(0)});
    CHECK_THROWS_AS(eval_solution(net, bad, {rat(3)}, EvalMode::ExactRational),
                    DimensionError);
}

TEST_CASE("quantized export stays close and is dyadic") {
    std::mt19937_64 rng(6);
    Network net = random_net(rng, 2, {3, 1});
    FloatNet f = to_float_net(net);
    Network q = to_network_quantized(f, 12);
    Rat step = rat(1, 4096);
    for (size_t i = 0; i < net.layers.size(); ++i)
        for (size_t r = 0; r < net.layers[i].weights.size(); ++r)
            for (size_t c = 0; c < net.layers[i].weights[r].size(); ++c) {
                Rat diff = rat_abs(Rat(net.layers[i].weights[r][c] - q.layers[i].weights[r][c]));
                CHECK(diff <= step);
                // denominator divides 2^12
                mpz_class den = q.layers[i].weights[r][c].get_den();
                CHECK(mpz_class(4096) % den == 0);
            }
}

TEST_CASE("flatten and unflatten are inverse") {
    std::mt19937_64 rng(7);
    Network net = random_net(rng, 2, {3, 2});
    FloatNet f = to_float_net(net);
    std::vector<double> p = f.flatten();
    REQUIRE(p.size() == f.param_count());
    std::vector<double> p2 = p;
    for (auto& x : p2) x += 1.0;
    f.unflatten(p2);
    CHECK(f.flatten() == p2);
}
