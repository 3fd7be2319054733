#pragma once

// Plain full-batch gradient descent against a compiled property loss, plus an
// optional regression term toward reference data. Everything is seeded; the
// quantifier samples are redrawn each epoch from cfg.seed + epoch, and the
// returned network is the epoch-best by recorded combined loss.

#include <nsp/logic.hpp>
#include <nsp/network.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nsp {

struct TrainConfig {
    double learning_rate = 0.05;
    int epochs = 500;
    int batch = 512;                 // fresh quantifier samples per epoch
    double regression_weight = 0.5;  // 0 = pure property loss, 1 = pure regression
    std::uint64_t seed = 0;
    double init_scale = 0.5;
};

struct NonFiniteLoss : std::runtime_error {
    int epoch;
    explicit NonFiniteLoss(int e)
        : std::runtime_error("loss became non-finite at epoch " + std::to_string(e)),
          epoch(e) {}
};

struct EpochRecord {
    double prop = 0;
    double reg = 0;
    double combined = 0;
};

struct TrainResult {
    FloatNet net;  // epoch-best parameters
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_loss = std::numeric_limits<double>::infinity();
};

// widths = {inputs, hidden..., outputs}; relu everywhere except the last layer
inline FloatNet make_float_net(const std::vector<int>& widths, std::uint64_t seed,
                               double init_scale) {
    if (widths.size() < 2) throw std::invalid_argument("a network needs at least one layer");
    for (int w : widths)
        if (w <= 0) throw std::invalid_argument("layer widths must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-init_scale, init_scale);
    FloatNet f;
    for (size_t l = 1; l < widths.size(); ++l) {
        FloatNet::FLayer fl;
        fl.relu = l + 1 < widths.size();
        fl.w.assign(widths[l], std::vector<double>(widths[l - 1]));
        fl.b.assign(widths[l], 0.0);
        for (auto& row : fl.w)
            for (auto& v : row) v = u(rng);
        for (auto& v : fl.b) v = u(rng);
        f.layers.push_back(std::move(fl));
    }
    return f;
}

using Dataset = std::vector<std::pair<std::vector<Rat>, std::vector<Rat>>>;

// Mean squared error toward fixed (input, target) pairs, encoded as a
// pseudo-quantifier whose sample points are the dataset rows (inputs followed
// by targets), so the trainer's evaluation machinery applies unchanged.
inline LossTerm make_regression_loss(int input_dim, int output_dim, const Dataset& data) {
    if (data.empty()) throw std::invalid_argument("regression dataset is empty");
    using logic_detail::lx;
    using logic_detail::lx2;
    using logic_detail::lx_const;
    QuantInfo q;
    q.universal = true;
    for (int i = 0; i < input_dim + output_dim; ++i)
        q.vars.push_back("_data" + std::to_string(i));
    for (const auto& [in, tgt] : data) {
        if ((int)in.size() != input_dim || (int)tgt.size() != output_dim)
            throw std::invalid_argument("regression pair dimensions do not match");
        std::vector<Rat> row = in;
        row.insert(row.end(), tgt.begin(), tgt.end());
        q.fixed.push_back(std::move(row));
    }

    auto coord = [](int j) {
        LossExpr e;
        e.kind = LossExpr::Kind::Coord;
        e.qid = 0;
        e.coord = j;
        return lx(std::move(e));
    };
    LossExpr net;
    net.kind = LossExpr::Kind::Net;
    for (int j = 0; j < input_dim; ++j) net.args.push_back(coord(j));

    LossExprPtr per_point;
    BoolExprPtr fit;
    for (int j = 0; j < output_dim; ++j) {
        LossExpr nj = net;
        nj.out_index = j;
        LossExprPtr d = lx2(LossExpr::Kind::Sub, lx(std::move(nj)), coord(input_dim + j));
        LossExprPtr sq = lx2(LossExpr::Kind::Mul, d, d);
        per_point = per_point ? lx2(LossExpr::Kind::Add, per_point, sq) : sq;

        BoolExpr le;
        le.kind = BoolExpr::Kind::Atom;
        le.cmp = Cmp::Le;
        le.a = d;
        le.b = lx_const(rat(0));
        BoolExpr ge;
        ge.kind = BoolExpr::Kind::Atom;
        ge.cmp = Cmp::Ge;
        ge.a = d;
        ge.b = lx_const(rat(0));
        BoolExpr both;
        both.kind = BoolExpr::Kind::And;
        both.l = logic_detail::bx(std::move(le));
        both.r = logic_detail::bx(std::move(ge));
        BoolExprPtr bp = logic_detail::bx(std::move(both));
        if (fit) {
            BoolExpr acc;
            acc.kind = BoolExpr::Kind::And;
            acc.l = fit;
            acc.r = bp;
            fit = logic_detail::bx(std::move(acc));
        } else {
            fit = bp;
        }
    }

    LossExpr agg;
    agg.kind = LossExpr::Kind::Aggregate;
    agg.agg = LossExpr::Agg::Sum;
    agg.qid = 0;
    agg.a = per_point;
    LossTerm t;
    t.loss = lx2(LossExpr::Kind::Mul, lx_const(rat(1, (long)data.size())), lx(std::move(agg)));
    BoolExpr all;
    all.kind = BoolExpr::Kind::All;
    all.qid = 0;
    all.l = fit;
    t.mirror = logic_detail::bx(std::move(all));
    t.quants.push_back(std::move(q));
    return t;
}

inline LossTerm make_regression_loss(const FloatNet& net, const Dataset& data) {
    return make_regression_loss(net.input_dim(), net.output_dim(), data);
}

inline TrainResult train(const FloatNet& init, const LossTerm* prop, const LossTerm* reg,
                         const TrainConfig& cfg) {
    if (!prop && !reg) throw std::invalid_argument("train: no loss terms given");
    if (cfg.epochs <= 0) throw std::invalid_argument("train: epochs must be positive");
    FloatNet net = init;
    std::vector<double> params = net.flatten();
    TrainResult out;
    out.net = init;
    Samples reg_samples;
    if (reg) reg_samples = draw_samples(*reg, cfg.seed);
    double lambda = reg ? (prop ? cfg.regression_weight : 1.0) : 0.0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        std::vector<double> g(params.size(), 0.0);
        if (prop) {
            Samples s = draw_samples(*prop, cfg.seed + (std::uint64_t)epoch, cfg.batch);
            LossGrad pg = grad_loss(*prop, net, s);
            rec.prop = pg.value;
            for (size_t i = 0; i < g.size(); ++i) g[i] += (1 - lambda) * pg.grad[i];
        }
        if (reg) {
            LossGrad rg = grad_loss(*reg, net, reg_samples);
            rec.reg = rg.value;
            for (size_t i = 0; i < g.size(); ++i) g[i] += lambda * rg.grad[i];
        }
        rec.combined = lambda * rec.reg + (1 - lambda) * rec.prop;
        if (!std::isfinite(rec.combined)) throw NonFiniteLoss(epoch);
        out.history.push_back(rec);
        if (rec.combined < out.best_loss) {
            out.best_loss = rec.combined;
            out.best_epoch = epoch;
            out.net = net;
        }
        for (size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * g[i];
        net.unflatten(params);
    }
    return out;
}

}  // namespace nsp
