#pragma once

// Interval bound propagation through affine+ReLU layers, with optional
// phase splits, plus the secant/tangent relaxation of squares.

#include <optional>
#include <vector>

#include "nsp/network.hpp"

namespace nsp {

struct Interval {
    Rat lo, hi;
    bool operator==(const Interval&) const = default;
};

enum class Phase { None, Active, Inactive };

// phase[l][i] for layer l, neuron i; identity layers stay None
using SplitMap = std::vector<std::vector<Phase>>;

inline SplitMap empty_splits(const Network& net) {
    SplitMap m(net.layers.size());
    for (size_t l = 0; l < net.layers.size(); ++l)
        m[l].assign(net.layers[l].rows(), Phase::None);
    return m;
}

// Pre-activation intervals are natural (never refined by the neuron's own
// split); post-activation intervals are refined by the phase and propagate
// downstream. A split that contradicts the natural bounds (Active with
// hi < 0, Inactive with lo > 0) is reported as a conflict; propagation
// still continues so downstream intervals exist. Rows derived from them
// stay sound because the split region is empty.
struct IntervalBox {
    std::vector<std::vector<Interval>> pre;   // per layer, per neuron
    std::vector<std::vector<Interval>> post;  // after activation and split
    struct Conflict {
        int layer, neuron;
        Phase phase;
    };
    std::optional<Conflict> conflict;
};

inline IntervalBox interval_propagate(const Network& net, const std::vector<Interval>& input,
                                      const SplitMap& splits) {
    IntervalBox out;
    std::vector<Interval> cur = input;
    for (size_t l = 0; l < net.layers.size(); ++l) {
        const Layer& lay = net.layers[l];
        std::vector<Interval> pre(lay.rows()), post(lay.rows());
        for (int r = 0; r < lay.rows(); ++r) {
            Rat lo = lay.bias[r], hi = lay.bias[r];
            for (int c = 0; c < lay.cols(); ++c) {
                const Rat& w = lay.weights[r][c];
                if (w >= 0) {
                    lo += w * cur[c].lo;
                    hi += w * cur[c].hi;
                } else {
                    lo += w * cur[c].hi;
                    hi += w * cur[c].lo;
                }
            }
            pre[r] = {lo, hi};
            Interval p = pre[r];
            if (lay.relu) {
                Phase ph = splits[l][r];
                bool clash = (ph == Phase::Active && p.hi < 0) ||
                             (ph == Phase::Inactive && p.lo > 0);
                if (clash && !out.conflict)
                    out.conflict = IntervalBox::Conflict{(int)l, r, ph};
                switch (ph) {
                    case Phase::Active:
                        p = {rat_max(p.lo, rat(0)), rat_max(p.hi, rat(0))};
                        break;
                    case Phase::Inactive:
                        p = {rat(0), rat(0)};
                        break;
                    case Phase::None:
                        p = {rat_max(p.lo, rat(0)), rat_max(p.hi, rat(0))};
                        break;
                }
            }
            post[r] = p;
        }
        out.pre.push_back(std::move(pre));
        out.post.push_back(std::move(post));
        cur = out.post.back();
    }
    return out;
}

inline IntervalBox interval_propagate(const Network& net, const std::vector<Interval>& input) {
    return interval_propagate(net, input, empty_splits(net));
}

// Linear bounds on v^2 over [lo, hi]: one secant from above, two tangents
// from below. All three are exact at the interval endpoints.
struct QuadRelax {
    // v^2 <= up_a * v + up_b
    Rat up_a, up_b;
    // v^2 >= lo1_a * v + lo1_b  and  v^2 >= lo2_a * v + lo2_b
    Rat lo1_a, lo1_b;
    Rat lo2_a, lo2_b;
};

inline QuadRelax relax_quadratic(const Rat& lo, const Rat& hi) {
    QuadRelax r;
    r.up_a = lo + hi;
    r.up_b = -(lo * hi);
    r.lo1_a = 2 * lo;
    r.lo1_b = -(lo * lo);
    r.lo2_a = 2 * hi;
    r.lo2_b = -(hi * hi);
    return r;
}

}  // namespace nsp
