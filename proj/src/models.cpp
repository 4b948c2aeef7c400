#include "mlchain/models.hpp"

#include "mlchain/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <sstream>

namespace mlchain {

using opt::Problem;
using opt::RowSense;
using opt::Term;

const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::LinearRegression: return "linear_regression";
    case ModelKind::LogisticRegression: return "logistic_regression";
    case ModelKind::DecisionTree: return "decision_tree";
    case ModelKind::TreeEnsemble: return "tree_ensemble";
    case ModelKind::ReluNetwork: return "relu_network";
    case ModelKind::ReluNetworkSoftmax: return "relu_network_softmax";
    case ModelKind::DecisionRules: return "decision_rules";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
    for (ModelKind k : {ModelKind::LinearRegression, ModelKind::LogisticRegression, ModelKind::DecisionTree,
                        ModelKind::TreeEnsemble, ModelKind::ReluNetwork, ModelKind::ReluNetworkSoftmax,
                        ModelKind::DecisionRules})
        if (s == to_string(k)) return k;
    throw InvalidInput("unknown model kind '" + s + "'");
}

const char* to_string(Activation a) {
    switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Softmax: return "softmax";
    }
    return "unknown";
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

bool RuleAtom::holds(const Eigen::VectorXd& x) const {
    const double v = x(feature);
    switch (op) {
    case CompareOp::Less: return v < value;
    case CompareOp::LessEqual: return v <= value;
    case CompareOp::Greater: return v > value;
    case CompareOp::GreaterEqual: return v >= value;
    }
    return false;
}

IntervalVector affine_bounds(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const IntervalVector& x) {
    IntervalVector out;
    out.reserve(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        double lo = b(i), hi = b(i);
        for (Eigen::Index j = 0; j < W.cols(); ++j) {
            const double a = W(i, j);
            if (a == 0.0) continue;
            const Interval& xi = x[static_cast<std::size_t>(j)];
            lo += a > 0 ? a * xi.lo() : a * xi.hi();
            hi += a > 0 ? a * xi.hi() : a * xi.lo();
        }
        out.emplace_back(lo, hi);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Construction and evaluation

ModelArtifact ModelArtifact::linear_regression(Eigen::MatrixXd W, Eigen::VectorXd b) {
    ModelArtifact m;
    m.kind_ = ModelKind::LinearRegression;
    m.arity_ = static_cast<int>(W.rows());
    m.n_features_ = static_cast<int>(W.cols());
    m.W_ = std::move(W);
    m.b_ = std::move(b);
    m.check();
    return m;
}

ModelArtifact ModelArtifact::logistic_regression(Eigen::MatrixXd W, Eigen::VectorXd b) {
    ModelArtifact m = linear_regression(std::move(W), std::move(b));
    m.kind_ = ModelKind::LogisticRegression;
    return m;
}

ModelArtifact ModelArtifact::decision_tree(Tree tree, int n_features, int arity) {
    ModelArtifact m;
    m.kind_ = ModelKind::DecisionTree;
    m.arity_ = arity;
    m.n_features_ = n_features;
    m.trees_.push_back(std::move(tree));
    m.base_.assign(static_cast<std::size_t>(arity), 0.0);
    m.check();
    return m;
}

ModelArtifact ModelArtifact::tree_ensemble(std::vector<Tree> trees, int n_features, bool average,
                                           std::vector<double> base, int arity) {
    ModelArtifact m;
    m.kind_ = ModelKind::TreeEnsemble;
    m.arity_ = arity;
    m.n_features_ = n_features;
    m.trees_ = std::move(trees);
    m.average_ = average;
    m.base_ = base.empty() ? std::vector<double>(static_cast<std::size_t>(arity), 0.0) : std::move(base);
    m.check();
    return m;
}

ModelArtifact ModelArtifact::relu_network(std::vector<Layer> layers) {
    if (layers.empty()) throw InvalidInput("relu_network: no layers");
    ModelArtifact m;
    m.kind_ = layers.back().activation == Activation::Softmax ? ModelKind::ReluNetworkSoftmax : ModelKind::ReluNetwork;
    m.n_features_ = static_cast<int>(layers.front().W.cols());
    m.arity_ = static_cast<int>(layers.back().W.rows());
    m.layers_ = std::move(layers);
    m.check();
    return m;
}

ModelArtifact ModelArtifact::decision_rules(std::vector<Rule> rules, std::vector<double> default_value, int n_features,
                                            std::vector<std::string> feature_names) {
    ModelArtifact m;
    m.kind_ = ModelKind::DecisionRules;
    m.arity_ = static_cast<int>(default_value.size());
    m.n_features_ = n_features;
    m.rules_ = std::move(rules);
    m.default_ = std::move(default_value);
    m.names_ = std::move(feature_names);
    m.check();
    return m;
}

bool ModelArtifact::is_probability() const {
    switch (kind_) {
    case ModelKind::LogisticRegression:
    case ModelKind::ReluNetworkSoftmax: return true;
    case ModelKind::ReluNetwork: return layers_.back().activation == Activation::Sigmoid;
    default: return false;
    }
}

void ModelArtifact::check() const {
    auto fail = [&](const std::string& msg) { throw InvalidInput(std::string(to_string(kind_)) + ": " + msg); };
    if (arity_ <= 0) fail("arity must be positive");
    if (n_features_ <= 0) fail("n_features must be positive");
    switch (kind_) {
    case ModelKind::LinearRegression:
    case ModelKind::LogisticRegression:
        if (b_.size() != W_.rows()) fail("bias length differs from weight rows");
        if (!W_.allFinite() || !b_.allFinite()) fail("non-finite weights");
        break;
    case ModelKind::DecisionTree:
    case ModelKind::TreeEnsemble:
        if (trees_.empty()) fail("no trees");
        if (static_cast<int>(base_.size()) != arity_) fail("base length differs from arity");
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            const auto& nodes = trees_[t].nodes;
            const std::string where = "tree " + std::to_string(t) + ": ";
            if (nodes.empty()) fail(where + "no nodes");
            // Each path from the root must reach a leaf without revisiting a node.
            std::vector<int> seen(nodes.size(), 0);
            std::vector<int> stack{0};
            while (!stack.empty()) {
                const int id = stack.back();
                stack.pop_back();
                if (id < 0 || id >= static_cast<int>(nodes.size())) fail(where + "child index out of range");
                if (seen[static_cast<std::size_t>(id)]++) fail(where + "node reached twice (not a tree)");
                const TreeNode& n = nodes[static_cast<std::size_t>(id)];
                if (n.is_leaf()) {
                    if (static_cast<int>(n.value.size()) != arity_) fail(where + "leaf value length differs from arity");
                    for (double v : n.value)
                        if (!std::isfinite(v)) fail(where + "non-finite leaf value");
                } else {
                    if (n.feature >= n_features_) fail(where + "split feature out of range");
                    if (!std::isfinite(n.threshold)) fail(where + "non-finite threshold");
                    stack.push_back(n.left);
                    stack.push_back(n.right);
                }
            }
        }
        break;
    case ModelKind::ReluNetwork:
    case ModelKind::ReluNetworkSoftmax: {
        Eigen::Index in = n_features_;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& L = layers_[l];
            const std::string where = "layer " + std::to_string(l) + ": ";
            if (L.W.cols() != in) fail(where + "input width does not chain");
            if (L.b.size() != L.W.rows()) fail(where + "bias length differs from weight rows");
            if (!L.W.allFinite() || !L.b.allFinite()) fail(where + "non-finite weights");
            const bool last = l + 1 == layers_.size();
            if (!last && L.activation != Activation::Relu) fail(where + "hidden layers must use relu");
            if (last && L.activation == Activation::Relu) fail(where + "final layer must be linear, sigmoid or softmax");
            in = L.W.rows();
        }
        break;
    }
    case ModelKind::DecisionRules:
        for (std::size_t k = 0; k < rules_.size(); ++k) {
            if (static_cast<int>(rules_[k].value.size()) != arity_)
                fail("rule " + std::to_string(k) + " value length differs from arity");
            for (const RuleAtom& a : rules_[k].atoms)
                if (a.feature < 0 || a.feature >= n_features_ || !std::isfinite(a.value))
                    fail("rule " + std::to_string(k) + " has an invalid condition");
        }
        break;
    }
}

namespace {

int tree_leaf(const Tree& t, const Eigen::VectorXd& x) {
    int id = 0;
    while (!t.nodes[static_cast<std::size_t>(id)].is_leaf()) {
        const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
        id = x(n.feature) <= n.threshold ? n.left : n.right;
    }
    return id;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
    return e / e.sum();
}

} // namespace

Eigen::VectorXd ModelArtifact::evaluate(const Eigen::VectorXd& x) const {
    if (x.size() != n_features_) {
        std::ostringstream os;
        os << to_string(kind_) << ": expected " << n_features_ << " features, got " << x.size();
        throw InvalidInput(os.str());
    }
    switch (kind_) {
    case ModelKind::LinearRegression: return W_ * x + b_;
    case ModelKind::LogisticRegression: {
        Eigen::VectorXd z = W_ * x + b_;
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
        return z;
    }
    case ModelKind::DecisionTree:
    case ModelKind::TreeEnsemble: {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(arity_);
        for (const Tree& t : trees_) {
            const auto& v = t.nodes[static_cast<std::size_t>(tree_leaf(t, x))].value;
            for (int i = 0; i < arity_; ++i) acc(i) += v[static_cast<std::size_t>(i)];
        }
        if (average_) acc /= static_cast<double>(trees_.size());
        for (int i = 0; i < arity_; ++i) acc(i) += base_[static_cast<std::size_t>(i)];
        return acc;
    }
    case ModelKind::ReluNetwork:
    case ModelKind::ReluNetworkSoftmax: {
        Eigen::VectorXd h = x;
        for (const Layer& L : layers_) {
            Eigen::VectorXd z = L.W * h + L.b;
            switch (L.activation) {
            case Activation::Relu: h = z.cwiseMax(0.0); break;
            case Activation::Linear: h = z; break;
            case Activation::Sigmoid:
                for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i));
                h = z;
                break;
            case Activation::Softmax: h = softmax(z); break;
            }
        }
        return h;
    }
    case ModelKind::DecisionRules: {
        const std::vector<double>* out = &default_;
        for (const Rule& r : rules_) {
            if (std::all_of(r.atoms.begin(), r.atoms.end(), [&](const RuleAtom& a) { return a.holds(x); })) {
                out = &r.value;
                break;
            }
        }
        return Eigen::Map<const Eigen::VectorXd>(out->data(), static_cast<Eigen::Index>(out->size()));
    }
    }
    return {};
}

// ---------------------------------------------------------------------------
// Piecewise-linear envelopes of a one-dimensional convex/concave function.

namespace {

struct Curve {
    std::function<double(double)> f;
    std::function<double(double)> df;
    /// Whether f is convex on [a, b] (otherwise concave there).
    std::function<bool(double, double)> convex_on;
};

struct Line {
    double slope;
    double icpt;
    double at(double t) const { return slope * t + icpt; }
};

struct SegmentEnvelope {
    double a, b;
    std::vector<Line> lower, upper;
};

std::vector<double> breakpoints(double lo, double hi, int segments, bool split_at_zero) {
    std::vector<double> bp;
    segments = std::max(1, segments);
    auto uniform = [&](double a, double b, int k) {
        for (int i = 0; i < k; ++i) bp.push_back(a + (b - a) * i / k);
    };
    if (split_at_zero && lo < 0.0 && hi > 0.0) {
        const int left = std::max(1, segments / 2);
        uniform(lo, 0.0, left);
        uniform(0.0, hi, std::max(1, segments - left));
    } else {
        uniform(lo, hi, segments);
    }
    bp.push_back(hi);
    return bp;
}

SegmentEnvelope segment_envelope(const Curve& c, double a, double b) {
    SegmentEnvelope s{a, b, {}, {}};
    const double fa = c.f(a), fb = c.f(b);
    const double slope = b > a ? (fb - fa) / (b - a) : 0.0;
    const Line chord{slope, fa - slope * a};
    std::vector<Line> tangents;
    for (double t : {a, 0.5 * (a + b), b}) tangents.push_back({c.df(t), c.f(t) - c.df(t) * t});
    if (c.convex_on(a, b)) {
        s.lower = tangents;
        s.upper = {chord};
    } else {
        s.lower = {chord};
        s.upper = tangents;
    }
    return s;
}

// Upper minus lower envelope is piecewise linear and concave on a segment, so
// its maximum sits at an endpoint or where two tangent lines cross.
double segment_gap(const SegmentEnvelope& s) {
    std::vector<double> pts{s.a, s.b};
    auto add_crossings = [&](const std::vector<Line>& ls) {
        for (std::size_t i = 0; i < ls.size(); ++i)
            for (std::size_t j = i + 1; j < ls.size(); ++j) {
                const double ds = ls[i].slope - ls[j].slope;
                if (std::abs(ds) < 1e-300) continue;
                const double t = (ls[j].icpt - ls[i].icpt) / ds;
                if (t > s.a && t < s.b) pts.push_back(t);
            }
    };
    add_crossings(s.lower);
    add_crossings(s.upper);
    double gap = 0.0;
    for (double t : pts) {
        double lo = -HUGE_VAL, hi = HUGE_VAL;
        for (const Line& l : s.lower) lo = std::max(lo, l.at(t));
        for (const Line& l : s.upper) hi = std::min(hi, l.at(t));
        gap = std::max(gap, hi - lo);
    }
    return gap;
}

struct EnvelopeResult {
    int out;
    double gap;            // absolute
    double relative_gap;   // gap / min f on the segment
    Interval range;
};

/// Adds y ~ f(z) for z in [zb] to p using the disaggregated disjunction over
/// the segments; y is confined between the lower and upper envelopes.
EnvelopeResult add_envelope(Problem& p, int z, const Interval& zb, const Curve& c, int segments, bool split_at_zero,
                            const std::string& name) {
    const double flo = c.f(zb.lo()), fhi = c.f(zb.hi());
    EnvelopeResult res{-1, 0.0, 0.0, Interval(std::min(flo, fhi), std::max(flo, fhi))};
    if (zb.width() <= 1e-12 * (1.0 + zb.mag())) {
        const double v = c.f(zb.mid());
        res.out = p.add_variable(v, v, name);
        res.range = Interval(v, v);
        return res;
    }
    const std::vector<double> bp = breakpoints(zb.lo(), zb.hi(), segments, split_at_zero);
    const int k = static_cast<int>(bp.size()) - 1;
    res.out = p.add_variable(res.range.lo(), res.range.hi(), name);
    std::vector<SegmentEnvelope> env;
    for (int s = 0; s < k; ++s) {
        env.push_back(segment_envelope(c, bp[static_cast<std::size_t>(s)], bp[static_cast<std::size_t>(s + 1)]));
        const double g = segment_gap(env.back());
        res.gap = std::max(res.gap, g);
        const double fmin = std::min(c.f(env.back().a), c.f(env.back().b));
        res.relative_gap = std::max(res.relative_gap, fmin > 0.0 ? g / fmin : HUGE_VAL);
    }
    auto envelope_rows = [&](const SegmentEnvelope& s, int zv, int yv, int sel) {
        // sel < 0: no selector (single segment, selector fixed at 1)
        for (const Line& l : s.lower) {
            std::vector<Term> t{{yv, 1.0}, {zv, -l.slope}};
            if (sel >= 0) t.push_back({sel, -l.icpt});
            p.add_row(t, RowSense::GreaterEqual, sel >= 0 ? 0.0 : l.icpt, name + "_lo");
        }
        for (const Line& l : s.upper) {
            std::vector<Term> t{{yv, 1.0}, {zv, -l.slope}};
            if (sel >= 0) t.push_back({sel, -l.icpt});
            p.add_row(t, RowSense::LessEqual, sel >= 0 ? 0.0 : l.icpt, name + "_hi");
        }
    };
    if (k == 1) {
        envelope_rows(env.front(), z, res.out, -1);
        return res;
    }
    std::vector<Term> pick, zsum{{z, -1.0}}, ysum{{res.out, -1.0}};
    for (int s = 0; s < k; ++s) {
        const SegmentEnvelope& e = env[static_cast<std::size_t>(s)];
        const std::string tag = name + "_s" + std::to_string(s);
        const int sel = p.add_binary(tag);
        const int zs = p.add_variable(std::min(0.0, e.a), std::max(0.0, e.b), tag + "_z");
        const double fa = c.f(e.a), fb = c.f(e.b);
        const int ys = p.add_variable(std::min({0.0, fa, fb}), std::max({0.0, fa, fb}), tag + "_y");
        p.add_row({{zs, 1.0}, {sel, -e.a}}, RowSense::GreaterEqual, 0.0);
        p.add_row({{zs, 1.0}, {sel, -e.b}}, RowSense::LessEqual, 0.0);
        p.add_row({{ys, 1.0}, {sel, -std::min(fa, fb)}}, RowSense::GreaterEqual, 0.0);
        p.add_row({{ys, 1.0}, {sel, -std::max(fa, fb)}}, RowSense::LessEqual, 0.0);
        envelope_rows(e, zs, ys, sel);
        pick.push_back({sel, 1.0});
        zsum.push_back({zs, 1.0});
        ysum.push_back({ys, 1.0});
    }
    p.add_row(pick, RowSense::Equal, 1.0, name + "_pick");
    p.add_row(zsum, RowSense::Equal, 0.0);
    p.add_row(ysum, RowSense::Equal, 0.0);
    return res;
}

const Curve& sigmoid_curve() {
    static const Curve c{
        [](double t) { return sigmoid(t); },
        [](double t) {
            const double s = sigmoid(t);
            return s * (1.0 - s);
        },
        [](double, double b) { return b <= 0.0; },
    };
    return c;
}

Curve exp_curve(double shift) {
    return Curve{
        [shift](double t) { return std::exp(t - shift); },
        [shift](double t) { return std::exp(t - shift); },
        [](double, double) { return true; },
    };
}

// Affine row y = W_i x + b_i as a new variable bounded by its interval image.
std::vector<int> add_affine(Problem& p, const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const std::vector<int>& x,
                            const IntervalVector& xb, IntervalVector& out_bounds, const std::string& name) {
    out_bounds = affine_bounds(W, b, xb);
    std::vector<int> out;
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
        const Interval& bi = out_bounds[static_cast<std::size_t>(i)];
        const int y = p.add_variable(bi.lo(), bi.hi(), name + std::to_string(i));
        std::vector<Term> t{{y, 1.0}};
        for (Eigen::Index j = 0; j < W.cols(); ++j)
            if (W(i, j) != 0.0) t.push_back({x[static_cast<std::size_t>(j)], -W(i, j)});
        p.add_row(t, RowSense::Equal, b(i), name + std::to_string(i));
        out.push_back(y);
    }
    return out;
}

struct TreeLeaves {
    std::vector<int> leaf_ids;         // reachable leaves
    std::vector<std::vector<int>> of;  // per node: indices into leaf_ids in its subtree
};

// Leaves reachable under the feature bounds (left branch x <= t, right x > t).
TreeLeaves reachable_leaves(const Tree& t, const IntervalVector& xb) {
    TreeLeaves tl;
    tl.of.resize(t.nodes.size());
    std::vector<double> lo, hi;
    for (const Interval& b : xb) {
        lo.push_back(b.lo());
        hi.push_back(b.hi());
    }
    std::function<void(int)> walk = [&](int id) {
        const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
        auto& mine = tl.of[static_cast<std::size_t>(id)];
        if (n.is_leaf()) {
            mine.push_back(static_cast<int>(tl.leaf_ids.size()));
            tl.leaf_ids.push_back(id);
            return;
        }
        const auto f = static_cast<std::size_t>(n.feature);
        if (lo[f] <= n.threshold) {
            const double saved = hi[f];
            hi[f] = std::min(hi[f], n.threshold);
            walk(n.left);
            hi[f] = saved;
            const auto& sub = tl.of[static_cast<std::size_t>(n.left)];
            mine.insert(mine.end(), sub.begin(), sub.end());
        }
        if (hi[f] > n.threshold) {
            const double saved = lo[f];
            lo[f] = std::max(lo[f], n.threshold);
            walk(n.right);
            lo[f] = saved;
            const auto& sub = tl.of[static_cast<std::size_t>(n.right)];
            mine.insert(mine.end(), sub.begin(), sub.end());
        }
    };
    walk(0);
    return tl;
}

// Leaf binaries with aggregated big-M split rows; returns the binaries.
std::vector<int> encode_tree(Problem& p, const Tree& t, const std::vector<int>& x, const IntervalVector& xb,
                             const TreeLeaves& tl, const std::string& name) {
    std::vector<int> z;
    std::vector<Term> one;
    for (std::size_t l = 0; l < tl.leaf_ids.size(); ++l) {
        z.push_back(p.add_binary(name + "_leaf" + std::to_string(tl.leaf_ids[l])));
        one.push_back({z.back(), 1.0});
    }
    p.add_row(one, RowSense::Equal, 1.0, name + "_one");
    for (std::size_t id = 0; id < t.nodes.size(); ++id) {
        const TreeNode& n = t.nodes[id];
        if (n.is_leaf() || tl.of[id].empty()) continue;
        const auto f = static_cast<std::size_t>(n.feature);
        const double L = xb[f].lo(), U = xb[f].hi(), th = n.threshold;
        const auto& left = tl.of[static_cast<std::size_t>(n.left)];
        const auto& right = tl.of[static_cast<std::size_t>(n.right)];
        // On an integer feature x <= th and x > th are x <= floor(th) and
        // x >= floor(th) + 1, both exact.
        const bool integral = p.var(x[f]).integer;
        const double th_left = integral ? std::floor(th) : th;
        const double th_right = integral ? std::floor(th) + 1.0 : th;
        if (!left.empty() && U > th_left) {
            // x_f <= th + (U - th)(1 - sum_left z)
            std::vector<Term> r{{x[f], 1.0}};
            for (int l : left) r.push_back({z[static_cast<std::size_t>(l)], U - th_left});
            p.add_row(r, RowSense::LessEqual, U, name + "_n" + std::to_string(id) + "_L");
        }
        if (!right.empty() && L < th_right) {
            // x_f >= th + (L - th)(1 - sum_right z), modelling x_f > th
            std::vector<Term> r{{x[f], 1.0}};
            for (int l : right) r.push_back({z[static_cast<std::size_t>(l)], -(th_right - L)});
            p.add_row(r, RowSense::GreaterEqual, L, name + "_n" + std::to_string(id) + "_R", !integral);
        }
    }
    return z;
}

} // namespace

double sigmoid_envelope_gap(double lo, double hi, int segments) {
    if (hi - lo <= 0.0) return 0.0;
    const std::vector<double> bp = breakpoints(lo, hi, segments, true);
    double gap = 0.0;
    for (std::size_t s = 0; s + 1 < bp.size(); ++s)
        gap = std::max(gap, segment_gap(segment_envelope(sigmoid_curve(), bp[s], bp[s + 1])));
    return gap;
}

// ---------------------------------------------------------------------------
// Encodings

Encoding ModelArtifact::encode(Problem& p, const std::vector<int>& x, const IntervalVector& xb,
                               const EncodeOptions& opts) const {
    if (static_cast<int>(x.size()) != n_features_ || static_cast<int>(xb.size()) != n_features_)
        throw InvalidInput(std::string(to_string(kind_)) + ": feature variable count differs from n_features");
    for (const Interval& b : xb)
        if (!std::isfinite(b.lo()) || !std::isfinite(b.hi()))
            throw UnboundedInput("model encoding needs finite feature bounds");

    Encoding enc;
    enc.first_var = p.num_vars();
    enc.first_row = p.num_rows();
    const std::string tag = to_string(kind_);

    switch (kind_) {
    case ModelKind::LinearRegression: {
        enc.outputs = add_affine(p, W_, b_, x, xb, enc.bounds, "lin");
        break;
    }
    case ModelKind::LogisticRegression: {
        IntervalVector zb;
        const std::vector<int> z = add_affine(p, W_, b_, x, xb, zb, "logit");
        for (std::size_t i = 0; i < z.size(); ++i) {
            const auto r = add_envelope(p, z[i], zb[i], sigmoid_curve(), opts.segments, true, "sig" + std::to_string(i));
            enc.outputs.push_back(r.out);
            enc.bounds.push_back(r.range);
            enc.gap = std::max(enc.gap, r.gap);
        }
        enc.approximate = true;
        break;
    }
    case ModelKind::DecisionTree:
    case ModelKind::TreeEnsemble: {
        const double scale = average_ ? 1.0 / static_cast<double>(trees_.size()) : 1.0;
        std::vector<std::vector<Term>> rows(static_cast<std::size_t>(arity_));
        std::vector<double> lo(base_), hi(base_);
        for (std::size_t t = 0; t < trees_.size(); ++t) {
            const Tree& tree = trees_[t];
            const TreeLeaves tl = reachable_leaves(tree, xb);
            if (tl.leaf_ids.empty()) throw InfeasibleFeatureSet("no tree leaf is reachable");
            const auto z = encode_tree(p, tree, x, xb, tl, "t" + std::to_string(t));
            for (int i = 0; i < arity_; ++i) {
                double mn = HUGE_VAL, mx = -HUGE_VAL;
                for (std::size_t l = 0; l < z.size(); ++l) {
                    const double v = tree.nodes[static_cast<std::size_t>(tl.leaf_ids[l])].value[static_cast<std::size_t>(i)];
                    mn = std::min(mn, v);
                    mx = std::max(mx, v);
                    if (v != 0.0) rows[static_cast<std::size_t>(i)].push_back({z[l], -scale * v});
                }
                lo[static_cast<std::size_t>(i)] += scale * mn;
                hi[static_cast<std::size_t>(i)] += scale * mx;
            }
        }
        for (int i = 0; i < arity_; ++i) {
            const auto k = static_cast<std::size_t>(i);
            const int y = p.add_variable(lo[k], hi[k], tag + "_out" + std::to_string(i));
            auto& r = rows[k];
            r.push_back({y, 1.0});
            p.add_row(r, RowSense::Equal, base_[k], tag + "_out" + std::to_string(i));
            enc.outputs.push_back(y);
            enc.bounds.emplace_back(lo[k], hi[k]);
        }
        break;
    }
    case ModelKind::ReluNetwork:
    case ModelKind::ReluNetworkSoftmax: {
        std::vector<int> h = x;
        IntervalVector hb = xb;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& L = layers_[l];
            const std::string ln = "L" + std::to_string(l) + "_";
            IntervalVector zb;
            const std::vector<int> z = add_affine(p, L.W, L.b, h, hb, zb, ln + "z");
            if (L.activation == Activation::Relu) {
                std::vector<int> next;
                IntervalVector nb;
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const double lo = zb[i].lo(), hi = zb[i].hi();
                    const std::string nn = ln + "h" + std::to_string(i);
                    if (hi <= 0.0) {
                        next.push_back(p.add_variable(0.0, 0.0, nn));
                        nb.emplace_back(0.0, 0.0);
                    } else if (lo >= 0.0) {
                        next.push_back(z[i]);
                        nb.push_back(zb[i]);
                    } else {
                        const int y = p.add_variable(0.0, hi, nn);
                        const int d = p.add_binary(nn + "_on");
                        p.add_row({{y, 1.0}, {z[i], -1.0}}, RowSense::GreaterEqual, 0.0);
                        p.add_row({{y, 1.0}, {z[i], -1.0}, {d, -lo}}, RowSense::LessEqual, -lo);
                        p.add_row({{y, 1.0}, {d, -hi}}, RowSense::LessEqual, 0.0);
                        next.push_back(y);
                        nb.emplace_back(0.0, hi);
                    }
                }
                h = std::move(next);
                hb = std::move(nb);
            } else if (L.activation == Activation::Linear) {
                enc.outputs = z;
                enc.bounds = zb;
            } else if (L.activation == Activation::Sigmoid) {
                for (std::size_t i = 0; i < z.size(); ++i) {
                    const auto r = add_envelope(p, z[i], zb[i], sigmoid_curve(), opts.segments, true,
                                                "sig" + std::to_string(i));
                    enc.outputs.push_back(r.out);
                    enc.bounds.push_back(r.range);
                    enc.gap = std::max(enc.gap, r.gap);
                }
                enc.approximate = true;
            } else {
                // Softmax: e_i ~ exp(z_i - c) by envelopes, s = sum e, p_i s = e_i.
                const std::size_t k = z.size();
                double shift = -HUGE_VAL;
                for (const Interval& b : zb) shift = std::max(shift, b.hi());
                const Curve ec = exp_curve(shift);
                std::vector<int> e;
                std::vector<Term> ssum;
                double slo = 0.0, shi = 0.0, rel = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    const auto r = add_envelope(p, z[i], zb[i], ec, opts.segments, false, "exp" + std::to_string(i));
                    e.push_back(r.out);
                    ssum.push_back({r.out, -1.0});
                    slo += r.range.lo();
                    shi += r.range.hi();
                    rel = std::max(rel, r.relative_gap);
                }
                const int s = p.add_variable(slo, shi, "softmax_sum");
                ssum.push_back({s, 1.0});
                p.add_row(ssum, RowSense::Equal, 0.0, "softmax_sum");
                std::vector<Term> psum;
                for (std::size_t i = 0; i < k; ++i) {
                    // Exact softmax range from the logit bounds.
                    double rest_lo = 0.0, rest_hi = 0.0;
                    for (std::size_t j = 0; j < k; ++j) {
                        if (j == i) continue;
                        rest_lo += std::exp(zb[j].lo() - zb[i].hi());
                        rest_hi += std::exp(zb[j].hi() - zb[i].lo());
                    }
                    const Interval pb(1.0 / (1.0 + rest_hi), 1.0 / (1.0 + rest_lo));
                    const int pi = p.add_variable(pb.lo(), pb.hi(), "softmax_p" + std::to_string(i));
                    const int w = p.add_product(pi, s, "softmax_ps" + std::to_string(i));
                    p.add_row({{w, 1.0}, {e[i], -1.0}}, RowSense::Equal, 0.0);
                    psum.push_back({pi, 1.0});
                    enc.outputs.push_back(pi);
                    enc.bounds.push_back(pb);
                }
                p.add_row(psum, RowSense::Equal, 1.0, "softmax_norm");
                enc.gap = rel < 1.0 ? std::min(1.0, 2.0 * rel / (1.0 - rel)) : 1.0;
                enc.approximate = true;
            }
        }
        break;
    }
    case ModelKind::DecisionRules: {
        // Atom binaries: a = 1 iff the condition holds (closed at the boundary).
        std::vector<int> r_vars;
        std::vector<bool> r_const_false;
        for (std::size_t k = 0; k < rules_.size(); ++k) {
            const Rule& rule = rules_[k];
            const std::string rn = "rule" + std::to_string(k);
            std::vector<int> atoms;
            bool never = false;
            for (std::size_t a = 0; a < rule.atoms.size(); ++a) {
                const RuleAtom& at = rule.atoms[a];
                const auto f = static_cast<std::size_t>(at.feature);
                const double L = xb[f].lo(), U = xb[f].hi(), c = at.value;
                const bool le = at.op == CompareOp::Less || at.op == CompareOp::LessEqual;
                const bool strict = at.op == CompareOp::Less || at.op == CompareOp::Greater;
                bool always = false, impossible = false;
                if (le) {
                    always = strict ? U < c : U <= c;
                    impossible = strict ? L >= c : L > c;
                } else {
                    always = strict ? L > c : L >= c;
                    impossible = strict ? U <= c : U < c;
                }
                if (impossible) {
                    never = true;
                    continue;
                }
                if (always) continue;
                const int av = p.add_binary(rn + "_a" + std::to_string(a));
                if (le) {
                    p.add_row({{x[f], 1.0}, {av, U - c}}, RowSense::LessEqual, U, "", strict);
                    p.add_row({{x[f], 1.0}, {av, c - L}}, RowSense::GreaterEqual, c, "", !strict);
                } else {
                    p.add_row({{x[f], 1.0}, {av, -(c - L)}}, RowSense::GreaterEqual, L, "", strict);
                    p.add_row({{x[f], 1.0}, {av, -(U - c)}}, RowSense::LessEqual, c, "", !strict);
                }
                atoms.push_back(av);
            }
            const int r = p.add_variable(0.0, never ? 0.0 : 1.0, rn);
            if (!never) {
                std::vector<Term> lower{{r, 1.0}};
                for (int av : atoms) {
                    p.add_row({{r, 1.0}, {av, -1.0}}, RowSense::LessEqual, 0.0);
                    lower.push_back({av, -1.0});
                }
                p.add_row(lower, RowSense::GreaterEqual, 1.0 - static_cast<double>(atoms.size()));
            }
            r_vars.push_back(r);
        }
        // First match: s_k = r_k and not r_j for j < k; default takes the rest.
        std::vector<int> s_vars;
        std::vector<Term> all{};
        for (std::size_t k = 0; k < r_vars.size(); ++k) {
            const int s = p.add_variable(0.0, 1.0, "first" + std::to_string(k));
            p.add_row({{s, 1.0}, {r_vars[k], -1.0}}, RowSense::LessEqual, 0.0);
            std::vector<Term> ge{{s, 1.0}, {r_vars[k], -1.0}};
            for (std::size_t j = 0; j < k; ++j) {
                p.add_row({{s, 1.0}, {r_vars[j], 1.0}}, RowSense::LessEqual, 1.0);
                ge.push_back({r_vars[j], 1.0});
            }
            p.add_row(ge, RowSense::GreaterEqual, 0.0);
            s_vars.push_back(s);
            all.push_back({s, 1.0});
        }
        const int d = p.add_variable(0.0, 1.0, "default");
        all.push_back({d, 1.0});
        p.add_row(all, RowSense::Equal, 1.0, "rules_one");
        for (int i = 0; i < arity_; ++i) {
            const auto ik = static_cast<std::size_t>(i);
            double lo = default_[ik], hi = default_[ik];
            std::vector<Term> row{{d, -default_[ik]}};
            for (std::size_t k = 0; k < rules_.size(); ++k) {
                const double v = rules_[k].value[ik];
                if (p.var(r_vars[k]).hi > 0.0) {
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
                row.push_back({s_vars[k], -v});
            }
            const int y = p.add_variable(lo, hi, "rules_out" + std::to_string(i));
            row.push_back({y, 1.0});
            p.add_row(row, RowSense::Equal, 0.0, "rules_out" + std::to_string(i));
            enc.outputs.push_back(y);
            enc.bounds.emplace_back(lo, hi);
        }
        break;
    }
    }
    return enc;
}

OutputBounds ModelArtifact::output_bounds(const FeatureSet& fs, const EncodeOptions& eo,
                                          const opt::BranchAndBoundOptions& bo) const {
    if (fs.dim() != n_features_) throw InvalidInput("output_bounds: feature set dimension differs from n_features");
    OutputBounds ob;
    auto solve_one = [&](int output, opt::ObjSense sense) {
        Problem p;
        const FeatureVars fv = encode_feature_set(p, fs);
        const Encoding enc = encode(p, fv.x, fv.bounds, eo);
        p.set_objective({{enc.outputs[static_cast<std::size_t>(output)], 1.0}}, 0.0, sense);
        const opt::SolveResult r = opt::solve(p, bo);
        if (r.status == opt::Status::Infeasible) throw InfeasibleFeatureSet("feature set admits no point");
        return std::make_tuple(r.bound, enc.bounds[static_cast<std::size_t>(output)], enc.gap, enc.approximate);
    };
    std::vector<std::future<std::tuple<double, Interval, double, bool>>> lo_f, hi_f;
    for (int i = 0; i < arity_; ++i) {
        lo_f.push_back(std::async(std::launch::async, solve_one, i, opt::ObjSense::Minimize));
        hi_f.push_back(std::async(std::launch::async, solve_one, i, opt::ObjSense::Maximize));
    }
    for (int i = 0; i < arity_; ++i) {
        const auto [lo, enc_b, gap, approx] = lo_f[static_cast<std::size_t>(i)].get();
        const auto [hi, enc_b2, gap2, approx2] = hi_f[static_cast<std::size_t>(i)].get();
        double a = std::max(lo, enc_b.lo()), b = std::min(hi, enc_b.hi());
        if (is_probability()) {
            a = std::max(a, 0.0);
            b = std::min(b, 1.0);
        }
        if (a > b) a = b = 0.5 * (a + b);
        ob.bounds.emplace_back(a, b);
        ob.gap = std::max({ob.gap, gap, gap2});
        ob.approximate = ob.approximate || approx || approx2;
    }
    return ob;
}

// ---------------------------------------------------------------------------
// Rules grammar:  if <feat> <op> <const> [and <feat> <op> <const>]* then <v>[,<v>]*
//                 else <v>[,<v>]*

namespace {

std::vector<std::string> tokenize(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        if (s[i] == '<' || s[i] == '>' || s[i] == '=' || s[i] == '!') {
            std::size_t j = i + 1;
            if (j < s.size() && s[j] == '=') ++j;
            out.push_back(s.substr(i, j - i));
            i = j;
            continue;
        }
        if (s[i] == ',') {
            out.emplace_back(",");
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])) && s[j] != '<' && s[j] != '>' &&
               s[j] != '=' && s[j] != ',')
            ++j;
        out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

double parse_number(const std::string& tok, const std::string& line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw InvalidInput("rules: expected a number, got '" + tok + "' in: " + line);
    }
}

} // namespace

ParsedRules parse_rules(const std::vector<std::string>& lines, const std::vector<std::string>& names) {
    ParsedRules out;
    bool have_default = false;
    auto feature_index = [&](const std::string& tok, const std::string& line) {
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == tok) return static_cast<int>(k);
        if (tok.size() > 1 && tok[0] == 'x') {
            std::string digits = tok.substr(1);
            if (digits.front() == '[' && digits.back() == ']') digits = digits.substr(1, digits.size() - 2);
            if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) return std::stoi(digits);
        }
        throw InvalidInput("rules: unknown feature '" + tok + "' in: " + line);
    };
    auto values = [&](const std::vector<std::string>& t, std::size_t from, const std::string& line) {
        std::vector<double> v;
        for (std::size_t i = from; i < t.size(); ++i) {
            if (t[i] == ",") continue;
            v.push_back(parse_number(t[i], line));
        }
        if (v.empty()) throw InvalidInput("rules: missing value in: " + line);
        return v;
    };
    for (const std::string& line : lines) {
        const auto t = tokenize(line);
        if (t.empty()) continue;
        if (have_default) throw InvalidInput("rules: rule after the else clause: " + line);
        if (t[0] == "else") {
            out.default_value = values(t, 1, line);
            have_default = true;
            continue;
        }
        if (t[0] != "if") throw InvalidInput("rules: expected 'if' or 'else' in: " + line);
        Rule r;
        std::size_t i = 1;
        while (true) {
            if (i + 2 >= t.size()) throw InvalidInput("rules: incomplete condition in: " + line);
            RuleAtom a;
            a.feature = feature_index(t[i], line);
            const std::string& op = t[i + 1];
            if (op == "<") a.op = CompareOp::Less;
            else if (op == "<=") a.op = CompareOp::LessEqual;
            else if (op == ">") a.op = CompareOp::Greater;
            else if (op == ">=") a.op = CompareOp::GreaterEqual;
            else throw InvalidInput("rules: unknown operator '" + op + "' in: " + line);
            a.value = parse_number(t[i + 2], line);
            r.atoms.push_back(a);
            i += 3;
            if (i < t.size() && t[i] == "and") {
                ++i;
                continue;
            }
            break;
        }
        if (i >= t.size() || t[i] != "then") throw InvalidInput("rules: expected 'then' in: " + line);
        r.value = values(t, i + 1, line);
        out.rules.push_back(std::move(r));
    }
    if (!have_default) throw InvalidInput("rules: missing else clause");
    return out;
}

} // namespace mlchain
