#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mlchain/errors.hpp"
#include "mlchain/models.hpp"

#include <random>

using namespace mlchain;

namespace {

std::mt19937_64& rng() {
    static std::mt19937_64 g(123);
    return g;
}

double unif(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng()); }

Eigen::VectorXd random_point(const FeatureSet& fs) {
    const auto& box = fs.boxes.front();
    Eigen::VectorXd x(box.lower.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) x(j) = unif(box.lower(j), box.upper(j));
    return x;
}

// Min and max of the encoded outputs with the features pinned at x.
std::pair<Eigen::VectorXd, Eigen::VectorXd> pinned(const ModelArtifact& m, const FeatureSet& fs,
                                                   const Eigen::VectorXd& x) {
    Eigen::VectorXd lo(m.arity()), hi(m.arity());
    for (int i = 0; i < m.arity(); ++i) {
        for (auto sense : {opt::ObjSense::Minimize, opt::ObjSense::Maximize}) {
            opt::Problem p;
            const FeatureVars fv = encode_feature_set(p, fs);
            const Encoding enc = m.encode(p, fv.x, fv.bounds);
            for (int j = 0; j < fs.dim(); ++j) {
                p.var(fv.x[static_cast<std::size_t>(j)]).lo = x(j);
                p.var(fv.x[static_cast<std::size_t>(j)]).hi = x(j);
            }
            p.set_objective({{enc.outputs[static_cast<std::size_t>(i)], 1.0}}, 0.0, sense);
            opt::BranchAndBoundOptions bo;
            bo.rel_gap = 1e-9;
            bo.abs_gap = 1e-9;
            const auto r = opt::solve(p, bo);
            REQUIRE(r.status == opt::Status::Optimal);
            (sense == opt::ObjSense::Minimize ? lo : hi)(i) = r.objective;
        }
    }
    return {lo, hi};
}

// Second evaluator for networks, written against the raw layer list.
Eigen::VectorXd hand_rolled(const std::vector<Layer>& layers, const Eigen::VectorXd& x) {
    std::vector<double> h(x.data(), x.data() + x.size());
    for (const Layer& L : layers) {
        std::vector<double> z(static_cast<std::size_t>(L.W.rows()), 0.0);
        for (Eigen::Index i = 0; i < L.W.rows(); ++i) {
            double s = L.b(i);
            for (Eigen::Index j = 0; j < L.W.cols(); ++j) s += L.W(i, j) * h[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(i)] = L.activation == Activation::Relu ? (s > 0 ? s : 0) : s;
        }
        if (L.activation == Activation::Sigmoid)
            for (double& v : z) v = 1.0 / (1.0 + std::exp(-v));
        if (L.activation == Activation::Softmax) {
            double mx = -1e300, sum = 0;
            for (double v : z) mx = std::max(mx, v);
            for (double& v : z) sum += (v = std::exp(v - mx));
            for (double& v : z) v /= sum;
        }
        h = z;
    }
    return Eigen::Map<Eigen::VectorXd>(h.data(), static_cast<Eigen::Index>(h.size()));
}

std::vector<Layer> random_net(int in, std::vector<int> hidden, int out, Activation last) {
    std::vector<Layer> layers;
    int prev = in;
    hidden.push_back(out);
    for (std::size_t l = 0; l < hidden.size(); ++l) {
        Layer L;
        L.W = Eigen::MatrixXd(hidden[l], prev);
        L.b = Eigen::VectorXd(hidden[l]);
        for (Eigen::Index i = 0; i < L.W.size(); ++i) L.W.data()[i] = unif(-1, 1) / std::sqrt(prev);
        for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b(i) = unif(-0.5, 0.5);
        L.activation = l + 1 == hidden.size() ? last : Activation::Relu;
        layers.push_back(L);
        prev = hidden[l];
    }
    return layers;
}

// Random complete tree of the given depth.
Tree random_tree(int depth, int m) {
    Tree t;
    std::function<int(int)> grow = [&](int d) {
        const int id = static_cast<int>(t.nodes.size());
        t.nodes.emplace_back();
        if (d == depth) {
            t.nodes[static_cast<std::size_t>(id)].value = {std::round(unif(-10, 10) * 100) / 100};
            return id;
        }
        const int f = static_cast<int>(unif(0, m));
        const double th = unif(-0.9, 0.9);
        const int l = grow(d + 1);
        const int r = grow(d + 1);
        auto& n = t.nodes[static_cast<std::size_t>(id)];
        n.feature = f;
        n.threshold = th;
        n.left = l;
        n.right = r;
        return id;
    };
    grow(0);
    return t;
}

bool near_threshold(const Tree& t, const Eigen::VectorXd& x, double eps) {
    for (const TreeNode& n : t.nodes)
        if (!n.is_leaf() && std::abs(x(n.feature) - n.threshold) < eps) return true;
    return false;
}

FeatureSet unit_box(int m) { return FeatureSet::box(-Eigen::VectorXd::Ones(m), Eigen::VectorXd::Ones(m)); }

} // namespace

TEST_CASE("evaluate examples") {
    Eigen::MatrixXd W(1, 2);
    W << 1, 2;
    const auto lin = ModelArtifact::linear_regression(W, Eigen::VectorXd::Constant(1, 0.5));
    CHECK(lin.evaluate(Eigen::Vector2d(1, 1))(0) == doctest::Approx(3.5));
    CHECK_THROWS_AS(lin.evaluate(Eigen::Vector3d(1, 1, 1)), InvalidInput);

    Tree t;
    t.nodes = {TreeNode{0, 0.0, 1, 2, {}}, TreeNode{-1, 0, -1, -1, {1.0}}, TreeNode{-1, 0, -1, -1, {2.0}}};
    const auto tree = ModelArtifact::decision_tree(t, 1);
    CHECK(tree.evaluate(Eigen::VectorXd::Constant(1, -1.0))(0) == 1.0);
    CHECK(tree.evaluate(Eigen::VectorXd::Constant(1, 0.0))(0) == 1.0);
    CHECK(tree.evaluate(Eigen::VectorXd::Constant(1, 0.1))(0) == 2.0);

    for (int trial = 0; trial < 20; ++trial) {
        const auto layers = random_net(4, {6, 5}, 3, trial % 2 ? Activation::Softmax : Activation::Linear);
        const auto net = ModelArtifact::relu_network(layers);
        const Eigen::VectorXd x = Eigen::VectorXd::Random(4);
        CHECK((net.evaluate(x) - hand_rolled(layers, x)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("malformed models are rejected") {
    Tree cyclic;
    cyclic.nodes = {TreeNode{0, 0.0, 0, 0, {}}};
    CHECK_THROWS_AS(ModelArtifact::decision_tree(cyclic, 1), InvalidInput);
    Tree bad_child;
    bad_child.nodes = {TreeNode{0, 0.0, 1, 5, {}}, TreeNode{-1, 0, -1, -1, {1.0}}};
    CHECK_THROWS_AS(ModelArtifact::decision_tree(bad_child, 1), InvalidInput);
    auto layers = random_net(3, {4}, 2, Activation::Linear);
    layers[1].W = Eigen::MatrixXd::Zero(2, 5);
    CHECK_THROWS_AS(ModelArtifact::relu_network(layers), InvalidInput);
}

TEST_CASE("linear encoding is exact and bounded by box vertices") {
    Eigen::MatrixXd W(1, 2);
    W << 1, -1;
    const auto m = ModelArtifact::linear_regression(W, Eigen::VectorXd::Zero(1));
    const auto ob = m.output_bounds(unit_box(2));
    CHECK(ob.bounds[0].lo() == doctest::Approx(-2.0));
    CHECK(ob.bounds[0].hi() == doctest::Approx(2.0));
    CHECK(ob.gap == 0.0);
    for (int s = 0; s < 20; ++s) {
        const Eigen::VectorXd x = random_point(unit_box(2));
        const auto [lo, hi] = pinned(m, unit_box(2), x);
        CHECK(std::abs(lo(0) - m.evaluate(x)(0)) <= 1e-9);
        CHECK(std::abs(hi(0) - m.evaluate(x)(0)) <= 1e-9);
    }
}

TEST_CASE("tree encoding matches the evaluator off thresholds") {
    const int m = 4;
    const Tree t = random_tree(8, m);
    const auto model = ModelArtifact::decision_tree(t, m);
    const FeatureSet fs = unit_box(m);
    int checked = 0;
    while (checked < 150) {
        const Eigen::VectorXd x = random_point(fs);
        if (near_threshold(t, x, 1e-9)) continue;
        const auto [lo, hi] = pinned(model, fs, x);
        const double v = model.evaluate(x)(0);
        REQUIRE(std::abs(lo(0) - v) <= 1e-6);
        REQUIRE(std::abs(hi(0) - v) <= 1e-6);
        ++checked;
    }
}

TEST_CASE("tree output bounds equal the reachable-leaf range") {
    for (int trial = 0; trial < 10; ++trial) {
        const int m = 3;
        const Tree t = random_tree(3, m);
        const auto model = ModelArtifact::decision_tree(t, m);
        Eigen::VectorXd lo(m), hi(m);
        for (int j = 0; j < m; ++j) {
            lo(j) = unif(-1, 0);
            hi(j) = lo(j) + unif(0, 1);
        }
        const FeatureSet fs = FeatureSet::box(lo, hi);
        // Oracle: a leaf is reachable when the box intersected with its path
        // conditions (left: x <= t, right: x > t) is nonempty.
        double mn = HUGE_VAL, mx = -HUGE_VAL;
        std::function<void(int, Eigen::VectorXd, Eigen::VectorXd, std::vector<bool>)> walk =
            [&](int id, Eigen::VectorXd l, Eigen::VectorXd h, std::vector<bool> open_lo) {
                for (int j = 0; j < m; ++j)
                    if (l(j) > h(j) || (open_lo[static_cast<std::size_t>(j)] && l(j) >= h(j))) return;
                const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
                if (n.is_leaf()) {
                    mn = std::min(mn, n.value[0]);
                    mx = std::max(mx, n.value[0]);
                    return;
                }
                Eigen::VectorXd h2 = h;
                h2(n.feature) = std::min(h(n.feature), n.threshold);
                walk(n.left, l, h2, open_lo);
                Eigen::VectorXd l2 = l;
                auto o2 = open_lo;
                if (n.threshold >= l(n.feature)) {
                    l2(n.feature) = n.threshold;
                    o2[static_cast<std::size_t>(n.feature)] = true;
                }
                walk(n.right, l2, h, o2);
            };
        walk(0, lo, hi, std::vector<bool>(m, false));
        const auto ob = model.output_bounds(fs);
        CHECK(ob.bounds[0].lo() == doctest::Approx(mn).epsilon(1e-9));
        CHECK(ob.bounds[0].hi() == doctest::Approx(mx).epsilon(1e-9));
    }
}

TEST_CASE("ensemble encoding") {
    const int m = 3;
    std::vector<Tree> trees;
    for (int k = 0; k < 4; ++k) trees.push_back(random_tree(3, m));
    const auto model = ModelArtifact::tree_ensemble(trees, m, true, {0.25});
    const FeatureSet fs = unit_box(m);
    int checked = 0;
    while (checked < 40) {
        const Eigen::VectorXd x = random_point(fs);
        bool near = false;
        for (const Tree& t : trees) near = near || near_threshold(t, x, 1e-9);
        if (near) continue;
        const auto [lo, hi] = pinned(model, fs, x);
        REQUIRE(std::abs(lo(0) - model.evaluate(x)(0)) <= 1e-6);
        REQUIRE(std::abs(hi(0) - model.evaluate(x)(0)) <= 1e-6);
        ++checked;
    }
    const auto ob = model.output_bounds(fs);
    for (int s = 0; s < 2000; ++s) CHECK(ob.bounds[0].contains(model.evaluate(random_point(fs))(0), 1e-9));
}

TEST_CASE("relu network encoding is exact") {
    const auto layers = random_net(3, {20, 20}, 2, Activation::Linear);
    const auto net = ModelArtifact::relu_network(layers);
    const FeatureSet fs = unit_box(3);
    for (int s = 0; s < 30; ++s) {
        const Eigen::VectorXd x = random_point(fs);
        const auto [lo, hi] = pinned(net, fs, x);
        const Eigen::VectorXd v = net.evaluate(x);
        REQUIRE((lo - v).cwiseAbs().maxCoeff() <= 1e-6);
        REQUIRE((hi - v).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("relu network output bounds contain sampled outputs") {
    const auto net = ModelArtifact::relu_network(random_net(3, {8, 8}, 2, Activation::Linear));
    const FeatureSet fs = unit_box(3);
    const auto ob = net.output_bounds(fs);
    for (int s = 0; s < 2000; ++s) {
        const Eigen::VectorXd v = net.evaluate(random_point(fs));
        for (int i = 0; i < 2; ++i) REQUIRE(ob.bounds[static_cast<std::size_t>(i)].contains(v(i), 1e-7));
    }
}

TEST_CASE("sigmoid envelope gap") {
    const double g = sigmoid_envelope_gap(-6, 6, 8);
    MESSAGE("sigmoid envelope gap over [-6, 6], K = 8: " << g);
    CHECK(g > 0.0);
    CHECK(g <= 0.05);
    CHECK(sigmoid_envelope_gap(-6, 6, 32) < g);
}

TEST_CASE("logistic encoding is sound within its gap") {
    Eigen::MatrixXd W(1, 3);
    W << 2.0, -1.5, 1.0;
    const auto m = ModelArtifact::logistic_regression(W, Eigen::VectorXd::Constant(1, 0.3));
    const FeatureSet fs = unit_box(3);
    const auto ob = m.output_bounds(fs);
    CHECK(ob.approximate);
    CHECK(ob.gap > 0.0);
    for (int s = 0; s < 10000; ++s) REQUIRE(ob.bounds[0].contains(m.evaluate(random_point(fs))(0), 1e-12));
    double worst = 0.0;
    for (int s = 0; s < 200; ++s) {
        const Eigen::VectorXd x = random_point(fs);
        const auto [lo, hi] = pinned(m, fs, x);
        const double v = m.evaluate(x)(0);
        REQUIRE(lo(0) <= v + 1e-9);
        REQUIRE(hi(0) >= v - 1e-9);
        worst = std::max({worst, v - lo(0), hi(0) - v});
    }
    CHECK(worst <= ob.gap + 1e-9);
}

TEST_CASE("softmax network encoding") {
    const auto layers = random_net(2, {5}, 3, Activation::Softmax);
    const auto net = ModelArtifact::relu_network(layers);
    CHECK(net.kind() == ModelKind::ReluNetworkSoftmax);
    const FeatureSet fs = unit_box(2);
    const auto ob = net.output_bounds(fs);
    for (int s = 0; s < 5000; ++s) {
        const Eigen::VectorXd v = net.evaluate(random_point(fs));
        CHECK(v.sum() == doctest::Approx(1.0));
        for (int i = 0; i < 3; ++i) REQUIRE(ob.bounds[static_cast<std::size_t>(i)].contains(v(i), 1e-9));
    }
    for (int s = 0; s < 5; ++s) {
        const Eigen::VectorXd x = random_point(fs);
        const auto [lo, hi] = pinned(net, fs, x);
        const Eigen::VectorXd v = net.evaluate(x);
        for (int i = 0; i < 3; ++i) {
            CHECK(lo(i) <= v(i) + 1e-6);
            CHECK(hi(i) >= v(i) - 1e-6);
            CHECK(hi(i) - lo(i) <= ob.gap + 1e-6);
        }
    }
}

TEST_CASE("decision rules") {
    const auto parsed = parse_rules({"if age >= 65 then 0.8", "else 0.2"}, {"age"});
    const auto m = ModelArtifact::decision_rules(parsed.rules, parsed.default_value, 1, {"age"});
    CHECK(m.evaluate(Eigen::VectorXd::Constant(1, 70))(0) == 0.8);
    CHECK(m.evaluate(Eigen::VectorXd::Constant(1, 30))(0) == 0.2);
    const FeatureSet fs = FeatureSet::box(Eigen::VectorXd::Constant(1, 0), Eigen::VectorXd::Constant(1, 100));
    const auto [lo, hi] = pinned(m, fs, Eigen::VectorXd::Constant(1, 70));
    CHECK(lo(0) == doctest::Approx(0.8));
    CHECK(hi(0) == doctest::Approx(0.8));

    const auto multi = parse_rules({"if x0 < 0 and x1 > 0.5 then 3", "if x1 <= 0 then 2", "if x0 >= -2 then 1", "else 0"},
                                   {});
    const auto m2 = ModelArtifact::decision_rules(multi.rules, multi.default_value, 2);
    const FeatureSet fs2 = unit_box(2);
    for (int s = 0; s < 40; ++s) {
        const Eigen::VectorXd x = random_point(fs2);
        const auto [l2, h2] = pinned(m2, fs2, x);
        REQUIRE(l2(0) == doctest::Approx(m2.evaluate(x)(0)));
        REQUIRE(h2(0) == doctest::Approx(m2.evaluate(x)(0)));
    }
    const auto ob = m2.output_bounds(fs2);
    CHECK(ob.bounds[0].lo() == doctest::Approx(1.0));  // rule 3 always fires on the box
    CHECK(ob.bounds[0].hi() == doctest::Approx(3.0));

    CHECK_THROWS_AS(parse_rules({"if x0 ~ 1 then 2", "else 0"}, {}), InvalidInput);
    CHECK_THROWS_AS(parse_rules({"if x0 < 1 then 2"}, {}), InvalidInput);
    CHECK_THROWS_AS(parse_rules({"if height < 1 then 2", "else 1"}, {"age"}), InvalidInput);
}

TEST_CASE("feature set unions, cuts and integrality") {
    FeatureSet fs;
    fs.boxes.push_back({Eigen::Vector2d(-2, -2), Eigen::Vector2d(-1, -1)});
    fs.boxes.push_back({Eigen::Vector2d(1, 1), Eigen::Vector2d(3, 2)});
    Eigen::MatrixXd W(1, 2);
    W << 1, 0;
    const auto m = ModelArtifact::linear_regression(W, Eigen::VectorXd::Zero(1));
    // max x0 - |x1| style check: restrict with a cut x0 + x1 <= 3.5
    fs.cuts.push_back({Eigen::Vector2d(1, 1), opt::RowSense::LessEqual, 3.5});
    auto ob = m.output_bounds(fs);
    CHECK(ob.bounds[0].lo() == doctest::Approx(-2.0));
    CHECK(ob.bounds[0].hi() == doctest::Approx(2.5));
    CHECK(fs.contains(Eigen::Vector2d(2, 1)));
    CHECK_FALSE(fs.contains(Eigen::Vector2d(0, 0)));

    // The gap between the boxes is excluded: min |x0| over the union is 1.
    opt::Problem p;
    const auto fv = encode_feature_set(p, fs);
    const int t = p.add_variable(0, 10);
    p.add_row({{t, 1}, {fv.x[0], -1}}, opt::RowSense::GreaterEqual, 0);
    p.add_row({{t, 1}, {fv.x[0], 1}}, opt::RowSense::GreaterEqual, 0);
    p.set_objective({{t, 1}}, 0, opt::ObjSense::Minimize);
    CHECK(opt::milp_solve(p).objective == doctest::Approx(1.0));

    FeatureSet ints = FeatureSet::box(Eigen::Vector2d(-1.5, 0), Eigen::Vector2d(1.5, 0));
    ints.integer = {true, false};
    ob = m.output_bounds(ints);
    CHECK(ob.bounds[0].lo() == doctest::Approx(-1.0));
    CHECK(ob.bounds[0].hi() == doctest::Approx(1.0));

    FeatureSet empty = FeatureSet::box(Eigen::Vector2d(1, 1), Eigen::Vector2d(2, 2));
    empty.cuts.push_back({Eigen::Vector2d(1, 1), opt::RowSense::LessEqual, 1.0});
    CHECK_THROWS_AS(m.output_bounds(empty), InfeasibleFeatureSet);
    FeatureSet inverted = FeatureSet::box(Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 2));
    CHECK_FALSE(inverted.validate().empty());
}
