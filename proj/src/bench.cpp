#include "mlchain/bench.hpp"

#include "mlchain/errors.hpp"
#include "mlchain/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

namespace mlchain::bench {

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
}

std::uint64_t instance_seed(std::uint64_t base, int k) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(k + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

Eigen::MatrixXd normal_matrix(Rng& rng, int rows, int cols, double scale = 1.0) {
    Eigen::MatrixXd M(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) M(i, j) = scale * rng.normal();
    return M;
}

Eigen::VectorXd design(Rng& rng, Dataset& d, int samples, int features) {
    d.X = normal_matrix(rng, samples, features);
    const Eigen::VectorXd beta = normal_matrix(rng, features, 1).col(0);
    return d.X * beta;
}

} // namespace

Dataset regression_data(Rng& rng, int samples, int features) {
    Dataset d;
    const Eigen::VectorXd mean = design(rng, d, samples, features);
    d.y = mean + normal_matrix(rng, samples, 1).col(0);
    return d;
}

Dataset classification_data(Rng& rng, int samples, int features) {
    Dataset d;
    const Eigen::VectorXd z = design(rng, d, samples, features);
    d.y.resize(samples);
    for (int i = 0; i < samples; ++i) d.y(i) = rng.uniform() < sigmoid(z(i)) ? 1.0 : 0.0;
    return d;
}

ModelArtifact fit_linear(const Dataset& d) {
    const Eigen::Index n = d.X.rows(), m = d.X.cols();
    Eigen::MatrixXd A(n, m + 1);
    A << d.X, Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd w = A.colPivHouseholderQr().solve(d.y);
    return ModelArtifact::linear_regression(w.head(m).transpose(), w.tail(1));
}

ModelArtifact fit_logistic(const Dataset& d, int iterations) {
    const Eigen::Index n = d.X.rows(), m = d.X.cols();
    Eigen::MatrixXd A(n, m + 1);
    A << d.X, Eigen::VectorXd::Ones(n);
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m + 1);
    const double ridge = 1e-6 * static_cast<double>(n);
    for (int it = 0; it < iterations; ++it) {
        const Eigen::VectorXd z = A * w;
        Eigen::VectorXd p(n), s(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            p(i) = sigmoid(z(i));
            s(i) = std::max(p(i) * (1.0 - p(i)), 1e-12);
        }
        const Eigen::VectorXd grad = A.transpose() * (p - d.y) + ridge * w;
        Eigen::MatrixXd H = A.transpose() * s.asDiagonal() * A;
        H.diagonal().array() += ridge;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        w -= step;
        if (step.cwiseAbs().maxCoeff() < 1e-10) break;
    }
    return ModelArtifact::logistic_regression(w.head(m).transpose(), w.tail(1));
}

namespace {

struct TreeBuilder {
    const Dataset& d;
    int max_depth;
    int min_leaf;
    Tree tree;

    int grow(std::vector<int>& idx, int depth) {
        const int node = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        double sum = 0.0;
        for (int i : idx) sum += d.y(i);
        const double n = static_cast<double>(idx.size());
        const double mean = sum / n;

        int best_f = -1;
        double best_th = 0.0, best_score = 0.0;
        if (depth < max_depth && static_cast<int>(idx.size()) >= 2 * min_leaf) {
            // Score of a split is sum_l^2/n_l + sum_r^2/n_r; the parent's
            // sum^2/n is the baseline.
            best_score = sum * sum / n + 1e-12 * std::max(1.0, sum * sum / n);
            std::vector<int> order = idx;
            for (int f = 0; f < d.X.cols(); ++f) {
                std::sort(order.begin(), order.end(), [&](int a, int b) {
                    const double xa = d.X(a, f), xb = d.X(b, f);
                    return xa < xb || (xa == xb && a < b);
                });
                double left = 0.0;
                for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                    left += d.y(order[k]);
                    const int nl = static_cast<int>(k + 1), nr = static_cast<int>(order.size()) - nl;
                    if (nl < min_leaf || nr < min_leaf) continue;
                    const double xa = d.X(order[k], f), xb = d.X(order[k + 1], f);
                    if (xa == xb) continue;
                    const double right = sum - left;
                    const double score = left * left / nl + right * right / nr;
                    if (score > best_score) {
                        best_score = score;
                        best_f = f;
                        best_th = 0.5 * (xa + xb);
                    }
                }
            }
        }
        if (best_f < 0) {
            tree.nodes[static_cast<std::size_t>(node)].value = {mean};
            return node;
        }
        std::vector<int> l, r;
        for (int i : idx) (d.X(i, best_f) <= best_th ? l : r).push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        const int left = grow(l, depth + 1);
        const int right = grow(r, depth + 1);
        TreeNode& t = tree.nodes[static_cast<std::size_t>(node)];
        t.feature = best_f;
        t.threshold = best_th;
        t.left = left;
        t.right = right;
        return node;
    }
};

} // namespace

ModelArtifact fit_tree(const Dataset& d, int depth, int min_leaf) {
    if (depth < 0) throw InvalidInput("tree depth must be non-negative");
    TreeBuilder b{d, depth, std::max(1, min_leaf), {}};
    std::vector<int> idx(static_cast<std::size_t>(d.X.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    b.grow(idx, 0);
    return ModelArtifact::decision_tree(std::move(b.tree), static_cast<int>(d.X.cols()));
}

ModelArtifact fit_mlp(const Dataset& d, const std::vector<int>& hidden, bool classifier, Rng& rng, int epochs,
                      int batch, double learning_rate) {
    const int n = static_cast<int>(d.X.rows());
    std::vector<int> sizes{static_cast<int>(d.X.cols())};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(1);
    const std::size_t L = sizes.size() - 1;

    std::vector<Eigen::MatrixXd> W(L), mW(L), vW(L);
    std::vector<Eigen::VectorXd> b(L), mb(L), vb(L);
    for (std::size_t l = 0; l < L; ++l) {
        W[l] = normal_matrix(rng, sizes[l + 1], sizes[l], std::sqrt(2.0 / sizes[l]));
        b[l] = Eigen::VectorXd::Zero(sizes[l + 1]);
        mW[l] = vW[l] = Eigen::MatrixXd::Zero(W[l].rows(), W[l].cols());
        mb[l] = vb[l] = Eigen::VectorXd::Zero(b[l].size());
    }
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    long step = 0;
    std::vector<Eigen::MatrixXd> act(L + 1);
    for (int e = 0; e < epochs; ++e) {
        for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(rng.below(i + 1))]);
        for (int start = 0; start < n; start += batch) {
            const int bs = std::min(batch, n - start);
            act[0].resize(sizes[0], bs);
            Eigen::RowVectorXd y(bs);
            for (int k = 0; k < bs; ++k) {
                const int i = perm[static_cast<std::size_t>(start + k)];
                act[0].col(k) = d.X.row(i).transpose();
                y(k) = d.y(i);
            }
            for (std::size_t l = 0; l < L; ++l) {
                act[l + 1] = (W[l] * act[l]).colwise() + b[l];
                if (l + 1 < L) act[l + 1] = act[l + 1].cwiseMax(0.0);
            }
            // Output delta: both MSE (halved) and sigmoid cross-entropy give
            // prediction minus target.
            Eigen::MatrixXd delta(1, bs);
            for (int k = 0; k < bs; ++k) {
                const double z = act[L](0, k);
                delta(0, k) = ((classifier ? sigmoid(z) : z) - y(k)) / bs;
            }
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t l = L; l-- > 0;) {
                const Eigen::MatrixXd gW = delta * act[l].transpose();
                const Eigen::VectorXd gb = delta.rowwise().sum();
                if (l > 0) {
                    delta = W[l].transpose() * delta;
                    delta = delta.cwiseProduct((act[l].array() > 0.0).cast<double>().matrix());
                }
                mW[l] = beta1 * mW[l] + (1 - beta1) * gW;
                vW[l] = beta2 * vW[l] + (1 - beta2) * gW.cwiseAbs2();
                mb[l] = beta1 * mb[l] + (1 - beta1) * gb;
                vb[l] = beta2 * vb[l] + (1 - beta2) * gb.cwiseAbs2();
                W[l].array() -= learning_rate * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + eps);
                b[l].array() -= learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
            }
        }
    }
    std::vector<Layer> layers;
    for (std::size_t l = 0; l < L; ++l) {
        const Activation a = l + 1 < L ? Activation::Relu : classifier ? Activation::Sigmoid : Activation::Linear;
        layers.push_back(Layer{W[l], b[l], a});
    }
    return ModelArtifact::relu_network(std::move(layers));
}

const char* to_string(Family f) {
    switch (f) {
    case Family::Linear: return "linear";
    case Family::Tree: return "tree";
    case Family::Mlp: return "mlp";
    }
    return "?";
}

Family family_from_string(const std::string& s) {
    for (Family f : {Family::Linear, Family::Tree, Family::Mlp})
        if (s == to_string(f)) return f;
    throw InvalidInput("unknown model family '" + s + "' (expected linear, tree or mlp)");
}

namespace {

std::shared_ptr<const ModelArtifact> train(const InstanceConfig& cfg, Family f, bool probability, Rng& rng) {
    const Dataset d = probability ? classification_data(rng, cfg.samples, cfg.features)
                                  : regression_data(rng, cfg.samples, cfg.features);
    switch (f) {
    case Family::Linear:
        return std::make_shared<const ModelArtifact>(probability ? fit_logistic(d) : fit_linear(d));
    case Family::Tree: return std::make_shared<const ModelArtifact>(fit_tree(d, cfg.tree_depth));
    case Family::Mlp: return std::make_shared<const ModelArtifact>(fit_mlp(d, cfg.hidden, probability, rng));
    }
    throw InvalidInput("unknown model family");
}

} // namespace

MarkovProcessSpec make_instance(const InstanceConfig& cfg, std::uint64_t seed) {
    const int n = cfg.states;
    if (n < 2) throw InvalidInput("bench: need at least 2 states");
    if (cfg.modeled_rows < 0 || cfg.modeled_rows > n - 1)
        throw InvalidInput("bench: modeled rows must lie in [0, " + std::to_string(n - 1) + "]");
    if (cfg.features < 1 || cfg.samples < 1) throw InvalidInput("bench: need features and samples");
    Rng rng(seed);

    MarkovProcessSpec s;
    s.n_states = n;
    s.m_features = cfg.features;
    s.discount = cfg.discount;
    s.query.kind = PropertyKind::TotalReward;
    s.query.sense = cfg.sense;
    s.models.push_back(train(cfg, cfg.reward, false, rng));
    s.models.push_back(train(cfg, cfg.initial, true, rng));
    for (int k = 0; k < cfg.modeled_rows; ++k) s.models.push_back(train(cfg, cfg.transition, true, rng));
    const int ell = 2 + cfg.modeled_rows;

    ParameterLink r{ParamTarget::Reward, Eigen::MatrixXd::Zero(n, ell), Eigen::VectorXd::Zero(n)};
    for (int i = 0; i < n; ++i) r.A(i, 0) = 1.0 / (i + 1);

    ParameterLink pi{ParamTarget::Pi, Eigen::MatrixXd::Zero(n, ell), Eigen::VectorXd::Zero(n)};
    pi.A(0, 1) = 1.0;
    pi.A(1, 1) = -1.0;
    pi.b(1) = 1.0;

    ParameterLink P{ParamTarget::P, Eigen::MatrixXd::Zero(n * n, ell), Eigen::VectorXd::Zero(n * n)};
    for (int i = 0; i + 1 < n; ++i) {
        const int stay = i * n + i, next = i * n + i + 1;
        if (i < cfg.modeled_rows) {
            P.A(stay, 2 + i) = 1.0;
            P.A(next, 2 + i) = -1.0;
            P.b(next) = 1.0;
        } else {
            P.b(stay) = 0.5;
            P.b(next) = 0.5;
        }
    }
    P.b(n * n - 1) = 1.0;
    s.links = {pi, P, r};
    s.absorbing = {n - 1};

    s.feature_set = FeatureSet::box(Eigen::VectorXd::Constant(cfg.features, -1.0),
                                    Eigen::VectorXd::Constant(cfg.features, 1.0));
    if (cfg.integer_grid) s.feature_set.integer.assign(static_cast<std::size_t>(cfg.features), true);
    return s;
}

void write_instance(const MarkovProcessSpec& spec, const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    io::Json j = io::spec_to_json(spec);
    io::Json refs = io::Json::array();
    for (std::size_t k = 0; k < spec.models.size(); ++k) {
        const std::string name = stem + "_model" + std::to_string(k) + ".json";
        io::save_model(*spec.models[k], (fs::path(dir) / name).string());
        refs.push_back(io::Json{{"path", name}});
    }
    j["models"] = refs;
    io::write_json(j, (fs::path(dir) / (stem + ".json")).string());
}

std::vector<Eigen::VectorXd> enumerate_grid(const FeatureSet& fs, std::size_t limit) {
    if (fs.boxes.size() != 1) throw InvalidInput("grid enumeration needs a single box");
    const auto& box = fs.boxes.front();
    const int m = static_cast<int>(box.lower.size());
    std::vector<int> lo(static_cast<std::size_t>(m)), hi(static_cast<std::size_t>(m));
    double count = 1.0;
    for (int j = 0; j < m; ++j) {
        if (!fs.is_integer(j)) throw InvalidInput("grid enumeration needs integer features");
        lo[static_cast<std::size_t>(j)] = static_cast<int>(std::ceil(box.lower(j)));
        hi[static_cast<std::size_t>(j)] = static_cast<int>(std::floor(box.upper(j)));
        count *= std::max(0, hi[static_cast<std::size_t>(j)] - lo[static_cast<std::size_t>(j)] + 1);
    }
    if (count > static_cast<double>(limit)) throw InvalidInput("grid has too many points");
    std::vector<Eigen::VectorXd> out;
    if (count == 0.0) return out;
    Eigen::VectorXd x(m);
    for (int j = 0; j < m; ++j) x(j) = lo[static_cast<std::size_t>(j)];
    while (true) {
        if (fs.contains(x)) out.push_back(x);
        int j = 0;
        while (j < m && x(j) >= hi[static_cast<std::size_t>(j)]) {
            x(j) = lo[static_cast<std::size_t>(j)];
            ++j;
        }
        if (j == m) break;
        x(j) += 1.0;
    }
    return out;
}

double value_at(const MarkovProcessSpec& spec, const Eigen::VectorXd& x) {
    std::vector<double> th;
    for (const auto& m : spec.models) {
        const Eigen::VectorXd o = m->evaluate(x);
        th.insert(th.end(), o.data(), o.data() + o.size());
    }
    const Eigen::Map<const Eigen::VectorXd> theta(th.data(), static_cast<Eigen::Index>(th.size()));
    auto image = [&](ParamTarget t) -> Eigen::VectorXd {
        const ParameterLink* l = spec.link(t);
        if (!l) throw InvalidInput(std::string("value_at: missing ") + to_string(t) + " link");
        return l->A.cols() == 0 ? l->b : Eigen::VectorXd(l->A * theta + l->b);
    };
    const int n = spec.n_states;
    const Eigen::VectorXd pi = image(ParamTarget::Pi);
    const Eigen::VectorXd pv = image(ParamTarget::P);
    Eigen::MatrixXd P(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) P(i, j) = pv(i * n + j);

    if (spec.query.kind == PropertyKind::TotalReward) {
        const Eigen::VectorXd r = image(ParamTarget::Reward);
        const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - spec.discount * P;
        return pi.dot(A.partialPivLu().solve(r));
    }
    const auto& T = spec.query.transient_set;
    const auto& S = spec.query.target_set;
    const int t = static_cast<int>(T.size());
    Eigen::MatrixXd Q(t, t);
    Eigen::VectorXd rhs(t), pt(t);
    for (int a = 0; a < t; ++a) {
        const int i = T[static_cast<std::size_t>(a)];
        pt(a) = pi(i);
        for (int b = 0; b < t; ++b) Q(a, b) = P(i, T[static_cast<std::size_t>(b)]);
        double into = 0.0;
        for (int s : S) into += P(i, s);
        rhs(a) = spec.query.kind == PropertyKind::Reachability ? into : 1.0;
    }
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(t, t) - Q;
    return pt.dot(A.partialPivLu().solve(rhs));
}

FidelityReport check_model(const ModelArtifact& m, const FeatureSet& fs, int samples, std::uint64_t seed,
                           const EncodeOptions& eo) {
    if (fs.dim() != m.n_features()) throw InvalidInput("check_model: feature box dimension differs from the model");
    if (fs.boxes.empty()) throw InvalidInput("check_model: empty feature set");
    const auto& box = fs.boxes.front();
    Rng rng(seed);
    FidelityReport rep;
    bool has_trees = false;
    for (const Tree& t : m.trees()) has_trees = has_trees || t.nodes.size() > 1;
    auto near_split = [&](const Eigen::VectorXd& x) {
        for (const Tree& t : m.trees())
            for (const TreeNode& n : t.nodes)
                if (!n.is_leaf() && std::abs(x(n.feature) - n.threshold) < 1e-6) return true;
        return false;
    };
    opt::BranchAndBoundOptions bo;
    bo.rel_gap = 1e-9;
    bo.abs_gap = 1e-9;
    while (rep.samples < samples) {
        Eigen::VectorXd x(box.lower.size());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            x(j) = box.lower(j) + (box.upper(j) - box.lower(j)) * rng.uniform();
            if (fs.is_integer(static_cast<int>(j))) x(j) = std::round(x(j));
        }
        if (has_trees && near_split(x)) {
            ++rep.near_threshold;
            if (rep.near_threshold > 100 * std::max(samples, 1)) throw InvalidInput("check_model: every sample lies on a split");
            continue;
        }
        const Eigen::VectorXd f = m.evaluate(x);
        for (int i = 0; i < m.arity(); ++i) {
            for (auto sense : {opt::ObjSense::Minimize, opt::ObjSense::Maximize}) {
                opt::Problem p;
                const FeatureVars fv = encode_feature_set(p, fs);
                const Encoding enc = m.encode(p, fv.x, fv.bounds, eo);
                rep.envelope_gap = std::max(rep.envelope_gap, enc.gap);
                rep.approximate = rep.approximate || enc.approximate;
                for (Eigen::Index j = 0; j < x.size(); ++j) {
                    opt::Variable& v = p.var(fv.x[static_cast<std::size_t>(j)]);
                    v.lo = v.hi = x(j);
                }
                p.set_objective({{enc.outputs[static_cast<std::size_t>(i)], 1.0}}, 0.0, sense);
                const opt::SolveResult r = opt::solve(p, bo);
                if (r.status != opt::Status::Optimal)
                    throw NumericalFailure(std::string("check_model: pinned encoding solve ended ") + opt::to_string(r.status));
                rep.max_deviation = std::max(rep.max_deviation, std::abs(r.objective - f(i)));
            }
        }
        ++rep.samples;
    }
    if (rep.approximate) rep.tolerance = rep.envelope_gap + 1e-9;
    else rep.tolerance = m.kind() == ModelKind::LinearRegression ? 1e-9 : 1e-6;
    return rep;
}

} // namespace mlchain::bench
