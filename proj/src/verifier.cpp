#include "mlchain/verifier.hpp"

#include "mlchain/errors.hpp"
#include "mlchain/feature_set.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <map>

namespace mlchain {

const char* to_string(Stage s) {
    switch (s) {
    case Stage::Theta: return "theta";
    case Stage::Affine: return "affine";
    case Stage::VInit: return "v-init";
    case Stage::VTighten: return "v-tighten";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    for (Stage st : {Stage::Theta, Stage::Affine, Stage::VInit, Stage::VTighten})
        if (s == to_string(st)) return st;
    throw InvalidInput("unknown stage '" + s + "'");
}

const char* to_string(VerificationStatus s) {
    switch (s) {
    case VerificationStatus::Optimal: return "Optimal";
    case VerificationStatus::Feasible: return "Feasible";
    case VerificationStatus::Infeasible: return "Infeasible";
    case VerificationStatus::TimeLimit: return "TimeLimit";
    case VerificationStatus::GapLimit: return "GapLimit";
    case VerificationStatus::BoundsOnly: return "BoundsOnly";
    }
    return "?";
}

namespace {

using Clock = std::chrono::steady_clock;
using opt::RowSense;
using opt::Term;

constexpr double kInf = opt::kInf;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const Interval kUnit(0.0, 1.0);
const Interval kReal(-kInf, kInf);

/// The pi / M / c blocks of the program actually solved: (pi, P, r) for
/// total reward, (pi~, Q, R) for reachability, (pi~, Q, -) for hitting time.
struct ChainView {
    PropertyKind kind = PropertyKind::TotalReward;
    int n = 0;
    int s = 0;
    double lambda = 1.0;
    ParameterLink pi, M, c;
    /// Inequalities over the stacked vector [pi; vec(M); c].
    Eigen::MatrixXd C;
    Eigen::VectorXd d;

    int size() const { return static_cast<int>(pi.b.size() + M.b.size() + c.b.size()); }
};

ChainView make_view(const MarkovProcessSpec& spec) {
    ChainView cv;
    cv.kind = spec.query.kind;
    const int n = spec.n_states;
    std::vector<int> col_pi, col_p, col_r;  // original index -> stacked index, per target
    std::map<ParamTarget, std::vector<int>> cols;
    if (cv.kind == PropertyKind::TotalReward) {
        cv.n = n;
        cv.lambda = spec.discount;
        cv.pi = *spec.link(ParamTarget::Pi);
        cv.M = *spec.link(ParamTarget::P);
        cv.c = *spec.link(ParamTarget::Reward);
        for (int k = 0; k < n; ++k) cols[ParamTarget::Pi].push_back(k);
        for (int k = 0; k < n * n; ++k) cols[ParamTarget::P].push_back(n + k);
        for (int k = 0; k < n; ++k) cols[ParamTarget::Reward].push_back(n + n * n + k);
    } else {
        const TransientLinks tl = restrict_to_transient(spec);
        cv.n = static_cast<int>(spec.query.transient_set.size());
        cv.s = cv.kind == PropertyKind::Reachability ? static_cast<int>(spec.query.target_set.size()) : 0;
        cv.pi = tl.pi_tilde;
        cv.M = tl.Q;
        cv.c = tl.R;
        const int nt = cv.n, off_m = nt, off_c = nt + nt * nt;
        for (int k = 0; k < nt; ++k) cols[ParamTarget::PiTilde].push_back(k);
        for (int k = 0; k < nt * nt; ++k) cols[ParamTarget::Q].push_back(off_m + k);
        for (int k = 0; k < static_cast<int>(tl.R.b.size()); ++k) cols[ParamTarget::R].push_back(off_c + k);
        auto& cp = cols[ParamTarget::P];
        auto& cpi = cols[ParamTarget::Pi];
        cp.assign(static_cast<std::size_t>(n * n), -1);
        cpi.assign(static_cast<std::size_t>(n), -1);
        for (std::size_t k = 0; k < tl.q_source.size(); ++k)
            if (tl.q_source[k] >= 0) cp[static_cast<std::size_t>(tl.q_source[k])] = off_m + static_cast<int>(k);
        for (std::size_t k = 0; k < tl.r_source.size(); ++k)
            if (tl.r_source[k] >= 0) cp[static_cast<std::size_t>(tl.r_source[k])] = off_c + static_cast<int>(k);
        for (std::size_t k = 0; k < tl.pi_source.size(); ++k)
            if (tl.pi_source[k] >= 0) cpi[static_cast<std::size_t>(tl.pi_source[k])] = static_cast<int>(k);
    }
    Eigen::Index rows = 0;
    for (const auto& iq : spec.ineqs) rows += iq.C.rows();
    cv.C = Eigen::MatrixXd::Zero(rows, cv.size());
    cv.d.resize(rows);
    Eigen::Index r0 = 0;
    for (const auto& iq : spec.ineqs) {
        const auto it = cols.find(iq.target);
        for (Eigen::Index r = 0; r < iq.C.rows(); ++r, ++r0) {
            cv.d(r0) = iq.d(r);
            for (Eigen::Index k = 0; k < iq.C.cols(); ++k) {
                if (iq.C(r, k) == 0.0) continue;
                if (it == cols.end() || it->second[static_cast<std::size_t>(k)] < 0)
                    throw InvalidInput(std::string(to_string(iq.target)) +
                                       " inequality references an entry outside the program");
                cv.C(r0, it->second[static_cast<std::size_t>(k)]) += iq.C(r, k);
            }
        }
    }
    return cv;
}

Interval m_domain(const ChainView& cv, double eps) {
    return cv.kind == PropertyKind::TotalReward ? kUnit : Interval(0.0, 1.0 - eps);
}

Interval c_domain(const ChainView& cv) { return cv.kind == PropertyKind::TotalReward ? kReal : kUnit; }

IntervalVector clip(const IntervalVector& in, const Interval& dom, const char* what) {
    IntervalVector out;
    out.reserve(in.size());
    for (std::size_t k = 0; k < in.size(); ++k) {
        const auto iv = intersect(in[k], dom);
        if (!iv) throw InfeasibleEnclosure(std::string(what) + " entry " + std::to_string(k) + " has no admissible value",
                                           static_cast<int>(k));
        out.push_back(*iv);
    }
    return out;
}

Eigen::VectorXd apply_link(const ParameterLink& l, const Eigen::VectorXd& theta) {
    if (l.b.size() == 0) return Eigen::VectorXd(0);
    if (l.A.cols() == 0) return l.b;
    return l.A * theta + l.b;
}

Eigen::MatrixXd square(const Eigen::VectorXd& vec, int n) {
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) M(i, j) = vec(i * n + j);
    return M;
}

/// Right-hand side of the value system: r, R 1 or 1.
Eigen::VectorXd value_rhs(const ChainView& cv, const Eigen::VectorXd& c) {
    if (cv.kind == PropertyKind::TotalReward) return c;
    if (cv.kind == PropertyKind::HittingTime) return Eigen::VectorXd::Ones(cv.n);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(cv.n);
    for (int i = 0; i < cv.n; ++i)
        for (int k = 0; k < cv.s; ++k) out(i) += c(i * cv.s + k);
    return out;
}

// A parameter entry of the program: a variable, or a constant.
struct Entry {
    int var = -1;
    double value = 0.0;
    bool constant() const { return var < 0; }
};

struct Program {
    opt::Problem p;
    std::vector<int> x;
    std::vector<int> theta;
    std::vector<Entry> pi, M, c, v;
    double envelope_gap = 0.0;
    bool approximate = false;
    /// A row over constants only is violated.
    std::string infeasible;
};

// Linear expression sum coef * entry + constant with terms merged.
struct Expr {
    std::map<int, double> terms;
    double constant = 0.0;

    void add(const Entry& e, double coef) {
        if (e.constant()) constant += coef * e.value;
        else terms[e.var] += coef;
    }
    void add_var(int var, double coef) { terms[var] += coef; }
    std::vector<Term> list() const {
        std::vector<Term> out;
        for (const auto& [v, a] : terms)
            if (a != 0.0) out.push_back({v, a});
        return out;
    }
};

void add_expr_row(Program& prog, const Expr& e, RowSense sense, double rhs, const std::string& name) {
    const auto terms = e.list();
    const double r = rhs - e.constant;
    if (terms.empty()) {
        const double tol = 1e-9 * (1.0 + std::abs(r));
        const bool ok = sense == RowSense::LessEqual ? 0.0 <= r + tol
                        : sense == RowSense::GreaterEqual ? 0.0 >= r - tol
                                                          : std::abs(r) <= tol;
        if (!ok && prog.infeasible.empty()) prog.infeasible = "constant row " + name + " is violated";
        return;
    }
    prog.p.add_row(terms, sense, r, name);
}

struct BuildInput {
    const MarkovProcessSpec* spec;
    const ChainView* cv;
    const BoundsLedger* ledger;
    const VerifyOptions* opts;
    QuerySense sense;
    IntervalVector v_bounds;
    /// Values when v is known in closed form.
    std::optional<Eigen::VectorXd> v_fixed;
};

Program build_program(const BuildInput& in) {
    const MarkovProcessSpec& spec = *in.spec;
    const ChainView& cv = *in.cv;
    const BoundsLedger& L = *in.ledger;
    const VerifyOptions& o = *in.opts;
    Program prog;
    opt::Problem& p = prog.p;

    const FeatureVars fv = encode_feature_set(p, spec.feature_set, "x");
    prog.x = fv.x;
    for (std::size_t k = 0; k < spec.models.size(); ++k) {
        const Encoding enc = spec.models[k]->encode(p, fv.x, fv.bounds, o.encode);
        prog.theta.insert(prog.theta.end(), enc.outputs.begin(), enc.outputs.end());
        prog.envelope_gap = std::max(prog.envelope_gap, enc.gap);
        prog.approximate = prog.approximate || enc.approximate;
    }
    for (std::size_t j = 0; j < prog.theta.size() && j < L.theta.size(); ++j) {
        auto& var = p.var(prog.theta[j]);
        var.lo = std::max(var.lo, L.theta[j].lo());
        var.hi = std::min(var.hi, L.theta[j].hi());
        if (var.lo > var.hi) {
            // Bounds from separate solves may cross by round-off.
            if (var.lo - var.hi > 1e-7 * (1.0 + std::abs(var.lo))) prog.infeasible = "theta bounds are empty";
            var.hi = var.lo;
        }
    }

    auto entries = [&](const ParameterLink& link, const IntervalVector& bounds, const Interval& dom,
                       const std::string& name) {
        std::vector<Entry> out;
        for (Eigen::Index k = 0; k < link.b.size(); ++k) {
            const bool fixed = link.row_fixed(k);
            if (fixed && !o.force_bilinear) {
                out.push_back({-1, link.b(k)});
                continue;
            }
            Interval b = bounds.empty() ? dom : bounds[static_cast<std::size_t>(k)];
            if (auto iv = intersect(b, dom)) b = *iv;
            const std::string vn = name + std::to_string(k);
            if (fixed) {
                out.push_back({p.add_variable(link.b(k), link.b(k), vn), 0.0});
                continue;
            }
            const int var = p.add_variable(b.lo(), b.hi(), vn);
            std::vector<Term> row{{var, 1.0}};
            for (Eigen::Index j = 0; j < link.A.cols(); ++j)
                if (link.A(k, j) != 0.0) row.push_back({prog.theta[static_cast<std::size_t>(j)], -link.A(k, j)});
            p.add_row(row, RowSense::Equal, link.b(k), vn + "_link");
            out.push_back({var, 0.0});
        }
        return out;
    };
    const bool tr = cv.kind == PropertyKind::TotalReward;
    prog.pi = entries(cv.pi, L.pi, kUnit, tr ? "pi" : "pit");
    prog.M = entries(cv.M, L.M, m_domain(cv, L.epsilon), tr ? "P" : "Q");
    prog.c = entries(cv.c, L.c, c_domain(cv), tr ? "r" : "R");

    const int n = cv.n;
    for (int i = 0; i < n; ++i) {
        if (in.v_fixed) {
            prog.v.push_back({-1, (*in.v_fixed)(i)});
        } else {
            const Interval& b = in.v_bounds[static_cast<std::size_t>(i)];
            prog.v.push_back({p.add_variable(b.lo(), b.hi(), "v" + std::to_string(i)), 0.0});
        }
    }

    // Stochastic (or substochastic) structure.
    Expr pi_sum;
    for (const Entry& e : prog.pi) pi_sum.add(e, 1.0);
    add_expr_row(prog, pi_sum, tr ? RowSense::Equal : RowSense::LessEqual, 1.0, "pi_sum");
    for (int i = 0; i < n; ++i) {
        Expr m_row, c_row;
        for (int j = 0; j < n; ++j) m_row.add(prog.M[static_cast<std::size_t>(i * n + j)], 1.0);
        const std::string is = std::to_string(i);
        if (tr) {
            add_expr_row(prog, m_row, RowSense::Equal, 1.0, "P_row" + is);
            continue;
        }
        add_expr_row(prog, m_row, RowSense::LessEqual, 1.0 - L.epsilon, "Q_row" + is);
        if (cv.kind == PropertyKind::Reachability) {
            for (int k = 0; k < cv.s; ++k) c_row.add(prog.c[static_cast<std::size_t>(i * cv.s + k)], 1.0);
            add_expr_row(prog, c_row, RowSense::LessEqual, 1.0, "R_row" + is);
            Expr both = m_row;
            for (const auto& [v, a] : c_row.terms) both.terms[v] += a;
            both.constant += c_row.constant;
            add_expr_row(prog, both, RowSense::LessEqual, 1.0, "QR_row" + is);
        }
    }

    // C [pi; M; c] <= d
    std::vector<const Entry*> stacked;
    for (const auto* blk : {&prog.pi, &prog.M, &prog.c})
        for (const Entry& e : *blk) stacked.push_back(&e);
    for (Eigen::Index r = 0; r < cv.C.rows(); ++r) {
        Expr e;
        for (Eigen::Index k = 0; k < cv.C.cols(); ++k)
            if (cv.C(r, k) != 0.0) e.add(*stacked[static_cast<std::size_t>(k)], cv.C(r, k));
        add_expr_row(prog, e, RowSense::LessEqual, cv.d(r), "ineq" + std::to_string(r));
    }

    // v_i - lambda sum_j M_ij v_j - c_i = 0
    if (!in.v_fixed) {
        for (int i = 0; i < n; ++i) {
            Expr e;
            e.add(prog.v[static_cast<std::size_t>(i)], 1.0);
            for (int j = 0; j < n; ++j) {
                const Entry& m = prog.M[static_cast<std::size_t>(i * n + j)];
                const Entry& vj = prog.v[static_cast<std::size_t>(j)];
                if (m.constant()) {
                    if (m.value != 0.0) e.add(vj, -cv.lambda * m.value);
                } else {
                    const int w = p.add_product(m.var, vj.var, "w" + std::to_string(i) + "_" + std::to_string(j));
                    e.add_var(w, -cv.lambda);
                }
            }
            if (cv.kind == PropertyKind::TotalReward) e.add(prog.c[static_cast<std::size_t>(i)], -1.0);
            else if (cv.kind == PropertyKind::Reachability)
                for (int k = 0; k < cv.s; ++k) e.add(prog.c[static_cast<std::size_t>(i * cv.s + k)], -1.0);
            else e.constant -= 1.0;
            add_expr_row(prog, e, RowSense::Equal, 0.0, "bellman" + std::to_string(i));
        }
    }

    // pi^T v
    Expr obj;
    for (int i = 0; i < n; ++i) {
        const Entry& a = prog.pi[static_cast<std::size_t>(i)];
        const Entry& b = prog.v[static_cast<std::size_t>(i)];
        if (a.constant()) {
            if (a.value != 0.0) obj.add(b, a.value);
        } else if (b.constant()) {
            obj.add(a, b.value);
        } else {
            obj.add_var(p.add_product(a.var, b.var, "z" + std::to_string(i)), 1.0);
        }
    }
    if (in.sense == QuerySense::Feasibility) {
        if (std::isfinite(spec.query.w_min)) add_expr_row(prog, obj, RowSense::GreaterEqual, spec.query.w_min, "w_min");
        if (std::isfinite(spec.query.w_max)) add_expr_row(prog, obj, RowSense::LessEqual, spec.query.w_max, "w_max");
        p.set_objective({}, 0.0, opt::ObjSense::Minimize);
    } else {
        p.set_objective(obj.list(), obj.constant,
                        in.sense == QuerySense::Max ? opt::ObjSense::Maximize : opt::ObjSense::Minimize);
    }
    return prog;
}

Eigen::VectorXd evaluate_theta(const MarkovProcessSpec& spec, const Eigen::VectorXd& x) {
    Eigen::VectorXd theta(spec.theta_dim());
    Eigen::Index off = 0;
    for (const auto& m : spec.models) {
        const Eigen::VectorXd y = m->evaluate(x);
        theta.segment(off, y.size()) = y;
        off += y.size();
    }
    return theta;
}

Witness evaluate_view(const MarkovProcessSpec& spec, const ChainView& cv, const Eigen::VectorXd& x, double eps) {
    Witness w;
    w.x = x;
    w.theta = evaluate_theta(spec, x);
    w.pi = apply_link(cv.pi, w.theta);
    const Eigen::VectorXd m = apply_link(cv.M, w.theta);
    const Eigen::VectorXd c = apply_link(cv.c, w.theta);
    const int n = cv.n;
    w.M = square(m, n);
    w.c = value_rhs(cv, c);
    constexpr double tol = 1e-6;
    auto fail = [](const std::string& what) { throw InvalidInput("parameters at x: " + what); };
    const bool tr = cv.kind == PropertyKind::TotalReward;
    if ((w.pi.array() < -tol).any() || (w.pi.array() > 1.0 + tol).any()) fail("pi outside [0, 1]");
    if ((m.array() < -tol).any() || (m.array() > 1.0 + tol).any()) fail("transition entry outside [0, 1]");
    if (tr) {
        if (std::abs(w.pi.sum() - 1.0) > tol) fail("pi does not sum to 1");
        for (int i = 0; i < n; ++i)
            if (std::abs(w.M.row(i).sum() - 1.0) > tol) fail("P row " + std::to_string(i) + " does not sum to 1");
    } else {
        if (w.pi.sum() > 1.0 + tol) fail("pi~ sums above 1");
        if ((c.array() < -tol).any() || (c.array() > 1.0 + tol).any()) fail("R entry outside [0, 1]");
        for (int i = 0; i < n; ++i) {
            if (w.M.row(i).sum() > 1.0 - eps + tol) fail("Q row " + std::to_string(i) + " is not strictly substochastic");
            if (cv.kind == PropertyKind::Reachability && w.M.row(i).sum() + w.c(i) > 1.0 + tol)
                fail("Q and R row " + std::to_string(i) + " sum above 1");
        }
    }
    if (cv.C.rows() > 0) {
        Eigen::VectorXd stacked(cv.size());
        stacked << w.pi, m, c;
        const Eigen::VectorXd lhs = cv.C * stacked;
        for (Eigen::Index r = 0; r < lhs.size(); ++r)
            if (lhs(r) > cv.d(r) + tol * (1.0 + std::abs(cv.d(r)))) fail("inequality row " + std::to_string(r));
    }
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - cv.lambda * w.M;
    w.v = A.partialPivLu().solve(w.c);
    w.value = w.pi.dot(w.v);
    return w;
}

} // namespace

IntervalVector theta_bounds(const MarkovProcessSpec& spec, const EncodeOptions& eo,
                            const opt::BranchAndBoundOptions& bo, double* envelope_gap) {
    const int ell = spec.theta_dim();
    std::vector<bool> used(static_cast<std::size_t>(ell), false);
    for (const auto& l : spec.links)
        for (Eigen::Index j = 0; j < l.A.cols() && j < ell; ++j)
            if ((l.A.col(j).array() != 0.0).any()) used[static_cast<std::size_t>(j)] = true;

    IntervalVector theta(static_cast<std::size_t>(ell), kReal);
    std::vector<std::pair<int, std::future<OutputBounds>>> jobs;
    int off = 0;
    for (const auto& m : spec.models) {
        bool any = false;
        for (int k = 0; k < m->arity(); ++k) any = any || used[static_cast<std::size_t>(off + k)];
        if (any)
            jobs.emplace_back(off, std::async(std::launch::async,
                                              [&spec, &m, &eo, &bo] { return m->output_bounds(spec.feature_set, eo, bo); }));
        off += m->arity();
    }
    double gap = 0.0;
    for (auto& [o, fut] : jobs) {
        const OutputBounds ob = fut.get();
        for (std::size_t k = 0; k < ob.bounds.size(); ++k) theta[static_cast<std::size_t>(o) + k] = ob.bounds[k];
        gap = std::max(gap, ob.gap);
    }
    if (envelope_gap) *envelope_gap = gap;
    return theta;
}

IntervalVector propagate_affine(const IntervalVector& theta, const ParameterLink& link) {
    IntervalVector out;
    out.reserve(static_cast<std::size_t>(link.b.size()));
    for (Eigen::Index k = 0; k < link.b.size(); ++k) {
        Interval y = Interval::point(link.b(k));
        for (Eigen::Index j = 0; j < link.A.cols(); ++j)
            if (link.A(k, j) != 0.0) y = y + link.A(k, j) * theta[static_cast<std::size_t>(j)];
        out.push_back(y);
    }
    if (link.target == ParamTarget::Reward) return out;
    return clip(out, kUnit, to_string(link.target));
}

IntervalVector initial_v_bounds(const MarkovProcessSpec& spec, const BoundsLedger& ledger) {
    const auto& q = spec.query;
    if (q.kind == PropertyKind::TotalReward) {
        const double lambda = spec.discount;
        if (!(lambda > 0.0 && lambda < 1.0)) throw InvalidParameter("discount must lie in (0, 1)");
        const double gamma = 1.0 / (1.0 - lambda);
        double lo = kInf, hi = -kInf;
        for (const Interval& r : ledger.c) {
            lo = std::min(lo, r.lo());
            hi = std::max(hi, r.hi());
        }
        return IntervalVector(static_cast<std::size_t>(spec.n_states), Interval(gamma * lo, gamma * hi));
    }
    const auto n = q.transient_set.size();
    const double inv = 1.0 / ledger.epsilon;
    if (q.kind == PropertyKind::HittingTime) return IntervalVector(n, Interval(0.0, inv));
    const std::size_t s = q.target_set.size();
    double row_max = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < s; ++k) sum += ledger.c[i * s + k].hi();
        row_max = std::max(row_max, sum);
    }
    return IntervalVector(n, Interval(0.0, std::min(1.0, inv * row_max)));
}

TightenedBounds tighten_v_bounds(const MarkovProcessSpec& spec, const BoundsLedger& ledger) {
    const bool tr = spec.query.kind == PropertyKind::TotalReward;
    const double lambda = tr ? spec.discount : 1.0;
    const std::size_t n = ledger.v_init.size();
    IntervalMatrix A(n, n);
    Eigen::MatrixXd m_max(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const Interval& m = ledger.M[i * n + j];
            A(i, j) = Interval::point(i == j ? 1.0 : 0.0) - lambda * m;
            m_max(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m.hi();
        }
    const double floor = tr ? 1.0 - lambda : ledger.epsilon;
    for (std::size_t i = 0; i < n; ++i)
        if (A(i, i).lo() < floor * (1.0 - 1e-12))
            throw InvalidParameter("diagonal of the value system falls below " + std::to_string(floor));

    IntervalVector b;
    if (tr) {
        b = ledger.c;
    } else if (spec.query.kind == PropertyKind::HittingTime) {
        b.assign(n, Interval::point(1.0));
    } else {
        const std::size_t s = spec.query.target_set.size();
        for (std::size_t i = 0; i < n; ++i) {
            Interval sum = Interval::point(0.0);
            for (std::size_t k = 0; k < s; ++k) sum = sum + ledger.c[i * s + k];
            b.push_back(intersect(sum, kUnit).value_or(sum));
        }
    }

    TightenedBounds out;
    out.v = gauss_seidel_solve(A, b, ledger.v_init, {}, out.sweeps);
    try {
        out.spectral_radius = spectral_radius(m_max);
        out.hull_certified = is_interval_m_matrix(m_max, lambda);
    } catch (const NonConvergence& e) {
        out.spectral_radius = e.estimate();
        out.hull_certified = false;
    }
    return out;
}

Witness evaluate_at(const MarkovProcessSpec& spec, const Eigen::VectorXd& x, double epsilon) {
    return evaluate_view(spec, make_view(spec), x, epsilon);
}

VerificationResult verify(const MarkovProcessSpec& spec, const VerifyOptions& o) {
    const auto t_start = Clock::now();
    if (const auto issues = validate(spec); !issues.empty()) {
        std::string msg = "invalid specification:";
        for (const auto& s : issues) msg += "\n  " + s;
        throw InvalidInput(msg);
    }
    VerificationResult res;
    res.query = spec.query;
    if (o.sense) res.query.sense = *o.sense;
    const QuerySense sense = res.query.sense;
    res.problem_class = classify_problem(spec);
    const ChainView cv = make_view(spec);

    BoundsLedger& L = res.ledger;
    L.epsilon = o.epsilon;
    L.theta.assign(static_cast<std::size_t>(spec.theta_dim()), kReal);
    L.pi.assign(static_cast<std::size_t>(cv.pi.b.size()), kUnit);
    L.M.assign(static_cast<std::size_t>(cv.M.b.size()), m_domain(cv, o.epsilon));
    L.c.assign(static_cast<std::size_t>(cv.c.b.size()), c_domain(cv));
    L.gamma = cv.kind == PropertyKind::TotalReward ? 1.0 / (1.0 - spec.discount) : 1.0 / o.epsilon;

    auto enabled = [&](Stage s) { return !o.ablate || s < *o.ablate; };
    auto remaining = [&] { return o.time_limit - since(t_start); };
    auto finish = [&](VerificationStatus st, const std::string& msg) {
        res.status = st;
        res.message = msg;
        L.timings.total = since(t_start);
        return res;
    };

    opt::BranchAndBoundOptions theta_opts;
    theta_opts.time_limit = o.time_limit;
    try {
        if (enabled(Stage::Theta)) {
            const auto t0 = Clock::now();
            L.theta = theta_bounds(spec, o.encode, theta_opts, &res.envelope_gap);
            L.timings.theta = since(t0);
            L.completed.push_back(Stage::Theta);
        }
        if (enabled(Stage::Affine)) {
            const auto t0 = Clock::now();
            L.pi = propagate_affine(L.theta, cv.pi);
            L.M = clip(propagate_affine(L.theta, cv.M), m_domain(cv, o.epsilon), "M");
            L.c = propagate_affine(L.theta, cv.c);
            L.timings.affine = since(t0);
            L.completed.push_back(Stage::Affine);
        }
        if (enabled(Stage::VInit)) {
            const auto t0 = Clock::now();
            L.v_init = initial_v_bounds(spec, L);
            L.v = L.v_init;
            L.timings.v_init = since(t0);
            L.completed.push_back(Stage::VInit);
        }
        if (enabled(Stage::VTighten)) {
            const auto t0 = Clock::now();
            const TightenedBounds tb = tighten_v_bounds(spec, L);
            L.v = tb.v;
            L.hull_certified = tb.hull_certified;
            L.spectral_radius = tb.spectral_radius;
            L.gauss_seidel_sweeps = tb.sweeps;
            L.timings.v_tighten = since(t0);
            L.completed.push_back(Stage::VTighten);
        }
    } catch (const InfeasibleFeatureSet& e) {
        return finish(VerificationStatus::Infeasible, e.what());
    } catch (const InfeasibleEnclosure& e) {
        return finish(VerificationStatus::Infeasible, e.what());
    }
    if (o.bounds_only) return finish(VerificationStatus::BoundsOnly, "");

    BuildInput in{&spec, &cv, &L, &o, sense, {}, std::nullopt};
    if (!L.v.empty()) {
        in.v_bounds = L.v;
    } else {
        in.v_bounds.assign(static_cast<std::size_t>(cv.n), Interval(-o.v_fallback, o.v_fallback));
    }
    if (res.problem_class == ProblemClass::ValueClosedForm && !o.force_bilinear) {
        const Eigen::MatrixXd M = square(cv.M.b, cv.n);
        if (cv.kind != PropertyKind::TotalReward)
            for (int i = 0; i < cv.n; ++i)
                if (M.row(i).sum() > 1.0 - o.epsilon + 1e-12)
                    return finish(VerificationStatus::Infeasible,
                                  "Q row " + std::to_string(i) + " is not strictly substochastic");
        const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(cv.n, cv.n) - cv.lambda * M;
        in.v_fixed = A.partialPivLu().solve(value_rhs(cv, cv.c.b));
    }

    const auto t_solve = Clock::now();
    Program prog = build_program(in);
    res.outer_bound = prog.approximate;
    res.envelope_gap = std::max(res.envelope_gap, prog.envelope_gap);
    if (!o.dump_lp_path.empty()) {
        std::ofstream f(o.dump_lp_path);
        f << prog.p.to_lp_string();
    }
    if (!prog.infeasible.empty()) return finish(VerificationStatus::Infeasible, prog.infeasible);

    opt::BranchAndBoundOptions bb = opt::defaults_bilinear();
    bb.rel_gap = o.rel_gap;
    bb.abs_gap = o.abs_gap;
    bb.time_limit = std::max(0.0, remaining());
    const opt::SolveResult sr = opt::solve(prog.p, bb);
    L.timings.solve = since(t_solve);
    res.stats = sr.stats;
    res.bound = sr.bound;
    res.gap = sr.gap;

    if (sr.status == opt::Status::Infeasible) return finish(VerificationStatus::Infeasible, "");
    if (sr.status == opt::Status::Unbounded)
        throw InternalConsistencyError("final program reported unbounded; value bounds should prevent this");
    if (!sr.has_solution()) {
        return finish(sr.status == opt::Status::TimeLimit ? VerificationStatus::TimeLimit : VerificationStatus::GapLimit,
                      "no incumbent");
    }
    res.value = sense == QuerySense::Feasibility ? std::numeric_limits<double>::quiet_NaN() : sr.objective;

    // Re-verify the witness by direct evaluation.
    Eigen::VectorXd x(static_cast<Eigen::Index>(prog.x.size()));
    for (std::size_t j = 0; j < prog.x.size(); ++j) {
        double xj = sr.x[static_cast<std::size_t>(prog.x[j])];
        if (spec.feature_set.is_integer(static_cast<int>(j))) xj = std::round(xj);
        x(static_cast<Eigen::Index>(j)) = xj;
    }
    Eigen::VectorXd theta_sol(static_cast<Eigen::Index>(prog.theta.size()));
    for (std::size_t j = 0; j < prog.theta.size(); ++j)
        theta_sol(static_cast<Eigen::Index>(j)) = sr.x[static_cast<std::size_t>(prog.theta[j])];
    const double theta_tol = (prog.approximate ? prog.envelope_gap : 0.0) + 1e-6;
    auto theta_dev = [&](const Eigen::VectorXd& xx) {
        const Eigen::VectorXd t = evaluate_theta(spec, xx);
        double dev = 0.0;
        for (Eigen::Index j = 0; j < t.size(); ++j)
            dev = std::max(dev, std::abs(t(j) - theta_sol(j)) / (1.0 + std::abs(theta_sol(j))));
        return dev;
    };
    bool repaired = false;
    if (theta_dev(x) > theta_tol) {
        // The encoding closes strict conditions (x > t). Move features sitting
        // on such a boundary to its strict side.
        std::map<int, int> feature_of;
        for (std::size_t j = 0; j < prog.x.size(); ++j) feature_of[prog.x[j]] = static_cast<int>(j);
        Eigen::VectorXd moved = x;
        for (const opt::Row& row : prog.p.rows()) {
            if (!row.strict) continue;
            double lhs = 0.0;
            for (const Term& t : row.terms) lhs += t.coef * sr.x[static_cast<std::size_t>(t.var)];
            if (std::abs(lhs - row.rhs) > 1e-7 * (1.0 + std::abs(row.rhs))) continue;
            for (const Term& t : row.terms) {
                const auto it = feature_of.find(t.var);
                if (it == feature_of.end() || spec.feature_set.is_integer(it->second)) continue;
                const double dir = (row.sense == RowSense::GreaterEqual ? 1.0 : -1.0) * (t.coef > 0 ? 1.0 : -1.0);
                double& xf = moved(it->second);
                xf = x(it->second) + dir * 1e-9 * std::max(1.0, std::abs(x(it->second)));
            }
        }
        if (theta_dev(moved) <= theta_tol && spec.feature_set.contains(moved, 1e-7)) {
            x = moved;
            repaired = true;
        } else {
            throw InternalConsistencyError("witness: model outputs at x* differ from the solver's (max relative deviation " +
                                           std::to_string(theta_dev(x)) + ")");
        }
    }
    if (!spec.feature_set.contains(x, 1e-6)) throw InternalConsistencyError("witness: x* is outside the feature set");

    try {
        Witness w = evaluate_view(spec, cv, x, o.epsilon);
        w.repaired = repaired;
        const double tol = 1e-5 * std::max(1.0, std::abs(w.value));
        if (sense == QuerySense::Feasibility) {
            if (!prog.approximate && (w.value < spec.query.w_min - tol || w.value > spec.query.w_max + tol))
                throw InternalConsistencyError("witness: value " + std::to_string(w.value) +
                                               " lies outside [w_min, w_max]");
        } else if (!prog.approximate) {
            if (std::abs(w.value - sr.objective) > tol)
                throw InternalConsistencyError("witness: value at x* is " + std::to_string(w.value) +
                                               ", solver reported " + std::to_string(sr.objective));
        } else {
            const bool beyond = sense == QuerySense::Max ? w.value > sr.objective + tol : w.value < sr.objective - tol;
            if (beyond)
                throw InternalConsistencyError("witness: value at x* " + std::to_string(w.value) +
                                               " beats the certified outer bound " + std::to_string(sr.objective));
        }
        if (!prog.approximate && sense != QuerySense::Feasibility) {
            // Report the directly evaluated value rather than the solver's,
            // which carries LP feasibility error; keep the bound on its side.
            res.value = w.value;
            res.bound = sense == QuerySense::Max ? std::max(res.bound, w.value) : std::min(res.bound, w.value);
            res.gap = std::abs(res.bound - res.value) / std::max(1.0, std::abs(res.value));
        }
        res.witness = std::move(w);
    } catch (const InvalidInput& e) {
        if (!prog.approximate) throw InternalConsistencyError(std::string("witness: ") + e.what());
        res.message = std::string("witness not re-verified: ") + e.what();
    }

    VerificationStatus st = VerificationStatus::Optimal;
    if (sense == QuerySense::Feasibility) st = VerificationStatus::Feasible;
    else if (sr.status == opt::Status::TimeLimit) st = VerificationStatus::TimeLimit;
    else if (sr.status == opt::Status::GapLimit) st = VerificationStatus::GapLimit;
    const std::string msg = res.message;
    return finish(st, msg);
}

VerificationResult ablation_run(const MarkovProcessSpec& spec, const std::vector<Stage>& disabled, VerifyOptions opts) {
    opts.ablate.reset();
    for (Stage s : disabled)
        if (!opts.ablate || s < *opts.ablate) opts.ablate = s;
    return verify(spec, opts);
}

} // namespace mlchain
