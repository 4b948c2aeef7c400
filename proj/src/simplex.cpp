#include "mlchain/errors.hpp"
#include "mlchain/opt.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mlchain::opt {

namespace {

enum class Place : std::uint8_t { Basic, AtLower, AtUpper, FreeZero };

struct Entry {
    int col;
    double val;
};

/**
 * Bounded-variable primal simplex on a dense tableau [A | I].
 *
 * Each kept row r reads  sum_j a_rj x_j + s_r = rhs_r  with the slack bounds
 * encoding the row sense. Variables whose bounds coincide are substituted out
 * before the tableau is built. Phase 1 minimises the sum of bound
 * infeasibilities of the basic variables; phase 2 the (minimisation form)
 * objective.
 */
class DenseSimplex {
public:
    DenseSimplex(const Problem& p, std::span<const double> lo, std::span<const double> hi,
                 std::span<const Row> extra, const LpOptions& opts)
        : p_(p), opts_(opts), bland_(opts.bland_after <= 0) {
        build(lo, hi, extra);
    }

    SolveResult run();

private:
    void build(std::span<const double> lo, std::span<const double> hi, std::span<const Row> extra);
    double* row(int i) { return &T_[static_cast<std::size_t>(i) * W_]; }
    const double* row(int i) const { return &T_[static_cast<std::size_t>(i) * W_]; }

    bool phase_one_costs();
    void full_reduced_costs(bool phase_one);
    int price() const;
    Status iterate(bool phase_one);
    void pivot(int r, int q);
    void refactor();
    double residual() const;
    SolveResult finish(Status status);

    const Problem& p_;
    LpOptions opts_;

    bool trivially_infeasible_ = false;
    int m_ = 0;  // kept rows
    int n_ = 0;  // active structural columns
    int W_ = 0;  // n_ + m_
    std::vector<double> T_;
    std::vector<std::vector<Entry>> arows_;  // sparse A of kept rows over active columns
    std::vector<double> rhs_;
    std::vector<double> lb_, ub_, x_, cost_, d_;
    std::vector<Place> place_;
    std::vector<int> basis_;
    std::vector<int> col_var_;
    std::vector<int> var_col_;
    std::vector<double> fixed_value_;
    std::vector<int> row_source_;
    std::vector<double> c1_;
    std::vector<int> nz_;
    std::int64_t iterations_ = 0;
    int degenerate_run_ = 0;
    bool bland_ = false;
    int refactors_ = 0;
    double rhs_scale_ = 1.0;
};

void DenseSimplex::build(std::span<const double> lo, std::span<const double> hi, std::span<const Row> extra) {
    const int nv = p_.num_vars();
    var_col_.assign(static_cast<std::size_t>(nv), -1);
    fixed_value_.assign(static_cast<std::size_t>(nv), 0.0);
    for (int j = 0; j < nv; ++j) {
        const double l = lo[static_cast<std::size_t>(j)];
        const double h = hi[static_cast<std::size_t>(j)];
        if (l > h + 1e-9 * (1.0 + std::abs(l))) {
            trivially_infeasible_ = true;
            return;
        }
        // Near-fixed columns (typically left by bound propagation) are
        // substituted at their midpoint; as columns they only flip between
        // bounds without progress.
        if (std::isfinite(l) && h - l <= 1e-9 * (1.0 + std::abs(l))) {
            fixed_value_[static_cast<std::size_t>(j)] = 0.5 * (l + h);
        } else {
            var_col_[static_cast<std::size_t>(j)] = static_cast<int>(col_var_.size());
            col_var_.push_back(j);
        }
    }
    n_ = static_cast<int>(col_var_.size());

    auto consider = [&](const Row& r, int src) {
        std::vector<Entry> entries;
        double rhs = r.rhs;
        for (const Term& t : r.terms) {
            if (t.coef == 0.0) continue;
            const int c = var_col_[static_cast<std::size_t>(t.var)];
            if (c < 0) {
                rhs -= t.coef * fixed_value_[static_cast<std::size_t>(t.var)];
                continue;
            }
            auto it = std::find_if(entries.begin(), entries.end(), [c](const Entry& e) { return e.col == c; });
            if (it != entries.end()) it->val += t.coef;
            else entries.push_back({c, t.coef});
        }
        std::erase_if(entries, [](const Entry& e) { return e.val == 0.0; });
        if (entries.empty()) {
            const double tol = 1e-7 * (1.0 + std::abs(r.rhs));
            bool ok = true;
            switch (r.sense) {
            case RowSense::LessEqual: ok = rhs >= -tol; break;
            case RowSense::GreaterEqual: ok = rhs <= tol; break;
            case RowSense::Equal: ok = std::abs(rhs) <= tol; break;
            }
            if (!ok) trivially_infeasible_ = true;
            return;
        }
        arows_.push_back(std::move(entries));
        rhs_.push_back(rhs);
        row_source_.push_back(src);
        double slo = 0.0, shi = 0.0;
        switch (r.sense) {
        case RowSense::LessEqual: shi = kInf; break;
        case RowSense::GreaterEqual: slo = -kInf; break;
        case RowSense::Equal: break;
        }
        lb_.push_back(slo);  // temporarily slack bounds; structurals prepended below
        ub_.push_back(shi);
    };
    const auto& rows = p_.rows();
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) consider(rows[static_cast<std::size_t>(i)], i);
    for (int i = 0; i < static_cast<int>(extra.size()); ++i)
        consider(extra[static_cast<std::size_t>(i)], static_cast<int>(rows.size()) + i);
    if (trivially_infeasible_) return;

    m_ = static_cast<int>(arows_.size());
    W_ = n_ + m_;
    std::vector<double> slo = std::move(lb_), shi = std::move(ub_);
    lb_.assign(static_cast<std::size_t>(W_), 0.0);
    ub_.assign(static_cast<std::size_t>(W_), 0.0);
    for (int c = 0; c < n_; ++c) {
        lb_[static_cast<std::size_t>(c)] = lo[static_cast<std::size_t>(col_var_[static_cast<std::size_t>(c)])];
        ub_[static_cast<std::size_t>(c)] = hi[static_cast<std::size_t>(col_var_[static_cast<std::size_t>(c)])];
    }
    for (int i = 0; i < m_; ++i) {
        lb_[static_cast<std::size_t>(n_ + i)] = slo[static_cast<std::size_t>(i)];
        ub_[static_cast<std::size_t>(n_ + i)] = shi[static_cast<std::size_t>(i)];
    }

    cost_.assign(static_cast<std::size_t>(W_), 0.0);
    const double sign = p_.sense() == ObjSense::Maximize ? -1.0 : 1.0;
    for (const Term& t : p_.objective()) {
        const int c = var_col_[static_cast<std::size_t>(t.var)];
        if (c >= 0) cost_[static_cast<std::size_t>(c)] += sign * t.coef;
    }

    T_.assign(static_cast<std::size_t>(m_) * static_cast<std::size_t>(W_), 0.0);
    for (int i = 0; i < m_; ++i) {
        double* r = row(i);
        for (const Entry& e : arows_[static_cast<std::size_t>(i)]) r[e.col] = e.val;
        r[n_ + i] = 1.0;
    }

    x_.assign(static_cast<std::size_t>(W_), 0.0);
    place_.assign(static_cast<std::size_t>(W_), Place::AtLower);
    for (int c = 0; c < n_; ++c) {
        const auto k = static_cast<std::size_t>(c);
        if (std::isfinite(lb_[k])) {
            x_[k] = lb_[k];
            place_[k] = Place::AtLower;
        } else if (std::isfinite(ub_[k])) {
            x_[k] = ub_[k];
            place_[k] = Place::AtUpper;
        } else {
            x_[k] = 0.0;
            place_[k] = Place::FreeZero;
        }
    }
    basis_.resize(static_cast<std::size_t>(m_));
    for (int i = 0; i < m_; ++i) {
        basis_[static_cast<std::size_t>(i)] = n_ + i;
        place_[static_cast<std::size_t>(n_ + i)] = Place::Basic;
        double s = rhs_[static_cast<std::size_t>(i)];
        for (const Entry& e : arows_[static_cast<std::size_t>(i)]) s -= e.val * x_[static_cast<std::size_t>(e.col)];
        x_[static_cast<std::size_t>(n_ + i)] = s;
    }
    rhs_scale_ = 1.0;
    for (double r : rhs_) rhs_scale_ = std::max(rhs_scale_, std::abs(r));
    d_.assign(static_cast<std::size_t>(W_), 0.0);
    c1_.assign(static_cast<std::size_t>(m_), 0.0);
}

bool DenseSimplex::phase_one_costs() {
    bool any = false;
    for (int i = 0; i < m_; ++i) {
        const auto b = static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)]);
        const double tol = opts_.primal_tol * (1.0 + std::abs(x_[b]));
        double c = 0.0;
        if (x_[b] < lb_[b] - tol) c = -1.0;
        else if (x_[b] > ub_[b] + tol) c = 1.0;
        c1_[static_cast<std::size_t>(i)] = c;
        any = any || c != 0.0;
    }
    return any;
}

void DenseSimplex::full_reduced_costs(bool phase_one) {
    if (phase_one) std::fill(d_.begin(), d_.end(), 0.0);
    else d_ = cost_;
    for (int i = 0; i < m_; ++i) {
        const double cb = phase_one ? c1_[static_cast<std::size_t>(i)]
                                    : cost_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])];
        if (cb == 0.0) continue;
        const double* r = row(i);
        for (int j = 0; j < W_; ++j) d_[static_cast<std::size_t>(j)] -= cb * r[j];
    }
    for (int i = 0; i < m_; ++i) d_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])] = 0.0;
}

int DenseSimplex::price() const {
    const double tol = opts_.dual_tol;
    int best = -1;
    double best_score = 0.0;
    for (int j = 0; j < W_; ++j) {
        const auto k = static_cast<std::size_t>(j);
        const Place pl = place_[k];
        if (pl == Place::Basic) continue;
        if (lb_[k] == ub_[k]) continue;
        const double d = d_[k];
        bool eligible = false;
        switch (pl) {
        case Place::AtLower: eligible = d < -tol; break;
        case Place::AtUpper: eligible = d > tol; break;
        case Place::FreeZero: eligible = std::abs(d) > tol; break;
        case Place::Basic: break;
        }
        if (!eligible) continue;
        if (bland_) return j;
        const double score = std::abs(d);
        if (score > best_score) {
            best_score = score;
            best = j;
        }
    }
    return best;
}

void DenseSimplex::pivot(int r, int q) {
    double* pr = row(r);
    const double inv = 1.0 / pr[q];
    nz_.clear();
    for (int j = 0; j < W_; ++j) {
        if (pr[j] != 0.0) {
            pr[j] *= inv;
            nz_.push_back(j);
        }
    }
    pr[q] = 1.0;
    for (int i = 0; i < m_; ++i) {
        if (i == r) continue;
        double* pi = row(i);
        const double f = pi[q];
        if (f == 0.0) continue;
        for (int j : nz_) pi[j] -= f * pr[j];
        pi[q] = 0.0;
    }
}

Status DenseSimplex::iterate(bool phase_one) {
    int since_full = 0;
    if (!phase_one) full_reduced_costs(false);
    while (true) {
        if (++iterations_ > opts_.max_iterations)
            throw NumericalFailure("lp_solve: iteration limit reached (cycling or ill-conditioning)");
        if (phase_one) {
            if (!phase_one_costs()) return Status::Optimal;
            full_reduced_costs(true);
        } else if (++since_full >= 100) {
            full_reduced_costs(false);
            since_full = 0;
        }

        const int q = price();
        if (q < 0) return phase_one ? Status::Infeasible : Status::Optimal;
        const auto qk = static_cast<std::size_t>(q);
        double dir = 0.0;
        switch (place_[qk]) {
        case Place::AtLower: dir = 1.0; break;
        case Place::AtUpper: dir = -1.0; break;
        default: dir = d_[qk] < 0.0 ? 1.0 : -1.0; break;
        }

        // Ratio test (Harris two-pass, plain min-ratio under Bland).
        const double ptol = opts_.pivot_tol;
        auto target = [&](int i, double alpha, double& dist, bool& to_upper) -> bool {
            const auto b = static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)]);
            const double xv = x_[b];
            const double tol = opts_.primal_tol * (1.0 + std::abs(xv));
            if (alpha > 0.0) {  // basic value decreases
                if (xv > ub_[b] + tol) {
                    dist = xv - ub_[b];
                    to_upper = true;
                    return true;
                }
                if (!std::isfinite(lb_[b]) || xv < lb_[b] - tol) return false;
                dist = std::max(0.0, xv - lb_[b]);
                to_upper = false;
                return true;
            }
            if (xv < lb_[b] - tol) {
                dist = lb_[b] - xv;
                to_upper = false;
                return true;
            }
            if (!std::isfinite(ub_[b]) || xv > ub_[b] + tol) return false;
            dist = std::max(0.0, ub_[b] - xv);
            to_upper = true;
            return true;
        };

        double t_relaxed = kInf;
        for (int i = 0; i < m_; ++i) {
            const double alpha = row(i)[q] * dir;
            if (std::abs(alpha) <= ptol) continue;
            double dist = 0.0;
            bool up = false;
            if (!target(i, alpha, dist, up)) continue;
            const auto b = static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)]);
            const double slack = bland_ ? 0.0 : opts_.primal_tol * (1.0 + std::abs(x_[b]));
            t_relaxed = std::min(t_relaxed, (dist + slack) / std::abs(alpha));
        }
        int leave = -1;
        double t = kInf;
        bool leave_upper = false;
        double best_alpha = 0.0;
        for (int i = 0; i < m_; ++i) {
            const double alpha = row(i)[q] * dir;
            if (std::abs(alpha) <= ptol) continue;
            double dist = 0.0;
            bool up = false;
            if (!target(i, alpha, dist, up)) continue;
            const double ti = dist / std::abs(alpha);
            if (ti > t_relaxed) continue;
            bool take = false;
            if (bland_) {
                take = leave < 0 || ti < t ||
                       (ti == t && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)]);
            } else {
                take = std::abs(alpha) > best_alpha;
            }
            if (take) {
                leave = i;
                t = ti;
                leave_upper = up;
                best_alpha = std::abs(alpha);
            }
        }

        const double range = ub_[qk] - lb_[qk];
        const bool flip = std::isfinite(range) && range <= t;
        if (!flip && leave < 0) {
            if (phase_one) throw NumericalFailure("lp_solve: unbounded ray in phase 1");
            return Status::Unbounded;
        }
        const double step = flip ? range : t;

        if (step <= 1e-12 || std::abs(d_[qk]) * step <= 1e-9) {
            if (++degenerate_run_ >= opts_.bland_after) bland_ = true;
        } else {
            degenerate_run_ = 0;
        }

        x_[qk] += dir * step;
        for (int i = 0; i < m_; ++i) {
            const double a = row(i)[q];
            if (a != 0.0) x_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(i)])] -= a * dir * step;
        }

        if (flip) {
            place_[qk] = dir > 0.0 ? Place::AtUpper : Place::AtLower;
            x_[qk] = dir > 0.0 ? ub_[qk] : lb_[qk];
            continue;
        }

        const auto lk = static_cast<std::size_t>(basis_[static_cast<std::size_t>(leave)]);
        x_[lk] = leave_upper ? ub_[lk] : lb_[lk];
        place_[lk] = leave_upper ? Place::AtUpper : Place::AtLower;
        place_[qk] = Place::Basic;
        basis_[static_cast<std::size_t>(leave)] = q;
        pivot(leave, q);
        if (!phase_one) {
            const double dq = d_[qk];
            const double* pr = row(leave);
            for (int j : nz_) d_[static_cast<std::size_t>(j)] -= dq * pr[j];
            d_[qk] = 0.0;
        }
    }
}

double DenseSimplex::residual() const {
    double worst = 0.0;
    for (int i = 0; i < m_; ++i) {
        double s = x_[static_cast<std::size_t>(n_ + i)] - rhs_[static_cast<std::size_t>(i)];
        for (const Entry& e : arows_[static_cast<std::size_t>(i)]) s += e.val * x_[static_cast<std::size_t>(e.col)];
        worst = std::max(worst, std::abs(s));
    }
    return worst;
}

void DenseSimplex::refactor() {
    ++refactors_;
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMat A0 = RowMat::Zero(m_, W_);
    for (int i = 0; i < m_; ++i) {
        for (const Entry& e : arows_[static_cast<std::size_t>(i)]) A0(i, e.col) += e.val;
        A0(i, n_ + i) = 1.0;
    }
    Eigen::MatrixXd B(m_, m_);
    for (int k = 0; k < m_; ++k) B.col(k) = A0.col(basis_[static_cast<std::size_t>(k)]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
    RowMat Tn = lu.solve(A0);
    if (!Tn.allFinite()) throw NumericalFailure("lp_solve: singular basis during refactorisation");
    Eigen::Map<RowMat>(T_.data(), m_, W_) = Tn;
    Eigen::VectorXd rhs(m_);
    for (int i = 0; i < m_; ++i) rhs(i) = rhs_[static_cast<std::size_t>(i)];
    for (int j = 0; j < W_; ++j)
        if (place_[static_cast<std::size_t>(j)] != Place::Basic) rhs -= A0.col(j) * x_[static_cast<std::size_t>(j)];
    Eigen::VectorXd xb = lu.solve(rhs);
    for (int k = 0; k < m_; ++k) x_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(k)])] = xb(k);
}

SolveResult DenseSimplex::finish(Status status) {
    SolveResult res;
    res.status = status;
    res.stats.lp_iterations = iterations_;
    res.stats.lp_solves = 1;
    if (status != Status::Optimal) return res;

    const int nv = p_.num_vars();
    res.x.resize(static_cast<std::size_t>(nv));
    for (int j = 0; j < nv; ++j) {
        const int c = var_col_[static_cast<std::size_t>(j)];
        double v = c >= 0 ? x_[static_cast<std::size_t>(c)] : fixed_value_[static_cast<std::size_t>(j)];
        if (c >= 0) v = std::clamp(v, lb_[static_cast<std::size_t>(c)], ub_[static_cast<std::size_t>(c)]);
        res.x[static_cast<std::size_t>(j)] = v;
    }
    res.objective = p_.objective_value(res.x);
    res.bound = res.objective;

    // Duals from the final basis: y = c_B^T B^{-1}, B^{-1} being the slack block.
    const double sign = p_.sense() == ObjSense::Maximize ? -1.0 : 1.0;
    std::vector<double> y(static_cast<std::size_t>(m_), 0.0);
    for (int k = 0; k < m_; ++k) {
        const double cb = cost_[static_cast<std::size_t>(basis_[static_cast<std::size_t>(k)])];
        if (cb == 0.0) continue;
        const double* r = row(k);
        for (int i = 0; i < m_; ++i) y[static_cast<std::size_t>(i)] += cb * r[n_ + i];
    }
    std::size_t max_src = p_.rows().size();
    for (int src : row_source_) max_src = std::max(max_src, static_cast<std::size_t>(src) + 1);
    res.row_duals.assign(max_src, 0.0);
    for (int i = 0; i < m_; ++i)
        res.row_duals[static_cast<std::size_t>(row_source_[static_cast<std::size_t>(i)])] =
            sign * y[static_cast<std::size_t>(i)];
    return res;
}

SolveResult DenseSimplex::run() {
    if (trivially_infeasible_) return finish(Status::Infeasible);
    if (m_ == 0) {
        // Only bounds: move each variable to its best bound.
        for (int c = 0; c < n_; ++c) {
            const auto k = static_cast<std::size_t>(c);
            const double cc = cost_[k];
            if (cc > 0.0) {
                if (!std::isfinite(lb_[k])) return finish(Status::Unbounded);
                x_[k] = lb_[k];
            } else if (cc < 0.0) {
                if (!std::isfinite(ub_[k])) return finish(Status::Unbounded);
                x_[k] = ub_[k];
            }
        }
        return finish(Status::Optimal);
    }

    for (int attempt = 0; attempt < 3; ++attempt) {
        if (iterate(true) == Status::Infeasible) {
            // Confirm with a fresh factorisation before declaring infeasibility.
            if (attempt == 0 && iterations_ > 50) {
                refactor();
                if (iterate(true) == Status::Infeasible) return finish(Status::Infeasible);
            } else {
                return finish(Status::Infeasible);
            }
        }
        const Status s = iterate(false);
        if (s == Status::Unbounded) return finish(Status::Unbounded);
        const double res = residual();
        if (res <= 1e-9 * rhs_scale_ * 10.0) return finish(Status::Optimal);
        refactor();
        if (!phase_one_costs() && residual() <= 1e-8 * rhs_scale_) {
            if (iterate(false) == Status::Unbounded) return finish(Status::Unbounded);
            return finish(Status::Optimal);
        }
    }
    std::ostringstream os;
    os << "lp_solve: residual " << residual() << " after " << refactors_ << " refactorisations";
    throw NumericalFailure(os.str());
}

} // namespace

SolveResult lp_solve(const Problem& lp, std::span<const double> lo, std::span<const double> hi,
                     std::span<const Row> extra_rows, const LpOptions& opts) {
    if (static_cast<int>(lo.size()) != lp.num_vars() || static_cast<int>(hi.size()) != lp.num_vars())
        throw InvalidInput("lp_solve: bound vectors do not match the variable count");
    DenseSimplex simplex(lp, lo, hi, extra_rows, opts);
    SolveResult res = simplex.run();
    if (res.status == Status::Optimal) {
        // Reduced costs c - A^T y against the original rows (problem sense).
        res.reduced_costs.assign(static_cast<std::size_t>(lp.num_vars()), 0.0);
        for (const Term& t : lp.objective()) res.reduced_costs[static_cast<std::size_t>(t.var)] += t.coef;
        const auto& rows = lp.rows();
        for (std::size_t i = 0; i < res.row_duals.size(); ++i) {
            const double y = res.row_duals[i];
            if (y == 0.0) continue;
            const Row& r = i < rows.size() ? rows[i] : extra_rows[i - rows.size()];
            for (const Term& t : r.terms) res.reduced_costs[static_cast<std::size_t>(t.var)] -= y * t.coef;
        }
        res.row_duals.resize(rows.size() + extra_rows.size(), 0.0);
    }
    return res;
}

SolveResult lp_solve(const Problem& lp, const LpOptions& opts) {
    std::vector<double> lo, hi;
    lo.reserve(lp.vars().size());
    hi.reserve(lp.vars().size());
    for (const Variable& v : lp.vars()) {
        lo.push_back(v.lo);
        hi.push_back(v.hi);
    }
    return lp_solve(lp, lo, hi, {}, opts);
}

} // namespace mlchain::opt
