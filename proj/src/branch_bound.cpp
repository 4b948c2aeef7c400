#include "mlchain/errors.hpp"
#include "mlchain/opt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>
#include <queue>

namespace mlchain::opt {

std::array<Row, 4> mccormick_envelope(int w, int u, int v, const Interval& ub, const Interval& vb) {
    if (!std::isfinite(ub.lo()) || !std::isfinite(ub.hi()) || !std::isfinite(vb.lo()) || !std::isfinite(vb.hi()))
        throw UnboundedBilinearVariable("McCormick envelope needs finite factor bounds");
    const double uL = ub.lo(), uU = ub.hi(), vL = vb.lo(), vU = vb.hi();
    return {
        Row{{{w, 1.0}, {v, -uL}, {u, -vL}}, RowSense::GreaterEqual, -uL * vL, "mc_lo1"},
        Row{{{w, 1.0}, {v, -uU}, {u, -vU}}, RowSense::GreaterEqual, -uU * vU, "mc_lo2"},
        Row{{{w, 1.0}, {v, -uU}, {u, -vL}}, RowSense::LessEqual, -uU * vL, "mc_hi1"},
        Row{{{w, 1.0}, {v, -uL}, {u, -vU}}, RowSense::LessEqual, -uL * vU, "mc_hi2"},
    };
}

namespace {

double slack_of(double v) { return 1e-10 * (1.0 + std::abs(v)); }

// Tightens [lo_j, hi_j] to [nlo, nhi]; returns false on an empty domain and
// sets `changed` when the improvement is worth another pass.
bool tighten(std::vector<double>& lo, std::vector<double>& hi, int j, double nlo, double nhi, bool integer,
             bool& changed) {
    auto k = static_cast<std::size_t>(j);
    if (integer) {
        if (std::isfinite(nlo)) nlo = std::ceil(nlo - 1e-6);
        if (std::isfinite(nhi)) nhi = std::floor(nhi + 1e-6);
    }
    const double width = hi[k] - lo[k];
    const double sig = std::isfinite(width) ? 1e-6 * (1.0 + width) : 0.0;
    if (nlo > lo[k] + slack_of(lo[k])) {
        if (!std::isfinite(lo[k]) || nlo - lo[k] > sig) changed = true;
        lo[k] = nlo;
    }
    if (nhi < hi[k] - slack_of(hi[k])) {
        if (!std::isfinite(hi[k]) || hi[k] - nhi > sig) changed = true;
        hi[k] = nhi;
    }
    if (lo[k] > hi[k]) {
        if (lo[k] - hi[k] > 1e-7 * (1.0 + std::abs(lo[k]))) return false;
        const double m = 0.5 * (lo[k] + hi[k]);
        lo[k] = hi[k] = integer ? std::round(m) : m;
    }
    return true;
}

bool propagate_row(const Problem& p, const Row& r, std::vector<double>& lo, std::vector<double>& hi, bool& changed) {
    // Activity bounds with counts of infinite contributions.
    double min_fin = 0.0, max_fin = 0.0;
    int min_inf = 0, max_inf = 0, min_inf_var = -1, max_inf_var = -1;
    for (const Term& t : r.terms) {
        const auto k = static_cast<std::size_t>(t.var);
        if (t.coef == 0.0) continue;
        const double lo_c = t.coef > 0 ? t.coef * lo[k] : t.coef * hi[k];
        const double hi_c = t.coef > 0 ? t.coef * hi[k] : t.coef * lo[k];
        if (std::isfinite(lo_c)) min_fin += lo_c;
        else {
            ++min_inf;
            min_inf_var = t.var;
        }
        if (std::isfinite(hi_c)) max_fin += hi_c;
        else {
            ++max_inf;
            max_inf_var = t.var;
        }
    }
    const bool upper = r.sense != RowSense::GreaterEqual;  // sum <= rhs holds
    const bool lower = r.sense != RowSense::LessEqual;     // sum >= rhs holds
    const double tol = 1e-7 * (1.0 + std::abs(r.rhs));
    if (upper && min_inf == 0 && min_fin > r.rhs + tol + 1e-9 * std::abs(min_fin)) return false;
    if (lower && max_inf == 0 && max_fin < r.rhs - tol - 1e-9 * std::abs(max_fin)) return false;

    for (const Term& t : r.terms) {
        if (t.coef == 0.0) continue;
        const auto k = static_cast<std::size_t>(t.var);
        const bool integer = p.var(t.var).integer;
        double nlo = -kInf, nhi = kInf;
        if (upper) {
            // a x_j <= rhs - (min activity of the others)
            const double own = t.coef > 0 ? t.coef * lo[k] : t.coef * hi[k];
            double rest = kInf;
            if (min_inf == 0) rest = min_fin - own;
            else if (min_inf == 1 && min_inf_var == t.var) rest = min_fin;
            if (std::isfinite(rest)) {
                const double b = (r.rhs - rest) / t.coef;
                if (t.coef > 0) nhi = b + slack_of(b);
                else nlo = b - slack_of(b);
            }
        }
        if (lower) {
            const double own = t.coef > 0 ? t.coef * hi[k] : t.coef * lo[k];
            double rest = kInf;
            if (max_inf == 0) rest = max_fin - own;
            else if (max_inf == 1 && max_inf_var == t.var) rest = max_fin;
            if (std::isfinite(rest)) {
                const double b = (r.rhs - rest) / t.coef;
                if (t.coef > 0) nlo = std::max(nlo, b - slack_of(b));
                else nhi = std::min(nhi, b + slack_of(b));
            }
        }
        if (!tighten(lo, hi, t.var, nlo, nhi, integer, changed)) return false;
    }
    return true;
}

bool propagate_product(const Problem& p, const BilinearTerm& b, std::vector<double>& lo, std::vector<double>& hi,
                       bool& changed) {
    auto iv = [&](int j) {
        const auto k = static_cast<std::size_t>(j);
        return Interval(lo[k], hi[k]);
    };
    const Interval u = iv(b.u), v = iv(b.v);
    if (std::isfinite(u.mag()) && std::isfinite(v.mag())) {
        const Interval w = u * v;
        if (!tighten(lo, hi, b.w, w.lo() - slack_of(w.lo()), w.hi() + slack_of(w.hi()), p.var(b.w).integer, changed))
            return false;
    }
    const Interval w = iv(b.w);
    if (!std::isfinite(w.mag())) return true;
    auto divide = [&](int target, const Interval& other) {
        if (other.contains_zero() || !std::isfinite(other.mag())) return true;
        const Interval q = w / other;
        return tighten(lo, hi, target, q.lo() - slack_of(q.lo()), q.hi() + slack_of(q.hi()), p.var(target).integer,
                       changed);
    };
    if (b.u != b.v) {
        if (!divide(b.u, iv(b.v))) return false;
        if (!divide(b.v, iv(b.u))) return false;
    }
    return true;
}

} // namespace

bool propagate_bounds(const Problem& p, std::vector<double>& lo, std::vector<double>& hi, int passes) {
    for (int j = 0; j < p.num_vars(); ++j)
        if (lo[static_cast<std::size_t>(j)] > hi[static_cast<std::size_t>(j)]) return false;
    for (int pass = 0; pass < passes; ++pass) {
        bool changed = false;
        for (const Row& r : p.rows())
            if (!propagate_row(p, r, lo, hi, changed)) return false;
        for (const BilinearTerm& b : p.products())
            if (!propagate_product(p, b, lo, hi, changed)) return false;
        if (!changed) break;
    }
    return true;
}

BranchAndBoundOptions defaults_bilinear() {
    BranchAndBoundOptions o;
    o.rel_gap = 1e-4;
    return o;
}

namespace {

struct BoundChange {
    int var;
    double lo;
    double hi;
};

struct OpenNode {
    std::vector<BoundChange> changes;
    double bound;  // minimisation form
    int depth;
};

struct NodeOrder {
    bool operator()(const OpenNode& a, const OpenNode& b) const { return a.bound > b.bound; }
};

class BranchAndBound {
public:
    BranchAndBound(const Problem& p, const BranchAndBoundOptions& o)
        : p_(p), o_(o), sign_(p.sense() == ObjSense::Maximize ? -1.0 : 1.0) {
        for (const Variable& v : p.vars()) {
            lo0_.push_back(v.lo);
            hi0_.push_back(v.hi);
        }
        is_factor_u_.assign(lo0_.size(), false);
        is_factor_.assign(lo0_.size(), false);
        for (const BilinearTerm& b : p.products()) {
            is_factor_u_[static_cast<std::size_t>(b.u)] = true;
            is_factor_[static_cast<std::size_t>(b.u)] = is_factor_[static_cast<std::size_t>(b.v)] = true;
        }
    }

    SolveResult run();

private:
    using Clock = std::chrono::steady_clock;

    double elapsed() const { return std::chrono::duration<double>(Clock::now() - start_).count(); }
    double tolerance(double inc) const { return std::max(o_.abs_gap, o_.rel_gap * std::abs(inc)); }
    double cutoff() const { return has_inc_ ? inc_ - tolerance(inc_) : kInf; }

    std::vector<Row> relaxation_rows(const std::vector<double>& lo, const std::vector<double>& hi) const;
    std::optional<SolveResult> solve_lp(const std::vector<double>& lo, const std::vector<double>& hi,
                                        const std::vector<Row>& rows);
    bool products_ok(const std::vector<double>& x) const;
    bool offer(const std::vector<double>& x);
    void polish(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi);

    const Problem& p_;
    BranchAndBoundOptions o_;
    double sign_;
    std::vector<double> lo0_, hi0_;
    std::vector<bool> is_factor_u_;
    std::vector<bool> is_factor_;
    Clock::time_point start_ = Clock::now();
    bool has_inc_ = false;
    double inc_ = kInf;  // minimisation form
    std::vector<double> x_inc_;
    SolveStats stats_;
};

std::vector<Row> BranchAndBound::relaxation_rows(const std::vector<double>& lo, const std::vector<double>& hi) const {
    std::vector<Row> rows;
    rows.reserve(p_.products().size() * 4);
    for (const BilinearTerm& b : p_.products()) {
        const auto u = static_cast<std::size_t>(b.u), v = static_cast<std::size_t>(b.v);
        const bool u_fixed = hi[u] - lo[u] <= 1e-12 * (1.0 + std::abs(lo[u]));
        const bool v_fixed = hi[v] - lo[v] <= 1e-12 * (1.0 + std::abs(lo[v]));
        if (u_fixed) {
            rows.push_back(Row{{{b.w, 1.0}, {b.v, -lo[u]}}, RowSense::Equal, 0.0, "mc_fix"});
        } else if (v_fixed) {
            rows.push_back(Row{{{b.w, 1.0}, {b.u, -lo[v]}}, RowSense::Equal, 0.0, "mc_fix"});
        } else {
            for (Row& r : mccormick_envelope(b.w, b.u, b.v, Interval(lo[u], hi[u]), Interval(lo[v], hi[v])))
                rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::optional<SolveResult> BranchAndBound::solve_lp(const std::vector<double>& lo, const std::vector<double>& hi,
                                                    const std::vector<Row>& rows) {
    SolveResult r;
    try {
        r = lp_solve(p_, lo, hi, rows, o_.lp);
    } catch (const NumericalFailure&) {
        // One retry with Bland's rule from the first pivot; a second failure
        // is reported to the caller, which keeps the parent bound.
        LpOptions careful = o_.lp;
        careful.bland_after = 0;
        try {
            r = lp_solve(p_, lo, hi, rows, careful);
        } catch (const NumericalFailure&) {
            ++stats_.lp_failures;
            return std::nullopt;
        }
    }
    ++stats_.lp_solves;
    stats_.lp_iterations += r.stats.lp_iterations;
    return r;
}

bool BranchAndBound::products_ok(const std::vector<double>& x) const {
    for (const BilinearTerm& b : p_.products()) {
        const double uv = x[static_cast<std::size_t>(b.u)] * x[static_cast<std::size_t>(b.v)];
        if (std::abs(x[static_cast<std::size_t>(b.w)] - uv) > o_.product_tol * (1.0 + std::abs(uv))) return false;
    }
    return true;
}

// Records x as incumbent if it is feasible and improving; returns feasibility.
bool BranchAndBound::offer(const std::vector<double>& x) {
    for (int j = 0; j < p_.num_vars(); ++j) {
        if (!p_.var(j).integer) continue;
        const double v = x[static_cast<std::size_t>(j)];
        if (std::abs(v - std::round(v)) > o_.int_tol) return false;
    }
    if (p_.max_linear_violation(x) > 1e-6) return false;
    if (!products_ok(x)) return false;
    const double z = sign_ * p_.objective_value(x);
    if (!has_inc_ || z < inc_) {
        has_inc_ = true;
        inc_ = z;
        x_inc_ = x;
    }
    return true;
}

// Fix integers (rounded) and the u factor of every product at their
// relaxation values; the rest is an LP whose optimum is feasible for the
// original problem.
void BranchAndBound::polish(const std::vector<double>& x, const std::vector<double>& lo,
                            const std::vector<double>& hi) {
    std::vector<double> plo = lo, phi = hi;
    for (int j = 0; j < p_.num_vars(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        if (p_.var(j).integer) {
            plo[k] = phi[k] = std::clamp(std::round(x[k]), lo[k], hi[k]);
        } else if (is_factor_u_[k]) {
            plo[k] = phi[k] = std::clamp(x[k], lo[k], hi[k]);
        }
    }
    if (o_.bound_propagation && !propagate_bounds(p_, plo, phi, o_.propagation_passes)) return;
    for (const BilinearTerm& b : p_.products()) {
        const auto u = static_cast<std::size_t>(b.u);
        plo[u] = phi[u] = 0.5 * (plo[u] + phi[u]);
    }
    const auto rows = relaxation_rows(plo, phi);
    auto solved = solve_lp(plo, phi, rows);
    if (!solved || solved->status != Status::Optimal) return;
    SolveResult& r = *solved;
    // Recompute products exactly so tiny LP residuals do not reject the point.
    for (const BilinearTerm& b : p_.products())
        r.x[static_cast<std::size_t>(b.w)] = r.x[static_cast<std::size_t>(b.u)] * r.x[static_cast<std::size_t>(b.v)];
    offer(r.x);
}

SolveResult BranchAndBound::run() {
    std::priority_queue<OpenNode, std::vector<OpenNode>, NodeOrder> open;
    std::optional<OpenNode> dive;
    open.push(OpenNode{{}, -kInf, 0});
    double unresolved = kInf;  // bounds of nodes closed without reaching tolerance
    Status limit_status = Status::Optimal;
    bool unbounded = false;

    auto global_lb = [&](double extra) {
        double lb = std::min(extra, unresolved);
        if (!open.empty()) lb = std::min(lb, open.top().bound);
        if (dive) lb = std::min(lb, dive->bound);
        return lb;
    };

    while (true) {
        OpenNode node;
        if (dive) {
            node = std::move(*dive);
            dive.reset();
        } else if (!open.empty()) {
            node = open.top();
            open.pop();
        } else {
            break;
        }
        if (node.bound >= cutoff()) continue;

        const double lb = global_lb(node.bound);
        if (has_inc_ && inc_ - lb <= tolerance(inc_)) {
            open.push(std::move(node));
            break;
        }
        if (elapsed() > o_.time_limit || stats_.nodes >= o_.node_limit) {
            limit_status = elapsed() > o_.time_limit ? Status::TimeLimit : Status::GapLimit;
            open.push(std::move(node));
            break;
        }

        ++stats_.nodes;
        stats_.max_depth = std::max(stats_.max_depth, node.depth);
        std::vector<double> lo = lo0_, hi = hi0_;
        bool empty = false;
        for (const BoundChange& c : node.changes) {
            const auto k = static_cast<std::size_t>(c.var);
            lo[k] = std::max(lo[k], c.lo);
            hi[k] = std::min(hi[k], c.hi);
            if (lo[k] > hi[k]) empty = true;
        }
        if (empty) continue;
        if (o_.bound_propagation && !propagate_bounds(p_, lo, hi, o_.propagation_passes)) continue;

        const auto rows = relaxation_rows(lo, hi);
        auto solved = solve_lp(lo, hi, rows);
        if (!solved) {
            // No relaxation bound: bisect the widest factor or integer and
            // let the children inherit this node's bound.
            int f = -1;
            double best = 0.0;
            for (int j = 0; j < p_.num_vars(); ++j) {
                const auto k = static_cast<std::size_t>(j);
                if (!p_.var(j).integer && !is_factor_[k]) continue;
                const double root = hi0_[k] - lo0_[k];
                const double w = hi[k] - lo[k];
                if (!std::isfinite(w) || w <= 1e-9 * (1.0 + std::abs(lo[k]))) continue;
                if (p_.var(j).integer && w < 1.0) continue;
                const double rel = std::isfinite(root) && root > 0.0 ? w / root : 1.0;
                if (rel > best) {
                    best = rel;
                    f = j;
                }
            }
            if (f < 0) {
                unresolved = std::min(unresolved, node.bound);
                continue;
            }
            const auto fk = static_cast<std::size_t>(f);
            const double mid = 0.5 * (lo[fk] + hi[fk]);
            OpenNode a{node.changes, node.bound, node.depth + 1}, b{node.changes, node.bound, node.depth + 1};
            if (p_.var(f).integer) {
                a.changes.push_back({f, -kInf, std::floor(mid)});
                b.changes.push_back({f, std::floor(mid) + 1.0, kInf});
            } else {
                a.changes.push_back({f, -kInf, mid});
                b.changes.push_back({f, mid, kInf});
            }
            open.push(std::move(a));
            open.push(std::move(b));
            continue;
        }
        SolveResult& lp = *solved;
        if (lp.status == Status::Infeasible) continue;
        if (lp.status == Status::Unbounded) {
            unbounded = true;
            break;
        }
        double z = sign_ * lp.objective;
        if (node.depth > 0 && z < node.bound - 1e-9 * (1.0 + std::abs(node.bound))) ++stats_.bound_monotonicity_violations;
        z = std::max(z, node.bound);
        if (z >= cutoff()) continue;
        const std::vector<double>& x = lp.x;

        // Most fractional integer.
        int branch_var = -1;
        double best_frac = o_.int_tol;
        for (int j = 0; j < p_.num_vars(); ++j) {
            if (!p_.var(j).integer) continue;
            const double v = x[static_cast<std::size_t>(j)];
            const double f = std::abs(v - std::round(v));
            if (f > best_frac) {
                best_frac = f;
                branch_var = j;
            }
        }

        if (branch_var < 0) {
            if (products_ok(x)) {
                // A relaxation point that fails the stricter acceptance test gets repaired.
                if (!offer(x)) polish(x, lo, hi);
                continue;
            }
            polish(x, lo, hi);
        } else if (node.depth == 0 || stats_.nodes % 64 == 0) {
            polish(x, lo, hi);
        }
        if (z >= cutoff()) continue;

        OpenNode left{node.changes, z, node.depth + 1};
        OpenNode right{node.changes, z, node.depth + 1};
        bool left_first = true;
        if (branch_var >= 0) {
            const double v = x[static_cast<std::size_t>(branch_var)];
            left.changes.push_back({branch_var, -kInf, std::floor(v)});
            right.changes.push_back({branch_var, std::ceil(v), kInf});
            left_first = v - std::floor(v) < 0.5;
        } else {
            // Spatial branching on the most violated product.
            int best_k = -1;
            double worst = -1.0;
            for (std::size_t k = 0; k < p_.products().size(); ++k) {
                const BilinearTerm& b = p_.products()[k];
                const double viol = std::abs(x[static_cast<std::size_t>(b.w)] -
                                             x[static_cast<std::size_t>(b.u)] * x[static_cast<std::size_t>(b.v)]);
                if (viol > worst) {
                    worst = viol;
                    best_k = static_cast<int>(k);
                }
            }
            const BilinearTerm& b = p_.products()[static_cast<std::size_t>(best_k)];
            auto rel_width = [&](int j) {
                const auto k = static_cast<std::size_t>(j);
                const double root = hi0_[k] - lo0_[k];
                return root > 0.0 ? (hi[k] - lo[k]) / root : 0.0;
            };
            const int f = rel_width(b.u) >= rel_width(b.v) ? b.u : b.v;
            const auto fk = static_cast<std::size_t>(f);
            const double width = hi[fk] - lo[fk];
            if (width <= 1e-9 * (1.0 + std::abs(lo[fk]))) {
                // Nothing left to split; keep the bound so the gap stays honest.
                unresolved = std::min(unresolved, z);
                continue;
            }
            const double at = std::clamp(x[fk], lo[fk] + 0.2 * width, lo[fk] + 0.8 * width);
            left.changes.push_back({f, -kInf, at});
            right.changes.push_back({f, at, kInf});
            left_first = x[fk] <= at;
        }
        if (!left_first) std::swap(left, right);
        if (o_.plunge) dive = std::move(left);
        else open.push(std::move(left));
        open.push(std::move(right));
    }

    stats_.seconds = elapsed();
    SolveResult res;
    res.stats = stats_;
    if (unbounded) {
        res.status = Status::Unbounded;
        return res;
    }
    double lb = global_lb(kInf);
    if (!std::isfinite(lb) && open.empty() && !dive) lb = has_inc_ ? inc_ : kInf;
    if (has_inc_) {
        lb = std::min(lb, inc_);
        res.x = x_inc_;
        res.objective = sign_ * inc_;
        res.bound = sign_ * lb;
        res.gap = (inc_ - lb) / std::max(1.0, std::abs(inc_));
        const bool closed = inc_ - lb <= tolerance(inc_) * (1.0 + 1e-12);
        res.status = closed ? Status::Optimal : (limit_status == Status::Optimal ? Status::GapLimit : limit_status);
    } else {
        res.status = limit_status == Status::Optimal ? Status::Infeasible : limit_status;
        res.bound = sign_ * lb;
        res.gap = kInf;
    }
    return res;
}

} // namespace

SolveResult milp_solve(const Problem& p, const BranchAndBoundOptions& opts) {
    if (!p.products().empty()) throw InvalidInput("milp_solve: problem has bilinear products; use bilinear_solve");
    return BranchAndBound(p, opts).run();
}

SolveResult bilinear_solve(const Problem& p, const BranchAndBoundOptions& opts) {
    for (const BilinearTerm& b : p.products()) {
        for (int f : {b.u, b.v}) {
            const Variable& v = p.var(f);
            if (!std::isfinite(v.lo) || !std::isfinite(v.hi))
                throw UnboundedBilinearVariable("bilinear factor '" + v.name + "' has an infinite bound");
        }
    }
    return BranchAndBound(p, opts).run();
}

SolveResult solve(const Problem& p, const BranchAndBoundOptions& opts) {
    return p.products().empty() ? milp_solve(p, opts) : bilinear_solve(p, opts);
}

} // namespace mlchain::opt
