#pragma once

#include "mlchain/interval.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace mlchain::opt {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { LessEqual, Equal, GreaterEqual };
enum class ObjSense { Minimize, Maximize };

struct Term {
    int var;
    double coef;
};

struct Variable {
    double lo = 0.0;
    double hi = 0.0;
    bool integer = false;
    std::string name;
};

struct Row {
    std::vector<Term> terms;
    RowSense sense = RowSense::LessEqual;
    double rhs = 0.0;
    std::string name;
    /// The modelled condition is strict (e.g. the right branch of a tree split,
    /// x > t) but is encoded closed. Used only when repairing witnesses.
    bool strict = false;
};

/// Auxiliary variable w standing for the product u * v.
struct BilinearTerm {
    int w;
    int u;
    int v;
};

/**
 * Solver-facing model: bounded variables (optionally integer), sparse linear
 * rows, a linear objective and a list of bilinear products. With no integer
 * variables and no products it is a linear program; with integers only it is
 * a MILP; products make it a (mixed-integer) bilinear program.
 *
 * By convention the `u` factor of a product is the one that, once fixed,
 * makes the remaining system linear (probabilities in the Markov models).
 */
class Problem {
public:
    int add_variable(double lo, double hi, std::string name = {}, bool integer = false);
    int add_binary(std::string name = {}) { return add_variable(0.0, 1.0, std::move(name), true); }
    int add_row(std::vector<Term> terms, RowSense sense, double rhs, std::string name = {}, bool strict = false);
    /// Adds w = u * v with w bounded by the interval product of the factor bounds.
    int add_product(int u, int v, std::string name = {});

    void set_objective(std::vector<Term> terms, double constant, ObjSense sense);

    int num_vars() const { return static_cast<int>(vars_.size()); }
    int num_rows() const { return static_cast<int>(rows_.size()); }
    int num_integers() const;

    const std::vector<Variable>& vars() const { return vars_; }
    std::vector<Variable>& vars() { return vars_; }
    const std::vector<Row>& rows() const { return rows_; }
    const std::vector<BilinearTerm>& products() const { return products_; }
    const std::vector<Term>& objective() const { return objective_; }
    double objective_constant() const { return objective_constant_; }
    ObjSense sense() const { return sense_; }

    Variable& var(int j) { return vars_.at(static_cast<std::size_t>(j)); }
    const Variable& var(int j) const { return vars_.at(static_cast<std::size_t>(j)); }

    double objective_value(std::span<const double> x) const;
    /// Largest violation of a row or a variable bound at x (integrality and
    /// products are not checked).
    double max_linear_violation(std::span<const double> x) const;
    /// Largest |w - u v| over all products at x.
    double max_product_violation(std::span<const double> x) const;

    /// Human-readable LP-format dump, one constraint per line.
    std::string to_lp_string() const;

private:
    std::vector<Variable> vars_;
    std::vector<Row> rows_;
    std::vector<BilinearTerm> products_;
    std::vector<Term> objective_;
    double objective_constant_ = 0.0;
    ObjSense sense_ = ObjSense::Minimize;
};

enum class Status { Optimal, Infeasible, Unbounded, GapLimit, TimeLimit };

const char* to_string(Status s);

struct SolveStats {
    std::int64_t nodes = 0;
    std::int64_t lp_iterations = 0;
    std::int64_t lp_solves = 0;
    int max_depth = 0;
    /// Children whose relaxation bound beat their parent's by more than 1e-9 (relative).
    std::int64_t bound_monotonicity_violations = 0;
    /// Node LPs the simplex could not solve (the node kept its parent's bound).
    std::int64_t lp_failures = 0;
    double seconds = 0.0;
};

struct SolveResult {
    Status status = Status::Infeasible;
    /// Objective of the incumbent in the problem's own sense.
    double objective = 0.0;
    std::vector<double> x;
    /// Proven bound in the problem's own sense (lower bound when minimising).
    double bound = 0.0;
    double gap = 0.0;
    /// LP only: row duals and reduced costs from the final basis, in the
    /// problem's own objective sense (Lagrangian: c - A^T y).
    std::vector<double> row_duals;
    std::vector<double> reduced_costs;
    SolveStats stats;

    bool has_solution() const { return !x.empty(); }
};

struct LpOptions {
    double primal_tol = 1e-9;
    double dual_tol = 1e-9;
    double pivot_tol = 1e-9;
    /// Consecutive degenerate pivots before switching to Bland's rule (0: from the start).
    int bland_after = 5000;
    std::int64_t max_iterations = 200000;
};

/**
 * Dense bounded-variable primal simplex. Integrality and products are
 * ignored (the continuous relaxation is solved). Variables may have infinite
 * bounds; an unbounded direction yields Status::Unbounded. Throws
 * NumericalFailure when the basis cannot be kept accurate.
 */
SolveResult lp_solve(const Problem& lp, const LpOptions& opts = {});

/// Same, with the variable bounds overridden.
SolveResult lp_solve(const Problem& lp, std::span<const double> lo, std::span<const double> hi,
                     std::span<const Row> extra_rows, const LpOptions& opts = {});

struct BranchAndBoundOptions {
    double rel_gap = 1e-6;
    double abs_gap = 1e-6;
    double time_limit = kInf;
    std::int64_t node_limit = 5'000'000;
    double int_tol = 1e-6;
    /// Products are accepted as satisfied when |w - u v| <= tol * (1 + |u v|).
    double product_tol = 1e-7;
    bool bound_propagation = true;
    int propagation_passes = 10;
    /// Dive into a child after branching before returning to best-first order.
    bool plunge = true;
    LpOptions lp;
};

/// Relative gap 1e-4, otherwise as BranchAndBoundOptions.
BranchAndBoundOptions defaults_bilinear();

/// Best-first branch-and-bound on LP relaxations, branching on the most
/// fractional integer variable. Throws InvalidInput if products are present.
SolveResult milp_solve(const Problem& p, const BranchAndBoundOptions& opts = {});

/**
 * Spatial branch-and-bound for mixed-integer bilinear programs. Every node
 * relaxes each product with McCormick planes over the node-local box and
 * branches first on fractional integers, then on the factor of the product
 * with the largest violation |w - u v|, bisected at the relaxation point
 * clamped to the middle 20-80% of its range. Throws UnboundedBilinearVariable
 * if a factor has an infinite bound.
 */
SolveResult bilinear_solve(const Problem& p, const BranchAndBoundOptions& opts = defaults_bilinear());

/// Picks milp_solve or bilinear_solve depending on whether products exist.
SolveResult solve(const Problem& p, const BranchAndBoundOptions& opts);

/// The four McCormick planes of w = u v over u in [u], v in [v]:
///   w >= uL v + vL u - uL vL,  w >= uU v + vU u - uU vU,
///   w <= uU v + vL u - uU vL,  w <= uL v + vU u - uL vU.
std::array<Row, 4> mccormick_envelope(int w, int u, int v, const Interval& u_bounds, const Interval& v_bounds);

/**
 * Feasibility-based bound tightening over the linear rows and products of p.
 * Returns false if some variable's domain becomes empty.
 */
bool propagate_bounds(const Problem& p, std::vector<double>& lo, std::vector<double>& hi, int passes);

} // namespace mlchain::opt
