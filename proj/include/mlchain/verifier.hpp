#pragma once

#include "mlchain/interval.hpp"
#include "mlchain/markov_spec.hpp"
#include "mlchain/models.hpp"
#include "mlchain/opt.hpp"

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mlchain {

/// Bound stages of the pipeline, in the order they run.
enum class Stage { Theta, Affine, VInit, VTighten };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageTimings {
    double theta = 0.0;
    double affine = 0.0;
    double v_init = 0.0;
    double v_tighten = 0.0;
    double solve = 0.0;
    double total = 0.0;
};

/**
 * Bounds produced by each stage. For reachability and hitting time `pi`,
 * `M` and `c` hold pi~, vec(Q) and vec(R) (c is empty for hitting time);
 * for total reward they hold pi, vec(P) and r. Entries a stage did not
 * touch are left unbounded (or at the stochastic box for probabilities).
 */
struct BoundsLedger {
    IntervalVector theta;
    IntervalVector pi;
    IntervalVector M;
    IntervalVector c;
    IntervalVector v_init;
    IntervalVector v;
    bool hull_certified = false;
    double spectral_radius = std::numeric_limits<double>::quiet_NaN();
    int gauss_seidel_sweeps = 0;
    /// Scale of the initial value bound: 1/(1 - lambda), or 1/epsilon.
    double gamma = 0.0;
    double epsilon = 1e-6;
    std::vector<Stage> completed;
    StageTimings timings;
};

struct VerifyOptions {
    /// Overrides the sense stored in the query.
    std::optional<QuerySense> sense;
    double rel_gap = 1e-4;
    double abs_gap = 1e-6;
    double time_limit = std::numeric_limits<double>::infinity();
    /// Run the bound stages only.
    bool bounds_only = false;
    /// First disabled stage; every later stage is disabled too.
    std::optional<Stage> ablate;
    EncodeOptions encode;
    /// Strict substochastic offset: rows of Q sum to at most 1 - epsilon.
    double epsilon = 1e-6;
    /// |v| bound used when the value-bound stages are ablated.
    double v_fallback = 1e6;
    /// Keep fixed parameters as variables with products and skip the
    /// closed-form shortcut (the undowngraded program).
    bool force_bilinear = false;
    /// When set, the final program is written here in LP format.
    std::string dump_lp_path;
};

enum class VerificationStatus { Optimal, Feasible, Infeasible, TimeLimit, GapLimit, BoundsOnly };

const char* to_string(VerificationStatus s);

/// Feature vector attaining the reported value, with everything rebuilt from
/// direct model evaluation (not from the solver's variables).
struct Witness {
    Eigen::VectorXd x;
    Eigen::VectorXd theta;
    Eigen::VectorXd pi;
    Eigen::MatrixXd M;  // P, or Q
    Eigen::VectorXd c;  // r, or R 1, or 1
    Eigen::VectorXd v;
    double value = 0.0;
    /// Features nudged off strict split boundaries after the solve.
    bool repaired = false;
};

struct VerificationResult {
    PropertyQuery query;
    ProblemClass problem_class = ProblemClass::FullBilinear;
    VerificationStatus status = VerificationStatus::BoundsOnly;
    double value = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();
    double gap = std::numeric_limits<double>::quiet_NaN();
    /// Some sigmoid/softmax envelope took part, so `value` bounds the true
    /// optimum from outside rather than equalling it.
    bool outer_bound = false;
    double envelope_gap = 0.0;
    std::optional<Witness> witness;
    BoundsLedger ledger;
    opt::SolveStats stats;
    std::string message;
};

/// Min and max of every model output over the feature set (2 * ell MILPs,
/// run concurrently). Outputs that no link uses are left unbounded.
IntervalVector theta_bounds(const MarkovProcessSpec& spec, const EncodeOptions& eo = {},
                            const opt::BranchAndBoundOptions& bo = {}, double* envelope_gap = nullptr);

/**
 * Interval image of theta under the link. Probability targets are then
 * intersected with [0, 1]; an empty intersection throws InfeasibleEnclosure
 * naming the entry.
 */
IntervalVector propagate_affine(const IntervalVector& theta, const ParameterLink& link);

/// Value bounds from the ledger's parameter bounds. Throws InvalidParameter
/// for a total-reward discount outside (0, 1).
IntervalVector initial_v_bounds(const MarkovProcessSpec& spec, const BoundsLedger& ledger);

struct TightenedBounds {
    IntervalVector v;
    bool hull_certified = false;
    double spectral_radius = std::numeric_limits<double>::quiet_NaN();
    int sweeps = 0;
};

/// Interval Gauss-Seidel on (I - lambda P) v = r, (I - Q) v = R 1 or
/// (I - Q) v = 1 starting from ledger.v_init.
TightenedBounds tighten_v_bounds(const MarkovProcessSpec& spec, const BoundsLedger& ledger);

VerificationResult verify(const MarkovProcessSpec& spec, const VerifyOptions& opts = {});

/// verify with the earliest of `disabled` and everything after it switched off.
VerificationResult ablation_run(const MarkovProcessSpec& spec, const std::vector<Stage>& disabled,
                                VerifyOptions opts = {});

/// Closed-form objective at a feature vector: evaluates the models, rebuilds
/// the parameters and solves the value system. Throws InvalidInput when the
/// parameters at x do not define a valid chain.
Witness evaluate_at(const MarkovProcessSpec& spec, const Eigen::VectorXd& x, double epsilon = 1e-6);

} // namespace mlchain
