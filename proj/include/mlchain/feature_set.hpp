#pragma once

#include "mlchain/interval.hpp"
#include "mlchain/opt.hpp"

#include <Eigen/Dense>

#include <vector>

namespace mlchain {

/**
 * Feature domain: a finite union of boxes, optional linear cuts shared by
 * every box, and per-feature integrality flags.
 */
struct FeatureSet {
    struct Box {
        Eigen::VectorXd lower;
        Eigen::VectorXd upper;
    };
    struct Cut {
        Eigen::VectorXd coef;
        opt::RowSense sense = opt::RowSense::LessEqual;
        double rhs = 0.0;
    };

    std::vector<Box> boxes;
    std::vector<Cut> cuts;
    std::vector<bool> integer;  // empty means all continuous

    static FeatureSet box(Eigen::VectorXd lower, Eigen::VectorXd upper);

    int dim() const { return boxes.empty() ? 0 : static_cast<int>(boxes.front().lower.size()); }
    bool is_integer(int j) const { return !integer.empty() && integer[static_cast<std::size_t>(j)]; }
    /// Component-wise hull of all boxes.
    IntervalVector bounding_box() const;
    bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;
    /// Problems found in the set; empty when it is well formed.
    std::vector<std::string> validate() const;
};

/// Feature variables added to a problem, with the bounds they were given.
struct FeatureVars {
    std::vector<int> x;
    IntervalVector bounds;
};

/**
 * Adds x in the feature set to p. A single box becomes plain bounds; several
 * boxes use the disaggregated (convex hull) disjunction with one selector
 * binary per box. Integer flags mark x integer.
 */
FeatureVars encode_feature_set(opt::Problem& p, const FeatureSet& fs, const std::string& prefix = "x");

} // namespace mlchain
