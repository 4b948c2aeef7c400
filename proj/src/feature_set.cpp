#include "mlchain/feature_set.hpp"

#include "mlchain/errors.hpp"

#include <cmath>
#include <sstream>

namespace mlchain {

FeatureSet FeatureSet::box(Eigen::VectorXd lower, Eigen::VectorXd upper) {
    FeatureSet fs;
    fs.boxes.push_back({std::move(lower), std::move(upper)});
    return fs;
}

IntervalVector FeatureSet::bounding_box() const {
    if (boxes.empty()) throw InfeasibleFeatureSet("feature set has no boxes");
    const int m = dim();
    IntervalVector out;
    out.reserve(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
        double lo = HUGE_VAL, hi = -HUGE_VAL;
        for (const Box& b : boxes) {
            lo = std::min(lo, b.lower(j));
            hi = std::max(hi, b.upper(j));
        }
        if (lo > hi) throw InfeasibleFeatureSet("feature " + std::to_string(j) + " has an empty range");
        out.emplace_back(lo, hi);
    }
    return out;
}

bool FeatureSet::contains(const Eigen::VectorXd& x, double tol) const {
    if (x.size() != dim()) return false;
    for (int j = 0; j < dim(); ++j)
        if (is_integer(j) && std::abs(x(j) - std::round(x(j))) > tol) return false;
    for (const Cut& c : cuts) {
        const double s = c.coef.dot(x);
        if (c.sense == opt::RowSense::LessEqual && s > c.rhs + tol) return false;
        if (c.sense == opt::RowSense::GreaterEqual && s < c.rhs - tol) return false;
        if (c.sense == opt::RowSense::Equal && std::abs(s - c.rhs) > tol) return false;
    }
    for (const Box& b : boxes)
        if (((x - b.lower).array() >= -tol).all() && ((b.upper - x).array() >= -tol).all()) return true;
    return false;
}

std::vector<std::string> FeatureSet::validate() const {
    std::vector<std::string> issues;
    if (boxes.empty()) {
        issues.emplace_back("feature set: no boxes");
        return issues;
    }
    const auto m = boxes.front().lower.size();
    for (std::size_t k = 0; k < boxes.size(); ++k) {
        const Box& b = boxes[k];
        std::ostringstream where;
        where << "feature set: box " << k;
        if (b.lower.size() != m || b.upper.size() != m) {
            issues.push_back(where.str() + " dimension mismatch");
            continue;
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            if (std::isnan(b.lower(j)) || std::isnan(b.upper(j)) || b.lower(j) > b.upper(j))
                issues.push_back(where.str() + " is empty in feature " + std::to_string(j));
            if (!std::isfinite(b.lower(j)) || !std::isfinite(b.upper(j)))
                issues.push_back(where.str() + " is unbounded in feature " + std::to_string(j));
        }
    }
    for (std::size_t k = 0; k < cuts.size(); ++k)
        if (cuts[k].coef.size() != m) issues.push_back("feature set: cut " + std::to_string(k) + " dimension mismatch");
    if (!integer.empty() && static_cast<Eigen::Index>(integer.size()) != m)
        issues.emplace_back("feature set: integrality flags dimension mismatch");
    return issues;
}

FeatureVars encode_feature_set(opt::Problem& p, const FeatureSet& fs, const std::string& prefix) {
    const auto issues = fs.validate();
    if (!issues.empty()) throw InfeasibleFeatureSet(issues.front());
    FeatureVars fv;
    fv.bounds = fs.bounding_box();
    const int m = fs.dim();
    for (int j = 0; j < m; ++j) {
        const Interval& b = fv.bounds[static_cast<std::size_t>(j)];
        fv.x.push_back(p.add_variable(b.lo(), b.hi(), prefix + std::to_string(j), fs.is_integer(j)));
        if (fs.is_integer(j)) {
            const auto& v = p.var(fv.x.back());
            if (v.lo > v.hi) throw InfeasibleFeatureSet("integer feature " + std::to_string(j) + " has no integer value");
            fv.bounds[static_cast<std::size_t>(j)] = Interval(v.lo, v.hi);
        }
    }
    if (fs.boxes.size() > 1) {
        std::vector<opt::Term> pick;
        std::vector<std::vector<opt::Term>> sum(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) sum[static_cast<std::size_t>(j)].push_back({fv.x[static_cast<std::size_t>(j)], -1.0});
        for (std::size_t k = 0; k < fs.boxes.size(); ++k) {
            const auto& box = fs.boxes[k];
            const int z = p.add_binary(prefix + "_box" + std::to_string(k));
            pick.push_back({z, 1.0});
            for (int j = 0; j < m; ++j) {
                const double lo = box.lower(j), hi = box.upper(j);
                const int c = p.add_variable(std::min(0.0, lo), std::max(0.0, hi),
                                             prefix + std::to_string(j) + "_b" + std::to_string(k));
                p.add_row({{c, 1.0}, {z, -lo}}, opt::RowSense::GreaterEqual, 0.0);
                p.add_row({{c, 1.0}, {z, -hi}}, opt::RowSense::LessEqual, 0.0);
                sum[static_cast<std::size_t>(j)].push_back({c, 1.0});
            }
        }
        p.add_row(pick, opt::RowSense::Equal, 1.0, prefix + "_onebox");
        for (int j = 0; j < m; ++j) p.add_row(sum[static_cast<std::size_t>(j)], opt::RowSense::Equal, 0.0);
    }
    for (std::size_t k = 0; k < fs.cuts.size(); ++k) {
        const auto& c = fs.cuts[k];
        std::vector<opt::Term> terms;
        for (int j = 0; j < m; ++j)
            if (c.coef(j) != 0.0) terms.push_back({fv.x[static_cast<std::size_t>(j)], c.coef(j)});
        p.add_row(terms, c.sense, c.rhs, prefix + "_cut" + std::to_string(k));
    }
    return fv;
}

} // namespace mlchain
