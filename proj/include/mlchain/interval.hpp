#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

namespace mlchain {

/**
 * Closed real interval [lo, hi].
 *
 * Arithmetic returns the exact hull of the pointwise results in double
 * precision (round-to-nearest, no outward rounding). Width-0 intervals are
 * ordinary values and flow through the same code.
 */
class Interval {
public:
    constexpr Interval() = default;
    Interval(double lo, double hi);

    static Interval point(double v) { return Interval(v, v); }

    double lo() const { return lo_; }
    double hi() const { return hi_; }
    double width() const { return hi_ - lo_; }
    double mid() const { return 0.5 * (lo_ + hi_); }
    double mag() const;

    bool contains(double x, double tol = 0.0) const { return x >= lo_ - tol && x <= hi_ + tol; }
    bool contains(const Interval& other, double tol = 0.0) const {
        return other.lo_ >= lo_ - tol && other.hi_ <= hi_ + tol;
    }
    bool contains_zero() const { return lo_ <= 0.0 && hi_ >= 0.0; }
    bool is_point() const { return lo_ == hi_; }

    bool operator==(const Interval&) const = default;

private:
    double lo_ = 0.0;
    double hi_ = 0.0;
};

Interval operator+(const Interval& a, const Interval& b);
Interval operator-(const Interval& a, const Interval& b);
Interval operator-(const Interval& a);
Interval operator*(const Interval& a, const Interval& b);
Interval operator*(double s, const Interval& a);
/// Throws DivisionByZeroInterval when 0 lies in b.
Interval operator/(const Interval& a, const Interval& b);

inline Interval interval_add(const Interval& a, const Interval& b) { return a + b; }
inline Interval interval_sub(const Interval& a, const Interval& b) { return a - b; }
inline Interval interval_mul(const Interval& a, const Interval& b) { return a * b; }
inline Interval interval_div(const Interval& a, const Interval& b) { return a / b; }

/// Empty optional when the intervals are disjoint.
std::optional<Interval> intersect(const Interval& a, const Interval& b);
Interval hull(const Interval& a, const Interval& b);

std::ostream& operator<<(std::ostream& os, const Interval& iv);

using IntervalVector = std::vector<Interval>;

/// Component-wise containment of b in a.
bool contains(const IntervalVector& a, const IntervalVector& b, double tol = 0.0);

/// Rectangular matrix of intervals, row-major.
class IntervalMatrix {
public:
    IntervalMatrix() = default;
    IntervalMatrix(std::size_t rows, std::size_t cols, Interval fill = Interval());
    /// Element-wise [lower, upper]; throws InvalidInterval if any lower > upper.
    IntervalMatrix(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper);

    static IntervalMatrix point(const Eigen::MatrixXd& m) { return IntervalMatrix(m, m); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    Interval& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const Interval& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    Eigen::MatrixXd lower() const;
    Eigen::MatrixXd upper() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Interval> data_;
};

struct GaussSeidelOptions {
    int max_iter = 100;
    /// Stop when the largest change of any component width in a sweep is below tol.
    double tol = 1e-9;
    /// Relative separation below which disjoint intervals count as touching.
    double touch_tol = 1e-12;
};

/**
 * Interval Gauss-Seidel refinement of an enclosure of the solution set of
 * A x = b, A in [A], b in [b]. Each sweep computes
 *     y_i = (b_i - sum_{j<i} A_ij x_j^new - sum_{j>i} A_ij x_j^old) / A_ii
 * and intersects x_i with y_i. Every point solution that lies in x0 also lies
 * in the result, and the result is contained in x0.
 *
 * Throws DivisionByZeroInterval if a diagonal interval contains 0 and
 * InfeasibleEnclosure if an intersection becomes empty.
 */
IntervalVector gauss_seidel_solve(const IntervalMatrix& A, const IntervalVector& b, const IntervalVector& x0,
                                  const GaussSeidelOptions& opts = {});

/// Same as above; also reports the number of sweeps performed.
IntervalVector gauss_seidel_solve(const IntervalMatrix& A, const IntervalVector& b, const IntervalVector& x0,
                                  const GaussSeidelOptions& opts, int& sweeps);

struct SpectralRadiusOptions {
    double tol = 1e-10;
    int max_iter = 10000;
};

/**
 * Perron root of a nonnegative square matrix by shifted power iteration.
 * Convergence is declared when the Collatz-Wielandt bracket
 * [min_i (Mx)_i/x_i, max_i (Mx)_i/x_i] is narrower than tol, or when the
 * eigen-residual falls below tol. Throws NonConvergence otherwise.
 */
double spectral_radius(const Eigen::MatrixXd& M, const SpectralRadiusOptions& opts = {});

/**
 * Whether I - lambda * P is an interval M-matrix for every P with
 * 0 <= P <= p_max, i.e. rho(p_max) <= 1 / lambda (up to the spectral radius
 * tolerance). lambda must lie in (0, 1]; lambda = 1 covers the substochastic
 * I - Q case.
 */
bool is_interval_m_matrix(const Eigen::MatrixXd& p_max, double lambda, const SpectralRadiusOptions& opts = {});

} // namespace mlchain
