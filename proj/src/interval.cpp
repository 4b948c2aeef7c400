#include "mlchain/interval.hpp"

#include "mlchain/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mlchain {

Interval::Interval(double lo, double hi) : lo_(lo), hi_(hi) {
    if (std::isnan(lo) || std::isnan(hi) || lo > hi) {
        std::ostringstream os;
        os << "inverted or NaN interval [" << lo << ", " << hi << "]";
        throw InvalidInterval(os.str());
    }
}

double Interval::mag() const { return std::max(std::abs(lo_), std::abs(hi_)); }

Interval operator+(const Interval& a, const Interval& b) { return {a.lo() + b.lo(), a.hi() + b.hi()}; }

Interval operator-(const Interval& a, const Interval& b) { return {a.lo() - b.hi(), a.hi() - b.lo()}; }

Interval operator-(const Interval& a) { return {-a.hi(), -a.lo()}; }

namespace {

// 0 * inf is taken as 0 so that width-0 zero intervals annihilate unbounded ones.
double mul0(double x, double y) {
    if (x == 0.0 || y == 0.0) return 0.0;
    return x * y;
}

} // namespace

Interval operator*(const Interval& a, const Interval& b) {
    const double p1 = mul0(a.lo(), b.lo());
    const double p2 = mul0(a.lo(), b.hi());
    const double p3 = mul0(a.hi(), b.lo());
    const double p4 = mul0(a.hi(), b.hi());
    return {std::min({p1, p2, p3, p4}), std::max({p1, p2, p3, p4})};
}

Interval operator*(double s, const Interval& a) { return Interval::point(s) * a; }

Interval operator/(const Interval& a, const Interval& b) {
    if (b.contains_zero()) {
        std::ostringstream os;
        os << "division by interval containing zero " << b;
        throw DivisionByZeroInterval(os.str());
    }
    return a * Interval(1.0 / b.hi(), 1.0 / b.lo());
}

std::optional<Interval> intersect(const Interval& a, const Interval& b) {
    const double lo = std::max(a.lo(), b.lo());
    const double hi = std::min(a.hi(), b.hi());
    if (lo > hi) return std::nullopt;
    return Interval(lo, hi);
}

Interval hull(const Interval& a, const Interval& b) {
    return {std::min(a.lo(), b.lo()), std::max(a.hi(), b.hi())};
}

std::ostream& operator<<(std::ostream& os, const Interval& iv) {
    return os << '[' << iv.lo() << ", " << iv.hi() << ']';
}

bool contains(const IntervalVector& a, const IntervalVector& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].contains(b[i], tol)) return false;
    return true;
}

IntervalMatrix::IntervalMatrix(std::size_t rows, std::size_t cols, Interval fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

IntervalMatrix::IntervalMatrix(const Eigen::MatrixXd& lower, const Eigen::MatrixXd& upper)
    : rows_(static_cast<std::size_t>(lower.rows())), cols_(static_cast<std::size_t>(lower.cols())) {
    if (lower.rows() != upper.rows() || lower.cols() != upper.cols())
        throw InvalidParameter("interval matrix bounds differ in shape");
    data_.reserve(rows_ * cols_);
    for (Eigen::Index i = 0; i < lower.rows(); ++i)
        for (Eigen::Index j = 0; j < lower.cols(); ++j) data_.emplace_back(lower(i, j), upper(i, j));
}

Eigen::MatrixXd IntervalMatrix::lower() const {
    Eigen::MatrixXd m(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j).lo();
    return m;
}

Eigen::MatrixXd IntervalMatrix::upper() const {
    Eigen::MatrixXd m(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j).hi();
    return m;
}

IntervalVector gauss_seidel_solve(const IntervalMatrix& A, const IntervalVector& b, const IntervalVector& x0,
                                  const GaussSeidelOptions& opts) {
    int sweeps = 0;
    return gauss_seidel_solve(A, b, x0, opts, sweeps);
}

IntervalVector gauss_seidel_solve(const IntervalMatrix& A, const IntervalVector& b, const IntervalVector& x0,
                                  const GaussSeidelOptions& opts, int& sweeps) {
    const std::size_t n = A.rows();
    if (A.cols() != n || b.size() != n || x0.size() != n)
        throw InvalidParameter("gauss_seidel_solve: dimension mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (A(i, i).contains_zero()) {
            std::ostringstream os;
            os << "diagonal entry " << i << " " << A(i, i) << " contains zero";
            throw DivisionByZeroInterval(os.str());
        }
    }

    IntervalVector x = x0;
    sweeps = 0;
    for (int it = 0; it < opts.max_iter; ++it) {
        double max_change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            Interval acc = b[i];
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                acc = acc - A(i, j) * x[j];
            }
            const Interval y = acc / A(i, i);
            auto next = intersect(x[i], y);
            if (!next) {
                // The arithmetic is not outward rounded: a miss within rounding
                // error of a point solution on the boundary of x0 is a touch.
                const double sep = y.lo() > x[i].hi() ? y.lo() - x[i].hi() : x[i].lo() - y.hi();
                const double scale = 1.0 + std::max(std::abs(x[i].lo()), std::abs(x[i].hi()));
                if (sep <= opts.touch_tol * scale)
                    next = Interval::point(y.lo() > x[i].hi() ? x[i].hi() : x[i].lo());
            }
            if (!next) {
                std::ostringstream os;
                os << "empty intersection at component " << i << ": " << x[i] << " vs " << y;
                throw InfeasibleEnclosure(os.str(), static_cast<int>(i));
            }
            const double change = x[i].width() - next->width();
            if (std::isfinite(change)) max_change = std::max(max_change, change);
            else if (std::isinf(x[i].width()) && std::isfinite(next->width())) max_change = HUGE_VAL;
            x[i] = *next;
        }
        ++sweeps;
        if (max_change < opts.tol) break;
    }
    return x;
}

double spectral_radius(const Eigen::MatrixXd& M, const SpectralRadiusOptions& opts) {
    const Eigen::Index n = M.rows();
    if (M.cols() != n) throw InvalidParameter("spectral_radius: matrix is not square");
    if (n == 0) return 0.0;
    if ((M.array() < 0.0).any()) throw InvalidParameter("spectral_radius: matrix has negative entries");

    const double max_row_sum = M.rowwise().sum().maxCoeff();
    if (max_row_sum == 0.0) return 0.0;

    // A positive diagonal shift keeps the Perron root strictly dominant in
    // modulus, so periodic (e.g. permutation-like) matrices still converge.
    const double shift = std::max(opts.tol, 0.5 * max_row_sum);

    Eigen::VectorXd x = Eigen::VectorXd::Ones(n);
    double estimate = max_row_sum;
    double residual = HUGE_VAL;
    for (int it = 0; it < opts.max_iter; ++it) {
        Eigen::VectorXd y = M * x;
        double cw_lo = HUGE_VAL;
        double cw_hi = 0.0;
        bool positive = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (x(i) <= 0.0) {
                positive = false;
                break;
            }
            const double ratio = y(i) / x(i);
            cw_lo = std::min(cw_lo, ratio);
            cw_hi = std::max(cw_hi, ratio);
        }
        const double norm = x.lpNorm<Eigen::Infinity>();
        const double rayleigh = x.dot(y) / x.squaredNorm();
        residual = (y - rayleigh * x).lpNorm<Eigen::Infinity>() / norm;
        estimate = positive ? 0.5 * (cw_lo + cw_hi) : rayleigh;
        if (positive && cw_hi - cw_lo <= opts.tol) return estimate;
        if (residual <= opts.tol) return rayleigh;

        Eigen::VectorXd next = y + shift * x;
        next /= next.lpNorm<Eigen::Infinity>();
        x = std::move(next);
    }
    throw NonConvergence("spectral_radius: power iteration did not converge", estimate, residual);
}

bool is_interval_m_matrix(const Eigen::MatrixXd& p_max, double lambda, const SpectralRadiusOptions& opts) {
    if (!(lambda > 0.0 && lambda <= 1.0)) throw InvalidParameter("is_interval_m_matrix: lambda must lie in (0, 1]");
    const double rho = spectral_radius(p_max, opts);
    return rho <= 1.0 / lambda + opts.tol;
}

} // namespace mlchain
