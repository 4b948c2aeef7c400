#include "mlchain/errors.hpp"
#include "mlchain/opt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mlchain::opt {

int Problem::add_variable(double lo, double hi, std::string name, bool integer) {
    if (std::isnan(lo) || std::isnan(hi)) throw InvalidInput("variable bound is NaN");
    if (lo > hi) {
        std::ostringstream os;
        os << "variable '" << name << "' has lo " << lo << " > hi " << hi;
        throw InvalidInput(os.str());
    }
    if (integer) {
        lo = std::ceil(lo - 1e-9);
        hi = std::floor(hi + 1e-9);
        if (lo > hi) throw InvalidInput("integer variable '" + name + "' has an empty domain");
    }
    vars_.push_back({lo, hi, integer, std::move(name)});
    return num_vars() - 1;
}

int Problem::add_row(std::vector<Term> terms, RowSense sense, double rhs, std::string name, bool strict) {
    for (const Term& t : terms) {
        if (t.var < 0 || t.var >= num_vars()) throw InvalidInput("row '" + name + "' references an unknown variable");
        if (!std::isfinite(t.coef)) throw InvalidInput("row '" + name + "' has a non-finite coefficient");
    }
    if (std::isnan(rhs)) throw InvalidInput("row '" + name + "' has a NaN right-hand side");
    rows_.push_back({std::move(terms), sense, rhs, std::move(name), strict});
    return num_rows() - 1;
}

int Problem::add_product(int u, int v, std::string name) {
    if (u < 0 || u >= num_vars() || v < 0 || v >= num_vars()) throw InvalidInput("product references an unknown variable");
    const Variable& U = var(u);
    const Variable& V = var(v);
    if (!std::isfinite(U.lo) || !std::isfinite(U.hi) || !std::isfinite(V.lo) || !std::isfinite(V.hi))
        throw UnboundedBilinearVariable("product '" + name + "' has a factor with an infinite bound");
    const Interval w = Interval(U.lo, U.hi) * Interval(V.lo, V.hi);
    const int id = add_variable(w.lo(), w.hi(), std::move(name));
    products_.push_back({id, u, v});
    return id;
}

void Problem::set_objective(std::vector<Term> terms, double constant, ObjSense sense) {
    for (const Term& t : terms)
        if (t.var < 0 || t.var >= num_vars()) throw InvalidInput("objective references an unknown variable");
    objective_ = std::move(terms);
    objective_constant_ = constant;
    sense_ = sense;
}

int Problem::num_integers() const {
    return static_cast<int>(std::count_if(vars_.begin(), vars_.end(), [](const Variable& v) { return v.integer; }));
}

double Problem::objective_value(std::span<const double> x) const {
    double s = objective_constant_;
    for (const Term& t : objective_) s += t.coef * x[static_cast<std::size_t>(t.var)];
    return s;
}

double Problem::max_linear_violation(std::span<const double> x) const {
    double worst = 0.0;
    for (int j = 0; j < num_vars(); ++j) {
        const double xv = x[static_cast<std::size_t>(j)];
        worst = std::max({worst, vars_[static_cast<std::size_t>(j)].lo - xv, xv - vars_[static_cast<std::size_t>(j)].hi});
    }
    for (const Row& r : rows_) {
        double s = 0.0;
        for (const Term& t : r.terms) s += t.coef * x[static_cast<std::size_t>(t.var)];
        switch (r.sense) {
        case RowSense::LessEqual: worst = std::max(worst, s - r.rhs); break;
        case RowSense::GreaterEqual: worst = std::max(worst, r.rhs - s); break;
        case RowSense::Equal: worst = std::max(worst, std::abs(s - r.rhs)); break;
        }
    }
    return worst;
}

double Problem::max_product_violation(std::span<const double> x) const {
    double worst = 0.0;
    for (const BilinearTerm& b : products_) {
        const double uv = x[static_cast<std::size_t>(b.u)] * x[static_cast<std::size_t>(b.v)];
        worst = std::max(worst, std::abs(x[static_cast<std::size_t>(b.w)] - uv));
    }
    return worst;
}

namespace {

std::string var_name(const Problem& p, int j) {
    const std::string& n = p.var(j).name;
    return n.empty() ? "x" + std::to_string(j) : n;
}

void write_terms(std::ostream& os, const Problem& p, const std::vector<Term>& terms) {
    bool first = true;
    for (const Term& t : terms) {
        if (t.coef == 0.0) continue;
        if (first) {
            if (t.coef < 0.0) os << "- ";
        } else {
            os << (t.coef < 0.0 ? " - " : " + ");
        }
        const double a = std::abs(t.coef);
        if (a != 1.0) os << a << ' ';
        os << var_name(p, t.var);
        first = false;
    }
    if (first) os << '0';
}

} // namespace

std::string Problem::to_lp_string() const {
    std::ostringstream os;
    os.precision(17);
    os << (sense_ == ObjSense::Maximize ? "Maximize" : "Minimize") << "\n obj: ";
    write_terms(os, *this, objective_);
    if (objective_constant_ != 0.0) os << (objective_constant_ < 0 ? " - " : " + ") << std::abs(objective_constant_);
    os << "\nSubject To\n";
    for (int i = 0; i < num_rows(); ++i) {
        const Row& r = rows_[static_cast<std::size_t>(i)];
        os << ' ' << (r.name.empty() ? "r" + std::to_string(i) : r.name) << ": ";
        write_terms(os, *this, r.terms);
        switch (r.sense) {
        case RowSense::LessEqual: os << (r.strict ? " < " : " <= "); break;
        case RowSense::GreaterEqual: os << (r.strict ? " > " : " >= "); break;
        case RowSense::Equal: os << " = "; break;
        }
        os << r.rhs << '\n';
    }
    if (!products_.empty()) {
        os << "\\ Bilinear products (w = u * v)\n";
        for (std::size_t k = 0; k < products_.size(); ++k) {
            const BilinearTerm& b = products_[k];
            os << " q" << k << ": " << var_name(*this, b.w) << " - [ " << var_name(*this, b.u) << " * "
               << var_name(*this, b.v) << " ] = 0\n";
        }
    }
    os << "Bounds\n";
    for (int j = 0; j < num_vars(); ++j) {
        const Variable& v = vars_[static_cast<std::size_t>(j)];
        os << ' ';
        if (std::isinf(v.lo)) os << "-inf";
        else os << v.lo;
        os << " <= " << var_name(*this, j) << " <= ";
        if (std::isinf(v.hi)) os << "+inf";
        else os << v.hi;
        os << '\n';
    }
    if (num_integers() > 0) {
        os << "General\n";
        for (int j = 0; j < num_vars(); ++j)
            if (vars_[static_cast<std::size_t>(j)].integer) os << ' ' << var_name(*this, j) << '\n';
    }
    os << "End\n";
    return os.str();
}

const char* to_string(Status s) {
    switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::GapLimit: return "GapLimit";
    case Status::TimeLimit: return "TimeLimit";
    }
    return "Unknown";
}

} // namespace mlchain::opt
