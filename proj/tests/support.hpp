#pragma once

#include "mlchain/markov_spec.hpp"

#include <Eigen/Dense>

#include <memory>
#include <random>

namespace support {

using namespace mlchain;

inline Eigen::VectorXd vec(const Eigen::MatrixXd& M) {
    Eigen::VectorXd out(M.size());
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) out(i * M.cols() + j) = M(i, j);
    return out;
}

inline ParameterLink link(ParamTarget t, Eigen::MatrixXd A, Eigen::VectorXd b) {
    ParameterLink l;
    l.target = t;
    l.A = std::move(A);
    l.b = std::move(b);
    return l;
}

inline ParameterLink constant(ParamTarget t, const Eigen::VectorXd& b, int ell) {
    return link(t, Eigen::MatrixXd::Zero(b.size(), ell), b);
}

/// Total-reward spec with every parameter fixed and a single dummy feature.
inline MarkovProcessSpec fixed_chain(const Eigen::VectorXd& pi, const Eigen::MatrixXd& P, const Eigen::VectorXd& r,
                                     double lambda) {
    MarkovProcessSpec s;
    s.n_states = static_cast<int>(pi.size());
    s.m_features = 1;
    s.discount = lambda;
    s.feature_set = FeatureSet::box(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1));
    s.links = {constant(ParamTarget::Pi, pi, 0), constant(ParamTarget::P, vec(P), 0),
               constant(ParamTarget::Reward, r, 0)};
    s.query.kind = PropertyKind::TotalReward;
    s.query.sense = QuerySense::Max;
    return s;
}

inline Eigen::MatrixXd random_stochastic(int n, std::mt19937_64& g, double zero_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd P(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) P(i, j) = u(g) < zero_prob && j != i ? 0.0 : u(g);
        P.row(i) /= P.row(i).sum();
    }
    return P;
}

} // namespace support
