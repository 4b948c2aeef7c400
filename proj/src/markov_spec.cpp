#include "mlchain/markov_spec.hpp"

#include "mlchain/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mlchain {

const char* to_string(ParamTarget t) {
    switch (t) {
    case ParamTarget::Pi: return "pi";
    case ParamTarget::P: return "P";
    case ParamTarget::Reward: return "r";
    case ParamTarget::PiTilde: return "pi_tilde";
    case ParamTarget::Q: return "Q";
    case ParamTarget::R: return "R";
    }
    return "?";
}

ParamTarget param_target_from_string(const std::string& s) {
    for (ParamTarget t : {ParamTarget::Pi, ParamTarget::P, ParamTarget::Reward, ParamTarget::PiTilde, ParamTarget::Q,
                          ParamTarget::R})
        if (s == to_string(t)) return t;
    throw InvalidInput("unknown parameter target '" + s + "'");
}

const char* to_string(PropertyKind k) {
    switch (k) {
    case PropertyKind::TotalReward: return "total_reward";
    case PropertyKind::Reachability: return "reachability";
    case PropertyKind::HittingTime: return "hitting_time";
    }
    return "?";
}

const char* to_string(QuerySense s) {
    switch (s) {
    case QuerySense::Min: return "min";
    case QuerySense::Max: return "max";
    case QuerySense::Feasibility: return "feasibility";
    }
    return "?";
}

PropertyKind property_kind_from_string(const std::string& s) {
    for (PropertyKind k : {PropertyKind::TotalReward, PropertyKind::Reachability, PropertyKind::HittingTime})
        if (s == to_string(k)) return k;
    throw InvalidInput("unknown property kind '" + s + "'");
}

QuerySense query_sense_from_string(const std::string& s) {
    for (QuerySense q : {QuerySense::Min, QuerySense::Max, QuerySense::Feasibility})
        if (s == to_string(q)) return q;
    throw InvalidInput("unknown query sense '" + s + "'");
}

const char* to_string(ProblemClass c) {
    switch (c) {
    case ProblemClass::FullBilinear: return "FullBilinear";
    case ProblemClass::LinearObjBilinearCon: return "LinearObjBilinearCon";
    case ProblemClass::BilinearObjLinearCon: return "BilinearObjLinearCon";
    case ProblemClass::BilinearObjBilinearCon: return "BilinearObjBilinearCon";
    case ProblemClass::LinearLinear: return "LinearLinear";
    case ProblemClass::LinearObjBilinearCon2: return "LinearObjBilinearCon2";
    case ProblemClass::ValueClosedForm: return "ValueClosedForm";
    }
    return "?";
}

int MarkovProcessSpec::theta_dim() const {
    int l = 0;
    for (const auto& m : models)
        if (m) l += m->arity();
    return l;
}

int MarkovProcessSpec::arity(ParamTarget t) const {
    const int n = n_states;
    const int nt = static_cast<int>(query.transient_set.size());
    const int ns = static_cast<int>(query.target_set.size());
    switch (t) {
    case ParamTarget::Pi:
    case ParamTarget::Reward: return n;
    case ParamTarget::P: return n * n;
    case ParamTarget::PiTilde: return nt;
    case ParamTarget::Q: return nt * nt;
    case ParamTarget::R: return nt * ns;
    }
    return 0;
}

const ParameterLink* MarkovProcessSpec::link(ParamTarget t) const {
    for (const auto& l : links)
        if (l.target == t) return &l;
    return nullptr;
}

namespace {

bool is_probability(ParamTarget t) { return t != ParamTarget::Reward; }

ParameterLink select_rows(const ParameterLink& src, ParamTarget target, const std::vector<int>& rows) {
    ParameterLink out;
    out.target = target;
    out.A.resize(static_cast<Eigen::Index>(rows.size()), src.A.cols());
    out.b.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out.A.row(static_cast<Eigen::Index>(k)) = src.A.row(rows[k]);
        out.b(static_cast<Eigen::Index>(k)) = src.b(rows[k]);
    }
    return out;
}

bool range_ok(const std::vector<int>& s, int n) {
    return std::all_of(s.begin(), s.end(), [n](int i) { return i >= 0 && i < n; });
}

} // namespace

std::vector<std::string> validate(const MarkovProcessSpec& spec) {
    std::vector<std::string> out;
    const int n = spec.n_states;
    const int ell = spec.theta_dim();
    const PropertyQuery& q = spec.query;
    const bool transient = q.kind != PropertyKind::TotalReward;

    if (n < 1) out.emplace_back("states: must be positive");
    for (const auto& issue : spec.feature_set.validate()) out.push_back(issue);
    if (spec.feature_set.dim() != spec.m_features)
        out.push_back("features: feature set has dimension " + std::to_string(spec.feature_set.dim()) + ", expected " +
                      std::to_string(spec.m_features));
    for (std::size_t k = 0; k < spec.models.size(); ++k) {
        const auto& m = spec.models[k];
        if (!m) {
            out.push_back("model " + std::to_string(k) + ": missing");
            continue;
        }
        if (m->n_features() != spec.m_features)
            out.push_back("model " + std::to_string(k) + ": expects " + std::to_string(m->n_features()) +
                          " features, spec has " + std::to_string(spec.m_features));
    }
    if (q.kind == PropertyKind::TotalReward && !(spec.discount > 0.0 && spec.discount < 1.0))
        out.emplace_back("discount: must lie in (0, 1)");
    if (std::isnan(q.w_min) || std::isnan(q.w_max) || q.w_min > q.w_max)
        out.emplace_back("query: w_min exceeds w_max");

    if (transient) {
        if (!range_ok(q.target_set, n) || !range_ok(q.transient_set, n))
            out.emplace_back("query: state index out of range");
        std::set<int> s(q.target_set.begin(), q.target_set.end()), t(q.transient_set.begin(), q.transient_set.end());
        if (s.size() != q.target_set.size() || t.size() != q.transient_set.size())
            out.emplace_back("query: repeated state in target or transient set");
        for (int i : s)
            if (t.count(i)) {
                out.emplace_back("query: target and transient sets are not disjoint");
                break;
            }
        if (t.empty()) out.emplace_back("query: transient set is empty");
        if (q.kind == PropertyKind::Reachability && s.empty()) out.emplace_back("query: target set is empty");
    }

    // Required links and duplicates.
    std::set<ParamTarget> seen;
    for (const auto& l : spec.links) {
        if (!seen.insert(l.target).second) out.push_back(std::string(to_string(l.target)) + " link given twice");
    }
    auto has = [&](ParamTarget t) { return seen.count(t) > 0; };
    if (!transient) {
        for (ParamTarget t : {ParamTarget::Pi, ParamTarget::P, ParamTarget::Reward})
            if (!has(t)) out.push_back(std::string(to_string(t)) + " link missing");
        for (ParamTarget t : {ParamTarget::PiTilde, ParamTarget::Q, ParamTarget::R})
            if (has(t)) out.push_back(std::string(to_string(t)) + " link is not used by total reward");
    } else {
        if (!has(ParamTarget::PiTilde) && !has(ParamTarget::Pi)) out.emplace_back("pi_tilde link missing (or pi)");
        if (!has(ParamTarget::Q) && !has(ParamTarget::P)) out.emplace_back("Q link missing (or P)");
        if (q.kind == PropertyKind::Reachability && !has(ParamTarget::R) && !has(ParamTarget::P))
            out.emplace_back("R link missing (or P)");
        if (q.kind == PropertyKind::HittingTime && has(ParamTarget::R))
            out.emplace_back("R link is not used by hitting time");
        if (has(ParamTarget::Reward)) out.emplace_back("r link is not used by " + std::string(to_string(q.kind)));
    }

    for (const auto& l : spec.links) {
        const std::string name = to_string(l.target);
        const int want = spec.arity(l.target);
        if (l.A.rows() != want || l.b.size() != want) {
            out.push_back(name + " link arity: expected " + std::to_string(want) + " rows, got " +
                          std::to_string(l.A.rows()) + " (b has " + std::to_string(l.b.size()) + ")");
            continue;
        }
        if (l.A.cols() != ell) {
            out.push_back(name + " link columns: expected " + std::to_string(ell) + " model outputs, got " +
                          std::to_string(l.A.cols()));
            continue;
        }
        if (!l.A.allFinite() || !l.b.allFinite()) {
            out.push_back(name + " link has non-finite entries");
            continue;
        }
        if (is_probability(l.target))
            for (Eigen::Index k = 0; k < l.b.size(); ++k)
                if (l.row_fixed(k) && (l.b(k) < 0.0 || l.b(k) > 1.0))
                    out.push_back(name + " link entry " + std::to_string(k) + " is the constant " +
                                  std::to_string(l.b(k)) + ", outside [0, 1]");
    }

    for (std::size_t k = 0; k < spec.ineqs.size(); ++k) {
        const auto& iq = spec.ineqs[k];
        const std::string name = std::string(to_string(iq.target)) + " inequality " + std::to_string(k);
        if (iq.C.cols() != spec.arity(iq.target)) {
            out.push_back(name + ": expected " + std::to_string(spec.arity(iq.target)) + " columns, got " +
                          std::to_string(iq.C.cols()));
            continue;
        }
        if (iq.d.size() != iq.C.rows()) {
            out.push_back(name + ": C has " + std::to_string(iq.C.rows()) + " rows but d has " +
                          std::to_string(iq.d.size()));
            continue;
        }
        if (!iq.C.allFinite() || iq.d.hasNaN()) {
            out.push_back(name + ": non-finite entries");
            continue;
        }
        const ParameterLink* l = spec.link(iq.target);
        if (l && l->A.rows() == iq.C.cols() && l->fixed()) {
            const Eigen::VectorXd lhs = iq.C * l->b;
            for (Eigen::Index r = 0; r < lhs.size(); ++r)
                if (lhs(r) > iq.d(r) + 1e-9 * (1.0 + std::abs(iq.d(r))))
                    out.push_back(name + ": row " + std::to_string(r) + " is violated by the constant link");
        }
        if (transient && (iq.target == ParamTarget::P || iq.target == ParamTarget::Pi) && out.empty()) {
            // Only entries that survive the restriction to T may appear.
            try {
                const TransientLinks tl = restrict_to_transient(spec);
                std::vector<bool> kept(static_cast<std::size_t>(iq.C.cols()), false);
                auto mark = [&](const std::vector<int>& src) {
                    for (int s : src)
                        if (s >= 0) kept[static_cast<std::size_t>(s)] = true;
                };
                if (iq.target == ParamTarget::P) {
                    mark(tl.q_source);
                    mark(tl.r_source);
                } else {
                    mark(tl.pi_source);
                }
                for (Eigen::Index c = 0; c < iq.C.cols(); ++c)
                    if (!kept[static_cast<std::size_t>(c)] && (iq.C.col(c).array() != 0.0).any()) {
                        out.push_back(name + ": references entry " + std::to_string(c) +
                                      " outside the transient program");
                        break;
                    }
            } catch (const InvalidQuery&) {
            }
        }
    }

    if (!range_ok(spec.absorbing, n)) out.emplace_back("absorbing: state index out of range");
    else if (const ParameterLink* P = spec.link(ParamTarget::P); P && P->A.rows() == n * n && P->b.size() == n * n) {
        for (int a : spec.absorbing)
            for (int j = 0; j < n; ++j) {
                const int k = a * n + j;
                if (!P->row_fixed(k) || P->b(k) != (j == a ? 1.0 : 0.0)) {
                    out.push_back("absorbing state " + std::to_string(a) + ": P row is not fixed to the unit vector");
                    break;
                }
            }
    }
    return out;
}

TransientLinks restrict_to_transient(const MarkovProcessSpec& spec) {
    const PropertyQuery& q = spec.query;
    if (q.kind == PropertyKind::TotalReward) throw InvalidQuery("restrict_to_transient: total-reward query");
    if (q.transient_set.empty()) throw InvalidQuery("restrict_to_transient: transient set is empty");
    const int n = spec.n_states;
    if (!range_ok(q.transient_set, n) || !range_ok(q.target_set, n))
        throw InvalidQuery("restrict_to_transient: state index out of range");
    const auto& T = q.transient_set;
    const auto& S = q.target_set;
    const auto nt = T.size(), ns = S.size();

    TransientLinks out;
    const ParameterLink* P = spec.link(ParamTarget::P);
    const ParameterLink* pi = spec.link(ParamTarget::Pi);
    auto need = [](const ParameterLink* l, const char* what) {
        if (!l) throw InvalidQuery(std::string("restrict_to_transient: no ") + what + " link to restrict");
    };

    if (const ParameterLink* Q = spec.link(ParamTarget::Q)) {
        out.Q = *Q;
        out.q_source.assign(nt * nt, -1);
    } else {
        need(P, "P");
        for (int i : T)
            for (int j : T) out.q_source.push_back(i * n + j);
        out.Q = select_rows(*P, ParamTarget::Q, out.q_source);
    }

    if (q.kind == PropertyKind::Reachability) {
        if (const ParameterLink* R = spec.link(ParamTarget::R)) {
            out.R = *R;
            out.r_source.assign(nt * ns, -1);
        } else {
            need(P, "P");
            for (int i : T)
                for (int j : S) out.r_source.push_back(i * n + j);
            out.R = select_rows(*P, ParamTarget::R, out.r_source);
        }
    } else {
        out.R.target = ParamTarget::R;
        out.R.A.resize(0, spec.theta_dim());
        out.R.b.resize(0);
    }

    if (const ParameterLink* pt = spec.link(ParamTarget::PiTilde)) {
        out.pi_tilde = *pt;
        out.pi_source.assign(nt, -1);
    } else {
        need(pi, "pi");
        out.pi_source = T;
        out.pi_tilde = select_rows(*pi, ParamTarget::PiTilde, out.pi_source);
    }
    return out;
}

ProblemClass classify_problem(const MarkovProcessSpec& spec) {
    bool pi_fixed = false, p_fixed = false, r_fixed = false;
    auto fixed = [](const ParameterLink* l) { return l == nullptr || l->fixed(); };
    if (spec.query.kind == PropertyKind::TotalReward) {
        pi_fixed = fixed(spec.link(ParamTarget::Pi));
        p_fixed = fixed(spec.link(ParamTarget::P));
        r_fixed = fixed(spec.link(ParamTarget::Reward));
    } else {
        const TransientLinks tl = restrict_to_transient(spec);
        pi_fixed = tl.pi_tilde.fixed();
        p_fixed = tl.Q.fixed();
        r_fixed = spec.query.kind == PropertyKind::HittingTime || tl.R.fixed();
    }
    if (p_fixed && r_fixed) return ProblemClass::ValueClosedForm;
    if (pi_fixed && p_fixed) return ProblemClass::LinearLinear;
    if (p_fixed) return ProblemClass::BilinearObjLinearCon;
    if (pi_fixed && r_fixed) return ProblemClass::LinearObjBilinearCon2;
    if (pi_fixed) return ProblemClass::LinearObjBilinearCon;
    if (r_fixed) return ProblemClass::BilinearObjBilinearCon;
    return ProblemClass::FullBilinear;
}

} // namespace mlchain
