#include "mlchain/io.hpp"

#include "mlchain/errors.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mlchain::io {

namespace {

namespace fs = std::filesystem;

// Location inside a JSON document, for error messages.
struct At {
    std::string where;
    std::string ptr;

    At operator/(const std::string& key) const { return {where, ptr + "/" + key}; }
    At operator/(std::size_t i) const { return {where, ptr + "/" + std::to_string(i)}; }
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(where, ptr.empty() ? "/" : ptr, msg); }
};

const Json& field(const Json& j, const std::string& key, const At& at) {
    if (!j.is_object()) at.fail("expected an object");
    const auto it = j.find(key);
    if (it == j.end()) (at / key).fail("missing field");
    return *it;
}

const Json* optional_field(const Json& j, const std::string& key) {
    if (!j.is_object()) return nullptr;
    const auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
}

double number(const Json& j, const At& at) {
    if (!j.is_number()) at.fail("expected a number");
    return j.get<double>();
}

int integer(const Json& j, const At& at) {
    if (!j.is_number_integer()) at.fail("expected an integer");
    return j.get<int>();
}

bool boolean(const Json& j, const At& at) {
    if (!j.is_boolean()) at.fail("expected true or false");
    return j.get<bool>();
}

std::string text(const Json& j, const At& at) {
    if (!j.is_string()) at.fail("expected a string");
    return j.get<std::string>();
}

const Json& array(const Json& j, const At& at) {
    if (!j.is_array()) at.fail("expected an array");
    return j;
}

Eigen::VectorXd vector(const Json& j, const At& at) {
    array(j, at);
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], at / i);
    return v;
}

std::vector<double> std_vector(const Json& j, const At& at) {
    const Eigen::VectorXd v = vector(j, at);
    return {v.data(), v.data() + v.size()};
}

std::vector<int> int_vector(const Json& j, const At& at) {
    array(j, at);
    std::vector<int> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(integer(j[i], at / i));
    return out;
}

Eigen::MatrixXd matrix(const Json& j, const At& at) {
    if (j.is_object()) {
        const int rows = integer(field(j, "rows", at), at / "rows");
        const int cols = integer(field(j, "cols", at), at / "cols");
        if (rows < 0 || cols < 0) at.fail("negative dimension");
        Eigen::MatrixXd M = Eigen::MatrixXd::Zero(rows, cols);
        const At ea = at / "entries";
        const Json& e = array(field(j, "entries", at), ea);
        for (std::size_t k = 0; k < e.size(); ++k) {
            const At a = ea / k;
            if (!e[k].is_array() || e[k].size() != 3) a.fail("expected [row, col, value]");
            const int r = integer(e[k][0], a / 0), c = integer(e[k][1], a / 1);
            if (r < 0 || r >= rows || c < 0 || c >= cols) a.fail("index out of range");
            M(r, c) += number(e[k][2], a / 2);
        }
        return M;
    }
    array(j, at);
    if (j.empty()) return Eigen::MatrixXd(0, 0);
    const std::size_t cols = array(j[0], at / 0).size();
    Eigen::MatrixXd M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        const At ra = at / r;
        if (array(j[r], ra).size() != cols) ra.fail("row length differs from row 0");
        for (std::size_t c = 0; c < cols; ++c)
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], ra / c);
    }
    return M;
}

Json dense(const Eigen::MatrixXd& M) {
    Json out = Json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
        out.push_back(row);
    }
    return out;
}

Json sparse(const Eigen::MatrixXd& M) {
    Json e = Json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r)
        for (Eigen::Index c = 0; c < M.cols(); ++c)
            if (M(r, c) != 0.0) e.push_back(Json::array({r, c, M(r, c)}));
    Json out = Json::object();
    out["rows"] = M.rows();
    out["cols"] = M.cols();
    out["entries"] = e;
    return out;
}

Json list(const Eigen::VectorXd& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Json list(const std::vector<double>& v) { return Json(v); }

// NaN and infinities become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json intervals(const IntervalVector& v) {
    Json out = Json::array();
    for (const Interval& iv : v) out.push_back(Json::array({num(iv.lo()), num(iv.hi())}));
    return out;
}

void check_header(const Json& j, const char* format, const At& at) {
    if (!j.is_object()) at.fail("expected an object");
    if (const Json* f = optional_field(j, "format"); f && text(*f, at / "format") != format)
        (at / "format").fail(std::string("expected \"") + format + "\"");
    if (const Json* v = optional_field(j, "version")) {
        if (integer(*v, at / "version") != kFormatVersion)
            (at / "version").fail("unsupported version " + v->dump() + " (expected " + std::to_string(kFormatVersion) + ")");
    } else {
        (at / "version").fail("missing field");
    }
}

Json header(const char* format) {
    Json j = Json::object();
    j["format"] = format;
    j["version"] = kFormatVersion;
    return j;
}

const char* op_string(CompareOp op) {
    switch (op) {
    case CompareOp::Less: return "<";
    case CompareOp::LessEqual: return "<=";
    case CompareOp::Greater: return ">";
    case CompareOp::GreaterEqual: return ">=";
    }
    return "?";
}

CompareOp parse_op(const std::string& s, const At& at) {
    if (s == "<") return CompareOp::Less;
    if (s == "<=") return CompareOp::LessEqual;
    if (s == ">") return CompareOp::Greater;
    if (s == ">=") return CompareOp::GreaterEqual;
    at.fail("unknown comparison '" + s + "'");
}

Activation parse_activation(const std::string& s, const At& at) {
    for (Activation a : {Activation::Relu, Activation::Linear, Activation::Sigmoid, Activation::Softmax})
        if (s == to_string(a)) return a;
    at.fail("unknown activation '" + s + "'");
}

opt::RowSense parse_sense(const std::string& s, const At& at) {
    if (s == "<=") return opt::RowSense::LessEqual;
    if (s == ">=") return opt::RowSense::GreaterEqual;
    if (s == "=" || s == "==") return opt::RowSense::Equal;
    at.fail("unknown sense '" + s + "'");
}

const char* sense_string(opt::RowSense s) {
    switch (s) {
    case opt::RowSense::LessEqual: return "<=";
    case opt::RowSense::GreaterEqual: return ">=";
    case opt::RowSense::Equal: return "=";
    }
    return "?";
}

Tree parse_tree(const Json& j, const At& at) {
    Tree t;
    const At na = at / "nodes";
    const Json& nodes = array(field(j, "nodes", at), na);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        const At a = na / k;
        TreeNode n;
        if (const Json* v = optional_field(nodes[k], "value")) {
            n.value = std_vector(*v, a / "value");
        } else {
            n.feature = integer(field(nodes[k], "feature", a), a / "feature");
            n.threshold = number(field(nodes[k], "threshold", a), a / "threshold");
            n.left = integer(field(nodes[k], "left", a), a / "left");
            n.right = integer(field(nodes[k], "right", a), a / "right");
            if (n.feature < 0) (a / "feature").fail("must be non-negative");
        }
        t.nodes.push_back(std::move(n));
    }
    return t;
}

Json tree_json(const Tree& t) {
    Json nodes = Json::array();
    for (const TreeNode& n : t.nodes) {
        Json o = Json::object();
        if (n.is_leaf()) {
            o["value"] = n.value;
        } else {
            o["feature"] = n.feature;
            o["threshold"] = n.threshold;
            o["left"] = n.left;
            o["right"] = n.right;
        }
        nodes.push_back(o);
    }
    Json out = Json::object();
    out["nodes"] = nodes;
    return out;
}

ModelArtifact parse_model(const Json& j, const At& at) {
    const At ka = at / "kind";
    ModelKind kind;
    try {
        kind = model_kind_from_string(text(field(j, "kind", at), ka));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        ka.fail(e.what());
    }
    switch (kind) {
    case ModelKind::LinearRegression:
    case ModelKind::LogisticRegression: {
        Eigen::MatrixXd W = matrix(field(j, "weights", at), at / "weights");
        Eigen::VectorXd b = vector(field(j, "bias", at), at / "bias");
        return kind == ModelKind::LinearRegression ? ModelArtifact::linear_regression(std::move(W), std::move(b))
                                                   : ModelArtifact::logistic_regression(std::move(W), std::move(b));
    }
    case ModelKind::DecisionTree: {
        const int m = integer(field(j, "n_features", at), at / "n_features");
        const int arity = optional_field(j, "arity") ? integer(j["arity"], at / "arity") : 1;
        return ModelArtifact::decision_tree(parse_tree(j, at), m, arity);
    }
    case ModelKind::TreeEnsemble: {
        const int m = integer(field(j, "n_features", at), at / "n_features");
        const int arity = optional_field(j, "arity") ? integer(j["arity"], at / "arity") : 1;
        const bool avg = optional_field(j, "average") ? boolean(j["average"], at / "average") : false;
        std::vector<double> base = optional_field(j, "base") ? std_vector(j["base"], at / "base") : std::vector<double>{};
        const At ta = at / "trees";
        const Json& trees = array(field(j, "trees", at), ta);
        std::vector<Tree> ts;
        for (std::size_t k = 0; k < trees.size(); ++k) ts.push_back(parse_tree(trees[k], ta / k));
        return ModelArtifact::tree_ensemble(std::move(ts), m, avg, std::move(base), arity);
    }
    case ModelKind::ReluNetwork:
    case ModelKind::ReluNetworkSoftmax: {
        const At la = at / "layers";
        const Json& layers = array(field(j, "layers", at), la);
        std::vector<Layer> ls;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const At a = la / k;
            Layer L;
            L.W = matrix(field(layers[k], "weights", a), a / "weights");
            L.b = vector(field(layers[k], "bias", a), a / "bias");
            L.activation = parse_activation(text(field(layers[k], "activation", a), a / "activation"), a / "activation");
            ls.push_back(std::move(L));
        }
        ModelArtifact out = ModelArtifact::relu_network(std::move(ls));
        if (out.kind() != kind) ka.fail("kind does not match the final layer's activation");
        return out;
    }
    case ModelKind::DecisionRules: {
        const int m = integer(field(j, "n_features", at), at / "n_features");
        std::vector<std::string> names;
        if (const Json* n = optional_field(j, "feature_names")) {
            array(*n, at / "feature_names");
            for (std::size_t k = 0; k < n->size(); ++k) names.push_back(text((*n)[k], at / "feature_names" / k));
        }
        const At ra = at / "rules";
        const Json& rules = array(field(j, "rules", at), ra);
        std::vector<Rule> rs;
        std::vector<double> def;
        std::vector<std::string> lines;
        for (std::size_t k = 0; k < rules.size(); ++k) {
            const At a = ra / k;
            if (rules[k].is_string()) {
                lines.push_back(rules[k].get<std::string>());
                continue;
            }
            Rule r;
            const At wa = a / "when";
            const Json& when = array(field(rules[k], "when", a), wa);
            for (std::size_t q = 0; q < when.size(); ++q) {
                const At qa = wa / q;
                RuleAtom atom;
                atom.feature = integer(field(when[q], "feature", qa), qa / "feature");
                atom.op = parse_op(text(field(when[q], "op", qa), qa / "op"), qa / "op");
                atom.value = number(field(when[q], "value", qa), qa / "value");
                r.atoms.push_back(atom);
            }
            r.value = std_vector(field(rules[k], "value", a), a / "value");
            rs.push_back(std::move(r));
        }
        if (!lines.empty()) {
            if (!rs.empty()) ra.fail("mixes rule strings and rule objects");
            try {
                ParsedRules pr = parse_rules(lines, names);
                rs = std::move(pr.rules);
                def = std::move(pr.default_value);
            } catch (const ParseError&) {
                throw;
            } catch (const Error& e) {
                ra.fail(e.what());
            }
        }
        if (const Json* d = optional_field(j, "default")) def = std_vector(*d, at / "default");
        if (def.empty()) (at / "default").fail("no default value (add \"else <value>\" or a default)");
        return ModelArtifact::decision_rules(std::move(rs), std::move(def), m, std::move(names));
    }
    }
    ka.fail("unsupported kind");
}

ParameterLink parse_link(const Json& j, const At& at, int ell, bool inequality) {
    ParameterLink l;
    const At ta = at / "target";
    try {
        l.target = param_target_from_string(text(field(j, "target", at), ta));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        ta.fail(e.what());
    }
    const char* mk = inequality ? "C" : "A";
    const char* vk = inequality ? "d" : "b";
    l.b = vector(field(j, vk, at), at / vk);
    if (const Json* A = optional_field(j, mk)) {
        l.A = matrix(*A, at / mk);
        if (l.A.size() == 0 && !inequality) l.A = Eigen::MatrixXd::Zero(l.b.size(), ell);
    } else if (!inequality) {
        l.A = Eigen::MatrixXd::Zero(l.b.size(), ell);
    } else {
        (at / mk).fail("missing field");
    }
    return l;
}

Json link_json(ParamTarget t, const Eigen::MatrixXd& A, const Eigen::VectorXd& b, bool inequality) {
    Json o = Json::object();
    o["target"] = to_string(t);
    const bool zero = A.size() == 0 || (A.array() == 0.0).all();
    if (inequality) o["C"] = dense(A);
    else if (!zero) o["A"] = sparse(A);
    o[inequality ? "d" : "b"] = list(b);
    return o;
}

double bound_or_inf(const Json& j, const char* key, double inf, const At& at) {
    const Json* v = optional_field(j, key);
    if (!v) return inf;
    if (v->is_string()) {
        const std::string s = v->get<std::string>();
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    return number(*v, at / key);
}

} // namespace

ModelArtifact model_from_json(const Json& j, const std::string& where) {
    const At at{where, ""};
    check_header(j, "mlchain-model", at);
    try {
        return parse_model(j, at);
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        at.fail(e.what());
    }
}

Json model_to_json(const ModelArtifact& m) {
    Json j = header("mlchain-model");
    j["kind"] = to_string(m.kind());
    switch (m.kind()) {
    case ModelKind::LinearRegression:
    case ModelKind::LogisticRegression:
        j["weights"] = dense(m.weights());
        j["bias"] = list(m.bias());
        break;
    case ModelKind::DecisionTree:
        j["n_features"] = m.n_features();
        j["arity"] = m.arity();
        j["nodes"] = tree_json(m.trees().front())["nodes"];
        break;
    case ModelKind::TreeEnsemble: {
        j["n_features"] = m.n_features();
        j["arity"] = m.arity();
        j["average"] = m.average();
        j["base"] = list(m.base());
        Json ts = Json::array();
        for (const Tree& t : m.trees()) ts.push_back(tree_json(t));
        j["trees"] = ts;
        break;
    }
    case ModelKind::ReluNetwork:
    case ModelKind::ReluNetworkSoftmax: {
        Json ls = Json::array();
        for (const Layer& L : m.layers()) {
            Json o = Json::object();
            o["weights"] = dense(L.W);
            o["bias"] = list(L.b);
            o["activation"] = to_string(L.activation);
            ls.push_back(o);
        }
        j["layers"] = ls;
        break;
    }
    case ModelKind::DecisionRules: {
        j["n_features"] = m.n_features();
        j["feature_names"] = m.feature_names();
        Json rs = Json::array();
        for (const Rule& r : m.rules()) {
            Json when = Json::array();
            for (const RuleAtom& a : r.atoms) {
                Json o = Json::object();
                o["feature"] = a.feature;
                o["op"] = op_string(a.op);
                o["value"] = a.value;
                when.push_back(o);
            }
            Json o = Json::object();
            o["when"] = when;
            o["value"] = r.value;
            rs.push_back(o);
        }
        j["rules"] = rs;
        j["default"] = m.default_value();
        break;
    }
    }
    return j;
}

Json read_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParseError(path, "/", "cannot open file");
    try {
        return Json::parse(f);
    } catch (const Json::parse_error& e) {
        throw ParseError(path, "/", std::string("malformed JSON: ") + e.what());
    }
}

void write_json(const Json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InvalidInput("cannot write " + path);
    f << j.dump(2) << '\n';
}

ModelArtifact load_model(const std::string& path) { return model_from_json(read_json(path), path); }

void save_model(const ModelArtifact& m, const std::string& path) { write_json(model_to_json(m), path); }

MarkovProcessSpec spec_from_json(const Json& j, const std::string& where, const std::string& base_dir) {
    const At at{where, ""};
    check_header(j, "mlchain-problem", at);
    MarkovProcessSpec s;
    s.n_states = integer(field(j, "states", at), at / "states");
    s.m_features = integer(field(j, "features", at), at / "features");
    if (const Json* d = optional_field(j, "discount")) s.discount = number(*d, at / "discount");

    const At qa = at / "query";
    const Json& q = field(j, "query", at);
    try {
        s.query.kind = property_kind_from_string(text(field(q, "kind", qa), qa / "kind"));
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        (qa / "kind").fail(e.what());
    }
    if (const Json* sense = optional_field(q, "sense")) {
        try {
            s.query.sense = query_sense_from_string(text(*sense, qa / "sense"));
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            (qa / "sense").fail(e.what());
        }
    }
    if (const Json* t = optional_field(q, "target_set")) s.query.target_set = int_vector(*t, qa / "target_set");
    if (const Json* t = optional_field(q, "transient_set")) s.query.transient_set = int_vector(*t, qa / "transient_set");
    s.query.w_min = bound_or_inf(q, "w_min", -std::numeric_limits<double>::infinity(), qa);
    s.query.w_max = bound_or_inf(q, "w_max", std::numeric_limits<double>::infinity(), qa);

    if (const Json* models = optional_field(j, "models")) {
        const At ma = at / "models";
        array(*models, ma);
        for (std::size_t k = 0; k < models->size(); ++k) {
            const Json& m = (*models)[k];
            if (const Json* p = optional_field(m, "path")) {
                const fs::path rel = text(*p, ma / k / "path");
                const fs::path full = rel.is_absolute() ? rel : fs::path(base_dir) / rel;
                if (!fs::exists(full)) (ma / k / "path").fail("model file not found: " + full.string());
                s.models.push_back(std::make_shared<const ModelArtifact>(load_model(full.string())));
            } else {
                const At mk = ma / k;
                try {
                    s.models.push_back(std::make_shared<const ModelArtifact>(parse_model(m, mk)));
                } catch (const ParseError&) {
                    throw;
                } catch (const Error& e) {
                    mk.fail(e.what());
                }
            }
        }
    }
    const int ell = s.theta_dim();
    if (const Json* links = optional_field(j, "links")) {
        const At la = at / "links";
        array(*links, la);
        for (std::size_t k = 0; k < links->size(); ++k) s.links.push_back(parse_link((*links)[k], la / k, ell, false));
    }
    if (const Json* ineqs = optional_field(j, "inequalities")) {
        const At ia = at / "inequalities";
        array(*ineqs, ia);
        for (std::size_t k = 0; k < ineqs->size(); ++k) {
            const ParameterLink l = parse_link((*ineqs)[k], ia / k, ell, true);
            s.ineqs.push_back({l.target, l.A, l.b});
        }
    }

    const At fa = at / "feature_set";
    const Json& f = field(j, "feature_set", at);
    const At ba = fa / "boxes";
    const Json& boxes = array(field(f, "boxes", fa), ba);
    for (std::size_t k = 0; k < boxes.size(); ++k)
        s.feature_set.boxes.push_back({vector(field(boxes[k], "lower", ba / k), ba / k / "lower"),
                                       vector(field(boxes[k], "upper", ba / k), ba / k / "upper")});
    if (const Json* cuts = optional_field(f, "cuts")) {
        const At ca = fa / "cuts";
        array(*cuts, ca);
        for (std::size_t k = 0; k < cuts->size(); ++k) {
            const Json& c = (*cuts)[k];
            FeatureSet::Cut cut;
            cut.coef = vector(field(c, "coef", ca / k), ca / k / "coef");
            cut.sense = parse_sense(text(field(c, "sense", ca / k), ca / k / "sense"), ca / k / "sense");
            cut.rhs = number(field(c, "rhs", ca / k), ca / k / "rhs");
            s.feature_set.cuts.push_back(std::move(cut));
        }
    }
    if (const Json* ints = optional_field(f, "integer")) {
        const At ia = fa / "integer";
        array(*ints, ia);
        for (std::size_t k = 0; k < ints->size(); ++k) s.feature_set.integer.push_back(boolean((*ints)[k], ia / k));
    }
    if (const Json* a = optional_field(j, "absorbing")) s.absorbing = int_vector(*a, at / "absorbing");
    return s;
}

Json spec_to_json(const MarkovProcessSpec& s) {
    Json j = header("mlchain-problem");
    j["states"] = s.n_states;
    j["features"] = s.m_features;
    if (s.query.kind == PropertyKind::TotalReward) j["discount"] = s.discount;
    Json q = Json::object();
    q["kind"] = to_string(s.query.kind);
    q["sense"] = to_string(s.query.sense);
    q["target_set"] = s.query.target_set;
    q["transient_set"] = s.query.transient_set;
    q["w_min"] = num(s.query.w_min);
    q["w_max"] = num(s.query.w_max);
    j["query"] = q;
    Json models = Json::array();
    for (const auto& m : s.models) models.push_back(model_to_json(*m));
    j["models"] = models;
    Json links = Json::array();
    for (const auto& l : s.links) links.push_back(link_json(l.target, l.A, l.b, false));
    j["links"] = links;
    Json ineqs = Json::array();
    for (const auto& iq : s.ineqs) ineqs.push_back(link_json(iq.target, iq.C, iq.d, true));
    j["inequalities"] = ineqs;
    Json f = Json::object();
    Json boxes = Json::array();
    for (const auto& b : s.feature_set.boxes) {
        Json o = Json::object();
        o["lower"] = list(b.lower);
        o["upper"] = list(b.upper);
        boxes.push_back(o);
    }
    f["boxes"] = boxes;
    Json cuts = Json::array();
    for (const auto& c : s.feature_set.cuts) {
        Json o = Json::object();
        o["coef"] = list(c.coef);
        o["sense"] = sense_string(c.sense);
        o["rhs"] = c.rhs;
        cuts.push_back(o);
    }
    f["cuts"] = cuts;
    f["integer"] = s.feature_set.integer;
    j["feature_set"] = f;
    j["absorbing"] = s.absorbing;
    return j;
}

MarkovProcessSpec load_problem(const std::string& path) {
    return spec_from_json(read_json(path), path, fs::path(path).parent_path().string());
}

void save_problem(const MarkovProcessSpec& s, const std::string& path) { write_json(spec_to_json(s), path); }

Json report_to_json(const VerificationResult& r, const Json& config) {
    const bool tr = r.query.kind == PropertyKind::TotalReward;
    const bool reach = r.query.kind == PropertyKind::Reachability;
    const char* pi_name = tr ? "pi" : "pi_tilde";
    const char* m_name = tr ? "P" : "Q";
    const char* c_name = tr ? "r" : "R";

    Json j = header("mlchain-report");
    j["status"] = to_string(r.status);
    Json q = Json::object();
    q["kind"] = to_string(r.query.kind);
    q["sense"] = to_string(r.query.sense);
    q["target_set"] = r.query.target_set;
    q["transient_set"] = r.query.transient_set;
    q["w_min"] = num(r.query.w_min);
    q["w_max"] = num(r.query.w_max);
    j["query"] = q;
    j["problem_class"] = to_string(r.problem_class);
    j["value"] = num(r.value);
    j["bound"] = num(r.bound);
    j["gap"] = num(r.gap);
    j["outer_bound"] = r.outer_bound;
    j["envelope_gap"] = r.envelope_gap;
    j["message"] = r.message;

    if (r.witness) {
        const Witness& w = *r.witness;
        Json o = Json::object();
        o["x"] = list(w.x);
        o["theta"] = list(w.theta);
        o[pi_name] = list(w.pi);
        o[m_name] = dense(w.M);
        o[tr ? "r" : reach ? "R1" : "rhs"] = list(w.c);
        o["v"] = list(w.v);
        o["value"] = w.value;
        o["repaired"] = w.repaired;
        j["witness"] = o;
    } else {
        j["witness"] = nullptr;
    }

    const BoundsLedger& L = r.ledger;
    Json led = Json::object();
    Json done = Json::array();
    for (Stage s : L.completed) done.push_back(to_string(s));
    led["completed"] = done;
    led["theta"] = intervals(L.theta);
    led[pi_name] = intervals(L.pi);
    led[m_name] = intervals(L.M);
    if (!r.ledger.c.empty() || tr) led[c_name] = intervals(L.c);
    led["v_init"] = intervals(L.v_init);
    led["v"] = intervals(L.v);
    led["hull_certified"] = L.hull_certified;
    led["spectral_radius"] = num(L.spectral_radius);
    led["gauss_seidel_sweeps"] = L.gauss_seidel_sweeps;
    led["gamma"] = num(L.gamma);
    led["epsilon"] = L.epsilon;
    j["ledger"] = led;

    Json t = Json::object();
    t["theta"] = L.timings.theta;
    t["affine"] = L.timings.affine;
    t["v_init"] = L.timings.v_init;
    t["v_tighten"] = L.timings.v_tighten;
    t["solve"] = L.timings.solve;
    t["total"] = L.timings.total;
    j["timings"] = t;

    Json st = Json::object();
    st["nodes"] = r.stats.nodes;
    st["lp_iterations"] = r.stats.lp_iterations;
    st["lp_solves"] = r.stats.lp_solves;
    st["max_depth"] = r.stats.max_depth;
    st["bound_monotonicity_violations"] = r.stats.bound_monotonicity_violations;
    st["lp_failures"] = r.stats.lp_failures;
    j["solver"] = st;
    j["config"] = config;
    return j;
}

} // namespace mlchain::io
