#pragma once

#include "mlchain/feature_set.hpp"
#include "mlchain/interval.hpp"
#include "mlchain/opt.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace mlchain {

enum class ModelKind {
    LinearRegression,
    LogisticRegression,
    DecisionTree,
    TreeEnsemble,
    ReluNetwork,
    ReluNetworkSoftmax,
    DecisionRules,
};

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

/// Node of a binary tree. Leaves have feature < 0 and carry `value` (one
/// entry per output); internal nodes send x[feature] <= threshold left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> value;

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
};

enum class Activation { Relu, Linear, Sigmoid, Softmax };

const char* to_string(Activation a);

struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
    Activation activation = Activation::Relu;
};

enum class CompareOp { Less, LessEqual, Greater, GreaterEqual };

struct RuleAtom {
    int feature = 0;
    CompareOp op = CompareOp::LessEqual;
    double value = 0.0;

    bool holds(const Eigen::VectorXd& x) const;
};

struct Rule {
    std::vector<RuleAtom> atoms;  // conjunction
    std::vector<double> value;
};

/// Parses "if age >= 65 and x1 < 2 then 0.8" / "else 0.2". Features are named
/// by `names` or as x<k>.
struct ParsedRules {
    std::vector<Rule> rules;
    std::vector<double> default_value;
};
ParsedRules parse_rules(const std::vector<std::string>& lines, const std::vector<std::string>& names);

struct EncodeOptions {
    /// Piecewise-linear segments for sigmoid and exp envelopes.
    int segments = 8;
};

struct Encoding {
    std::vector<int> outputs;
    /// Sound interval bounds on the outputs implied by the feature bounds
    /// (interval propagation; the MILP in output_bounds may be tighter).
    IntervalVector bounds;
    /// Largest deviation of an encoded output from the exact model value
    /// (0 for exact encodings).
    double gap = 0.0;
    bool approximate = false;
    int first_var = 0;
    int first_row = 0;
};

struct OutputBounds {
    IntervalVector bounds;
    double gap = 0.0;
    bool approximate = false;
};

/**
 * A pretrained model with a native evaluator and a MILP encoding.
 *
 *   LinearRegression    theta = W x + b
 *   LogisticRegression  theta = sigmoid(W x + b), element-wise
 *   DecisionTree        leaf value of x
 *   TreeEnsemble        sum (or mean) of trees plus a base value
 *   ReluNetwork         ReLU hidden layers, final linear or sigmoid layer
 *   ReluNetworkSoftmax  ReLU hidden layers, final softmax layer
 *   DecisionRules       value of the first matching rule, else the default
 */
class ModelArtifact {
public:
    static ModelArtifact linear_regression(Eigen::MatrixXd W, Eigen::VectorXd b);
    static ModelArtifact logistic_regression(Eigen::MatrixXd W, Eigen::VectorXd b);
    static ModelArtifact decision_tree(Tree tree, int n_features, int arity = 1);
    static ModelArtifact tree_ensemble(std::vector<Tree> trees, int n_features, bool average, std::vector<double> base,
                                       int arity = 1);
    /// Kind is ReluNetworkSoftmax when the final layer is softmax.
    static ModelArtifact relu_network(std::vector<Layer> layers);
    static ModelArtifact decision_rules(std::vector<Rule> rules, std::vector<double> default_value, int n_features,
                                        std::vector<std::string> feature_names = {});

    ModelKind kind() const { return kind_; }
    int arity() const { return arity_; }
    int n_features() const { return n_features_; }
    /// Classifier outputs lie in [0, 1].
    bool is_probability() const;

    Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;

    /// Adds the model to p on the given feature variables (finite bounds
    /// required) and returns the output variables.
    Encoding encode(opt::Problem& p, const std::vector<int>& x_vars, const IntervalVector& x_bounds,
                    const EncodeOptions& opts = {}) const;

    /// Min and max of every output over the feature set, 2 * arity MILPs run
    /// concurrently. Throws InfeasibleFeatureSet if the set is empty.
    OutputBounds output_bounds(const FeatureSet& fs, const EncodeOptions& eo = {},
                               const opt::BranchAndBoundOptions& bo = {}) const;

    // Parameters (read access for serialisation).
    const Eigen::MatrixXd& weights() const { return W_; }
    const Eigen::VectorXd& bias() const { return b_; }
    const std::vector<Tree>& trees() const { return trees_; }
    bool average() const { return average_; }
    const std::vector<double>& base() const { return base_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const std::vector<Rule>& rules() const { return rules_; }
    const std::vector<double>& default_value() const { return default_; }
    const std::vector<std::string>& feature_names() const { return names_; }

private:
    ModelArtifact() = default;
    void check() const;

    ModelKind kind_ = ModelKind::LinearRegression;
    int arity_ = 0;
    int n_features_ = 0;
    Eigen::MatrixXd W_;
    Eigen::VectorXd b_;
    std::vector<Tree> trees_;
    bool average_ = false;
    std::vector<double> base_;
    std::vector<Layer> layers_;
    std::vector<Rule> rules_;
    std::vector<double> default_;
    std::vector<std::string> names_;
};

double sigmoid(double z);

/// Interval image of the affine map W x + b over a box.
IntervalVector affine_bounds(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const IntervalVector& x);

/// Largest vertical gap between the upper and lower piecewise-linear sigmoid
/// envelopes built over [lo, hi] with the given number of segments.
double sigmoid_envelope_gap(double lo, double hi, int segments);

} // namespace mlchain
