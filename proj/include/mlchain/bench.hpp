#pragma once

#include "mlchain/markov_spec.hpp"
#include "mlchain/models.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mlchain::bench {

/**
 * Seeded generator with a fixed algorithm so instances reproduce across
 * platforms and standard libraries: std::mt19937_64 (fully specified by the
 * C++ standard) for raw words, the top 53 bits for uniforms, and the
 * Box-Muller transform for normals. std::normal_distribution is avoided
 * because its algorithm is implementation-defined.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : g_(seed) {}

    std::uint64_t next() { return g_(); }
    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
    double normal();
    /// Uniform integer in [0, n).
    int below(int n) { return static_cast<int>(uniform() * n); }

private:
    std::mt19937_64 g_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Seed of instance k in a run started from `base` (splitmix64 of base + k).
std::uint64_t instance_seed(std::uint64_t base, int k);

struct Dataset {
    Eigen::MatrixXd X;  // samples x features
    Eigen::VectorXd y;
};

/// X ~ N(0,1), beta ~ N(0,1), y = X beta + N(0,1) noise.
Dataset regression_data(Rng& rng, int samples, int features);
/// Same design, y ~ Bernoulli(sigmoid(X beta)).
Dataset classification_data(Rng& rng, int samples, int features);

/// Least squares with intercept.
ModelArtifact fit_linear(const Dataset& d);
/// Logistic regression by Newton / IRLS (tiny ridge for separable data).
ModelArtifact fit_logistic(const Dataset& d, int iterations = 30);
/// CART regression tree (squared error, mean leaves). On 0/1 labels the
/// leaves are class frequencies and hence probabilities.
ModelArtifact fit_tree(const Dataset& d, int depth, int min_leaf = 5);
/// ReLU MLP trained with Adam on mean squared error, or on cross-entropy
/// with a sigmoid output when `classifier`.
ModelArtifact fit_mlp(const Dataset& d, const std::vector<int>& hidden, bool classifier, Rng& rng, int epochs = 10,
                      int batch = 100, double learning_rate = 1e-2);

enum class Family { Linear, Tree, Mlp };
const char* to_string(Family f);
Family family_from_string(const std::string& s);

/**
 * Birth-process instance: r_1 = theta_r and r_i = theta_r / i; pi_1 =
 * theta_pi, pi_2 = 1 - theta_pi; each modeled row i of P stays with the
 * classifier output and moves to i + 1 with the rest. Unmodeled rows split
 * 0.5 / 0.5 between staying and moving on. The last state is absorbing.
 * "Linear" means linear regression for r and logistic regression for
 * probabilities.
 */
struct InstanceConfig {
    int states = 5;
    int modeled_rows = 1;
    Family reward = Family::Linear;
    Family initial = Family::Linear;
    Family transition = Family::Linear;
    int tree_depth = 4;
    std::vector<int> hidden = {5};
    int samples = 10000;
    int features = 5;
    double discount = 0.97;
    QuerySense sense = QuerySense::Max;
    /// Restrict every feature to the integers {-1, 0, 1} (3^features points),
    /// so the instance can be checked by enumeration.
    bool integer_grid = false;
};

MarkovProcessSpec make_instance(const InstanceConfig& cfg, std::uint64_t seed);

/// Writes <stem>.json plus one <stem>_model<k>.json per model into dir,
/// with the problem referring to the models by relative path.
void write_instance(const MarkovProcessSpec& spec, const std::string& dir, const std::string& stem);

/// All points of an integer feature set given by a single box (throws
/// InvalidInput beyond `limit` points).
std::vector<Eigen::VectorXd> enumerate_grid(const FeatureSet& fs, std::size_t limit = 100000);

/// Objective of the query at x from direct model evaluation and a dense
/// solve of the value system.
double value_at(const MarkovProcessSpec& spec, const Eigen::VectorXd& x);

struct FidelityReport {
    int samples = 0;
    /// Tree samples redrawn because a feature fell within 1e-6 of a split.
    int near_threshold = 0;
    /// Largest |encoded - evaluated| over the samples, taking both the min
    /// and the max of each encoded output with the features pinned.
    double max_deviation = 0.0;
    double envelope_gap = 0.0;
    bool approximate = false;
    /// 1e-9 for linear models, 1e-6 for other exact encodings, the envelope
    /// gap (plus 1e-9) for approximate ones.
    double tolerance = 0.0;
    bool passed() const { return max_deviation <= tolerance; }
};

/// Samples points of the feature set's first box and compares the MILP
/// encoding (built over the whole set, then pinned) with evaluate.
FidelityReport check_model(const ModelArtifact& m, const FeatureSet& fs, int samples, std::uint64_t seed,
                           const EncodeOptions& eo = {});

} // namespace mlchain::bench
