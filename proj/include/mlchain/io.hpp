#pragma once

#include "mlchain/markov_spec.hpp"
#include "mlchain/models.hpp"
#include "mlchain/verifier.hpp"

#include <json.hpp>

#include <string>

namespace mlchain::io {

using Json = nlohmann::ordered_json;

/// Version written into (and required of) every file.
inline constexpr int kFormatVersion = 1;

/**
 * Model artifact files:
 *
 *   {"format": "mlchain-model", "version": 1, "kind": "<kind>", ...}
 *
 * linear_regression / logistic_regression: "weights" (rows = outputs),
 * "bias". decision_tree: "n_features", "arity", "nodes" (internal nodes
 * {"feature", "threshold", "left", "right"}, leaves {"value": [...]}, x <=
 * threshold goes left). tree_ensemble: as a tree plus "trees": [{"nodes"}],
 * "average", "base". relu_network / relu_network_softmax: "layers":
 * [{"weights", "bias", "activation"}]. decision_rules: "n_features",
 * "feature_names", "rules" as strings ("if age >= 65 then 0.8", "else 0.2")
 * or objects {"when": [{"feature", "op", "value"}], "value": [...]} with a
 * "default".
 *
 * `where` names the source in ParseError messages.
 */
ModelArtifact model_from_json(const Json& j, const std::string& where);
Json model_to_json(const ModelArtifact& m);
ModelArtifact load_model(const std::string& path);
void save_model(const ModelArtifact& m, const std::string& path);

/**
 * Problem files:
 *
 *   {"format": "mlchain-problem", "version": 1, "states", "features",
 *    "discount", "query": {"kind", "sense", "target_set", "transient_set",
 *    "w_min", "w_max"}, "models": [{"path": "m.json"} | <model object>],
 *    "links": [{"target", "A", "b"}], "inequalities": [{"target", "C", "d"}],
 *    "feature_set": {"boxes": [{"lower", "upper"}], "cuts": [{"coef",
 *    "sense", "rhs"}], "integer": [bool]}, "absorbing": [int]}
 *
 * Matrices are dense row lists or {"rows", "cols", "entries": [[i, j, v]]}.
 * A link without "A" is constant. Model paths are relative to the problem
 * file. null stands for an infinite w_min / w_max.
 */
MarkovProcessSpec spec_from_json(const Json& j, const std::string& where, const std::string& base_dir = ".");
/// Models are written inline.
Json spec_to_json(const MarkovProcessSpec& s);
MarkovProcessSpec load_problem(const std::string& path);
void save_problem(const MarkovProcessSpec& s, const std::string& path);

/// Report: status, value, bound, gap, witness, ledger per stage, timings
/// and the given config echo, in a fixed key order. Infinite bounds are null.
Json report_to_json(const VerificationResult& r, const Json& config = Json::object());

/// Writes j with two-space indentation and a trailing newline.
void write_json(const Json& j, const std::string& path);
Json read_json(const std::string& path);

} // namespace mlchain::io
