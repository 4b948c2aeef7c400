#include "mlchain/bench.hpp"
#include "mlchain/errors.hpp"
#include "mlchain/interval.hpp"
#include "mlchain/io.hpp"
#include "mlchain/verifier.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <optional>
#include <string>

namespace py = pybind11;
using namespace mlchain;

namespace {

// Reports cross the boundary as JSON text; the Python side parses them.
std::string verify_json(const MarkovProcessSpec& spec, std::optional<std::string> sense, double gap,
                        std::optional<double> time_limit, bool bounds_only, std::optional<std::string> ablate,
                        bool force_bilinear, int segments) {
    VerifyOptions o;
    if (sense) o.sense = query_sense_from_string(*sense);
    o.rel_gap = gap;
    if (time_limit) o.time_limit = *time_limit;
    o.bounds_only = bounds_only;
    if (ablate) o.ablate = stage_from_string(*ablate);
    o.force_bilinear = force_bilinear;
    o.encode.segments = segments;
    VerificationResult r;
    {
        py::gil_scoped_release release;
        r = verify(spec, o);
    }
    return io::report_to_json(r).dump();
}

std::string check_model_json(const std::string& path, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                             int samples, std::uint64_t seed, int segments) {
    const ModelArtifact m = io::load_model(path);
    EncodeOptions eo;
    eo.segments = segments;
    const bench::FidelityReport rep = bench::check_model(m, FeatureSet::box(lower, upper), samples, seed, eo);
    io::Json j = io::Json::object();
    j["samples"] = rep.samples;
    j["near_threshold"] = rep.near_threshold;
    j["max_deviation"] = rep.max_deviation;
    j["envelope_gap"] = rep.envelope_gap;
    j["approximate"] = rep.approximate;
    j["tolerance"] = rep.tolerance;
    j["passed"] = rep.passed();
    return j.dump();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> gauss_seidel(const Eigen::MatrixXd& a_lo, const Eigen::MatrixXd& a_hi,
                                                         const Eigen::VectorXd& b_lo, const Eigen::VectorXd& b_hi,
                                                         const Eigen::VectorXd& x_lo, const Eigen::VectorXd& x_hi) {
    const auto n = static_cast<std::size_t>(a_lo.rows());
    if (a_lo.cols() != a_lo.rows() || a_hi.rows() != a_lo.rows() || a_hi.cols() != a_lo.cols() ||
        static_cast<std::size_t>(b_lo.size()) != n || b_hi.size() != b_lo.size() ||
        static_cast<std::size_t>(x_lo.size()) != n || x_hi.size() != x_lo.size())
        throw InvalidParameter("gauss_seidel: dimension mismatch");
    IntervalMatrix A(n, n, Interval(0, 0));
    IntervalVector b, x0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        for (std::size_t j = 0; j < n; ++j) A(i, j) = Interval(a_lo(ii, static_cast<Eigen::Index>(j)), a_hi(ii, static_cast<Eigen::Index>(j)));
        b.emplace_back(b_lo(ii), b_hi(ii));
        x0.emplace_back(x_lo(ii), x_hi(ii));
    }
    const IntervalVector x = gauss_seidel_solve(A, b, x0);
    Eigen::VectorXd lo(static_cast<Eigen::Index>(n)), hi(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        lo(static_cast<Eigen::Index>(i)) = x[i].lo();
        hi(static_cast<Eigen::Index>(i)) = x[i].hi();
    }
    return {lo, hi};
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Verification of Markov processes with ML-model parameters";
    py::register_exception<Error>(m, "Error", PyExc_ValueError);

    py::class_<MarkovProcessSpec>(m, "Problem")
        .def_readonly("n_states", &MarkovProcessSpec::n_states)
        .def_readonly("m_features", &MarkovProcessSpec::m_features)
        .def_readonly("discount", &MarkovProcessSpec::discount)
        .def_property_readonly("theta_dim", &MarkovProcessSpec::theta_dim)
        .def_property_readonly("problem_class", [](const MarkovProcessSpec& s) { return to_string(classify_problem(s)); })
        .def_property_readonly("query_kind", [](const MarkovProcessSpec& s) { return to_string(s.query.kind); })
        .def("validate", &validate)
        .def("value_at", [](const MarkovProcessSpec& s, const Eigen::VectorXd& x) { return evaluate_at(s, x).value; },
             py::arg("x"))
        .def("to_json", [](const MarkovProcessSpec& s) { return io::spec_to_json(s).dump(); });

    m.def("load_problem", &io::load_problem, py::arg("path"));
    m.def("_verify", &verify_json, py::arg("problem"), py::arg("sense") = py::none(), py::arg("gap") = 1e-4,
          py::arg("time_limit") = py::none(), py::arg("bounds_only") = false, py::arg("ablate") = py::none(),
          py::arg("force_bilinear") = false, py::arg("segments") = 8);
    m.def("_check_model", &check_model_json, py::arg("path"), py::arg("lower"), py::arg("upper"),
          py::arg("samples") = 100, py::arg("seed") = 0, py::arg("segments") = 8);
    m.def("spectral_radius", [](const Eigen::MatrixXd& M) { return spectral_radius(M); }, py::arg("matrix"));
    m.def("is_interval_m_matrix", [](const Eigen::MatrixXd& p_max, double lambda) { return is_interval_m_matrix(p_max, lambda); },
          py::arg("p_max"), py::arg("discount"));
    m.def("gauss_seidel", &gauss_seidel, py::arg("a_lo"), py::arg("a_hi"), py::arg("b_lo"), py::arg("b_hi"),
          py::arg("x_lo"), py::arg("x_hi"));
    m.def("sigmoid_envelope_gap", &sigmoid_envelope_gap, py::arg("lo"), py::arg("hi"), py::arg("segments"));
    m.attr("FORMAT_VERSION") = io::kFormatVersion;
}
