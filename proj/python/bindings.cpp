#include "fairstep/bundle.hpp"
#include "fairstep/error.hpp"
#include "fairstep/serialize.hpp"
#include "fairstep/service.hpp"
#include "fairstep/stepwise.hpp"
#include "fairstep/synthpop.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

namespace py = pybind11;
using nlohmann::json;

namespace {

// Documents cross the boundary as JSON text; the Python package wraps these
// with json.loads / json.dumps.

json doc(const std::string& text)
{
    return json::parse(text);
}

std::vector<fairstep::GroupDefinition> groups_for(const fairstep::Bundle& b, const std::optional<std::string>& groups)
{
    return groups ? fairstep::parse_group_definitions(*groups) : b.groups;
}

fairstep::StepwiseContext context_for(const fairstep::Bundle& b, const std::vector<fairstep::GroupDefinition>& groups,
                                      const fairstep::Formula& baseline, const fairstep::CandidatePool& pool)
{
    return fairstep::StepwiseContext::from_cohort(b.records, b.maps, groups, fairstep::universe_formula(baseline, pool));
}

std::string report(const std::string& bundle_dir, const std::string& formula, std::size_t cv_folds,
                   std::uint64_t seed, const std::optional<std::string>& groups)
{
    auto b = fairstep::load_bundle(bundle_dir);
    auto f = fairstep::parse_formula(doc(formula));
    auto defs = groups_for(b, groups);
    if (cv_folds > 0) return to_json(fairstep::cross_validated_report(b.records, f, defs, b.maps, cv_folds, seed)).dump();
    auto x = fairstep::build_design(b.records, f, b.maps);
    auto y = fairstep::spend_vector(b.records);
    auto fit = fairstep::fit(x, y);
    return to_json(fairstep::in_sample_report(fit, x, y, fairstep::group_vectors(b.records, defs, b.maps))).dump();
}

std::string stepwise(const std::string& bundle_dir, const std::string& baseline, const std::string& pool,
                     const std::string& policy, const std::optional<std::string>& groups)
{
    auto b = fairstep::load_bundle(bundle_dir);
    auto f = fairstep::parse_formula(doc(baseline));
    auto p = fairstep::parse_pool(doc(pool));
    auto ctx = context_for(b, groups_for(b, groups), f, p);
    return to_json(fairstep::run_stepwise(ctx, f, p, fairstep::parse_policy(doc(policy)))).dump();
}

std::string compare(const std::string& bundle_dir, const std::string& baseline, const std::string& pool,
                    const std::vector<std::string>& policies, const std::optional<std::string>& groups)
{
    auto b = fairstep::load_bundle(bundle_dir);
    auto f = fairstep::parse_formula(doc(baseline));
    auto p = fairstep::parse_pool(doc(pool));
    std::vector<fairstep::SelectionPolicy> ps;
    for (const auto& text : policies) ps.push_back(fairstep::parse_policy(doc(text)));
    auto ctx = context_for(b, groups_for(b, groups), f, p);
    return to_json(fairstep::compare_policies(ctx, f, p, ps)).dump();
}

std::string replay(const std::string& bundle_dir, const std::string& trace, const std::string& pool,
                   const std::optional<std::string>& groups)
{
    auto b = fairstep::load_bundle(bundle_dir);
    auto t = fairstep::parse_trace(doc(trace));
    auto p = fairstep::parse_pool(doc(pool));
    auto ctx = context_for(b, groups_for(b, groups), t.baseline, p);
    auto state = fairstep::replay_trace(ctx, t, fairstep::EvaluationMode::in_sample());
    return json{{"formula", to_json(state.formula())}, {"report", to_json(state.report)}}.dump();
}

std::size_t simulate(const std::string& spec, const std::string& out, std::optional<std::size_t> n,
                     std::optional<std::uint64_t> seed)
{
    auto s = fairstep::parse_synthetic_spec(doc(spec));
    if (n) s.n = *n;
    if (seed) s.seed = *seed;
    fairstep::validate_spec(s);
    std::ofstream f(out);
    if (!f) throw fairstep::ConfigError("cannot write " + out);
    fairstep::write_population(s, f);
    return s.n;
}

std::string ingest(const std::string& enrollees, const std::string& maps_dir, const std::string& out,
                   const std::optional<std::string>& groups)
{
    std::filesystem::path m(maps_dir);
    fairstep::MapFiles files{m / "hcc_map.csv", m / "ccs_map.csv", m / "hierarchy.csv", std::nullopt};
    if (std::filesystem::exists(m / "payment_hccs.csv")) files.payment_hccs = m / "payment_hccs.csv";
    std::optional<std::filesystem::path> g;
    if (groups) g = *groups;
    return fairstep::create_bundle(enrollees, files, out, g).manifest.dump();
}

std::string calibrate(const std::string& bundle_dir, const std::string& baseline, const std::string& group,
                      const std::optional<std::string>& groups)
{
    auto b = fairstep::load_bundle(bundle_dir);
    auto summary = fairstep::calibration_report(b.records, b.maps, groups_for(b, groups),
                                                fairstep::parse_formula(doc(baseline)));
    auto checks = fairstep::check_targets(summary, fairstep::CalibrationTargets::published(group));
    return json{{"summary", to_json(summary)}, {"checks", to_json(checks)}}.dump();
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Stepwise payment-formula engine";

    // Translators run newest first, so the base class goes in before its subclasses.
    auto base = py::register_exception<fairstep::Error>(m, "Error");
    py::register_exception<fairstep::IngestError>(m, "IngestError", base);
    py::register_exception<fairstep::ConfigError>(m, "ConfigError", base);
    py::register_exception<fairstep::FitError>(m, "FitError", base);

    m.def("ingest", &ingest, py::arg("enrollees"), py::arg("maps_dir"), py::arg("out"),
          py::arg("groups") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("simulate", &simulate, py::arg("spec"), py::arg("out"), py::arg("n") = py::none(),
          py::arg("seed") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("report", &report, py::arg("bundle"), py::arg("formula"), py::arg("cv_folds") = 0, py::arg("seed") = 0,
          py::arg("groups") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("stepwise", &stepwise, py::arg("bundle"), py::arg("baseline"), py::arg("pool"), py::arg("policy"),
          py::arg("groups") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("compare", &compare, py::arg("bundle"), py::arg("baseline"), py::arg("pool"), py::arg("policies"),
          py::arg("groups") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("replay", &replay, py::arg("bundle"), py::arg("trace"), py::arg("pool"), py::arg("groups") = py::none(),
          py::call_guard<py::gil_scoped_release>());
    m.def("calibrate", &calibrate, py::arg("bundle"), py::arg("baseline"), py::arg("group"),
          py::arg("groups") = py::none(), py::call_guard<py::gil_scoped_release>());
    m.def("two_sided_p_value", &fairstep::two_sided_p_value, py::arg("t"), py::arg("df"));

    py::class_<fairstep::Service>(m, "Service")
        .def(py::init([](std::optional<std::string> bundle) {
                 std::optional<std::filesystem::path> p;
                 if (bundle) p = *bundle;
                 return std::make_unique<fairstep::Service>(p);
             }),
             py::arg("bundle") = py::none())
        .def(
            "handle",
            [](fairstep::Service& s, const std::string& method, const std::string& path, const std::string& body) {
                auto r = s.handle(method, path, body);
                return std::make_pair(r.status, r.body.dump());
            },
            py::arg("method"), py::arg("path"), py::arg("body") = "", py::call_guard<py::gil_scoped_release>())
        .def("serve", &fairstep::Service::serve, py::arg("host") = "127.0.0.1", py::arg("port") = 0,
             py::call_guard<py::gil_scoped_release>())
        .def("stop", &fairstep::Service::stop)
        .def("wait_until_listening", &fairstep::Service::wait_until_listening, py::arg("timeout_ms") = 5000,
             py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("port", &fairstep::Service::bound_port);
}
