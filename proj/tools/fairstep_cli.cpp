#include "fairstep/bundle.hpp"
#include "fairstep/error.hpp"
#include "fairstep/serialize.hpp"
#include "fairstep/service.hpp"
#include "fairstep/stepwise.hpp"
#include "fairstep/synthpop.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

using namespace fairstep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Input that fails to load or validate; exits with status 2.
struct SchemaError : Error {
    using Error::Error;
};

template <class F>
auto load(F&& f)
{
    try {
        return f();
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        throw SchemaError(e.what());
    } catch (const json::exception& e) {
        throw SchemaError(e.what());
    }
}

struct MapOptions {
    std::string dir;
    std::string hcc_map;
    std::string ccs_map;
    std::string hierarchy;
    std::string payment_hccs;

    void add_to(CLI::App* app)
    {
        app->add_option("--maps", dir, "Directory holding hcc_map.csv, ccs_map.csv, hierarchy.csv[, payment_hccs.csv]");
        app->add_option("--hcc-map", hcc_map, "ICD to HCC map (icd,hcc)");
        app->add_option("--ccs-map", ccs_map, "ICD to CCS map (icd,ccs)");
        app->add_option("--hierarchy", hierarchy, "HCC hierarchy rules (dominant_hcc,suppressed_hcc)");
        app->add_option("--payment-hccs", payment_hccs, "Payment HCC list (hcc)");
    }

    MapFiles files() const
    {
        MapFiles f;
        auto pick = [&](const std::string& explicit_path, const char* name) -> fs::path {
            if (!explicit_path.empty()) return explicit_path;
            if (dir.empty()) throw SchemaError(std::string("missing --") + name + " (or --maps DIR)");
            return fs::path(dir) / (std::string(name) + ".csv");
        };
        f.hcc_map = pick(hcc_map, "hcc_map");
        f.ccs_map = pick(ccs_map, "ccs_map");
        f.hierarchy = pick(hierarchy, "hierarchy");
        if (!payment_hccs.empty()) {
            f.payment_hccs = payment_hccs;
        } else if (!dir.empty() && fs::exists(fs::path(dir) / "payment_hccs.csv")) {
            f.payment_hccs = fs::path(dir) / "payment_hccs.csv";
        }
        return f;
    }
};

std::vector<GroupDefinition> resolve_groups(const Bundle& bundle, const std::string& groups_path)
{
    if (groups_path.empty()) {
        if (bundle.groups.empty()) throw SchemaError("no --groups given and the bundle carries none");
        return bundle.groups;
    }
    return load([&] {
        auto g = load_group_definitions(groups_path);
        validate_groups(g, bundle.maps);
        return g;
    });
}

Formula load_formula_file(const std::string& path, bool require_partition)
{
    return load([&] {
        Formula f = parse_formula(read_json_file(path));
        validate_formula(f, AgeBanding{}, require_partition);
        return f;
    });
}

void write_text(const std::string& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << text;
}

std::string fmt(const char* pattern, double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, x);
    return buf;
}

std::string opt_fmt(const char* pattern, const std::optional<double>& x)
{
    return x ? fmt(pattern, *x) : "-";
}

void print_report(const MetricReport& r)
{
    std::cout << "evaluation  " << (r.evaluation_mode.kind == EvaluationKind::InSample ? "in-sample" : "cross-validated")
              << '\n';
    std::cout << "r2          " << fmt("%.6f", r.r2) << '\n';
    std::cout << "adj_r2      " << opt_fmt("%.6f", r.adj_r2) << '\n';
    std::cout << "\nvariable                    coefficient      p-value (naive)\n";
    for (const auto& v : r.per_variable) {
        std::printf("%-26s %14.4f %s  %s\n", to_string(v.variable).c_str(), v.coefficient,
                    opt_fmt("%12.4g", v.p_value).c_str(), v.aliased ? "aliased" : "");
    }
    std::cout << "\ngroup          n_g     mean spend    net comp   pred ratio\n";
    for (const auto& g : r.group_metrics) {
        std::printf("%-12s %7zu %12.2f %11.2f %12s\n", g.group_id.c_str(), g.n_g, g.group_mean_spend,
                    g.net_compensation, opt_fmt("%.4f", g.predictive_ratio).c_str());
    }
}

void print_trace(const DecisionTrace& t)
{
    std::cout << "policy " << t.policy_name << ", " << t.entries.size() << " evaluated steps\n";
    for (const auto& e : t.entries) {
        std::printf("%3zu %-8s %-28s %-8s dr2 %+.6f (%s%%)", e.step, e.accepted ? "ACCEPT" : "reject",
                    describe(e.action).c_str(), e.action.label.c_str(), e.deltas.r2_absolute,
                    opt_fmt("%+.3f", e.deltas.r2_relative_percent).c_str());
        for (const auto& g : e.deltas.groups)
            std::printf("  NC[%s] %+.2f (%s%%)", g.group_id.c_str(), g.absolute,
                        opt_fmt("%+.2f", g.relative_percent).c_str());
        std::printf("\n      %s\n", e.reason.c_str());
    }
}

std::unique_ptr<Service> g_service;

void on_signal(int)
{
    if (g_service) g_service->stop();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stepwise risk-adjustment formula workbench"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "Structured JSON output instead of tables");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate inputs and write a cohort bundle");
    std::string enrollees, out_dir, groups_in;
    MapOptions ingest_maps;
    ingest->add_option("--enrollees", enrollees, "Enrollee CSV")->required();
    ingest_maps.add_to(ingest);
    ingest->add_option("--groups", groups_in, "Group definitions JSON to store in the bundle");
    ingest->add_option("--out", out_dir, "Bundle directory")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic enrollee CSV");
    std::string spec_path, sim_out;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::size_t> n_override;
    unsigned threads = 1;
    simulate->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
    simulate->add_option("--out", sim_out, "Output enrollee CSV")->required();
    simulate->add_option("--seed", seed_override, "Override the spec seed");
    simulate->add_option("--n", n_override, "Override the population size");
    simulate->add_option("--threads", threads, "Generation threads (output is identical for any value)");

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Summary statistics against the published targets");
    std::string bundle_dir, formula_path, groups_path, target_group = "mhsud";
    calibrate->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    calibrate->add_option("--baseline", formula_path, "Baseline formula JSON")->required();
    calibrate->add_option("--groups", groups_path, "Group definitions JSON (default: bundle groups)");
    calibrate->add_option("--group", target_group, "Group the targets refer to");

    // tune
    auto* tune_cmd = app.add_subcommand("tune", "Adjust a synthetic spec toward the published targets");
    MapOptions tune_maps;
    std::string tune_out;
    std::size_t max_iters = 10;
    tune_cmd->add_option("--spec", spec_path, "Synthetic spec JSON")->required();
    tune_maps.add_to(tune_cmd);
    tune_cmd->add_option("--groups", groups_path, "Group definitions JSON")->required();
    tune_cmd->add_option("--baseline", formula_path, "Baseline formula JSON")->required();
    tune_cmd->add_option("--group", target_group, "Group the targets refer to");
    tune_cmd->add_option("--max-iters", max_iters, "Iteration budget");
    tune_cmd->add_option("--out", tune_out, "Write the tuned spec here");

    // report
    auto* report = app.add_subcommand("report", "Fit a formula and report global and group metrics");
    std::optional<std::size_t> cv_folds;
    std::uint64_t cv_seed = 0;
    std::string csv_out;
    report->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    report->add_option("--formula", formula_path, "Formula JSON")->required();
    report->add_option("--groups", groups_path, "Group definitions JSON (default: bundle groups)");
    report->add_option("--cv", cv_folds, "Cross-validate with K folds");
    report->add_option("--seed", cv_seed, "Fold assignment seed");
    report->add_option("--csv", csv_out, "Also write a flat CSV");

    // stepwise
    auto* stepwise = app.add_subcommand("stepwise", "Run a stepwise search under one policy");
    std::string pool_path, policy_path, trace_out, dot_out;
    stepwise->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    stepwise->add_option("--baseline", formula_path, "Baseline formula JSON")->required();
    stepwise->add_option("--pool", pool_path, "Candidate pool JSON")->required();
    stepwise->add_option("--policy", policy_path, "Selection policy JSON")->required();
    stepwise->add_option("--groups", groups_path, "Group definitions JSON (default: bundle groups)");
    stepwise->add_option("--out-trace", trace_out, "Decision trace JSON")->required();
    stepwise->add_option("--dot", dot_out, "Graphviz rendering of the trace");
    stepwise->add_option("--csv", csv_out, "Flat CSV of the trace");

    // compare
    auto* compare = app.add_subcommand("compare", "Run several policies and report where they diverge");
    std::vector<std::string> policy_paths;
    std::string compare_out;
    compare->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    compare->add_option("--baseline", formula_path, "Baseline formula JSON")->required();
    compare->add_option("--pool", pool_path, "Candidate pool JSON")->required();
    compare->add_option("--policies", policy_paths, "Selection policy JSON files")->required()->expected(2, -1);
    compare->add_option("--groups", groups_path, "Group definitions JSON (default: bundle groups)");
    compare->add_option("--out", compare_out, "Write the full comparison JSON here");

    // replay
    auto* replay = app.add_subcommand("replay", "Re-apply a trace's accepted steps and report the result");
    std::string trace_in;
    replay->add_option("--bundle", bundle_dir, "Bundle directory")->required();
    replay->add_option("--trace", trace_in, "Decision trace JSON")->required();
    replay->add_option("--groups", groups_path, "Group definitions JSON (default: bundle groups)");
    replay->add_option("--pool", pool_path, "Candidate pool JSON (widens the column universe)");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the interactive HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--bundle", bundle_dir, "Default bundle directory")->required();
    serve->add_option("--port", port, "TCP port (0 picks a free one)");
    serve->add_option("--host", host, "Bind address");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*ingest) {
            Bundle b = load([&] {
                std::optional<fs::path> g;
                if (!groups_in.empty()) g = groups_in;
                return create_bundle(enrollees, ingest_maps.files(), out_dir, g);
            });
            if (as_json) {
                std::cout << json{{"bundle", out_dir}, {"exclusions", to_json(b.exclusions)}}.dump(2) << '\n';
            } else {
                std::cout << "bundle " << out_dir << ": kept " << b.exclusions.kept_count << " of "
                          << b.exclusions.input_count << '\n';
                for (const auto& [reason, count] : b.exclusions.removed_by_reason)
                    std::cout << "  removed " << count << " (" << reason << ")\n";
            }
            return 0;
        }
        if (*simulate) {
            SyntheticSpec spec = load([&] { return load_synthetic_spec(spec_path); });
            if (seed_override) spec.seed = *seed_override;
            if (n_override) spec.n = *n_override;
            load([&] {
                validate_spec(spec);
                return 0;
            });
            std::ofstream out(sim_out);
            if (!out) throw ConfigError("cannot write " + sim_out);
            auto records = generate(spec, threads);
            write_enrollees(out, records, !spec.regions.empty());
            if (as_json)
                std::cout << json{{"out", sim_out}, {"n", spec.n}, {"seed", spec.seed}}.dump(2) << '\n';
            else
                std::cout << "wrote " << spec.n << " enrollees to " << sim_out << " (seed " << spec.seed << ")\n";
            return 0;
        }
        if (*tune_cmd) {
            SyntheticSpec spec = load([&] { return load_synthetic_spec(spec_path); });
            CodeMaps maps = load([&] { return load_code_maps(tune_maps.files()); });
            auto groups = load([&] {
                auto g = load_group_definitions(groups_path);
                validate_groups(g, maps);
                return g;
            });
            Formula baseline = load_formula_file(formula_path, true);
            load([&] {
                validate_spec(spec, &maps);
                return 0;
            });
            TuneResult r = tune(spec, CalibrationTargets::published(target_group), maps, groups, baseline, max_iters);
            if (!tune_out.empty()) write_json_file(tune_out, to_json(r.spec));
            if (as_json) {
                std::cout << json{{"converged", r.converged},
                                  {"iterations", r.iterations},
                                  {"checks", to_json(r.checks)},
                                  {"failures", r.failures},
                                  {"spec", to_json(r.spec)}}
                                 .dump(2)
                          << '\n';
            } else {
                std::cout << (r.converged ? "converged" : "did not converge") << " after " << r.iterations
                          << " iterations\n";
                for (const auto& c : r.checks)
                    std::printf("  %-26s %12.5g  [%g, %g] %s\n", c.name.c_str(), c.value, c.band.lo, c.band.hi,
                                c.pass ? "ok" : "FAIL");
                for (const auto& f : r.failures) std::cout << "  " << f << '\n';
            }
            return r.converged ? 0 : 1;
        }

        if (*serve) {
            load([&] { return load_bundle(bundle_dir); });
            g_service = std::make_unique<Service>(fs::path(bundle_dir));
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::thread announce([&] {
                if (g_service->wait_until_listening(10000))
                    std::cout << "listening on http://" << host << ':' << g_service->bound_port() << std::endl;
            });
            try {
                g_service->serve(host, port);
            } catch (...) {
                announce.join();
                throw;
            }
            announce.join();
            return 0;
        }

        Bundle bundle = load([&] { return load_bundle(bundle_dir); });
        auto groups = resolve_groups(bundle, groups_path);

        if (*calibrate) {
            Formula baseline = load_formula_file(formula_path, true);
            CalibrationSummary s = calibration_report(bundle.records, bundle.maps, groups, baseline);
            auto checks = check_targets(s, CalibrationTargets::published(target_group));
            if (as_json) {
                std::cout << json{{"summary", to_json(s)}, {"checks", to_json(checks)}}.dump(2) << '\n';
            } else {
                std::printf("n %zu, overall mean %.2f, baseline r2 %.4f, adj_r2 %.4f\n", s.n, s.overall_mean,
                            s.baseline_r2, s.baseline_adj_r2);
                for (const auto& g : s.groups)
                    std::printf("  %-10s prevalence %.4f recognized %.4f mean ratio %.3f NC %.2f (%.1f%% of mean)\n",
                                g.group_id.c_str(), g.prevalence, g.recognized_prevalence, g.mean_ratio,
                                g.net_compensation, 100.0 * g.net_compensation_fraction);
                for (const auto& c : checks)
                    std::printf("  %-26s %12.5g  [%g, %g] %s\n", c.name.c_str(), c.value, c.band.lo, c.band.hi,
                                c.pass ? "ok" : "FAIL");
            }
            return 0;
        }

        if (*report) {
            Formula formula = load_formula_file(formula_path, false);
            EvaluationMode mode = cv_folds ? EvaluationMode::cross_validated(*cv_folds, cv_seed)
                                           : EvaluationMode::in_sample();
            StepwiseContext ctx = StepwiseContext::from_cohort(bundle.records, bundle.maps, groups, formula);
            SearchState state = ctx.initial_state(formula, mode);
            if (!csv_out.empty()) {
                std::ofstream out(csv_out);
                if (!out) throw ConfigError("cannot write " + csv_out);
                write_report_csv(out, {{fs::path(formula_path).stem().string(), state.report}});
            }
            if (as_json) {
                std::cout << json{{"report", to_json(state.report)}, {"fit", to_json(state.fit)}}.dump(2) << '\n';
            } else {
                print_report(state.report);
            }
            return 0;
        }

        if (*stepwise || *compare) {
            Formula baseline = load_formula_file(formula_path, true);
            CandidatePool pool = load([&] { return parse_pool(read_json_file(pool_path)); });
            std::vector<SelectionPolicy> policies;
            for (const auto& p : *stepwise ? std::vector<std::string>{policy_path} : policy_paths)
                policies.push_back(load([&] { return parse_policy(read_json_file(p)); }));
            StepwiseContext ctx =
                StepwiseContext::from_cohort(bundle.records, bundle.maps, groups, universe_formula(baseline, pool));

            if (*stepwise) {
                StepwiseRun run = run_stepwise(ctx, baseline, pool, policies.front());
                write_json_file(trace_out, to_json(run.trace));
                if (!dot_out.empty()) {
                    std::ofstream out(dot_out);
                    write_trace_dot(out, run.trace);
                }
                if (!csv_out.empty()) {
                    std::ofstream out(csv_out);
                    write_trace_csv(out, run.trace);
                }
                if (as_json) {
                    std::cout << to_json(run).dump(2) << '\n';
                } else {
                    print_trace(run.trace);
                    std::cout << "\nfinal formula:\n";
                    print_report(run.final_report);
                }
                return 0;
            }
            DivergenceReport rep = compare_policies(ctx, baseline, pool, policies);
            json doc = to_json(rep);
            if (!compare_out.empty()) write_json_file(compare_out, doc);
            if (as_json) {
                std::cout << doc.dump(2) << '\n';
            } else {
                for (const auto& run : rep.runs) {
                    print_trace(run.trace);
                    std::cout << "  final:";
                    for (const auto& v : run.final_formula.variables)
                        if (v.kind == VariableKind::Hcc) std::cout << ' ' << v.key;
                    std::cout << "\n\n";
                }
                for (const auto& p : rep.pairs) {
                    std::cout << rep.policies[p.first].name << " vs " << rep.policies[p.second].name << ": ";
                    if (p.index)
                        std::cout << "diverge at step " << *p.index << '\n';
                    else
                        std::cout << "identical traces\n";
                }
            }
            return 0;
        }

        if (*replay) {
            DecisionTrace trace = load([&] { return parse_trace(read_json_file(trace_in)); });
            CandidatePool pool;
            if (!pool_path.empty()) pool = load([&] { return parse_pool(read_json_file(pool_path)); });
            Formula universe = universe_formula(trace.baseline, pool);
            for (const auto& e : trace.entries)
                for (const auto& v : e.action.variables)
                    if (!universe.contains(v)) universe.variables.push_back(v);
            StepwiseContext ctx = StepwiseContext::from_cohort(bundle.records, bundle.maps, groups, universe);
            SearchState state = replay_trace(ctx, trace, EvaluationMode::in_sample());
            if (as_json)
                std::cout << json{{"formula", to_json(state.formula())}, {"report", to_json(state.report)}}.dump(2)
                          << '\n';
            else
                print_report(state.report);
            return 0;
        }
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
