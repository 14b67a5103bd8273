#include "fairstep/serialize.hpp"

#include "fairstep/csv.hpp"
#include "fairstep/error.hpp"

#include <cstdio>
#include <fstream>

namespace fairstep {

using nlohmann::json;

namespace {

template <class T>
json opt(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

std::string num(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string num(const std::optional<double>& x)
{
    return x ? num(*x) : std::string();
}

template <class F>
auto guarded(const char* what, F&& f)
{
    try {
        return f();
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": " + e.what());
    }
}

} // namespace

json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const std::filesystem::path& path, const json& doc)
{
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

// --- formulas and pools ----------------------------------------------------

json to_json(const VariableId& v)
{
    return {{"kind", to_string(v.kind)}, {"key", v.key}};
}

VariableId parse_variable(const json& j)
{
    return guarded("variable", [&] {
        if (j.is_string()) return VariableId::hcc(j.get<std::string>());
        return VariableId{parse_variable_kind(j.at("kind").get<std::string>()), j.at("key").get<std::string>()};
    });
}

json to_json(const Formula& f)
{
    json out = json::array();
    for (const auto& v : f.variables) out.push_back(to_json(v));
    return out;
}

Formula parse_formula(const json& j)
{
    if (!j.is_array()) throw ConfigError("formula must be a JSON array of {kind, key}");
    Formula f;
    for (const auto& item : j) {
        if (!item.is_object()) throw ConfigError("formula entries must be {kind, key} objects");
        f.variables.push_back(parse_variable(item));
    }
    return f;
}

json to_json(const CandidatePool& pool)
{
    json out = json::array();
    for (const auto& b : pool) {
        json vars = json::array();
        for (const auto& v : b.variables) vars.push_back(to_json(v));
        out.push_back({{"label", b.label}, {"variables", vars}});
    }
    return out;
}

CandidatePool parse_pool(const json& j)
{
    return guarded("pool", [&] {
        const json& blocks = j.is_object() && j.contains("blocks") ? j.at("blocks") : j;
        if (!blocks.is_array()) throw ConfigError("pool must be an array of blocks");
        CandidatePool pool;
        for (const auto& b : blocks) {
            CandidateBlock block;
            block.label = b.at("label").get<std::string>();
            for (const auto& v : b.at("variables")) block.variables.push_back(parse_variable(v));
            pool.push_back(std::move(block));
        }
        validate_pool(pool);
        return pool;
    });
}

// --- policies --------------------------------------------------------------

json to_json(const EvaluationMode& mode)
{
    if (mode.kind == EvaluationKind::InSample) return {{"mode", "in_sample"}};
    return {{"mode", "cross_validated"}, {"folds", mode.folds}, {"seed", mode.seed}};
}

EvaluationMode parse_evaluation_mode(const json& j)
{
    return guarded("evaluation", [&] {
        std::string mode = j.value("mode", "in_sample");
        if (mode == "in_sample") return EvaluationMode::in_sample();
        if (mode == "cross_validated")
            return EvaluationMode::cross_validated(j.at("folds").get<std::size_t>(), j.value("seed", std::uint64_t{0}));
        throw ConfigError("unknown evaluation mode '" + mode + "'");
    });
}

json to_json(const Objective& objective)
{
    return std::visit(
        [](const auto& rule) -> json {
            using T = std::decay_t<decltype(rule)>;
            if constexpr (std::is_same_v<T, MaxR2>) {
                return {{"type", "max_r2"}, {"min_gain", rule.min_gain}};
            } else if constexpr (std::is_same_v<T, PValueGate>) {
                return {{"type", "p_value_gate"}, {"alpha", rule.alpha}};
            } else if constexpr (std::is_same_v<T, NetCompTowardZero>) {
                return {{"type", "net_comp_toward_zero"},
                        {"group_id", rule.group_id},
                        {"require_nonpositive_start", rule.require_nonpositive_start}};
            } else {
                json list = json::array();
                for (const auto& o : rule.objectives) list.push_back(to_json(o));
                return {{"type", "lexicographic"}, {"objectives", list}};
            }
        },
        objective.rule);
}

Objective parse_objective(const json& j)
{
    return guarded("objective", [&] {
        std::string type = j.at("type").get<std::string>();
        if (type == "max_r2") return Objective{MaxR2{j.value("min_gain", 0.0)}};
        if (type == "p_value_gate") return Objective{PValueGate{j.value("alpha", 0.05)}};
        if (type == "net_comp_toward_zero")
            return Objective{NetCompTowardZero{j.at("group_id").get<std::string>(),
                                               j.value("require_nonpositive_start", true)}};
        if (type == "lexicographic") {
            Lexicographic lex;
            for (const auto& o : j.at("objectives")) lex.objectives.push_back(parse_objective(o));
            return Objective{std::move(lex)};
        }
        throw ConfigError("unknown objective type '" + type + "'");
    });
}

json to_json(const SelectionPolicy& policy)
{
    return {{"name", policy.name},
            {"objective", to_json(policy.objective)},
            {"parsimony_tiebreak", policy.parsimony_tiebreak},
            {"evaluation", to_json(policy.evaluation)}};
}

SelectionPolicy parse_policy(const json& j)
{
    return guarded("policy", [&] {
        SelectionPolicy p;
        p.name = j.at("name").get<std::string>();
        p.objective = parse_objective(j.at("objective"));
        p.parsimony_tiebreak = j.value("parsimony_tiebreak", false);
        if (j.contains("evaluation")) p.evaluation = parse_evaluation_mode(j.at("evaluation"));
        p.validate();
        return p;
    });
}

// --- reports ---------------------------------------------------------------

json to_json(const ExclusionReport& report)
{
    return {{"input_count", report.input_count},
            {"kept_count", report.kept_count},
            {"removed_by_reason", report.removed_by_reason}};
}

json to_json(const FitResult& fit)
{
    json est = json::array();
    for (const auto& e : fit.estimates) {
        est.push_back({{"variable", to_json(e.variable)},
                       {"coefficient", e.coefficient},
                       {"aliased", e.aliased},
                       {"std_error", opt(e.std_error)},
                       {"t_stat", opt(e.t_stat)},
                       {"p_value", opt(e.p_value)}});
    }
    json aliased = json::array();
    for (const auto& v : fit.aliased) aliased.push_back(to_json(v));
    return {{"formula", to_json(fit.formula)},
            {"estimates", est},
            {"n", fit.n},
            {"rss", fit.rss},
            {"tss", fit.tss},
            {"df_resid", fit.df_resid},
            {"sigma2", fit.sigma2},
            {"r2", fit.r2},
            {"adj_r2", fit.adj_r2},
            {"p_effective", fit.p_effective},
            {"aliased", aliased}};
}

json to_json(const GroupMetrics& g)
{
    return {{"group_id", g.group_id},
            {"net_compensation", g.net_compensation},
            {"predictive_ratio", opt(g.predictive_ratio)},
            {"n_g", g.n_g},
            {"group_mean_spend", g.group_mean_spend},
            {"group_mean_predicted", g.group_mean_predicted}};
}

json to_json(const MetricReport& report)
{
    json vars = json::array();
    for (const auto& v : report.per_variable) {
        vars.push_back({{"variable", to_json(v.variable)},
                        {"coefficient", v.coefficient},
                        {"aliased", v.aliased},
                        {"p_value", opt(v.p_value)}});
    }
    json groups = json::array();
    for (const auto& g : report.group_metrics) groups.push_back(to_json(g));
    return {{"formula", to_json(report.formula)},
            {"r2", report.r2},
            {"adj_r2", opt(report.adj_r2)},
            {"per_variable", vars},
            {"group_metrics", groups},
            {"evaluation_mode", to_json(report.evaluation_mode)},
            {"naive_p_values", report.naive_p_values}};
}

json to_json(const StepAction& action)
{
    json vars = json::array();
    for (const auto& v : action.variables) vars.push_back(to_json(v));
    return {{"kind", to_string(action.kind)}, {"label", action.label}, {"variables", vars}};
}

StepAction parse_action(const json& j)
{
    return guarded("action", [&] {
        StepAction a;
        std::string kind = j.at("kind").get<std::string>();
        if (kind == "add") {
            a.kind = StepKind::Add;
        } else if (kind == "remove") {
            a.kind = StepKind::Remove;
        } else {
            throw ConfigError("action kind must be 'add' or 'remove'");
        }
        a.label = j.value("label", "");
        for (const auto& v : j.at("variables")) a.variables.push_back(parse_variable(v));
        return a;
    });
}

json to_json(const StepDeltas& d)
{
    json groups = json::array();
    for (const auto& g : d.groups) {
        groups.push_back({{"group_id", g.group_id},
                          {"net_compensation_before", g.before},
                          {"net_compensation_after", g.after},
                          {"absolute", g.absolute},
                          {"relative_percent", opt(g.relative_percent)},
                          {"toward_zero", g.toward_zero}});
    }
    return {{"r2_absolute", d.r2_absolute},
            {"r2_relative_percent", opt(d.r2_relative_percent)},
            {"adj_r2_absolute", opt(d.adj_r2_absolute)},
            {"adj_r2_relative_percent", opt(d.adj_r2_relative_percent)},
            {"min_added_p_value", opt(d.min_added_p_value)},
            {"groups", groups}};
}

json to_json(const TraceEntry& e)
{
    return {{"step", e.step},
            {"action", to_json(e.action)},
            {"report_before", to_json(e.report_before)},
            {"report_after", to_json(e.report_after)},
            {"deltas", to_json(e.deltas)},
            {"accepted", e.accepted},
            {"reason", e.reason},
            {"fits_evaluated", e.fits_evaluated}};
}

json to_json(const DecisionTrace& trace)
{
    json entries = json::array();
    for (const auto& e : trace.entries) entries.push_back(to_json(e));
    return {{"policy", trace.policy_name}, {"baseline", to_json(trace.baseline)}, {"entries", entries}};
}

DecisionTrace parse_trace(const json& j)
{
    return guarded("trace", [&] {
        DecisionTrace t;
        t.policy_name = j.value("policy", "");
        t.baseline = parse_formula(j.at("baseline"));
        for (const auto& e : j.at("entries")) {
            TraceEntry entry;
            entry.step = e.value("step", t.entries.size());
            entry.action = parse_action(e.at("action"));
            entry.accepted = e.at("accepted").get<bool>();
            entry.reason = e.value("reason", "");
            entry.fits_evaluated = e.value("fits_evaluated", std::size_t{0});
            t.entries.push_back(std::move(entry));
        }
        return t;
    });
}

json to_json(const StepwiseRun& run)
{
    return {{"final_formula", to_json(run.final_formula)},
            {"final_report", to_json(run.final_report)},
            {"trace", to_json(run.trace)}};
}

json to_json(const DivergenceReport& report)
{
    json runs = json::array();
    for (std::size_t i = 0; i < report.runs.size(); ++i) {
        json r = to_json(report.runs[i]);
        r["policy"] = to_json(report.policies[i]);
        runs.push_back(std::move(r));
    }
    json pairs = json::array();
    for (const auto& p : report.pairs) {
        pairs.push_back({{"first", report.policies[p.first].name},
                         {"second", report.policies[p.second].name},
                         {"divergence_index", opt(p.index)}});
    }
    return {{"runs", runs}, {"pairs", pairs}, {"first_divergence", opt(report.first_divergence)}};
}

json to_json(const CalibrationSummary& s)
{
    json groups = json::array();
    for (const auto& g : s.groups) {
        groups.push_back({{"group_id", g.group_id},
                          {"prevalence", g.prevalence},
                          {"recognized_prevalence", g.recognized_prevalence},
                          {"mean_spend", g.mean_spend},
                          {"mean_ratio", g.mean_ratio},
                          {"net_compensation", g.net_compensation},
                          {"net_compensation_fraction", g.net_compensation_fraction}});
    }
    return {{"n", s.n},
            {"overall_mean", s.overall_mean},
            {"baseline_r2", s.baseline_r2},
            {"baseline_adj_r2", s.baseline_adj_r2},
            {"groups", groups}};
}

json to_json(const std::vector<TargetCheck>& checks)
{
    json out = json::array();
    for (const auto& c : checks)
        out.push_back({{"name", c.name}, {"value", c.value}, {"lo", c.band.lo}, {"hi", c.band.hi}, {"pass", c.pass}});
    return out;
}

// --- flat exports ----------------------------------------------------------

void write_report_csv(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& reports)
{
    out << "formula,evaluation,r2,adj_r2,group_id,n_g,net_compensation,predictive_ratio,group_mean_spend,"
           "group_mean_predicted\n";
    for (const auto& [label, r] : reports) {
        std::string mode = r.evaluation_mode.kind == EvaluationKind::InSample ? "in_sample" : "cross_validated";
        auto prefix = csv::quote(label) + ',' + mode + ',' + num(r.r2) + ',' + num(r.adj_r2) + ',';
        if (r.group_metrics.empty()) out << prefix << ",,,,,\n";
        for (const auto& g : r.group_metrics) {
            out << prefix << csv::quote(g.group_id) << ',' << g.n_g << ',' << num(g.net_compensation) << ','
                << num(g.predictive_ratio) << ',' << num(g.group_mean_spend) << ',' << num(g.group_mean_predicted)
                << '\n';
        }
    }
}

void write_trace_csv(std::ostream& out, const DecisionTrace& trace)
{
    out << "step,action,block,variables,accepted,reason,r2_before,r2_after,r2_delta,r2_relative_percent,"
           "min_added_p_value,group_id,nc_before,nc_after,nc_delta,nc_relative_percent,toward_zero,"
           "fits_evaluated\n";
    for (const auto& e : trace.entries) {
        std::string vars;
        for (const auto& v : e.action.variables) vars += (vars.empty() ? "" : ";") + v.key;
        auto prefix = std::to_string(e.step) + ',' + to_string(e.action.kind) + ',' + csv::quote(e.action.label) +
                      ',' + csv::quote(vars) + ',' + (e.accepted ? "true" : "false") + ',' + csv::quote(e.reason) +
                      ',' + num(e.report_before.r2) + ',' + num(e.report_after.r2) + ',' + num(e.deltas.r2_absolute) +
                      ',' + num(e.deltas.r2_relative_percent) + ',' + num(e.deltas.min_added_p_value) + ',';
        auto suffix = ',' + std::to_string(e.fits_evaluated) + '\n';
        if (e.deltas.groups.empty()) out << prefix << ",,,,,," << suffix;
        for (const auto& g : e.deltas.groups) {
            out << prefix << csv::quote(g.group_id) << ',' << num(g.before) << ',' << num(g.after) << ','
                << num(g.absolute) << ',' << num(g.relative_percent) << ',' << (g.toward_zero ? "true" : "false")
                << suffix;
        }
    }
}

namespace {

std::string dot_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

std::string node_label(const std::string& name, const MetricReport& r, const std::string& group)
{
    char buf[160];
    std::string label = name;
    std::snprintf(buf, sizeof buf, "\\nr2 %.4f", r.r2);
    label += buf;
    for (const auto& g : r.group_metrics) {
        if (!group.empty() && g.group_id != group) continue;
        std::snprintf(buf, sizeof buf, "\\nNC[%s] %.2f", dot_escape(g.group_id).c_str(), g.net_compensation);
        label += buf;
    }
    return label;
}

} // namespace

void write_trace_dot(std::ostream& out, const DecisionTrace& trace, const std::string& focus_group)
{
    out << "digraph trace {\n  rankdir=TB;\n  node [shape=box, fontname=\"Helvetica\"];\n";
    std::size_t current = 0;
    std::size_t next_id = 1;
    if (!trace.entries.empty())
        out << "  f0 [label=\"" << node_label("baseline", trace.entries.front().report_before, focus_group)
            << "\"];\n";
    else
        out << "  f0 [label=\"baseline\"];\n";
    for (const auto& e : trace.entries) {
        std::size_t id = next_id++;
        char edge[160];
        std::snprintf(edge, sizeof edge, "%s\\nΔr2 %+.5f", dot_escape(describe(e.action)).c_str(), e.deltas.r2_absolute);
        std::string name = e.accepted ? "F" + std::to_string(id) : "rejected";
        out << "  f" << id << " [label=\"" << node_label(name, e.report_after, focus_group) << "\""
            << (e.accepted ? "" : ", style=dashed, color=gray") << "];\n";
        out << "  f" << current << " -> f" << id << " [label=\"" << edge << "\""
            << (e.accepted ? ", penwidth=2" : ", style=dashed, color=gray") << "];\n";
        if (e.accepted) current = id;
    }
    out << "}\n";
}

} // namespace fairstep
