#include "fairstep/stepwise.hpp"

#include "fairstep/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_set>

namespace fairstep {

std::string to_string(StepKind kind)
{
    return kind == StepKind::Add ? "add" : "remove";
}

std::string describe(const StepAction& action)
{
    std::string out = to_string(action.kind) + " [";
    for (std::size_t i = 0; i < action.variables.size(); ++i) {
        if (i) out += ", ";
        out += action.variables[i].key;
    }
    out += "]";
    return out;
}

namespace {

void validate_objective(const Objective& objective)
{
    std::visit(
        [](const auto& rule) {
            using T = std::decay_t<decltype(rule)>;
            if constexpr (std::is_same_v<T, MaxR2>) {
                if (!(rule.min_gain >= 0.0) || !std::isfinite(rule.min_gain))
                    throw ConfigError("max_r2 min_gain must be a non-negative number");
            } else if constexpr (std::is_same_v<T, PValueGate>) {
                if (!(rule.alpha > 0.0 && rule.alpha < 1.0))
                    throw ConfigError("p_value_gate alpha must lie in (0, 1)");
            } else if constexpr (std::is_same_v<T, NetCompTowardZero>) {
                if (rule.group_id.empty()) throw ConfigError("net_comp_toward_zero needs a group_id");
            } else {
                if (rule.objectives.empty()) throw ConfigError("lexicographic objective list is empty");
                for (const auto& inner : rule.objectives) validate_objective(inner);
            }
        },
        objective.rule);
}

void collect_groups(const Objective& objective, std::vector<std::string>& out)
{
    if (const auto* nc = std::get_if<NetCompTowardZero>(&objective.rule)) out.push_back(nc->group_id);
    if (const auto* lex = std::get_if<Lexicographic>(&objective.rule))
        for (const auto& inner : lex->objectives) collect_groups(inner, out);
}

std::string fmt(const char* pattern, double a, double b = 0.0)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

} // namespace

void SelectionPolicy::validate() const
{
    if (name.empty()) throw ConfigError("policy name is empty");
    validate_objective(objective);
    if (evaluation.kind == EvaluationKind::CrossValidated && evaluation.folds < 2)
        throw ConfigError("cross-validation needs at least 2 folds");
}

const GroupDelta* StepDeltas::group(const std::string& id) const
{
    for (const auto& g : groups)
        if (g.group_id == id) return &g;
    return nullptr;
}

// --- context ---------------------------------------------------------------

StepwiseContext::StepwiseContext(DesignMatrix universe, std::vector<double> y, std::vector<GroupVector> groups,
                                 FitOptions options)
    : universe_(std::move(universe)), y_(std::move(y)), groups_(std::move(groups)), options_(options)
{
    if (y_.size() != universe_.rows()) throw ConfigError("outcome length does not match the design rows");
    for (const auto& g : groups_)
        if (g.member.size() != y_.size()) throw ConfigError("group '" + g.group_id + "' is not aligned with the rows");
    xp_ = std::make_shared<const CrossProduct>(cross_product(universe_, y_));
}

StepwiseContext StepwiseContext::from_cohort(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps,
                                             const std::vector<GroupDefinition>& groups, const Formula& universe,
                                             const AgeBanding& banding)
{
    CohortFeatures features(records, maps, banding);
    return StepwiseContext(build_design(features, universe, maps), spend_vector(records),
                           group_vectors(records, groups, maps));
}

std::shared_ptr<const CrossValidator> StepwiseContext::validator(const EvaluationMode& mode) const
{
    std::lock_guard lock(cv_cache_->mutex);
    auto key = std::make_pair(mode.folds, mode.seed);
    auto it = cv_cache_->validators.find(key);
    if (it != cv_cache_->validators.end()) return it->second;
    auto cv = std::make_shared<const CrossValidator>(universe_, y_, mode.folds, mode.seed, options_);
    cv_cache_->validators.emplace(key, cv);
    return cv;
}

MetricReport StepwiseContext::report_for(const SweepState&, const FitResult& fit, const EvaluationMode& mode) const
{
    if (mode.kind == EvaluationKind::InSample) return in_sample_report(fit, universe_, y_, groups_);
    return validator(mode)->report(fit.formula, fit, groups_);
}

SearchState StepwiseContext::initial_state(const Formula& baseline, const EvaluationMode& mode) const
{
    for (const auto& v : baseline.variables)
        if (!universe_.find(v)) throw ConfigError("baseline variable " + to_string(v) + " is not in the universe");
    SweepState state(xp_, baseline, options_);
    FitResult fit = state.result();
    MetricReport report = report_for(state, fit, mode);
    return {std::move(state), std::move(fit), std::move(report)};
}

// --- proposals -------------------------------------------------------------

Formula universe_formula(const Formula& baseline, const CandidatePool& pool)
{
    Formula out = baseline;
    for (const auto& block : pool)
        for (const auto& v : block.variables)
            if (!out.contains(v)) out.variables.push_back(v);
    return out;
}

void validate_pool(const CandidatePool& pool)
{
    for (const auto& block : pool) {
        if (block.variables.empty()) throw ConfigError("candidate block '" + block.label + "' is empty");
        std::set<VariableId> seen;
        for (const auto& v : block.variables) {
            if (v.kind != VariableKind::Hcc)
                throw ConfigError("candidate block '" + block.label + "' holds non-HCC variable " + to_string(v));
            if (!seen.insert(v).second)
                throw ConfigError("candidate block '" + block.label + "' repeats " + to_string(v));
        }
    }
}

std::vector<StepAction> propose_steps(const Formula& current, const CandidatePool& pool)
{
    std::vector<StepAction> adds;
    std::vector<std::pair<std::size_t, StepAction>> removes;
    std::set<std::pair<StepKind, std::vector<VariableId>>> seen;
    for (const auto& block : pool) {
        std::size_t present = 0;
        std::size_t last = 0;
        for (const auto& v : block.variables) {
            if (auto idx = current.index_of(v)) {
                ++present;
                last = std::max(last, *idx);
            }
        }
        if (present == 0) {
            if (seen.insert({StepKind::Add, block.variables}).second)
                adds.push_back({StepKind::Add, block.variables, block.label});
        } else if (present == block.variables.size()) {
            if (seen.insert({StepKind::Remove, block.variables}).second)
                removes.emplace_back(last, StepAction{StepKind::Remove, block.variables, block.label});
        }
    }
    std::stable_sort(removes.begin(), removes.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (auto& [pos, action] : removes) adds.push_back(std::move(action));
    return adds;
}

bool action_applies(const StepAction& action, const Formula& current)
{
    if (action.variables.empty()) return false;
    for (const auto& v : action.variables) {
        if (v.kind == VariableKind::Intercept) return false;
        bool has = current.contains(v);
        if (action.kind == StepKind::Add ? has : !has) return false;
    }
    return true;
}

// --- evaluation ------------------------------------------------------------

namespace {

StepDeltas compute_deltas(const MetricReport& before, const MetricReport& after, const FitResult& after_fit,
                          const StepAction& action)
{
    StepDeltas d;
    d.r2_absolute = after.r2 - before.r2;
    d.r2_relative_percent = relative_percent(before.r2, after.r2);
    if (before.adj_r2 && after.adj_r2) {
        d.adj_r2_absolute = *after.adj_r2 - *before.adj_r2;
        d.adj_r2_relative_percent = relative_percent(*before.adj_r2, *after.adj_r2);
    }
    for (const auto& gb : before.group_metrics) {
        const GroupMetrics* ga = after.group(gb.group_id);
        if (!ga) continue;
        GroupDelta g;
        g.group_id = gb.group_id;
        g.before = gb.net_compensation;
        g.after = ga->net_compensation;
        g.absolute = g.after - g.before;
        g.relative_percent = relative_percent(g.before, g.after);
        g.toward_zero = std::abs(g.after) < std::abs(g.before);
        d.groups.push_back(std::move(g));
    }
    if (action.kind == StepKind::Add) {
        for (const auto& v : action.variables) {
            const CoefficientEstimate* e = after_fit.estimate(v);
            if (e && e->p_value && (!d.min_added_p_value || *e->p_value < *d.min_added_p_value))
                d.min_added_p_value = e->p_value;
        }
    }
    return d;
}

} // namespace

StepEvaluation evaluate_step(const StepwiseContext& context, const SearchState& current, const StepAction& action,
                             const EvaluationMode& mode)
{
    if (!action_applies(action, current.formula()))
        throw ConfigError("step " + describe(action) + " does not apply to the current formula");
    SweepState next = current.fit_state;
    for (const auto& v : action.variables) {
        if (!context.universe().find(v)) throw ConfigError(to_string(v) + " is not in the candidate universe");
        next = action.kind == StepKind::Add ? next.added(v) : next.removed(v);
    }
    FitResult fit = next.result();
    MetricReport after = context.report_for(next, fit, mode);
    StepDeltas deltas = compute_deltas(current.report, after, fit, action);
    std::vector<VariableId> aliased;
    if (action.kind == StepKind::Add)
        for (const auto& v : action.variables)
            if (next.is_aliased(v)) aliased.push_back(v);
    MetricReport after_copy = after;
    return StepEvaluation{action, current.report, std::move(after_copy), std::move(deltas), std::move(aliased),
                          SearchState{std::move(next), std::move(fit), std::move(after)}};
}

// --- acceptance ------------------------------------------------------------

namespace {

enum class Verdict : std::uint8_t { Accept, Reject, Defer };

struct Judgement {
    Verdict verdict = Verdict::Defer;
    std::string reason;
    bool gate_passed = false;
};

Judgement judge(const Objective& objective, const StepEvaluation& ev, bool parsimony);

Judgement judge_rule(const MaxR2& rule, const StepEvaluation& ev, bool parsimony)
{
    double delta = ev.deltas.r2_absolute;
    if (std::abs(delta) <= kR2TieTolerance) return {Verdict::Defer, "r2 unchanged"};
    if (ev.action.kind == StepKind::Remove && parsimony) {
        double loss = -delta;
        if (loss <= rule.min_gain)
            return {Verdict::Accept, fmt("r2 loss %.6g within min_gain %.6g; smaller formula preferred", loss,
                                         rule.min_gain)};
        return {Verdict::Reject, fmt("r2 loss %.6g exceeds min_gain %.6g", loss, rule.min_gain)};
    }
    if (delta >= rule.min_gain) return {Verdict::Accept, fmt("r2 gain %.6g meets min_gain %.6g", delta, rule.min_gain)};
    if (delta < 0.0) return {Verdict::Reject, fmt("r2 falls by %.6g", -delta)};
    return {Verdict::Reject, fmt("r2 gain %.6g below min_gain %.6g", delta, rule.min_gain)};
}

Judgement judge_rule(const PValueGate& rule, const StepEvaluation& ev, bool)
{
    if (ev.action.kind == StepKind::Remove) return {Verdict::Defer, "p-value gate applies to additions only"};
    const MetricReport& after = ev.after;
    for (const auto& v : ev.action.variables) {
        auto it = std::find_if(after.per_variable.begin(), after.per_variable.end(),
                               [&](const VariableReport& r) { return r.variable == v; });
        if (it == after.per_variable.end() || !it->p_value)
            return {Verdict::Reject, "no p-value for " + v.key};
        if (!(*it->p_value < rule.alpha))
            return {Verdict::Reject, v.key + fmt(" p=%.4g not below alpha %.4g", *it->p_value, rule.alpha)};
    }
    return {Verdict::Defer, fmt("all added p-values below alpha %.4g", rule.alpha), true};
}

Judgement judge_rule(const NetCompTowardZero& rule, const StepEvaluation& ev, bool)
{
    const GroupDelta* g = ev.deltas.group(rule.group_id);
    if (!g) throw ConfigError("policy group '" + rule.group_id + "' is not among the evaluated groups");
    if (rule.require_nonpositive_start && g->before <= 0.0 && g->after > 0.0)
        return {Verdict::Reject, fmt("net compensation overshoots zero (%.2f to %.2f)", g->before, g->after)};
    double b = std::abs(g->before);
    double a = std::abs(g->after);
    if (std::abs(a - b) < kNetCompTieTolerance) return {Verdict::Defer, "net compensation unchanged"};
    if (a < b)
        return {Verdict::Accept,
                rule.group_id + fmt(" net compensation moves toward zero (%.2f to %.2f)", g->before, g->after)};
    return {Verdict::Reject, rule.group_id + fmt(" net compensation moves away from zero (%.2f to %.2f)", g->before,
                                                 g->after)};
}

Judgement judge_rule(const Lexicographic& rule, const StepEvaluation& ev, bool parsimony)
{
    Judgement out;
    for (const auto& inner : rule.objectives) {
        Judgement j = judge(inner, ev, parsimony);
        if (j.verdict != Verdict::Defer) return j;
        out.gate_passed = out.gate_passed || j.gate_passed;
        if (out.reason.empty() || j.gate_passed) out.reason = j.reason;
    }
    return out;
}

Judgement judge(const Objective& objective, const StepEvaluation& ev, bool parsimony)
{
    return std::visit([&](const auto& rule) { return judge_rule(rule, ev, parsimony); }, objective.rule);
}

} // namespace

Decision accept_step(const SelectionPolicy& policy, const StepEvaluation& evaluation)
{
    if (!evaluation.aliased.empty()) return {false, "aliased"};
    Judgement j = judge(policy.objective, evaluation, policy.parsimony_tiebreak);
    if (j.verdict == Verdict::Accept) return {true, j.reason};
    if (j.verdict == Verdict::Reject) return {false, j.reason};
    if (evaluation.action.kind == StepKind::Remove && policy.parsimony_tiebreak)
        return {true, "tie; parsimony prefers the smaller formula"};
    if (evaluation.action.kind == StepKind::Add && j.gate_passed) return {true, j.reason};
    return {false, "no objective improved (" + j.reason + ")"};
}

// --- search ----------------------------------------------------------------

namespace {

std::vector<VariableId> formula_key(const Formula& f)
{
    std::vector<VariableId> key = f.variables;
    std::sort(key.begin(), key.end());
    return key;
}

void check_policy_groups(const StepwiseContext& context, const SelectionPolicy& policy)
{
    std::vector<std::string> ids;
    collect_groups(policy.objective, ids);
    for (const auto& id : ids) {
        bool found = std::any_of(context.groups().begin(), context.groups().end(),
                                 [&](const GroupVector& g) { return g.group_id == id; });
        if (!found) throw ConfigError("policy '" + policy.name + "' targets unknown group '" + id + "'");
    }
}

} // namespace

StepwiseRun run_stepwise(const StepwiseContext& context, const Formula& baseline, const CandidatePool& pool,
                         const SelectionPolicy& policy)
{
    policy.validate();
    validate_pool(pool);
    check_policy_groups(context, policy);
    for (const auto& block : pool)
        for (const auto& v : block.variables)
            if (!context.universe().find(v)) throw ConfigError(to_string(v) + " is not in the candidate universe");

    const EvaluationMode& mode = policy.evaluation;
    SearchState state = context.initial_state(baseline, mode);
    std::set<std::vector<VariableId>> visited{formula_key(baseline)};
    DecisionTrace trace{policy.name, baseline, {}};
    std::size_t fits = 1;

    for (bool progressed = true; progressed;) {
        progressed = false;
        for (const auto& action : propose_steps(state.formula(), pool)) {
            if (!action_applies(action, state.formula())) continue;
            StepEvaluation ev = evaluate_step(context, state, action, mode);
            ++fits;
            Decision decision = accept_step(policy, ev);
            auto key = formula_key(ev.next.formula());
            if (decision.accepted && visited.count(key)) decision = {false, "would revisit an earlier formula"};

            TraceEntry entry;
            entry.step = trace.entries.size();
            entry.action = action;
            entry.report_before = ev.before;
            entry.report_after = ev.after;
            entry.deltas = ev.deltas;
            entry.accepted = decision.accepted;
            entry.reason = decision.reason;
            entry.fits_evaluated = fits;
            trace.entries.push_back(std::move(entry));

            if (decision.accepted) {
                visited.insert(std::move(key));
                state = std::move(ev.next);
                progressed = true;
            }
        }
    }
    return {state.formula(), state.report, std::move(trace)};
}

SearchState replay_trace(const StepwiseContext& context, const DecisionTrace& trace, const EvaluationMode& mode)
{
    SearchState state = context.initial_state(trace.baseline, mode);
    for (const auto& entry : trace.entries) {
        if (!entry.accepted) continue;
        state = evaluate_step(context, state, entry.action, mode).next;
    }
    return state;
}

std::optional<std::size_t> divergence_index(const DecisionTrace& a, const DecisionTrace& b)
{
    std::size_t common = std::min(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < common; ++i) {
        const auto& x = a.entries[i];
        const auto& y = b.entries[i];
        if (!x.action.same_as(y.action) || x.accepted != y.accepted) return i;
    }
    if (a.entries.size() != b.entries.size()) return common;
    return std::nullopt;
}

DivergenceReport compare_policies(const StepwiseContext& context, const Formula& baseline, const CandidatePool& pool,
                                  const std::vector<SelectionPolicy>& policies)
{
    if (policies.size() < 2) throw ConfigError("comparison needs at least two policies");
    std::set<std::string> names;
    for (const auto& p : policies)
        if (!names.insert(p.name).second) throw ConfigError("duplicate policy name '" + p.name + "'");

    DivergenceReport report;
    report.policies = policies;
    for (const auto& p : policies) report.runs.push_back(run_stepwise(context, baseline, pool, p));
    for (std::size_t i = 0; i < policies.size(); ++i) {
        for (std::size_t j = i + 1; j < policies.size(); ++j) {
            auto idx = divergence_index(report.runs[i].trace, report.runs[j].trace);
            report.pairs.push_back({i, j, idx});
            if (idx && (!report.first_divergence || *idx < *report.first_divergence)) report.first_divergence = idx;
        }
    }
    return report;
}

} // namespace fairstep
