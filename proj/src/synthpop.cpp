#include "fairstep/synthpop.hpp"

#include "fairstep/error.hpp"
#include "fairstep/metrics.hpp"
#include "fairstep/numeric.hpp"
#include "fairstep/ols.hpp"
#include "fairstep/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

namespace fairstep {

using nlohmann::json;

double Lognormal::mean() const
{
    return std::exp(mu + 0.5 * sigma * sigma);
}

const SyntheticCondition* SyntheticSpec::condition(const std::string& id) const
{
    for (const auto& c : conditions)
        if (c.id == id) return &c;
    return nullptr;
}

// --- JSON ------------------------------------------------------------------

namespace {

Lognormal parse_lognormal(const json& j, const std::string& where)
{
    if (!j.is_object() || !j.contains("mu") || !j.contains("sigma"))
        throw ConfigError(where + ": expected {\"mu\", \"sigma\"}");
    return {j.at("mu").get<double>(), j.at("sigma").get<double>()};
}

json lognormal_json(const Lognormal& l)
{
    return {{"mu", l.mu}, {"sigma", l.sigma}};
}

} // namespace

SyntheticSpec parse_synthetic_spec(const json& doc)
{
    try {
        SyntheticSpec spec;
        spec.name = doc.value("name", spec.name);
        spec.n = doc.at("n").get<std::size_t>();
        spec.seed = doc.at("seed").get<std::uint64_t>();
        if (doc.contains("age_range")) {
            spec.age_min = doc.at("age_range").at(0).get<int>();
            spec.age_max = doc.at("age_range").at(1).get<int>();
        }
        spec.female_share = doc.value("female_share", spec.female_share);
        if (doc.contains("regions")) spec.regions = doc.at("regions").get<std::vector<std::string>>();
        spec.base_spend = parse_lognormal(doc.at("base_spend_lognormal"), "base_spend_lognormal");
        spec.unrecognized_fraction = doc.value("unrecognized_fraction", spec.unrecognized_fraction);
        for (const auto& c : doc.value("conditions", json::array())) {
            SyntheticCondition cond;
            cond.id = c.at("id").get<std::string>();
            cond.prevalence = c.at("prevalence").get<double>();
            cond.emits = c.value("emits", std::vector<std::string>{});
            cond.unpayable_emits = c.value("unpayable_emits", std::vector<std::string>{});
            cond.payable = c.value("payable", true);
            cond.spend = parse_lognormal(c.at("spend_lognormal"), "condition " + cond.id);
            if (c.contains("relative_risk")) {
                const auto& rr = c.at("relative_risk");
                cond.relative_risk = RelativeRisk{rr.at("given_group").get<std::string>(), rr.at("factor").get<double>()};
            }
            spec.conditions.push_back(std::move(cond));
        }
        if (doc.contains("groups")) {
            for (const auto& [id, members] : doc.at("groups").items())
                spec.groups.push_back({id, members.get<std::vector<std::string>>()});
        }
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("synthetic spec: ") + e.what());
    }
}

json to_json(const SyntheticSpec& spec)
{
    json conditions = json::array();
    for (const auto& c : spec.conditions) {
        json j{{"id", c.id},
               {"prevalence", c.prevalence},
               {"emits", c.emits},
               {"unpayable_emits", c.unpayable_emits},
               {"payable", c.payable},
               {"spend_lognormal", lognormal_json(c.spend)}};
        if (c.relative_risk)
            j["relative_risk"] = {{"given_group", c.relative_risk->given_group}, {"factor", c.relative_risk->factor}};
        conditions.push_back(std::move(j));
    }
    json groups = json::object();
    for (const auto& g : spec.groups) groups[g.group_id] = g.condition_ids;
    return {{"name", spec.name},
            {"n", spec.n},
            {"seed", spec.seed},
            {"age_range", {spec.age_min, spec.age_max}},
            {"female_share", spec.female_share},
            {"regions", spec.regions},
            {"base_spend_lognormal", lognormal_json(spec.base_spend)},
            {"unrecognized_fraction", spec.unrecognized_fraction},
            {"conditions", conditions},
            {"groups", groups}};
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_synthetic_spec(doc);
}

// --- validation ------------------------------------------------------------

void validate_spec(const SyntheticSpec& spec, const CodeMaps* maps)
{
    auto fail = [&](const std::string& msg) { throw ConfigError("synthetic spec '" + spec.name + "': " + msg); };
    if (spec.age_min < 0 || spec.age_max > 120 || spec.age_min > spec.age_max) fail("invalid age_range");
    if (!(spec.female_share >= 0.0 && spec.female_share <= 1.0)) fail("female_share must lie in [0, 1]");
    if (!(spec.unrecognized_fraction >= 0.0 && spec.unrecognized_fraction <= 1.0))
        fail("unrecognized_fraction must lie in [0, 1]");
    if (!(spec.base_spend.sigma >= 0.0) || !std::isfinite(spec.base_spend.mu)) fail("invalid base_spend_lognormal");

    std::set<std::string> ids;
    std::set<std::string> group_ids;
    for (const auto& g : spec.groups)
        if (!group_ids.insert(g.group_id).second) fail("duplicate group '" + g.group_id + "'");
    for (const auto& c : spec.conditions) {
        if (!ids.insert(c.id).second) fail("duplicate condition '" + c.id + "'");
        if (!(c.prevalence >= 0.0 && c.prevalence < 1.0)) fail("condition " + c.id + " prevalence must lie in [0, 1)");
        if (!(c.spend.sigma >= 0.0) || !std::isfinite(c.spend.mu)) fail("condition " + c.id + " has invalid spend");
        if (c.emits.empty()) fail("condition " + c.id + " emits no codes");
        if (c.relative_risk) {
            if (!group_ids.contains(c.relative_risk->given_group))
                fail("condition " + c.id + " relative_risk names unknown group");
            if (!(c.relative_risk->factor >= 0.0)) fail("condition " + c.id + " relative_risk factor is negative");
        }
    }
    for (const auto& g : spec.groups) {
        for (const auto& id : g.condition_ids) {
            if (!spec.condition(id)) fail("group " + g.group_id + " names unknown condition '" + id + "'");
        }
    }
    if (!maps) return;
    auto payable_code = [&](const std::string& icd) {
        auto it = maps->icd_to_hcc.find(icd);
        return it != maps->icd_to_hcc.end() && maps->is_payment_hcc(it->second);
    };
    for (const auto& c : spec.conditions) {
        for (const auto* list : {&c.emits, &c.unpayable_emits})
            for (const auto& icd : *list)
                if (!maps->icd_to_ccs.contains(icd)) fail("condition " + c.id + " emits unmapped ICD '" + icd + "'");
        bool any_payable = std::any_of(c.emits.begin(), c.emits.end(), payable_code);
        if (c.payable && !any_payable) fail("payable condition " + c.id + " emits no payment HCC code");
        if (!c.payable && any_payable) fail("non-payable condition " + c.id + " emits a payment HCC code");
        for (const auto& icd : c.unpayable_emits)
            if (payable_code(icd)) fail("condition " + c.id + " unpayable variant '" + icd + "' maps to a payment HCC");
    }
}

// --- generation ------------------------------------------------------------

namespace {

struct Plan {
    /// Per condition: group indices it belongs to, and relative-risk group index.
    std::vector<std::vector<std::size_t>> member_of;
    std::vector<std::optional<std::size_t>> rr_group;
};

Plan make_plan(const SyntheticSpec& spec)
{
    Plan plan;
    plan.member_of.resize(spec.conditions.size());
    plan.rr_group.resize(spec.conditions.size());
    for (std::size_t c = 0; c < spec.conditions.size(); ++c) {
        for (std::size_t g = 0; g < spec.groups.size(); ++g) {
            const auto& ids = spec.groups[g].condition_ids;
            if (std::find(ids.begin(), ids.end(), spec.conditions[c].id) != ids.end()) plan.member_of[c].push_back(g);
            if (spec.conditions[c].relative_risk && spec.conditions[c].relative_risk->given_group == spec.groups[g].group_id)
                plan.rr_group[c] = g;
        }
    }
    return plan;
}

double lognormal_draw(SplitMix64& rng, const Lognormal& l)
{
    return std::exp(l.mu + l.sigma * rng.normal());
}

std::string person_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%08zu", i + 1);
    return buf;
}

EnrolleeRecord draw_person(const SyntheticSpec& spec, const Plan& plan, std::size_t index)
{
    SplitMix64 rng(derive_seed(spec.seed, index));
    EnrolleeRecord r;
    r.person_id = person_id(index);
    r.age = spec.age_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.age_max - spec.age_min + 1)));
    r.sex = rng.uniform() < spec.female_share ? Sex::Female : Sex::Male;
    if (!spec.regions.empty()) r.region = spec.regions[rng.below(spec.regions.size())];

    double spend = lognormal_draw(rng, spec.base_spend);
    std::vector<bool> in_group(spec.groups.size(), false);
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < spec.conditions.size(); ++c) {
        const auto& cond = spec.conditions[c];
        double p = cond.prevalence;
        if (plan.rr_group[c] && in_group[*plan.rr_group[c]]) p = std::min(1.0, p * cond.relative_risk->factor);
        if (rng.uniform() < p) {
            present.push_back(c);
            spend += lognormal_draw(rng, cond.spend);
            for (std::size_t g : plan.member_of[c]) in_group[g] = true;
        }
    }
    const bool rerouted = rng.uniform() < spec.unrecognized_fraction;

    std::set<std::string> codes;
    for (std::size_t c : present) {
        const auto& cond = spec.conditions[c];
        bool reroute = rerouted && !plan.member_of[c].empty() && !cond.unpayable_emits.empty();
        const auto& emitted = reroute ? cond.unpayable_emits : cond.emits;
        codes.insert(emitted.begin(), emitted.end());
    }
    r.diagnosis_codes.assign(codes.begin(), codes.end());
    r.spend_total = std::round(std::max(0.0, spend) * 100.0) / 100.0;
    return r;
}

} // namespace

std::vector<EnrolleeRecord> generate_range(const SyntheticSpec& spec, std::size_t begin, std::size_t end)
{
    validate_spec(spec);
    end = std::min(end, spec.n);
    std::vector<EnrolleeRecord> out;
    if (begin >= end) return out;
    Plan plan = make_plan(spec);
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(draw_person(spec, plan, i));
    return out;
}

std::vector<EnrolleeRecord> generate(const SyntheticSpec& spec, unsigned threads)
{
    validate_spec(spec);
    threads = std::max(1u, threads);
    if (threads == 1 || spec.n < 2 * threads) return generate_range(spec, 0, spec.n);
    std::vector<std::vector<EnrolleeRecord>> shards(threads);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                shards[t] = generate_range(spec, spec.n * t / threads, spec.n * (t + 1) / threads);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<EnrolleeRecord> out;
    out.reserve(spec.n);
    for (auto& s : shards) std::move(s.begin(), s.end(), std::back_inserter(out));
    return out;
}

void write_population(const SyntheticSpec& spec, std::ostream& out, std::size_t chunk)
{
    validate_spec(spec);
    chunk = std::max<std::size_t>(1, chunk);
    const bool with_region = !spec.regions.empty();
    write_enrollees(out, {}, with_region);
    for (std::size_t begin = 0; begin < spec.n; begin += chunk) {
        auto part = generate_range(spec, begin, begin + chunk);
        write_enrollee_rows(out, part, with_region);
    }
}

// --- calibration -----------------------------------------------------------

const GroupCalibration* CalibrationSummary::group(const std::string& id) const
{
    for (const auto& g : groups)
        if (g.group_id == id) return &g;
    return nullptr;
}

CalibrationSummary calibration_report(const std::vector<EnrolleeRecord>& records, const CodeMaps& maps,
                                      const std::vector<GroupDefinition>& groups, const Formula& baseline,
                                      const AgeBanding& banding)
{
    if (records.empty()) throw ConfigError("calibration needs a non-empty population");
    CalibrationSummary s;
    s.n = records.size();
    std::vector<double> y = spend_vector(records);
    s.overall_mean = compensated_sum(y) / static_cast<double>(s.n);

    DesignMatrix x = build_design(records, baseline, maps, banding);
    FitResult f = fit(x, y);
    s.baseline_r2 = f.r2;
    s.baseline_adj_r2 = f.adj_r2;
    std::vector<GroupVector> vectors = group_vectors(records, groups, maps);
    MetricReport report = in_sample_report(f, x, y, vectors);

    for (std::size_t g = 0; g < groups.size(); ++g) {
        GroupCalibration c;
        c.group_id = groups[g].group_id;
        std::set<std::string> relevant = group_relevant_hccs(groups[g], maps);
        std::size_t members = 0;
        std::size_t recognized = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (vectors[g].member[i]) ++members;
            for (const auto& h : assign_hccs(records[i], maps)) {
                if (relevant.contains(h) && maps.is_payment_hcc(h)) {
                    ++recognized;
                    break;
                }
            }
        }
        c.prevalence = static_cast<double>(members) / static_cast<double>(s.n);
        c.recognized_prevalence = static_cast<double>(recognized) / static_cast<double>(s.n);
        if (const GroupMetrics* m = report.group(c.group_id)) {
            c.mean_spend = m->group_mean_spend;
            c.mean_ratio = c.mean_spend / s.overall_mean;
            c.net_compensation = m->net_compensation;
            c.net_compensation_fraction = c.net_compensation / c.mean_spend;
        }
        s.groups.push_back(std::move(c));
    }
    return s;
}

CalibrationTargets CalibrationTargets::published(std::string group_id)
{
    CalibrationTargets t;
    t.group_id = std::move(group_id);
    t.prevalence = Band{0.128, 0.148};
    t.recognized_prevalence = Band{0.021, 0.031};
    t.overall_mean = Band{6619.0 * 0.9, 6619.0 * 1.1};
    t.mean_ratio = Band{1.61, 1.81};
    t.baseline_adj_r2 = Band{0.10, 0.16};
    t.net_compensation_fraction = Band{-0.35, -0.15};
    return t;
}

std::vector<TargetCheck> check_targets(const CalibrationSummary& summary, const CalibrationTargets& targets)
{
    std::vector<TargetCheck> out;
    const GroupCalibration* g = summary.group(targets.group_id);
    auto add = [&](const char* name, const std::optional<Band>& band, double value) {
        if (band) out.push_back({name, value, *band, band->contains(value)});
    };
    bool needs_group = targets.prevalence || targets.recognized_prevalence || targets.mean_ratio ||
                       targets.net_compensation_fraction;
    if (needs_group && !g) throw ConfigError("calibration targets name unknown group '" + targets.group_id + "'");
    add("overall_mean", targets.overall_mean, summary.overall_mean);
    add("baseline_adj_r2", targets.baseline_adj_r2, summary.baseline_adj_r2);
    if (g) {
        add("prevalence", targets.prevalence, g->prevalence);
        add("recognized_prevalence", targets.recognized_prevalence, g->recognized_prevalence);
        add("mean_ratio", targets.mean_ratio, g->mean_ratio);
        add("net_compensation_fraction", targets.net_compensation_fraction, g->net_compensation_fraction);
    }
    return out;
}

// --- tuning ----------------------------------------------------------------

namespace {

bool passed(const std::vector<TargetCheck>& checks, const std::string& name)
{
    for (const auto& c : checks)
        if (c.name == name) return c.pass;
    return true;
}

const SyntheticGroup* spec_group(const SyntheticSpec& spec, const std::string& id)
{
    for (const auto& g : spec.groups)
        if (g.group_id == id) return &g;
    return nullptr;
}

double union_prevalence(const SyntheticSpec& spec, const SyntheticGroup& g, double scale)
{
    double none = 1.0;
    for (const auto& id : g.condition_ids) none *= 1.0 - std::min(1.0, scale * spec.condition(id)->prevalence);
    return 1.0 - none;
}

} // namespace

TuneResult tune(const SyntheticSpec& spec, const CalibrationTargets& targets, const CodeMaps& maps,
                const std::vector<GroupDefinition>& groups, const Formula& baseline, std::size_t max_iters,
                const AgeBanding& banding)
{
    validate_spec(spec, &maps);
    TuneResult result{spec, false, 0, {}, {}};
    const SyntheticGroup* sg = spec_group(spec, targets.group_id);
    const bool group_targets = targets.prevalence || targets.mean_ratio;
    if (group_targets && !sg) {
        result.failures.push_back("group '" + targets.group_id + "' is not defined in the synthetic spec");
        return result;
    }
    if (targets.prevalence && targets.recognized_prevalence) {
        double share = 1.0 - spec.unrecognized_fraction;
        Band implied{targets.prevalence->lo * share, targets.prevalence->hi * share};
        if (implied.hi < targets.recognized_prevalence->lo || implied.lo > targets.recognized_prevalence->hi) {
            result.failures.push_back("recognized_prevalence is bound by unrecognized_fraction: the prevalence band "
                                      "implies recognized share in [" +
                                      std::to_string(implied.lo) + ", " + std::to_string(implied.hi) + "]");
            return result;
        }
    }

    SyntheticSpec& s = result.spec;
    for (std::size_t iter = 0;; ++iter) {
        auto records = generate(s, std::max(1u, std::thread::hardware_concurrency()));
        CalibrationSummary summary = calibration_report(records, maps, groups, baseline, banding);
        result.checks = check_targets(summary, targets);
        result.iterations = iter;
        if (std::all_of(result.checks.begin(), result.checks.end(), [](const TargetCheck& c) { return c.pass; })) {
            result.converged = true;
            return result;
        }
        bool tunable_failure = !passed(result.checks, "prevalence") || !passed(result.checks, "overall_mean") ||
                               !passed(result.checks, "mean_ratio");
        if (!tunable_failure || iter >= max_iters) break;

        const GroupCalibration* g = summary.group(targets.group_id);
        if (targets.prevalence && !passed(result.checks, "prevalence")) {
            double target = targets.prevalence->mid();
            double max_p = 0.0;
            for (const auto& id : sg->condition_ids) max_p = std::max(max_p, s.condition(id)->prevalence);
            if (max_p <= 0.0 || union_prevalence(s, *sg, 1.0 / max_p) < target) {
                result.failures.push_back("prevalence target " + std::to_string(target) +
                                          " needs a group condition prevalence of 1 or more");
                break;
            }
            double lo = 0.0;
            double hi = 1.0 / max_p;
            for (int k = 0; k < 200; ++k) {
                double mid = 0.5 * (lo + hi);
                (union_prevalence(s, *sg, mid) < target ? lo : hi) = mid;
            }
            const double scale = 0.5 * (lo + hi);
            for (auto& c : s.conditions)
                if (std::find(sg->condition_ids.begin(), sg->condition_ids.end(), c.id) != sg->condition_ids.end())
                    c.prevalence = std::min(0.999, c.prevalence * scale);
        }
        if (targets.overall_mean && !passed(result.checks, "overall_mean")) {
            double eb = s.base_spend.mean();
            double ec = 0.0;
            for (const auto& c : s.conditions) ec += c.prevalence * c.spend.mean();
            double base_share = summary.overall_mean * eb / (eb + ec);
            double need = base_share + (targets.overall_mean->mid() - summary.overall_mean);
            if (need <= 0.0) {
                result.failures.push_back("overall_mean target is below the spending carried by conditions alone");
                break;
            }
            s.base_spend.mu += std::log(need / base_share);
        }
        if (targets.mean_ratio && g && !passed(result.checks, "mean_ratio")) {
            double cg = 0.0;
            for (const auto& id : sg->condition_ids) {
                const auto* c = s.condition(id);
                cg += c->prevalence * c->spend.mean();
            }
            cg /= std::max(g->prevalence, 1e-12);
            double r = targets.mean_ratio->mid();
            double denom = cg * (1.0 - r * g->prevalence);
            double k = denom > 0.0 ? 1.0 + (r * summary.overall_mean - g->mean_spend) / denom : -1.0;
            if (!(k > 0.0)) {
                result.failures.push_back("mean_ratio target cannot be reached by scaling group condition spending");
                break;
            }
            for (auto& c : s.conditions)
                if (std::find(sg->condition_ids.begin(), sg->condition_ids.end(), c.id) != sg->condition_ids.end())
                    c.spend.mu += std::log(k);
        }
    }
    for (const auto& c : result.checks) {
        if (c.pass) continue;
        bool closed_form = c.name == "prevalence" || c.name == "overall_mean" || c.name == "mean_ratio";
        result.failures.push_back(c.name + " = " + std::to_string(c.value) + " outside [" + std::to_string(c.band.lo) +
                                  ", " + std::to_string(c.band.hi) + "]" +
                                  (closed_form ? " after " + std::to_string(result.iterations) + " iterations"
                                               : "; no closed-form parameter controls it"));
    }
    return result;
}

} // namespace fairstep
