#include "fairstep/error.hpp"
#include "fairstep/serialize.hpp"
#include "fairstep/stepwise.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <doctest.h>

#include <random>

using namespace fairstep;

namespace {

struct RandomCase {
    StepwiseContext context;
    Formula baseline;
    CandidatePool pool;
};

/// Intercept-only baseline with each remaining column as its own block, plus
/// one group drawn independently of the design.
RandomCase random_case(std::uint64_t seed, std::size_t n, std::size_t p)
{
    std::mt19937_64 rng(seed);
    auto inst = oracle::random_instance(rng, n, p + 1, 0.05, 0.4, "V");
    std::vector<bool> member(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        member[i] = rng() % 5 == 0;
        if (member[i]) inst.y[i] += 300.0;
    }
    CandidatePool pool;
    for (std::size_t c = 1; c <= p; ++c) pool.push_back({inst.x.column_id(c).key, {inst.x.column_id(c)}});
    StepwiseContext ctx(inst.x, inst.y, {{"g", member}});
    return {std::move(ctx), Formula{{VariableId::intercept()}}, std::move(pool)};
}

SelectionPolicy max_r2(double min_gain, bool parsimony, std::string name = "max_r2")
{
    return {std::move(name), {MaxR2{min_gain}}, parsimony, EvaluationMode::in_sample()};
}

SelectionPolicy net_comp(std::string name = "net_comp")
{
    return {std::move(name), {NetCompTowardZero{"g", true}}, false, EvaluationMode::in_sample()};
}

/// Evaluation of a real step whose net-compensation deltas are then replaced.
StepEvaluation with_group_change(const RandomCase& rc, double before, double after)
{
    auto state = rc.context.initial_state(rc.baseline, EvaluationMode::in_sample());
    auto ev = evaluate_step(rc.context, state, propose_steps(rc.baseline, rc.pool).front(), EvaluationMode::in_sample());
    GroupDelta& g = ev.deltas.groups.at(0);
    g.before = before;
    g.after = after;
    g.absolute = after - before;
    return ev;
}

Formula with_vars(Formula f, const std::vector<VariableId>& vs)
{
    for (const auto& v : vs) f.variables.push_back(v);
    return f;
}

} // namespace

TEST_CASE("propose_steps ordering")
{
    auto baseline = parse_formula(read_json_file(fixtures::scenario("baseline.json")));
    auto pool = parse_pool(read_json_file(fixtures::scenario("pool.json")));
    CandidatePool pair(pool.begin(), pool.begin() + 2);
    auto steps = propose_steps(baseline, pair);
    REQUIRE(steps.size() == 2);
    CHECK(steps[0].kind == StepKind::Add);
    CHECK(steps[0].label == "mh-pair");
    CHECK(steps[1].label == "sud-pair");

    CHECK(propose_steps(demographic_formula(AgeBanding{}, "F_40_44"), {}).empty());

    auto full = with_vars(baseline, pair[0].variables);
    full = with_vars(full, pair[1].variables);
    auto removals = propose_steps(full, pair);
    REQUIRE(removals.size() == 2);
    CHECK(removals[0].kind == StepKind::Remove);
    CHECK(removals[0].label == "sud-pair");
    CHECK(removals[1].label == "mh-pair");

    auto mixed = propose_steps(baseline, pool);
    REQUIRE(mixed.size() == 4);
    CHECK(mixed[2].label == "kidney-block");
    CHECK(mixed[3].label == "liver-block");
}

TEST_CASE("pool and policy validation")
{
    CHECK_THROWS_AS(validate_pool({{"a", {}}}), ConfigError);
    CHECK_THROWS_AS(validate_pool({{"a", {VariableId::intercept()}}}), ConfigError);
    CHECK_THROWS_AS(max_r2(-1, false).validate(), ConfigError);
    auto rc = random_case(1, 200, 3);
    SelectionPolicy bad{"bad", {NetCompTowardZero{"nope", true}}, false, {}};
    CHECK_THROWS_AS(run_stepwise(rc.context, rc.baseline, rc.pool, bad), ConfigError);
    CHECK_THROWS_AS(run_stepwise(rc.context, rc.baseline, {{"x", {VariableId::hcc("ZZZ")}}}, max_r2(0, false)),
                    ConfigError);
    CHECK_THROWS_AS(compare_policies(rc.context, rc.baseline, rc.pool, {max_r2(0, false)}), ConfigError);
    CHECK_THROWS_AS(compare_policies(rc.context, rc.baseline, rc.pool, {max_r2(0, false), max_r2(0.1, false)}),
                    ConfigError);
}

TEST_CASE("acceptance rules")
{
    auto rc = random_case(2, 300, 3);
    SUBCASE("net compensation moving away from zero is rejected")
    {
        CHECK_FALSE(accept_step(net_comp(), with_group_change(rc, -100, -110)).accepted);
        CHECK(accept_step(net_comp(), with_group_change(rc, -100, -60)).accepted);
    }
    SUBCASE("overshoot guard")
    {
        auto d = accept_step(net_comp(), with_group_change(rc, -5, 40));
        CHECK_FALSE(d.accepted);
        CHECK(d.reason.find("overshoot") != std::string::npos);
        SelectionPolicy loose{"loose", {NetCompTowardZero{"g", false}}, false, {}};
        CHECK_FALSE(accept_step(loose, with_group_change(rc, -5, 40)).accepted);
        CHECK(accept_step(loose, with_group_change(rc, -50, 40)).accepted);
    }
    SUBCASE("zero-gain removal with parsimony is accepted")
    {
        auto state = rc.context.initial_state(rc.baseline, EvaluationMode::in_sample());
        auto add = evaluate_step(rc.context, state, propose_steps(rc.baseline, rc.pool).front(), {});
        auto rem = evaluate_step(rc.context, add.next, propose_steps(add.next.formula(), rc.pool).back(), {});
        REQUIRE(rem.action.kind == StepKind::Remove);
        rem.deltas.r2_absolute = 0.0;
        CHECK(accept_step(max_r2(0, true), rem).accepted);
        CHECK_FALSE(accept_step(max_r2(0, false), rem).accepted);
    }
}

TEST_CASE("aliased additions")
{
    std::mt19937_64 rng(5);
    auto inst = oracle::random_instance(rng, 200, 3);
    auto cols = inst.x.column_storage();
    cols.push_back(std::make_shared<const DesignColumn>(DesignColumn{VariableId::hcc("ZERO"), {}}));
    StepwiseContext ctx(DesignMatrix(200, cols), inst.y, {});
    auto state = ctx.initial_state(inst.x.formula(), {});
    auto ev = evaluate_step(ctx, state, {StepKind::Add, {VariableId::hcc("ZERO")}, "zero"}, {});
    CHECK(ev.deltas.r2_absolute == 0.0);
    CHECK(ev.aliased == std::vector<VariableId>{VariableId::hcc("ZERO")});
    auto d = accept_step(max_r2(0, false), ev);
    CHECK_FALSE(d.accepted);
    CHECK(d.reason == "aliased");
}

TEST_CASE("removing a just-added block negates the deltas")
{
    auto rc = random_case(3, 400, 4);
    auto state = rc.context.initial_state(rc.baseline, {});
    auto add = evaluate_step(rc.context, state, {StepKind::Add, rc.pool[1].variables, "b"}, {});
    auto rem = evaluate_step(rc.context, add.next, {StepKind::Remove, rc.pool[1].variables, "b"}, {});
    CHECK(rem.deltas.r2_absolute == doctest::Approx(-add.deltas.r2_absolute).epsilon(1e-10));
    CHECK(*rem.deltas.adj_r2_absolute == doctest::Approx(-*add.deltas.adj_r2_absolute).epsilon(1e-10));
    CHECK(rem.deltas.groups[0].absolute == doctest::Approx(-add.deltas.groups[0].absolute).epsilon(1e-10));
    CHECK(rem.next.formula() == state.formula());
    CHECK_THROWS_AS(evaluate_step(rc.context, state, {StepKind::Remove, rc.pool[1].variables, "b"}, {}), ConfigError);
}

TEST_CASE("run_stepwise")
{
    SUBCASE("empty pool")
    {
        auto rc = random_case(4, 200, 3);
        auto run = run_stepwise(rc.context, rc.baseline, {}, max_r2(0, true));
        CHECK(run.final_formula == rc.baseline);
        CHECK(run.trace.entries.empty());
    }
    SUBCASE("MaxR2 ends at a local optimum")
    {
        for (std::uint64_t seed : {10u, 11u, 12u}) {
            auto rc = random_case(seed, 600, 8);
            const double min_gain = 0.004;
            auto run = run_stepwise(rc.context, rc.baseline, rc.pool, max_r2(min_gain, false));
            std::vector<std::shared_ptr<const DesignColumn>> cols;
            const auto& u = rc.context.universe();
            auto sub = [&](const Formula& f) {
                std::vector<std::shared_ptr<const DesignColumn>> c;
                for (const auto& v : f.variables) c.push_back(u.column_storage()[*u.find(v)]);
                return DesignMatrix(u.rows(), c);
            };
            double r2 = oracle::normal_equations(sub(run.final_formula), rc.context.outcome()).r2;
            CHECK(oracle::close(run.final_report.r2, r2, 1e-8));
            for (const auto& action : propose_steps(run.final_formula, rc.pool)) {
                Formula next = run.final_formula;
                if (action.kind == StepKind::Add) {
                    next = with_vars(next, action.variables);
                    CHECK(oracle::normal_equations(sub(next), rc.context.outcome()).r2 - r2 < min_gain);
                } else {
                    std::erase(next.variables, action.variables[0]);
                    CHECK(oracle::normal_equations(sub(next), rc.context.outcome()).r2 < r2);
                }
            }
            double prev = 0.0;
            for (const auto& e : run.trace.entries) {
                if (!e.accepted) continue;
                CHECK(e.report_after.r2 >= prev);
                prev = e.report_after.r2;
                CHECK(e.report_after.formula.variables.front() == VariableId::intercept());
            }
        }
    }
    SUBCASE("NetCompTowardZero strictly shrinks |NC| across accepted steps")
    {
        auto rc = random_case(20, 600, 8);
        auto run = run_stepwise(rc.context, rc.baseline, rc.pool, net_comp());
        double prev = std::abs(rc.context.initial_state(rc.baseline, {}).report.group("g")->net_compensation);
        for (const auto& e : run.trace.entries) {
            if (!e.accepted) continue;
            double nc = std::abs(e.report_after.group("g")->net_compensation);
            CHECK(nc < prev);
            prev = nc;
        }
    }
    SUBCASE("replay and determinism")
    {
        auto rc = random_case(21, 500, 6);
        for (const auto& policy : {max_r2(0.001, true), net_comp()}) {
            auto a = run_stepwise(rc.context, rc.baseline, rc.pool, policy);
            auto b = run_stepwise(rc.context, rc.baseline, rc.pool, policy);
            CHECK(to_json(a.trace) == to_json(b.trace));
            auto replayed = replay_trace(rc.context, a.trace, policy.evaluation);
            CHECK(replayed.formula() == a.final_formula);
            CHECK(oracle::close(replayed.report.r2, a.final_report.r2, 1e-8));
            auto parsed = parse_trace(to_json(a.trace));
            CHECK(replay_trace(rc.context, parsed, policy.evaluation).formula() == a.final_formula);
        }
    }
    SUBCASE("cross-validated evaluation")
    {
        auto rc = random_case(22, 400, 4);
        SelectionPolicy p{"cv", {MaxR2{0.001}}, false, EvaluationMode::cross_validated(5, 3)};
        auto run = run_stepwise(rc.context, rc.baseline, rc.pool, p);
        CHECK_FALSE(run.final_report.adj_r2.has_value());
        CHECK(run.final_report.evaluation_mode == p.evaluation);
        CHECK(to_json(run.trace) == to_json(run_stepwise(rc.context, rc.baseline, rc.pool, p).trace));
    }
}

TEST_CASE("lexicographic policies")
{
    auto rc = random_case(23, 500, 5);
    SelectionPolicy lex{"lex", {Lexicographic{{Objective{PValueGate{0.05}}, Objective{MaxR2{0.001}}}}}, true, {}};
    auto run = run_stepwise(rc.context, rc.baseline, rc.pool, lex);
    for (const auto& e : run.trace.entries) {
        if (e.accepted && e.action.kind == StepKind::Add) {
            for (const auto& v : e.action.variables) {
                auto it = std::find_if(e.report_after.per_variable.begin(), e.report_after.per_variable.end(),
                                       [&](const VariableReport& r) { return r.variable == v; });
                REQUIRE(it != e.report_after.per_variable.end());
                CHECK(*it->p_value < 0.05);
            }
        }
    }
}

TEST_CASE("compare_policies")
{
    auto rc = random_case(30, 600, 6);
    SUBCASE("identical policies never diverge")
    {
        auto rep = compare_policies(rc.context, rc.baseline, rc.pool, {max_r2(0.001, true, "a"), max_r2(0.001, true, "b")});
        CHECK_FALSE(rep.first_divergence.has_value());
        CHECK(rep.runs[0].final_formula == rep.runs[1].final_formula);
    }
    SUBCASE("pairwise indices match independent reruns")
    {
        std::vector<SelectionPolicy> ps{max_r2(0.002, false, "r2"), net_comp("nc"),
                                        {"gate", {PValueGate{1e-6}}, true, {}}};
        auto rep = compare_policies(rc.context, rc.baseline, rc.pool, ps);
        REQUIRE(rep.pairs.size() == 3);
        std::optional<std::size_t> first;
        for (const auto& pair : rep.pairs) {
            auto again = compare_policies(rc.context, rc.baseline, rc.pool, {ps[pair.first], ps[pair.second]});
            CHECK(again.pairs[0].index == pair.index);
            auto a = run_stepwise(rc.context, rc.baseline, rc.pool, ps[pair.first]);
            auto b = run_stepwise(rc.context, rc.baseline, rc.pool, ps[pair.second]);
            CHECK(divergence_index(a.trace, b.trace) == pair.index);
            if (pair.index && (!first || *pair.index < *first)) first = pair.index;
        }
        CHECK(rep.first_divergence == first);
    }
}
