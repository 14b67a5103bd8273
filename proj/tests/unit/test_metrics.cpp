#include "fairstep/error.hpp"
#include "fairstep/metrics.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <doctest.h>

#include <random>

using namespace fairstep;
using fixtures::person;

TEST_CASE("net_compensation and predictive_ratio")
{
    std::vector<double> yhat{150, 250}, y{200, 300};
    std::vector<bool> both{true, true};
    CHECK(net_compensation(yhat, y, both) == -50.0);
    CHECK(net_compensation(y, y, both) == 0.0);
    CHECK(predictive_ratio(std::vector<double>{200, 300}, std::vector<double>{150, 250}, both) == 1.25);
    CHECK(predictive_ratio(y, y, both) == 1.0);
    CHECK_THROWS_AS(net_compensation(yhat, y, {false, false}), ConfigError);
    CHECK_THROWS(predictive_ratio(yhat, std::vector<double>{0, 0}, both));
    CHECK_THROWS(net_compensation(yhat, y, {true}));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1000);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> a(5), b(5);
        for (int i = 0; i < 5; ++i) a[i] = u(rng), b[i] = u(rng);
        std::vector<bool> m{true, false, true, true, false};
        double sa = 0, sb = 0;
        for (int i : {0, 2, 3}) sa += a[i], sb += b[i];
        double nc = net_compensation(a, b, m);
        double pr = predictive_ratio(a, b, m);
        CHECK(nc == doctest::Approx((sa - sb) / 3).epsilon(1e-12));
        CHECK(pr == doctest::Approx(sa / sb).epsilon(1e-12));
        CHECK(oracle::close(nc, (sb / 3) * (pr - 1), 1e-9));
        auto shifted = a;
        for (auto& v : shifted) v += 17.5;
        CHECK(net_compensation(shifted, b, m) == doctest::Approx(nc + 17.5).epsilon(1e-12));
    }
}

TEST_CASE("in-sample report identities")
{
    std::mt19937_64 rng(9);
    auto inst = oracle::random_instance(rng, 500, 6);
    auto f = fit(inst.x, inst.y);
    std::vector<bool> everyone(500, true), indicator(500, false), other(500, false);
    for (auto r : inst.x.column_rows(3)) indicator[r] = true;
    for (std::size_t i = 0; i < 500; i += 3) other[i] = true;
    auto rep = in_sample_report(f, inst.x, inst.y, {{"all", everyone}, {"ind", indicator}, {"other", other}});
    double scale = 0;
    for (double v : inst.y) scale += std::abs(v);
    scale /= 500;
    CHECK(std::abs(rep.group("all")->net_compensation) <= 1e-6 * scale);
    CHECK(std::abs(rep.group("ind")->net_compensation) <= 1e-6 * scale);
    CHECK(rep.group("ind")->n_g == inst.x.column_support(3));
    CHECK(rep.r2 == f.r2);
    CHECK(rep.adj_r2 == std::optional<double>(f.adj_r2));
    CHECK(rep.per_variable.size() == 6);
    CHECK(rep.evaluation_mode == EvaluationMode::in_sample());
    const auto* g = rep.group("other");
    CHECK(oracle::close(g->net_compensation, g->group_mean_spend * (*g->predictive_ratio - 1), 1e-9));
    CHECK(rep.group("missing") == nullptr);
}

TEST_CASE("assign_folds")
{
    auto a = assign_folds(103, 5, 7);
    CHECK(a == assign_folds(103, 5, 7));
    std::vector<int> sizes(5, 0);
    for (auto f : a) sizes[f]++;
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
    CHECK(a != assign_folds(103, 5, 8));
}

TEST_CASE("cross-validated report")
{
    const auto& maps = fixtures::toy_maps();
    GroupDefinition kidney{"kidney", {"158"}};
    SUBCASE("two folds, intercept only")
    {
        std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Female, {"N18.6"}, 100), person("b", 31, Sex::Male, {}, 200),
                                         person("c", 32, Sex::Female, {}, 400), person("d", 33, Sex::Male, {}, 800)};
        Formula f{{VariableId::intercept()}};
        auto folds = assign_folds(4, 2, 1);
        std::vector<double> y{100, 200, 400, 800}, pred(4);
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0;
            int k = 0;
            for (std::size_t j = 0; j < 4; ++j)
                if (folds[j] != folds[i]) s += y[j], ++k;
            pred[i] = s / k;
        }
        auto x = build_design(recs, f, maps);
        CrossValidator cv(x, y, 2, 1);
        auto got = cv.out_of_fold_predictions(f);
        for (std::size_t i = 0; i < 4; ++i) CHECK(got[i] == doctest::Approx(pred[i]).epsilon(1e-12));
        auto rep = cross_validated_report(recs, f, {kidney}, maps, 2, 1);
        double rss = 0, tss = 0;
        for (std::size_t i = 0; i < 4; ++i) rss += (y[i] - pred[i]) * (y[i] - pred[i]), tss += (y[i] - 375) * (y[i] - 375);
        CHECK(rep.r2 == doctest::Approx(1 - rss / tss).epsilon(1e-12));
        CHECK_FALSE(rep.adj_r2.has_value());
        CHECK(rep.group("kidney")->net_compensation == doctest::Approx(pred[0] - 100).epsilon(1e-12));
        CHECK(rep.evaluation_mode == EvaluationMode::cross_validated(2, 1));
    }
    SUBCASE("leave-one-out matches a refit loop")
    {
        std::vector<EnrolleeRecord> recs;
        std::vector<double> y{120, 340, 90, 1500, 610, 275};
        const char* codes[] = {"E11.9", "", "E11.9", "I50.9", "I50.9", ""};
        for (int i = 0; i < 6; ++i) {
            std::vector<std::string> c;
            if (*codes[i]) c.push_back(codes[i]);
            recs.push_back(person("p" + std::to_string(i), 30 + i, Sex::Female, c, y[i]));
        }
        Formula f{{VariableId::intercept(), VariableId::hcc("HCC019")}};
        auto x = build_design(recs, f, maps);
        CrossValidator cv(x, y, 6, 5);
        auto want = oracle::out_of_fold(x, y, assign_folds(6, 6, 5), 6);
        auto got = cv.out_of_fold_predictions(f);
        for (int i = 0; i < 6; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
    SUBCASE("degenerate training fold names the fold")
    {
        std::vector<EnrolleeRecord> recs{person("a", 30, Sex::Female, {"E11.9"}, 100), person("b", 31, Sex::Male, {}, 200),
                                         person("c", 32, Sex::Female, {}, 200)};
        Formula f{{VariableId::intercept(), VariableId::hcc("HCC019")}};
        try {
            cross_validated_report(recs, f, {}, maps, 3, 2);
            FAIL("expected a fit error");
        } catch (const FitError& e) {
            CHECK(std::string(e.what()).find("fold") != std::string::npos);
        }
    }
    SUBCASE("determinism")
    {
        std::mt19937_64 rng(1);
        auto inst = oracle::random_instance(rng, 300, 5);
        CrossValidator a(inst.x, inst.y, 5, 99), b(inst.x, inst.y, 5, 99);
        CHECK(a.out_of_fold_predictions(inst.x.formula()) == b.out_of_fold_predictions(inst.x.formula()));
        auto want = oracle::out_of_fold(inst.x, inst.y, assign_folds(300, 5, 99), 5);
        auto got = a.out_of_fold_predictions(inst.x.formula());
        for (std::size_t i = 0; i < 300; ++i) CHECK(oracle::close(got[i], want[i], 1e-8, 1000.0));
    }
}

TEST_CASE("relative_percent")
{
    CHECK(relative_percent(0.0, 1.0) == std::nullopt);
    CHECK(*relative_percent(-100.0, -69.0) == doctest::Approx(31.0));
    CHECK(*relative_percent(0.10, 0.102) == doctest::Approx(2.0));
}

TEST_CASE("relative_percent treats rounding noise as zero")
{
    CHECK(relative_percent(3.6e-14, -11487.6) == std::nullopt);
    CHECK(relative_percent(1e-14, 2e-14) == std::nullopt);
    CHECK(relative_percent(2e-6, 3e-6).has_value());
}
