#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "support.hpp"
#include "unoranic/error.hpp"
#include "unoranic/metrics.hpp"

using namespace unoranic;

TEST_CASE("psnr special values") {
    const std::vector<float> a(16, 0.3f);
    CHECK(psnr(a, a) == kPsnrCap);
    std::vector<float> b(a);
    for (auto& v : b) v += 0.1f;  // MSE 0.01
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
    CHECK_THROWS_AS(psnr(a, std::vector<float>(15)), DimensionError);
}

TEST_CASE("ssim special values") {
    const ImageDims dims{1, 12, 12};
    const auto a = testing::random_pixels(dims.size(), 1);
    CHECK(ssim(a, a, dims) == doctest::Approx(1.0).epsilon(1e-9));
    const std::vector<float> flat(dims.size(), 0.4f);
    CHECK(ssim(flat, flat, dims) == doctest::Approx(1.0).epsilon(1e-9));
    std::vector<float> inv(a);
    for (auto& v : inv) v = 1.0f - v;
    CHECK(ssim(a, inv, dims) < 0.5);
    CHECK_THROWS_AS(ssim(std::vector<float>(36), std::vector<float>(36), ImageDims{1, 6, 6}), DimensionError);
}

TEST_CASE("accuracy hand count and tie rule") {
    const std::vector<float> logits{1, 0, 0, 1, 1, 0, 1, 0};
    CHECK(accuracy(logits, 2, std::vector<int>{0, 1, 1, 0}) == 0.75);
    CHECK(accuracy(std::vector<float>{0.5f, 0.5f}, 2, std::vector<int>{0}) == 1.0);
    CHECK_THROWS_AS(accuracy(logits, 2, std::vector<int>{0, 1, 2, 0}), DimensionError);
}

TEST_CASE("auc examples") {
    const std::vector<int> labels{0, 0, 1, 1};
    CHECK(roc_auc_binary(std::vector<double>{0.1, 0.4, 0.35, 0.8}, labels) == 0.75);
    CHECK(roc_auc_binary(std::vector<double>{0.1, 0.2, 0.7, 0.8}, labels) == 1.0);
    CHECK(roc_auc_binary(std::vector<double>{0.3, 0.3, 0.3, 0.3}, labels) == 0.5);
    CHECK_THROWS_AS(roc_auc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetricError);
    CHECK_THROWS_AS(roc_auc_ovr_macro(std::vector<float>(6), 3, std::vector<int>{0, 1, 2}), DimensionError);
    CHECK_THROWS_AS(roc_auc_ovr_macro(std::vector<float>(6), 3, std::vector<int>{0, 0}), UndefinedMetricError);
}

TEST_CASE("metrics match scalar reference loops on 200 random cases") {
    const auto r = oracles::run_metric_oracles(200, 2024);
    INFO(r.detail);
    CHECK(r.max_abs_err <= 1e-9);
    CHECK(r.cases == 200);
}

TEST_CASE("metric symmetries and invariances") {
    const ImageDims dims{2, 9, 11};
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto a = testing::random_pixels(dims.size(), s);
        const auto b = testing::random_pixels(dims.size(), s + 100);
        CHECK(std::abs(psnr(a, b) - psnr(b, a)) <= 1e-9);
        CHECK(std::abs(ssim(a, b, dims) - ssim(b, a, dims)) <= 1e-9);

        unoranic::rng::Rng gen(s);
        std::vector<double> scores(30);
        std::vector<int> labels(30);
        for (std::size_t i = 0; i < 30; ++i) {
            scores[i] = gen.uniform();
            labels[i] = static_cast<int>(i % 2);
        }
        std::vector<double> warped(scores), negated(scores);
        for (std::size_t i = 0; i < 30; ++i) {
            warped[i] = std::exp(3.0 * scores[i]) - 7.0;
            negated[i] = -scores[i];
        }
        const double auc = roc_auc_binary(scores, labels);
        CHECK(roc_auc_binary(warped, labels) == auc);
        CHECK(auc + roc_auc_binary(negated, labels) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("report aggregates and csv") {
    EvalReport report;
    report.add_row("000001", "psnr", 20.0, "noise");
    report.add_row("000000", "psnr", 30.0, "noise");
    report.add_row("000000", "psnr", 10.0, "blur");
    report.add_row("000000", "ssim", 0.5, "noise");
    report.aggregate_means();
    REQUIRE(report.aggregates().size() == 3);
    const auto* a = report.find_aggregate("psnr", "noise");
    REQUIRE(a != nullptr);
    CHECK(std::abs(a->value - 25.0) <= 1e-9);
    CHECK(a->count == 2);
    CHECK(report.find_aggregate("auc", "noise") == nullptr);

    report.sort_rows();
    CHECK(report.rows().front().sample_id == "000000");
    std::ostringstream os;
    report.write_csv(os);
    const std::string csv = os.str();
    CHECK(csv.rfind("sample_id,metric,value,annotation\n", 0) == 0);
    CHECK(csv.find("000001,psnr,20.000000,noise\n") != std::string::npos);
    CHECK(csv.find("aggregate,psnr,25.000000,noise\n") != std::string::npos);
    CHECK(csv.find('\r') == std::string::npos);
}
