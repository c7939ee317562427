#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <roadstereo/block_stats.hpp>
#include <roadstereo/matcher.hpp>
#include <roadstereo/synthetic_scene.hpp>

#include "support.hpp"

namespace rs = roadstereo;
namespace naive = testing_support::naive;
using testing_support::random_image;

namespace {

rs::CostVolume volume_from(int w, int h, int d_max, std::initializer_list<float> costs) {
    rs::CostVolume vol(w, h, d_max);
    auto it = costs.begin();
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
            for (int d = 0; d <= d_max; ++d) vol(u, v, d) = *it++;
    return vol;
}

rs::DisparityMap row_map(std::initializer_list<double> values) {
    rs::DisparityMap m(static_cast<int>(values.size()), 1);
    int u = 0;
    for (double d : values) {
        if (!std::isnan(d)) m.set(u, 0, d);
        ++u;
    }
    return m;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

TEST(BlockStats, ConstantImage) {
    rs::GrayImage img(9, 7, 7);
    const auto st = rs::block_stats(img, 2);
    for (int v = 2; v < 5; ++v)
        for (int u = 2; u < 7; ++u) {
            EXPECT_EQ(st.mu(u, v), 7.0);
            EXPECT_EQ(st.sigma(u, v), 0.0);
        }
}

TEST(BlockStats, OneToNine) {
    rs::GrayImage img(3, 3, std::vector<std::uint8_t>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto st = rs::block_stats(img, 1);
    EXPECT_DOUBLE_EQ(*st.mu(1, 1), 5.0);
    EXPECT_NEAR(*st.sigma(1, 1), std::sqrt(60.0 / 9.0), 1e-12);
    EXPECT_NEAR(*st.sigma(1, 1), 2.5820, 1e-4);
}

TEST(BlockStats, BorderIsInvalid) {
    rs::GrayImage img(5, 5, 1);
    const auto st = rs::block_stats(img, 1);
    EXPECT_FALSE(st.valid(0, 0));
    EXPECT_FALSE(st.mu(0, 0).has_value());
    EXPECT_FALSE(st.valid(4, 2));
    EXPECT_TRUE(st.valid(1, 1));
}

TEST(BlockStats, WindowTooLarge) {
    rs::GrayImage img(4, 10, 1);
    try {
        rs::block_stats(img, 2);
        FAIL();
    } catch (const rs::Error& e) {
        EXPECT_EQ(e.code(), rs::ErrorCode::WindowTooLarge);
    }
}

TEST(BlockStats, MatchesDirectSummation) {
    std::mt19937_64 rng(21);
    const auto img = random_image(15, 12, rng);
    const auto st = rs::block_stats(img, 2);
    for (int v = 2; v < 10; ++v)
        for (int u = 2; u < 13; ++u) {
            double s = 0.0, s2 = 0.0;
            for (int dv = -2; dv <= 2; ++dv)
                for (int du = -2; du <= 2; ++du) s += img(u + du, v + dv);
            const double mu = s / 25.0;
            for (int dv = -2; dv <= 2; ++dv)
                for (int du = -2; du <= 2; ++du) s2 += (img(u + du, v + dv) - mu) * (img(u + du, v + dv) - mu);
            EXPECT_NEAR(*st.mu(u, v), mu, 1e-12);
            EXPECT_NEAR(*st.sigma(u, v), std::sqrt(s2 / 25.0), 1e-9);
        }
}

TEST(BlockStats, CoverageInvalidatesTouchingBlocks) {
    rs::GrayImage img(8, 5, 9);
    rs::RoadMask cov(8, 5, true);
    cov.set(3, 2, false);
    const auto st = rs::block_stats(img, cov, 1);
    for (int v = 1; v < 4; ++v)
        for (int u = 1; u < 7; ++u) EXPECT_EQ(st.valid(u, v), std::abs(u - 3) > 1);
}

TEST(MatchingCost, IdenticalBlocksCostZero) {
    std::mt19937_64 rng(22);
    const auto ref = random_image(9, 9, rng);
    const auto sr = rs::block_stats(ref, 3);
    EXPECT_NEAR(rs::matching_cost(ref, ref, sr, sr, {4, 4}, 0), 0.0, 1e-12);
}

TEST(MatchingCost, MirroredBlockCostsTwo) {
    rs::GrayImage ref(3, 3, std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60, 70, 80, 90});
    rs::GrayImage tar(3, 3);
    for (int v = 0; v < 3; ++v)
        for (int u = 0; u < 3; ++u) tar(u, v) = static_cast<std::uint8_t>(2 * 50 - ref(u, v));
    const auto sr = rs::block_stats(ref, 1), st = rs::block_stats(tar, 1);
    EXPECT_NEAR(rs::matching_cost(ref, tar, sr, st, {1, 1}, 0), 2.0, 1e-12);
}

TEST(MatchingCost, OffsetInvariance) {
    rs::GrayImage ref(3, 3, std::vector<std::uint8_t>{10, 20, 30, 40, 50, 60, 70, 80, 90});
    rs::GrayImage tar(3, 3);
    for (int v = 0; v < 3; ++v)
        for (int u = 0; u < 3; ++u) tar(u, v) = static_cast<std::uint8_t>(ref(u, v) + 50);
    const auto sr = rs::block_stats(ref, 1), st = rs::block_stats(tar, 1);
    EXPECT_NEAR(rs::matching_cost(ref, tar, sr, st, {1, 1}, 0), 0.0, 1e-12);
}

TEST(MatchingCost, AgreesWithMeanAndDeviationForm) {
    std::mt19937_64 rng(23);
    const auto ref = random_image(20, 9, rng), tar = random_image(20, 9, rng);
    const auto sr = rs::block_stats(ref, 2), st = rs::block_stats(tar, 2);
    for (int d = 0; d <= 6; ++d) {
        const int u = 10, v = 4;
        const double mr = *sr.mu(u, v), mt = *st.mu(u - d, v);
        const double sgr = *sr.sigma(u, v), sgt = *st.sigma(u - d, v);
        double cross = 0.0;
        for (int dv = -2; dv <= 2; ++dv)
            for (int du = -2; du <= 2; ++du) cross += double(ref(u + du, v + dv)) * tar(u + du - d, v + dv);
        const double expected = (sgr * sgt + mr * mt) / (sgr * sgt) - cross / (25.0 * sgr * sgt);
        EXPECT_NEAR(rs::matching_cost(ref, tar, sr, st, {u, v}, d), expected, 1e-9);
    }
}

TEST(MatchingCost, DegenerateAndOutOfBounds) {
    rs::GrayImage flat(9, 9, 40);
    std::mt19937_64 rng(24);
    const auto ref = random_image(9, 9, rng);
    const auto sf = rs::block_stats(flat, 1), sr = rs::block_stats(ref, 1);
    try {
        rs::matching_cost(ref, flat, sr, sf, {4, 4}, 0);
        FAIL();
    } catch (const rs::Error& e) {
        EXPECT_EQ(e.code(), rs::ErrorCode::DegenerateBlock);
    }
    try {
        rs::matching_cost(ref, ref, sr, sr, {2, 4}, 2);
        FAIL();
    } catch (const rs::Error& e) {
        EXPECT_EQ(e.code(), rs::ErrorCode::OutOfBounds);
    }
}

TEST(BilateralWeight, HandValues) {
    rs::GrayImage g(3, 1, std::vector<std::uint8_t>{100, 100, 111});
    rs::MatcherParams p;
    EXPECT_EQ(rs::bilateral_weight(g, {1, 0}, {1, 0}, p), 1.0);
    EXPECT_NEAR(rs::bilateral_weight(g, {0, 0}, {1, 0}, p), std::exp(-1.0 / 2.25), 1e-15);
    EXPECT_NEAR(rs::bilateral_weight(g, {0, 0}, {1, 0}, p), 0.64118, 1e-5);
    const double spatial = std::exp(-1.0 / 2.25);
    EXPECT_NEAR(rs::bilateral_weight(g, {1, 0}, {2, 0}, p), spatial * std::exp(-4.0), 1e-15);
    EXPECT_NEAR(std::exp(-121.0 / 30.25), 0.018316, 1e-6);
}

TEST(BilateralWeight, TablesMatchDirectEvaluation) {
    const rs::BilateralWeights w(5, 1.5, 5.5);
    rs::MatcherParams p;
    std::mt19937_64 rng(25);
    const auto g = random_image(11, 11, rng);
    for (int v = 0; v < 11; ++v)
        for (int u = 0; u < 11; ++u)
            EXPECT_EQ(w(u - 5, v - 5, int(g(u, v)) - int(g(5, 5))), rs::bilateral_weight(g, {5, 5}, {u, v}, p));
}

TEST(Aggregate, ConstantCostStaysConstant) {
    std::mt19937_64 rng(26);
    const auto guide = random_image(12, 12, rng);
    rs::CostVolume raw(12, 12, 2);
    for (int v = 0; v < 12; ++v)
        for (int u = 0; u < 12; ++u)
            for (int d = 0; d <= 2; ++d) raw(u, v, d) = 0.375f;
    const auto agg = rs::aggregate_costs(raw, guide, {});
    for (int v = 0; v < 12; ++v)
        for (int u = 0; u < 12; ++u)
            for (int d = 0; d <= 2; ++d) EXPECT_NEAR(agg(u, v, d), 0.375f, 1e-6);
}

TEST(Aggregate, SingleValidNeighbourIsItself) {
    rs::GrayImage guide(7, 7, 50);
    rs::CostVolume raw(7, 7, 0);
    raw(3, 3, 0) = 0.7f;
    const auto agg = rs::aggregate_costs(raw, guide, {});
    EXPECT_EQ(agg(3, 3, 0), 0.7f);
}

TEST(Aggregate, AllInvalidStaysInvalid) {
    rs::GrayImage guide(4, 4, 50);
    rs::CostVolume raw(4, 4, 1);
    const auto agg = rs::aggregate_costs(raw, guide, {});
    EXPECT_FALSE(agg.valid(1, 1, 0));
}

TEST(Aggregate, ThreeByThreeWeightedMean) {
    rs::GrayImage guide(3, 3, std::vector<std::uint8_t>{10, 12, 15, 9, 10, 30, 10, 11, 10});
    rs::CostVolume raw(3, 3, 0);
    const float costs[9] = {0.1f, 0.9f, 0.4f, 1.2f, 0.3f, 0.0f, 1.9f, 0.5f, 0.6f};
    for (int i = 0; i < 9; ++i) raw(i % 3, i / 3, 0) = costs[i];
    raw(2, 0, 0) = std::numeric_limits<float>::quiet_NaN();
    rs::MatcherParams p;
    p.agg_radius = 1;
    const auto agg = rs::aggregate_costs(raw, guide, p);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 9; ++i) {
        if (i == 2) continue;
        const int u = i % 3, v = i / 3;
        const double w = std::exp(-double((u - 1) * (u - 1) + (v - 1) * (v - 1)) / 2.25) *
                         std::exp(-std::pow(guide(u, v) - 10.0, 2) / 30.25);
        num += w * costs[i];
        den += w;
    }
    EXPECT_NEAR(agg(1, 1, 0), num / den, 1e-6);
}

TEST(Aggregate, ConvexCombinationBounds) {
    std::mt19937_64 rng(27);
    const auto ref = random_image(24, 20, rng), tar = random_image(24, 20, rng);
    rs::MatcherParams p;
    p.d_max = 4;
    const auto sr = rs::block_stats(ref, 3), st = rs::block_stats(tar, 3);
    const auto raw = rs::raw_reference_costs(ref, tar, sr, st, p.d_max);
    const auto agg = rs::aggregate_costs(raw, ref, p);
    for (int v = 0; v < 20; ++v)
        for (int u = 0; u < 24; ++u)
            for (int d = 0; d <= 4; ++d) {
                if (!agg.valid(u, v, d)) continue;
                float lo = 1e9f, hi = -1e9f;
                for (int qv = std::max(0, v - 5); qv <= std::min(19, v + 5); ++qv)
                    for (int qu = std::max(0, u - 5); qu <= std::min(23, u + 5); ++qu)
                        if (raw.valid(qu, qv, d)) {
                            lo = std::min(lo, raw(qu, qv, d));
                            hi = std::max(hi, raw(qu, qv, d));
                        }
                EXPECT_GE(agg(u, v, d), lo - 1e-6f);
                EXPECT_LE(agg(u, v, d), hi + 1e-6f);
            }
}

TEST(CostVolumes, ZeroShiftScene) {
    std::mt19937_64 rng(28);
    const auto ref = random_image(30, 24, rng);
    rs::MatcherParams p;
    p.d_max = 4;
    const auto vols = rs::compute_cost_volumes(ref, ref, p);
    const auto wr = rs::wta_disparity(vols.reference), wt = rs::wta_disparity(vols.target);
    for (int v = 3; v < 21; ++v)
        for (int u = 3; u < 27; ++u) {
            EXPECT_EQ(wr.at(u, v), 0.0);
            EXPECT_EQ(wt.at(u, v), 0.0);
        }
}

TEST(CostVolumes, PureTranslationThree) {
    std::mt19937_64 rng(29);
    const auto ref = random_image(40, 24, rng);
    const auto tar = testing_support::shift_right(ref, -3);  // tar(u) = ref(u + 3)
    rs::MatcherParams p;
    p.d_max = 6;
    const auto vols = rs::compute_cost_volumes(ref, tar, p);
    const auto wr = rs::wta_disparity(vols.reference);
    for (int v = 3; v < 21; ++v)
        for (int u = 3 + 6; u < 29; ++u) EXPECT_EQ(wr.at(u, v), 3.0) << u << "," << v;
}

TEST(CostVolumes, TargetVolumeIsReferenceAlongOtherDiagonal) {
    std::mt19937_64 rng(30);
    const auto ref = random_image(20, 12, rng), tar = random_image(20, 12, rng);
    const auto sr = rs::block_stats(ref, 2), st = rs::block_stats(tar, 2);
    const auto raw = rs::raw_reference_costs(ref, tar, sr, st, 5);
    const auto raw_t = rs::raw_target_costs(raw);
    for (int v = 2; v < 10; ++v)
        for (int u = 2; u < 18; ++u)
            for (int d = 0; d <= 5; ++d) {
                if (!sr.valid(u + d, v) || !st.valid(u, v)) {
                    EXPECT_FALSE(raw_t.valid(u, v, d));
                    continue;
                }
                EXPECT_EQ(raw_t(u, v, d), static_cast<float>(rs::matching_cost(ref, tar, sr, st, {u + d, v}, d)));
            }
}

TEST(Wta, UniqueMinimumTieAndInvalid) {
    const auto vol = volume_from(3, 1, 2, {5, 1, 9, 2, 2, 3, NAN, NAN, NAN});
    const auto d = rs::wta_disparity(vol);
    EXPECT_EQ(d.at(0, 0), 1.0);
    EXPECT_EQ(d.at(1, 0), 0.0);
    EXPECT_FALSE(d.valid(2, 0));
}

TEST(LrCheck, Examples) {
    rs::DisparityMap ref(12, 1), tar(12, 1);
    ref.set(10, 0, 5);
    tar.set(5, 0, 5);
    EXPECT_EQ(rs::lr_consistency(ref, tar, 1.0).at(10, 0), 5.0);
    tar.set(5, 0, 3);
    EXPECT_FALSE(rs::lr_consistency(ref, tar, 1.0).valid(10, 0));
    tar.set(5, 0, 4);
    EXPECT_TRUE(rs::lr_consistency(ref, tar, 1.0).valid(10, 0));  // (5-4)^2 = 1 is kept

    rs::DisparityMap edge(6, 1), any(6, 1);
    edge.set(3, 0, 5);
    for (int u = 0; u < 6; ++u) any.set(u, 0, 5);
    EXPECT_FALSE(rs::lr_consistency(edge, any, 1.0).valid(3, 0));
}

TEST(LrCheck, InvalidTargetRemoves) {
    rs::DisparityMap ref(12, 1), tar(12, 1);
    ref.set(10, 0, 5);
    EXPECT_FALSE(rs::lr_consistency(ref, tar, 1.0).valid(10, 0));
}

TEST(LrCheck, NoInteriorRemovalOnPureTranslation) {
    std::mt19937_64 rng(31);
    const auto ref = random_image(48, 24, rng);
    const auto tar = testing_support::shift_right(ref, -4);
    rs::MatcherParams p;
    p.d_max = 8;
    const auto vols = rs::compute_cost_volumes(ref, tar, p);
    const auto lr =
        rs::lr_consistency(rs::wta_disparity(vols.reference), rs::wta_disparity(vols.target), p.delta_r);
    for (int v = 3; v < 21; ++v)
        for (int u = 3 + 8; u < 33; ++u) EXPECT_TRUE(lr.valid(u, v)) << u << "," << v;
}

TEST(Subpixel, Examples) {
    const auto vol = volume_from(3, 1, 2, {4, 1, 4, 2, 1, 4, 1, 3, 5});
    const auto refined = rs::subpixel_refine(row_map({1, 1, 0}), vol);
    EXPECT_EQ(refined.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(*refined.at(1, 0), 0.75);
    EXPECT_EQ(refined.at(2, 0), 0.0);
}

TEST(Subpixel, NonConvexKeepsInteger) {
    const auto vol = volume_from(1, 1, 2, {1, 1, 1});
    EXPECT_EQ(rs::subpixel_refine(row_map({1}), vol).at(0, 0), 1.0);
}

TEST(Subpixel, InvalidPreserved) {
    const auto vol = volume_from(2, 1, 2, {4, 1, 4, 4, 1, 4});
    const auto refined = rs::subpixel_refine(row_map({kNaN, 1}), vol);
    EXPECT_FALSE(refined.valid(0, 0));
    EXPECT_TRUE(refined.valid(1, 0));
}

TEST(UndoShift, Examples) {
    auto m = row_map({1.5, kNaN, 3.0});
    EXPECT_TRUE(rs::undo_perspective_shift(m, {}) == m);

    rs::DisparityMap one(1, 1);
    one.set(0, 0, 1.5);
    const rs::GroundPlaneShiftModel model{12.2, 0.0, 0};  // round(12.2) - 0 = 12
    EXPECT_EQ(rs::undo_perspective_shift(one, model).at(0, 0), 13.5);
    EXPECT_DOUBLE_EQ(*rs::undo_perspective_shift(one, model, rs::WarpMode::Subpixel).at(0, 0), 13.7);
    EXPECT_FALSE(rs::undo_perspective_shift(m, model).valid(1, 0));
}

TEST(UndoShift, RecoversTranslation) {
    std::mt19937_64 rng(32);
    const auto ref = random_image(60, 24, rng);
    const auto tar = testing_support::shift_right(ref, -9);
    // residual after the warp is delta_p = 3
    const rs::GroundPlaneShiftModel model{9.0, 0.0, 3};
    rs::MatcherParams p;
    p.d_max = 5;
    const auto res = rs::match_warped(ref, rs::warp_target(tar, model), model, p);
    std::size_t checked = 0;
    for (int v = 3; v < 21; ++v)
        for (int u = 20; u < 40; ++u) {
            ASSERT_TRUE(res.disparity.valid(u, v));
            EXPECT_NEAR(res.disparity.raw(u, v), 9.0, 0.5);
            ++checked;
        }
    EXPECT_GT(checked, 0u);
}

TEST(Matcher, SyntheticResidualArgminWithinOnePixel) {
    rs::SceneSpec spec;
    const auto pair = rs::render_stereo_pair(spec);
    const auto model = rs::fit_row_shift_model(rs::find_sparse_correspondences(pair.ref, pair.tar, {}), spec.height);
    const auto warped = rs::warp_target(pair.tar, model);
    const auto cov = rs::warp_coverage(spec.width, spec.height, model);
    const auto mask = rs::common_view_mask(spec, 8);
    const auto vols = rs::compute_cost_volumes(pair.ref, warped, {}, &cov);
    const auto wta = rs::wta_disparity(vols.reference);
    std::size_t total = 0, close = 0;
    for (int v = 0; v < spec.height; ++v)
        for (int u = 0; u < spec.width; ++u) {
            if (!mask(u, v) || !wta.valid(u, v)) continue;
            ++total;
            close += std::abs(wta.raw(u, v) - (spec.disparity(u, v) - model.row_shift(v))) <= 1.0;
        }
    ASSERT_GT(total, 1000u);
    EXPECT_GE(double(close) / total, 0.99);
}

TEST(Matcher, ParamsValidate) {
    rs::MatcherParams p;
    p.sigma1 = 0.0;
    EXPECT_THROW(p.validate(), rs::Error);
    p = {};
    p.d_max = 0;
    EXPECT_THROW(p.validate(), rs::Error);
}

TEST(NaiveOracle, SmallImagesBitExact) {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 6; ++trial) {
        const int w = 14 + trial * 3, h = 12 + trial * 2;
        const auto ref = random_image(w, h, rng);
        const auto tar = testing_support::shift_right(ref, -2, 77);
        rs::MatcherParams p;
        p.d_max = 5;
        p.window_radius = 1 + trial % 3;
        p.agg_radius = 2 + trial % 4;
        const auto vols = rs::compute_cost_volumes(ref, tar, p);
        const auto n = naive::run(ref, tar, p);
        EXPECT_TRUE(naive::same_volume(n.agg_ref, vols.reference));
        EXPECT_TRUE(naive::same_volume(n.agg_tar, vols.target));
        const auto wr = rs::wta_disparity(vols.reference), wt = rs::wta_disparity(vols.target);
        EXPECT_TRUE(wr == n.wta_ref);
        EXPECT_TRUE(wt == n.wta_tar);
        const auto lr = rs::lr_consistency(wr, wt, p.delta_r);
        EXPECT_TRUE(lr == n.consistent);
        EXPECT_TRUE(rs::subpixel_refine(lr, vols.reference) == n.refined);
    }
}

TEST(Determinism, WorkerCountDoesNotChangeVolumes) {
    std::mt19937_64 rng(34);
    const auto ref = random_image(40, 30, rng), tar = random_image(40, 30, rng);
    rs::MatcherParams p;
    p.d_max = 8;
    p.workers = 1;
    const auto a = rs::compute_cost_volumes(ref, tar, p);
    for (unsigned w : {2u, 3u, 8u}) {
        p.workers = w;
        const auto b = rs::compute_cost_volumes(ref, tar, p);
        EXPECT_TRUE(a.reference == b.reference);
        EXPECT_TRUE(a.target == b.target);
    }
}
