#include <random>

#include <gtest/gtest.h>

#include "kinefit/mapping.hpp"
#include "kinefit/synth.hpp"
#include "support.hpp"

using namespace kinefit;

namespace {

ExternalKey vertex(std::uint32_t id) { return {SourceKind::Vertex, id}; }

/// Reference markers r0..r(n-1) at random positions over several frames.
std::vector<ReferenceCloud> randomReference(std::mt19937_64& rng, int markers, int frames)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<ReferenceCloud> out(static_cast<std::size_t>(frames));
    for (auto& f : out)
        for (int k = 0; k < markers; ++k) f["r" + std::to_string(k)] = Vec3(u(rng), u(rng), u(rng));
    return out;
}

std::map<std::string, std::string> identityPairing(int markers)
{
    std::map<std::string, std::string> p;
    for (int k = 0; k < markers; ++k) p["r" + std::to_string(k)] = "site" + std::to_string(k);
    return p;
}

}  // namespace

TEST(Correspondences, RecoversPermutationExactly)
{
    std::mt19937_64 rng(1);
    const int n = 12;
    const auto ref = randomReference(rng, n, 5);
    std::vector<std::uint32_t> perm(n);
    std::iota(perm.begin(), perm.end(), 100u);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<ExternalCloud> ext(ref.size());
    for (std::size_t f = 0; f < ref.size(); ++f)
        for (int k = 0; k < n; ++k) ext[f][vertex(perm[static_cast<std::size_t>(k)])] = ref[f].at("r" + std::to_string(k));

    const auto table = discoverCorrespondences(ext, ref, identityPairing(n));
    ASSERT_EQ(table.entries.size(), static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const auto* e = table.findSite("site" + std::to_string(k));
        ASSERT_NE(e, nullptr);
        EXPECT_EQ(e->key, vertex(perm[static_cast<std::size_t>(k)]));
        EXPECT_EQ(e->weight, 1.0);
    }
}

TEST(Correspondences, JitteredPointWeightFollowsKernel)
{
    ReferenceCloud r{{"r0", Vec3(0.0, 0.0, 0.0)}, {"r1", Vec3(1.0, 0.0, 0.0)}};
    std::vector<ReferenceCloud> ref;
    std::vector<ExternalCloud> ext;
    for (int f = 0; f < 6; ++f) {
        ref.push_back(r);
        const double a = f * 1.0471975511965976;
        ext.push_back({{vertex(7), Vec3(0.005 * std::cos(a), 0.005 * std::sin(a), 0.0)}, {vertex(3), Vec3(1.0, 0.0, 0.0)}});
    }
    const auto table = discoverCorrespondences(ext, ref, {{"r0", "a"}, {"r1", "b"}}, 0.02);
    EXPECT_EQ(table.findSite("a")->key, vertex(7));
    EXPECT_NEAR(table.findSite("a")->weight, std::exp(-25.0 / 800.0), 1e-12);
    EXPECT_NEAR(table.findSite("a")->weight, 0.969, 5e-4);
    EXPECT_EQ(table.findSite("b")->weight, 1.0);
}

TEST(Correspondences, TieGoesToLowerId)
{
    const std::vector<ReferenceCloud> ref = {{{"r0", Vec3::Zero()}}};
    const std::vector<ExternalCloud> ext = {{{vertex(9), Vec3(0.01, 0.0, 0.0)}, {vertex(4), Vec3(-0.01, 0.0, 0.0)}}};
    EXPECT_EQ(discoverCorrespondences(ext, ref, {{"r0", "a"}}).findSite("a")->key, vertex(4));
}

TEST(Correspondences, NoOverlapIsNoDataError)
{
    const std::vector<ReferenceCloud> ref = {{{"r0", Vec3::Zero()}}, {}};
    const std::vector<ExternalCloud> ext = {{}, {{vertex(1), Vec3::Zero()}}};
    EXPECT_THROW(discoverCorrespondences(ext, ref, {{"r0", "a"}}), NoDataError);
    EXPECT_THROW(discoverCorrespondences({}, {}, {{"r0", "a"}}), NoDataError);
}

TEST(Correspondences, BijectiveAndRigidInvariantUnderClutter)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 8;
        const auto ref = randomReference(rng, n, 4);
        std::vector<ExternalCloud> ext(ref.size());
        for (std::size_t f = 0; f < ref.size(); ++f) {
            for (int k = 0; k < n; ++k)
                ext[f][vertex(static_cast<std::uint32_t>(k))] =
                    ref[f].at("r" + std::to_string(k)) + Vec3(noise(rng), noise(rng), noise(rng));
            // Distractors that may be closer to some reference than its partner.
            for (std::uint32_t d = 50; d < 60; ++d) ext[f][vertex(d)] = Vec3(u(rng), u(rng), u(rng));
        }
        const auto table = discoverCorrespondences(ext, ref, identityPairing(n));
        EXPECT_NO_THROW(table.validate());
        EXPECT_EQ(table.entries.size(), static_cast<std::size_t>(n));

        const Mat3 r = oracle::randomRotation(rng);
        const Vec3 t(u(rng), u(rng), u(rng));
        auto moveRef = ref;
        auto moveExt = ext;
        for (auto& f : moveRef)
            for (auto& [k, p] : f) p = r * p + t;
        for (auto& f : moveExt)
            for (auto& [k, p] : f) p = r * p + t;
        const auto moved = discoverCorrespondences(moveExt, moveRef, identityPairing(n));
        ASSERT_EQ(moved.entries.size(), table.entries.size());
        for (std::size_t i = 0; i < table.entries.size(); ++i) {
            EXPECT_EQ(moved.entries[i].key, table.entries[i].key);
            EXPECT_EQ(moved.entries[i].site, table.entries[i].site);
            EXPECT_NEAR(moved.entries[i].weight, table.entries[i].weight, 1e-9);
        }
    }
}

TEST(CorrespondenceTable, ValidationRejectsDuplicatesAndBadWeights)
{
    CorrespondenceTable t;
    t.entries = {{vertex(1), "a", 1.0}, {vertex(1), "b", 1.0}};
    EXPECT_THROW(t.validate(), CorrespondenceError);
    t.entries = {{vertex(1), "a", 1.0}, {vertex(2), "a", 1.0}};
    EXPECT_THROW(t.validate(), CorrespondenceError);
    t.entries = {{vertex(1), "a", -0.5}};
    EXPECT_THROW(t.validate(), CorrespondenceError);
    t.entries = {{vertex(1), "a", std::nan("")}};
    EXPECT_THROW(t.validate(), CorrespondenceError);
    // Same id, different kinds are different keys.
    t.entries = {{vertex(1), "a", 1.0}, {{SourceKind::Keypoint, 1}, "b", 1.0}};
    EXPECT_NO_THROW(t.validate());
}

TEST(ResidualWeight, MonotoneKernel)
{
    EXPECT_EQ(residualWeight(0.0, 0.02), 1.0);
    double previous = 1.0;
    for (double r = 0.001; r < 0.2; r += 0.001) {
        const double w = residualWeight(r, 0.02);
        EXPECT_LT(w, previous);
        previous = w;
    }
}

//------------------------------------------------------------------------------
// EM refinement
//------------------------------------------------------------------------------

TEST(SiteRefinement, OptimalSitesAreAFixedPoint)
{
    const auto fx = oracle::displacedSiteFixture(4, 5);
    EmOptions opt;
    opt.refineSites = {fx.site, "r_forearm_marker"};
    const auto r = refineSitesEM(fx.truth, fx.frames, fx.table, 1, opt);
    for (const auto& name : opt.refineSites) {
        const int s = fx.truth.siteIndex(name);
        EXPECT_LT((r.skeleton.site(s).offset - fx.truth.site(s).offset).norm(), 1e-9) << name;
    }
}

TEST(SiteRefinement, DisplacedSiteOnStaticPoseIsRecovered)
{
    auto fx = oracle::displacedSiteFixture(1, 9);
    std::vector<MarkerFrame> frames(4, fx.frames.front());
    for (std::size_t f = 0; f < frames.size(); ++f) frames[f].id = "static" + std::to_string(f);
    EmOptions opt;
    opt.refineSites = {fx.site};
    const auto r = refineSitesEM(fx.model, frames, fx.table, 2, opt);
    const int s = fx.truth.siteIndex(fx.site);
    const Vec3 moved = r.skeleton.site(s).offset - fx.model.site(s).offset;
    EXPECT_LT((moved - fx.displacement).norm(), 1e-6);
    EXPECT_LT(r.roundLoss.back(), 1e-12);
    EXPECT_GT(r.initialLoss, 1e-5);
}

TEST(SiteRefinement, DescentOverRoundsAndWeightsFollowResiduals)
{
    const auto fx = oracle::displacedSiteFixture(6, 13);
    EmOptions opt;
    opt.refineSites = {fx.site};
    const auto r = refineSitesEM(fx.model, fx.frames, fx.table, 3, opt);
    ASSERT_EQ(r.roundLoss.size(), 3u);
    double previous = r.initialLoss;
    for (double l : r.roundLoss) {
        EXPECT_LE(l, previous + 1e-12 * std::max(1.0, previous));
        previous = l;
    }
    // Weights are a decreasing function of the per-site mean residual.
    std::vector<std::pair<double, double>> rw;
    for (const auto& e : r.table.entries) rw.emplace_back(r.meanResidual.at(e.site), e.weight);
    std::sort(rw.begin(), rw.end());
    for (std::size_t i = 1; i < rw.size(); ++i) EXPECT_LE(rw[i].second, rw[i - 1].second);
}

TEST(SiteRefinement, UnobservedSiteIsFlaggedAndUnchanged)
{
    auto fx = oracle::displacedSiteFixture(3, 2);
    for (auto& f : fx.frames) f.targets.at("r_forearm_marker").confidence = 0.0;
    EmOptions opt;
    opt.refineSites = {"r_forearm_marker"};
    const auto r = refineSitesEM(fx.truth, fx.frames, fx.table, 1, opt);
    EXPECT_EQ(r.unobserved, std::vector<std::string>{"r_forearm_marker"});
    const int s = fx.truth.siteIndex("r_forearm_marker");
    EXPECT_EQ(r.skeleton.site(s).offset, fx.truth.site(s).offset);
}

TEST(SiteRefinement, PreconditionsAreChecked)
{
    const auto fx = oracle::displacedSiteFixture(1, 1);
    EXPECT_THROW(refineSitesEM(fx.model, fx.frames, fx.table, 0), ConfigError);
    EXPECT_THROW(refineSitesEM(fx.model, {}, fx.table, 1), NoDataError);
    EmOptions opt;
    opt.refineSites = {"not_in_table"};
    EXPECT_THROW(refineSitesEM(fx.model, fx.frames, fx.table, 1, opt), ConfigError);
}

TEST(SiteRefinement, ParallelEStepIsDeterministic)
{
    const auto fx = oracle::displacedSiteFixture(4, 17);
    EmOptions serial;
    serial.refineSites = {fx.site};
    EmOptions parallel = serial;
    parallel.jobs = 3;
    const auto a = refineSitesEM(fx.model, fx.frames, fx.table, 2, serial);
    const auto b = refineSitesEM(fx.model, fx.frames, fx.table, 2, parallel);
    EXPECT_EQ(a.roundLoss, b.roundLoss);
    EXPECT_TRUE(a.table == b.table);
    const int s = fx.model.siteIndex(fx.site);
    EXPECT_EQ(a.skeleton.site(s).offset, b.skeleton.site(s).offset);
}
