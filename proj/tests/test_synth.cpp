#include <gtest/gtest.h>

#include "kinefit/cameras.hpp"
#include "kinefit/synth.hpp"

using namespace kinefit;

TEST(Synth, NoiselessMarkersEqualForwardKinematics)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 1;
    const auto scene = synth::generateScene(skel, spec, 5);
    ASSERT_EQ(scene.markers.size(), 5u);
    for (std::size_t f = 0; f < scene.markers.size(); ++f) {
        const auto fk = forwardKinematics(skel, scene.truth[f]);
        ASSERT_EQ(scene.markers[f].targets.size(), fk.size());
        for (const auto& [name, p] : fk) EXPECT_EQ(scene.markers[f].targets.at(name).position, p) << name;
    }
}

TEST(Synth, SameSeedIsBitwiseIdentical)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 77;
    spec.markerNoiseMm = 2.0;
    spec.pixelNoise = 1.5;
    spec.dropout = 0.1;
    const auto a = synth::generateScene(skel, spec, 3);
    const auto b = synth::generateScene(skel, spec, 3);
    EXPECT_EQ(a.markers, b.markers);
    EXPECT_EQ(a.detections, b.detections);
    EXPECT_EQ(a.rig, b.rig);
    for (std::size_t f = 0; f < a.truth.size(); ++f) EXPECT_TRUE(bitwiseEqual(a.truth[f], b.truth[f]));
    spec.seed = 78;
    EXPECT_NE(synth::generateScene(skel, spec, 3).markers, a.markers);
}

TEST(Synth, FullDropoutSilencesCamera)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 2;
    spec.cameraDropout[5] = 1.0;
    const auto scene = synth::generateScene(skel, spec, 4);
    for (const auto& f : scene.detections) {
        for (const auto& [n, d] : f.views[5].detections) EXPECT_EQ(d.confidence, 0.0);
        for (const auto& [n, d] : f.views[4].detections) EXPECT_GT(d.confidence, 0.0);
    }
}

TEST(Synth, NoiselessDetectionsAreFullyConsistent)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 3;
    const auto scene = synth::generateScene(skel, spec, 5);
    for (std::size_t f = 0; f < scene.truth.size(); ++f)
        EXPECT_EQ(gcAtThreshold(scene.rig, forwardKinematics(skel, scene.truth[f]), scene.detections[f], 10.0), 1.0);
}

TEST(Synth, PixelNoiseStandardDeviation)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 4;
    spec.pixelNoise = 2.0;
    const auto noisy = synth::generateScene(skel, spec, 20);
    spec.pixelNoise = 0.0;
    double sum = 0.0;
    double sum2 = 0.0;
    long n = 0;
    for (std::size_t f = 0; f < noisy.truth.size(); ++f) {
        const auto fk = forwardKinematics(skel, noisy.truth[f]);
        for (std::size_t c = 0; c < noisy.rig.cameras.size(); ++c)
            for (const auto& [name, d] : noisy.detections[f].views[c].detections) {
                const Vec2 e = d.pixel - project(noisy.rig.cameras[c], fk.at(name)).pixel;
                for (int a = 0; a < 2; ++a) {
                    sum += e[a];
                    sum2 += e[a] * e[a];
                    ++n;
                }
            }
    }
    ASSERT_GE(n, 10000);
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    EXPECT_NEAR(sd, 2.0, 0.05 * 2.0);
}

TEST(Synth, MarkerNoiseStandardDeviation)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 5;
    spec.multiview = false;
    spec.markerNoiseMm = 2.0;
    const auto scene = synth::generateScene(skel, spec, 100);
    double sum2 = 0.0;
    long n = 0;
    for (std::size_t f = 0; f < scene.truth.size(); ++f) {
        const auto fk = forwardKinematics(skel, scene.truth[f]);
        for (const auto& [name, t] : scene.markers[f].targets) {
            sum2 += (t.position - fk.at(name)).squaredNorm();
            n += 3;
        }
    }
    EXPECT_NEAR(std::sqrt(sum2 / static_cast<double>(n)) * 1000.0, 2.0, 0.1);
}

TEST(Synth, SampledPosesStayInsideTheLimitFraction)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 6;
    spec.multiview = false;
    const auto scene = synth::generateScene(skel, spec, 50);
    for (const auto& pose : scene.truth) {
        EXPECT_TRUE(clampToLimits(skel, pose) == pose);
        for (int i = 0; i < skel.nq(); ++i) {
            if (skel.isRootCoordinate(i) || !std::isfinite(skel.lowerLimit(i)) || !std::isfinite(skel.upperLimit(i)))
                continue;
            const double margin = 0.05 * (skel.upperLimit(i) - skel.lowerLimit(i)) - 1e-12;
            EXPECT_GE(pose.q[i], skel.lowerLimit(i) + margin);
            EXPECT_LE(pose.q[i], skel.upperLimit(i) - margin);
        }
    }
}

TEST(Synth, OutlierCameraIsDisplacedByExactAmount)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.seed = 7;
    spec.outlier = {3, 80.0};
    const auto scene = synth::generateScene(skel, spec, 2);
    for (std::size_t f = 0; f < scene.truth.size(); ++f) {
        const auto fk = forwardKinematics(skel, scene.truth[f]);
        for (std::size_t c = 0; c < scene.rig.cameras.size(); ++c)
            for (const auto& [name, d] : scene.detections[f].views[c].detections) {
                const double e = (d.pixel - project(scene.rig.cameras[c], fk.at(name)).pixel).norm();
                EXPECT_NEAR(e, c == 3 ? 80.0 : 0.0, 1e-9);
            }
    }
}

TEST(Synth, InvalidSpecsAreRejected)
{
    const Skeleton skel = synth::makeHingeChain(2);
    synth::SceneSpec spec;
    EXPECT_THROW(synth::generateScene(skel, spec, 0), SceneSpecError);
    spec.rig.cameras = 0;
    EXPECT_THROW(synth::generateScene(skel, spec, 1), SceneSpecError);
    spec = {};
    spec.dropout = 1.5;
    EXPECT_THROW(synth::generateScene(skel, spec, 1), SceneSpecError);
    spec = {};
    spec.markerNoiseMm = -1.0;
    EXPECT_THROW(synth::generateScene(skel, spec, 1), SceneSpecError);
}

TEST(Synth, TwoHandFixtureShape)
{
    const Skeleton skel = synth::makeTwoHandFixture();
    int dof = 0;
    for (int i = 0; i < skel.nq(); ++i) dof += skel.isRootCoordinate(i) ? 0 : 1;
    EXPECT_GE(dof + 6, 40);
    for (const char* side : {"l", "r"})
        for (const auto& name : synth::handSiteNames(side)) EXPECT_TRUE(skel.findSite(name)) << name;
    EXPECT_EQ(synth::handSiteNames("l").size(), 21u);
}
