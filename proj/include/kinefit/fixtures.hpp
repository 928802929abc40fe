#pragma once

// Ready-made inputs built on the two-hand fixture. The files under data/ are
// generated from these functions by the kinefit_make_data tool.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kinefit/io.hpp"
#include "kinefit/mapping.hpp"
#include "kinefit/synth.hpp"

namespace kinefit::fixtures {

inline bool isHandSite(const std::string& name)
{
    for (const char* part : {"_wrist", "_thumb", "_index", "_middle", "_ring", "_little"})
        if (name.find(part) != std::string::npos) return true;
    return false;
}

/// Correspondences over every fixture site: hand sites map to keypoint ids
/// 0.., body sites to vertex ids 1000...
inline CorrespondenceTable twoHandCorrespondences(const Skeleton& skel)
{
    CorrespondenceTable t;
    std::uint32_t keypoint = 0;
    std::uint32_t vertex = 1000;
    for (int s = 0; s < skel.numSites(); ++s) {
        const std::string& name = skel.site(s).name;
        const ExternalKey key = isHandSite(name) ? ExternalKey{SourceKind::Keypoint, keypoint++}
                                                 : ExternalKey{SourceKind::Vertex, vertex++};
        t.entries.push_back({key, name, 1.0});
    }
    return t;
}

/// The 42 hand sites (21 per hand) matched to regressed hand keypoints.
inline CorrespondenceTable handKeypointCorrespondences()
{
    CorrespondenceTable t;
    std::uint32_t id = 0;
    for (const char* side : {"l", "r"})
        for (const auto& site : synth::handSiteNames(side)) t.entries.push_back({{SourceKind::Keypoint, id++}, site, 1.0});
    return t;
}

/// Finger and thumb coordinates of both hands.
inline std::vector<std::string> handAngleCoordinates(const Skeleton& skel)
{
    std::vector<std::string> out;
    for (const auto& name : skel.coordinateNames())
        for (const char* f : {"_thumb_", "_index_", "_middle_", "_ring_", "_little_"})
            if (name.find(f) != std::string::npos) {
                out.push_back(name);
                break;
            }
    return out;
}

/// Upper-extremity PA over both arms and hands, per-hand PA, and per-hand
/// errors under the upper-extremity alignment of that side.
inline io::RegionSet twoHandRegions(const Skeleton& skel)
{
    io::RegionSet set;
    std::vector<std::string> ue;
    for (const char* side : {"l", "r"}) {
        const std::string s = side;
        for (const char* c : {"_shoulder", "_upperarm_marker", "_elbow", "_forearm_marker"}) ue.push_back(s + c);
        const auto hand = synth::handSiteNames(s);
        ue.insert(ue.end(), hand.begin(), hand.end());
    }
    set.regions.push_back({"ue", ue, {}});
    for (const char* side : {"l", "r"}) {
        const std::string s = side;
        const auto hand = synth::handSiteNames(s);
        std::vector<std::string> arm;
        for (const char* c : {"_shoulder", "_upperarm_marker", "_elbow", "_forearm_marker"}) arm.push_back(s + c);
        arm.insert(arm.end(), hand.begin(), hand.end());
        set.regions.push_back({"hand_" + s, hand, {}});
        set.regions.push_back({"ue_aligned_hand_" + s, arm, hand});
    }
    set.angleCoordinates = handAngleCoordinates(skel);
    return set;
}

/// Two-hand scene whose model site `site` sits `displacement` (body frame)
/// away from where the generator put it. Frames are noiseless.
struct DisplacedSiteFixture {
    Skeleton truth;
    Skeleton model;
    std::string site;
    Vec3 displacement;
    std::vector<MarkerFrame> frames;
    CorrespondenceTable table;
};

inline DisplacedSiteFixture displacedSite(int frames = 8, std::uint64_t seed = 42,
                                          const std::string& site = "l_upperarm_marker",
                                          const Vec3& displacement = Vec3(0.01, 0.0, 0.0))
{
    const Skeleton truth = synth::makeTwoHandFixture();
    const int s = truth.siteIndex(site);
    synth::SceneSpec spec;
    spec.multiview = false;
    spec.seed = seed;
    const synth::Scene scene = synth::generateScene(truth, spec, frames);
    return {truth, truth.withSiteOffsets({{s, truth.site(s).offset - displacement}}), site, displacement,
            scene.markers, twoHandCorrespondences(truth)};
}

/// Reference poses and predictions perturbed by Gaussian angle noise plus a
/// global root offset.
struct PerturbationExample {
    std::vector<io::FramePose> reference;
    std::vector<io::FramePose> predicted;
};

inline PerturbationExample perturbation(const Skeleton& skel, int frames = 10, std::uint64_t seed = 2024,
                                        double angleSigma = 0.05)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    synth::SceneSpec spec;
    PerturbationExample out;
    for (int f = 0; f < frames; ++f) {
        const PoseState ref = synth::samplePose(skel, spec, rng);
        PoseState pred = ref;
        for (int i = 0; i < skel.nq(); ++i)
            pred.q[i] += skel.isRootCoordinate(i) ? 0.05 * n(rng) : angleSigma * n(rng);
        pred = clampToLimits(skel, pred);
        out.reference.push_back({synth::frameId(f), ref});
        out.predicted.push_back({synth::frameId(f), pred});
    }
    return out;
}

}  // namespace kinefit::fixtures
