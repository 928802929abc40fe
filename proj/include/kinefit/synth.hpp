#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "kinefit/cameras.hpp"
#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit::synth {

//------------------------------------------------------------------------------
// Fixture skeletons
//------------------------------------------------------------------------------

/// Planar hinge chain about +z laid along +x, one site at each link end and
/// three non-collinear sites on the root.
inline Skeleton makeHingeChain(int links, double linkLength = 1.0, double limit = 2.5)
{
    std::vector<Body> bodies;
    std::vector<Site> sites;
    bodies.push_back({"base", -1, Vec3::Zero(), {JointKind::FreeRoot, "", Vec3::UnitZ(), {}, {}}});
    sites.push_back({"base_a", 0, Vec3(0.0, 0.1, 0.0)});
    sites.push_back({"base_b", 0, Vec3(0.0, -0.1, 0.0)});
    sites.push_back({"base_c", 0, Vec3(-0.1, 0.0, 0.05)});
    for (int i = 0; i < links; ++i) {
        const std::string name = "link" + std::to_string(i);
        const Vec3 t = i == 0 ? Vec3::Zero() : Vec3(linkLength, 0.0, 0.0);
        bodies.push_back({name, i, t, {JointKind::Hinge, "", Vec3::UnitZ(), {-limit}, {limit}}});
        sites.push_back({name + "_tip", i + 1, Vec3(linkLength, 0.0, 0.0)});
    }
    return Skeleton(std::move(bodies), std::move(sites), {}, {"base_a", "base_b", "base_c"});
}

struct RandomSkeletonOptions {
    int articulatedDof = 6;  ///< DOF excluding the root
    bool chainOnly = false;
    bool allowSlides = true;
    bool scaleGroups = true;
};

/// Random tree (or chain) of Ball/Hinge/Slide joints under a free root. Every
/// body carries a tip site and an off-axis site so its pose is observable.
template <class Rng>
Skeleton randomSkeleton(Rng& rng, const RandomSkeletonOptions& opt)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto randomUnit = [&]() {
        std::normal_distribution<double> n(0.0, 1.0);
        Vec3 v(n(rng), n(rng), n(rng));
        return Vec3(v.normalized());
    };

    std::vector<Body> bodies;
    std::vector<Site> sites;
    std::vector<Vec3> tips;
    bodies.push_back({"root", -1, Vec3::Zero(), {JointKind::FreeRoot, "", Vec3::UnitZ(), {}, {}}});
    sites.push_back({"root_a", 0, Vec3(0.0, 0.12, 0.0)});
    sites.push_back({"root_b", 0, Vec3(0.0, -0.12, 0.0)});
    sites.push_back({"root_c", 0, Vec3(-0.1, 0.0, 0.08)});
    tips.push_back(Vec3(0.0, 0.0, 0.1));

    int dof = 0;
    while (dof < opt.articulatedDof) {
        const int remaining = opt.articulatedDof - dof;
        const double pick = unit(rng);
        JointKind kind = JointKind::Hinge;
        if (remaining >= 3 && pick < 0.3) kind = JointKind::Ball;
        else if (opt.allowSlides && pick > 0.9) kind = JointKind::Slide;

        const int index = static_cast<int>(bodies.size());
        const int parent = opt.chainOnly ? index - 1 : static_cast<int>(unit(rng) * index);
        const std::string name = "b" + std::to_string(index);
        Joint joint;
        joint.kind = kind;
        switch (kind) {
        case JointKind::Ball:
            for (int d = 0; d < 3; ++d) {
                joint.lower.push_back(-uniform(0.3, 0.8));
                joint.upper.push_back(uniform(0.3, 0.8));
            }
            break;
        case JointKind::Hinge:
            joint.axis = randomUnit();
            joint.lower = {-uniform(0.3, 1.3)};
            joint.upper = {uniform(0.3, 1.3)};
            break;
        default:
            joint.axis = randomUnit();
            joint.lower = {-0.05};
            joint.upper = {0.05};
            break;
        }
        const double length = uniform(0.15, 0.4);
        Vec3 dir = randomUnit();
        if (kind == JointKind::Hinge && std::abs(dir.dot(joint.axis)) > 0.8) dir = joint.axis.unitOrthogonal();
        bodies.push_back({name, parent, tips[static_cast<std::size_t>(parent)], joint});
        const Vec3 tip = length * dir;
        const Vec3 side = 0.05 * dir.unitOrthogonal();
        sites.push_back({name + "_tip", index, tip});
        sites.push_back({name + "_side", index, 0.5 * tip + side});
        tips.push_back(tip);
        dof += dofCount(kind);
    }

    std::vector<ScaleGroup> groups;
    if (opt.scaleGroups) {
        ScaleGroup current;
        for (int b = 1; b < static_cast<int>(bodies.size()); ++b) {
            if (unit(rng) < 0.5) current.bodies.push_back(b);
            if (!current.bodies.empty() && (unit(rng) < 0.4 || b + 1 == static_cast<int>(bodies.size()))) {
                current.name = "g" + std::to_string(groups.size());
                groups.push_back(std::move(current));
                current = {};
            }
        }
    }
    return Skeleton(std::move(bodies), std::move(sites), std::move(groups), {"root_a", "root_b", "root_c"});
}

/// Upper body with two articulated arms and hands: 63 generalized
/// coordinates and 21 markers per hand (wrist, thumb CMC/MCP/IP, finger
/// MCP/PIP/DIP joint centers, five fingertips). World is z-up.
inline Skeleton makeTwoHandFixture()
{
    std::vector<Body> bodies;
    std::vector<Site> sites;
    std::vector<ScaleGroup> groups;
    auto add = [&](const std::string& name, const std::string& parent, const Vec3& t, Joint j) {
        int p = -1;
        for (std::size_t i = 0; i < bodies.size(); ++i)
            if (bodies[i].name == parent) p = static_cast<int>(i);
        bodies.push_back({name, p, t, std::move(j)});
        return static_cast<int>(bodies.size()) - 1;
    };
    auto site = [&](const std::string& name, int body, const Vec3& offset) { sites.push_back({name, body, offset}); };
    auto hinge = [](const Vec3& axis, double lo, double hi) {
        return Joint{JointKind::Hinge, "", Vec3(axis.normalized()), {lo}, {hi}};
    };

    const int pelvis = add("pelvis", "", Vec3::Zero(), {JointKind::FreeRoot, "", Vec3::UnitZ(), {}, {}});
    site("pelvis_l", pelvis, Vec3(0.0, 0.12, 0.0));
    site("pelvis_r", pelvis, Vec3(0.0, -0.12, 0.0));
    site("sacrum", pelvis, Vec3(-0.1, 0.0, 0.05));
    const int torso = add("torso", "pelvis", Vec3(0.0, 0.0, 0.1),
                          {JointKind::Ball, "", Vec3::UnitZ(), {-0.5, -0.5, -0.6}, {0.5, 0.5, 0.6}});
    site("spine_mid", torso, Vec3(-0.08, 0.0, 0.2));
    site("neck", torso, Vec3(0.0, 0.0, 0.45));
    site("chest", torso, Vec3(0.1, 0.0, 0.3));
    groups.push_back({"trunk", {pelvis, torso}});

    std::vector<std::string> core = {"pelvis_l", "pelvis_r", "sacrum", "spine_mid", "neck", "chest"};

    for (const char* sideName : {"l", "r"}) {
        const std::string s = sideName;
        const double sign = s == "l" ? 1.0 : -1.0;
        ScaleGroup arm{s + "_arm", {}};
        ScaleGroup hand{s + "_hand", {}};

        const int upper = add(s + "_upperarm", "torso", Vec3(0.0, sign * 0.18, 0.42),
                              {JointKind::Ball, s + "_shoulder", Vec3::UnitZ(), {-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}});
        site(s + "_shoulder", upper, Vec3::Zero());
        site(s + "_upperarm_marker", upper, Vec3(0.04, sign * 0.03, -0.15));
        site(s + "_elbow", upper, Vec3(0.0, 0.0, -0.3));
        const int fore = add(s + "_forearm", s + "_upperarm", Vec3(0.0, 0.0, -0.3), hinge(Vec3::UnitY(), 0.0, 2.2));
        const int foreRot = add(s + "_forearm_rot", s + "_forearm", Vec3::Zero(), hinge(Vec3::UnitZ(), -1.2, 1.2));
        site(s + "_forearm_marker", foreRot, Vec3(0.03, 0.0, -0.12));
        site(s + "_wrist", foreRot, Vec3(0.0, 0.0, -0.25));
        arm.bodies = {upper, fore, foreRot};
        for (const auto& c : {"_shoulder", "_upperarm_marker", "_elbow", "_forearm_marker"}) core.push_back(s + c);

        const int wristFlex = add(s + "_wrist_flex", s + "_forearm_rot", Vec3(0.0, 0.0, -0.25),
                                  hinge(Vec3::UnitX(), -1.0, 1.0));
        const int palm = add(s + "_hand", s + "_wrist_flex", Vec3::Zero(), hinge(Vec3::UnitY(), -0.4, 0.4));
        hand.bodies = {wristFlex, palm};

        // Thumb: CMC (2 DOF), MCP, IP.
        const Vec3 cmc(0.02, sign * 0.025, -0.02);
        const Vec3 dir = Vec3(0.5, sign * 0.6, -0.6).normalized();
        const Vec3 flexAxis = dir.cross(Vec3::UnitX()).normalized();
        site(s + "_thumb_cmc", palm, cmc);
        const int tAbd = add(s + "_thumb_cmc_abd", s + "_hand", cmc, hinge(Vec3::UnitX(), -0.5, 0.8));
        const int tMeta = add(s + "_thumb_meta", s + "_thumb_cmc_abd", Vec3::Zero(), hinge(flexAxis, -0.3, 0.9));
        site(s + "_thumb_mcp", tMeta, 0.045 * dir);
        const int tProx = add(s + "_thumb_prox", s + "_thumb_meta", 0.045 * dir, hinge(flexAxis, -0.2, 1.0));
        site(s + "_thumb_ip", tProx, 0.032 * dir);
        const int tDist = add(s + "_thumb_dist", s + "_thumb_prox", 0.032 * dir, hinge(flexAxis, -0.2, 1.2));
        site(s + "_thumb_tip", tDist, 0.025 * dir);
        hand.bodies.insert(hand.bodies.end(), {tAbd, tMeta, tProx, tDist});

        static constexpr const char* fingers[] = {"index", "middle", "ring", "little"};
        static constexpr double mcpY[] = {0.03, 0.01, -0.01, -0.03};
        static constexpr double mcpZ[] = {-0.085, -0.09, -0.088, -0.082};
        static constexpr double lengthScale[] = {1.0, 1.08, 1.0, 0.82};
        for (int f = 0; f < 4; ++f) {
            const std::string fn = s + "_" + fingers[f];
            const double k = lengthScale[f];
            const Vec3 mcp(0.0, sign * mcpY[f], mcpZ[f]);
            site(fn + "_mcp", palm, mcp);
            const int abd = add(fn + "_mcp_abd", s + "_hand", mcp, hinge(Vec3::UnitX(), -0.35, 0.35));
            const int prox = add(fn + "_prox", fn + "_mcp_abd", Vec3::Zero(), hinge(Vec3::UnitY(), -0.3, 1.5));
            site(fn + "_pip", prox, Vec3(0.0, 0.0, -0.045 * k));
            const int mid = add(fn + "_mid", fn + "_prox", Vec3(0.0, 0.0, -0.045 * k), hinge(Vec3::UnitY(), 0.0, 1.7));
            site(fn + "_dip", mid, Vec3(0.0, 0.0, -0.028 * k));
            const int dist = add(fn + "_dist", fn + "_mid", Vec3(0.0, 0.0, -0.028 * k), hinge(Vec3::UnitY(), 0.0, 1.4));
            site(fn + "_tip", dist, Vec3(0.0, 0.0, -0.022 * k));
            hand.bodies.insert(hand.bodies.end(), {abd, prox, mid, dist});
        }
        groups.push_back(std::move(arm));
        groups.push_back(std::move(hand));
    }
    return Skeleton(std::move(bodies), std::move(sites), std::move(groups), std::move(core));
}

/// The 21 hand marker names of one side ("l" or "r") of makeTwoHandFixture.
inline std::vector<std::string> handSiteNames(const std::string& side)
{
    std::vector<std::string> out = {side + "_wrist", side + "_thumb_cmc", side + "_thumb_mcp", side + "_thumb_ip",
                                    side + "_thumb_tip"};
    for (const char* f : {"index", "middle", "ring", "little"})
        for (const char* j : {"_mcp", "_pip", "_dip", "_tip"}) out.push_back(side + "_" + f + j);
    return out;
}

//------------------------------------------------------------------------------
// Scene generation
//------------------------------------------------------------------------------

/// Ring of cameras looking at a common point; world is z-up.
struct RigLayout {
    int cameras = 8;
    double radius = 3.0;
    double height = 1.5;
    Vec3 lookAt = Vec3(0.0, 0.0, 1.0);
    double focal = 1000.0;
    int width = 1920;
    int height_px = 1080;
};

struct OutlierSpec {
    int camera = -1;  ///< rig index; -1 disables
    double displacementPx = 0.0;
};

struct SceneSpec {
    /// Per-DOF samples are drawn from this central fraction of each joint range.
    double limitFraction = 0.9;
    Vec3 rootCenter = Vec3(0.0, 0.0, 1.0);
    double rootTranslationRange = 0.2;  ///< meters, per axis
    double rootRotationRange = 0.5;     ///< radians, per exp-map component
    double unlimitedRange = 1.0;        ///< used for unlimited non-root DOF
    double scaleJitter = 0.0;           ///< scales uniform in [1-j, 1+j]
    double markerNoiseMm = 0.0;
    double pixelNoise = 0.0;
    double dropout = 0.0;
    std::map<int, double> cameraDropout;  ///< per-camera override
    bool multiview = true;
    RigLayout rig;
    OutlierSpec outlier;
    double confidence = 1.0;
    std::uint64_t seed = 0;
};

struct Scene {
    std::vector<PoseState> truth;
    std::vector<MarkerFrame> markers;
    std::vector<MultiviewFrame> detections;
    CameraRig rig;
};

inline Camera lookAtCamera(const std::string& id, const Vec3& center, const Vec3& target, const RigLayout& layout)
{
    const Vec3 forward = (target - center).normalized();
    const Vec3 right = forward.cross(Vec3::UnitZ()).normalized();
    const Vec3 down = forward.cross(right);
    Camera c;
    c.id = id;
    c.fx = c.fy = layout.focal;
    c.width = layout.width;
    c.height = layout.height_px;
    c.cx = 0.5 * layout.width;
    c.cy = 0.5 * layout.height_px;
    c.rotation.row(0) = right;
    c.rotation.row(1) = down;
    c.rotation.row(2) = forward;
    c.translation = -c.rotation * center;
    return c;
}

inline CameraRig ringRig(const RigLayout& layout)
{
    CameraRig rig;
    rig.source = "synthetic ring";
    for (int i = 0; i < layout.cameras; ++i) {
        const double a = 2.0 * std::numbers::pi * i / layout.cameras;
        const Vec3 center(layout.radius * std::cos(a), layout.radius * std::sin(a), layout.height);
        char id[16];
        std::snprintf(id, sizeof id, "cam%02d", i);
        rig.cameras.push_back(lookAtCamera(id, center, layout.lookAt, layout));
    }
    return rig;
}

inline std::string frameId(int i)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "f%04d", i);
    return buf;
}

/// True when an exponential-map vector lies within tol of a multiple of pi
/// (k >= 1), where the parameterization is ambiguous or singular.
inline bool nearRotationSingularity(const Vec3& v, double tol = 1e-2)
{
    const double n = v.norm();
    if (n < std::numbers::pi - tol) return false;
    const double k = std::round(n / std::numbers::pi);
    return std::abs(n - k * std::numbers::pi) < tol;
}

template <class Rng>
PoseState samplePose(const Skeleton& skel, const SceneSpec& spec, Rng& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PoseState pose = PoseState::zero(skel);
    for (int b = 0; b < skel.numBodies(); ++b) {
        const int qi = skel.qIndex(b);
        const int dof = dofCount(skel.body(b).joint.kind);
        for (int attempt = 0;; ++attempt) {
            for (int d = 0; d < dof; ++d) {
                const int i = qi + d;
                double lo = 0.0;
                double hi = 0.0;
                if (skel.isRootCoordinate(i)) {
                    const bool translation = d < 3;
                    const double range = translation ? spec.rootTranslationRange : spec.rootRotationRange;
                    const double center = translation ? spec.rootCenter[d] : 0.0;
                    lo = center - range;
                    hi = center + range;
                } else {
                    lo = std::isfinite(skel.lowerLimit(i)) ? skel.lowerLimit(i) : -spec.unlimitedRange;
                    hi = std::isfinite(skel.upperLimit(i)) ? skel.upperLimit(i) : spec.unlimitedRange;
                    const double mid = 0.5 * (lo + hi);
                    const double half = 0.5 * (hi - lo) * spec.limitFraction;
                    lo = mid - half;
                    hi = mid + half;
                }
                pose.q[i] = lo + (hi - lo) * unit(rng);
            }
            const JointKind kind = skel.body(b).joint.kind;
            const bool rotational3 = kind == JointKind::Ball || kind == JointKind::FreeRoot;
            if (!rotational3 || attempt > 100) break;
            const Vec3 v = pose.q.segment<3>(kind == JointKind::Ball ? qi : qi + 3);
            if (!nearRotationSingularity(v)) break;
        }
    }
    for (Eigen::Index g = 0; g < pose.scales.size(); ++g)
        pose.scales[g] = 1.0 - spec.scaleJitter + 2.0 * spec.scaleJitter * unit(rng);
    return pose;
}

/// Deterministic synthetic scene: ground-truth poses, noisy 3D markers and
/// (optionally) multi-camera detections with dropout and an outlier camera.
inline Scene generateScene(const Skeleton& skel, const SceneSpec& spec, int frames)
{
    if (frames < 1) throw SceneSpecError("scene needs at least one frame");
    if (spec.markerNoiseMm < 0.0 || spec.pixelNoise < 0.0) throw SceneSpecError("noise levels must be >= 0");
    if (spec.dropout < 0.0 || spec.dropout > 1.0) throw SceneSpecError("dropout must lie in [0, 1]");
    for (const auto& [cam, p] : spec.cameraDropout)
        if (p < 0.0 || p > 1.0) throw SceneSpecError("dropout must lie in [0, 1]");
    if (spec.multiview && spec.rig.cameras < 1) throw SceneSpecError("multiview scene requested with zero cameras");
    if (!(spec.limitFraction > 0.0 && spec.limitFraction <= 1.0))
        throw SceneSpecError("limit fraction must lie in (0, 1]");

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Scene scene;
    if (spec.multiview) scene.rig = ringRig(spec.rig);

    const double sigma = spec.markerNoiseMm * 1e-3;
    for (int f = 0; f < frames; ++f) {
        const PoseState truth = samplePose(skel, spec, rng);
        const Eigen::Matrix3Xd pts = sitePositions(skel, truth);

        MarkerFrame mf;
        mf.id = frameId(f);
        for (int s = 0; s < skel.numSites(); ++s) {
            Vec3 p = pts.col(s);
            if (sigma > 0.0) p += sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
            mf.targets.emplace(skel.site(s).name, MarkerTarget{p, spec.confidence});
        }

        MultiviewFrame vf;
        vf.id = mf.id;
        if (spec.multiview) {
            for (int c = 0; c < static_cast<int>(scene.rig.cameras.size()); ++c) {
                const Camera& cam = scene.rig.cameras[static_cast<std::size_t>(c)];
                const auto dropIt = spec.cameraDropout.find(c);
                const double drop = dropIt != spec.cameraDropout.end() ? dropIt->second : spec.dropout;
                CameraDetections view;
                view.camera = cam.id;
                for (int s = 0; s < skel.numSites(); ++s) {
                    const Projection p = project(cam, pts.col(s));
                    Detection d;
                    d.pixel = p.valid ? p.pixel : Vec2::Zero();
                    if (spec.pixelNoise > 0.0) d.pixel += spec.pixelNoise * Vec2(gauss(rng), gauss(rng));
                    if (c == spec.outlier.camera) {
                        const double a = 2.0 * std::numbers::pi * unit(rng);
                        d.pixel += spec.outlier.displacementPx * Vec2(std::cos(a), std::sin(a));
                    }
                    const bool dropped = drop > 0.0 && unit(rng) < drop;
                    d.confidence = (p.valid && !dropped && insideImage(cam, d.pixel)) ? spec.confidence : 0.0;
                    view.detections.emplace(skel.site(s).name, d);
                }
                vf.views.push_back(std::move(view));
            }
        }

        scene.truth.push_back(truth);
        scene.markers.push_back(std::move(mf));
        if (spec.multiview) scene.detections.push_back(std::move(vf));
    }
    return scene;
}

}  // namespace kinefit::synth
