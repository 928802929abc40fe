#pragma once

// Test-only oracles. Nothing here calls the analytic Jacobian or residual
// assembly code it is used to check.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kinefit/cameras.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/fixtures.hpp"
#include "kinefit/mapping.hpp"
#include "kinefit/skeleton.hpp"
#include "kinefit/synth.hpp"

namespace kinefit::oracle {

/// Visits every active parameter of a mask in layout order, passing a
/// function that perturbs a pose copy by h along that parameter.
template <class F>
void forEachActiveParam(const Skeleton& skel, const ParamMask& mask, F&& f)
{
    for (int i = 0; i < skel.nq(); ++i)
        if (mask.q[static_cast<std::size_t>(i)]) f([i](PoseState& p, double h) { p.q[i] += h; });
    for (int g = 0; g < skel.numScales(); ++g)
        if (mask.scales[static_cast<std::size_t>(g)]) f([g](PoseState& p, double h) { p.scales[g] += h; });
    for (int s = 0; s < skel.numSites(); ++s) {
        if (!mask.offsets[static_cast<std::size_t>(s)]) continue;
        for (int a = 0; a < 3; ++a) f([s, a](PoseState& p, double h) { p.markerOffsets(a, s) += h; });
    }
}

/// Central-difference Jacobian of stacked site positions through
/// forwardKinematics only.
inline Eigen::MatrixXd fdSiteJacobian(const Skeleton& skel, const PoseState& pose,
                                      const std::vector<std::string>& sites, const ParamMask& mask,
                                      double h = 1e-6)
{
    std::vector<Eigen::VectorXd> cols;
    forEachActiveParam(skel, mask, [&](auto perturb) {
        PoseState plus = pose;
        PoseState minus = pose;
        perturb(plus, h);
        perturb(minus, -h);
        const auto fp = forwardKinematics(skel, plus);
        const auto fm = forwardKinematics(skel, minus);
        Eigen::VectorXd col(3 * static_cast<Eigen::Index>(sites.size()));
        for (std::size_t k = 0; k < sites.size(); ++k)
            col.segment<3>(3 * static_cast<Eigen::Index>(k)) = (fp.at(sites[k]) - fm.at(sites[k])) / (2.0 * h);
        cols.push_back(col);
    });
    Eigen::MatrixXd j(3 * static_cast<Eigen::Index>(sites.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) j.col(static_cast<Eigen::Index>(c)) = cols[c];
    return j;
}

/// Per-entry relative error; entries below `floor` in magnitude are compared
/// against the floor instead of their own size.
inline double maxRelativeError(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-5)
{
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double den = std::max({std::abs(a(i, j)), std::abs(b(i, j)), floor});
            worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / den);
        }
    return worst;
}

/// Naive marker objective: sum_i w_i |p_model - p_target|^2 + reg * |delta|^2
/// over sites whose offsets are listed as active.
inline double naiveMarkerLoss(const Skeleton& skel, const PoseState& pose, const MarkerFrame& frame,
                              const std::vector<bool>& activeOffsets, double reg)
{
    const auto fk = forwardKinematics(skel, pose);
    double loss = 0.0;
    for (const auto& [name, t] : frame.targets) {
        const Vec3 d = fk.at(name) - t.position;
        loss += t.confidence * (d.x() * d.x() + d.y() * d.y() + d.z() * d.z());
    }
    for (int s = 0; s < skel.numSites(); ++s) {
        if (!activeOffsets[static_cast<std::size_t>(s)]) continue;
        for (int a = 0; a < 3; ++a) loss += reg * pose.markerOffsets(a, s) * pose.markerOffsets(a, s);
    }
    return loss;
}

/// Naive pinhole projection written out component-wise.
inline Vec2 naiveProject(const Camera& c, const Vec3& x)
{
    double pc[3];
    for (int r = 0; r < 3; ++r) {
        pc[r] = c.translation[r];
        for (int k = 0; k < 3; ++k) pc[r] += c.rotation(r, k) * x[k];
    }
    return {c.fx * pc[0] / pc[2] + c.cx, c.fy * pc[1] / pc[2] + c.cy};
}

inline double naiveReprojectionLoss(const Skeleton& skel, const PoseState& pose, const MultiviewFrame& frame,
                                    const CameraRig& rig)
{
    const auto fk = forwardKinematics(skel, pose);
    double loss = 0.0;
    for (const auto& view : frame.views) {
        const Camera* cam = nullptr;
        for (const auto& c : rig.cameras)
            if (c.id == view.camera) cam = &c;
        for (const auto& [name, d] : view.detections) {
            const Vec2 e = naiveProject(*cam, fk.at(name)) - d.pixel;
            loss += d.confidence * (e.x() * e.x() + e.y() * e.y());
        }
    }
    return loss;
}

/// Rotation matrix about a unit axis built from the explicit Rodrigues
/// matrix entries.
inline Mat3 axisAngleMatrix(const Vec3& u, double angle)
{
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double t = 1.0 - c;
    Mat3 r;
    r << t * u.x() * u.x() + c, t * u.x() * u.y() - s * u.z(), t * u.x() * u.z() + s * u.y(),
        t * u.x() * u.y() + s * u.z(), t * u.y() * u.y() + c, t * u.y() * u.z() - s * u.x(),
        t * u.x() * u.z() - s * u.y(), t * u.y() * u.z() + s * u.x(), t * u.z() * u.z() + c;
    return r;
}

template <class Rng>
Mat3 randomRotation(Rng& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline CorrespondenceTable twoHandCorrespondences(const Skeleton& skel)
{
    return fixtures::twoHandCorrespondences(skel);
}

using fixtures::DisplacedSiteFixture;

inline DisplacedSiteFixture displacedSiteFixture(int frames = 8, std::uint64_t seed = 42)
{
    return fixtures::displacedSite(frames, seed);
}

}  // namespace kinefit::oracle
