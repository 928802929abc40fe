#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "kinefit/cameras.hpp"
#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit {

/// Weighted residual rows and their Jacobian over the active parameters.
/// Rows already carry sqrt(weight), so values.squaredNorm() is the loss.
struct ResidualBlock {
    Eigen::VectorXd values;
    Eigen::MatrixXd jacobian;  ///< empty when the Jacobian was not requested
    Eigen::VectorXd weights;   ///< raw weight of each row
    /// Rows zero-weighted because the point was behind the camera.
    std::vector<Eigen::Index> invalidRows;

    Eigen::Index rows() const { return values.size(); }
    double loss() const { return values.squaredNorm(); }
    bool hasJacobian() const { return jacobian.rows() == values.size() && jacobian.cols() > 0; }

    void append(const ResidualBlock& other)
    {
        const Eigen::Index n = rows();
        const Eigen::Index m = other.rows();
        if (m == 0) return;
        values.conservativeResize(n + m);
        values.tail(m) = other.values;
        weights.conservativeResize(n + m);
        weights.tail(m) = other.weights;
        if (other.jacobian.size() > 0 || jacobian.size() > 0) {
            const Eigen::Index cols = std::max(jacobian.cols(), other.jacobian.cols());
            Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n + m, cols);
            if (jacobian.size() > 0) j.topRows(n) = jacobian;
            if (other.jacobian.size() > 0) j.bottomRows(m) = other.jacobian;
            jacobian = std::move(j);
        }
        for (auto r : other.invalidRows) invalidRows.push_back(r + n);
    }
};

namespace detail {

inline ResidualBlock allocate(Eigen::Index rows, int cols, bool wantJacobian)
{
    ResidualBlock b;
    b.values = Eigen::VectorXd::Zero(rows);
    b.weights = Eigen::VectorXd::Zero(rows);
    if (wantJacobian) b.jacobian = Eigen::MatrixXd::Zero(rows, cols);
    return b;
}

}  // namespace detail

/// sqrt(weight) * delta rows for every active offset component.
inline ResidualBlock offsetRegularizer(const Skeleton& skel, const PoseState& pose, const ParamLayout& layout,
                                       double regWeight, bool wantJacobian = true)
{
    if (!(regWeight >= 0.0)) throw ConfigError("offset regularization weight must be non-negative");
    int active = 0;
    for (int s = 0; s < skel.numSites(); ++s)
        if (layout.offsetColumn(s) >= 0) ++active;
    ResidualBlock b = detail::allocate(3 * active, layout.size(), wantJacobian);
    const double sw = std::sqrt(regWeight);
    Eigen::Index row = 0;
    for (int s = 0; s < skel.numSites(); ++s) {
        const int col = layout.offsetColumn(s);
        if (col < 0) continue;
        b.values.segment<3>(row) = sw * pose.markerOffsets.col(s);
        b.weights.segment<3>(row).setConstant(regWeight);
        if (wantJacobian) b.jacobian.block<3, 3>(row, col) = sw * Mat3::Identity();
        row += 3;
    }
    return b;
}

/// Rows sqrt(k/2) * violation for active coordinates outside their limits, so
/// that their squared norm equals limitPenalty(...).loss on those coordinates.
inline ResidualBlock limitPenaltyResiduals(const Skeleton& skel, const PoseState& pose, const ParamLayout& layout,
                                           double stiffness, bool wantJacobian = true)
{
    const LimitPenalty pen = limitPenalty(skel, pose, stiffness);
    std::vector<int> violated;
    for (int i = 0; i < skel.nq(); ++i)
        if (layout.qColumn(i) >= 0 && pen.gradient[i] != 0.0) violated.push_back(i);
    ResidualBlock b = detail::allocate(static_cast<Eigen::Index>(violated.size()), layout.size(), wantJacobian);
    const double sw = std::sqrt(0.5 * stiffness);
    for (std::size_t r = 0; r < violated.size(); ++r) {
        const int i = violated[r];
        const auto row = static_cast<Eigen::Index>(r);
        b.values[row] = sw * pen.gradient[i] / stiffness;
        b.weights[row] = 0.5 * stiffness;
        if (wantJacobian) b.jacobian(row, layout.qColumn(i)) = sw;
    }
    return b;
}

/// Monocular marker objective: sqrt(w_i) * (p_i^model - p_i^target) rows
/// followed by the offset regularizer over the active offsets.
inline ResidualBlock markerResiduals(const Skeleton& skel, const PoseState& pose, const MarkerFrame& frame,
                                     const ParamMask& activeMask, double regWeight, bool wantJacobian = true)
{
    checkPose(skel, pose);
    validateFrame(frame);
    const ParamLayout layout(skel, activeMask);

    std::vector<int> sites;
    sites.reserve(frame.targets.size());
    for (const auto& [name, target] : frame.targets) sites.push_back(skel.siteIndex(name));

    const auto frames = bodyFrames(skel, pose);
    ResidualBlock b = detail::allocate(3 * static_cast<Eigen::Index>(sites.size()), layout.size(), wantJacobian);
    Eigen::Matrix<double, 3, Eigen::Dynamic> jac(3, layout.size());
    Eigen::Index row = 0;
    std::size_t k = 0;
    for (const auto& [name, target] : frame.targets) {
        const int s = sites[k++];
        const double w = target.confidence;
        b.weights.segment<3>(row).setConstant(w);
        if (w > 0.0) {
            const double sw = std::sqrt(w);
            const Vec3 p = sitePosition(skel, pose, frames, s);
            b.values.segment<3>(row) = sw * (p - target.position);
            if (wantJacobian && layout.size() > 0) {
                jac.setZero();
                siteJacobian(skel, pose, frames, layout, s, p, jac);
                b.jacobian.middleRows<3>(row) = sw * jac;
            }
        }
        row += 3;
    }
    b.append(offsetRegularizer(skel, pose, layout, regWeight, wantJacobian));
    return b;
}

/// Multiview objective: sqrt(w_ck) * (project_c(site_k) - y_ck) rows per
/// pixel axis. Sites behind a camera get zero weight and are flagged.
inline ResidualBlock reprojectionResiduals(const Skeleton& skel, const PoseState& pose,
                                           const MultiviewFrame& frame, const CameraRig& rig,
                                           const ParamMask& activeMask, bool wantJacobian = true)
{
    checkPose(skel, pose);
    validateFrame(frame);
    const ParamLayout layout(skel, activeMask);

    Eigen::Index count = 0;
    std::vector<const Camera*> cams;
    for (const auto& view : frame.views) {
        cams.push_back(&rig.camera(view.camera));
        for (const auto& [name, d] : view.detections) {
            skel.siteIndex(name);
            ++count;
        }
    }

    const auto frames = bodyFrames(skel, pose);
    std::vector<Vec3> positions(static_cast<std::size_t>(skel.numSites()));
    std::vector<bool> computed(static_cast<std::size_t>(skel.numSites()), false);
    std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> siteJacs(static_cast<std::size_t>(skel.numSites()));

    ResidualBlock b = detail::allocate(2 * count, layout.size(), wantJacobian);
    Eigen::Index row = 0;
    for (std::size_t v = 0; v < frame.views.size(); ++v) {
        const Camera& cam = *cams[v];
        for (const auto& [name, d] : frame.views[v].detections) {
            const int s = skel.siteIndex(name);
            const auto si = static_cast<std::size_t>(s);
            if (!computed[si]) {
                positions[si] = sitePosition(skel, pose, frames, s);
                if (wantJacobian && layout.size() > 0) {
                    siteJacs[si] = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, layout.size());
                    siteJacobian(skel, pose, frames, layout, s, positions[si], siteJacs[si]);
                }
                computed[si] = true;
            }
            const double w = d.confidence;
            if (w > 0.0) {
                const Projection p = project(cam, positions[si]);
                if (!p.valid) {
                    b.invalidRows.push_back(row);
                    b.invalidRows.push_back(row + 1);
                } else {
                    const double sw = std::sqrt(w);
                    b.weights.segment<2>(row).setConstant(w);
                    b.values.segment<2>(row) = sw * (p.pixel - d.pixel);
                    if (wantJacobian && layout.size() > 0)
                        b.jacobian.middleRows<2>(row) = sw * projectionJacobian(cam, positions[si]) * siteJacs[si];
                }
            }
            row += 2;
        }
    }
    return b;
}

}  // namespace kinefit
