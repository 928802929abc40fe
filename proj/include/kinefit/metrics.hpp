#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "kinefit/errors.hpp"
#include "kinefit/rotation.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit {

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

//------------------------------------------------------------------------------
// Procrustes
//------------------------------------------------------------------------------

struct ProcrustesResult {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    Eigen::Matrix3Xd aligned;
    /// Sum of squared distances between aligned source and target.
    double residual = 0.0;
};

/// Similarity transform minimizing sum |s R x_i + t - y_i|^2 with det R = +1.
inline ProcrustesResult procrustesAlign(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target)
{
    const Eigen::Index n = source.cols();
    if (n != target.cols()) throw AlignmentError("point sets differ in size");
    if (n < 3) throw AlignmentError("alignment needs at least 3 points, got " + std::to_string(n));

    const Vec3 muX = source.rowwise().mean();
    const Vec3 muY = target.rowwise().mean();
    const Eigen::Matrix3Xd x = source.colwise() - muX;
    const Eigen::Matrix3Xd y = target.colwise() - muY;

    // Collinear or coincident sets leave the rotation about the line undetermined.
    const Eigen::JacobiSVD<Mat3> spreadY(y * y.transpose());
    const Eigen::JacobiSVD<Mat3> spreadX(x * x.transpose());
    const Vec3 sy = spreadY.singularValues();
    const Vec3 sx = spreadX.singularValues();
    if (!(sy[1] > 1e-12 * sy[0]) || !(sy[0] > 0.0)) throw AlignmentError("target points are collinear or coincident");
    if (!(sx[1] > 1e-12 * sx[0]) || !(sx[0] > 0.0)) throw AlignmentError("source points are collinear or coincident");

    const Mat3 cov = y * x.transpose() / static_cast<double>(n);
    const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

    ProcrustesResult out;
    out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
    const double varX = x.squaredNorm() / static_cast<double>(n);
    out.scale = (svd.singularValues().asDiagonal() * d).trace() / varX;
    out.translation = muY - out.scale * out.rotation * muX;
    out.aligned = (out.scale * out.rotation * source).colwise() + out.translation;
    out.residual = (out.aligned - target).squaredNorm();
    return out;
}

//------------------------------------------------------------------------------
// PA-MPJPE
//------------------------------------------------------------------------------

struct AlignmentRegion {
    std::string name;
    std::vector<std::string> siteNames;
    /// Sites whose error is reported; empty means the alignment set.
    std::vector<std::string> reportSites;

    const std::vector<std::string>& reported() const { return reportSites.empty() ? siteNames : reportSites; }

    friend bool operator==(const AlignmentRegion&, const AlignmentRegion&) = default;
};

struct PaMpjpeResult {
    double meanMm = 0.0;
    std::map<std::string, double> perSiteMm;
};

namespace detail {

inline Eigen::Matrix3Xd gather(const std::map<std::string, Vec3>& pts, const std::vector<std::string>& names)
{
    Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts.at(names[i]);
    return m;
}

inline void requireSites(const std::map<std::string, Vec3>& pts, const std::vector<std::string>& names,
                         const char* which)
{
    std::string missing;
    for (const auto& n : names)
        if (!pts.contains(n)) missing += (missing.empty() ? "" : ", ") + n;
    if (!missing.empty()) throw EvaluationError(std::string("missing sites in ") + which + ": " + missing);
}

}  // namespace detail

/// Aligns the prediction to the reference on the region's alignment set and
/// reports mean Euclidean error over its report set, in millimeters.
inline PaMpjpeResult paMpjpe(const std::map<std::string, Vec3>& pred, const std::map<std::string, Vec3>& ref,
                             const AlignmentRegion& region)
{
    const auto& report = region.reported();
    if (report.empty()) throw EvaluationError("region '" + region.name + "' reports no sites");
    detail::requireSites(pred, region.siteNames, "prediction");
    detail::requireSites(ref, region.siteNames, "reference");
    detail::requireSites(pred, report, "prediction");
    detail::requireSites(ref, report, "reference");

    const auto fit = procrustesAlign(detail::gather(pred, region.siteNames), detail::gather(ref, region.siteNames));
    PaMpjpeResult out;
    double sum = 0.0;
    for (const auto& site : report) {
        const Vec3 p = fit.scale * fit.rotation * pred.at(site) + fit.translation;
        const double e = (p - ref.at(site)).norm() * 1000.0;
        out.perSiteMm[site] = e;
        sum += e;
    }
    out.meanMm = sum / static_cast<double>(report.size());
    return out;
}

//------------------------------------------------------------------------------
// Joint angles
//------------------------------------------------------------------------------

/// Ball joints: per exponential-map component (default) or one geodesic
/// angle per joint reported under the joint stem.
enum class BallAngleMetric { Component, Geodesic };

namespace detail {

/// Rotational non-root coordinates when the subset is empty; otherwise the
/// subset, each entry checked to be a rotational coordinate.
inline std::vector<int> angleCoordinates(const Skeleton& skel, const std::vector<std::string>& subset)
{
    std::vector<int> out;
    if (subset.empty()) {
        for (int i = 0; i < skel.nq(); ++i)
            if (!skel.isRootCoordinate(i) && skel.isRotational(i)) out.push_back(i);
        return out;
    }
    for (const auto& name : subset) {
        const int i = skel.coordinateIndex(name);
        if (!skel.isRotational(i)) throw EvaluationError("coordinate '" + name + "' is not an angle");
        out.push_back(i);
    }
    return out;
}

inline void requireSameSkeleton(const Skeleton& skel, const PoseState& pose)
{
    if (pose.q.size() != skel.nq() || pose.scales.size() != skel.numScales() ||
        pose.markerOffsets.cols() != skel.numSites())
        throw EvaluationError("pose does not belong to the given skeleton");
}

/// Stem of a joint's coordinate names: the coordinate name up to its last ':'.
inline std::string coordinateStem(const std::string& name)
{
    const auto colon = name.rfind(':');
    return colon == std::string::npos ? name : name.substr(0, colon);
}

}  // namespace detail

/// Absolute angle difference per coordinate of one pose pair, degrees.
inline std::map<std::string, double> jointAngleErrors(const Skeleton& skel, const PoseState& pred,
                                                      const PoseState& ref,
                                                      const std::vector<std::string>& subset = {},
                                                      BallAngleMetric metric = BallAngleMetric::Component)
{
    detail::requireSameSkeleton(skel, pred);
    detail::requireSameSkeleton(skel, ref);
    std::map<std::string, double> out;
    for (const int i : detail::angleCoordinates(skel, subset)) {
        const int b = skel.coordinateBody(i);
        const JointKind kind = skel.body(b).joint.kind;
        const bool threeDof = kind == JointKind::Ball || kind == JointKind::FreeRoot;
        if (metric == BallAngleMetric::Geodesic && threeDof) {
            const int first = skel.qIndex(b) + (kind == JointKind::FreeRoot ? 3 : 0);
            out[detail::coordinateStem(skel.coordinateNames()[static_cast<std::size_t>(i)])] =
                geodesicAngle(pred.q.segment<3>(first), ref.q.segment<3>(first)) * kRadToDeg;
            continue;
        }
        out[skel.coordinateNames()[static_cast<std::size_t>(i)]] = std::abs(pred.q[i] - ref.q[i]) * kRadToDeg;
    }
    return out;
}

/// Per-joint mean absolute angle difference over paired pose batches, degrees.
inline std::map<std::string, double> jointAngleMAE(const Skeleton& skel, std::span<const PoseState> pred,
                                                   std::span<const PoseState> ref,
                                                   const std::vector<std::string>& subset = {},
                                                   BallAngleMetric metric = BallAngleMetric::Component)
{
    if (pred.size() != ref.size()) throw EvaluationError("prediction and reference batches differ in length");
    if (pred.empty()) throw EvaluationError("joint angle error over an empty batch");
    std::map<std::string, double> sum;
    for (std::size_t k = 0; k < pred.size(); ++k)
        for (const auto& [name, e] : jointAngleErrors(skel, pred[k], ref[k], subset, metric)) sum[name] += e;
    for (auto& [name, s] : sum) s /= static_cast<double>(pred.size());
    return sum;
}

/// Population standard deviation of each angle across views, degrees.
inline std::map<std::string, double> crossViewConsistency(const Skeleton& skel, std::span<const PoseState> views,
                                                          const std::vector<std::string>& subset = {})
{
    if (views.size() < 2) throw EvaluationError("cross-view consistency needs at least 2 views");
    for (const auto& v : views) detail::requireSameSkeleton(skel, v);
    std::map<std::string, double> out;
    const double n = static_cast<double>(views.size());
    for (const int i : detail::angleCoordinates(skel, subset)) {
        double mean = 0.0;
        for (const auto& v : views) mean += v.q[i];
        mean /= n;
        double var = 0.0;
        for (const auto& v : views) var += (v.q[i] - mean) * (v.q[i] - mean);
        out[skel.coordinateNames()[static_cast<std::size_t>(i)]] = std::sqrt(var / n) * kRadToDeg;
    }
    return out;
}

//------------------------------------------------------------------------------
// Aggregates
//------------------------------------------------------------------------------

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  ///< population
    std::size_t count = 0;
};

inline Aggregate aggregate(std::span<const double> values)
{
    Aggregate a;
    a.count = values.size();
    if (values.empty()) return a;
    for (const double v : values) a.mean += v;
    a.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (const double v : values) var += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(var / static_cast<double>(values.size()));
    return a;
}

}  // namespace kinefit
