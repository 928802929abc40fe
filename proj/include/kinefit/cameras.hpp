#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/rotation.hpp"

namespace kinefit {

/// Ideal pinhole camera. Extrinsics map world to camera coordinates
/// (x_cam = R * x_world + t), right-handed with +z forward, +x right and
/// +y down in the image. Detections are assumed already undistorted.
struct Camera {
    std::string id;
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    int width = 0;
    int height = 0;

    void validate() const
    {
        if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera '" + id + "': focal lengths must be positive");
        if (!isRotation(rotation, 1e-9))
            throw ConfigError("camera '" + id + "': rotation is not a proper orthonormal matrix");
        if (!translation.allFinite()) throw ConfigError("camera '" + id + "': translation is not finite");
        if (width <= 0 || height <= 0) throw ConfigError("camera '" + id + "': image size must be positive");
    }

    Vec3 center() const { return -rotation.transpose() * translation; }

    friend bool operator==(const Camera& a, const Camera& b)
    {
        return a.id == b.id && a.fx == b.fx && a.fy == b.fy && a.cx == b.cx && a.cy == b.cy &&
               a.rotation == b.rotation && a.translation == b.translation && a.width == b.width &&
               a.height == b.height;
    }
};

struct CameraRig {
    std::vector<Camera> cameras;
    std::string units = "m";
    std::string source;

    void validate() const
    {
        if (cameras.empty()) throw ConfigError("camera rig is empty");
        std::unordered_set<std::string> ids;
        for (const auto& c : cameras) {
            c.validate();
            if (!ids.insert(c.id).second) throw ConfigError("duplicate camera id '" + c.id + "'");
        }
    }

    int index(std::string_view id) const
    {
        for (std::size_t i = 0; i < cameras.size(); ++i)
            if (cameras[i].id == id) return static_cast<int>(i);
        throw LookupError("unknown camera '" + std::string(id) + "'");
    }

    const Camera& camera(std::string_view id) const { return cameras[static_cast<std::size_t>(index(id))]; }

    friend bool operator==(const CameraRig&, const CameraRig&) = default;
};

//------------------------------------------------------------------------------
// Projection
//------------------------------------------------------------------------------

struct Projection {
    Vec2 pixel = Vec2::Zero();
    double depth = 0.0;
    bool valid = false;  ///< false when the point is not in front of the camera
};

inline Projection project(const Camera& cam, const Vec3& point)
{
    const Vec3 pc = cam.rotation * point + cam.translation;
    Projection p;
    p.depth = pc.z();
    p.valid = pc.z() > 0.0;
    if (p.valid) p.pixel = {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy};
    return p;
}

/// d(pixel)/d(world point); only meaningful for valid projections.
inline Eigen::Matrix<double, 2, 3> projectionJacobian(const Camera& cam, const Vec3& point)
{
    const Vec3 pc = cam.rotation * point + cam.translation;
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> d;
    d << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz,
         0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
    return d * cam.rotation;
}

inline bool insideImage(const Camera& cam, const Vec2& pixel)
{
    return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() < static_cast<double>(cam.width) &&
           pixel.y() < static_cast<double>(cam.height);
}

//------------------------------------------------------------------------------
// Robust triangulation
//------------------------------------------------------------------------------

struct ViewObservation {
    int camera = 0;  ///< index into the rig
    Vec2 pixel = Vec2::Zero();
    double confidence = 0.0;
};

struct TriangulationResult {
    Vec3 point = Vec3::Zero();
    /// Final per-observation weights: confidence * exp(-e^2 / (2 sigma^2)).
    std::vector<double> weights;
    int iterations = 0;
};

inline constexpr double kDefaultKernelWidthPx = 10.0;

/// Homogeneous DLT in normalized image coordinates, rows scaled by sqrt(weight).
inline Vec3 weightedDlt(const CameraRig& rig, std::span<const ViewObservation> obs,
                        std::span<const double> weights)
{
    Eigen::MatrixXd a(2 * static_cast<Eigen::Index>(obs.size()), 4);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const Camera& cam = rig.cameras.at(static_cast<std::size_t>(obs[i].camera));
        const double sw = std::sqrt(weights[i]);
        const double xn = (obs[i].pixel.x() - cam.cx) / cam.fx;
        const double yn = (obs[i].pixel.y() - cam.cy) / cam.fy;
        Eigen::Matrix<double, 3, 4> p;
        p.leftCols<3>() = cam.rotation;
        p.col(3) = cam.translation;
        const auto row = static_cast<Eigen::Index>(2 * i);
        a.row(row) = sw * (xn * p.row(2) - p.row(0));
        a.row(row + 1) = sw * (yn * p.row(2) - p.row(1));
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::Vector4d h = svd.matrixV().col(3);
    if (std::abs(h[3]) < 1e-12 * h.head<3>().norm())
        throw DegenerateConsensusError("triangulated point is at infinity");
    return h.head<3>() / h[3];
}

/// Iteratively reweighted triangulation. Cameras whose reprojection error is
/// inconsistent with the consensus point are downweighted by a Gaussian
/// kernel of width kernelWidth pixels.
inline TriangulationResult robustTriangulate(const CameraRig& rig, std::span<const ViewObservation> obs,
                                             double kernelWidth = kDefaultKernelWidthPx,
                                             int maxIterations = 10, double tolerance = 1e-6)
{
    if (!(kernelWidth > 0.0)) throw ConfigError("kernel width must be positive");
    int usable = 0;
    for (const auto& o : obs) {
        if (o.camera < 0 || o.camera >= static_cast<int>(rig.cameras.size()))
            throw LookupError("observation references camera index " + std::to_string(o.camera));
        if (o.confidence > 0.0) ++usable;
    }
    if (usable < 2)
        throw InsufficientViewsError("triangulation needs at least 2 cameras with positive confidence, got " +
                                     std::to_string(usable));

    const double inv2s2 = 1.0 / (2.0 * kernelWidth * kernelWidth);
    auto reweight = [&](const Vec3& x) {
        std::vector<double> w(obs.size(), 0.0);
        double maxW = 0.0;
        for (std::size_t i = 0; i < obs.size(); ++i) {
            if (!(obs[i].confidence > 0.0)) continue;
            const Projection p = project(rig.cameras[static_cast<std::size_t>(obs[i].camera)], x);
            if (!p.valid) continue;
            const double e2 = (p.pixel - obs[i].pixel).squaredNorm();
            w[i] = obs[i].confidence * std::exp(-e2 * inv2s2);
            maxW = std::max(maxW, w[i]);
        }
        if (maxW < 1e-6) throw DegenerateConsensusError("all camera weights collapsed below 1e-6");
        return w;
    };

    std::vector<double> conf(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) conf[i] = std::max(0.0, obs[i].confidence);

    TriangulationResult r;
    r.point = weightedDlt(rig, obs, conf);
    for (int it = 0; it < maxIterations; ++it) {
        const auto w = reweight(r.point);
        const Vec3 next = weightedDlt(rig, obs, w);
        const double moved = (next - r.point).norm();
        r.point = next;
        r.iterations = it + 1;
        if (moved < tolerance) break;
    }
    r.weights = reweight(r.point);
    return r;
}

//------------------------------------------------------------------------------
// Detection preprocessing
//------------------------------------------------------------------------------

struct DetectionFilterStats {
    int belowCutoff = 0;
    int outsideImage = 0;
};

/// Zeroes confidences below the cutoff and detections outside the image.
inline MultiviewFrame filterDetections(const CameraRig& rig, const MultiviewFrame& frame, double cutoff,
                                       DetectionFilterStats* stats = nullptr)
{
    MultiviewFrame out = frame;
    for (auto& view : out.views) {
        const Camera& cam = rig.camera(view.camera);
        for (auto& [site, d] : view.detections) {
            if (d.confidence <= 0.0) continue;
            if (d.confidence < cutoff) {
                d.confidence = 0.0;
                if (stats) ++stats->belowCutoff;
            } else if (!insideImage(cam, d.pixel)) {
                d.confidence = 0.0;
                if (stats) ++stats->outsideImage;
            }
        }
    }
    return out;
}

struct ConsensusResult {
    /// Frame with every confidence replaced by its consensus weight.
    MultiviewFrame weighted;
    /// Triangulated point per site that had at least two usable views.
    std::map<std::string, Vec3> points;
    int triangulated = 0;
    /// Sites left at their input confidences (too few views or degenerate).
    int skipped = 0;
};

/// Per-keypoint-per-camera downweighting from robust triangulation.
inline ConsensusResult applyConsensusWeights(const CameraRig& rig, const MultiviewFrame& frame,
                                             double kernelWidth = kDefaultKernelWidthPx)
{
    ConsensusResult out;
    out.weighted = frame;

    std::map<std::string, std::vector<std::pair<std::size_t, ViewObservation>>> bySite;
    for (std::size_t v = 0; v < frame.views.size(); ++v) {
        const int cam = rig.index(frame.views[v].camera);
        for (const auto& [site, d] : frame.views[v].detections)
            bySite[site].push_back({v, ViewObservation{cam, d.pixel, d.confidence}});
    }

    for (const auto& [site, entries] : bySite) {
        std::vector<ViewObservation> obs;
        obs.reserve(entries.size());
        for (const auto& e : entries) obs.push_back(e.second);
        try {
            const auto tri = robustTriangulate(rig, obs, kernelWidth);
            out.points.emplace(site, tri.point);
            for (std::size_t i = 0; i < entries.size(); ++i)
                out.weighted.views[entries[i].first].detections.at(site).confidence = tri.weights[i];
            ++out.triangulated;
        } catch (const InsufficientViewsError&) {
            ++out.skipped;
        } catch (const DegenerateConsensusError&) {
            ++out.skipped;
        }
    }
    return out;
}

//------------------------------------------------------------------------------
// Geometric consistency
//------------------------------------------------------------------------------

/// Fraction of confidence-positive (camera, site) pairs whose reprojection
/// error is strictly below the threshold. Invalid projections fail.
inline double gcAtThreshold(const CameraRig& rig, const std::map<std::string, Vec3>& worldPoints,
                            const MultiviewFrame& frame, double thresholdPx = 10.0)
{
    if (!(thresholdPx > 0.0)) throw EvaluationError("GC threshold must be positive");
    long total = 0;
    long good = 0;
    for (const auto& view : frame.views) {
        const Camera& cam = rig.camera(view.camera);
        for (const auto& [site, d] : view.detections) {
            if (!(d.confidence > 0.0)) continue;
            auto it = worldPoints.find(site);
            if (it == worldPoints.end()) throw LookupError("no reconstructed point for site '" + site + "'");
            ++total;
            const Projection p = project(cam, it->second);
            if (p.valid && (p.pixel - d.pixel).norm() < thresholdPx) ++good;
        }
    }
    if (total == 0) throw EvaluationError("GC is undefined: no confidence-positive detections");
    return static_cast<double>(good) / static_cast<double>(total);
}

}  // namespace kinefit
