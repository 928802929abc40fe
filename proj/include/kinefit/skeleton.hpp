#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kinefit/errors.hpp"
#include "kinefit/rotation.hpp"

namespace kinefit {

//------------------------------------------------------------------------------
// Kinematic tree definition
//------------------------------------------------------------------------------

/// Joint families. Rotational coordinates of FreeRoot and Ball joints are
/// exponential-map vectors expressed in the parent frame.
enum class JointKind {
    FreeRoot,  ///< tx, ty, tz, rx, ry, rz
    Ball,      ///< rx, ry, rz
    Hinge,     ///< angle about a fixed unit axis
    Slide      ///< displacement along a fixed unit axis
};

constexpr int dofCount(JointKind kind)
{
    switch (kind) {
    case JointKind::FreeRoot: return 6;
    case JointKind::Ball: return 3;
    case JointKind::Hinge: return 1;
    case JointKind::Slide: return 1;
    }
    return 0;
}

inline constexpr double kUnlimited = std::numeric_limits<double>::infinity();

struct Joint {
    JointKind kind = JointKind::Hinge;
    /// Coordinate name stem; the owning body's name when empty.
    std::string name;
    /// Hinge and Slide only.
    Vec3 axis = Vec3::UnitZ();
    /// Per-DOF bounds. Empty vectors mean unlimited; infinite entries are
    /// unlimited on that side.
    std::vector<double> lower;
    std::vector<double> upper;

    friend bool operator==(const Joint& a, const Joint& b)
    {
        return a.kind == b.kind && a.name == b.name && a.axis == b.axis &&
               a.lower == b.lower && a.upper == b.upper;
    }
};

struct Body {
    std::string name;
    /// Index of the parent body, -1 for the root.
    int parent = -1;
    /// Parent-to-joint translation in the parent frame, meters.
    Vec3 translation = Vec3::Zero();
    Joint joint;

    friend bool operator==(const Body& a, const Body& b)
    {
        return a.name == b.name && a.parent == b.parent &&
               a.translation == b.translation && a.joint == b.joint;
    }
};

/// Named marker point rigidly attached to a body.
struct Site {
    std::string name;
    int body = 0;
    Vec3 offset = Vec3::Zero();

    friend bool operator==(const Site& a, const Site& b)
    {
        return a.name == b.name && a.body == b.body && a.offset == b.offset;
    }
};

/// Isotropic segment scale shared by a set of bodies. The factor multiplies
/// each member body's parent translation and the local offsets of its sites.
struct ScaleGroup {
    std::string name;
    std::vector<int> bodies;

    friend bool operator==(const ScaleGroup&, const ScaleGroup&) = default;
};

/// Immutable articulated tree. Bodies are stored parent-before-child and the
/// root carries the single FreeRoot joint.
class Skeleton {
public:
    Skeleton(std::vector<Body> bodies, std::vector<Site> sites,
             std::vector<ScaleGroup> scaleGroups = {},
             std::vector<std::string> coreSites = {})
        : bodies_(std::move(bodies)),
          sites_(std::move(sites)),
          groups_(std::move(scaleGroups)),
          coreSites_(std::move(coreSites))
    {
        validateAndIndex();
    }

    int numBodies() const { return static_cast<int>(bodies_.size()); }
    int numSites() const { return static_cast<int>(sites_.size()); }
    int numScales() const { return static_cast<int>(groups_.size()); }
    int nq() const { return nq_; }

    const std::vector<Body>& bodies() const { return bodies_; }
    const Body& body(int i) const { return bodies_.at(static_cast<std::size_t>(i)); }
    const std::vector<Site>& sites() const { return sites_; }
    const Site& site(int i) const { return sites_.at(static_cast<std::size_t>(i)); }
    const std::vector<ScaleGroup>& scaleGroups() const { return groups_; }
    /// Sites used for root-only positioning. May be empty.
    const std::vector<std::string>& coreSites() const { return coreSites_; }

    /// First generalized coordinate of the body's joint.
    int qIndex(int body) const { return qIndex_[static_cast<std::size_t>(body)]; }
    /// Scale group owning the body, or -1.
    int scaleGroupOf(int body) const { return groupOf_[static_cast<std::size_t>(body)]; }

    std::optional<int> findSite(std::string_view name) const
    {
        auto it = siteIndex_.find(std::string(name));
        if (it == siteIndex_.end()) return std::nullopt;
        return it->second;
    }

    int siteIndex(std::string_view name) const
    {
        if (auto i = findSite(name)) return *i;
        throw LookupError("unknown site '" + std::string(name) + "'");
    }

    int bodyIndex(std::string_view name) const
    {
        for (int i = 0; i < numBodies(); ++i)
            if (bodies_[static_cast<std::size_t>(i)].name == name) return i;
        throw LookupError("unknown body '" + std::string(name) + "'");
    }

    int scaleGroupIndex(std::string_view name) const
    {
        for (int i = 0; i < numScales(); ++i)
            if (groups_[static_cast<std::size_t>(i)].name == name) return i;
        throw LookupError("unknown scale group '" + std::string(name) + "'");
    }

    const std::vector<std::string>& coordinateNames() const { return coordNames_; }

    int coordinateIndex(std::string_view name) const
    {
        for (int i = 0; i < nq_; ++i)
            if (coordNames_[static_cast<std::size_t>(i)] == name) return i;
        throw LookupError("unknown coordinate '" + std::string(name) + "'");
    }

    int coordinateBody(int coord) const { return coordBody_[static_cast<std::size_t>(coord)]; }
    double lowerLimit(int coord) const { return lower_[static_cast<std::size_t>(coord)]; }
    double upperLimit(int coord) const { return upper_[static_cast<std::size_t>(coord)]; }

    bool isLimited(int coord) const
    {
        return std::isfinite(lowerLimit(coord)) || std::isfinite(upperLimit(coord));
    }

    bool isRootCoordinate(int coord) const { return coordinateBody(coord) == 0; }

    /// False for translational coordinates (root translation and slides).
    bool isRotational(int coord) const
    {
        const Body& b = body(coordinateBody(coord));
        switch (b.joint.kind) {
        case JointKind::FreeRoot: return coord - qIndex(0) >= 3;
        case JointKind::Slide: return false;
        default: return true;
        }
    }

    /// Copy with the given site local offsets replaced.
    Skeleton withSiteOffsets(const std::vector<std::pair<int, Vec3>>& updates) const
    {
        std::vector<Site> sites = sites_;
        for (const auto& [index, offset] : updates)
            sites.at(static_cast<std::size_t>(index)).offset = offset;
        return Skeleton(bodies_, std::move(sites), groups_, coreSites_);
    }

    friend bool operator==(const Skeleton& a, const Skeleton& b)
    {
        return a.bodies_ == b.bodies_ && a.sites_ == b.sites_ &&
               a.groups_ == b.groups_ && a.coreSites_ == b.coreSites_;
    }

private:
    void validateAndIndex()
    {
        if (bodies_.empty()) throw SkeletonError("skeleton has no bodies");

        std::unordered_map<std::string, int> bodyNames;
        nq_ = 0;
        for (int i = 0; i < numBodies(); ++i) {
            const Body& b = bodies_[static_cast<std::size_t>(i)];
            if (b.name.empty()) throw SkeletonError("body " + std::to_string(i) + " has no name");
            if (!bodyNames.emplace(b.name, i).second)
                throw SkeletonError("duplicate body name '" + b.name + "'");
            if (i == 0) {
                if (b.parent != -1) throw SkeletonError("root body must not have a parent");
                if (b.joint.kind != JointKind::FreeRoot)
                    throw SkeletonError("root body must carry the FreeRoot joint");
            } else {
                if (b.parent < 0 || b.parent >= i)
                    throw SkeletonError("body '" + b.name + "' has parent index " +
                                        std::to_string(b.parent) + " (must precede it)");
                if (b.joint.kind == JointKind::FreeRoot)
                    throw SkeletonError("FreeRoot joint allowed only on the root ('" + b.name + "')");
            }
            if (!b.translation.allFinite())
                throw SkeletonError("body '" + b.name + "' has a non-finite translation");

            const int dof = dofCount(b.joint.kind);
            const Joint& j = b.joint;
            if (j.kind == JointKind::Hinge || j.kind == JointKind::Slide) {
                if (std::abs(j.axis.norm() - 1.0) > 1e-9)
                    throw SkeletonError("joint axis of '" + b.name + "' is not a unit vector");
            }
            if (j.kind == JointKind::FreeRoot && (!j.lower.empty() || !j.upper.empty()))
                throw SkeletonError("the FreeRoot joint is unlimited");
            for (const auto* bounds : {&j.lower, &j.upper}) {
                if (!bounds->empty() && static_cast<int>(bounds->size()) != dof)
                    throw SkeletonError("joint of '" + b.name + "' needs " + std::to_string(dof) +
                                        " limit entries");
            }

            qIndex_.push_back(nq_);
            const std::string stem = j.name.empty() ? b.name : j.name;
            for (int d = 0; d < dof; ++d) {
                const double lo = j.lower.empty() ? -kUnlimited : j.lower[static_cast<std::size_t>(d)];
                const double hi = j.upper.empty() ? kUnlimited : j.upper[static_cast<std::size_t>(d)];
                if (std::isnan(lo) || std::isnan(hi) || lo > hi)
                    throw SkeletonError("joint of '" + b.name + "' has lower > upper");
                lower_.push_back(lo);
                upper_.push_back(hi);
                coordBody_.push_back(i);
                coordNames_.push_back(coordinateName(stem, j.kind, d));
            }
            nq_ += dof;
        }

        for (int i = 0; i < numSites(); ++i) {
            const Site& s = sites_[static_cast<std::size_t>(i)];
            if (s.body < 0 || s.body >= numBodies())
                throw SkeletonError("site '" + s.name + "' references missing body");
            if (!s.offset.allFinite())
                throw SkeletonError("site '" + s.name + "' has a non-finite offset");
            if (!siteIndex_.emplace(s.name, i).second)
                throw SkeletonError("duplicate site name '" + s.name + "'");
        }

        groupOf_.assign(bodies_.size(), -1);
        std::unordered_map<std::string, int> groupNames;
        for (int g = 0; g < numScales(); ++g) {
            const ScaleGroup& group = groups_[static_cast<std::size_t>(g)];
            if (!groupNames.emplace(group.name, g).second)
                throw SkeletonError("duplicate scale group '" + group.name + "'");
            for (int b : group.bodies) {
                if (b < 0 || b >= numBodies())
                    throw SkeletonError("scale group '" + group.name + "' references missing body");
                if (groupOf_[static_cast<std::size_t>(b)] != -1)
                    throw SkeletonError("body '" + bodies_[static_cast<std::size_t>(b)].name +
                                        "' belongs to two scale groups");
                groupOf_[static_cast<std::size_t>(b)] = g;
            }
        }

        for (const auto& name : coreSites_) {
            if (!findSite(name)) throw SkeletonError("core site '" + name + "' is not a site");
        }
    }

    static std::string coordinateName(const std::string& stem, JointKind kind, int dof)
    {
        static constexpr const char* freeSuffix[] = {":tx", ":ty", ":tz", ":rx", ":ry", ":rz"};
        static constexpr const char* ballSuffix[] = {":rx", ":ry", ":rz"};
        switch (kind) {
        case JointKind::FreeRoot: return stem + freeSuffix[dof];
        case JointKind::Ball: return stem + ballSuffix[dof];
        default: return stem;
        }
    }

    std::vector<Body> bodies_;
    std::vector<Site> sites_;
    std::vector<ScaleGroup> groups_;
    std::vector<std::string> coreSites_;

    int nq_ = 0;
    std::vector<int> qIndex_;
    std::vector<int> groupOf_;
    std::vector<int> coordBody_;
    std::vector<double> lower_;
    std::vector<double> upper_;
    std::vector<std::string> coordNames_;
    std::unordered_map<std::string, int> siteIndex_;
};

//------------------------------------------------------------------------------
// Pose
//------------------------------------------------------------------------------

/// Generalized coordinates plus segment scales and per-site offsets.
struct PoseState {
    Eigen::VectorXd q;
    Eigen::VectorXd scales;
    /// One column per site, in the owning body's frame, meters.
    Eigen::Matrix3Xd markerOffsets;

    static PoseState zero(const Skeleton& skel)
    {
        PoseState p;
        p.q = Eigen::VectorXd::Zero(skel.nq());
        p.scales = Eigen::VectorXd::Ones(skel.numScales());
        p.markerOffsets = Eigen::Matrix3Xd::Zero(3, skel.numSites());
        return p;
    }

    friend bool operator==(const PoseState& a, const PoseState& b)
    {
        return a.q.size() == b.q.size() && a.scales.size() == b.scales.size() &&
               a.markerOffsets.cols() == b.markerOffsets.cols() && a.q == b.q &&
               a.scales == b.scales && a.markerOffsets == b.markerOffsets;
    }
};

/// Bit-level equality of n doubles.
inline bool bitwiseEqual(const double* a, const double* b, Eigen::Index n)
{
    return n == 0 || std::memcmp(a, b, static_cast<std::size_t>(n) * sizeof(double)) == 0;
}

/// Bit-level equality, distinguishing -0.0 from 0.0.
inline bool bitwiseEqual(const PoseState& a, const PoseState& b)
{
    return a.q.size() == b.q.size() && a.scales.size() == b.scales.size() &&
           a.markerOffsets.cols() == b.markerOffsets.cols() &&
           bitwiseEqual(a.q.data(), b.q.data(), a.q.size()) &&
           bitwiseEqual(a.scales.data(), b.scales.data(), a.scales.size()) &&
           bitwiseEqual(a.markerOffsets.data(), b.markerOffsets.data(), a.markerOffsets.size());
}

inline void checkPose(const Skeleton& skel, const PoseState& pose)
{
    if (pose.q.size() != skel.nq())
        throw InvalidPoseError("pose has " + std::to_string(pose.q.size()) + " coordinates, skeleton has " +
                               std::to_string(skel.nq()));
    if (pose.scales.size() != skel.numScales())
        throw InvalidPoseError("pose has " + std::to_string(pose.scales.size()) +
                               " scale factors, skeleton has " + std::to_string(skel.numScales()));
    if (pose.markerOffsets.cols() != skel.numSites())
        throw InvalidPoseError("pose has " + std::to_string(pose.markerOffsets.cols()) +
                               " marker offsets, skeleton has " + std::to_string(skel.numSites()));
    for (Eigen::Index g = 0; g < pose.scales.size(); ++g) {
        if (!(pose.scales[g] > 0.0))
            throw InvalidPoseError("scale factor of group '" +
                                   skel.scaleGroups()[static_cast<std::size_t>(g)].name +
                                   "' is not positive");
    }
}

//------------------------------------------------------------------------------
// Forward kinematics
//------------------------------------------------------------------------------

/// World placement of one body after its joint motion.
struct BodyFrame {
    Mat3 rotation;        ///< body to world
    Vec3 position;        ///< body origin; pivot of the body's rotational DOF
    Mat3 parentRotation;  ///< frame in which the joint's coordinates act
    /// World-frame motion directions of the joint's DOF: rotation axes for
    /// rotational DOF (exp-map columns include the left Jacobian), or
    /// translation directions for slides / root translation.
    Eigen::Matrix<double, 3, 6> axes;
    double scale = 1.0;
};

inline double bodyScale(const Skeleton& skel, const PoseState& pose, int body)
{
    const int g = skel.scaleGroupOf(body);
    return g < 0 ? 1.0 : pose.scales[g];
}

/// Per-body world frames; the pose must already be validated.
inline std::vector<BodyFrame> bodyFrames(const Skeleton& skel, const PoseState& pose)
{
    std::vector<BodyFrame> frames(static_cast<std::size_t>(skel.numBodies()));
    for (int i = 0; i < skel.numBodies(); ++i) {
        const Body& b = skel.body(i);
        BodyFrame& f = frames[static_cast<std::size_t>(i)];
        f.scale = bodyScale(skel, pose, i);

        Mat3 parentR = Mat3::Identity();
        Vec3 parentP = Vec3::Zero();
        if (b.parent >= 0) {
            parentR = frames[static_cast<std::size_t>(b.parent)].rotation;
            parentP = frames[static_cast<std::size_t>(b.parent)].position;
        }
        const Vec3 origin = parentP + parentR * (f.scale * b.translation);
        f.parentRotation = parentR;
        f.axes.setZero();

        const int qi = skel.qIndex(i);
        switch (b.joint.kind) {
        case JointKind::FreeRoot: {
            const Vec3 t = pose.q.segment<3>(qi);
            const Vec3 v = pose.q.segment<3>(qi + 3);
            f.position = origin + parentR * t;
            f.rotation = parentR * expMap(v);
            f.axes.leftCols<3>() = parentR;
            f.axes.rightCols<3>() = parentR * leftJacobian(v);
            break;
        }
        case JointKind::Ball: {
            const Vec3 v = pose.q.segment<3>(qi);
            f.position = origin;
            f.rotation = parentR * expMap(v);
            f.axes.leftCols<3>() = parentR * leftJacobian(v);
            break;
        }
        case JointKind::Hinge:
            f.position = origin;
            f.rotation = parentR * expMap(b.joint.axis * pose.q[qi]);
            f.axes.col(0) = parentR * b.joint.axis;
            break;
        case JointKind::Slide:
            f.position = origin + parentR * (b.joint.axis * pose.q[qi]);
            f.rotation = parentR;
            f.axes.col(0) = parentR * b.joint.axis;
            break;
        }
    }
    return frames;
}

/// Site position in the owning body frame including scale and offset.
inline Vec3 siteLocal(const Skeleton& skel, const PoseState& pose, double scale, int site)
{
    return scale * skel.site(site).offset + pose.markerOffsets.col(site);
}

inline Vec3 sitePosition(const Skeleton& skel, const PoseState& pose,
                         const std::vector<BodyFrame>& frames, int site)
{
    const BodyFrame& f = frames[static_cast<std::size_t>(skel.site(site).body)];
    return f.position + f.rotation * siteLocal(skel, pose, f.scale, site);
}

/// World positions of all sites, one column per site in skeleton order.
inline Eigen::Matrix3Xd sitePositions(const Skeleton& skel, const PoseState& pose)
{
    checkPose(skel, pose);
    const auto frames = bodyFrames(skel, pose);
    Eigen::Matrix3Xd out(3, skel.numSites());
    for (int s = 0; s < skel.numSites(); ++s) out.col(s) = sitePosition(skel, pose, frames, s);
    return out;
}

/// World positions of all sites keyed by name.
inline std::map<std::string, Vec3> forwardKinematics(const Skeleton& skel, const PoseState& pose)
{
    const Eigen::Matrix3Xd pts = sitePositions(skel, pose);
    std::map<std::string, Vec3> out;
    for (int s = 0; s < skel.numSites(); ++s) out.emplace(skel.site(s).name, pts.col(s));
    return out;
}

/// Pre-composes a rigid motion x -> R x + t onto the root, so that every site
/// moves by the same motion.
inline PoseState applyRootTransform(const Skeleton& skel, const PoseState& pose, const Mat3& r,
                                    const Vec3& t)
{
    checkPose(skel, pose);
    PoseState out = pose;
    const int qi = skel.qIndex(0);
    const Vec3 origin = bodyScale(skel, pose, 0) * skel.body(0).translation;
    const Vec3 pivot = origin + pose.q.segment<3>(qi);
    out.q.segment<3>(qi) = r * pivot + t - origin;
    out.q.segment<3>(qi + 3) = logMap(r * expMap(pose.q.segment<3>(qi + 3)));
    return out;
}

//------------------------------------------------------------------------------
// Parameter selection and Jacobians
//------------------------------------------------------------------------------

/// Which parameters are free: coordinates, scale groups, per-site offsets.
struct ParamMask {
    std::vector<bool> q;
    std::vector<bool> scales;
    std::vector<bool> offsets;

    static ParamMask none(const Skeleton& skel)
    {
        return {std::vector<bool>(static_cast<std::size_t>(skel.nq()), false),
                std::vector<bool>(static_cast<std::size_t>(skel.numScales()), false),
                std::vector<bool>(static_cast<std::size_t>(skel.numSites()), false)};
    }

    static ParamMask coordinates(const Skeleton& skel)
    {
        ParamMask m = none(skel);
        std::fill(m.q.begin(), m.q.end(), true);
        return m;
    }

    static ParamMask all(const Skeleton& skel)
    {
        return {std::vector<bool>(static_cast<std::size_t>(skel.nq()), true),
                std::vector<bool>(static_cast<std::size_t>(skel.numScales()), true),
                std::vector<bool>(static_cast<std::size_t>(skel.numSites()), true)};
    }

    int count() const
    {
        return static_cast<int>(std::count(q.begin(), q.end(), true) +
                                std::count(scales.begin(), scales.end(), true) +
                                3 * std::count(offsets.begin(), offsets.end(), true));
    }
};

/// Column assignment for the active parameters: coordinates first, then
/// scales, then offsets (x, y, z per site).
class ParamLayout {
public:
    ParamLayout(const Skeleton& skel, ParamMask mask) : mask_(std::move(mask))
    {
        if (mask_.q.size() != static_cast<std::size_t>(skel.nq()) ||
            mask_.scales.size() != static_cast<std::size_t>(skel.numScales()) ||
            mask_.offsets.size() != static_cast<std::size_t>(skel.numSites()))
            throw InvalidPoseError("parameter mask does not match the skeleton");
        int col = 0;
        for (bool on : mask_.q) qCol_.push_back(on ? col++ : -1);
        for (bool on : mask_.scales) scaleCol_.push_back(on ? col++ : -1);
        for (bool on : mask_.offsets) {
            offsetCol_.push_back(on ? col : -1);
            if (on) col += 3;
        }
        size_ = col;
    }

    int size() const { return size_; }
    const ParamMask& mask() const { return mask_; }
    int qColumn(int coord) const { return qCol_[static_cast<std::size_t>(coord)]; }
    int scaleColumn(int group) const { return scaleCol_[static_cast<std::size_t>(group)]; }
    int offsetColumn(int site) const { return offsetCol_[static_cast<std::size_t>(site)]; }

    /// Adds an update over the active parameters to a pose (no clamping).
    PoseState apply(const PoseState& pose, const Eigen::VectorXd& delta) const
    {
        PoseState out = pose;
        for (std::size_t i = 0; i < qCol_.size(); ++i)
            if (qCol_[i] >= 0) out.q[static_cast<Eigen::Index>(i)] += delta[qCol_[i]];
        for (std::size_t g = 0; g < scaleCol_.size(); ++g)
            if (scaleCol_[g] >= 0) out.scales[static_cast<Eigen::Index>(g)] += delta[scaleCol_[g]];
        for (std::size_t s = 0; s < offsetCol_.size(); ++s)
            if (offsetCol_[s] >= 0)
                out.markerOffsets.col(static_cast<Eigen::Index>(s)) += delta.segment<3>(offsetCol_[s]);
        return out;
    }

private:
    ParamMask mask_;
    std::vector<int> qCol_;
    std::vector<int> scaleCol_;
    std::vector<int> offsetCol_;
    int size_ = 0;
};

/// Writes d(site position)/d(active params) into a zeroed 3 x layout.size()
/// block.
template <typename Derived>
void siteJacobian(const Skeleton& skel, const PoseState& pose, const std::vector<BodyFrame>& frames,
                  const ParamLayout& layout, int site, const Vec3& sitePos,
                  Eigen::MatrixBase<Derived>& out)
{
    const int owner = skel.site(site).body;
    const BodyFrame& of = frames[static_cast<std::size_t>(owner)];

    if (const int col = layout.offsetColumn(site); col >= 0) out.template middleCols<3>(col) += of.rotation;
    if (const int g = skel.scaleGroupOf(owner); g >= 0) {
        if (const int col = layout.scaleColumn(g); col >= 0)
            out.col(col) += of.rotation * skel.site(site).offset;
    }

    for (int j = owner; j >= 0; j = skel.body(j).parent) {
        const Body& b = skel.body(j);
        const BodyFrame& f = frames[static_cast<std::size_t>(j)];
        const Vec3 lever = sitePos - f.position;
        const int qi = skel.qIndex(j);

        if (const int g = skel.scaleGroupOf(j); g >= 0) {
            if (const int col = layout.scaleColumn(g); col >= 0)
                out.col(col) += f.parentRotation * b.translation;
        }

        switch (b.joint.kind) {
        case JointKind::FreeRoot:
            for (int d = 0; d < 3; ++d) {
                if (const int col = layout.qColumn(qi + d); col >= 0) out.col(col) += f.axes.col(d);
            }
            for (int d = 3; d < 6; ++d) {
                if (const int col = layout.qColumn(qi + d); col >= 0)
                    out.col(col) += f.axes.col(d).cross(lever);
            }
            break;
        case JointKind::Ball:
            for (int d = 0; d < 3; ++d) {
                if (const int col = layout.qColumn(qi + d); col >= 0)
                    out.col(col) += f.axes.col(d).cross(lever);
            }
            break;
        case JointKind::Hinge:
            if (const int col = layout.qColumn(qi); col >= 0) out.col(col) += f.axes.col(0).cross(lever);
            break;
        case JointKind::Slide:
            if (const int col = layout.qColumn(qi); col >= 0) out.col(col) += f.axes.col(0);
            break;
        }
    }
}

/// Stacked site-position Jacobian, 3*|sites| rows by one column per active
/// parameter.
inline Eigen::MatrixXd poseJacobian(const Skeleton& skel, const PoseState& pose,
                                    const std::vector<std::string>& siteSubset, const ParamMask& mask)
{
    checkPose(skel, pose);
    const ParamLayout layout(skel, mask);
    if (layout.size() == 0) throw ConfigError("parameter mask selects no parameters");
    std::vector<int> sites;
    sites.reserve(siteSubset.size());
    for (const auto& name : siteSubset) sites.push_back(skel.siteIndex(name));

    const auto frames = bodyFrames(skel, pose);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * static_cast<Eigen::Index>(sites.size()), layout.size());
    for (std::size_t k = 0; k < sites.size(); ++k) {
        auto block = jac.middleRows<3>(3 * static_cast<Eigen::Index>(k));
        siteJacobian(skel, pose, frames, layout, sites[k], sitePosition(skel, pose, frames, sites[k]), block);
    }
    return jac;
}

//------------------------------------------------------------------------------
// Joint limits
//------------------------------------------------------------------------------

/// Projects every limited coordinate into its bounds. Values already inside
/// are returned untouched.
inline PoseState clampToLimits(const Skeleton& skel, const PoseState& pose)
{
    checkPose(skel, pose);
    PoseState out = pose;
    for (int i = 0; i < skel.nq(); ++i) {
        if (!skel.isLimited(i)) continue;
        out.q[i] = std::clamp(out.q[i], skel.lowerLimit(i), skel.upperLimit(i));
    }
    return out;
}

struct LimitPenalty {
    double loss = 0.0;
    Eigen::VectorXd gradient;  ///< d loss / d q
};

/// One-sided quadratic penalty 0.5 * k * violation^2 summed over coordinates.
inline LimitPenalty limitPenalty(const Skeleton& skel, const PoseState& pose, double stiffness)
{
    if (!(stiffness >= 0.0)) throw ConfigError("limit stiffness must be non-negative");
    checkPose(skel, pose);
    LimitPenalty p;
    p.gradient = Eigen::VectorXd::Zero(skel.nq());
    for (int i = 0; i < skel.nq(); ++i) {
        double v = 0.0;
        if (pose.q[i] > skel.upperLimit(i)) v = pose.q[i] - skel.upperLimit(i);
        else if (pose.q[i] < skel.lowerLimit(i)) v = pose.q[i] - skel.lowerLimit(i);
        if (v == 0.0) continue;
        p.loss += 0.5 * stiffness * v * v;
        p.gradient[i] = stiffness * v;
    }
    return p;
}

}  // namespace kinefit
