#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kinefit/errors.hpp"
#include "kinefit/rotation.hpp"

namespace kinefit {

struct MarkerTarget {
    Vec3 position = Vec3::Zero();  ///< meters, world frame
    double confidence = 1.0;

    friend bool operator==(const MarkerTarget& a, const MarkerTarget& b)
    {
        return a.position == b.position && a.confidence == b.confidence;
    }
};

/// One time sample of 3D marker targets. A site without an entry is treated
/// as unobserved (zero weight).
struct MarkerFrame {
    std::string id;
    std::map<std::string, MarkerTarget> targets;

    friend bool operator==(const MarkerFrame&, const MarkerFrame&) = default;
};

struct Detection {
    Vec2 pixel = Vec2::Zero();
    double confidence = 0.0;

    friend bool operator==(const Detection& a, const Detection& b)
    {
        return a.pixel == b.pixel && a.confidence == b.confidence;
    }
};

struct CameraDetections {
    std::string camera;
    std::map<std::string, Detection> detections;

    friend bool operator==(const CameraDetections&, const CameraDetections&) = default;
};

/// One time sample of 2D keypoints from every camera.
struct MultiviewFrame {
    std::string id;
    std::vector<CameraDetections> views;

    friend bool operator==(const MultiviewFrame&, const MultiviewFrame&) = default;
};

inline void validateFrame(const MarkerFrame& frame)
{
    for (const auto& [site, t] : frame.targets) {
        if (!std::isfinite(t.confidence) || t.confidence < 0.0)
            throw SolveInputError("frame '" + frame.id + "': confidence of '" + site +
                                  "' must be finite and non-negative");
        if (t.confidence > 0.0 && !t.position.allFinite())
            throw SolveInputError("frame '" + frame.id + "': target '" + site + "' is not finite");
    }
}

inline void validateFrame(const MultiviewFrame& frame)
{
    for (const auto& view : frame.views) {
        for (const auto& [site, d] : view.detections) {
            if (!std::isfinite(d.confidence) || d.confidence < 0.0)
                throw SolveInputError("frame '" + frame.id + "', camera '" + view.camera +
                                      "': confidence of '" + site + "' must be finite and non-negative");
            if (d.confidence > 0.0 && !d.pixel.allFinite())
                throw SolveInputError("frame '" + frame.id + "', camera '" + view.camera +
                                      "': detection '" + site + "' is not finite");
        }
    }
}

}  // namespace kinefit
