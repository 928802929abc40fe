#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/lm_solver.hpp"
#include "kinefit/parallel.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit {

//------------------------------------------------------------------------------
// Correspondence table
//------------------------------------------------------------------------------

enum class SourceKind { Vertex, Keypoint };

inline const char* toString(SourceKind k) { return k == SourceKind::Vertex ? "vertex" : "keypoint"; }

inline SourceKind sourceKindFromString(const std::string& s)
{
    if (s == "vertex") return SourceKind::Vertex;
    if (s == "keypoint") return SourceKind::Keypoint;
    throw ParseError("unknown source kind '" + s + "' (expected vertex or keypoint)");
}

/// Identifier in the external vocabulary. Ordered by id, then kind.
struct ExternalKey {
    SourceKind kind = SourceKind::Vertex;
    std::uint32_t id = 0;

    friend bool operator==(const ExternalKey&, const ExternalKey&) = default;
    friend bool operator<(const ExternalKey& a, const ExternalKey& b)
    {
        return std::tie(a.id, a.kind) < std::tie(b.id, b.kind);
    }
};

struct CorrespondenceEntry {
    ExternalKey key;
    std::string site;
    double weight = 1.0;

    friend bool operator==(const CorrespondenceEntry&, const CorrespondenceEntry&) = default;
};

struct CorrespondenceTable {
    std::vector<CorrespondenceEntry> entries;

    /// Throws CorrespondenceError unless keys and sites are each used once
    /// and every weight is finite and non-negative.
    void validate() const
    {
        std::set<ExternalKey> keys;
        std::set<std::string> sites;
        for (const auto& e : entries) {
            if (!keys.insert(e.key).second)
                throw CorrespondenceError(std::string("external key ") + toString(e.key.kind) + " " +
                                          std::to_string(e.key.id) + " is mapped twice");
            if (!sites.insert(e.site).second)
                throw CorrespondenceError("site '" + e.site + "' is mapped twice");
            if (!std::isfinite(e.weight) || e.weight < 0.0)
                throw CorrespondenceError("site '" + e.site + "' has an invalid weight");
        }
    }

    const CorrespondenceEntry* findSite(const std::string& site) const
    {
        for (const auto& e : entries)
            if (e.site == site) return &e;
        return nullptr;
    }

    friend bool operator==(const CorrespondenceTable&, const CorrespondenceTable&) = default;
};

/// Confidence kernel applied to a mean residual (meters).
inline double residualWeight(double residual, double tau)
{
    return std::exp(-residual * residual / (2.0 * tau * tau));
}

inline constexpr double kDefaultWeightTau = 0.02;

//------------------------------------------------------------------------------
// Discovery
//------------------------------------------------------------------------------

using ExternalCloud = std::map<ExternalKey, Vec3>;
using ReferenceCloud = std::map<std::string, Vec3>;

/// Matches each paired reference key to the external key with the smallest
/// mean distance over the frames where both are present. Assignment is
/// greedy over all candidate pairs in order of (distance, external key,
/// reference key), so the result is a bijection.
inline CorrespondenceTable discoverCorrespondences(const std::vector<ExternalCloud>& external,
                                                   const std::vector<ReferenceCloud>& reference,
                                                   const std::map<std::string, std::string>& pairing,
                                                   double tau = kDefaultWeightTau)
{
    if (!(tau > 0.0)) throw ConfigError("weight kernel width must be positive");
    {
        std::set<std::string> sites;
        for (const auto& [ref, site] : pairing)
            if (!sites.insert(site).second) throw CorrespondenceError("site '" + site + "' is paired twice");
    }
    const std::size_t frames = std::min(external.size(), reference.size());

    struct Sum {
        double distance = 0.0;
        int count = 0;
    };
    std::map<std::pair<std::string, ExternalKey>, Sum> sums;
    bool overlap = false;
    for (std::size_t f = 0; f < frames; ++f) {
        if (external[f].empty() || reference[f].empty()) continue;
        for (const auto& [ref, site] : pairing) {
            auto r = reference[f].find(ref);
            if (r == reference[f].end()) continue;
            for (const auto& [key, p] : external[f]) {
                Sum& s = sums[{ref, key}];
                s.distance += (p - r->second).norm();
                ++s.count;
                overlap = true;
            }
        }
    }
    if (!overlap) throw NoDataError("no frame contains both external and reference points");

    struct Candidate {
        double mean;
        ExternalKey key;
        std::string ref;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(sums.size());
    for (const auto& [k, s] : sums) candidates.push_back({s.distance / s.count, k.second, k.first});
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.mean != b.mean) return a.mean < b.mean;
        if (!(a.key == b.key)) return a.key < b.key;
        return a.ref < b.ref;
    });

    std::set<ExternalKey> usedKeys;
    std::set<std::string> usedRefs;
    CorrespondenceTable table;
    for (const auto& c : candidates) {
        if (usedKeys.contains(c.key) || usedRefs.contains(c.ref)) continue;
        usedKeys.insert(c.key);
        usedRefs.insert(c.ref);
        table.entries.push_back({c.key, pairing.at(c.ref), residualWeight(c.mean, tau)});
    }
    std::sort(table.entries.begin(), table.entries.end(),
              [](const CorrespondenceEntry& a, const CorrespondenceEntry& b) { return a.site < b.site; });
    return table;
}

//------------------------------------------------------------------------------
// EM site refinement
//------------------------------------------------------------------------------

struct EmOptions {
    double tau = kDefaultWeightTau;
    /// Pose solve for the first round; defaultMonocularConfig with scales and
    /// offsets frozen when absent.
    std::optional<SolveConfig> solve;
    /// Iterations of the warm-started single-stage pose solve in later rounds.
    int refineIterations = 133;
    /// Sites whose offsets are re-estimated; the other table sites stay fixed
    /// and pin the solution. Empty means every table site.
    std::vector<std::string> refineSites;
    int jobs = 1;
};

struct EmResult {
    Skeleton skeleton;
    CorrespondenceTable table;
    /// Total confidence-weighted squared residual after each round's M-step.
    std::vector<double> roundLoss;
    /// Same quantity after the first E-step, before any site moved.
    double initialLoss = 0.0;
    /// Table sites with no positive-confidence observation; left unchanged.
    std::vector<std::string> unobserved;
    /// Confidence-weighted mean residual distance per site after the last round.
    std::map<std::string, double> meanResidual;
    std::vector<PoseState> poses;
};

namespace detail {

inline SolveConfig emFirstRoundConfig(const Skeleton& skel, const EmOptions& opt)
{
    SolveConfig cfg = opt.solve.value_or(defaultMonocularConfig(skel));
    for (auto& s : cfg.stages) {
        s.scales = false;
        s.offsets = false;
    }
    return cfg;
}

inline SolveConfig emWarmConfig(const SolveConfig& first, const PoseState& start, int iterations)
{
    SolveConfig cfg = first;
    StageSpec stage;
    stage.name = "pose";
    stage.iterations = iterations;
    stage.coordinates = CoordinateSet::All;
    stage.damping = first.stages.empty() ? kMonocularDamping : first.stages.back().damping;
    cfg.stages = {stage};
    cfg.warmStart.initial = start;
    cfg.warmStart.recenterRoot = false;
    return cfg;
}

/// Frames restricted to table sites.
inline std::vector<MarkerFrame> restrictToTable(const std::vector<MarkerFrame>& frames,
                                                const CorrespondenceTable& table)
{
    std::vector<MarkerFrame> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        MarkerFrame g;
        g.id = f.id;
        for (const auto& [site, t] : f.targets)
            if (table.findSite(site)) g.targets.emplace(site, t);
        out.push_back(std::move(g));
    }
    return out;
}

inline double weightedResidual(const Skeleton& skel, const std::vector<MarkerFrame>& frames,
                               const std::vector<PoseState>& poses)
{
    double total = 0.0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        const Eigen::Matrix3Xd pts = sitePositions(skel, poses[f]);
        for (const auto& [site, t] : frames[f].targets)
            total += t.confidence * (pts.col(skel.siteIndex(site)) - t.position).squaredNorm();
    }
    return total;
}

}  // namespace detail

/// Alternates pose solves with the current site definitions (E) and moving
/// each refined site to the confidence-weighted mean of its targets expressed
/// in the owning body frame (M). Scales and per-frame offsets stay frozen; the
/// objective uses frame confidences only. Table weights are recomputed from
/// the final mean residuals.
inline EmResult refineSitesEM(const Skeleton& skel, const std::vector<MarkerFrame>& frames,
                              const CorrespondenceTable& table, int rounds, const EmOptions& opt = {})
{
    if (rounds < 1) throw ConfigError("refinement needs at least one round");
    if (frames.empty()) throw NoDataError("refinement needs at least one frame");
    if (!(opt.tau > 0.0)) throw ConfigError("weight kernel width must be positive");
    table.validate();
    for (const auto& e : table.entries) skel.siteIndex(e.site);
    std::vector<bool> refine(static_cast<std::size_t>(skel.numSites()), opt.refineSites.empty());
    for (const auto& name : opt.refineSites) {
        if (!table.findSite(name)) throw ConfigError("refine site '" + name + "' is not in the correspondence table");
        refine[static_cast<std::size_t>(skel.siteIndex(name))] = true;
    }

    const std::vector<MarkerFrame> data = detail::restrictToTable(frames, table);
    const SolveConfig first = detail::emFirstRoundConfig(skel, opt);

    EmResult out{skel, table, {}, 0.0, {}, {}, std::vector<PoseState>(data.size())};
    std::vector<bool> observed(static_cast<std::size_t>(skel.numSites()), false);
    for (const auto& f : data)
        for (const auto& [site, t] : f.targets)
            if (t.confidence > 0.0) observed[static_cast<std::size_t>(skel.siteIndex(site))] = true;
    for (const auto& e : table.entries)
        if (!observed[static_cast<std::size_t>(skel.siteIndex(e.site))]) out.unobserved.push_back(e.site);

    // With a strict refine subset, poses are fitted to the fixed sites only so
    // the sites being moved do not bias them.
    std::vector<MarkerFrame> poseData = data;
    if (!opt.refineSites.empty()) {
        for (auto& f : poseData) {
            MarkerFrame anchors;
            anchors.id = f.id;
            for (const auto& [site, t] : f.targets)
                if (!refine[static_cast<std::size_t>(skel.siteIndex(site))] && t.confidence > 0.0)
                    anchors.targets.emplace(site, t);
            if (!anchors.targets.empty()) f = std::move(anchors);
        }
    }

    for (int round = 0; round < rounds; ++round) {
        // E-step.
        const Skeleton& current = out.skeleton;
        parallelFor(data.size(), opt.jobs, [&](std::size_t f) {
            if (poseData[f].targets.empty()) {
                out.poses[f] = round == 0 ? PoseState::zero(current) : out.poses[f];
                return;
            }
            const SolveConfig cfg =
                round == 0 ? first : detail::emWarmConfig(first, out.poses[f], opt.refineIterations);
            out.poses[f] = runStaged(current, poseData[f], cfg).finalPose;
        });
        if (round == 0) out.initialLoss = detail::weightedResidual(current, data, out.poses);

        // M-step.
        std::vector<Vec3> sum(static_cast<std::size_t>(skel.numSites()), Vec3::Zero());
        std::vector<double> weight(static_cast<std::size_t>(skel.numSites()), 0.0);
        for (std::size_t f = 0; f < data.size(); ++f) {
            const auto bodies = bodyFrames(current, out.poses[f]);
            for (const auto& [site, t] : data[f].targets) {
                if (!(t.confidence > 0.0)) continue;
                const int s = current.siteIndex(site);
                if (!refine[static_cast<std::size_t>(s)]) continue;
                const BodyFrame& b = bodies[static_cast<std::size_t>(current.site(s).body)];
                const Vec3 local = b.rotation.transpose() * (t.position - b.position);
                sum[static_cast<std::size_t>(s)] +=
                    t.confidence * (local - out.poses[f].markerOffsets.col(s)) / b.scale;
                weight[static_cast<std::size_t>(s)] += t.confidence;
            }
        }
        std::vector<std::pair<int, Vec3>> updates;
        for (int s = 0; s < skel.numSites(); ++s)
            if (weight[static_cast<std::size_t>(s)] > 0.0)
                updates.emplace_back(s, sum[static_cast<std::size_t>(s)] / weight[static_cast<std::size_t>(s)]);
        out.skeleton = current.withSiteOffsets(updates);

        const double loss = detail::weightedResidual(out.skeleton, data, out.poses);
        const double previous = out.roundLoss.empty() ? out.initialLoss : out.roundLoss.back();
        if (loss > previous + 1e-12 * std::max(1.0, previous))
            throw Error("site refinement increased the weighted residual in round " + std::to_string(round + 1));
        out.roundLoss.push_back(loss);
    }

    // Confidence weights from the final residuals.
    std::map<std::string, std::pair<double, double>> acc;
    for (std::size_t f = 0; f < data.size(); ++f) {
        const Eigen::Matrix3Xd pts = sitePositions(out.skeleton, out.poses[f]);
        for (const auto& [site, t] : data[f].targets) {
            if (!(t.confidence > 0.0)) continue;
            auto& [d, w] = acc[site];
            d += t.confidence * (pts.col(out.skeleton.siteIndex(site)) - t.position).norm();
            w += t.confidence;
        }
    }
    for (auto& e : out.table.entries) {
        auto it = acc.find(e.site);
        if (it == acc.end()) continue;
        const double r = it->second.first / it->second.second;
        out.meanResidual[e.site] = r;
        e.weight = residualWeight(r, opt.tau);
    }
    return out;
}

}  // namespace kinefit
