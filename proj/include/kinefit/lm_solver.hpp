#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "kinefit/cameras.hpp"
#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/residuals.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit {

//------------------------------------------------------------------------------
// Configuration
//------------------------------------------------------------------------------

enum class CoordinateSet { None, Root, All };

/// One optimization stage: which parameters move, against which markers,
/// for how many iterations.
struct StageSpec {
    std::string name;
    int iterations = 1;
    CoordinateSet coordinates = CoordinateSet::All;
    bool scales = false;
    bool offsets = false;
    /// Restrict the objective to the skeleton's designated core sites.
    bool coreMarkersOnly = false;
    /// Explicit site filter; empty means every observed site.
    std::vector<std::string> markerSubset;
    double damping = 1.0;
    /// Offset regularization weight, used when offsets are active.
    double offsetReg = 0.0;

    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct WarmStart {
    /// Starting pose; the zero pose when absent.
    std::optional<PoseState> initial;
    /// Replace the root translation by the centroid of the targets.
    bool recenterRoot = true;
};

/// Multiview detection preprocessing applied before the pose solve.
struct PreprocessingSpec {
    double confidenceCutoff = 0.0;
    double kernelWidthPx = kDefaultKernelWidthPx;
    bool consensusWeighting = true;

    friend bool operator==(const PreprocessingSpec&, const PreprocessingSpec&) = default;
};

struct SolveConfig {
    std::vector<StageSpec> stages;
    WarmStart warmStart;
    /// Early exit once the relative loss decrease of this many consecutive
    /// accepted steps stays below convergenceTol.
    double convergenceTol = 1e-10;
    int convergencePatience = 10;
    /// Upper bound on the update norm; 0 disables.
    double maxStepNorm = 0.0;
    double limitStiffness = 10.0;
    double dampingIncrease = 2.0;
    double dampingDecrease = 0.9;
    /// Lower bound for the adapted damping. Each stage starts at its own
    /// damping value and may decay towards this bound on accepted steps.
    double minDamping = 0.0;
    PreprocessingSpec preprocessing;

    int totalIterations() const
    {
        int n = 0;
        for (const auto& s : stages) n += s.iterations;
        return n;
    }

    void validate() const
    {
        if (stages.empty()) throw ConfigError("solve config has no stages");
        for (const auto& s : stages) {
            if (s.iterations < 1)
                throw ConfigError("stage '" + s.name + "' needs an iteration budget of at least 1");
            if (!(s.damping >= 0.0)) throw ConfigError("stage '" + s.name + "' has negative damping");
            if (!(s.offsetReg >= 0.0))
                throw ConfigError("stage '" + s.name + "' has negative offset regularization");
        }
        if (!(convergenceTol >= 0.0)) throw ConfigError("convergence tolerance must be non-negative");
        if (!(maxStepNorm >= 0.0)) throw ConfigError("max step norm must be non-negative");
        if (!(limitStiffness >= 0.0)) throw ConfigError("limit stiffness must be non-negative");
        if (!(minDamping >= 0.0)) throw ConfigError("minimum damping must be non-negative");
        if (!(dampingIncrease > 1.0) || !(dampingDecrease > 0.0 && dampingDecrease <= 1.0))
            throw ConfigError("damping adaptation factors out of range");
        if (!(preprocessing.confidenceCutoff >= 0.0) || !(preprocessing.kernelWidthPx > 0.0))
            throw ConfigError("invalid detection preprocessing settings");
    }

    friend bool operator==(const SolveConfig& a, const SolveConfig& b)
    {
        const bool warm = a.warmStart.recenterRoot == b.warmStart.recenterRoot &&
                          a.warmStart.initial.has_value() == b.warmStart.initial.has_value() &&
                          (!a.warmStart.initial || *a.warmStart.initial == *b.warmStart.initial);
        return warm && a.stages == b.stages && a.convergenceTol == b.convergenceTol &&
               a.convergencePatience == b.convergencePatience && a.maxStepNorm == b.maxStepNorm &&
               a.limitStiffness == b.limitStiffness && a.dampingIncrease == b.dampingIncrease &&
               a.dampingDecrease == b.dampingDecrease && a.minDamping == b.minDamping && a.preprocessing == b.preprocessing;
    }
};

inline constexpr double kMonocularDamping = 3.0;
inline constexpr int kMonocularIterations = 400;
inline constexpr double kMonocularOffsetReg = 20.0;
inline constexpr double kMultiviewDamping = 1.0;
inline constexpr int kMultiviewIterations = 500;
inline constexpr int kMultiviewOffsetIterations = 20;
inline constexpr double kMultiviewOffsetReg = 1e4;
inline constexpr double kConfidenceCutoff = 0.25;

namespace detail {

inline void requireCoreSites(const Skeleton& skel)
{
    if (skel.coreSites().empty())
        throw ConfigError("skeleton has no core-marker designation for root positioning");
}

}  // namespace detail

/// Root positioning on core markers, then all coordinates with scales
/// frozen, then coordinates + scales + offsets. 400 iterations split evenly.
inline SolveConfig defaultMonocularConfig(const Skeleton& skel)
{
    detail::requireCoreSites(skel);
    const int each = kMonocularIterations / 3;
    SolveConfig cfg;
    cfg.stages = {
        {"root", each, CoordinateSet::Root, false, false, true, {}, kMonocularDamping, kMonocularOffsetReg},
        {"pose", each, CoordinateSet::All, false, false, false, {}, kMonocularDamping, kMonocularOffsetReg},
        {"pose_scale_offsets", kMonocularIterations - 2 * each, CoordinateSet::All, true, true, false, {},
         kMonocularDamping, kMonocularOffsetReg},
    };
    return cfg;
}

/// 500 iterations split 30/50/20 over root, pose, and pose + scale, then 20
/// offset-only iterations with a strong offset prior.
inline SolveConfig defaultMultiviewConfig(const Skeleton& skel)
{
    detail::requireCoreSites(skel);
    const int root = kMultiviewIterations * 30 / 100;
    const int pose = kMultiviewIterations * 50 / 100;
    const int scale = kMultiviewIterations - root - pose;
    SolveConfig cfg;
    cfg.stages = {
        {"root", root, CoordinateSet::Root, false, false, true, {}, kMultiviewDamping, kMultiviewOffsetReg},
        {"pose", pose, CoordinateSet::All, false, false, false, {}, kMultiviewDamping, kMultiviewOffsetReg},
        {"pose_scale", scale, CoordinateSet::All, true, false, false, {}, kMultiviewDamping, kMultiviewOffsetReg},
        {"offsets", kMultiviewOffsetIterations, CoordinateSet::None, false, true, false, {}, kMultiviewDamping,
         kMultiviewOffsetReg},
    };
    cfg.preprocessing.confidenceCutoff = kConfidenceCutoff;
    return cfg;
}

//------------------------------------------------------------------------------
// Single damped step
//------------------------------------------------------------------------------

/// A nonlinear least-squares problem over some state type.
template <class P>
concept LeastSquaresProblem = requires(const P& p, const typename P::State& s, const Eigen::VectorXd& d) {
    { p.evaluate(s, true) } -> std::same_as<ResidualBlock>;
    { p.retract(s, d) } -> std::same_as<typename P::State>;
};

template <class State>
struct StepResult {
    State candidate;
    Eigen::VectorXd delta;
    /// Loss decrease predicted by the linearized model.
    double predictedReduction = 0.0;
    /// False when the damped normal equations could not be solved.
    bool ok = true;
};

/// Solves (J'J + lambda diag(J'J)) delta = -J'r and retracts the state.
/// Parameters whose column is identically zero are left unchanged.
template <LeastSquaresProblem Problem>
StepResult<typename Problem::State> lmStep(const Problem& problem, const typename Problem::State& state,
                                           const ResidualBlock& block, double lambda, double maxStepNorm = 0.0)
{
    const Eigen::Index n = block.jacobian.cols();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    a.selfadjointView<Eigen::Lower>().rankUpdate(block.jacobian.transpose());
    a = a.selfadjointView<Eigen::Lower>();
    const Eigen::VectorXd g = block.jacobian.transpose() * block.values;

    std::vector<Eigen::Index> live;
    for (Eigen::Index i = 0; i < n; ++i)
        if (a(i, i) > 0.0) live.push_back(i);

    StepResult<typename Problem::State> out;
    out.delta = Eigen::VectorXd::Zero(n);
    if (!live.empty()) {
        const auto m = static_cast<Eigen::Index>(live.size());
        Eigen::MatrixXd sub(m, m);
        Eigen::VectorXd rhs(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            rhs[r] = -g[live[static_cast<std::size_t>(r)]];
            for (Eigen::Index c = 0; c < m; ++c)
                sub(r, c) = a(live[static_cast<std::size_t>(r)], live[static_cast<std::size_t>(c)]);
            sub(r, r) *= 1.0 + lambda;
        }
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(sub);
        const Eigen::VectorXd d = ldlt.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-14 * dmax)) {
            out.ok = false;
            out.candidate = state;
            return out;
        }
        const Eigen::VectorXd step = ldlt.solve(rhs);
        if (!step.allFinite()) {
            out.ok = false;
            out.candidate = state;
            return out;
        }
        for (Eigen::Index r = 0; r < m; ++r) out.delta[live[static_cast<std::size_t>(r)]] = step[r];
    }

    if (maxStepNorm > 0.0) {
        const double norm = out.delta.norm();
        if (norm > maxStepNorm) out.delta *= maxStepNorm / norm;
    }
    out.predictedReduction = -(2.0 * g.dot(out.delta) + out.delta.dot(a * out.delta));
    out.candidate = problem.retract(state, out.delta);
    return out;
}

//------------------------------------------------------------------------------
// Staged solve
//------------------------------------------------------------------------------

struct IterationRecord {
    int iteration = 0;
    double loss = 0.0;  ///< loss after this iteration
    double stepNorm = 0.0;
    double lambda = 0.0;  ///< damping used for this iteration
    bool accepted = false;
};

struct StageTrace {
    std::string name;
    double startLoss = 0.0;
    double endLoss = 0.0;
    int accepted = 0;
    int rejected = 0;
    /// No further decrease was possible (zero gradient or vanishing step).
    bool stationary = false;
    /// Stopped early on the relative-decrease criterion.
    bool earlyExit = false;
    std::vector<IterationRecord> iterations;
};

struct SolveReport {
    PoseState finalPose;
    std::vector<StageTrace> stages;
    bool converged = true;
    double finalLoss = 0.0;
    double wallTime = 0.0;  ///< seconds
    std::vector<std::string> diagnostics;
};

/// Pose problem for one stage: a residual objective over a fixed parameter
/// layout, with the soft limit penalty and post-step clamping.
template <class Objective>
class PoseProblem {
public:
    using State = PoseState;

    PoseProblem(const Skeleton& skel, Objective objective, ParamLayout layout, double limitStiffness)
        : skel_(skel), objective_(std::move(objective)), layout_(std::move(layout)), stiffness_(limitStiffness)
    {
    }

    ResidualBlock evaluate(const PoseState& pose, bool wantJacobian) const
    {
        ResidualBlock b = objective_(pose, layout_, wantJacobian);
        b.append(limitPenaltyResiduals(skel_, pose, layout_, stiffness_, wantJacobian));
        return b;
    }

    PoseState retract(const PoseState& pose, const Eigen::VectorXd& delta) const
    {
        PoseState out = clampToLimits(skel_, layout_.apply(pose, delta));
        for (Eigen::Index g = 0; g < out.scales.size(); ++g) out.scales[g] = std::max(out.scales[g], kMinScale);
        return out;
    }

    const ParamLayout& layout() const { return layout_; }

    static constexpr double kMinScale = 1e-3;

private:
    const Skeleton& skel_;
    Objective objective_;
    ParamLayout layout_;
    double stiffness_;
};

/// Runs damped LM on one problem starting from the given damping. Accepts a
/// step iff the loss strictly decreases; rejected steps multiply the damping,
/// accepted ones decay it towards cfg.minDamping.
template <LeastSquaresProblem Problem>
typename Problem::State runLevenbergMarquardt(const Problem& problem, typename Problem::State state, int iterations,
                                              double damping, const SolveConfig& cfg, StageTrace& trace)
{
    ResidualBlock block = problem.evaluate(state, true);
    double loss = block.loss();
    if (!std::isfinite(loss)) throw SolveInputError("stage '" + trace.name + "': initial loss is not finite");
    trace.startLoss = loss;

    double lambda = damping;
    int smallDecreases = 0;
    for (int it = 0; it < iterations; ++it) {
        IterationRecord rec;
        rec.iteration = it;
        rec.lambda = lambda;

        auto step = lmStep(problem, state, block, lambda, cfg.maxStepNorm);
        if (!step.ok) {
            ++trace.rejected;
            rec.loss = loss;
            trace.iterations.push_back(rec);
            lambda = std::max(lambda * cfg.dampingIncrease, 1e-9);
            continue;
        }
        rec.stepNorm = step.delta.norm();
        if (loss == 0.0 || !(step.predictedReduction > 1e-14 * loss)) {
            trace.stationary = true;
            rec.loss = loss;
            trace.iterations.push_back(rec);
            break;
        }

        ResidualBlock candidate = problem.evaluate(step.candidate, true);
        const double candLoss = candidate.loss();
        if (std::isfinite(candLoss) && candLoss < loss) {
            const double relDecrease = (loss - candLoss) / loss;
            state = std::move(step.candidate);
            block = std::move(candidate);
            loss = candLoss;
            rec.accepted = true;
            ++trace.accepted;
            lambda = std::max(cfg.minDamping, lambda * cfg.dampingDecrease);
            smallDecreases = relDecrease < cfg.convergenceTol ? smallDecreases + 1 : 0;
        } else {
            ++trace.rejected;
            lambda = std::max(lambda * cfg.dampingIncrease, 1e-9);
        }
        rec.loss = loss;
        trace.iterations.push_back(rec);
        if (smallDecreases >= cfg.convergencePatience) {
            trace.earlyExit = true;
            break;
        }
    }
    trace.endLoss = loss;
    return state;
}

namespace detail {

inline ParamMask stageMask(const Skeleton& skel, const StageSpec& stage)
{
    ParamMask mask = ParamMask::none(skel);
    for (int i = 0; i < skel.nq(); ++i) {
        const bool on = stage.coordinates == CoordinateSet::All ||
                        (stage.coordinates == CoordinateSet::Root && skel.isRootCoordinate(i));
        mask.q[static_cast<std::size_t>(i)] = on;
    }
    std::fill(mask.scales.begin(), mask.scales.end(), stage.scales);
    std::fill(mask.offsets.begin(), mask.offsets.end(), stage.offsets);
    return mask;
}

/// Site filter of a stage; empty optional means all sites.
inline std::optional<std::vector<std::string>> stageSites(const Skeleton& skel, const StageSpec& stage)
{
    if (stage.coreMarkersOnly) {
        requireCoreSites(skel);
        return skel.coreSites();
    }
    if (!stage.markerSubset.empty()) {
        for (const auto& s : stage.markerSubset) skel.siteIndex(s);
        return stage.markerSubset;
    }
    return std::nullopt;
}

inline bool contains(const std::vector<std::string>& v, const std::string& s)
{
    return std::find(v.begin(), v.end(), s) != v.end();
}

inline MarkerFrame filterSites(const MarkerFrame& frame, const std::optional<std::vector<std::string>>& sites)
{
    if (!sites) return frame;
    MarkerFrame out;
    out.id = frame.id;
    for (const auto& [name, t] : frame.targets)
        if (contains(*sites, name)) out.targets.emplace(name, t);
    return out;
}

inline MultiviewFrame filterSites(const MultiviewFrame& frame, const std::optional<std::vector<std::string>>& sites)
{
    if (!sites) return frame;
    MultiviewFrame out;
    out.id = frame.id;
    for (const auto& view : frame.views) {
        CameraDetections v;
        v.camera = view.camera;
        for (const auto& [name, d] : view.detections)
            if (contains(*sites, name)) v.detections.emplace(name, d);
        out.views.push_back(std::move(v));
    }
    return out;
}

inline PoseState warmStartPose(const Skeleton& skel, const SolveConfig& cfg, const std::optional<Vec3>& centroid)
{
    PoseState pose = cfg.warmStart.initial.value_or(PoseState::zero(skel));
    checkPose(skel, pose);
    if (cfg.warmStart.recenterRoot && centroid) {
        const int qi = skel.qIndex(0);
        pose.q.segment<3>(qi) = *centroid - bodyScale(skel, pose, 0) * skel.body(0).translation;
    }
    return clampToLimits(skel, pose);
}

/// Shared driver; makeObjective(stage, sites) returns a callable
/// (pose, layout, wantJacobian) -> ResidualBlock.
template <class MakeObjective>
SolveReport runStagedImpl(const Skeleton& skel, const SolveConfig& cfg, PoseState pose, MakeObjective makeObjective)
{
    const auto start = std::chrono::steady_clock::now();
    SolveReport report;
    for (const auto& stage : cfg.stages) {
        StageTrace trace;
        trace.name = stage.name;
        const ParamLayout layout(skel, stageMask(skel, stage));
        if (layout.size() == 0) {
            report.diagnostics.push_back("stage '" + stage.name + "': no active parameters, skipped");
            report.stages.push_back(std::move(trace));
            continue;
        }
        PoseProblem problem(skel, makeObjective(stage, stageSites(skel, stage)), layout, cfg.limitStiffness);
        pose = runLevenbergMarquardt(problem, std::move(pose), stage.iterations, stage.damping, cfg, trace);
        if (trace.accepted == 0 && !trace.stationary) {
            report.converged = false;
            report.diagnostics.push_back("stage '" + stage.name + "': all " + std::to_string(trace.rejected) +
                                         " steps rejected (start loss " + std::to_string(trace.startLoss) + ")");
        }
        report.finalLoss = trace.endLoss;
        report.stages.push_back(std::move(trace));
    }
    report.finalPose = std::move(pose);
    report.wallTime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

inline std::optional<Vec3> targetCentroid(const MarkerFrame& frame)
{
    Vec3 sum = Vec3::Zero();
    int n = 0;
    for (const auto& [name, t] : frame.targets) {
        if (t.confidence > 0.0) {
            sum += t.position;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return Vec3(sum / n);
}

}  // namespace detail

/// Staged monocular fit of the skeleton to 3D marker targets.
inline SolveReport runStaged(const Skeleton& skel, const MarkerFrame& frame, const SolveConfig& cfg)
{
    cfg.validate();
    validateFrame(frame);
    for (const auto& [name, t] : frame.targets) skel.siteIndex(name);

    const PoseState start = detail::warmStartPose(skel, cfg, detail::targetCentroid(frame));
    return detail::runStagedImpl(skel, cfg, start, [&](const StageSpec& stage, const auto& sites) {
        return [&skel, f = detail::filterSites(frame, sites), reg = stage.offsetReg](
                   const PoseState& pose, const ParamLayout& layout, bool wantJacobian) {
            return markerResiduals(skel, pose, f, layout.mask(), reg, wantJacobian);
        };
    });
}

/// Staged multiview fit to 2D detections. The frame's confidences are used
/// as-is; see solveMultiview for the full preprocessing pipeline.
inline SolveReport runStaged(const Skeleton& skel, const MultiviewFrame& frame, const CameraRig& rig,
                             const SolveConfig& cfg, std::optional<Vec3> rootCentroid = std::nullopt)
{
    cfg.validate();
    rig.validate();
    validateFrame(frame);
    for (const auto& view : frame.views) {
        rig.camera(view.camera);
        for (const auto& [name, d] : view.detections) skel.siteIndex(name);
    }
    if (cfg.warmStart.recenterRoot && !rootCentroid) {
        const auto consensus = applyConsensusWeights(rig, frame, cfg.preprocessing.kernelWidthPx);
        if (!consensus.points.empty()) {
            Vec3 sum = Vec3::Zero();
            for (const auto& [name, p] : consensus.points) sum += p;
            rootCentroid = sum / static_cast<double>(consensus.points.size());
        }
    }

    const PoseState start = detail::warmStartPose(skel, cfg, rootCentroid);
    return detail::runStagedImpl(skel, cfg, start, [&](const StageSpec& stage, const auto& sites) {
        return [&skel, &rig, f = detail::filterSites(frame, sites), reg = stage.offsetReg](
                   const PoseState& pose, const ParamLayout& layout, bool wantJacobian) {
            ResidualBlock b = reprojectionResiduals(skel, pose, f, rig, layout.mask(), wantJacobian);
            b.append(offsetRegularizer(skel, pose, layout, reg, wantJacobian));
            return b;
        };
    });
}

struct MultiviewSolve {
    SolveReport report;
    /// Frame after cutoff, image-bounds and consensus weighting.
    MultiviewFrame weighted;
    DetectionFilterStats filtered;
    int consensusSkipped = 0;
};

/// Full multiview pipeline: zero low-confidence and out-of-image detections,
/// downweight inconsistent cameras by robust triangulation, warm start at the
/// triangulated centroid, then run the staged solve.
inline MultiviewSolve solveMultiview(const Skeleton& skel, const MultiviewFrame& frame, const CameraRig& rig,
                                     const SolveConfig& cfg)
{
    cfg.validate();
    rig.validate();
    MultiviewSolve out;
    out.weighted = filterDetections(rig, frame, cfg.preprocessing.confidenceCutoff, &out.filtered);
    std::optional<Vec3> centroid;
    if (cfg.preprocessing.consensusWeighting || cfg.warmStart.recenterRoot) {
        const auto consensus = applyConsensusWeights(rig, out.weighted, cfg.preprocessing.kernelWidthPx);
        if (cfg.preprocessing.consensusWeighting) {
            out.weighted = consensus.weighted;
            out.consensusSkipped = consensus.skipped;
        }
        if (!consensus.points.empty()) {
            Vec3 sum = Vec3::Zero();
            for (const auto& [name, p] : consensus.points) sum += p;
            centroid = sum / static_cast<double>(consensus.points.size());
        }
    }
    out.report = runStaged(skel, out.weighted, rig, cfg, centroid);
    return out;
}

}  // namespace kinefit
