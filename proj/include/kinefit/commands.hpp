#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kinefit/cameras.hpp"
#include "kinefit/io.hpp"
#include "kinefit/lm_solver.hpp"
#include "kinefit/mapping.hpp"
#include "kinefit/metrics.hpp"
#include "kinefit/parallel.hpp"
#include "kinefit/synth.hpp"

namespace kinefit::cli {

namespace fs = std::filesystem;
using io::Json;

inline constexpr const char* kToolVersion = "0.1.0";

struct CommonOptions {
    fs::path out;
    std::optional<fs::path> config;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool continueOnError = false;
};

//------------------------------------------------------------------------------
// Run bookkeeping
//------------------------------------------------------------------------------

/// Collects manifest content; written next to the outputs whether the run
/// succeeds or fails.
class Run {
public:
    Run(std::string command, const CommonOptions& common, std::ostream& log)
        : command_(std::move(command)), common_(common), log_(log)
    {
        if (common_.out.empty()) throw ConfigError("an output directory is required (--out)");
        if (common_.jobs < 1) throw ConfigError("--jobs must be at least 1");
        fs::create_directories(common_.out);
        manifest_["command"] = command_;
        manifest_["tool_version"] = kToolVersion;
        manifest_["timestamp"] = timestamp();
        manifest_["output_dir"] = common_.out.string();
        manifest_["seed"] = common_.seed;
        manifest_["jobs"] = common_.jobs;
        manifest_["continue_on_error"] = common_.continueOnError;
        manifest_["inputs"] = Json::object();
        manifest_["config_file"] = common_.config ? Json(common_.config->string()) : Json(nullptr);
        manifest_["config_overrides"] = nullptr;
        manifest_["warnings"] = Json::array();
        manifest_["outputs"] = Json::array();
    }

    void input(const std::string& name, const fs::path& path) { manifest_["inputs"][name] = path.string(); }
    Json& manifest() { return manifest_; }
    const fs::path& out() const { return common_.out; }
    std::ostream& log() { return log_; }

    void warn(const std::string& msg)
    {
        std::lock_guard lock(mutex_);
        log_ << "warning: " << msg << "\n";
        manifest_["warnings"].push_back(msg);
    }

    /// Writes a primary output relative to the output directory.
    void write(const fs::path& relative, const std::string& content)
    {
        io::writeFileAtomic(common_.out / relative, content);
        std::lock_guard lock(mutex_);
        outputs_.insert(relative.generic_string());
    }

    /// Reads the config file if any and records its content.
    std::optional<Json> configJson()
    {
        if (!common_.config) return std::nullopt;
        const std::string text = io::readFile(*common_.config);
        Json j = io::parseJson(text, common_.config->string());
        manifest_["config_overrides"] = j;
        return j;
    }

    int finish(int exitCode, const std::string& error = {})
    {
        manifest_["status"] = exitCode == 0 ? "ok" : "failed";
        manifest_["exit_code"] = exitCode;
        if (!error.empty()) manifest_["error"] = error;
        Json outs = Json::array();
        for (const auto& o : outputs_) outs.push_back(o);
        manifest_["outputs"] = outs;
        io::writeFileAtomic(common_.out / "manifest.json", manifest_.dump(2) + "\n");
        return exitCode;
    }

private:
    static std::string timestamp()
    {
        const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&now, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::string command_;
    CommonOptions common_;
    std::ostream& log_;
    Json manifest_ = Json::object();
    std::set<std::string> outputs_;
    std::mutex mutex_;
};

/// Runs body inside a manifest-writing frame. Errors are reported on the log,
/// recorded in the manifest and turned into exit code 1.
template <class Body>
int guarded(const std::string& command, const CommonOptions& common, std::ostream& log, Body&& body)
{
    std::optional<Run> run;
    try {
        run.emplace(command, common, log);
        return run->finish(body(*run));
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        if (run) {
            try {
                run->finish(1, e.what());
            } catch (const std::exception& e2) {
                log << "error: could not write manifest: " << e2.what() << "\n";
            }
        }
        return 1;
    }
}

/// Frame ids become file names; anything outside [A-Za-z0-9._-] maps to '_'.
inline std::string safeFileName(const std::string& id)
{
    std::string s = id;
    for (char& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
    if (s.empty() || s == "." || s == "..") s = "_" + s;
    return s;
}

inline Json reportToJson(const std::string& frame, const SolveReport& r)
{
    Json stages = Json::array();
    for (const auto& s : r.stages) {
        Json its = Json::array();
        for (const auto& it : s.iterations)
            its.push_back({{"iteration", it.iteration},
                           {"loss", it.loss},
                           {"step_norm", it.stepNorm},
                           {"lambda", it.lambda},
                           {"accepted", it.accepted}});
        stages.push_back({{"name", s.name},
                          {"start_loss", s.startLoss},
                          {"end_loss", s.endLoss},
                          {"accepted", s.accepted},
                          {"rejected", s.rejected},
                          {"stationary", s.stationary},
                          {"early_exit", s.earlyExit},
                          {"iterations", its}});
    }
    return {{"frame", frame},
            {"converged", r.converged},
            {"final_loss", r.finalLoss},
            {"stages", stages},
            {"diagnostics", r.diagnostics}};
}

inline Skeleton loadSkeletonFile(Run& run, const fs::path& path)
{
    run.input("skeleton", path);
    return io::loadSkeleton(io::readFile(path), path.string());
}

/// Throws listing every site that the skeleton does not define.
template <class Sites>
void requireKnownSites(const Skeleton& skel, const Sites& names, const std::string& source)
{
    std::string missing;
    for (const auto& n : names)
        if (!skel.findSite(n)) missing += (missing.empty() ? "" : ", ") + n;
    if (!missing.empty()) throw LookupError(source + ": sites not defined by the skeleton: " + missing);
}

struct FrameOutcome {
    bool ok = false;
    std::string error;
    SolveReport report;
    std::map<std::string, double> extra;
};

/// Solves frames in parallel, writes per-frame reports, poses.csv and
/// summary.csv in frame order. Returns the exit code.
template <class Solve>
int solveFrames(Run& run, const Skeleton& skel, const std::vector<std::string>& ids, int jobs,
                bool continueOnError, const std::vector<std::string>& extraColumns, Solve&& solve)
{
    std::vector<FrameOutcome> outcomes(ids.size());
    parallelFor(ids.size(), jobs, [&](std::size_t f) {
        FrameOutcome& o = outcomes[f];
        try {
            solve(f, o);
            o.ok = true;
            run.write(fs::path("reports") / (safeFileName(ids[f]) + ".json"),
                      reportToJson(ids[f], o.report).dump(2) + "\n");
        } catch (const std::exception& e) {
            o.ok = false;
            o.error = e.what();
        }
    });

    std::vector<io::FramePose> poses;
    std::string summary = "frame,status,converged,final_loss";
    for (const auto& c : extraColumns) summary += "," + c;
    summary += "\n";
    int failed = 0;
    int converged = 0;
    for (std::size_t f = 0; f < ids.size(); ++f) {
        const FrameOutcome& o = outcomes[f];
        if (!o.ok) {
            ++failed;
            run.warn("frame '" + ids[f] + "' failed: " + o.error);
            summary += ids[f] + ",failed,,";
            for (std::size_t k = 0; k < extraColumns.size(); ++k) summary += ",";
            summary += "\n";
            continue;
        }
        converged += o.report.converged ? 1 : 0;
        poses.push_back({ids[f], o.report.finalPose});
        summary += ids[f] + ",ok," + (o.report.converged ? "true" : "false") + "," +
                   io::formatDouble(o.report.finalLoss);
        for (const auto& c : extraColumns) {
            auto it = o.extra.find(c);
            summary += "," + (it == o.extra.end() ? std::string() : io::formatDouble(it->second));
        }
        summary += "\n";
    }
    run.write("poses.csv", io::savePoses(skel, poses));
    run.write("summary.csv", summary);
    run.manifest()["frames"] = {{"total", ids.size()},
                                {"succeeded", ids.size() - static_cast<std::size_t>(failed)},
                                {"failed", failed},
                                {"converged", converged}};
    if (failed > 0 && !continueOnError) {
        run.log() << "error: " << failed << " of " << ids.size() << " frames failed\n";
        return 1;
    }
    if (failed == static_cast<int>(ids.size())) return 1;
    return 0;
}

//------------------------------------------------------------------------------
// solve-mono
//------------------------------------------------------------------------------

struct SolveMonoArgs {
    fs::path skeleton;
    fs::path markers;
};

inline int cmdSolveMono(const SolveMonoArgs& args, const CommonOptions& common, std::ostream& log = std::cerr)
{
    return guarded("solve-mono", common, log, [&](Run& run) {
        const Skeleton skel = loadSkeletonFile(run, args.skeleton);
        run.input("markers", args.markers);
        const auto frames = io::loadMarkerFrames(io::readFile(args.markers), args.markers.string());
        if (frames.empty()) throw SolveInputError(args.markers.string() + ": no marker frames");
        std::set<std::string> sites;
        for (const auto& f : frames)
            for (const auto& [s, t] : f.targets) sites.insert(s);
        requireKnownSites(skel, sites, args.markers.string());

        SolveConfig cfg = defaultMonocularConfig(skel);
        if (auto j = run.configJson()) cfg = io::configFromJson(*j, cfg);
        cfg.validate();
        run.manifest()["config_source"] = common.config ? "file" : "defaults";
        run.manifest()["effective_config"] = io::configToJson(cfg);

        std::vector<std::string> ids;
        for (const auto& f : frames) ids.push_back(f.id);
        return solveFrames(run, skel, ids, common.jobs, common.continueOnError, {"marker_rmse_mm"},
                           [&](std::size_t f, FrameOutcome& o) {
                               o.report = runStaged(skel, frames[f], cfg);
                               const auto fk = forwardKinematics(skel, o.report.finalPose);
                               double sum = 0.0;
                               double w = 0.0;
                               for (const auto& [s, t] : frames[f].targets) {
                                   sum += t.confidence * (fk.at(s) - t.position).squaredNorm();
                                   w += t.confidence;
                               }
                               o.extra["marker_rmse_mm"] = w > 0.0 ? std::sqrt(sum / w) * 1000.0 : 0.0;
                           });
    });
}

//------------------------------------------------------------------------------
// solve-multiview
//------------------------------------------------------------------------------

struct SolveMultiviewArgs {
    fs::path skeleton;
    fs::path detections;
    fs::path rig;
};

inline int cmdSolveMultiview(const SolveMultiviewArgs& args, const CommonOptions& common,
                             std::ostream& log = std::cerr)
{
    return guarded("solve-multiview", common, log, [&](Run& run) {
        const Skeleton skel = loadSkeletonFile(run, args.skeleton);
        run.input("detections", args.detections);
        run.input("rig", args.rig);
        const CameraRig rig = io::loadRig(io::readFile(args.rig), args.rig.string());
        if (rig.cameras.size() < 2)
            throw InsufficientViewsError(args.rig.string() + ": multiview solve needs at least 2 cameras, got " +
                                         std::to_string(rig.cameras.size()));
        const auto frames = io::loadDetections(io::readFile(args.detections), args.detections.string());
        if (frames.empty()) throw SolveInputError(args.detections.string() + ": no detection frames");
        std::set<std::string> sites;
        std::set<std::string> unknownCams;
        for (const auto& f : frames)
            for (const auto& v : f.views) {
                if (!std::any_of(rig.cameras.begin(), rig.cameras.end(),
                                 [&](const Camera& c) { return c.id == v.camera; }))
                    unknownCams.insert(v.camera);
                for (const auto& [s, d] : v.detections) sites.insert(s);
            }
        requireKnownSites(skel, sites, args.detections.string());
        if (!unknownCams.empty()) {
            std::string list;
            for (const auto& c : unknownCams) list += (list.empty() ? "" : ", ") + c;
            throw LookupError(args.detections.string() + ": cameras not in the rig: " + list);
        }

        SolveConfig cfg = defaultMultiviewConfig(skel);
        if (auto j = run.configJson()) cfg = io::configFromJson(*j, cfg);
        cfg.validate();
        run.manifest()["config_source"] = common.config ? "file" : "defaults";
        run.manifest()["effective_config"] = io::configToJson(cfg);

        std::vector<std::string> ids;
        for (const auto& f : frames) ids.push_back(f.id);
        std::vector<DetectionFilterStats> stats(frames.size());
        std::vector<int> skipped(frames.size(), 0);
        const int code = solveFrames(
            run, skel, ids, common.jobs, common.continueOnError, {"gc_10px", "zeroed_low_confidence", "zeroed_outside"},
            [&](std::size_t f, FrameOutcome& o) {
                MultiviewSolve mv = solveMultiview(skel, frames[f], rig, cfg);
                stats[f] = mv.filtered;
                skipped[f] = mv.consensusSkipped;
                const MultiviewFrame filtered = filterDetections(rig, frames[f], cfg.preprocessing.confidenceCutoff);
                o.extra["gc_10px"] = gcAtThreshold(rig, forwardKinematics(skel, mv.report.finalPose), filtered, 10.0);
                o.extra["zeroed_low_confidence"] = mv.filtered.belowCutoff;
                o.extra["zeroed_outside"] = mv.filtered.outsideImage;
                o.report = std::move(mv.report);
            });
        long below = 0;
        long outside = 0;
        long skip = 0;
        for (std::size_t f = 0; f < frames.size(); ++f) {
            below += stats[f].belowCutoff;
            outside += stats[f].outsideImage;
            skip += skipped[f];
        }
        run.manifest()["preprocessing"] = {{"confidence_cutoff", cfg.preprocessing.confidenceCutoff},
                                           {"zeroed_below_cutoff", below},
                                           {"zeroed_outside_image", outside},
                                           {"consensus_skipped_sites", skip}};
        log << "zeroed " << below << " detections below confidence " << cfg.preprocessing.confidenceCutoff << " and "
            << outside << " outside the image\n";
        return code;
    });
}

//------------------------------------------------------------------------------
// triangulate
//------------------------------------------------------------------------------

struct TriangulateArgs {
    fs::path detections;
    fs::path rig;
    double kernelWidthPx = kDefaultKernelWidthPx;
    double confidenceCutoff = kConfidenceCutoff;
};

inline int cmdTriangulate(const TriangulateArgs& args, const CommonOptions& common, std::ostream& log = std::cerr)
{
    return guarded("triangulate", common, log, [&](Run& run) {
        run.input("detections", args.detections);
        run.input("rig", args.rig);
        if (!(args.kernelWidthPx > 0.0)) throw ConfigError("kernel width must be positive");
        const CameraRig rig = io::loadRig(io::readFile(args.rig), args.rig.string());
        const auto frames = io::loadDetections(io::readFile(args.detections), args.detections.string());
        if (frames.empty()) throw SolveInputError(args.detections.string() + ": no detection frames");
        run.manifest()["kernel_width_px"] = args.kernelWidthPx;
        run.manifest()["confidence_cutoff"] = args.confidenceCutoff;

        std::vector<ConsensusResult> results(frames.size());
        parallelFor(frames.size(), common.jobs, [&](std::size_t f) {
            results[f] = applyConsensusWeights(rig, filterDetections(rig, frames[f], args.confidenceCutoff),
                                               args.kernelWidthPx);
        });

        std::vector<MarkerFrame> points;
        std::string weights = "frame,camera,site,weight\n";
        std::map<std::string, std::pair<double, long>> perCamera;
        for (const auto& c : rig.cameras) perCamera[c.id] = {0.0, 0};
        long skipped = 0;
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const ConsensusResult& r = results[f];
            skipped += r.skipped;
            MarkerFrame mf;
            mf.id = frames[f].id;
            std::map<std::string, std::pair<double, int>> siteWeight;
            for (const auto& view : r.weighted.views)
                for (const auto& [site, d] : view.detections) {
                    if (!r.points.contains(site)) continue;
                    weights += frames[f].id + "," + view.camera + "," + site + "," + io::formatDouble(d.confidence) + "\n";
                    auto& [sum, n] = perCamera[view.camera];
                    sum += d.confidence;
                    ++n;
                    siteWeight[site].first += d.confidence;
                    ++siteWeight[site].second;
                }
            for (const auto& [site, p] : r.points)
                mf.targets.emplace(site, MarkerTarget{p, siteWeight[site].first / siteWeight[site].second});
            points.push_back(std::move(mf));
        }
        std::string cams = "camera,mean_weight,observations\n";
        for (const auto& c : rig.cameras) {
            const auto& [sum, n] = perCamera[c.id];
            cams += c.id + "," + (n > 0 ? io::formatDouble(sum / static_cast<double>(n)) : std::string()) + "," +
                    std::to_string(n) + "\n";
        }
        run.write("points.csv", io::saveMarkerFrames(points));
        run.write("weights.csv", weights);
        run.write("camera_weights.csv", cams);
        run.manifest()["frames"] = {{"total", frames.size()}};
        run.manifest()["skipped_sites"] = skipped;
        return 0;
    });
}

//------------------------------------------------------------------------------
// evaluate
//------------------------------------------------------------------------------

struct EvaluateArgs {
    fs::path predicted;
    fs::path reference;
    fs::path skeleton;
    fs::path regions;
    std::optional<fs::path> detections;
    std::optional<fs::path> rig;
};

/// Metric table: one row per frame, then mean and std rows. Empty cells mark
/// values that could not be computed for a frame.
struct MetricTable {
    std::vector<std::string> columns;
    std::vector<std::string> frames;
    std::vector<std::vector<std::optional<double>>> values;  ///< [frame][column]
    std::vector<Aggregate> aggregates;                       ///< per column
};

inline std::string metricTableCsv(const MetricTable& t)
{
    std::string out = "frame";
    for (const auto& c : t.columns) out += "," + c;
    out += "\n";
    auto cell = [](const std::optional<double>& v) { return v ? io::formatDouble(*v) : std::string(); };
    for (std::size_t f = 0; f < t.frames.size(); ++f) {
        out += t.frames[f];
        for (const auto& v : t.values[f]) out += "," + cell(v);
        out += "\n";
    }
    out += "mean";
    for (const auto& a : t.aggregates) out += "," + (a.count ? io::formatDouble(a.mean) : std::string());
    out += "\nstd";
    for (const auto& a : t.aggregates) out += "," + (a.count ? io::formatDouble(a.std) : std::string());
    out += "\n";
    return out;
}

/// Bars of column means with population-std whiskers.
inline std::string barChartSvg(const std::vector<std::string>& labels, const std::vector<Aggregate>& values,
                               const std::string& title)
{
    const double width = 120.0 * static_cast<double>(std::max<std::size_t>(labels.size(), 1)) + 80.0;
    const double height = 320.0;
    const double base = 260.0;
    double top = 0.0;
    for (const auto& v : values) top = std::max(top, v.mean + v.std);
    if (!(top > 0.0)) top = 1.0;
    const double k = 200.0 / top;
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + io::formatDouble(width) + "\" height=\"" +
                    io::formatDouble(height) + "\">\n";
    s += "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
    s += "<line x1=\"50\" y1=\"" + io::formatDouble(base) + "\" x2=\"" + io::formatDouble(width - 10.0) + "\" y2=\"" +
         io::formatDouble(base) + "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double x = 60.0 + 120.0 * static_cast<double>(i);
        const double h = values[i].mean * k;
        s += "<rect x=\"" + io::formatDouble(x) + "\" y=\"" + io::formatDouble(base - h) +
             "\" width=\"80\" height=\"" + io::formatDouble(h) + "\" fill=\"#4a7ab5\"/>\n";
        const double cx = x + 40.0;
        const double lo = base - (values[i].mean - values[i].std) * k;
        const double hi = base - (values[i].mean + values[i].std) * k;
        s += "<line x1=\"" + io::formatDouble(cx) + "\" y1=\"" + io::formatDouble(lo) + "\" x2=\"" +
             io::formatDouble(cx) + "\" y2=\"" + io::formatDouble(hi) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + io::formatDouble(x) + "\" y=\"" + io::formatDouble(base + 16.0) +
             "\" font-family=\"sans-serif\" font-size=\"10\">" + labels[i] + "</text>\n";
        s += "<text x=\"" + io::formatDouble(x) + "\" y=\"" + io::formatDouble(base - h - 6.0) +
             "\" font-family=\"sans-serif\" font-size=\"10\">" + io::formatDouble(values[i].mean) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

/// Computes the metric table for paired predicted and reference poses.
/// Frames present in only one input are returned in `unmatched`.
inline MetricTable evaluatePoses(const Skeleton& skel, const std::vector<io::FramePose>& pred,
                                 const std::vector<io::FramePose>& ref, const io::RegionSet& regions,
                                 const std::vector<MultiviewFrame>* detections, const CameraRig* rig,
                                 std::vector<std::string>* unmatched = nullptr,
                                 std::map<std::string, double>* perJoint = nullptr)
{
    std::map<std::string, const PoseState*> refById;
    for (const auto& r : ref) refById[r.frame] = &r.pose;
    std::map<std::string, const MultiviewFrame*> detById;
    if (detections)
        for (const auto& d : *detections) detById[d.id] = &d;

    MetricTable t;
    for (const auto& r : regions.regions) t.columns.push_back(r.name + "_pa_mm");
    t.columns.push_back("angle_mae_deg");
    const bool gc = detections && rig;
    if (gc) t.columns.push_back("gc_10px");

    std::set<std::string> predIds;
    std::vector<PoseState> pairedPred;
    std::vector<PoseState> pairedRef;
    for (const auto& p : pred) {
        predIds.insert(p.frame);
        auto it = refById.find(p.frame);
        if (it == refById.end()) {
            if (unmatched) unmatched->push_back(p.frame);
            continue;
        }
        const PoseState& rp = *it->second;
        const auto fp = forwardKinematics(skel, p.pose);
        const auto fr = forwardKinematics(skel, rp);
        std::vector<std::optional<double>> row;
        for (const auto& region : regions.regions) {
            try {
                row.push_back(paMpjpe(fp, fr, region).meanMm);
            } catch (const EvaluationError&) {
                row.push_back(std::nullopt);
            }
        }
        const auto angles = jointAngleErrors(skel, p.pose, rp, regions.angleCoordinates, regions.ballMetric);
        double sum = 0.0;
        for (const auto& [name, e] : angles) sum += e;
        row.push_back(angles.empty() ? std::nullopt : std::optional<double>(sum / static_cast<double>(angles.size())));
        if (gc) {
            auto d = detById.find(p.frame);
            std::optional<double> value;
            if (d != detById.end()) {
                try {
                    value = gcAtThreshold(*rig, fp, *d->second, 10.0);
                } catch (const EvaluationError&) {
                }
            }
            row.push_back(value);
        }
        t.frames.push_back(p.frame);
        t.values.push_back(std::move(row));
        pairedPred.push_back(p.pose);
        pairedRef.push_back(rp);
    }
    if (unmatched)
        for (const auto& r : ref)
            if (!predIds.contains(r.frame)) unmatched->push_back(r.frame);

    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        std::vector<double> col;
        for (const auto& row : t.values)
            if (row[c]) col.push_back(*row[c]);
        t.aggregates.push_back(aggregate(col));
    }
    if (perJoint && !pairedPred.empty())
        *perJoint = jointAngleMAE(skel, pairedPred, pairedRef, regions.angleCoordinates, regions.ballMetric);
    return t;
}

inline int cmdEvaluate(const EvaluateArgs& args, const CommonOptions& common, std::ostream& log = std::cerr)
{
    return guarded("evaluate", common, log, [&](Run& run) {
        const Skeleton skel = loadSkeletonFile(run, args.skeleton);
        run.input("predicted", args.predicted);
        run.input("reference", args.reference);
        run.input("regions", args.regions);
        const auto pred = io::loadPoses(skel, io::readFile(args.predicted), args.predicted.string());
        const auto ref = io::loadPoses(skel, io::readFile(args.reference), args.reference.string());
        const auto regions = io::loadRegions(io::readFile(args.regions), args.regions.string());
        for (const auto& r : regions.regions) {
            requireKnownSites(skel, r.siteNames, args.regions.string());
            requireKnownSites(skel, r.reportSites, args.regions.string());
        }
        for (const auto& c : regions.angleCoordinates) skel.coordinateIndex(c);

        std::optional<std::vector<MultiviewFrame>> detections;
        std::optional<CameraRig> rig;
        if (args.detections.has_value() != args.rig.has_value())
            throw ConfigError("GC evaluation needs both --detections and --rig");
        if (args.detections) {
            run.input("detections", *args.detections);
            run.input("rig", *args.rig);
            detections = io::loadDetections(io::readFile(*args.detections), args.detections->string());
            rig = io::loadRig(io::readFile(*args.rig), args.rig->string());
        }

        std::vector<std::string> unmatched;
        std::map<std::string, double> perJoint;
        const MetricTable t = evaluatePoses(skel, pred, ref, regions, detections ? &*detections : nullptr,
                                            rig ? &*rig : nullptr, &unmatched, &perJoint);
        for (const auto& id : unmatched) run.warn("frame '" + id + "' has no counterpart and was skipped");
        if (t.frames.empty()) throw EvaluationError("no frame ids match between predicted and reference poses");
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            const std::size_t missing = t.frames.size() - t.aggregates[c].count;
            if (missing > 0)
                run.warn(t.columns[c] + ": " + std::to_string(missing) + " frames dropped (metric undefined)");
        }

        run.write("metrics.csv", metricTableCsv(t));
        std::string joints = "coordinate,mae_deg\n";
        for (const auto& [name, v] : perJoint) joints += name + "," + io::formatDouble(v) + "\n";
        run.write("joint_angles.csv", joints);
        run.write("metrics.svg", barChartSvg(t.columns, t.aggregates, "mean +/- std over " +
                                                                          std::to_string(t.frames.size()) + " frames"));
        run.manifest()["frames"] = {{"evaluated", t.frames.size()}, {"skipped", unmatched.size()}};
        return 0;
    });
}

//------------------------------------------------------------------------------
// synth
//------------------------------------------------------------------------------

struct SynthArgs {
    /// Skeleton file; used when fixture is empty.
    std::optional<fs::path> skeleton;
    /// Built-in skeleton: "two-hand" or "chain:<links>".
    std::string fixture;
    int frames = 1;
};

inline Skeleton builtinFixture(const std::string& name)
{
    if (name == "two-hand") return synth::makeTwoHandFixture();
    if (name.starts_with("chain:")) {
        int links = 0;
        const std::string n = name.substr(6);
        const auto res = std::from_chars(n.data(), n.data() + n.size(), links);
        if (res.ec != std::errc() || res.ptr != n.data() + n.size() || links < 1)
            throw ConfigError("invalid chain fixture '" + name + "'");
        return synth::makeHingeChain(links, 1.0, 1.0);
    }
    throw ConfigError("unknown fixture '" + name + "' (expected two-hand or chain:<links>)");
}

inline synth::SceneSpec sceneSpecFromJson(const Json& j, synth::SceneSpec s)
{
    static const std::vector<std::string> known = {
        "limit_fraction", "root_center",  "root_translation_range", "root_rotation_range", "unlimited_range",
        "scale_jitter",   "marker_noise_mm", "pixel_noise",         "dropout",             "camera_dropout",
        "multiview",      "rig",          "outlier",                "confidence"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ParseError("unknown scene key '" + key + "'");
    s.limitFraction = j.value("limit_fraction", s.limitFraction);
    if (j.contains("root_center")) s.rootCenter = io::vecFromJson(j.at("root_center"));
    s.rootTranslationRange = j.value("root_translation_range", s.rootTranslationRange);
    s.rootRotationRange = j.value("root_rotation_range", s.rootRotationRange);
    s.unlimitedRange = j.value("unlimited_range", s.unlimitedRange);
    s.scaleJitter = j.value("scale_jitter", s.scaleJitter);
    s.markerNoiseMm = j.value("marker_noise_mm", s.markerNoiseMm);
    s.pixelNoise = j.value("pixel_noise", s.pixelNoise);
    s.dropout = j.value("dropout", s.dropout);
    if (j.contains("camera_dropout"))
        for (const auto& [cam, p] : j.at("camera_dropout").items()) s.cameraDropout[std::stoi(cam)] = p.get<double>();
    s.multiview = j.value("multiview", s.multiview);
    if (j.contains("rig")) {
        const Json& r = j.at("rig");
        s.rig.cameras = r.value("cameras", s.rig.cameras);
        s.rig.radius = r.value("radius", s.rig.radius);
        s.rig.height = r.value("height", s.rig.height);
        if (r.contains("look_at")) s.rig.lookAt = io::vecFromJson(r.at("look_at"));
        s.rig.focal = r.value("focal", s.rig.focal);
        s.rig.width = r.value("width", s.rig.width);
        s.rig.height_px = r.value("height_px", s.rig.height_px);
    }
    if (j.contains("outlier")) {
        s.outlier.camera = j.at("outlier").value("camera", s.outlier.camera);
        s.outlier.displacementPx = j.at("outlier").value("displacement_px", s.outlier.displacementPx);
    }
    s.confidence = j.value("confidence", s.confidence);
    return s;
}

inline int cmdSynth(const SynthArgs& args, const CommonOptions& common, std::ostream& log = std::cerr)
{
    return guarded("synth", common, log, [&](Run& run) {
        if (args.fixture.empty() == !args.skeleton.has_value())
            throw ConfigError("give exactly one of --skeleton or --fixture");
        const Skeleton skel = args.skeleton ? loadSkeletonFile(run, *args.skeleton) : builtinFixture(args.fixture);
        if (!args.fixture.empty()) run.manifest()["fixture"] = args.fixture;
        synth::SceneSpec spec;
        if (auto j = run.configJson()) spec = io::withJsonContext(common.config->string(), [&] {
            return sceneSpecFromJson(*j, spec);
        });
        spec.seed = common.seed;
        run.manifest()["frames_requested"] = args.frames;

        const synth::Scene scene = synth::generateScene(skel, spec, args.frames);
        std::vector<io::FramePose> truth;
        for (std::size_t f = 0; f < scene.truth.size(); ++f) truth.push_back({scene.markers[f].id, scene.truth[f]});
        run.write("skeleton.json", io::saveSkeleton(skel));
        run.write("truth_poses.csv", io::savePoses(skel, truth));
        run.write("markers.csv", io::saveMarkerFrames(scene.markers));
        if (spec.multiview) {
            run.write("detections.csv", io::saveDetections(scene.detections));
            run.write("rig.json", io::saveRig(scene.rig));
        }
        return 0;
    });
}

//------------------------------------------------------------------------------
// map-refine
//------------------------------------------------------------------------------

struct MapRefineArgs {
    fs::path skeleton;
    fs::path markers;
    fs::path correspondences;
    int rounds = 5;
    std::vector<std::string> refineSites;
    double tau = kDefaultWeightTau;
};

inline int cmdMapRefine(const MapRefineArgs& args, const CommonOptions& common, std::ostream& log = std::cerr)
{
    return guarded("map-refine", common, log, [&](Run& run) {
        const Skeleton skel = loadSkeletonFile(run, args.skeleton);
        run.input("markers", args.markers);
        run.input("correspondences", args.correspondences);
        const auto frames = io::loadMarkerFrames(io::readFile(args.markers), args.markers.string());
        const auto table = io::loadCorrespondences(io::readFile(args.correspondences), args.correspondences.string());
        std::vector<std::string> tableSites;
        for (const auto& e : table.entries) tableSites.push_back(e.site);
        requireKnownSites(skel, tableSites, args.correspondences.string());

        EmOptions opt;
        opt.tau = args.tau;
        opt.refineSites = args.refineSites;
        opt.jobs = common.jobs;
        if (auto j = run.configJson()) {
            SolveConfig base = defaultMonocularConfig(skel);
            opt.solve = io::configFromJson(*j, base);
        }
        run.manifest()["rounds"] = args.rounds;
        run.manifest()["tau"] = args.tau;
        run.manifest()["refine_sites"] = args.refineSites;

        const EmResult r = refineSitesEM(skel, frames, table, args.rounds, opt);
        for (const auto& s : r.unobserved) run.warn("site '" + s + "' has no observations and was left unchanged");

        std::string rounds = "round,weighted_residual\n0," + io::formatDouble(r.initialLoss) + "\n";
        for (std::size_t i = 0; i < r.roundLoss.size(); ++i)
            rounds += std::to_string(i + 1) + "," + io::formatDouble(r.roundLoss[i]) + "\n";
        std::string sites = "site,dx,dy,dz,moved_m,mean_residual_m,weight\n";
        for (const auto& e : r.table.entries) {
            const int s = skel.siteIndex(e.site);
            const Vec3 d = r.skeleton.site(s).offset - skel.site(s).offset;
            auto res = r.meanResidual.find(e.site);
            sites += e.site + "," + io::formatDouble(d.x()) + "," + io::formatDouble(d.y()) + "," +
                     io::formatDouble(d.z()) + "," + io::formatDouble(d.norm()) + "," +
                     (res == r.meanResidual.end() ? std::string() : io::formatDouble(res->second)) + "," +
                     io::formatDouble(e.weight) + "\n";
        }
        run.write("skeleton.json", io::saveSkeleton(r.skeleton));
        run.write("correspondences.csv", io::saveCorrespondences(r.table));
        run.write("em_rounds.csv", rounds);
        run.write("sites.csv", sites);
        run.manifest()["unobserved_sites"] = r.unobserved;
        return 0;
    });
}

}  // namespace kinefit::cli
