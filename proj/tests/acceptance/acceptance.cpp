// Acceptance checks. Prints one PASS/FAIL line per criterion.
//   kinefit_acceptance          run all
//   kinefit_acceptance 4 7      run the listed criteria

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <numbers>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>

#include "kinefit/commands.hpp"
#include "kinefit/fixtures.hpp"
#include "../support.hpp"

using namespace kinefit;
namespace fs = std::filesystem;

namespace {

// Noisy hinge MAE over the two-hand fixture, first verified run. The < 3 deg
// bound is below the estimator floor of this fixture (see README).
constexpr double kPinnedNoisyHingeMaeDeg = 3.791796;

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Timer {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path workDir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("kinefit_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

MarkerFrame targetsFor(const Skeleton& skel, const PoseState& pose)
{
    MarkerFrame f;
    f.id = "f";
    for (const auto& [name, p] : forwardKinematics(skel, pose)) f.targets.emplace(name, MarkerTarget{p, 1.0});
    return f;
}

double maxRotationalError(const Skeleton& skel, const PoseState& a, const PoseState& b)
{
    double worst = 0.0;
    for (int i = 0; i < skel.nq(); ++i)
        if (skel.isRotational(i)) worst = std::max(worst, std::abs(a.q[i] - b.q[i]));
    return worst;
}

AlignmentRegion allSites(const Skeleton& skel)
{
    AlignmentRegion r{"all", {}, {}};
    for (const auto& s : skel.sites()) r.siteNames.push_back(s.name);
    return r;
}

std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 1469598103934665603ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Hash over every primary output (file name and content), manifest excluded.
std::uint64_t outputHash(const fs::path& dir)
{
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, dir).generic_string() + '\0' + io::readFile(f) + '\0';
    return fnv1a(all);
}

//------------------------------------------------------------------------------

Outcome jacobianCorrectness()
{
    Timer timer;
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> dof(3, 20);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        synth::RandomSkeletonOptions opt;
        opt.articulatedDof = dof(rng);
        const Skeleton skel = synth::randomSkeleton(rng, opt);
        synth::SceneSpec spec;
        spec.scaleJitter = 0.2;
        PoseState pose = synth::samplePose(skel, spec, rng);
        std::uniform_real_distribution<double> u(-0.02, 0.02);
        for (Eigen::Index i = 0; i < pose.markerOffsets.size(); ++i) pose.markerOffsets.data()[i] = u(rng);
        std::vector<std::string> names;
        for (const auto& s : skel.sites()) names.push_back(s.name);
        const ParamMask mask = ParamMask::all(skel);
        worst = std::max(worst, oracle::maxRelativeError(poseJacobian(skel, pose, names, mask),
                                                         oracle::fdSiteJacobian(skel, pose, names, mask)));
    }
    const double t = timer.seconds();
    return {worst < 1e-4 && t < 30.0,
            "100 skeletons, worst relative error " + fmt("%.2e", worst) + ", " + fmt("%.1f", t) + " s"};
}

Outcome noiselessMonocular()
{
    Timer timer;
    const fs::path dir = workDir("ac2");
    double worstAngle = 0.0;
    double worstPa = 0.0;
    int scenes = 0;
    int failures = 0;
    auto run = [&](const Skeleton& skel, std::uint64_t seed) {
        synth::SceneSpec spec;
        spec.multiview = false;
        spec.seed = seed;
        const auto scene = synth::generateScene(skel, spec, 1);
        const fs::path sub = dir / std::to_string(scenes++);
        io::writeFileAtomic(sub / "skeleton.json", io::saveSkeleton(skel));
        io::writeFileAtomic(sub / "markers.csv", io::saveMarkerFrames(scene.markers));
        cli::CommonOptions common;
        common.out = sub / "out";
        std::ostringstream log;
        if (cli::cmdSolveMono({sub / "skeleton.json", sub / "markers.csv"}, common, log) != 0) {
            ++failures;
            return;
        }
        const auto poses = io::loadPoses(skel, io::readFile(sub / "out" / "poses.csv"));
        worstAngle = std::max(worstAngle, maxRotationalError(skel, poses[0].pose, scene.truth[0]));
        worstPa = std::max(worstPa, paMpjpe(forwardKinematics(skel, poses[0].pose),
                                            forwardKinematics(skel, scene.truth[0]), allSites(skel))
                                        .meanMm);
    };
    for (int seed = 0; seed < 49; ++seed) run(synth::makeHingeChain(2 + seed % 11, 0.3, 1.0), seed);
    run(synth::makeTwoHandFixture(), 7);
    const double t = timer.seconds();
    return {failures == 0 && worstAngle < 1e-3 && worstPa < 0.1 && t < 120.0,
            std::to_string(scenes) + " scenes, " + std::to_string(failures) + " failed, worst angle " +
                fmt("%.2e", worstAngle) + " rad, worst PA " + fmt("%.2e", worstPa) + " mm, " + fmt("%.1f", t) + " s"};
}

Outcome noisyMonocular()
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.multiview = false;
    spec.markerNoiseMm = 2.0;
    spec.seed = 2;
    const auto scene = synth::generateScene(skel, spec, 50);
    const SolveConfig cfg = defaultMonocularConfig(skel);
    std::vector<PoseState> solved(scene.markers.size());
    parallelFor(scene.markers.size(), static_cast<int>(std::max(1u, std::thread::hardware_concurrency())),
                [&](std::size_t f) { solved[f] = runStaged(skel, scene.markers[f], cfg).finalPose; });
    double sum = 0.0;
    long n = 0;
    for (std::size_t f = 0; f < solved.size(); ++f)
        for (int i = 0; i < skel.nq(); ++i)
            if (skel.body(skel.coordinateBody(i)).joint.kind == JointKind::Hinge) {
                sum += std::abs(solved[f].q[i] - scene.truth[f].q[i]) * kRadToDeg;
                ++n;
            }
    const double mae = sum / static_cast<double>(n);
    return {mae < 3.0, "hinge MAE " + fmt("%.6f", mae) + " deg over 50 frames (bound 3 deg, pinned " +
                           fmt("%.6f", kPinnedNoisyHingeMaeDeg) + " deg, drift " +
                           fmt("%.1e", mae - kPinnedNoisyHingeMaeDeg) + ")"};
}

Outcome multiview()
{
    const Skeleton skel = synth::makeTwoHandFixture();
    const SolveConfig cfg = defaultMultiviewConfig(skel);

    synth::SceneSpec clean;
    clean.seed = 41;
    const auto a = synth::generateScene(skel, clean, 1);
    const auto mvA = solveMultiview(skel, a.detections[0], a.rig, cfg);
    const double gcClean = gcAtThreshold(a.rig, forwardKinematics(skel, mvA.report.finalPose), a.detections[0]);
    const double angle = maxRotationalError(skel, mvA.report.finalPose, a.truth[0]);

    synth::SceneSpec dirty = clean;
    dirty.outlier = {3, 80.0};
    const auto b = synth::generateScene(skel, dirty, 1);
    const auto mvB = solveMultiview(skel, b.detections[0], b.rig, cfg);
    const std::string outlierId = b.rig.cameras[3].id;
    double weight = 0.0;
    int count = 0;
    MultiviewFrame rest = b.detections[0];
    rest.views.clear();
    for (std::size_t v = 0; v < b.detections[0].views.size(); ++v) {
        if (b.detections[0].views[v].camera != outlierId) {
            rest.views.push_back(b.detections[0].views[v]);
            continue;
        }
        for (const auto& [site, d] : mvB.weighted.views[v].detections) {
            weight += d.confidence;
            ++count;
        }
    }
    const double meanWeight = count ? weight / count : 1.0;
    const double gcRest = gcAtThreshold(b.rig, forwardKinematics(skel, mvB.report.finalPose), rest);
    return {gcClean == 1.0 && angle < 1e-3 && meanWeight < 1e-3 && gcRest >= 0.99,
            "clean GC " + fmt("%.4f", gcClean) + ", angle error " + fmt("%.2e", angle) +
                " rad; outlier camera mean weight " + fmt("%.2e", meanWeight) + ", GC over other 7 cameras " +
                fmt("%.4f", gcRest)};
}

Outcome stageSemantics()
{
    const Skeleton skel = synth::makeTwoHandFixture();
    synth::SceneSpec spec;
    spec.multiview = false;
    spec.seed = 5;
    spec.markerNoiseMm = 1.0;
    const auto scene = synth::generateScene(skel, spec, 1);
    const SolveConfig full = defaultMonocularConfig(skel);
    const PoseState start = detail::warmStartPose(skel, full, detail::targetCentroid(scene.markers[0]));

    SolveConfig one = full;
    one.stages.resize(1);
    const PoseState p1 = runStaged(skel, scene.markers[0], one).finalPose;
    bool stage1 = true;
    for (int i = 0; i < skel.nq(); ++i)
        if (!skel.isRootCoordinate(i)) stage1 = stage1 && bitwiseEqual(&p1.q[i], &start.q[i], 1);

    SolveConfig two = full;
    two.stages.resize(2);
    const PoseState p2 = runStaged(skel, scene.markers[0], two).finalPose;
    const bool stage2 = bitwiseEqual(p2.scales.data(), p1.scales.data(), p1.scales.size());

    const SolveConfig mv = defaultMultiviewConfig(skel);
    SolveConfig head = mv;
    head.stages.resize(3);
    synth::SceneSpec mspec;
    mspec.seed = 6;
    mspec.pixelNoise = 1.0;
    const auto mscene = synth::generateScene(skel, mspec, 1);
    const PoseState h = solveMultiview(skel, mscene.detections[0], mscene.rig, head).report.finalPose;
    const PoseState f = solveMultiview(skel, mscene.detections[0], mscene.rig, mv).report.finalPose;
    const bool finalStage = bitwiseEqual(h.q.data(), f.q.data(), h.q.size()) &&
                            bitwiseEqual(h.scales.data(), f.scales.data(), h.scales.size()) &&
                            !bitwiseEqual(h.markerOffsets.data(), f.markerOffsets.data(), h.markerOffsets.size());
    return {stage1 && stage2 && finalStage, std::string("stage 1 non-root unchanged: ") + (stage1 ? "yes" : "no") +
                                                ", stage 2 scales unchanged: " + (stage2 ? "yes" : "no") +
                                                ", multiview final stage offsets only: " + (finalStage ? "yes" : "no")};
}

Outcome configFidelity()
{
    const Skeleton skel = synth::makeTwoHandFixture();
    const SolveConfig mono = defaultMonocularConfig(skel);
    bool ok = mono.stages.size() == 3 && mono.totalIterations() == 400 && mono.stages[2].offsetReg == 20.0;
    for (const auto& s : mono.stages) ok = ok && s.damping == 3.0;
    const SolveConfig mv = defaultMultiviewConfig(skel);
    const int budgets[] = {150, 250, 100, 20};
    ok = ok && mv.stages.size() == 4;
    for (std::size_t i = 0; ok && i < 4; ++i) ok = mv.stages[i].iterations == budgets[i] && mv.stages[i].damping == 1.0;
    ok = ok && mv.stages.back().offsetReg == 1e4 && mv.preprocessing.confidenceCutoff == 0.25;

    // The cutoff must act in preprocessing: a detection at 0.2 is zeroed, 0.3 kept.
    CameraRig rig = synth::ringRig({});
    MultiviewFrame frame;
    frame.id = "f";
    for (const auto& c : rig.cameras) {
        CameraDetections v;
        v.camera = c.id;
        const Vec2 centre(c.cx, c.cy);
        v.detections["low"] = {centre, 0.2};
        v.detections["high"] = {centre, 0.3};
        frame.views.push_back(v);
    }
    const MultiviewFrame filtered = filterDetections(rig, frame, mv.preprocessing.confidenceCutoff);
    const bool cutoff = filtered.views[0].detections.at("low").confidence == 0.0 &&
                        filtered.views[0].detections.at("high").confidence == 0.3;
    return {ok && cutoff, "monocular " + std::to_string(mono.totalIterations()) + " iterations at 3.0, reg " +
                              fmt("%g", mono.stages[2].offsetReg) + "; multiview budgets " +
                              std::to_string(mv.stages[0].iterations) + "/" + std::to_string(mv.stages[1].iterations) +
                              "/" + std::to_string(mv.stages[2].iterations) + "/" +
                              std::to_string(mv.stages[3].iterations) + ", final reg " +
                              fmt("%g", mv.stages.back().offsetReg) + ", cutoff applied: " + (cutoff ? "yes" : "no")};
}

Outcome procrustesInvariance()
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> scale(0.2, 5.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        AlignmentRegion region{"r", {}, {}};
        std::map<std::string, Vec3> ref;
        std::map<std::string, Vec3> moved;
        const Mat3 r = oracle::randomRotation(rng);
        const double s = scale(rng);
        const Vec3 t(10.0 * u(rng), 10.0 * u(rng), 10.0 * u(rng));
        for (int i = 0; i < 12; ++i) {
            const std::string name = "p" + std::to_string(i);
            const Vec3 p(u(rng), u(rng), u(rng));
            ref[name] = p;
            moved[name] = s * r * p + t;
            region.siteNames.push_back(name);
        }
        worst = std::max(worst, paMpjpe(moved, ref, region).meanMm);
    }
    return {worst < 1e-9, "100 similarity transforms, worst PA-MPJPE " + fmt("%.2e", worst) + " mm"};
}

Outcome emDescent()
{
    const auto fx = fixtures::displacedSite();
    EmOptions opt;
    opt.refineSites = {fx.site};
    const EmResult r = refineSitesEM(fx.model, fx.frames, fx.table, 5, opt);
    bool descent = r.roundLoss.size() == 5;
    double previous = r.initialLoss;
    for (double l : r.roundLoss) {
        descent = descent && l <= previous;
        previous = l;
    }
    const int s = fx.model.siteIndex(fx.site);
    const double error = (r.skeleton.site(s).offset - fx.truth.site(s).offset).norm();
    return {descent && error < 1e-6, std::string("residual non-increasing: ") + (descent ? "yes" : "no") + " (" +
                                         fmt("%.3e", r.initialLoss) + " -> " + fmt("%.3e", previous) +
                                         "), site error " + fmt("%.2e", error) + " m"};
}

Outcome determinism()
{
    const fs::path dir = workDir("ac9");
    const fs::path data = KINEFIT_DATA_DIR;
    const std::string cliPath = KINEFIT_CLI_PATH;
    auto q = [](const fs::path& p) { return "\"" + p.string() + "\""; };
    io::writeFileAtomic(dir / "mono.json", "{\"multiview\": false, \"marker_noise_mm\": 2.0}");
    io::writeFileAtomic(dir / "mv.json", "{\"pixel_noise\": 1.0, \"dropout\": 0.1}");
    const fs::path disp = data / "displaced_site";
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"synth_mono", "synth --fixture two-hand --frames 3 --config " + q(dir / "mono.json")},
        {"synth_mv", "synth --fixture two-hand --frames 2 --config " + q(dir / "mv.json")},
        {"solve_mono", "solve-mono --skeleton " + q(dir / "synth_mono_a" / "skeleton.json") + " --markers " +
                           q(dir / "synth_mono_a" / "markers.csv") + " --jobs 2"},
        {"solve_mv", "solve-multiview --skeleton " + q(dir / "synth_mv_a" / "skeleton.json") + " --detections " +
                         q(dir / "synth_mv_a" / "detections.csv") + " --rig " + q(dir / "synth_mv_a" / "rig.json") +
                         " --jobs 2"},
        {"triangulate", "triangulate --detections " + q(dir / "synth_mv_a" / "detections.csv") + " --rig " +
                            q(dir / "synth_mv_a" / "rig.json")},
        {"evaluate", "evaluate --predicted " + q(data / "perturbation" / "predicted_poses.csv") + " --reference " +
                         q(data / "perturbation" / "reference_poses.csv") + " --skeleton " +
                         q(data / "two_hand_skeleton.json") + " --regions " + q(data / "regions.json")},
        {"map_refine", "map-refine --skeleton " + q(disp / "skeleton.json") + " --markers " + q(disp / "markers.csv") +
                           " --correspondences " + q(disp / "correspondences.csv") +
                           " --refine-sites l_upperarm_marker --jobs 2"},
    };
    int identical = 0;
    std::string failed;
    for (const auto& [name, args] : commands) {
        std::uint64_t hash[2] = {0, 0};
        bool ran = true;
        for (int k = 0; k < 2; ++k) {
            const fs::path out = dir / (name + (k == 0 ? "_a" : "_b"));
            const std::string cmd = q(cliPath) + " " + args + " --seed 9 --out " + q(out) + " 2>/dev/null";
            ran = ran && std::system(cmd.c_str()) == 0;
            if (ran) hash[k] = outputHash(out);
        }
        if (ran && hash[0] == hash[1])
            ++identical;
        else
            failed += " " + name;
    }
    return {identical == static_cast<int>(commands.size()),
            std::to_string(identical) + "/" + std::to_string(commands.size()) + " commands hash-identical" +
                (failed.empty() ? std::string() : ", differing or failed:" + failed)};
}

/// Similarity alignment by the unit-quaternion method, independent of the
/// library's SVD route.
double quaternionPa(const std::map<std::string, Vec3>& pred, const std::map<std::string, Vec3>& ref,
                    const AlignmentRegion& region)
{
    const auto& names = region.siteNames;
    const double n = static_cast<double>(names.size());
    Vec3 mp = Vec3::Zero();
    Vec3 mr = Vec3::Zero();
    for (const auto& s : names) {
        mp += pred.at(s) / n;
        mr += ref.at(s) / n;
    }
    Mat3 m = Mat3::Zero();
    double sp = 0.0;
    for (const auto& s : names) {
        const Vec3 a = pred.at(s) - mp;
        const Vec3 b = ref.at(s) - mr;
        m += a * b.transpose();
        sp += a.squaredNorm();
    }
    Eigen::Matrix4d k;
    k << m(0, 0) + m(1, 1) + m(2, 2), m(1, 2) - m(2, 1), m(2, 0) - m(0, 2), m(0, 1) - m(1, 0),
        m(1, 2) - m(2, 1), m(0, 0) - m(1, 1) - m(2, 2), m(0, 1) + m(1, 0), m(2, 0) + m(0, 2),
        m(2, 0) - m(0, 2), m(0, 1) + m(1, 0), -m(0, 0) + m(1, 1) - m(2, 2), m(1, 2) + m(2, 1),
        m(0, 1) - m(1, 0), m(2, 0) + m(0, 2), m(1, 2) + m(2, 1), -m(0, 0) - m(1, 1) + m(2, 2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(k);
    const Eigen::Vector4d v = eig.eigenvectors().col(3);
    const Mat3 r = Eigen::Quaterniond(v[0], v[1], v[2], v[3]).normalized().toRotationMatrix();
    const double scale = eig.eigenvalues()[3] / sp;
    double sum = 0.0;
    for (const auto& s : region.reported()) sum += (scale * r * (pred.at(s) - mp) + mr - ref.at(s)).norm() * 1000.0;
    return sum / static_cast<double>(region.reported().size());
}

Outcome metricCrossCheck()
{
    const fs::path data = KINEFIT_DATA_DIR;
    const fs::path dir = workDir("ac10");
    cli::CommonOptions common;
    common.out = dir / "out";
    std::ostringstream log;
    const int code = cli::cmdEvaluate({data / "perturbation" / "predicted_poses.csv",
                                       data / "perturbation" / "reference_poses.csv",
                                       data / "two_hand_skeleton.json", data / "regions.json", std::nullopt,
                                       std::nullopt},
                                      common, log);
    if (code != 0) return {false, "evaluate failed: " + log.str()};

    const Skeleton skel = io::loadSkeleton(io::readFile(data / "two_hand_skeleton.json"));
    const auto pred = io::loadPoses(skel, io::readFile(data / "perturbation" / "predicted_poses.csv"));
    const auto ref = io::loadPoses(skel, io::readFile(data / "perturbation" / "reference_poses.csv"));
    const auto regions = io::loadRegions(io::readFile(data / "regions.json"));

    // Brute-force table: column -> per-frame values.
    std::vector<std::string> columns;
    std::vector<std::vector<double>> values;
    for (const auto& r : regions.regions) {
        columns.push_back(r.name + "_pa_mm");
        values.emplace_back();
        for (std::size_t f = 0; f < pred.size(); ++f)
            values.back().push_back(quaternionPa(forwardKinematics(skel, pred[f].pose),
                                                 forwardKinematics(skel, ref[f].pose), r));
    }
    columns.push_back("angle_mae_deg");
    values.emplace_back();
    for (std::size_t f = 0; f < pred.size(); ++f) {
        double sum = 0.0;
        for (const auto& c : regions.angleCoordinates) {
            const int i = skel.coordinateIndex(c);
            sum += std::abs(pred[f].pose.q[i] - ref[f].pose.q[i]) * 180.0 / std::numbers::pi;
        }
        values.back().push_back(sum / static_cast<double>(regions.angleCoordinates.size()));
    }

    // Parse the written table: frame rows, then mean and std rows.
    std::istringstream in(io::readFile(dir / "out" / "metrics.csv"));
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::istringstream h(line);
        std::string cell;
        while (std::getline(h, cell, ',')) header.push_back(cell);
    }
    std::map<std::string, std::map<std::string, double>> rows;
    while (std::getline(in, line)) {
        std::istringstream r(line);
        std::string key;
        std::getline(r, key, ',');
        std::string cell;
        for (std::size_t c = 1; c < header.size() && std::getline(r, cell, ','); ++c)
            if (!cell.empty()) rows[key][header[c]] = std::stod(cell);
    }

    double worst = 0.0;
    int checked = 0;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        const auto& v = values[c];
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = std::sqrt(var / static_cast<double>(v.size()));
        for (std::size_t f = 0; f < v.size(); ++f) {
            worst = std::max(worst, std::abs(rows.at(pred[f].frame).at(columns[c]) - v[f]));
            ++checked;
        }
        worst = std::max(worst, std::abs(rows.at("mean").at(columns[c]) - mean));
        worst = std::max(worst, std::abs(rows.at("std").at(columns[c]) - sd));
        checked += 2;
    }
    return {pred.size() == 10 && worst < 1e-9,
            std::to_string(pred.size()) + " frames, " + std::to_string(checked) + " values, worst difference " +
                fmt("%.2e", worst)};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"Jacobian correctness", jacobianCorrectness},
        {"Noiseless monocular round-trip", noiselessMonocular},
        {"Noisy monocular bound", noisyMonocular},
        {"Multiview round-trip and outlier camera", multiview},
        {"Stage semantics", stageSemantics},
        {"Config fidelity", configFidelity},
        {"Procrustes invariance", procrustesInvariance},
        {"EM descent", emDescent},
        {"Determinism", determinism},
        {"Metric cross-check", metricCrossCheck},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    if (selected.empty())
        for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) selected.push_back(i);

    int failed = 0;
    for (const int id : selected) {
        if (id < 1 || id > static_cast<int>(criteria.size())) {
            std::cerr << "unknown criterion " << id << "\n";
            return 2;
        }
        const auto& [name, check] = criteria[static_cast<std::size_t>(id - 1)];
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::cout << "AC" << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
