#include <iostream>

#include <CLI11.hpp>

#include "kinefit/commands.hpp"

namespace {

void addCommon(CLI::App* app, kinefit::cli::CommonOptions& common, bool configFlag = true)
{
    app->add_option("--out", common.out, "Output directory")->required();
    if (configFlag) app->add_option("--config", common.config, "JSON configuration overrides");
    app->add_option("--seed", common.seed, "Random seed (recorded in the manifest)");
    app->add_option("--jobs", common.jobs, "Frames solved in parallel")->check(CLI::PositiveNumber);
    app->add_flag("--continue-on-error", common.continueOnError, "Exit 0 when only some frames fail");
}

}  // namespace

int main(int argc, char** argv)
{
    namespace cli = kinefit::cli;
    CLI::App app{"Staged Levenberg-Marquardt inverse kinematics for articulated skeletons"};
    app.set_version_flag("--version", std::string(cli::kToolVersion));
    app.require_subcommand(1);

    cli::CommonOptions common;

    cli::SolveMonoArgs mono;
    auto* solveMono = app.add_subcommand("solve-mono", "Fit the skeleton to 3D marker frames");
    solveMono->add_option("--skeleton", mono.skeleton, "Skeleton JSON")->required();
    solveMono->add_option("--markers", mono.markers, "Marker frames CSV")->required();
    addCommon(solveMono, common);

    cli::SolveMultiviewArgs multi;
    auto* solveMulti = app.add_subcommand("solve-multiview", "Fit the skeleton to multi-camera 2D detections");
    solveMulti->add_option("--skeleton", multi.skeleton, "Skeleton JSON")->required();
    solveMulti->add_option("--detections", multi.detections, "Detections CSV")->required();
    solveMulti->add_option("--rig", multi.rig, "Camera rig JSON")->required();
    addCommon(solveMulti, common);

    cli::TriangulateArgs tri;
    auto* triangulate = app.add_subcommand("triangulate", "Robustly triangulate detections per site");
    triangulate->add_option("--detections", tri.detections, "Detections CSV")->required();
    triangulate->add_option("--rig", tri.rig, "Camera rig JSON")->required();
    triangulate->add_option("--kernel-width", tri.kernelWidthPx, "Reprojection kernel width in pixels");
    triangulate->add_option("--confidence-cutoff", tri.confidenceCutoff, "Zero detections below this confidence");
    addCommon(triangulate, common, false);

    cli::EvaluateArgs eval;
    auto* evaluate = app.add_subcommand("evaluate", "Compare predicted against reference poses");
    evaluate->add_option("--predicted", eval.predicted, "Predicted poses CSV")->required();
    evaluate->add_option("--reference", eval.reference, "Reference poses CSV")->required();
    evaluate->add_option("--skeleton", eval.skeleton, "Skeleton JSON")->required();
    evaluate->add_option("--regions", eval.regions, "Evaluation regions JSON")->required();
    evaluate->add_option("--detections", eval.detections, "Detections CSV for GC@10px");
    evaluate->add_option("--rig", eval.rig, "Camera rig JSON for GC@10px");
    addCommon(evaluate, common, false);

    cli::SynthArgs syn;
    auto* synthCmd = app.add_subcommand("synth", "Generate a synthetic scene");
    synthCmd->add_option("--skeleton", syn.skeleton, "Skeleton JSON");
    synthCmd->add_option("--fixture", syn.fixture, "Built-in skeleton: two-hand or chain:<links>");
    synthCmd->add_option("--frames", syn.frames, "Number of frames")->check(CLI::PositiveNumber);
    addCommon(synthCmd, common);

    cli::MapRefineArgs map;
    auto* mapRefine = app.add_subcommand("map-refine", "Refine site offsets from correspondences");
    mapRefine->add_option("--skeleton", map.skeleton, "Skeleton JSON")->required();
    mapRefine->add_option("--markers", map.markers, "Marker frames CSV")->required();
    mapRefine->add_option("--correspondences", map.correspondences, "Correspondence table CSV")->required();
    mapRefine->add_option("--rounds", map.rounds, "EM rounds")->check(CLI::PositiveNumber);
    mapRefine->add_option("--refine-sites", map.refineSites, "Sites to move; others stay fixed")->delimiter(',');
    mapRefine->add_option("--tau", map.tau, "Weight kernel width in meters")->check(CLI::PositiveNumber);
    addCommon(mapRefine, common);

    CLI11_PARSE(app, argc, argv);

    if (solveMono->parsed()) return cli::cmdSolveMono(mono, common);
    if (solveMulti->parsed()) return cli::cmdSolveMultiview(multi, common);
    if (triangulate->parsed()) return cli::cmdTriangulate(tri, common);
    if (evaluate->parsed()) return cli::cmdEvaluate(eval, common);
    if (synthCmd->parsed()) return cli::cmdSynth(syn, common);
    if (mapRefine->parsed()) return cli::cmdMapRefine(map, common);
    return 1;
}
