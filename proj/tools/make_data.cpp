// Regenerates the files under data/ from the built-in fixtures.
//   kinefit_make_data <data-dir>

#include <iostream>

#include "kinefit/fixtures.hpp"

int main(int argc, char** argv)
{
    using namespace kinefit;
    if (argc != 2) {
        std::cerr << "usage: kinefit_make_data <data-dir>\n";
        return 2;
    }
    const std::filesystem::path dir = argv[1];
    const Skeleton skel = synth::makeTwoHandFixture();
    io::writeFileAtomic(dir / "two_hand_skeleton.json", io::saveSkeleton(skel));
    io::writeFileAtomic(dir / "hand_correspondences.csv", io::saveCorrespondences(fixtures::handKeypointCorrespondences()));
    io::writeFileAtomic(dir / "regions.json", io::saveRegions(fixtures::twoHandRegions(skel)));

    const auto fx = fixtures::displacedSite();
    io::writeFileAtomic(dir / "displaced_site" / "skeleton.json", io::saveSkeleton(fx.model));
    io::writeFileAtomic(dir / "displaced_site" / "truth_skeleton.json", io::saveSkeleton(fx.truth));
    io::writeFileAtomic(dir / "displaced_site" / "markers.csv", io::saveMarkerFrames(fx.frames));
    io::writeFileAtomic(dir / "displaced_site" / "correspondences.csv", io::saveCorrespondences(fx.table));

    const auto ex = fixtures::perturbation(skel);
    io::writeFileAtomic(dir / "perturbation" / "reference_poses.csv", io::savePoses(skel, ex.reference));
    io::writeFileAtomic(dir / "perturbation" / "predicted_poses.csv", io::savePoses(skel, ex.predicted));
    return 0;
}
