#pragma once

// File formats. Numbers are written in shortest round-trip form so that
// load(save(x)) reproduces every double bit for bit.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kinefit/cameras.hpp"
#include "kinefit/errors.hpp"
#include "kinefit/frames.hpp"
#include "kinefit/lm_solver.hpp"
#include "kinefit/mapping.hpp"
#include "kinefit/metrics.hpp"
#include "kinefit/skeleton.hpp"

namespace kinefit::io {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

//------------------------------------------------------------------------------
// Text primitives
//------------------------------------------------------------------------------

inline std::string formatDouble(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string readFile(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a temporary file and renames it into place.
inline void writeFileAtomic(const fs::path& path, std::string_view content)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(path.string() + ": cannot write file");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(path.string() + ": write failed");
    }
    fs::rename(tmp, path);
}

/// Minimal CSV: comma separated, no quoting, '#' comment lines and blank
/// lines ignored, first non-comment line is the header.
class CsvReader {
public:
    CsvReader(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {}

    /// Reads the header and checks it against the expected columns.
    void expectHeader(const std::vector<std::string>& columns)
    {
        std::vector<std::string_view> cells;
        if (!next(cells)) fail("empty file, expected header '" + join(columns) + "'");
        std::vector<std::string> got(cells.begin(), cells.end());
        if (got != columns) fail("header '" + join(got) + "' does not match expected '" + join(columns) + "'");
        columns_ = columns.size();
    }

    bool next(std::vector<std::string_view>& cells)
    {
        while (pos_ < text_.size()) {
            std::size_t end = text_.find('\n', pos_);
            if (end == std::string::npos) end = text_.size();
            std::string_view line(text_.data() + pos_, end - pos_);
            pos_ = end + 1;
            ++line_;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.empty() || line.front() == '#') continue;
            cells.clear();
            std::size_t start = 0;
            for (;;) {
                const std::size_t comma = line.find(',', start);
                cells.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
                if (comma == std::string_view::npos) break;
                start = comma + 1;
            }
            if (columns_ != 0 && cells.size() != columns_)
                fail("expected " + std::to_string(columns_) + " columns, got " + std::to_string(cells.size()));
            return true;
        }
        return false;
    }

    double number(std::string_view cell) const
    {
        double v = 0.0;
        const char* first = cell.data();
        const char* last = cell.data() + cell.size();
        if (!cell.empty() && *first == '+') ++first;
        const auto res = std::from_chars(first, last, v);
        if (res.ec != std::errc() || res.ptr != last) fail("invalid number '" + std::string(cell) + "'");
        return v;
    }

    [[noreturn]] void fail(const std::string& msg) const
    {
        throw ParseError(source_ + ":" + std::to_string(line_) + ": " + msg);
    }

    int line() const { return line_; }

private:
    static std::string join(const std::vector<std::string>& v)
    {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
        return s;
    }

    std::string text_;
    std::string source_;
    std::size_t pos_ = 0;
    int line_ = 0;
    std::size_t columns_ = 0;
};

inline void checkCsvField(const std::string& s, const char* what)
{
    if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos || s.front() == '#')
        throw Error(std::string(what) + " '" + s + "' cannot be written to CSV");
}

inline Json parseJson(const std::string& text, const std::string& source)
{
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const long line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
        throw ParseError(source + ":" + std::to_string(line) + ": " + e.what());
    }
}

/// Wraps JSON type and lookup errors with the source name.
template <class F>
auto withJsonContext(const std::string& source, F&& f)
{
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source + ": " + e.what());
    }
}

inline Json vecToJson(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vecFromJson(const Json& j)
{
    if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

/// Infinite limits are stored as null.
inline Json limitToJson(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline double limitFromJson(const Json& j, double unlimited)
{
    return j.is_null() ? unlimited : j.get<double>();
}

//------------------------------------------------------------------------------
// Skeleton (JSON)
//------------------------------------------------------------------------------

inline const char* toString(JointKind k)
{
    switch (k) {
    case JointKind::FreeRoot: return "free";
    case JointKind::Ball: return "ball";
    case JointKind::Hinge: return "hinge";
    case JointKind::Slide: return "slide";
    }
    return "?";
}

inline JointKind jointKindFromString(const std::string& s)
{
    if (s == "free") return JointKind::FreeRoot;
    if (s == "ball") return JointKind::Ball;
    if (s == "hinge") return JointKind::Hinge;
    if (s == "slide") return JointKind::Slide;
    throw ParseError("unknown joint kind '" + s + "'");
}

inline Json skeletonToJson(const Skeleton& skel)
{
    Json bodies = Json::array();
    for (const auto& b : skel.bodies()) {
        Json lower = Json::array();
        Json upper = Json::array();
        for (const double v : b.joint.lower) lower.push_back(limitToJson(v));
        for (const double v : b.joint.upper) upper.push_back(limitToJson(v));
        bodies.push_back({{"name", b.name},
                          {"parent", b.parent < 0 ? Json(nullptr) : Json(skel.body(b.parent).name)},
                          {"translation", vecToJson(b.translation)},
                          {"joint",
                           {{"kind", toString(b.joint.kind)},
                            {"name", b.joint.name},
                            {"axis", vecToJson(b.joint.axis)},
                            {"lower", lower},
                            {"upper", upper}}}});
    }
    Json sites = Json::array();
    for (const auto& s : skel.sites())
        sites.push_back({{"name", s.name}, {"body", skel.body(s.body).name}, {"offset", vecToJson(s.offset)}});
    Json groups = Json::array();
    for (const auto& g : skel.scaleGroups()) {
        Json members = Json::array();
        for (const int b : g.bodies) members.push_back(skel.body(b).name);
        groups.push_back({{"name", g.name}, {"bodies", members}});
    }
    return {{"bodies", bodies}, {"sites", sites}, {"scale_groups", groups}, {"core_sites", skel.coreSites()}};
}

/// Rejects object members outside `known`; typos must not pass silently.
inline void requireKnownKeys(const Json& j, std::initializer_list<std::string_view> known, const std::string& what)
{
    if (!j.is_object()) throw ParseError(what + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ParseError("unknown key '" + key + "' in " + what);
}

inline Skeleton skeletonFromJson(const Json& j)
{
    requireKnownKeys(j, {"bodies", "sites", "scale_groups", "core_sites"}, "skeleton");
    std::map<std::string, int> index;
    std::vector<Body> bodies;
    for (const auto& jb : j.at("bodies")) {
        requireKnownKeys(jb, {"name", "parent", "translation", "joint"}, "body");
        Body b;
        b.name = jb.at("name").get<std::string>();
        const Json& parent = jb.at("parent");
        if (parent.is_null()) {
            b.parent = -1;
        } else {
            auto it = index.find(parent.get<std::string>());
            if (it == index.end())
                throw ParseError("body '" + b.name + "' names parent '" + parent.get<std::string>() +
                                 "' before it is defined");
            b.parent = it->second;
        }
        b.translation = vecFromJson(jb.at("translation"));
        const Json& jj = jb.at("joint");
        requireKnownKeys(jj, {"kind", "name", "axis", "lower", "upper"}, "joint of body '" + b.name + "'");
        b.joint.kind = jointKindFromString(jj.at("kind").get<std::string>());
        b.joint.name = jj.value("name", std::string());
        b.joint.axis = vecFromJson(jj.at("axis"));
        for (const auto& v : jj.value("lower", Json::array())) b.joint.lower.push_back(limitFromJson(v, -kUnlimited));
        for (const auto& v : jj.value("upper", Json::array())) b.joint.upper.push_back(limitFromJson(v, kUnlimited));
        index.emplace(b.name, static_cast<int>(bodies.size()));
        bodies.push_back(std::move(b));
    }
    auto bodyOf = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ParseError("unknown body '" + name + "'");
        return it->second;
    };
    std::vector<Site> sites;
    for (const auto& js : j.at("sites")) {
        requireKnownKeys(js, {"name", "body", "offset"}, "site");
        sites.push_back({js.at("name").get<std::string>(), bodyOf(js.at("body").get<std::string>()),
                         vecFromJson(js.at("offset"))});
    }
    std::vector<ScaleGroup> groups;
    for (const auto& jg : j.value("scale_groups", Json::array())) {
        requireKnownKeys(jg, {"name", "bodies"}, "scale group");
        ScaleGroup g;
        g.name = jg.at("name").get<std::string>();
        for (const auto& m : jg.at("bodies")) g.bodies.push_back(bodyOf(m.get<std::string>()));
        groups.push_back(std::move(g));
    }
    const auto core = j.value("core_sites", std::vector<std::string>{});
    return Skeleton(std::move(bodies), std::move(sites), std::move(groups), core);
}

inline std::string saveSkeleton(const Skeleton& skel) { return skeletonToJson(skel).dump(2) + "\n"; }

inline Skeleton loadSkeleton(const std::string& text, const std::string& source = "skeleton")
{
    const Json j = parseJson(text, source);
    try {
        return withJsonContext(source, [&] { return skeletonFromJson(j); });
    } catch (const SkeletonError& e) {
        throw SkeletonError(source + ": " + e.what());
    } catch (const ParseError& e) {
        const std::string what = e.what();
        throw ParseError(what.rfind(source, 0) == 0 ? what : source + ": " + what);
    }
}

//------------------------------------------------------------------------------
// Marker frames (CSV): frame,site,x,y,z,confidence
//------------------------------------------------------------------------------

inline const std::vector<std::string> kMarkerColumns = {"frame", "site", "x", "y", "z", "confidence"};

inline std::string saveMarkerFrames(const std::vector<MarkerFrame>& frames)
{
    std::string out = "frame,site,x,y,z,confidence\n";
    for (const auto& f : frames) {
        checkCsvField(f.id, "frame id");
        for (const auto& [site, t] : f.targets) {
            checkCsvField(site, "site name");
            out += f.id + "," + site + "," + formatDouble(t.position.x()) + "," + formatDouble(t.position.y()) + "," +
                   formatDouble(t.position.z()) + "," + formatDouble(t.confidence) + "\n";
        }
    }
    return out;
}

/// Frames appear in first-occurrence order. A frame with no rows cannot be
/// represented and is not produced.
inline std::vector<MarkerFrame> loadMarkerFrames(const std::string& text, const std::string& source = "markers")
{
    CsvReader csv(text, source);
    csv.expectHeader(kMarkerColumns);
    std::vector<MarkerFrame> frames;
    std::map<std::string, std::size_t> index;
    std::vector<std::string_view> c;
    while (csv.next(c)) {
        const std::string id(c[0]);
        if (id.empty()) csv.fail("empty frame id");
        auto [it, fresh] = index.emplace(id, frames.size());
        if (fresh) frames.push_back({id, {}});
        MarkerTarget t{{csv.number(c[2]), csv.number(c[3]), csv.number(c[4])}, csv.number(c[5])};
        if (!std::isfinite(t.confidence) || t.confidence < 0.0) csv.fail("confidence must be finite and non-negative");
        if (!frames[it->second].targets.emplace(std::string(c[1]), t).second)
            csv.fail("duplicate site '" + std::string(c[1]) + "' in frame '" + id + "'");
    }
    return frames;
}

//------------------------------------------------------------------------------
// Detections (CSV): frame,camera,site,u,v,confidence
//------------------------------------------------------------------------------

inline const std::vector<std::string> kDetectionColumns = {"frame", "camera", "site", "u", "v", "confidence"};

inline std::string saveDetections(const std::vector<MultiviewFrame>& frames)
{
    std::string out = "frame,camera,site,u,v,confidence\n";
    for (const auto& f : frames) {
        checkCsvField(f.id, "frame id");
        for (const auto& view : f.views) {
            checkCsvField(view.camera, "camera id");
            for (const auto& [site, d] : view.detections) {
                checkCsvField(site, "site name");
                out += f.id + "," + view.camera + "," + site + "," + formatDouble(d.pixel.x()) + "," +
                       formatDouble(d.pixel.y()) + "," + formatDouble(d.confidence) + "\n";
            }
        }
    }
    return out;
}

inline std::vector<MultiviewFrame> loadDetections(const std::string& text, const std::string& source = "detections")
{
    CsvReader csv(text, source);
    csv.expectHeader(kDetectionColumns);
    std::vector<MultiviewFrame> frames;
    std::map<std::string, std::size_t> index;
    std::vector<std::string_view> c;
    while (csv.next(c)) {
        const std::string id(c[0]);
        const std::string cam(c[1]);
        if (id.empty() || cam.empty()) csv.fail("empty frame or camera id");
        auto [it, fresh] = index.emplace(id, frames.size());
        if (fresh) frames.push_back({id, {}});
        auto& views = frames[it->second].views;
        auto v = std::find_if(views.begin(), views.end(), [&](const CameraDetections& d) { return d.camera == cam; });
        if (v == views.end()) {
            views.push_back({cam, {}});
            v = views.end() - 1;
        }
        Detection d{{csv.number(c[3]), csv.number(c[4])}, csv.number(c[5])};
        if (!std::isfinite(d.confidence) || d.confidence < 0.0) csv.fail("confidence must be finite and non-negative");
        if (!v->detections.emplace(std::string(c[2]), d).second)
            csv.fail("duplicate site '" + std::string(c[2]) + "' for camera '" + cam + "' in frame '" + id + "'");
    }
    return frames;
}

//------------------------------------------------------------------------------
// Poses (CSV): frame,param,value
//------------------------------------------------------------------------------

struct FramePose {
    std::string frame;
    PoseState pose;

    friend bool operator==(const FramePose&, const FramePose&) = default;
};

inline std::string savePoses(const Skeleton& skel, const std::vector<FramePose>& poses)
{
    static constexpr const char* axes[] = {"x", "y", "z"};
    std::string out = "frame,param,value\n";
    for (const auto& [id, pose] : poses) {
        checkCsvField(id, "frame id");
        checkPose(skel, pose);
        for (int i = 0; i < skel.nq(); ++i)
            out += id + ",q:" + skel.coordinateNames()[static_cast<std::size_t>(i)] + "," + formatDouble(pose.q[i]) +
                   "\n";
        for (int g = 0; g < skel.numScales(); ++g)
            out += id + ",scale:" + skel.scaleGroups()[static_cast<std::size_t>(g)].name + "," +
                   formatDouble(pose.scales[g]) + "\n";
        for (int s = 0; s < skel.numSites(); ++s)
            for (int a = 0; a < 3; ++a)
                out += id + ",offset:" + skel.site(s).name + ":" + axes[a] + "," +
                       formatDouble(pose.markerOffsets(a, s)) + "\n";
    }
    return out;
}

/// Every coordinate and scale must be present; offsets default to zero.
inline std::vector<FramePose> loadPoses(const Skeleton& skel, const std::string& text,
                                        const std::string& source = "poses")
{
    CsvReader csv(text, source);
    csv.expectHeader({"frame", "param", "value"});
    std::vector<FramePose> out;
    std::vector<std::vector<bool>> seen;
    std::map<std::string, std::size_t> index;
    const int nParams = skel.nq() + skel.numScales();
    std::vector<std::string_view> c;
    while (csv.next(c)) {
        const std::string id(c[0]);
        if (id.empty()) csv.fail("empty frame id");
        auto [it, fresh] = index.emplace(id, out.size());
        if (fresh) {
            out.push_back({id, PoseState::zero(skel)});
            seen.emplace_back(static_cast<std::size_t>(nParams + 3 * skel.numSites()), false);
        }
        PoseState& pose = out[it->second].pose;
        const std::string_view param = c[1];
        const double value = csv.number(c[2]);
        int slot = -1;
        try {
            if (param.starts_with("q:")) {
                slot = skel.coordinateIndex(param.substr(2));
                pose.q[slot] = value;
            } else if (param.starts_with("scale:")) {
                const int g = skel.scaleGroupIndex(param.substr(6));
                slot = skel.nq() + g;
                pose.scales[g] = value;
            } else if (param.starts_with("offset:")) {
                const std::string_view rest = param.substr(7);
                const auto colon = rest.rfind(':');
                if (colon == std::string_view::npos) csv.fail("malformed offset parameter '" + std::string(param) + "'");
                const int s = skel.siteIndex(rest.substr(0, colon));
                const std::string_view axis = rest.substr(colon + 1);
                const int a = axis == "x" ? 0 : axis == "y" ? 1 : axis == "z" ? 2 : -1;
                if (a < 0) csv.fail("malformed offset parameter '" + std::string(param) + "'");
                slot = nParams + 3 * s + a;
                pose.markerOffsets(a, s) = value;
            } else {
                csv.fail("unknown parameter '" + std::string(param) + "'");
            }
        } catch (const LookupError& e) {
            csv.fail(e.what());
        }
        if (seen[it->second][static_cast<std::size_t>(slot)])
            csv.fail("duplicate parameter '" + std::string(param) + "' in frame '" + id + "'");
        seen[it->second][static_cast<std::size_t>(slot)] = true;
    }
    for (std::size_t f = 0; f < out.size(); ++f) {
        std::string missing;
        for (int k = 0; k < nParams; ++k) {
            if (seen[f][static_cast<std::size_t>(k)]) continue;
            const std::string name = k < skel.nq()
                                         ? "q:" + skel.coordinateNames()[static_cast<std::size_t>(k)]
                                         : "scale:" + skel.scaleGroups()[static_cast<std::size_t>(k - skel.nq())].name;
            missing += (missing.empty() ? "" : ", ") + name;
        }
        if (!missing.empty()) throw ParseError(source + ": frame '" + out[f].frame + "' is missing " + missing);
        try {
            checkPose(skel, out[f].pose);
        } catch (const InvalidPoseError& e) {
            throw ParseError(source + ": frame '" + out[f].frame + "': " + e.what());
        }
    }
    return out;
}

//------------------------------------------------------------------------------
// Camera rig (JSON)
//------------------------------------------------------------------------------

inline Json rigToJson(const CameraRig& rig)
{
    Json cams = Json::array();
    for (const auto& c : rig.cameras) {
        Json r = Json::array();
        for (int i = 0; i < 3; ++i) r.push_back(Json::array({c.rotation(i, 0), c.rotation(i, 1), c.rotation(i, 2)}));
        cams.push_back({{"id", c.id},
                        {"fx", c.fx},
                        {"fy", c.fy},
                        {"cx", c.cx},
                        {"cy", c.cy},
                        {"width", c.width},
                        {"height", c.height},
                        {"rotation", r},
                        {"translation", vecToJson(c.translation)}});
    }
    return {{"units", rig.units}, {"source", rig.source}, {"cameras", cams}};
}

inline CameraRig rigFromJson(const Json& j)
{
    CameraRig rig;
    rig.units = j.value("units", rig.units);
    rig.source = j.value("source", std::string());
    for (const auto& jc : j.at("cameras")) {
        Camera c;
        c.id = jc.at("id").get<std::string>();
        c.fx = jc.at("fx").get<double>();
        c.fy = jc.at("fy").get<double>();
        c.cx = jc.at("cx").get<double>();
        c.cy = jc.at("cy").get<double>();
        c.width = jc.at("width").get<int>();
        c.height = jc.at("height").get<int>();
        const Json& r = jc.at("rotation");
        if (!r.is_array() || r.size() != 3) throw ParseError("camera '" + c.id + "': rotation must be 3x3");
        for (int i = 0; i < 3; ++i) c.rotation.row(i) = vecFromJson(r[static_cast<std::size_t>(i)]).transpose();
        c.translation = vecFromJson(jc.at("translation"));
        rig.cameras.push_back(std::move(c));
    }
    rig.validate();
    return rig;
}

inline std::string saveRig(const CameraRig& rig) { return rigToJson(rig).dump(2) + "\n"; }

inline CameraRig loadRig(const std::string& text, const std::string& source = "rig")
{
    const Json j = parseJson(text, source);
    try {
        return withJsonContext(source, [&] { return rigFromJson(j); });
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

//------------------------------------------------------------------------------
// Solve configuration (JSON)
//------------------------------------------------------------------------------

inline const char* toString(CoordinateSet c)
{
    switch (c) {
    case CoordinateSet::None: return "none";
    case CoordinateSet::Root: return "root";
    case CoordinateSet::All: return "all";
    }
    return "?";
}

inline CoordinateSet coordinateSetFromString(const std::string& s)
{
    if (s == "none") return CoordinateSet::None;
    if (s == "root") return CoordinateSet::Root;
    if (s == "all") return CoordinateSet::All;
    throw ParseError("unknown coordinate set '" + s + "' (expected none, root or all)");
}

inline Json poseToJson(const PoseState& p)
{
    Json offsets = Json::array();
    for (Eigen::Index s = 0; s < p.markerOffsets.cols(); ++s) offsets.push_back(vecToJson(p.markerOffsets.col(s)));
    return {{"q", std::vector<double>(p.q.data(), p.q.data() + p.q.size())},
            {"scales", std::vector<double>(p.scales.data(), p.scales.data() + p.scales.size())},
            {"offsets", offsets}};
}

inline PoseState poseFromJson(const Json& j)
{
    const auto q = j.at("q").get<std::vector<double>>();
    const auto scales = j.at("scales").get<std::vector<double>>();
    PoseState p;
    p.q = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
    p.scales = Eigen::Map<const Eigen::VectorXd>(scales.data(), static_cast<Eigen::Index>(scales.size()));
    const Json& offsets = j.at("offsets");
    p.markerOffsets.resize(3, static_cast<Eigen::Index>(offsets.size()));
    for (std::size_t s = 0; s < offsets.size(); ++s) p.markerOffsets.col(static_cast<Eigen::Index>(s)) = vecFromJson(offsets[s]);
    return p;
}

inline Json configToJson(const SolveConfig& cfg)
{
    Json stages = Json::array();
    for (const auto& s : cfg.stages)
        stages.push_back({{"name", s.name},
                          {"iterations", s.iterations},
                          {"coordinates", toString(s.coordinates)},
                          {"scales", s.scales},
                          {"offsets", s.offsets},
                          {"core_markers_only", s.coreMarkersOnly},
                          {"marker_subset", s.markerSubset},
                          {"damping", s.damping},
                          {"offset_reg", s.offsetReg}});
    Json warm = {{"recenter_root", cfg.warmStart.recenterRoot}};
    if (cfg.warmStart.initial) warm["initial"] = poseToJson(*cfg.warmStart.initial);
    return {{"stages", stages},
            {"warm_start", warm},
            {"convergence_tol", cfg.convergenceTol},
            {"convergence_patience", cfg.convergencePatience},
            {"max_step_norm", cfg.maxStepNorm},
            {"limit_stiffness", cfg.limitStiffness},
            {"damping_increase", cfg.dampingIncrease},
            {"damping_decrease", cfg.dampingDecrease},
            {"min_damping", cfg.minDamping},
            {"preprocessing",
             {{"confidence_cutoff", cfg.preprocessing.confidenceCutoff},
              {"kernel_width_px", cfg.preprocessing.kernelWidthPx},
              {"consensus_weighting", cfg.preprocessing.consensusWeighting}}}};
}

/// Keys present in the JSON override the corresponding fields of `base`.
/// A "stages" array replaces the base stages entirely.
inline SolveConfig configFromJson(const Json& j, SolveConfig base)
{
    if (!j.is_object()) throw ParseError("configuration must be a JSON object");
    static const std::vector<std::string> known = {
        "stages",          "warm_start",       "convergence_tol", "convergence_patience", "max_step_norm",
        "limit_stiffness", "damping_increase", "damping_decrease", "min_damping",         "preprocessing"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ParseError("unknown configuration key '" + key + "'");

    if (j.contains("stages")) {
        base.stages.clear();
        for (const auto& js : j.at("stages")) {
            StageSpec s;
            s.name = js.value("name", std::string("stage") + std::to_string(base.stages.size() + 1));
            s.iterations = js.at("iterations").get<int>();
            s.coordinates = coordinateSetFromString(js.value("coordinates", std::string("all")));
            s.scales = js.value("scales", false);
            s.offsets = js.value("offsets", false);
            s.coreMarkersOnly = js.value("core_markers_only", false);
            s.markerSubset = js.value("marker_subset", std::vector<std::string>{});
            s.damping = js.value("damping", 1.0);
            s.offsetReg = js.value("offset_reg", 0.0);
            base.stages.push_back(std::move(s));
        }
    }
    if (j.contains("warm_start")) {
        const Json& w = j.at("warm_start");
        base.warmStart.recenterRoot = w.value("recenter_root", base.warmStart.recenterRoot);
        if (w.contains("initial")) base.warmStart.initial = poseFromJson(w.at("initial"));
    }
    base.convergenceTol = j.value("convergence_tol", base.convergenceTol);
    base.convergencePatience = j.value("convergence_patience", base.convergencePatience);
    base.maxStepNorm = j.value("max_step_norm", base.maxStepNorm);
    base.limitStiffness = j.value("limit_stiffness", base.limitStiffness);
    base.dampingIncrease = j.value("damping_increase", base.dampingIncrease);
    base.dampingDecrease = j.value("damping_decrease", base.dampingDecrease);
    base.minDamping = j.value("min_damping", base.minDamping);
    if (j.contains("preprocessing")) {
        const Json& p = j.at("preprocessing");
        base.preprocessing.confidenceCutoff = p.value("confidence_cutoff", base.preprocessing.confidenceCutoff);
        base.preprocessing.kernelWidthPx = p.value("kernel_width_px", base.preprocessing.kernelWidthPx);
        base.preprocessing.consensusWeighting = p.value("consensus_weighting", base.preprocessing.consensusWeighting);
    }
    base.validate();
    return base;
}

inline std::string saveConfig(const SolveConfig& cfg) { return configToJson(cfg).dump(2) + "\n"; }

inline SolveConfig loadConfig(const std::string& text, const SolveConfig& base, const std::string& source = "config")
{
    const Json j = parseJson(text, source);
    try {
        return withJsonContext(source, [&] { return configFromJson(j, base); });
    } catch (const ParseError& e) {
        const std::string what = e.what();
        throw ParseError(what.rfind(source, 0) == 0 ? what : source + ": " + what);
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

//------------------------------------------------------------------------------
// Correspondence table (CSV): external_id,kind,site,weight
//------------------------------------------------------------------------------

inline std::string saveCorrespondences(const CorrespondenceTable& table)
{
    table.validate();
    std::string out = "external_id,kind,site,weight\n";
    for (const auto& e : table.entries) {
        checkCsvField(e.site, "site name");
        out += std::to_string(e.key.id) + "," + toString(e.key.kind) + "," + e.site + "," + formatDouble(e.weight) +
               "\n";
    }
    return out;
}

inline CorrespondenceTable loadCorrespondences(const std::string& text, const std::string& source = "correspondences")
{
    CsvReader csv(text, source);
    csv.expectHeader({"external_id", "kind", "site", "weight"});
    CorrespondenceTable table;
    std::vector<std::string_view> c;
    while (csv.next(c)) {
        std::uint32_t id = 0;
        const auto res = std::from_chars(c[0].data(), c[0].data() + c[0].size(), id);
        if (res.ec != std::errc() || res.ptr != c[0].data() + c[0].size())
            csv.fail("invalid external id '" + std::string(c[0]) + "'");
        SourceKind kind{};
        try {
            kind = sourceKindFromString(std::string(c[1]));
        } catch (const ParseError& e) {
            csv.fail(e.what());
        }
        table.entries.push_back({{kind, id}, std::string(c[2]), csv.number(c[3])});
        try {
            table.validate();
        } catch (const CorrespondenceError& e) {
            csv.fail(e.what());
        }
    }
    return table;
}

//------------------------------------------------------------------------------
// Evaluation regions (JSON)
//------------------------------------------------------------------------------

struct RegionSet {
    std::vector<AlignmentRegion> regions;
    /// Coordinates for the angle metric; empty means all non-root angles.
    std::vector<std::string> angleCoordinates;
    BallAngleMetric ballMetric = BallAngleMetric::Component;

    friend bool operator==(const RegionSet&, const RegionSet&) = default;
};

inline std::string saveRegions(const RegionSet& set)
{
    Json regions = Json::array();
    for (const auto& r : set.regions)
        regions.push_back({{"name", r.name}, {"align", r.siteNames}, {"report", r.reportSites}});
    const Json j = {{"regions", regions},
                    {"angle_coordinates", set.angleCoordinates},
                    {"ball_metric", set.ballMetric == BallAngleMetric::Component ? "component" : "geodesic"}};
    return j.dump(2) + "\n";
}

inline RegionSet loadRegions(const std::string& text, const std::string& source = "regions")
{
    const Json j = parseJson(text, source);
    return withJsonContext(source, [&] {
        RegionSet set;
        for (const auto& jr : j.at("regions")) {
            AlignmentRegion r;
            r.name = jr.at("name").get<std::string>();
            r.siteNames = jr.at("align").get<std::vector<std::string>>();
            r.reportSites = jr.value("report", std::vector<std::string>{});
            if (r.siteNames.size() < 3)
                throw ParseError(source + ": region '" + r.name + "' needs at least 3 alignment sites");
            set.regions.push_back(std::move(r));
        }
        set.angleCoordinates = j.value("angle_coordinates", std::vector<std::string>{});
        const std::string metric = j.value("ball_metric", std::string("component"));
        if (metric == "component")
            set.ballMetric = BallAngleMetric::Component;
        else if (metric == "geodesic")
            set.ballMetric = BallAngleMetric::Geodesic;
        else
            throw ParseError(source + ": unknown ball_metric '" + metric + "'");
        return set;
    });
}

}  // namespace kinefit::io
