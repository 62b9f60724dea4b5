#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "posegen/data.hpp"
#include "posegen/geometry.hpp"
#include "posegen/ply.hpp"

#include "json.hpp"

namespace posegen {

struct PoseSampling {
    double rot_bound = M_PI / 6.0;  // max rotation angle from canonical, radians
    double xy_range = 0.08;         // meters, uniform in [-range, range]
    double z_min = 0.5;             // meters
    double z_max = 1.5;
};

struct ObjectEntry {
    std::string id;
    std::string ply_path;  // relative to the dataset directory
    bool symmetric = false;
    double diameter = 0.0;
    std::string shape;
    double scale = 0.0;
    std::size_t n_points = 0;
    std::uint64_t seed = 0;
};

struct SampleRef {
    std::string object_id;
    RigidTransform pose_gt;
    std::string observed_ply;  // relative to the dataset directory
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    CameraIntrinsics camera;
    ViewParams view;
    PoseSampling pose_sampling;
    std::vector<ObjectEntry> objects;
    std::vector<SampleRef> samples;
};

inline void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["camera"] = {{"fx", m.camera.fx},   {"fy", m.camera.fy},     {"cx", m.camera.cx},
                   {"cy", m.camera.cy},   {"width", m.camera.width}, {"height", m.camera.height}};
    j["view"] = {{"noise_sigma", m.view.noise_sigma},
                 {"occlusion_fraction", m.view.occlusion_fraction},
                 {"cull", m.view.cull},
                 {"model_sample_count", m.view.model_sample_count}};
    j["pose_sampling"] = {{"rot_bound", m.pose_sampling.rot_bound},
                          {"xy_range", m.pose_sampling.xy_range},
                          {"z_min", m.pose_sampling.z_min},
                          {"z_max", m.pose_sampling.z_max}};
    j["objects"] = nlohmann::json::array();
    for (const auto& o : m.objects) {
        j["objects"].push_back({{"id", o.id},
                                {"ply", o.ply_path},
                                {"symmetric", o.symmetric},
                                {"diameter", o.diameter},
                                {"shape", o.shape},
                                {"scale", o.scale},
                                {"n_points", o.n_points},
                                {"seed", o.seed}});
    }
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples) {
        const Quaternion& q = s.pose_gt.rotation;
        j["samples"].push_back(
            {{"object_id", s.object_id},
             {"quat_wxyz", {q.w, q.x, q.y, q.z}},
             {"translation", {s.pose_gt.translation.x(), s.pose_gt.translation.y(),
                              s.pose_gt.translation.z()}},
             {"observed_ply", s.observed_ply},
             {"seed", s.seed}});
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw std::runtime_error("write_manifest: cannot open " + (dir / "manifest.json").string());
    out << j.dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);  // throws on malformed JSON
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& cam = j.at("camera");
    m.camera.fx = cam.at("fx");
    m.camera.fy = cam.at("fy");
    m.camera.cx = cam.at("cx");
    m.camera.cy = cam.at("cy");
    m.camera.width = cam.at("width");
    m.camera.height = cam.at("height");
    const auto& view = j.at("view");
    m.view.noise_sigma = view.at("noise_sigma");
    m.view.occlusion_fraction = view.at("occlusion_fraction");
    m.view.cull = view.at("cull");
    m.view.model_sample_count = view.at("model_sample_count");
    const auto& ps = j.at("pose_sampling");
    m.pose_sampling.rot_bound = ps.at("rot_bound");
    m.pose_sampling.xy_range = ps.at("xy_range");
    m.pose_sampling.z_min = ps.at("z_min");
    m.pose_sampling.z_max = ps.at("z_max");
    for (const auto& o : j.at("objects")) {
        ObjectEntry e;
        e.id = o.at("id");
        e.ply_path = o.at("ply");
        e.symmetric = o.at("symmetric");
        e.diameter = o.at("diameter");
        e.shape = o.at("shape");
        e.scale = o.at("scale");
        e.n_points = o.at("n_points").get<std::size_t>();
        e.seed = o.at("seed").get<std::uint64_t>();
        if (!std::filesystem::exists(dir / e.ply_path)) {
            throw std::runtime_error("read_manifest: missing object file " + (dir / e.ply_path).string());
        }
        m.objects.push_back(std::move(e));
    }
    for (const auto& s : j.at("samples")) {
        SampleRef ref;
        ref.object_id = s.at("object_id");
        const auto& q = s.at("quat_wxyz");
        ref.pose_gt.rotation = Quaternion(q.at(0), q.at(1), q.at(2), q.at(3));
        if (!ref.pose_gt.rotation.is_unit()) {
            throw std::runtime_error("read_manifest: non-unit quaternion in sample entry (norm " +
                                     std::to_string(ref.pose_gt.rotation.norm()) + ")");
        }
        const auto& t = s.at("translation");
        ref.pose_gt.translation = Vec3(t.at(0), t.at(1), t.at(2));
        ref.observed_ply = s.at("observed_ply");
        ref.seed = s.at("seed").get<std::uint64_t>();
        if (!std::filesystem::exists(dir / ref.observed_ply)) {
            throw std::runtime_error("read_manifest: missing sample file " +
                                     (dir / ref.observed_ply).string());
        }
        m.samples.push_back(std::move(ref));
    }
    return m;
}

// ---- dataset generation and loading -----------------------------------------

struct DatasetSpec {
    std::vector<std::string> shapes = {"cube", "l_block", "cylinder", "sphere"};
    std::size_t samples_per_object = 100;
    std::size_t object_points = 512;
    double object_scale = 0.1;  // meters
    ViewParams view;
    PoseSampling pose_sampling;
    CameraIntrinsics camera;
    std::uint64_t seed = 1;
};

inline RigidTransform sample_dataset_pose(const PoseSampling& ps, Rng& rng) {
    const double zc = rng.uniform(-1.0, 1.0);
    const double phi = rng.uniform(0.0, 2.0 * M_PI);
    const double s = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const Vec3 axis(s * std::cos(phi), s * std::sin(phi), zc);
    const double angle = rng.uniform(0.0, ps.rot_bound);
    const Vec3 t(rng.uniform(-ps.xy_range, ps.xy_range), rng.uniform(-ps.xy_range, ps.xy_range),
                 rng.uniform(ps.z_min, ps.z_max));
    const Quaternion q =
        ps.rot_bound > 0.0 ? Quaternion::from_axis_angle(axis, angle) : Quaternion::identity();
    return {q, t};
}

// Generates objects/*.ply, samples/*.ply and manifest.json under dir.
// Fully deterministic in spec.seed.
inline DatasetManifest generate_dataset(const std::filesystem::path& dir, const DatasetSpec& spec) {
    if (spec.samples_per_object < 1) {
        throw std::invalid_argument("generate_dataset: samples_per_object must be >= 1");
    }
    std::filesystem::create_directories(dir / "objects");
    std::filesystem::create_directories(dir / "samples");
    DatasetManifest m;
    m.seed = spec.seed;
    m.camera = spec.camera;
    m.view = spec.view;
    m.pose_sampling = spec.pose_sampling;

    std::vector<ObjectModel> models;
    for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        const std::uint64_t obj_seed = Rng::mix(spec.seed, 100 + i);
        ObjectModel obj = make_object(spec.shapes[i], spec.object_points, spec.object_scale, obj_seed);
        ObjectEntry entry;
        entry.id = obj.id;
        entry.ply_path = "objects/" + obj.id + ".ply";
        entry.symmetric = obj.symmetric;
        entry.diameter = obj.diameter;
        entry.shape = spec.shapes[i];
        entry.scale = spec.object_scale;
        entry.n_points = spec.object_points;
        entry.seed = obj_seed;
        write_ply((dir / entry.ply_path).string(), obj.cloud_cano);
        m.objects.push_back(entry);
        models.push_back(std::move(obj));
    }

    std::size_t sample_index = 0;
    for (std::size_t oi = 0; oi < models.size(); ++oi) {
        for (std::size_t si = 0; si < spec.samples_per_object; ++si, ++sample_index) {
            Rng pose_rng = Rng::substream(spec.seed, 1000 + sample_index);
            const RigidTransform pose = sample_dataset_pose(spec.pose_sampling, pose_rng);
            const std::uint64_t view_seed = Rng::mix(spec.seed, 500000 + sample_index);
            const Sample sample = render_sample(models[oi], pose, spec.camera, spec.view, view_seed);
            SampleRef ref;
            ref.object_id = models[oi].id;
            ref.pose_gt = pose;
            char name[64];
            std::snprintf(name, sizeof(name), "samples/%06zu.ply", sample_index);
            ref.observed_ply = name;
            ref.seed = view_seed;
            write_ply((dir / ref.observed_ply).string(), sample.observed);
            m.samples.push_back(ref);
        }
    }
    write_manifest(dir, m);
    return m;
}

// In-memory dataset: objects plus regenerated samples (appearance features
// are procedural, so samples rematerialize exactly from the stored seeds).
struct Dataset {
    DatasetManifest manifest;
    std::map<std::string, ObjectModel> objects;
    std::vector<Sample> samples;
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = read_manifest(dir);
    for (const auto& entry : ds.manifest.objects) {
        ObjectModel obj;
        obj.id = entry.id;
        obj.cloud_cano = read_ply((dir / entry.ply_path).string());
        obj.symmetric = entry.symmetric;
        obj.diameter = entry.diameter;
        ds.objects.emplace(obj.id, std::move(obj));
    }
    for (const auto& ref : ds.manifest.samples) {
        const ObjectModel& obj = ds.objects.at(ref.object_id);
        ds.samples.push_back(
            render_sample(obj, ref.pose_gt, ds.manifest.camera, ds.manifest.view, ref.seed));
    }
    return ds;
}

}  // namespace posegen
