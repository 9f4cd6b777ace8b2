// SPDX-License-Identifier: Apache-2.0
#include "gsdyn/scene.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "json_util.hpp"

namespace gsdyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(const char* stem, int f, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, f, ext);
    return buf;
}

json load_json(const std::string& path) { return load_json_file(path); }

void dump_json(const std::string& path, const json& j) { dump_json_file(path, j); }

}  // namespace

std::string Scene::frame_path(int f) const { return dir + "/frames/" + frame_name("frame", f, "ply"); }
std::string Scene::image_path(int cam, int f) const {
    return dir + "/images/cam" + std::to_string(cam) + "/" + frame_name("frame", f, "png");
}
std::string Scene::mask_path(int cam, int f) const {
    return dir + "/masks/cam" + std::to_string(cam) + "/" + frame_name("frame", f, "png");
}
std::string Scene::depth_path(int cam, int f) const {
    return dir + "/depth/cam" + std::to_string(cam) + "/" + frame_name("frame", f, "pfm");
}
std::string Scene::truth_frame_path(int f) const {
    return dir + "/truth/frames/" + frame_name("frame", f, "ply");
}

GaussianFrame Scene::load_frame(int f) const { return read_gaussians_ply(frame_path(f)); }
GaussianFrame Scene::load_truth_frame(int f) const {
    return read_gaussians_ply(truth_frame_path(f));
}
ImageU8 Scene::load_image(int cam, int f) const { return read_png(image_path(cam, f)); }
ImageU8 Scene::load_mask(int cam, int f) const { return read_png(mask_path(cam, f)); }
ImageF Scene::load_depth(int cam, int f) const { return read_pfm(depth_path(cam, f)); }

void save_manifest(const Scene& scene) {
    json j;
    j["format"] = "gsdyn-scene-v1";
    j["name"] = scene.name;
    j["frame_rate"] = scene.frame_rate;
    j["frame_count"] = scene.frame_count;
    j["num_objects"] = scene.num_objects;
    json cams = json::array();
    for (const Camera& c : scene.cameras) {
        json jc;
        jc["fx"] = c.fx;
        jc["fy"] = c.fy;
        jc["cx"] = c.cx;
        jc["cy"] = c.cy;
        jc["width"] = c.width;
        jc["height"] = c.height;
        std::vector<double> r(9);
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) r[static_cast<size_t>(i * 3 + k)] = c.r_wc(i, k);
        jc["r"] = r;
        jc["t"] = {c.t_wc.x(), c.t_wc.y(), c.t_wc.z()};
        cams.push_back(jc);
    }
    j["cameras"] = cams;
    dump_json(scene.manifest_path(), j);
}

Scene load_scene(const std::string& dir) {
    Scene s;
    s.dir = dir;
    json j = load_json(dir + "/manifest.json");
    try {
        if (j.at("format").get<std::string>() != "gsdyn-scene-v1")
            throw IoError(dir + ": unknown manifest format");
        s.name = j.at("name").get<std::string>();
        s.frame_rate = j.at("frame_rate").get<double>();
        s.frame_count = j.at("frame_count").get<int>();
        s.num_objects = j.at("num_objects").get<int>();
        for (const json& jc : j.at("cameras")) {
            Camera c;
            c.fx = jc.at("fx").get<double>();
            c.fy = jc.at("fy").get<double>();
            c.cx = jc.at("cx").get<double>();
            c.cy = jc.at("cy").get<double>();
            c.width = jc.at("width").get<int>();
            c.height = jc.at("height").get<int>();
            auto r = jc.at("r").get<std::vector<double>>();
            auto t = jc.at("t").get<std::vector<double>>();
            if (r.size() != 9 || t.size() != 3) throw IoError(dir + ": bad camera extrinsics");
            for (int i = 0; i < 3; ++i)
                for (int k = 0; k < 3; ++k) c.r_wc(i, k) = r[static_cast<size_t>(i * 3 + k)];
            c.t_wc = Vec3(t[0], t[1], t[2]);
            s.cameras.push_back(c);
        }
    } catch (const json::exception& e) {
        throw IoError(dir + "/manifest.json: " + e.what());
    }
    return s;
}

std::vector<std::string> list_scene_dirs(const std::string& root) {
    std::vector<std::string> dirs;
    if (!fs::is_directory(root)) throw IoError("not a directory: " + root);
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory() && fs::exists(entry.path() / "manifest.json"))
            dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    return dirs;
}

void save_tracks(const std::string& path, const TrackSet& tracks) {
    json j;
    j["format"] = "gsdyn-tracks-v1";
    json views = json::array();
    for (size_t c = 0; c < tracks.views.size(); ++c) {
        json jv;
        jv["camera"] = static_cast<int>(c);
        json pts = json::array();
        for (const TrackPoint& p : tracks.views[c]) {
            json jp;
            jp["object"] = p.object;
            json obs = json::array();
            for (const auto& o : p.obs) obs.push_back({o[0], o[1], o[2], o[3]});
            jp["track"] = obs;
            pts.push_back(jp);
        }
        jv["points"] = pts;
        views.push_back(jv);
    }
    j["views"] = views;
    dump_json(path, j);
}

TrackSet load_tracks(const std::string& path) {
    json j = load_json(path);
    TrackSet tracks;
    try {
        const json& views = j.at("views");
        tracks.views.resize(views.size());
        for (const json& jv : views) {
            int cam = jv.at("camera").get<int>();
            if (cam < 0 || static_cast<size_t>(cam) >= tracks.views.size())
                throw IoError(path + ": camera index out of range");
            for (const json& jp : jv.at("points")) {
                TrackPoint p;
                p.object = jp.at("object").get<int>();
                for (const json& o : jp.at("track"))
                    p.obs.push_back({o.at(0).get<double>(), o.at(1).get<double>(),
                                     o.at(2).get<double>(), o.at(3).get<double>()});
                tracks.views[static_cast<size_t>(cam)].push_back(std::move(p));
            }
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return tracks;
}

void save_poses(const std::string& path, const PoseSet& poses) {
    json j;
    j["format"] = "gsdyn-poses-v1";
    json objs = json::array();
    for (size_t m = 0; m < poses.objects.size(); ++m) {
        json jo;
        jo["object"] = static_cast<int>(m) + 1;
        json arr = json::array();
        for (size_t f = 0; f < poses.objects[m].size(); ++f) {
            const SE3& p = poses.objects[m][f];
            json jf;
            jf["frame"] = static_cast<int>(f);
            std::vector<double> r(9);
            for (int i = 0; i < 3; ++i)
                for (int k = 0; k < 3; ++k) r[static_cast<size_t>(i * 3 + k)] = p.r(i, k);
            jf["r"] = r;
            jf["t"] = {p.t.x(), p.t.y(), p.t.z()};
            arr.push_back(jf);
        }
        jo["poses"] = arr;
        objs.push_back(jo);
    }
    j["objects"] = objs;
    dump_json(path, j);
}

PoseSet load_poses(const std::string& path) {
    json j = load_json(path);
    PoseSet poses;
    try {
        const json& objs = j.at("objects");
        poses.objects.resize(objs.size());
        for (const json& jo : objs) {
            int m = jo.at("object").get<int>() - 1;
            if (m < 0 || static_cast<size_t>(m) >= poses.objects.size())
                throw IoError(path + ": object id out of range");
            for (const json& jf : jo.at("poses")) {
                SE3 p;
                auto r = jf.at("r").get<std::vector<double>>();
                auto t = jf.at("t").get<std::vector<double>>();
                if (r.size() != 9 || t.size() != 3) throw IoError(path + ": bad pose");
                for (int i = 0; i < 3; ++i)
                    for (int k = 0; k < 3; ++k) p.r(i, k) = r[static_cast<size_t>(i * 3 + k)];
                p.t = Vec3(t[0], t[1], t[2]);
                size_t f = static_cast<size_t>(jf.at("frame").get<int>());
                auto& vec = poses.objects[static_cast<size_t>(m)];
                if (vec.size() <= f) vec.resize(f + 1);
                vec[f] = p;
            }
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return poses;
}

}  // namespace gsdyn
