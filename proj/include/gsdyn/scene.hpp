// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "gsdyn/io.hpp"

namespace gsdyn {

// One recorded multi-view sequence on disk:
//   scene_dir/
//     manifest.json                  cameras, frame count, object count
//     frames/frame_%04d.ply          frame 0: static input set; 1..N-1: pseudo-labels
//     images/cam%d/frame_%04d.png    RGB renders (gamma 1/2.2)
//     masks/cam%d/frame_%04d.png     object id per pixel, 0 = background
//     depth/cam%d/frame_%04d.pfm     camera-space z in meters, 0 = none
//     tracks.json                    2D point tracks per view
//     poses.json                     estimated per-object poses (pipeline output)
//     truth/                         generator's states; evaluation only
struct Scene {
    std::string dir;
    std::string name;
    double frame_rate = 30.0;
    int frame_count = 0;
    int num_objects = 0;
    std::vector<Camera> cameras;

    int num_views() const { return static_cast<int>(cameras.size()); }

    std::string manifest_path() const { return dir + "/manifest.json"; }
    std::string frame_path(int f) const;
    std::string image_path(int cam, int f) const;
    std::string mask_path(int cam, int f) const;
    std::string depth_path(int cam, int f) const;
    std::string tracks_path() const { return dir + "/tracks.json"; }
    std::string poses_path() const { return dir + "/poses.json"; }
    std::string ids_path() const { return dir + "/ids.json"; }
    std::string truth_frame_path(int f) const;
    std::string truth_poses_path() const { return dir + "/truth/poses.json"; }
    std::string scenario_path() const { return dir + "/truth/scenario.json"; }

    GaussianFrame load_frame(int f) const;
    GaussianFrame load_truth_frame(int f) const;
    ImageU8 load_image(int cam, int f) const;
    ImageU8 load_mask(int cam, int f) const;
    ImageF load_depth(int cam, int f) const;
};

void save_manifest(const Scene& scene);
Scene load_scene(const std::string& dir);
// Scene directories under a dataset root, sorted by name.
std::vector<std::string> list_scene_dirs(const std::string& root);

// 2D tracks. One tracked surface point belongs to one object; per view it has one
// observation per frame: [frame, u, v, visible].
struct TrackPoint {
    int object = 0;  // 1-based id, matching mask pixel values
    std::vector<std::array<double, 4>> obs;
};

struct TrackSet {
    // outer index = camera
    std::vector<std::vector<TrackPoint>> views;
};

void save_tracks(const std::string& path, const TrackSet& tracks);
TrackSet load_tracks(const std::string& path);

// Per-object rigid poses per frame, relative to frame 0 (pose[0] = identity).
struct PoseSet {
    // objects[m][f], m 0-based for object id m+1
    std::vector<std::vector<SE3>> objects;
};

void save_poses(const std::string& path, const PoseSet& poses);
PoseSet load_poses(const std::string& path);

}  // namespace gsdyn
