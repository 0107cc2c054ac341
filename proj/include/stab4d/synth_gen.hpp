#pragma once

#include "stab4d/frame_io.hpp"

namespace stab4d {

struct NoiseSpec {
    double pose_jitter_sigma = 0.0;         // radians per pose element
    double translation_jitter_sigma = 0.0;  // meters
    double outlier_rate = 0.0;
    double outlier_magnitude = 1.0;  // radians
    double dropout_rate = 0.0;       // empty-mask frames
    struct OcclusionWindow {
        long long start = 0;
        long long end = 0;  // inclusive
        double visible_fraction = 1.0;
    };
    std::vector<OcclusionWindow> occlusion_windows;
};

struct ScenarioSpec {
    std::uint64_t seed = 0;
    int n_frames = 375;
    double fps = 25.0;
    double orbit_degrees = 360.0;
    double orbit_radius = 2.2;  // meters
    int raster_width = 760;
    int raster_height = 428;
    PoseParams base_pose;    // zeros(3J) when empty
    ShapeParams base_shape;  // zeros(N_beta), scale 1 when empty
    NoiseSpec noise;

    nlohmann::json to_json() const;
    static ScenarioSpec from_json(const nlohmann::json& doc);
};

/// Deterministic capsule-limb articulated body with an SMPL-like joint tree,
/// lying along +x with up = +y, left/right symmetric about the z = 0 plane.
/// Ten shape blendshapes scale per-segment girth and length. Includes an
/// exact joint regressor anchored on the capsule axis vertices.
BodyModel make_procedural_body(int joints = 24);

struct InjectionLog {
    struct Entry {
        long long frame = 0;
        std::vector<std::string> types;  // jitter | outlier | dropout | occlusion
    };
    std::vector<Entry> entries;

    bool frame_has(long long frame, const std::string& type) const;
    nlohmann::json to_json() const;
    static InjectionLog from_json(const nlohmann::json& doc);
};

struct BundleSummary {
    std::filesystem::path dir;
    int n_frames = 0;
    int outlier_count = 0;
    int dropout_count = 0;
    int occluded_count = 0;
    int jittered_count = 0;
};

/// Writes a dataset bundle: model.json, scenario.json, gt_frames.jsonl,
/// pred_frames.jsonl, gt_masks/NNNNNN.pgm, masks/NNNNNN.pgm, gt_vertices.f32
/// and injection_log.json. Byte-identical for identical (spec, model).
BundleSummary generate_scenario(const ScenarioSpec& spec, const BodyModel& model,
                                const std::filesystem::path& out_dir);

struct Bundle {
    std::filesystem::path dir;
    ScenarioSpec scenario;
    CameraIntrinsics K;
    BodyModel model;
    std::vector<FrameRecord> gt_frames;
    std::vector<FrameRecord> pred_frames;
};

Bundle load_bundle(const std::filesystem::path& dir);

/// Loads each frame's mask; empty mask paths produce empty masks at the
/// raster size. Missing files raise InputError naming the frame.
std::vector<SilhouetteMask> load_masks(const std::filesystem::path& bundle_dir,
                                       std::span<const FrameRecord> frames,
                                       const CameraIntrinsics& K);

/// Row-major T x Nv x 3 little-endian float32 with a 16-byte header:
/// magic "P4DV", then T and Nv as 32-bit unsigned, then 4 reserved bytes.
void write_gt_vertices(const std::filesystem::path& path, const std::vector<Points>& frames);
std::vector<Points> read_gt_vertices(const std::filesystem::path& path);

InjectionLog read_injection_log(const std::filesystem::path& path);

/// Keep a centered horizontal band of the mask whose area is as close as
/// possible to fraction * total.
SilhouetteMask erode_mask_to_fraction(const SilhouetteMask& mask, double fraction);

}  // namespace stab4d
