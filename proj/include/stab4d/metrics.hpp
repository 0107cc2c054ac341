#pragma once

#include <optional>

#include "stab4d/frame_io.hpp"

namespace stab4d {

struct MetricsReport {
    double mean_iou = 0.0;
    double pct_above_0_6 = 0.0;
    double pct_below_0_3 = 0.0;
    double delta_mesh = 0.0;   // meters
    double delta_pose = 0.0;   // radians
    double cv_iou = 0.0;
    std::optional<double> pa_pve;  // millimeters
    int lag = 20;
    int gap_frames = 0;  // frames excluded from IoU statistics

    std::vector<double> per_frame_iou;         // NaN on gaps
    std::vector<double> per_frame_delta_mesh;  // 0 at frame 0
    std::vector<double> per_frame_delta_pose;

    nlohmann::json to_json() const;
    void write_csv(const std::filesystem::path& path) const;
};

/// Per-frame IoU between the rasterized posed mesh and the mask, at full
/// resolution. Invalid frames and empty masks yield NaN (occlusion gaps).
std::vector<double> mesh_mask_iou_series(std::span<const FrameRecord> frames,
                                         const std::vector<SilhouetteMask>& masks,
                                         const BodyModel& model, const CameraIntrinsics& K);

/// Mean Frobenius-normalized per-vertex displacement between consecutive
/// frames: (1/(T-1)) sum_t (1/Nv) ||V_t - V_{t-1}||_F.
double temporal_displacement(const std::vector<Points>& vertex_sequence);

/// Mean L2 distance of pose parameters between consecutive frames.
double pose_consistency(const std::vector<VecX>& poses);

/// Mean IoU of frame t's mesh re-projected under frame (t+lag)'s placement
/// against frame (t+lag)'s mask. lag = 0 reproduces the plain IoU mean
/// exactly.
double cross_view_iou(std::span<const FrameRecord> frames, const std::vector<SilhouetteMask>& masks,
                      const BodyModel& model, const CameraIntrinsics& K, int lag = 20);

/// Mean over frames of the nearest-neighbor vertex error after Procrustes
/// alignment, in millimeters.
double pa_pve(const std::vector<Points>& pred, const std::vector<Points>& gt);

MetricsReport compute_metrics(std::span<const FrameRecord> frames,
                              const std::vector<SilhouetteMask>& masks, const BodyModel& model,
                              const CameraIntrinsics& K, int lag = 20,
                              const std::vector<Points>* gt_vertices = nullptr);

}  // namespace stab4d
