#pragma once

#include "stab4d/metrics.hpp"
#include "stab4d/rigid_fit.hpp"

namespace stab4d {

/// Ablation presets: A raw pass-through, B outlier rejection, C B + smoothing,
/// D C + pose locking, E D + full-mode rigid fitting, F outlier rejection +
/// shape lock + pose locking + fallback-mode rigid fitting (no smoothing).
enum class Preset { A, B, C, D, E, F };

Preset preset_from_string(const std::string& name);
std::string preset_to_string(Preset preset);

struct PipelineDiagnostics {
    Preset preset = Preset::A;
    std::vector<double> raw_iou;  // NaN on gaps
    std::optional<ShapeParams> locked_shape;
    long long locked_shape_frame = -1;
    std::size_t pool_size = 0;
    FitReport fit_report;
    std::vector<long long> fallback_frames;  // frames replaced by rigid fits
    StabilizerTrace stabilizer_trace;

    nlohmann::json to_json() const;
};

struct PipelineResult {
    std::vector<FrameRecord> frames;
    PipelineDiagnostics diagnostics;
};

/// Applies the stabilizer and the rigid stage per preset. The keyframe pool is
/// built incrementally during a first pass over the raw predictions; shape and
/// scale are locked to the best pool entry for presets D, E and F.
PipelineResult run_pipeline(const std::vector<FrameRecord>& pred_frames,
                            const std::vector<SilhouetteMask>& masks, const BodyModel& model,
                            const CameraIntrinsics& K, Preset preset, const PipelineConfig& config);

struct SubjectCandidate {
    Vec3 pelvis = Vec3::Zero();
    Vec3 neck = Vec3::Zero();
};

/// Index of the candidate whose pelvis-to-neck axis is closest to horizontal
/// (up = +y). Ties go to the lowest index.
int select_recumbent_subject(std::span<const SubjectCandidate> candidates);

}  // namespace stab4d
