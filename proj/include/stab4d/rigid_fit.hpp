#pragma once

#include <functional>
#include <optional>

#include "stab4d/stabilize.hpp"

namespace stab4d {

/// Rigid correction relative to a reference keyframe: rotate the cached
/// reference mesh by omega about its centroid, then translate. Identity
/// params (all zero) reproduce the reference exactly.
struct RigidParams {
    Vec3 omega = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
};

struct KeyframeEntry {
    long long frame_index = 0;
    double iou = 0.0;
    PoseParams pose;
    ShapeParams shape;
    GlobalPlacement placement;
    Points posed_vertices;  // camera frame
    Vec3 centroid = Vec3::Zero();
};

struct KeyframePool {
    std::vector<KeyframeEntry> entries;
};

/// Admit iff iou > tau_q; an empty pool always admits its first entry.
bool pool_admit(KeyframePool& pool, KeyframeEntry entry, const RigidFitConfig& config);

enum class ChainDirection { forward, backward };

/// argmax over eligible entries of iou * exp(-|k - t| / tau_d). Forward
/// chaining considers k <= t, backward k >= t. Ties break toward smaller
/// |k - t|, then smaller k. Throws InputError when nothing is eligible.
const KeyframeEntry& select_reference(const KeyframePool& pool, long long target_index,
                                      const RigidFitConfig& config, ChainDirection direction);

/// Mesh produced by applying rigid params to a reference.
Points transform_reference(const KeyframeEntry& reference, const RigidParams& params);

/// Absolute placement equivalent to rigid params applied on a reference.
GlobalPlacement compose_placement(const KeyframeEntry& reference, const RigidParams& params);

/// Inverse of compose_placement: express an absolute placement as rigid
/// params relative to a reference.
RigidParams params_from_placement(const KeyframeEntry& reference, const GlobalPlacement& placement);

/// Negative Dice of the transformed reference silhouette against the target
/// mask, plus temporal and depth regularizers. The temporal term is omitted
/// when no neighbor is given; the depth term penalizes deviation of the
/// transformed depth from the reference keyframe depth. A transform that
/// pushes the mesh behind the camera scores +1 (worst) instead of failing.
double rigid_objective(const RigidParams& params, const KeyframeEntry& reference,
                       const SilhouetteMask& target_mask, const std::optional<RigidParams>& neighbor,
                       const Faces& faces, const CameraIntrinsics& K, const RigidFitConfig& config);

struct NelderMeadResult {
    VecX x;
    double value = 0.0;
    int iterations = 0;
};

/// Deterministic downhill simplex (reflection 1, expansion 2, contraction
/// 0.5, shrink 0.5). The initial simplex is x0 plus one vertex per dimension
/// offset by steps[i]; terminates when the simplex value spread drops below
/// tol or after max_iter iterations.
NelderMeadResult nelder_mead(const std::function<double(const VecX&)>& objective, const VecX& x0,
                             const VecX& steps, int max_iter, double tol);

struct FitResult {
    RigidParams params;
    double iou_after = 0.0;  // full-resolution IoU against the target mask
    int iterations = 0;
};

/// Six-dimensional simplex search over (omega, translation) minimizing the
/// rigid objective at downscaled resolution. An empty target mask returns the
/// init unchanged.
FitResult fit_frame(const KeyframeEntry& reference, const SilhouetteMask& target_mask,
                    const RigidParams& init, const std::optional<RigidParams>& neighbor,
                    const Faces& faces, const CameraIntrinsics& K, const RigidFitConfig& config);

struct FitReportEntry {
    long long frame = 0;
    double pre_iou = -1.0;   // -1 when undefined (invalid frame / empty mask)
    double post_iou = -1.0;
    long long reference = -1;
    int iterations = 0;
    bool fitted = false;
    std::string note;
};

struct FitReport {
    std::vector<FitReportEntry> entries;
    int fitted_count = 0;

    nlohmann::json to_json() const;
};

/// Fallback mode replaces frames whose silhouette IoU falls below tau_iou by
/// fitted rigid placements of a pool reference; full mode replaces every
/// frame. Frames are processed forward from the initial keyframe, then
/// backward, each fit initialized from the nearest already-fitted neighbor.
/// Fitted trajectories are smoothed with a moving average afterwards. Frames
/// with empty masks are never fitted.
std::vector<FrameRecord> run_rigid_fallback(std::vector<FrameRecord> frames,
                                            const std::vector<SilhouetteMask>& masks,
                                            const KeyframePool& pool, const BodyModel& model,
                                            const CameraIntrinsics& K, const RigidFitConfig& config,
                                            FitReport* report = nullptr);

}  // namespace stab4d
