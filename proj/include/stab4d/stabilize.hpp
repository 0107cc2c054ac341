#pragma once

#include <deque>
#include <optional>
#include <span>

#include "stab4d/frame_io.hpp"

namespace stab4d {

enum class StabilizerMode {
    outlier_only,         // rejection only
    outlier_smooth,       // rejection + median/EMA smoothing
    outlier_smooth_lock,  // rejection + smoothing + anchor locking + shape lock
    lock_direct,          // rejection + anchor locking on raw accepted values,
                          // shape lock, no median/EMA smoothing
};

enum class ParamGroup { theta, rotation, translation };
enum class SegmentClass { static_segment, dynamic_segment };

struct GroupState {
    VecX last_accepted;
    int reject_count = 0;
    bool initialized = false;
};

/// Streaming state; survives batch boundaries so that split processing is
/// byte-identical to single-batch processing.
struct StabilizerState {
    StabilizerConfig config;
    GroupState theta;
    GroupState rotation;
    GroupState translation;
    std::deque<VecX> warmup_buffer;  // accepted theta vectors, capacity = warmup
    std::optional<VecX> anchor;
    SegmentClass segment_class = SegmentClass::static_segment;

    // trailing windows of accepted values (length median_window)
    std::deque<VecX> theta_window;
    std::deque<VecX> trans_window;

    // previous smoothed values per group
    VecX theta_smoothed;
    Vec3 rotation_smoothed = Vec3::Zero();
    Vec3 trans_smoothed = Vec3::Zero();
    bool smoothed_initialized = false;

    std::optional<ShapeParams> locked_shape;
    std::vector<FrameRecord> pending_gap;
    std::optional<FrameRecord> last_emitted_valid;
    bool any_valid_seen = false;
};

struct RejectionResult {
    VecX accepted;
    bool rejected = false;      // prediction replaced by hold
    bool force_accepted = false;
};

/// Outlier gate for one parameter group. First value is always accepted;
/// a prediction farther than the group threshold from the last accepted value
/// is replaced by it; after n_max consecutive rejections the next oversized
/// prediction is force-accepted as a blend.
RejectionResult reject_outlier(StabilizerState& state, ParamGroup group, const VecX& prediction);

/// Broadcast one shape estimate to every frame; other fields untouched.
std::vector<FrameRecord> lock_shape(std::vector<FrameRecord> frames, const ShapeParams& keyframe_shape);

/// Centered per-dimension sliding median with shrinking windows at the edges.
/// Even-sized edge windows take the lower-middle element.
MatX median_filter(const MatX& series, int window);

/// Static iff the mean consecutive L2 step over the window is strictly below
/// the threshold.
SegmentClass classify_segment(std::span<const VecX> recent_poses, double static_motion_threshold);

/// Element-wise median over buffer rows; even row counts take the
/// lower-middle element.
VecX compute_anchor(const MatX& warmup_rows);

/// alpha*prediction + (1-alpha)*((1-alpha_a)*prev_smoothed + alpha_a*anchor)
VecX pose_lock_step(const VecX& prev_smoothed, const VecX& prediction, const VecX& anchor,
                    double alpha, double alpha_a);

/// Fill maximal runs of invalid frames by per-dimension linear interpolation
/// of pose, shape and translation between the bracketing valid frames;
/// rotation interpolates geodesically. Leading/trailing runs copy the nearest
/// valid frame. Throws InputError when no frame is valid.
std::vector<FrameRecord> interpolate_gaps(std::vector<FrameRecord> frames);

struct StabilizerTrace {
    struct Frame {
        long long index = 0;
        bool valid = false;
        bool rejected_theta = false, rejected_rotation = false, rejected_translation = false;
        bool forced_theta = false, forced_rotation = false, forced_translation = false;
        bool interpolated = false;
    };
    std::vector<Frame> frames;
};

/// Streaming stabilizer. Valid frames are corrected and emitted immediately;
/// invalid frames are held until the gap closes (or finish() flushes them).
class Stabilizer {
public:
    Stabilizer(const StabilizerConfig& config, StabilizerMode mode,
               std::optional<ShapeParams> locked_shape = std::nullopt);

    std::vector<FrameRecord> process(std::span<const FrameRecord> batch);
    std::vector<FrameRecord> finish();

    const StabilizerState& state() const { return state_; }
    const StabilizerTrace& trace() const { return trace_; }

private:
    FrameRecord correct(const FrameRecord& frame, StabilizerTrace::Frame& tf);
    void flush_gap(std::vector<FrameRecord>& out, const FrameRecord* right);

    StabilizerState state_;
    StabilizerMode mode_;
    StabilizerTrace trace_;
};

/// Whole-sequence convenience wrapper around Stabilizer.
std::vector<FrameRecord> run_stabilizer(std::span<const FrameRecord> frames,
                                        const StabilizerConfig& config, StabilizerMode mode,
                                        std::optional<ShapeParams> locked_shape = std::nullopt,
                                        StabilizerTrace* trace = nullptr);

}  // namespace stab4d
