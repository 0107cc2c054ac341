#include "stab4d/stabilize.hpp"

#include <algorithm>

namespace stab4d {

namespace {

double group_threshold(const StabilizerConfig& cfg, ParamGroup group) {
    switch (group) {
        case ParamGroup::theta: return cfg.tau_theta;
        case ParamGroup::rotation: return cfg.tau_r;
        default: return cfg.tau_c;
    }
}

GroupState& group_state(StabilizerState& state, ParamGroup group) {
    switch (group) {
        case ParamGroup::theta: return state.theta;
        case ParamGroup::rotation: return state.rotation;
        default: return state.translation;
    }
}

double mean_consecutive_step(std::span<const VecX> window) {
    if (window.size() < 2) return 0.0;
    double total = 0.0;
    for (std::size_t i = 1; i < window.size(); ++i) total += (window[i] - window[i - 1]).norm();
    return total / double(window.size() - 1);
}

VecX window_median(const std::deque<VecX>& window) {
    MatX rows(window.size(), window.front().size());
    for (std::size_t i = 0; i < window.size(); ++i) rows.row(Eigen::Index(i)) = window[i];
    return compute_anchor(rows);
}

}  // namespace

RejectionResult reject_outlier(StabilizerState& state, ParamGroup group, const VecX& prediction) {
    GroupState& g = group_state(state, group);
    if (g.initialized && g.last_accepted.size() != prediction.size())
        throw InputError("reject_outlier: prediction dimension mismatch");

    RejectionResult result;
    if (!g.initialized) {
        g.initialized = true;
        g.last_accepted = prediction;
        result.accepted = prediction;
        return result;
    }

    double distance;
    if (group == ParamGroup::rotation && state.config.rotation_reject_geodesic)
        distance = so3_distance(Vec3(g.last_accepted.head<3>()), Vec3(prediction.head<3>()));
    else
        distance = (prediction - g.last_accepted).norm();

    if (distance > group_threshold(state.config, group)) {
        if (g.reject_count >= state.config.n_max) {
            // force-accept: blend toward the live prediction so the filter
            // cannot freeze indefinitely
            const double b = state.config.force_blend;
            result.accepted = b * prediction + (1.0 - b) * g.last_accepted;
            result.force_accepted = true;
            g.reject_count = 0;
            g.last_accepted = result.accepted;
        } else {
            ++g.reject_count;
            result.accepted = g.last_accepted;
            result.rejected = true;
        }
    } else {
        g.reject_count = 0;
        g.last_accepted = prediction;
        result.accepted = prediction;
    }
    return result;
}

std::vector<FrameRecord> lock_shape(std::vector<FrameRecord> frames, const ShapeParams& keyframe_shape) {
    for (FrameRecord& f : frames) {
        if (!f.valid) continue;
        f.shape = keyframe_shape;
    }
    return frames;
}

VecX compute_anchor(const MatX& rows) {
    if (rows.rows() == 0) throw InputError("compute_anchor: empty buffer");
    VecX out(rows.cols());
    std::vector<double> column(std::size_t(rows.rows()));
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
        for (Eigen::Index r = 0; r < rows.rows(); ++r) column[std::size_t(r)] = rows(r, c);
        const std::size_t mid = (column.size() - 1) / 2;  // lower middle for even counts
        std::nth_element(column.begin(), column.begin() + mid, column.end());
        out[c] = column[mid];
    }
    return out;
}

MatX median_filter(const MatX& series, int window) {
    if (window < 1 || window % 2 == 0) throw InputError("median_filter: window must be odd and positive");
    const Eigen::Index T = series.rows();
    const int h = window / 2;
    MatX out(T, series.cols());
    std::vector<double> buf;
    for (Eigen::Index t = 0; t < T; ++t) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, t - h);
        const Eigen::Index hi = std::min<Eigen::Index>(T - 1, t + h);
        const std::size_t n = std::size_t(hi - lo + 1);
        for (Eigen::Index c = 0; c < series.cols(); ++c) {
            buf.resize(n);
            for (Eigen::Index r = lo; r <= hi; ++r) buf[std::size_t(r - lo)] = series(r, c);
            const std::size_t mid = (n - 1) / 2;
            std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
            out(t, c) = buf[mid];
        }
    }
    return out;
}

SegmentClass classify_segment(std::span<const VecX> recent_poses, double static_motion_threshold) {
    return mean_consecutive_step(recent_poses) < static_motion_threshold ? SegmentClass::static_segment
                                                                         : SegmentClass::dynamic_segment;
}

VecX pose_lock_step(const VecX& prev_smoothed, const VecX& prediction, const VecX& anchor,
                    double alpha, double alpha_a) {
    return alpha * prediction + (1.0 - alpha) * ((1.0 - alpha_a) * prev_smoothed + alpha_a * anchor);
}

namespace {

FrameRecord blend_frames(const FrameRecord& a, const FrameRecord& b, double fraction,
                         const FrameRecord& shell) {
    FrameRecord out = shell;
    out.valid = true;
    out.pose.joint_rotations =
        (1.0 - fraction) * a.pose.joint_rotations + fraction * b.pose.joint_rotations;
    out.shape.beta = (1.0 - fraction) * a.shape.beta + fraction * b.shape.beta;
    out.shape.scale = (1.0 - fraction) * a.shape.scale + fraction * b.shape.scale;
    out.placement.translation =
        (1.0 - fraction) * a.placement.translation + fraction * b.placement.translation;
    out.placement.rotation = so3_geodesic_blend(a.placement.rotation, b.placement.rotation, fraction);
    return out;
}

FrameRecord copy_params(const FrameRecord& src, const FrameRecord& shell) {
    FrameRecord out = shell;
    out.valid = true;
    out.pose = src.pose;
    out.shape = src.shape;
    out.placement = src.placement;
    return out;
}

}  // namespace

std::vector<FrameRecord> interpolate_gaps(std::vector<FrameRecord> frames) {
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (frames[i].valid) valid.push_back(i);
    if (valid.empty()) throw InputError("interpolate_gaps: no valid frame in sequence");

    for (std::size_t i = 0; i < valid.front(); ++i) frames[i] = copy_params(frames[valid.front()], frames[i]);
    for (std::size_t i = valid.back() + 1; i < frames.size(); ++i)
        frames[i] = copy_params(frames[valid.back()], frames[i]);

    for (std::size_t k = 0; k + 1 < valid.size(); ++k) {
        const std::size_t a = valid[k], b = valid[k + 1];
        const double span = double(frames[b].index - frames[a].index);
        for (std::size_t i = a + 1; i < b; ++i) {
            const double fraction = double(frames[i].index - frames[a].index) / span;
            frames[i] = blend_frames(frames[a], frames[b], fraction, frames[i]);
        }
    }
    return frames;
}

Stabilizer::Stabilizer(const StabilizerConfig& config, StabilizerMode mode,
                       std::optional<ShapeParams> locked_shape)
    : mode_(mode) {
    config.validate();
    state_.config = config;
    state_.locked_shape = std::move(locked_shape);
}

FrameRecord Stabilizer::correct(const FrameRecord& frame, StabilizerTrace::Frame& tf) {
    StabilizerState& st = state_;
    const StabilizerConfig& cfg = st.config;

    const RejectionResult th = reject_outlier(st, ParamGroup::theta, frame.pose.joint_rotations);
    const RejectionResult rr = reject_outlier(st, ParamGroup::rotation, frame.placement.rotation);
    const RejectionResult tc = reject_outlier(st, ParamGroup::translation, frame.placement.translation);
    tf.rejected_theta = th.rejected;
    tf.rejected_rotation = rr.rejected;
    tf.rejected_translation = tc.rejected;
    tf.forced_theta = th.force_accepted;
    tf.forced_rotation = rr.force_accepted;
    tf.forced_translation = tc.force_accepted;

    st.theta_window.push_back(th.accepted);
    if (int(st.theta_window.size()) > cfg.median_window) st.theta_window.pop_front();
    st.trans_window.push_back(tc.accepted);
    if (int(st.trans_window.size()) > cfg.median_window) st.trans_window.pop_front();

    // anchor re-evaluation on segment motion burst
    std::vector<VecX> win(st.theta_window.begin(), st.theta_window.end());
    if (st.anchor && int(win.size()) == cfg.median_window &&
        mean_consecutive_step(win) > cfg.motion_reset) {
        st.anchor.reset();
        st.warmup_buffer.clear();
    }
    if (!st.anchor) {
        st.warmup_buffer.push_back(th.accepted);
        if (int(st.warmup_buffer.size()) >= cfg.warmup) {
            MatX rows(st.warmup_buffer.size(), th.accepted.size());
            for (std::size_t i = 0; i < st.warmup_buffer.size(); ++i)
                rows.row(Eigen::Index(i)) = st.warmup_buffer[i];
            st.anchor = compute_anchor(rows);
            st.warmup_buffer.clear();
        }
    }

    st.segment_class = classify_segment(win, cfg.static_motion);
    const double alpha =
        st.segment_class == SegmentClass::static_segment ? cfg.ema_static : cfg.ema_dynamic;

    FrameRecord out = frame;
    const Vec3 r_hat = rr.accepted.head<3>();
    const Vec3 c_hat = tc.accepted.head<3>();

    if (!st.smoothed_initialized) {
        st.theta_smoothed = th.accepted;
        st.rotation_smoothed = r_hat;
        st.trans_smoothed = c_hat;
        st.smoothed_initialized = true;
    }

    switch (mode_) {
        case StabilizerMode::outlier_only: {
            out.pose.joint_rotations = th.accepted;
            out.placement.rotation = r_hat;
            out.placement.translation = c_hat;
            st.theta_smoothed = th.accepted;
            st.rotation_smoothed = r_hat;
            st.trans_smoothed = c_hat;
            break;
        }
        case StabilizerMode::outlier_smooth: {
            const VecX th_med = window_median(st.theta_window);
            const VecX c_med = window_median(st.trans_window);
            st.theta_smoothed = alpha * th_med + (1.0 - alpha) * st.theta_smoothed;
            st.trans_smoothed = (alpha * c_med + (1.0 - alpha) * VecX(st.trans_smoothed)).head<3>();
            st.rotation_smoothed = so3_geodesic_blend(st.rotation_smoothed, r_hat, alpha);
            out.pose.joint_rotations = st.theta_smoothed;
            out.placement.rotation = st.rotation_smoothed;
            out.placement.translation = st.trans_smoothed;
            break;
        }
        case StabilizerMode::outlier_smooth_lock: {
            const VecX th_med = window_median(st.theta_window);
            if (st.anchor)
                st.theta_smoothed = pose_lock_step(st.theta_smoothed, th_med, *st.anchor, alpha,
                                                   cfg.anchor_pull);
            else
                st.theta_smoothed = alpha * th_med + (1.0 - alpha) * st.theta_smoothed;
            // camera-driven groups track the moving viewpoint: rotation gets a
            // light geodesic EMA, translation passes through
            st.rotation_smoothed = so3_geodesic_blend(st.rotation_smoothed, r_hat, cfg.ema_dynamic);
            st.trans_smoothed = c_hat;
            out.pose.joint_rotations = st.theta_smoothed;
            out.placement.rotation = st.rotation_smoothed;
            out.placement.translation = c_hat;
            break;
        }
        case StabilizerMode::lock_direct: {
            if (st.anchor)
                st.theta_smoothed = pose_lock_step(st.theta_smoothed, th.accepted, *st.anchor, alpha,
                                                   cfg.anchor_pull);
            else
                st.theta_smoothed = th.accepted;
            st.rotation_smoothed = r_hat;
            st.trans_smoothed = c_hat;
            out.pose.joint_rotations = st.theta_smoothed;
            out.placement.rotation = r_hat;
            out.placement.translation = c_hat;
            break;
        }
    }

    if (mode_ == StabilizerMode::outlier_smooth_lock || mode_ == StabilizerMode::lock_direct) {
        if (!st.locked_shape) st.locked_shape = frame.shape;
        out.shape = *st.locked_shape;
    }
    return out;
}

void Stabilizer::flush_gap(std::vector<FrameRecord>& out, const FrameRecord* right) {
    StabilizerState& st = state_;
    if (st.pending_gap.empty()) return;
    const FrameRecord* left = st.last_emitted_valid ? &*st.last_emitted_valid : nullptr;
    for (FrameRecord& gap : st.pending_gap) {
        FrameRecord filled;
        if (left && right) {
            const double span = double(right->index - left->index);
            const double fraction = double(gap.index - left->index) / span;
            filled = blend_frames(*left, *right, fraction, gap);
        } else if (right) {
            filled = copy_params(*right, gap);  // leading gap: hold rule
        } else {
            filled = copy_params(*left, gap);  // trailing gap: hold rule
        }
        for (auto it = trace_.frames.rbegin(); it != trace_.frames.rend(); ++it) {
            if (it->index == gap.index) {
                it->interpolated = true;
                break;
            }
        }
        out.push_back(std::move(filled));
    }
    st.pending_gap.clear();
}

std::vector<FrameRecord> Stabilizer::process(std::span<const FrameRecord> batch) {
    std::vector<FrameRecord> out;
    out.reserve(batch.size());
    for (const FrameRecord& frame : batch) {
        StabilizerTrace::Frame tf;
        tf.index = frame.index;
        tf.valid = frame.valid;
        trace_.frames.push_back(tf);
        if (!frame.valid) {
            state_.pending_gap.push_back(frame);
            continue;
        }
        FrameRecord corrected = correct(frame, trace_.frames.back());
        state_.any_valid_seen = true;
        flush_gap(out, &corrected);
        state_.last_emitted_valid = corrected;
        out.push_back(std::move(corrected));
    }
    return out;
}

std::vector<FrameRecord> Stabilizer::finish() {
    std::vector<FrameRecord> out;
    if (!state_.pending_gap.empty() && !state_.any_valid_seen)
        throw InputError("run_stabilizer: no valid frame in sequence");
    flush_gap(out, nullptr);
    return out;
}

std::vector<FrameRecord> run_stabilizer(std::span<const FrameRecord> frames,
                                        const StabilizerConfig& config, StabilizerMode mode,
                                        std::optional<ShapeParams> locked_shape,
                                        StabilizerTrace* trace) {
    if (frames.empty()) throw InputError("run_stabilizer: empty input");
    Stabilizer stab(config, mode, std::move(locked_shape));
    std::vector<FrameRecord> out = stab.process(frames);
    std::vector<FrameRecord> tail = stab.finish();
    out.insert(out.end(), std::make_move_iterator(tail.begin()), std::make_move_iterator(tail.end()));
    std::sort(out.begin(), out.end(),
              [](const FrameRecord& a, const FrameRecord& b) { return a.index < b.index; });
    if (trace) *trace = stab.trace();
    return out;
}

}  // namespace stab4d
