#include "stab4d/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace stab4d {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// local (unplaced) meshes per frame; empty matrix for invalid frames
std::vector<Points> local_meshes(std::span<const FrameRecord> frames, const BodyModel& model) {
    std::vector<Points> out(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i)
        if (frames[i].valid) out[i] = pose_mesh_local(model, frames[i].pose, frames[i].shape);
    return out;
}

double placed_iou(const Points& local, const GlobalPlacement& placement, const SilhouetteMask& mask,
                  const Faces& faces, const CameraIntrinsics& K) {
    return iou(rasterize_silhouette(apply_placement(local, placement), faces, K, 1), mask);
}

}  // namespace

std::vector<double> mesh_mask_iou_series(std::span<const FrameRecord> frames,
                                         const std::vector<SilhouetteMask>& masks,
                                         const BodyModel& model, const CameraIntrinsics& K) {
    if (masks.size() != frames.size()) throw InputError("mesh_mask_iou_series: mask/frame count mismatch");
    const std::vector<Points> locals = local_meshes(frames, model);
    std::vector<double> series(frames.size(), kNaN);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].valid || masks[i].empty()) continue;
        series[i] = placed_iou(locals[i], frames[i].placement, masks[i], model.faces, K);
    }
    return series;
}

double temporal_displacement(const std::vector<Points>& vertex_sequence) {
    if (vertex_sequence.size() < 2) return 0.0;
    double total = 0.0;
    int count = 0;
    for (std::size_t t = 1; t < vertex_sequence.size(); ++t) {
        const Points& a = vertex_sequence[t - 1];
        const Points& b = vertex_sequence[t];
        if (a.rows() == 0 || b.rows() == 0) continue;
        if (a.rows() != b.rows()) throw InputError("temporal_displacement: vertex count changed");
        total += (b - a).norm() / double(a.rows());
        ++count;
    }
    return count ? total / double(count) : 0.0;
}

double pose_consistency(const std::vector<VecX>& poses) {
    if (poses.size() < 2) return 0.0;
    double total = 0.0;
    int count = 0;
    for (std::size_t t = 1; t < poses.size(); ++t) {
        if (poses[t - 1].size() == 0 || poses[t].size() == 0) continue;
        total += (poses[t] - poses[t - 1]).norm();
        ++count;
    }
    return count ? total / double(count) : 0.0;
}

double cross_view_iou(std::span<const FrameRecord> frames, const std::vector<SilhouetteMask>& masks,
                      const BodyModel& model, const CameraIntrinsics& K, int lag) {
    if (masks.size() != frames.size()) throw InputError("cross_view_iou: mask/frame count mismatch");
    if (lag < 0) throw InputError("cross_view_iou: lag must be nonnegative");
    if (int(frames.size()) <= lag) throw InputError("cross_view_iou: sequence shorter than lag");
    const std::vector<Points> locals = local_meshes(frames, model);
    double total = 0.0;
    int count = 0;
    for (std::size_t t = 0; t + std::size_t(lag) < frames.size(); ++t) {
        const std::size_t s = t + std::size_t(lag);
        if (!frames[t].valid || !frames[s].valid || masks[s].empty()) continue;
        total += placed_iou(locals[t], frames[s].placement, masks[s], model.faces, K);
        ++count;
    }
    return count ? total / double(count) : 0.0;
}

double pa_pve(const std::vector<Points>& pred, const std::vector<Points>& gt) {
    if (pred.size() != gt.size()) throw InputError("pa_pve: sequence lengths differ");
    double total = 0.0;
    int count = 0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t].rows() == 0 || gt[t].rows() == 0) continue;
        total += nn_vertex_error(pred[t], gt[t]) * 1000.0;
        ++count;
    }
    if (count == 0) throw InputError("pa_pve: no frames with vertices");
    return total / double(count);
}

MetricsReport compute_metrics(std::span<const FrameRecord> frames,
                              const std::vector<SilhouetteMask>& masks, const BodyModel& model,
                              const CameraIntrinsics& K, int lag,
                              const std::vector<Points>* gt_vertices) {
    if (frames.empty()) throw InputError("compute_metrics: empty sequence");
    MetricsReport report;
    report.lag = lag;
    report.per_frame_iou = mesh_mask_iou_series(frames, masks, model, K);

    double sum = 0.0;
    int defined = 0, above = 0, below = 0;
    for (double v : report.per_frame_iou) {
        if (std::isnan(v)) {
            ++report.gap_frames;
            continue;
        }
        sum += v;
        ++defined;
        if (v > 0.6) ++above;
        if (v < 0.3) ++below;
    }
    report.mean_iou = defined ? sum / double(defined) : 0.0;
    report.pct_above_0_6 = defined ? 100.0 * double(above) / double(defined) : 0.0;
    report.pct_below_0_3 = defined ? 100.0 * double(below) / double(defined) : 0.0;

    std::vector<Points> placed(frames.size());
    std::vector<VecX> poses(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (!frames[i].valid) continue;
        placed[i] = pose_mesh(model, frames[i].pose, frames[i].shape, frames[i].placement);
        poses[i] = frames[i].pose.joint_rotations;
    }
    report.delta_mesh = temporal_displacement(placed);
    report.delta_pose = pose_consistency(poses);

    report.per_frame_delta_mesh.assign(frames.size(), 0.0);
    report.per_frame_delta_pose.assign(frames.size(), 0.0);
    for (std::size_t t = 1; t < frames.size(); ++t) {
        if (placed[t - 1].rows() && placed[t].rows())
            report.per_frame_delta_mesh[t] = (placed[t] - placed[t - 1]).norm() / double(placed[t].rows());
        if (poses[t - 1].size() && poses[t].size())
            report.per_frame_delta_pose[t] = (poses[t] - poses[t - 1]).norm();
    }

    report.cv_iou = int(frames.size()) > lag ? cross_view_iou(frames, masks, model, K, lag) : 0.0;

    if (gt_vertices) {
        std::vector<Points> pred;
        pred.reserve(frames.size());
        for (std::size_t i = 0; i < frames.size(); ++i) pred.push_back(placed[i]);
        report.pa_pve = pa_pve(pred, *gt_vertices);
    }
    return report;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json doc;
    doc["mean_iou"] = mean_iou;
    doc["pct_above_0_6"] = pct_above_0_6;
    doc["pct_below_0_3"] = pct_below_0_3;
    doc["delta_mesh"] = delta_mesh;
    doc["delta_pose"] = delta_pose;
    doc["cv_iou_" + std::to_string(lag)] = cv_iou;
    doc["pa_pve"] = pa_pve ? nlohmann::json(*pa_pve) : nlohmann::json(nullptr);
    doc["gap_frames"] = gap_frames;
    return doc;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write csv: " + path.string());
    out << "frame,iou,delta_mesh,delta_pose\n";
    out.precision(17);
    for (std::size_t i = 0; i < per_frame_iou.size(); ++i) {
        out << i << ",";
        if (!std::isnan(per_frame_iou[i])) out << per_frame_iou[i];
        out << "," << per_frame_delta_mesh[i] << "," << per_frame_delta_pose[i] << "\n";
    }
    if (!out) throw InputError("failed writing csv: " + path.string());
}

}  // namespace stab4d
