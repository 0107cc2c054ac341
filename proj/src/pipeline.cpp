#include "stab4d/pipeline.hpp"

#include <cmath>

namespace stab4d {

Preset preset_from_string(const std::string& name) {
    if (name.size() == 1) {
        switch (name[0]) {
            case 'A': return Preset::A;
            case 'B': return Preset::B;
            case 'C': return Preset::C;
            case 'D': return Preset::D;
            case 'E': return Preset::E;
            case 'F': return Preset::F;
        }
    }
    throw InputError("unknown preset '" + name + "' (expected one of A..F)");
}

std::string preset_to_string(Preset preset) {
    switch (preset) {
        case Preset::A: return "A";
        case Preset::B: return "B";
        case Preset::C: return "C";
        case Preset::D: return "D";
        case Preset::E: return "E";
        default: return "F";
    }
}

nlohmann::json PipelineDiagnostics::to_json() const {
    nlohmann::json doc;
    doc["preset"] = preset_to_string(preset);
    nlohmann::json raw = nlohmann::json::array();
    for (double v : raw_iou) raw.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    doc["raw_iou"] = std::move(raw);
    doc["pool_size"] = pool_size;
    doc["locked_shape_frame"] = locked_shape_frame;
    doc["fallback_frames"] = fallback_frames;
    doc["fit_report"] = fit_report.to_json();
    return doc;
}

PipelineResult run_pipeline(const std::vector<FrameRecord>& pred_frames,
                            const std::vector<SilhouetteMask>& masks, const BodyModel& model,
                            const CameraIntrinsics& K, Preset preset, const PipelineConfig& config) {
    if (pred_frames.empty()) throw InputError("run_pipeline: empty sequence");
    if (masks.size() != pred_frames.size())
        throw InputError("run_pipeline: mask count does not match frame count");
    config.stabilizer.validate();
    config.rigid.validate();

    PipelineResult result;
    PipelineDiagnostics& diag = result.diagnostics;
    diag.preset = preset;

    // pass 1: per-frame IoU of the raw predictions drives pool admission
    diag.raw_iou = mesh_mask_iou_series(pred_frames, masks, model, K);

    struct Admitted {
        std::size_t position;
        double iou;
    };
    std::vector<Admitted> admitted;
    if (preset != Preset::A) {
        for (std::size_t i = 0; i < pred_frames.size(); ++i) {
            if (!pred_frames[i].valid || std::isnan(diag.raw_iou[i])) continue;
            if (admitted.empty() || diag.raw_iou[i] > config.rigid.tau_q)
                admitted.push_back({i, diag.raw_iou[i]});
        }
    }
    diag.pool_size = admitted.size();

    const bool locks_shape = preset == Preset::D || preset == Preset::E || preset == Preset::F;
    if (!admitted.empty()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < admitted.size(); ++k)
            if (admitted[k].iou > admitted[best].iou) best = k;
        diag.locked_shape = pred_frames[admitted[best].position].shape;
        diag.locked_shape_frame = pred_frames[admitted[best].position].index;
    }

    // stabilizer stage
    std::vector<FrameRecord> corrected;
    switch (preset) {
        case Preset::A:
            corrected = pred_frames;  // byte-identical pass-through
            break;
        case Preset::B:
            corrected = run_stabilizer(pred_frames, config.stabilizer, StabilizerMode::outlier_only,
                                       std::nullopt, &diag.stabilizer_trace);
            break;
        case Preset::C:
            corrected = run_stabilizer(pred_frames, config.stabilizer, StabilizerMode::outlier_smooth,
                                       std::nullopt, &diag.stabilizer_trace);
            break;
        case Preset::D:
        case Preset::E:
            corrected = run_stabilizer(pred_frames, config.stabilizer,
                                       StabilizerMode::outlier_smooth_lock, diag.locked_shape,
                                       &diag.stabilizer_trace);
            break;
        case Preset::F:
            corrected = run_stabilizer(pred_frames, config.stabilizer, StabilizerMode::lock_direct,
                                       diag.locked_shape, &diag.stabilizer_trace);
            break;
    }

    // rigid stage for E (full) and F (fallback)
    if (preset == Preset::E || preset == Preset::F) {
        KeyframePool pool;
        for (const Admitted& a : admitted) {
            const FrameRecord& f = pred_frames[a.position];
            KeyframeEntry entry;
            entry.frame_index = f.index;
            entry.iou = a.iou;
            entry.pose = f.pose;
            entry.shape = locks_shape && diag.locked_shape ? *diag.locked_shape : f.shape;
            entry.placement = f.placement;
            entry.posed_vertices = pose_mesh(model, entry.pose, entry.shape, entry.placement);
            entry.centroid = entry.posed_vertices.colwise().mean();
            pool.entries.push_back(std::move(entry));
        }

        RigidFitConfig rigid = config.rigid;
        rigid.mode = preset == Preset::E ? RigidMode::full : RigidMode::fallback;
        corrected = run_rigid_fallback(std::move(corrected), masks, pool, model, K, rigid,
                                       &diag.fit_report);
        for (const FitReportEntry& e : diag.fit_report.entries)
            if (e.fitted) diag.fallback_frames.push_back(e.frame);
    }

    result.frames = std::move(corrected);
    return result;
}

int select_recumbent_subject(std::span<const SubjectCandidate> candidates) {
    if (candidates.empty()) throw InputError("select_recumbent_subject: empty candidate list");
    int best = -1;
    double best_angle = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Vec3 spine = candidates[i].neck - candidates[i].pelvis;
        const double len = spine.norm();
        if (len < 1e-9) throw InputError("select_recumbent_subject: coincident pelvis and neck");
        const double elevation = std::asin(std::min(1.0, std::abs(spine.y()) / len));
        if (best < 0 || elevation < best_angle) {
            best = int(i);
            best_angle = elevation;
        }
    }
    return best;
}

}  // namespace stab4d
