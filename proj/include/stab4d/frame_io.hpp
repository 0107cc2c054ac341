#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stab4d/body_model.hpp"

namespace stab4d {

/// One frame's predicted parameters. Invalid frames carry no parameter data.
struct FrameRecord {
    long long index = 0;
    bool valid = true;
    PoseParams pose;
    ShapeParams shape;
    GlobalPlacement placement;
    std::string mask_path;  // relative to the bundle root; empty = none
};

nlohmann::json frame_to_json(const FrameRecord& frame);
FrameRecord frame_from_json(const nlohmann::json& node);

/// JSONL, one record per line, line order = frame order. Indices must be
/// strictly increasing. Doubles round-trip at full precision.
std::vector<FrameRecord> read_frame_records(const std::filesystem::path& path);
void write_frame_records(const std::filesystem::path& path, std::span<const FrameRecord> frames);
std::string frame_records_to_string(std::span<const FrameRecord> frames);

struct StabilizerConfig {
    double tau_theta = 0.6;
    double tau_r = 0.6;
    double tau_c = 0.2;
    int median_window = 7;
    int warmup = 48;
    double anchor_pull = 0.005;
    double ema_static = 0.01;
    double ema_dynamic = 0.3;
    int n_max = 10;
    double force_blend = 0.5;
    // motion thresholds compare against the mean consecutive ||dtheta|| over
    // the window; a static subject's prediction jitter alone contributes
    // sigma * sqrt(2 * 3J) per frame, so these sit above that noise floor
    double motion_reset = 1.0;
    double static_motion = 0.8;
    bool rotation_reject_geodesic = false;

    void validate() const;
};

enum class RigidMode { full, fallback };

struct RigidFitConfig {
    double tau_iou = 0.6;     // fallback trigger
    double tau_q = 0.6;       // pool admission
    double tau_d = 50.0;      // temporal decay, frames
    double lambda_temp = 0.1;
    double lambda_z = 1.0;
    int max_iter = 150;
    int downscale = 2;
    double tau_g = 25.0;      // temporal-reg gap threshold, frames
    int traj_window = 5;
    RigidMode mode = RigidMode::fallback;

    void validate() const;
};

struct PipelineConfig {
    StabilizerConfig stabilizer;
    RigidFitConfig rigid;
};

/// Flat JSON object whose keys mirror the config field names; unknown keys
/// are rejected.
PipelineConfig parse_config(const nlohmann::json& doc);
PipelineConfig read_config_file(const std::filesystem::path& path);

}  // namespace stab4d
