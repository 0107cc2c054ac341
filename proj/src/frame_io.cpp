#include "stab4d/frame_io.hpp"

#include <fstream>
#include <sstream>

namespace stab4d {

using nlohmann::json;

namespace {

json vec_to_json(const VecX& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

VecX vec_from_json(const json& node, const char* key) {
    if (!node.is_array()) throw InputError(std::string("frame record: '") + key + "' must be an array");
    VecX v(node.size());
    for (std::size_t i = 0; i < node.size(); ++i) v[Eigen::Index(i)] = node[i].get<double>();
    return v;
}

}  // namespace

json frame_to_json(const FrameRecord& frame) {
    json node;
    node["index"] = frame.index;
    node["valid"] = frame.valid;
    if (frame.valid) {
        node["pose"] = vec_to_json(frame.pose.joint_rotations);
        node["beta"] = vec_to_json(frame.shape.beta);
        node["scale"] = frame.shape.scale;
        node["rotation"] = {frame.placement.rotation.x(), frame.placement.rotation.y(),
                            frame.placement.rotation.z()};
        node["translation"] = {frame.placement.translation.x(), frame.placement.translation.y(),
                               frame.placement.translation.z()};
    } else {
        node["pose"] = nullptr;
        node["beta"] = nullptr;
        node["scale"] = nullptr;
        node["rotation"] = nullptr;
        node["translation"] = nullptr;
    }
    node["mask"] = frame.mask_path.empty() ? json(nullptr) : json(frame.mask_path);
    return node;
}

FrameRecord frame_from_json(const json& node) {
    FrameRecord frame;
    try {
        frame.index = node.at("index").get<long long>();
        frame.valid = node.at("valid").get<bool>();
        if (frame.valid) {
            frame.pose.joint_rotations = vec_from_json(node.at("pose"), "pose");
            if (!frame.pose.joint_rotations.allFinite() || frame.pose.joint_rotations.size() % 3 != 0)
                throw InputError("frame record: pose must be finite with 3 entries per joint");
            for (Eigen::Index j = 0; j + 2 < frame.pose.joint_rotations.size(); j += 3)
                if (frame.pose.joint_rotations.segment<3>(j).norm() >= 3.14159265358979323846 + 1e-3)
                    throw InputError("frame record: joint rotation outside the canonical range");
            frame.shape.beta = vec_from_json(node.at("beta"), "beta");
            frame.shape.scale = node.at("scale").get<double>();
            const VecX r = vec_from_json(node.at("rotation"), "rotation");
            const VecX t = vec_from_json(node.at("translation"), "translation");
            if (r.size() != 3 || t.size() != 3)
                throw InputError("frame record: rotation/translation must have 3 entries");
            frame.placement.rotation = r.head<3>();
            frame.placement.translation = t.head<3>();
        }
        if (node.contains("mask") && !node["mask"].is_null()) frame.mask_path = node["mask"].get<std::string>();
    } catch (const json::exception& e) {
        throw InputError("frame record parse error: " + std::string(e.what()));
    }
    return frame;
}

std::vector<FrameRecord> read_frame_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open frame records: " + path.string());
    std::vector<FrameRecord> frames;
    std::string line;
    long long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json node;
        try {
            node = json::parse(line);
        } catch (const json::exception& e) {
            throw InputError("frame record parse error at line " + std::to_string(line_no) + ": " + e.what());
        }
        frames.push_back(frame_from_json(node));
        if (frames.size() > 1 && frames[frames.size() - 2].index >= frames.back().index)
            throw InputError("frame record indices not strictly increasing at line " + std::to_string(line_no));
    }
    return frames;
}

std::string frame_records_to_string(std::span<const FrameRecord> frames) {
    std::ostringstream out;
    for (const FrameRecord& f : frames) out << frame_to_json(f).dump() << "\n";
    return out.str();
}

void write_frame_records(const std::filesystem::path& path, std::span<const FrameRecord> frames) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write frame records: " + path.string());
    out << frame_records_to_string(frames);
    if (!out) throw InputError("failed writing frame records: " + path.string());
}

void StabilizerConfig::validate() const {
    if (!(tau_theta > 0) || !(tau_r > 0) || !(tau_c > 0))
        throw InputError("config: outlier thresholds must be positive");
    if (median_window < 1 || median_window % 2 == 0) throw InputError("config: median_window must be odd");
    if (warmup < 1) throw InputError("config: warmup must be positive");
    for (double a : {anchor_pull, ema_static, ema_dynamic})
        if (!(a > 0.0) || a > 1.0) throw InputError("config: EMA/anchor rates must lie in (0, 1]");
    if (n_max < 1) throw InputError("config: n_max must be positive");
    if (!(force_blend > 0.0) || force_blend > 1.0) throw InputError("config: force_blend must lie in (0, 1]");
    if (!(motion_reset > 0) || !(static_motion > 0)) throw InputError("config: motion thresholds must be positive");
}

void RigidFitConfig::validate() const {
    if (!(tau_iou > 0) || !(tau_q > 0) || !(tau_d > 0)) throw InputError("config: rigid thresholds must be positive");
    if (lambda_temp < 0 || lambda_z < 0) throw InputError("config: regularizer weights must be nonnegative");
    if (max_iter < 1) throw InputError("config: max_iter must be positive");
    if (downscale < 1) throw InputError("config: downscale must be positive");
    if (!(tau_g > 0)) throw InputError("config: tau_g must be positive");
    if (traj_window < 1) throw InputError("config: traj_window must be positive");
}

PipelineConfig parse_config(const json& doc) {
    if (!doc.is_object()) throw InputError("config must be a JSON object");
    PipelineConfig cfg;
    for (const auto& [key, value] : doc.items()) {
        StabilizerConfig& s = cfg.stabilizer;
        RigidFitConfig& r = cfg.rigid;
        if (key == "tau_theta") s.tau_theta = value.get<double>();
        else if (key == "tau_r") s.tau_r = value.get<double>();
        else if (key == "tau_c") s.tau_c = value.get<double>();
        else if (key == "median_window") s.median_window = value.get<int>();
        else if (key == "warmup") s.warmup = value.get<int>();
        else if (key == "anchor_pull") s.anchor_pull = value.get<double>();
        else if (key == "ema_static") s.ema_static = value.get<double>();
        else if (key == "ema_dynamic") s.ema_dynamic = value.get<double>();
        else if (key == "n_max") s.n_max = value.get<int>();
        else if (key == "force_blend") s.force_blend = value.get<double>();
        else if (key == "motion_reset") s.motion_reset = value.get<double>();
        else if (key == "static_motion") s.static_motion = value.get<double>();
        else if (key == "rotation_reject_geodesic") s.rotation_reject_geodesic = value.get<bool>();
        else if (key == "tau_iou") r.tau_iou = value.get<double>();
        else if (key == "tau_q") r.tau_q = value.get<double>();
        else if (key == "tau_d") r.tau_d = value.get<double>();
        else if (key == "lambda_temp") r.lambda_temp = value.get<double>();
        else if (key == "lambda_z") r.lambda_z = value.get<double>();
        else if (key == "max_iter") r.max_iter = value.get<int>();
        else if (key == "downscale") r.downscale = value.get<int>();
        else if (key == "tau_g") r.tau_g = value.get<double>();
        else if (key == "traj_window") r.traj_window = value.get<int>();
        else if (key == "mode") {
            const std::string m = value.get<std::string>();
            if (m == "full") r.mode = RigidMode::full;
            else if (m == "fallback") r.mode = RigidMode::fallback;
            else throw InputError("config: mode must be 'full' or 'fallback'");
        } else {
            throw InputError("config: unknown key '" + key + "'");
        }
    }
    cfg.stabilizer.validate();
    cfg.rigid.validate();
    return cfg;
}

PipelineConfig read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InputError("config parse error: " + std::string(e.what()));
    }
    return parse_config(doc);
}

}  // namespace stab4d
