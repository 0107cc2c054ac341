#include "stab4d/synth_gen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace stab4d {

using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct BoneSpec {
    int child;   // bone runs from parent[child] to child
    double radius;
};

struct Builder {
    std::vector<Vec3> vertices;
    Faces faces;
    std::vector<std::array<double, 2>> weights;  // (parent joint weight, child joint weight)
    std::vector<std::array<int, 2>> weight_joints;
    std::vector<int> bone_of_vertex;   // child joint id of the owning bone
    std::vector<Vec3> radial_dir;      // unit radial from bone axis, zero on axis
    std::vector<int> joint_anchor;     // vertex id sitting exactly at each joint
};

constexpr int kRings = 8;
constexpr int kSegments = 14;

void add_capsule(Builder& b, const Points& joints, const std::vector<int>& parent, int child,
                 double radius) {
    const int p = parent[child];
    const Vec3 A = joints.row(p).transpose();
    const Vec3 B = joints.row(child).transpose();
    const Vec3 axis = B - A;
    const double len = axis.norm();
    const Vec3 a_hat = axis / len;
    const Vec3 g = std::abs(a_hat.y()) < 0.9 ? Vec3(0, 1, 0) : Vec3(0, 0, 1);
    const Vec3 u = a_hat.cross(g).normalized();
    const Vec3 v = a_hat.cross(u);

    const int base = int(b.vertices.size());
    for (int k = 0; k < kRings; ++k) {
        const double t = double(k) / double(kRings - 1);
        const Vec3 c = A + t * axis;
        const double f = t <= 0.75 ? 0.0 : 0.5 * (t - 0.75) / 0.25;
        for (int s = 0; s < kSegments; ++s) {
            const double th = 2.0 * kPi * double(s) / double(kSegments);
            const Vec3 dir = std::cos(th) * u + std::sin(th) * v;
            b.vertices.push_back(c + radius * dir);
            b.weights.push_back({1.0 - f, f});
            b.weight_joints.push_back({p, child});
            b.bone_of_vertex.push_back(child);
            b.radial_dir.push_back(dir);
        }
    }
    // cap centers sit exactly on the joints; the end cap anchors the child
    // joint for the regressor
    const int start_cap = int(b.vertices.size());
    b.vertices.push_back(A);
    b.weights.push_back({1.0, 0.0});
    b.weight_joints.push_back({p, child});
    b.bone_of_vertex.push_back(child);
    b.radial_dir.push_back(Vec3::Zero());
    const int end_cap = int(b.vertices.size());
    b.vertices.push_back(B);
    b.weights.push_back({0.5, 0.5});
    b.weight_joints.push_back({p, child});
    b.bone_of_vertex.push_back(child);
    b.radial_dir.push_back(Vec3::Zero());
    b.joint_anchor[child] = end_cap;
    if (b.joint_anchor[p] < 0) b.joint_anchor[p] = start_cap;

    for (int k = 0; k + 1 < kRings; ++k) {
        for (int s = 0; s < kSegments; ++s) {
            const int s1 = (s + 1) % kSegments;
            const int a0 = base + k * kSegments + s;
            const int a1 = base + k * kSegments + s1;
            const int b0 = base + (k + 1) * kSegments + s;
            const int b1 = base + (k + 1) * kSegments + s1;
            b.faces.push_back({a0, b0, a1});
            b.faces.push_back({a1, b0, b1});
        }
    }
    for (int s = 0; s < kSegments; ++s) {
        const int s1 = (s + 1) % kSegments;
        b.faces.push_back({start_cap, base + s, base + s1});
        const int last = base + (kRings - 1) * kSegments;
        b.faces.push_back({end_cap, last + s1, last + s});
    }
}

void mirror_capsule(Builder& b, int src_begin, int src_end, int mirrored_child,
                    const std::vector<int>& joint_mirror) {
    const int base = int(b.vertices.size());
    const int offset = base - src_begin;
    for (int i = src_begin; i < src_end; ++i) {
        Vec3 p = b.vertices[std::size_t(i)];
        p.z() = -p.z();
        b.vertices.push_back(p);
        b.weights.push_back(b.weights[std::size_t(i)]);
        const auto wj = b.weight_joints[std::size_t(i)];
        b.weight_joints.push_back({joint_mirror[wj[0]], joint_mirror[wj[1]]});
        b.bone_of_vertex.push_back(mirrored_child);
        Vec3 r = b.radial_dir[std::size_t(i)];
        r.z() = -r.z();
        b.radial_dir.push_back(r);
    }
    const std::size_t n_faces = b.faces.size();
    for (std::size_t f = 0; f < n_faces; ++f) {
        const auto& face = b.faces[f];
        if (face[0] >= src_begin && face[0] < src_end) {
            // flip winding so the mirrored surface stays consistently oriented
            b.faces.push_back({face[0] + offset, face[2] + offset, face[1] + offset});
        }
    }
}

}  // namespace

BodyModel make_procedural_body(int joints) {
    if (joints != 24) throw InputError("make_procedural_body: only the 24-joint tree is provided");

    BodyModel model;
    model.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

    Points J(24, 3);
    J.row(0) << 0.00, 0.00, 0.00;    // pelvis
    J.row(1) << -0.02, 0.00, 0.09;   // hip L
    J.row(2) << -0.02, 0.00, -0.09;  // hip R
    J.row(3) << 0.12, 0.00, 0.00;    // spine1
    J.row(4) << -0.45, 0.00, 0.10;   // knee L
    J.row(5) << -0.45, 0.00, -0.10;  // knee R
    J.row(6) << 0.24, 0.00, 0.00;    // spine2
    J.row(7) << -0.85, 0.00, 0.10;   // ankle L
    J.row(8) << -0.85, 0.00, -0.10;  // ankle R
    J.row(9) << 0.36, 0.00, 0.00;    // spine3
    J.row(10) << -0.92, 0.08, 0.10;  // foot L
    J.row(11) << -0.92, 0.08, -0.10; // foot R
    J.row(12) << 0.50, 0.00, 0.00;   // neck
    J.row(13) << 0.44, 0.00, 0.06;   // collar L
    J.row(14) << 0.44, 0.00, -0.06;  // collar R
    J.row(15) << 0.64, 0.00, 0.00;   // head
    J.row(16) << 0.46, 0.00, 0.18;   // shoulder L
    J.row(17) << 0.46, 0.00, -0.18;  // shoulder R
    J.row(18) << 0.20, 0.00, 0.21;   // elbow L
    J.row(19) << 0.20, 0.00, -0.21;  // elbow R
    J.row(20) << -0.04, 0.00, 0.21;  // wrist L
    J.row(21) << -0.04, 0.00, -0.21; // wrist R
    J.row(22) << -0.12, 0.00, 0.21;  // hand L
    J.row(23) << -0.12, 0.00, -0.21; // hand R
    model.rest_joints = J;

    const std::vector<int> joint_mirror = {0, 2,  1,  3,  5,  4,  6,  8,  7,  9,  11, 10,
                                           12, 14, 13, 15, 17, 16, 19, 18, 21, 20, 23, 22};

    const std::vector<BoneSpec> central = {{3, 0.13}, {6, 0.14}, {9, 0.13}, {12, 0.055}, {15, 0.09}};
    const std::vector<std::pair<BoneSpec, int>> left = {
        {{1, 0.07}, 2},   {{4, 0.07}, 5},   {{7, 0.05}, 8},   {{10, 0.035}, 11}, {{13, 0.05}, 14},
        {{16, 0.05}, 17}, {{18, 0.045}, 19}, {{20, 0.04}, 21}, {{22, 0.03}, 23}};

    Builder b;
    b.joint_anchor.assign(24, -1);
    for (const BoneSpec& bone : central) add_capsule(b, J, model.parent, bone.child, bone.radius);
    for (const auto& [bone, mirrored_child] : left) {
        const int begin = int(b.vertices.size());
        add_capsule(b, J, model.parent, bone.child, bone.radius);
        const int end = int(b.vertices.size());
        mirror_capsule(b, begin, end, mirrored_child, joint_mirror);
        b.joint_anchor[mirrored_child] = b.joint_anchor[bone.child] + (end - begin);
        const int p = model.parent[bone.child];
        const int mp = joint_mirror[p];
        if (b.joint_anchor[mp] < 0) {
            // mirrored start cap (second-to-last vertex of the mirrored block)
            b.joint_anchor[mp] = int(b.vertices.size()) - 2;
        }
    }

    const int nv = int(b.vertices.size());
    model.template_vertices.resize(nv, 3);
    for (int i = 0; i < nv; ++i) model.template_vertices.row(i) = b.vertices[std::size_t(i)].transpose();
    model.faces = std::move(b.faces);

    model.skin_weights = MatX::Zero(nv, 24);
    for (int i = 0; i < nv; ++i) {
        model.skin_weights(i, b.weight_joints[std::size_t(i)][0]) += b.weights[std::size_t(i)][0];
        model.skin_weights(i, b.weight_joints[std::size_t(i)][1]) += b.weights[std::size_t(i)][1];
    }

    model.joint_regressor = MatX::Zero(24, nv);
    for (int j = 0; j < 24; ++j) {
        if (b.joint_anchor[j] < 0) throw NumericalError("make_procedural_body: joint without anchor vertex");
        model.joint_regressor(j, b.joint_anchor[j]) = 1.0;
    }

    // ten blendshapes: per-segment girth and length scalings
    auto in_group = [&](int vertex, std::initializer_list<int> children) {
        const int bone = b.bone_of_vertex[std::size_t(vertex)];
        for (int c : children)
            if (bone == c) return true;
        return false;
    };
    model.shape_dirs.assign(10, MatX::Zero(nv, 3));
    for (int i = 0; i < nv; ++i) {
        const Vec3 pos = b.vertices[std::size_t(i)];
        const Vec3 radial = b.radial_dir[std::size_t(i)];
        model.shape_dirs[0].row(i) = (0.015 * radial).transpose();
        model.shape_dirs[1].row(i) = (0.05 * pos).transpose();  // size about the pelvis (origin)
        if (in_group(i, {3, 6, 9})) model.shape_dirs[2].row(i) = (0.02 * radial).transpose();
        if (in_group(i, {1, 2, 4, 5, 7, 8, 10, 11})) model.shape_dirs[3].row(i) = (0.012 * radial).transpose();
        if (in_group(i, {13, 14, 16, 17, 18, 19, 20, 21, 22, 23}))
            model.shape_dirs[4].row(i) = (0.010 * radial).transpose();
        if (in_group(i, {15}))
            model.shape_dirs[5].row(i) = (0.03 * (pos - Vec3(J.row(12).transpose()))).transpose();
        model.shape_dirs[6].row(i) = Vec3(0.04 * std::max(pos.x(), 0.0), 0, 0).transpose();
        model.shape_dirs[7].row(i) = Vec3(0.04 * std::min(pos.x() + 0.02, 0.0), 0, 0).transpose();
        model.shape_dirs[8].row(i) = Vec3(0, 0, 0.02 * pos.z()).transpose();
        if (in_group(i, {6})) model.shape_dirs[9].row(i) = (0.025 * radial).transpose();
    }

    model.validate();
    return model;
}

json ScenarioSpec::to_json() const {
    json doc;
    doc["seed"] = seed;
    doc["n_frames"] = n_frames;
    doc["fps"] = fps;
    doc["orbit_degrees"] = orbit_degrees;
    doc["orbit_radius"] = orbit_radius;
    doc["raster"] = {{"width", raster_width}, {"height", raster_height}};
    if (base_pose.joint_rotations.size() > 0) {
        json arr = json::array();
        for (Eigen::Index i = 0; i < base_pose.joint_rotations.size(); ++i)
            arr.push_back(base_pose.joint_rotations[i]);
        doc["base_pose"] = std::move(arr);
    } else {
        doc["base_pose"] = nullptr;
    }
    json shape;
    if (base_shape.beta.size() > 0) {
        json arr = json::array();
        for (Eigen::Index i = 0; i < base_shape.beta.size(); ++i) arr.push_back(base_shape.beta[i]);
        shape["beta"] = std::move(arr);
    } else {
        shape["beta"] = nullptr;
    }
    shape["scale"] = base_shape.scale;
    doc["base_shape"] = std::move(shape);
    json noise;
    noise["pose_jitter_sigma"] = this->noise.pose_jitter_sigma;
    noise["translation_jitter_sigma"] = this->noise.translation_jitter_sigma;
    noise["outlier_rate"] = this->noise.outlier_rate;
    noise["outlier_magnitude"] = this->noise.outlier_magnitude;
    noise["dropout_rate"] = this->noise.dropout_rate;
    json windows = json::array();
    for (const auto& w : this->noise.occlusion_windows)
        windows.push_back({w.start, w.end, w.visible_fraction});
    noise["occlusion_windows"] = std::move(windows);
    doc["noise"] = std::move(noise);
    return doc;
}

ScenarioSpec ScenarioSpec::from_json(const json& doc) {
    ScenarioSpec spec;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "seed") spec.seed = value.get<std::uint64_t>();
            else if (key == "n_frames") spec.n_frames = value.get<int>();
            else if (key == "fps") spec.fps = value.get<double>();
            else if (key == "orbit_degrees") spec.orbit_degrees = value.get<double>();
            else if (key == "orbit_radius") spec.orbit_radius = value.get<double>();
            else if (key == "raster") {
                spec.raster_width = value.at("width").get<int>();
                spec.raster_height = value.at("height").get<int>();
            } else if (key == "base_pose") {
                if (!value.is_null()) {
                    spec.base_pose.joint_rotations.resize(value.size());
                    for (std::size_t i = 0; i < value.size(); ++i)
                        spec.base_pose.joint_rotations[Eigen::Index(i)] = value[i].get<double>();
                }
            } else if (key == "base_shape") {
                if (value.contains("beta") && !value["beta"].is_null()) {
                    spec.base_shape.beta.resize(value["beta"].size());
                    for (std::size_t i = 0; i < value["beta"].size(); ++i)
                        spec.base_shape.beta[Eigen::Index(i)] = value["beta"][i].get<double>();
                }
                if (value.contains("scale")) spec.base_shape.scale = value["scale"].get<double>();
            } else if (key == "noise") {
                for (const auto& [nkey, nvalue] : value.items()) {
                    if (nkey == "pose_jitter_sigma") spec.noise.pose_jitter_sigma = nvalue.get<double>();
                    else if (nkey == "translation_jitter_sigma")
                        spec.noise.translation_jitter_sigma = nvalue.get<double>();
                    else if (nkey == "outlier_rate") spec.noise.outlier_rate = nvalue.get<double>();
                    else if (nkey == "outlier_magnitude") spec.noise.outlier_magnitude = nvalue.get<double>();
                    else if (nkey == "dropout_rate") spec.noise.dropout_rate = nvalue.get<double>();
                    else if (nkey == "occlusion_windows") {
                        for (const auto& w : nvalue) {
                            NoiseSpec::OcclusionWindow win;
                            win.start = w.at(0).get<long long>();
                            win.end = w.at(1).get<long long>();
                            win.visible_fraction = w.at(2).get<double>();
                            spec.noise.occlusion_windows.push_back(win);
                        }
                    } else {
                        throw InputError("scenario: unknown noise key '" + nkey + "'");
                    }
                }
            } else if (key == "camera") {
                // emitted by the generator; derived, not configurable
            } else {
                throw InputError("scenario: unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw InputError("scenario parse error: " + std::string(e.what()));
    }
    return spec;
}

bool InjectionLog::frame_has(long long frame, const std::string& type) const {
    for (const Entry& e : entries) {
        if (e.frame != frame) continue;
        for (const std::string& t : e.types)
            if (t == type) return true;
    }
    return false;
}

json InjectionLog::to_json() const {
    json arr = json::array();
    for (const Entry& e : entries) {
        json node;
        node["frame"] = e.frame;
        node["types"] = e.types;
        arr.push_back(std::move(node));
    }
    return json{{"frames", std::move(arr)}};
}

InjectionLog InjectionLog::from_json(const json& doc) {
    InjectionLog log;
    for (const auto& node : doc.at("frames")) {
        Entry e;
        e.frame = node.at("frame").get<long long>();
        for (const auto& t : node.at("types")) e.types.push_back(t.get<std::string>());
        log.entries.push_back(std::move(e));
    }
    return log;
}

namespace {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    VecX normal_vec(int n) {
        VecX v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    VecX unit_vec(int n) {
        VecX v = normal_vec(n);
        const double norm = v.norm();
        return norm > 1e-12 ? VecX(v / norm) : VecX::Unit(n, 0);
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::string frame_name(long long t) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06lld.pgm", t);
    return buf;
}

}  // namespace

SilhouetteMask erode_mask_to_fraction(const SilhouetteMask& mask, double fraction) {
    if (fraction >= 1.0 || mask.empty()) return mask;
    if (fraction <= 0.0) return SilhouetteMask(mask.width(), mask.height());

    std::vector<std::int64_t> row_count(std::size_t(mask.height()), 0);
    int r0 = -1, r1 = -1;
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) row_count[std::size_t(y)] += mask.get(x, y);
        if (row_count[std::size_t(y)] > 0) {
            if (r0 < 0) r0 = y;
            r1 = y;
        }
    }
    const double target = fraction * double(mask.count());
    const int rc = (r0 + r1) / 2;

    auto band_area = [&](int k) {
        std::int64_t area = 0;
        for (int y = std::max(r0, rc - k); y <= std::min(r1, rc + k); ++y) area += row_count[std::size_t(y)];
        return area;
    };
    int k = 0;
    while (double(band_area(k)) < target && (rc - k > r0 || rc + k < r1)) ++k;
    if (k > 0 && std::abs(double(band_area(k - 1)) - target) < std::abs(double(band_area(k)) - target)) --k;

    SilhouetteMask out(mask.width(), mask.height());
    for (int y = std::max(r0, rc - k); y <= std::min(r1, rc + k); ++y) {
        int run = -1;
        for (int x = 0; x < mask.width(); ++x) {
            if (mask.get(x, y)) {
                if (run < 0) run = x;
            } else if (run >= 0) {
                out.set_span(y, run, x);
                run = -1;
            }
        }
        if (run >= 0) out.set_span(y, run, mask.width());
    }
    return out;
}

void write_gt_vertices(const std::filesystem::path& path, const std::vector<Points>& frames) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write vertex file: " + path.string());
    const std::uint32_t T = std::uint32_t(frames.size());
    const std::uint32_t Nv = frames.empty() ? 0 : std::uint32_t(frames.front().rows());
    const std::uint32_t reserved = 0;
    out.write("P4DV", 4);
    out.write(reinterpret_cast<const char*>(&T), 4);
    out.write(reinterpret_cast<const char*>(&Nv), 4);
    out.write(reinterpret_cast<const char*>(&reserved), 4);
    std::vector<float> row(std::size_t(Nv) * 3);
    for (const Points& f : frames) {
        if (std::uint32_t(f.rows()) != Nv) throw InputError("vertex file: inconsistent vertex counts");
        for (std::uint32_t v = 0; v < Nv; ++v)
            for (int c = 0; c < 3; ++c) row[std::size_t(v) * 3 + std::size_t(c)] = float(f(v, c));
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
    }
    if (!out) throw InputError("failed writing vertex file: " + path.string());
}

std::vector<Points> read_gt_vertices(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open vertex file: " + path.string());
    char magic[4];
    std::uint32_t T = 0, Nv = 0, reserved = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&T), 4);
    in.read(reinterpret_cast<char*>(&Nv), 4);
    in.read(reinterpret_cast<char*>(&reserved), 4);
    if (!in || std::memcmp(magic, "P4DV", 4) != 0)
        throw InputError("vertex file: bad magic in " + path.string());
    std::vector<Points> frames(T);
    std::vector<float> row(std::size_t(Nv) * 3);
    for (std::uint32_t t = 0; t < T; ++t) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (!in) throw InputError("vertex file: truncated data in " + path.string());
        frames[t].resize(Nv, 3);
        for (std::uint32_t v = 0; v < Nv; ++v)
            for (int c = 0; c < 3; ++c) frames[t](v, c) = double(row[std::size_t(v) * 3 + std::size_t(c)]);
    }
    return frames;
}

InjectionLog read_injection_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open injection log: " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InputError("injection log parse error: " + std::string(e.what()));
    }
    return InjectionLog::from_json(doc);
}

BundleSummary generate_scenario(const ScenarioSpec& raw_spec, const BodyModel& model,
                                const std::filesystem::path& out_dir) {
    ScenarioSpec spec = raw_spec;
    if (spec.n_frames < 2) throw InputError("scenario: n_frames must be at least 2");
    for (double rate : {spec.noise.outlier_rate, spec.noise.dropout_rate})
        if (rate < 0.0 || rate > 1.0) throw InputError("scenario: rates must lie in [0, 1]");
    for (const auto& w : spec.noise.occlusion_windows)
        if (w.start < 0 || w.end < w.start || w.end >= spec.n_frames)
            throw InputError("scenario: occlusion window outside [0, n_frames)");
    if (spec.base_pose.joint_rotations.size() == 0)
        spec.base_pose = PoseParams::zeros(model.num_joints());
    if (spec.base_shape.beta.size() == 0) spec.base_shape.beta = VecX::Zero(model.num_betas());

    CameraIntrinsics K;
    K.width = spec.raster_width;
    K.height = spec.raster_height;
    K.fx = K.fy = 0.9 * double(spec.raster_width);
    K.cx = 0.5 * double(spec.raster_width);
    K.cy = 0.5 * double(spec.raster_height);
    K.validate();

    const Points local = pose_mesh_local(model, spec.base_pose, spec.base_shape);
    const Vec3 centroid = local.colwise().mean();
    const double body_radius = (local.rowwise() - centroid.transpose()).rowwise().norm().maxCoeff();
    if (!(spec.orbit_radius > body_radius))
        throw InputError("scenario: orbit radius too small, body intersects the camera path");

    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "masks");
    fs::create_directories(out_dir / "gt_masks");

    const double height = 0.5 * spec.orbit_radius;
    const Vec3 up(0, 1, 0);

    std::vector<FrameRecord> gt_frames(std::size_t(spec.n_frames));
    std::vector<SilhouetteMask> gt_masks(std::size_t(spec.n_frames));
    std::vector<Points> gt_vertices(std::size_t(spec.n_frames));
    Vec3 prev_rotation = Vec3::Zero();
    for (int t = 0; t < spec.n_frames; ++t) {
        const double phi = spec.orbit_degrees * kPi / 180.0 * double(t) / double(spec.n_frames);
        const Vec3 eye = centroid + Vec3(spec.orbit_radius * std::cos(phi), height,
                                         spec.orbit_radius * std::sin(phi));
        const Vec3 fwd = (centroid - eye).normalized();
        const Vec3 right = fwd.cross(up).normalized();
        const Vec3 down = fwd.cross(right);
        Mat3 R_wc;
        R_wc.row(0) = right.transpose();
        R_wc.row(1) = down.transpose();
        R_wc.row(2) = fwd.transpose();

        Vec3 rotation = matrix_to_aa(R_wc);
        if (t > 0) rotation = nearest_aa_representative(rotation, prev_rotation);
        prev_rotation = rotation;

        FrameRecord& f = gt_frames[std::size_t(t)];
        f.index = t;
        f.valid = true;
        f.pose = spec.base_pose;
        f.shape = spec.base_shape;
        f.placement.rotation = rotation;
        f.placement.translation = -(R_wc * eye);
        f.mask_path = "gt_masks/" + frame_name(t);

        gt_vertices[std::size_t(t)] = apply_placement(local, f.placement);
        gt_masks[std::size_t(t)] = rasterize_silhouette(gt_vertices[std::size_t(t)], model.faces, K, 1);
        write_pgm(gt_masks[std::size_t(t)], out_dir / "gt_masks" / frame_name(t));
    }

    // corruption schedule: one rng draw order, fixed per seed
    Rng rng(spec.seed);
    std::vector<char> outlier(std::size_t(spec.n_frames), 0);
    std::vector<char> dropout(std::size_t(spec.n_frames), 0);
    for (int t = 1; t < spec.n_frames; ++t) {
        outlier[std::size_t(t)] = rng.uniform() < spec.noise.outlier_rate;
        dropout[std::size_t(t)] = rng.uniform() < spec.noise.dropout_rate;
    }
    // low-visibility windows derail the prediction as a smooth drift: it
    // stays under the per-frame rejection thresholds yet accumulates into a
    // large placement error toward the middle of the window
    struct WindowDrift {
        VecX pose_dir;
        Vec3 rot_dir;
        Vec3 trans_dir;
    };
    std::vector<WindowDrift> drifts;
    for (std::size_t w = 0; w < spec.noise.occlusion_windows.size(); ++w)
        drifts.push_back({rng.unit_vec(3 * model.num_joints()), Vec3(rng.unit_vec(3)),
                          Vec3(rng.unit_vec(3))});
    auto occlusion_at = [&](long long t) -> std::optional<std::pair<double, std::size_t>> {
        for (std::size_t w = 0; w < spec.noise.occlusion_windows.size(); ++w) {
            const auto& win = spec.noise.occlusion_windows[w];
            if (t < win.start || t > win.end) continue;
            double tent = 1.0;
            if (win.end > win.start) {
                const double u = double(t - win.start) / double(win.end - win.start);
                tent = 1.0 - std::abs(2.0 * u - 1.0);
            }
            return std::make_pair(0.1 + 0.9 * tent, w);  // strictly positive at the edges
        }
        return std::nullopt;
    };

    const bool jitter_on =
        spec.noise.pose_jitter_sigma > 0.0 || spec.noise.translation_jitter_sigma > 0.0;

    BundleSummary summary;
    summary.dir = out_dir;
    summary.n_frames = spec.n_frames;

    InjectionLog log;
    std::vector<FrameRecord> pred_frames(std::size_t(spec.n_frames));
    for (int t = 0; t < spec.n_frames; ++t) {
        const FrameRecord& gt = gt_frames[std::size_t(t)];
        FrameRecord& f = pred_frames[std::size_t(t)];
        f.index = t;
        f.mask_path = "masks/" + frame_name(t);

        InjectionLog::Entry entry;
        entry.frame = t;

        SilhouetteMask mask = gt_masks[std::size_t(t)];
        const auto occl = occlusion_at(t);

        if (dropout[std::size_t(t)]) {
            f.valid = false;
            mask = SilhouetteMask(K.width, K.height);
            entry.types.push_back("dropout");
            ++summary.dropout_count;
        } else {
            f.valid = true;
            f.pose = gt.pose;
            f.shape = gt.shape;
            f.placement = gt.placement;
            if (jitter_on) {
                if (spec.noise.pose_jitter_sigma > 0.0)
                    f.pose.joint_rotations +=
                        spec.noise.pose_jitter_sigma * rng.normal_vec(int(f.pose.joint_rotations.size()));
                if (spec.noise.translation_jitter_sigma > 0.0)
                    f.placement.translation +=
                        spec.noise.translation_jitter_sigma * Vec3(rng.normal_vec(3));
                entry.types.push_back("jitter");
                ++summary.jittered_count;
            }
            if (outlier[std::size_t(t)]) {
                f.pose.joint_rotations +=
                    spec.noise.outlier_magnitude * rng.unit_vec(int(f.pose.joint_rotations.size()));
                entry.types.push_back("outlier");
                ++summary.outlier_count;
            }
            if (occl) {
                const double s = occl->first * spec.noise.outlier_magnitude;
                const WindowDrift& drift = drifts[occl->second];
                f.pose.joint_rotations += 0.8 * s * drift.pose_dir;
                f.placement.rotation += 0.5 * s * drift.rot_dir;
                f.placement.translation += 0.25 * s * drift.trans_dir;
                mask = erode_mask_to_fraction(mask, spec.noise.occlusion_windows[occl->second].visible_fraction);
                entry.types.push_back("occlusion");
                ++summary.occluded_count;
            }
        }
        write_pgm(mask, out_dir / "masks" / frame_name(t));
        if (!entry.types.empty()) log.entries.push_back(std::move(entry));
    }

    save_body_model(model, out_dir / "model.json");
    write_frame_records(out_dir / "gt_frames.jsonl", gt_frames);
    write_frame_records(out_dir / "pred_frames.jsonl", pred_frames);
    write_gt_vertices(out_dir / "gt_vertices.f32", gt_vertices);

    json scenario = spec.to_json();
    scenario["camera"] = {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}};
    std::ofstream scen(out_dir / "scenario.json");
    if (!scen) throw InputError("cannot write scenario.json");
    scen << scenario.dump(2) << "\n";

    std::ofstream logfile(out_dir / "injection_log.json");
    if (!logfile) throw InputError("cannot write injection_log.json");
    logfile << log.to_json().dump(2) << "\n";

    return summary;
}

Bundle load_bundle(const std::filesystem::path& dir) {
    Bundle bundle;
    bundle.dir = dir;
    std::ifstream scen(dir / "scenario.json");
    if (!scen) throw InputError("cannot open bundle scenario: " + (dir / "scenario.json").string());
    json doc;
    try {
        scen >> doc;
    } catch (const json::exception& e) {
        throw InputError("scenario parse error: " + std::string(e.what()));
    }
    bundle.scenario = ScenarioSpec::from_json(doc);
    bundle.K.width = bundle.scenario.raster_width;
    bundle.K.height = bundle.scenario.raster_height;
    if (doc.contains("camera")) {
        bundle.K.fx = doc["camera"].at("fx").get<double>();
        bundle.K.fy = doc["camera"].at("fy").get<double>();
        bundle.K.cx = doc["camera"].at("cx").get<double>();
        bundle.K.cy = doc["camera"].at("cy").get<double>();
    } else {
        bundle.K.fx = bundle.K.fy = 0.9 * double(bundle.K.width);
        bundle.K.cx = 0.5 * double(bundle.K.width);
        bundle.K.cy = 0.5 * double(bundle.K.height);
    }
    bundle.K.validate();
    bundle.model = load_body_model(dir / "model.json");
    bundle.gt_frames = read_frame_records(dir / "gt_frames.jsonl");
    bundle.pred_frames = read_frame_records(dir / "pred_frames.jsonl");
    return bundle;
}

std::vector<SilhouetteMask> load_masks(const std::filesystem::path& bundle_dir,
                                       std::span<const FrameRecord> frames,
                                       const CameraIntrinsics& K) {
    std::vector<SilhouetteMask> masks;
    masks.reserve(frames.size());
    for (const FrameRecord& f : frames) {
        if (f.mask_path.empty()) {
            masks.emplace_back(K.width, K.height);
            continue;
        }
        const std::filesystem::path p = bundle_dir / f.mask_path;
        if (!std::filesystem::exists(p))
            throw InputError("missing mask file for frame " + std::to_string(f.index) + ": " + p.string());
        masks.push_back(read_pgm(p));
    }
    return masks;
}

}  // namespace stab4d
