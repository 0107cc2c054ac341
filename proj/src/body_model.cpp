#include "stab4d/body_model.hpp"

#include <fstream>

#include <json.hpp>

namespace stab4d {

using nlohmann::json;

void BodyModel::validate() {
    const int nv = num_vertices();
    const int nj = num_joints();

    if (nv == 0) throw InputError("model dimension mismatch: no template vertices");
    if (nj == 0) throw InputError("model dimension mismatch: no joints");

    for (const auto& f : faces)
        for (int idx : f)
            if (idx < 0 || idx >= nv)
                throw InputError("model dimension mismatch: face index out of range");

    if (int(parent.size()) != nj)
        throw InputError("model dimension mismatch: parent array length != joint count");
    if (parent[0] != -1) throw InputError("cyclic or non-rooted parent array: parent[0] must be none");
    for (int j = 1; j < nj; ++j) {
        if (parent[j] == -1)
            throw InputError("cyclic or non-rooted parent array: multiple roots");
        if (parent[j] < 0 || parent[j] >= j)
            throw InputError("cyclic or non-rooted parent array: parent[j] must be < j");
    }

    if (skin_weights.rows() != nv || skin_weights.cols() != nj)
        throw InputError("model dimension mismatch: skin weight matrix shape");
    for (int v = 0; v < nv; ++v) {
        double sum = 0.0;
        for (int j = 0; j < nj; ++j) {
            const double w = skin_weights(v, j);
            if (w < 0.0) throw InputError("weights not normalized: negative entry in row " + std::to_string(v));
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw InputError("weights not normalized: row " + std::to_string(v) + " sums to " + std::to_string(sum));
        skin_weights.row(v) /= sum;  // make rows sum to 1 exactly
    }

    for (const auto& d : shape_dirs)
        if (d.rows() != nv || d.cols() != 3)
            throw InputError("model dimension mismatch: shape_dirs shape");

    if (has_regressor() && (joint_regressor.rows() != nj || joint_regressor.cols() != nv))
        throw InputError("model dimension mismatch: joint_regressor shape");

    joint_anchor_vertex.assign(nj, 0);
    for (int j = 0; j < nj; ++j) {
        double best = (template_vertices.row(0) - rest_joints.row(j)).squaredNorm();
        for (int v = 1; v < nv; ++v) {
            const double d = (template_vertices.row(v) - rest_joints.row(j)).squaredNorm();
            if (d < best) {
                best = d;
                joint_anchor_vertex[j] = v;
            }
        }
    }
}

namespace {

Points parse_points(const json& node, const char* key) {
    if (!node.is_array()) throw InputError(std::string("model parse error: '") + key + "' must be an array");
    Points out(node.size(), 3);
    for (std::size_t i = 0; i < node.size(); ++i) {
        if (!node[i].is_array() || node[i].size() != 3)
            throw InputError(std::string("model dimension mismatch: '") + key + "' rows must have 3 entries");
        for (int c = 0; c < 3; ++c) out(Eigen::Index(i), c) = node[i][c].get<double>();
    }
    return out;
}

MatX parse_matrix(const json& node, const char* key) {
    if (!node.is_array() || node.empty())
        throw InputError(std::string("model parse error: '") + key + "' must be a nonempty array");
    const std::size_t cols = node[0].size();
    MatX out(node.size(), cols);
    for (std::size_t i = 0; i < node.size(); ++i) {
        if (!node[i].is_array() || node[i].size() != cols)
            throw InputError(std::string("model dimension mismatch: ragged rows in '") + key + "'");
        for (std::size_t c = 0; c < cols; ++c) out(Eigen::Index(i), Eigen::Index(c)) = node[i][c].get<double>();
    }
    return out;
}

}  // namespace

BodyModel load_body_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("model parse error: cannot open " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw InputError("model parse error: " + std::string(e.what()));
    }

    for (const char* key : {"template_vertices", "faces", "rest_joints", "parent", "skin_weights", "shape_dirs"})
        if (!doc.contains(key)) throw InputError(std::string("model parse error: missing key '") + key + "'");

    BodyModel model;
    try {
        model.template_vertices = parse_points(doc["template_vertices"], "template_vertices");
        for (const auto& f : doc["faces"]) {
            if (!f.is_array() || f.size() != 3)
                throw InputError("model dimension mismatch: faces rows must have 3 entries");
            model.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
        }
        model.rest_joints = parse_points(doc["rest_joints"], "rest_joints");
        for (const auto& p : doc["parent"]) model.parent.push_back(p.is_null() ? -1 : p.get<int>());
        model.skin_weights = parse_matrix(doc["skin_weights"], "skin_weights");

        const auto& dirs = doc["shape_dirs"];
        if (!dirs.is_array()) throw InputError("model parse error: 'shape_dirs' must be an array");
        std::size_t n_beta = 0;
        if (!dirs.empty()) {
            if (!dirs[0].is_array() || dirs[0].empty() || !dirs[0][0].is_array())
                throw InputError("model parse error: 'shape_dirs' must be Nv x 3 x N_beta");
            n_beta = dirs[0][0].size();
        }
        model.shape_dirs.assign(n_beta, MatX::Zero(Eigen::Index(dirs.size()), 3));
        for (std::size_t v = 0; v < dirs.size(); ++v) {
            if (dirs[v].size() != 3) throw InputError("model dimension mismatch: shape_dirs rows must have 3 axes");
            for (std::size_t c = 0; c < 3; ++c) {
                if (dirs[v][c].size() != n_beta)
                    throw InputError("model dimension mismatch: ragged shape_dirs");
                for (std::size_t b = 0; b < n_beta; ++b)
                    model.shape_dirs[b](Eigen::Index(v), Eigen::Index(c)) = dirs[v][c][b].get<double>();
            }
        }

        if (doc.contains("joint_regressor") && !doc["joint_regressor"].is_null())
            model.joint_regressor = parse_matrix(doc["joint_regressor"], "joint_regressor");
    } catch (const json::exception& e) {
        throw InputError("model parse error: " + std::string(e.what()));
    }

    model.validate();
    return model;
}

void save_body_model(const BodyModel& model, const std::filesystem::path& path) {
    json doc;
    auto points_json = [](const Points& p) {
        json arr = json::array();
        for (Eigen::Index i = 0; i < p.rows(); ++i) arr.push_back({p(i, 0), p(i, 1), p(i, 2)});
        return arr;
    };
    doc["template_vertices"] = points_json(model.template_vertices);
    json faces = json::array();
    for (const auto& f : model.faces) faces.push_back({f[0], f[1], f[2]});
    doc["faces"] = std::move(faces);
    doc["rest_joints"] = points_json(model.rest_joints);
    doc["parent"] = model.parent;
    json weights = json::array();
    for (Eigen::Index v = 0; v < model.skin_weights.rows(); ++v) {
        json row = json::array();
        for (Eigen::Index j = 0; j < model.skin_weights.cols(); ++j) row.push_back(model.skin_weights(v, j));
        weights.push_back(std::move(row));
    }
    doc["skin_weights"] = std::move(weights);
    json dirs = json::array();
    for (int v = 0; v < model.num_vertices(); ++v) {
        json vert = json::array();
        for (int c = 0; c < 3; ++c) {
            json axis = json::array();
            for (int b = 0; b < model.num_betas(); ++b) axis.push_back(model.shape_dirs[b](v, c));
            vert.push_back(std::move(axis));
        }
        dirs.push_back(std::move(vert));
    }
    doc["shape_dirs"] = std::move(dirs);
    if (model.has_regressor()) {
        json reg = json::array();
        for (Eigen::Index j = 0; j < model.joint_regressor.rows(); ++j) {
            json row = json::array();
            for (Eigen::Index v = 0; v < model.joint_regressor.cols(); ++v) row.push_back(model.joint_regressor(j, v));
            reg.push_back(std::move(row));
        }
        doc["joint_regressor"] = std::move(reg);
    }

    std::ofstream out(path);
    if (!out) throw InputError("cannot write model file: " + path.string());
    out << doc.dump() << "\n";
}

Points shaped_vertices(const BodyModel& model, const VecX& beta) {
    if (int(beta.size()) != model.num_betas())
        throw InputError("pose_mesh dimension mismatch: beta length != N_beta");
    Points v = model.template_vertices;
    for (int b = 0; b < model.num_betas(); ++b) v += beta[b] * model.shape_dirs[b];
    return v;
}

Points pose_mesh_local(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape) {
    const int nj = model.num_joints();
    if (int(pose.joint_rotations.size()) != 3 * nj)
        throw InputError("pose_mesh dimension mismatch: pose length != 3J");
    if (!(shape.scale > 0.0)) throw InputError("pose_mesh: scale must be positive");

    const Points shaped = shaped_vertices(model, shape.beta);

    Points joints(nj, 3);
    if (model.has_regressor()) {
        joints = model.joint_regressor * shaped;
    } else {
        for (int j = 0; j < nj; ++j) {
            const int v = model.joint_anchor_vertex[j];
            joints.row(j) = model.rest_joints.row(j) + (shaped.row(v) - model.template_vertices.row(v));
        }
    }

    // forward kinematic chain
    std::vector<Mat3> rot(nj);
    std::vector<Vec3> trans(nj);
    for (int j = 0; j < nj; ++j) {
        const Mat3 local = aa_to_matrix(pose.joint_rotations.segment<3>(3 * j));
        if (j == 0) {
            rot[0] = local;
            trans[0] = joints.row(0).transpose();
        } else {
            const int p = model.parent[j];
            rot[j] = rot[p] * local;
            trans[j] = rot[p] * Vec3(joints.row(j) - joints.row(p)).eval() + trans[p];
        }
    }
    // skinning transforms relative to the rest joints
    std::vector<Vec3> offset(nj);
    for (int j = 0; j < nj; ++j) offset[j] = trans[j] - rot[j] * joints.row(j).transpose();

    const int nv = model.num_vertices();
    Points out = Points::Zero(nv, 3);
    for (int v = 0; v < nv; ++v) {
        const Vec3 x = shaped.row(v).transpose();
        Vec3 acc = Vec3::Zero();
        for (int j = 0; j < nj; ++j) {
            const double w = model.skin_weights(v, j);
            if (w != 0.0) acc += w * (rot[j] * x + offset[j]);
        }
        out.row(v) = acc.transpose();
    }
    return out * shape.scale;
}

Points apply_placement(const Points& vertices, const GlobalPlacement& placement) {
    const Mat3 R = aa_to_matrix(placement.rotation);
    Points out = vertices * R.transpose();
    out.rowwise() += placement.translation.transpose();
    return out;
}

Points pose_mesh(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape,
                 const GlobalPlacement& placement) {
    return apply_placement(pose_mesh_local(model, pose, shape), placement);
}

}  // namespace stab4d
