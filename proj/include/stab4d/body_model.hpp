#pragma once

#include <filesystem>
#include <vector>

#include "stab4d/geometry.hpp"
#include "stab4d/silhouette.hpp"

namespace stab4d {

/// Per-joint axis-angle rotations, flattened to length 3J.
struct PoseParams {
    VecX joint_rotations;

    static PoseParams zeros(int joints) {
        return PoseParams{VecX::Zero(3 * joints)};
    }
};

struct ShapeParams {
    VecX beta;
    double scale = 1.0;
};

/// World rotation applied after skinning, plus camera-frame translation.
struct GlobalPlacement {
    Vec3 rotation = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
};

/// Rest-pose articulated template. Immutable after load; pose_mesh is pure.
struct BodyModel {
    Points template_vertices;                 // Nv x 3, meters
    Faces faces;                              // Nf x 3 vertex indices
    Points rest_joints;                       // J x 3, meters
    std::vector<int> parent;                  // parent[0] == -1, parent[j] < j
    MatX skin_weights;                        // Nv x J, rows normalized on load
    std::vector<MatX> shape_dirs;             // N_beta entries of Nv x 3
    MatX joint_regressor;                     // J x Nv, 0x0 when absent

    // nearest template vertex per joint, used to shift rest joints with shape
    // when no regressor is present (filled by validate)
    std::vector<int> joint_anchor_vertex;

    int num_vertices() const { return int(template_vertices.rows()); }
    int num_joints() const { return int(rest_joints.rows()); }
    int num_betas() const { return int(shape_dirs.size()); }
    bool has_regressor() const { return joint_regressor.size() > 0; }

    /// Checks every structural invariant, normalizes weight rows exactly and
    /// fills derived lookup tables. Throws InputError with a distinct message
    /// per failure class.
    void validate();
};

BodyModel load_body_model(const std::filesystem::path& path);
void save_body_model(const BodyModel& model, const std::filesystem::path& path);

/// template + shape_dirs * beta
Points shaped_vertices(const BodyModel& model, const VecX& beta);

/// Linear blend skinning without global placement: scale * LBS(shaped, chain).
Points pose_mesh_local(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape);

Points apply_placement(const Points& vertices, const GlobalPlacement& placement);

/// Full forward function: placement.rotation o (scale * LBS) + translation.
Points pose_mesh(const BodyModel& model, const PoseParams& pose, const ShapeParams& shape,
                 const GlobalPlacement& placement);

}  // namespace stab4d
