#pragma once

#include <Eigen/Dense>

#include "stab4d/errors.hpp"

namespace stab4d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
// Point clouds and meshes are stored one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Pixels = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 0;
    int height = 0;

    void validate() const;
};

/// Rodrigues: axis-angle vector (any magnitude) to rotation matrix.
Mat3 aa_to_matrix(const Vec3& aa);

/// Inverse Rodrigues. Returns the canonical representative with magnitude in
/// [0, pi]. Throws NumericalError if the input is not orthonormal within 1e-6
/// or has negative determinant.
Vec3 matrix_to_aa(const Mat3& rotation);

/// Geodesic interpolation on SO(3): exp(w * log(Ra^-1 Rb)) composed onto Ra.
/// w = 0 returns a exactly, w = 1 returns b exactly. For an exactly antipodal
/// relative rotation the log branch with nonnegative first nonzero component
/// is used. The returned axis-angle representative is the one closest to the
/// linear mix (1-w)a + wb, which keeps interpolated streams continuous.
Vec3 so3_geodesic_blend(const Vec3& a, const Vec3& b, double w);

/// Among axis-angle vectors representing the same rotation as `aa`, returns
/// the one closest to `reference`.
Vec3 nearest_aa_representative(const Vec3& aa, const Vec3& reference);

/// Geodesic distance between two rotations given as axis-angle, in radians.
double so3_distance(const Vec3& a, const Vec3& b);

/// Pinhole projection of camera-frame points. Throws NumericalError if any
/// point has z <= 1e-6 (at or behind the camera plane).
Pixels project_points(const Points& points, const CameraIntrinsics& K);

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double residual = 0.0;  // RMS alignment error, meters
};

/// Closed-form similarity alignment minimizing ||s R src + t - tgt||_F with
/// det(R) = +1. Requires N >= 3 rows and a non-collinear source cloud.
SimilarityTransform procrustes_align(const Points& source, const Points& target);

Points apply_similarity(const SimilarityTransform& T, const Points& points);

struct NnErrorDetail {
    Points aligned_pred;       // prediction after similarity alignment
    int correspondence_count = 0;
};

/// Mean distance from each gt vertex to its nearest predicted vertex, after a
/// similarity alignment estimated from mutual-nearest-neighbor pairs of the
/// centroid/scale normalized clouds. Topology-independent.
double nn_vertex_error(const Points& pred, const Points& gt, NnErrorDetail* detail = nullptr);

}  // namespace stab4d
