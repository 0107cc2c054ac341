#include "stab4d/geometry.hpp"

#include <cmath>

namespace stab4d {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("camera intrinsics: focal length must be positive");
    if (width < 1 || height < 1) throw InputError("camera intrinsics: raster size must be at least 1x1");
}

Mat3 aa_to_matrix(const Vec3& aa) {
    if (!aa.allFinite()) throw NumericalError("aa_to_matrix: non-finite axis-angle");
    const double theta = aa.norm();
    Mat3 K;
    K << 0, -aa.z(), aa.y(), aa.z(), 0, -aa.x(), -aa.y(), aa.x(), 0;
    if (theta < 1e-12) {
        // second-order Taylor expansion, exact enough at this magnitude
        return Mat3::Identity() + K + 0.5 * K * K;
    }
    const double s = std::sin(theta) / theta;
    const double c = (1.0 - std::cos(theta)) / (theta * theta);
    return Mat3::Identity() + s * K + c * K * K;
}

Vec3 matrix_to_aa(const Mat3& rotation) {
    const Mat3 defect = rotation * rotation.transpose() - Mat3::Identity();
    if (defect.cwiseAbs().maxCoeff() > 1e-6 || rotation.determinant() < 0.0)
        throw NumericalError("matrix_to_aa: input is not a proper rotation matrix");
    Eigen::Quaterniond q(rotation);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const double sin_half = q.vec().norm();
    const double angle = 2.0 * std::atan2(sin_half, q.w());
    if (sin_half < 1e-12) return 2.0 * q.vec();  // angle ~ 0, vec ~ axis*angle/2
    return (angle / sin_half) * q.vec();
}

Vec3 nearest_aa_representative(const Vec3& aa, const Vec3& reference) {
    const double theta = aa.norm();
    Vec3 best = aa;
    double best_d = (aa - reference).squaredNorm();
    auto consider = [&](const Vec3& cand) {
        const double d = (cand - reference).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = cand;
        }
    };
    if (theta > 1e-12) {
        const Vec3 axis = aa / theta;
        for (int k = -2; k <= 2; ++k) {
            if (k == 0) continue;
            consider(aa + (2.0 * kPi * k) * axis);
        }
    } else if (reference.norm() > 1e-12) {
        // identity rotation: representatives are 2*pi*k about any axis
        const Vec3 axis = reference.normalized();
        consider(2.0 * kPi * axis);
        consider(-2.0 * kPi * axis);
    }
    return best;
}

double so3_distance(const Vec3& a, const Vec3& b) {
    const Mat3 rel = aa_to_matrix(a).transpose() * aa_to_matrix(b);
    return matrix_to_aa(rel).norm();
}

Vec3 so3_geodesic_blend(const Vec3& a, const Vec3& b, double w) {
    if (w < 0.0 || w > 1.0) throw InputError("so3_geodesic_blend: weight outside [0, 1]");
    if (w == 0.0) return a;
    if (w == 1.0) return b;
    const Mat3 Ra = aa_to_matrix(a);
    const Mat3 Rb = aa_to_matrix(b);
    Vec3 d = matrix_to_aa(Ra.transpose() * Rb);
    if (kPi - d.norm() < 1e-9) {
        // antipodal tie-break: nonnegative first nonzero component
        for (int i = 0; i < 3; ++i) {
            if (std::abs(d[i]) > 1e-12) {
                if (d[i] < 0.0) d = -d;
                break;
            }
        }
    }
    const Mat3 out = Ra * aa_to_matrix(w * d);
    return nearest_aa_representative(matrix_to_aa(out), (1.0 - w) * a + w * b);
}

Pixels project_points(const Points& points, const CameraIntrinsics& K) {
    K.validate();
    Pixels out(points.rows(), 2);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const double z = points(i, 2);
        if (!(z > 1e-6)) throw NumericalError("project_points: point at or behind camera plane");
        out(i, 0) = K.fx * points(i, 0) / z + K.cx;
        out(i, 1) = K.fy * points(i, 1) / z + K.cy;
    }
    return out;
}

SimilarityTransform procrustes_align(const Points& source, const Points& target) {
    const Eigen::Index n = source.rows();
    if (n != target.rows()) throw InputError("procrustes_align: point counts differ");
    if (n < 3) throw InputError("procrustes_align: need at least 3 points");

    const Vec3 mu_s = source.colwise().mean();
    const Vec3 mu_t = target.colwise().mean();
    const Points cs = source.rowwise() - mu_s.transpose();
    const Points ct = target.rowwise() - mu_t.transpose();

    const double var_s = cs.squaredNorm() / double(n);
    const Mat3 cov = (ct.transpose() * cs) / double(n);

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (var_s < 1e-24 || sv(1) <= 1e-12 * std::max(sv(0), 1e-300))
        throw NumericalError("procrustes_align: rank-deficient covariance (collinear points)");

    Vec3 sgn = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sgn(2) = -1.0;

    SimilarityTransform T;
    T.rotation = svd.matrixU() * sgn.asDiagonal() * svd.matrixV().transpose();
    T.scale = sv.dot(sgn) / var_s;
    T.translation = mu_t - T.scale * (T.rotation * mu_s);

    const Points moved = apply_similarity(T, source);
    T.residual = std::sqrt((moved - target).squaredNorm() / double(n));
    return T;
}

Points apply_similarity(const SimilarityTransform& T, const Points& points) {
    Points out = T.scale * (points * T.rotation.transpose());
    out.rowwise() += T.translation.transpose();
    return out;
}

namespace {

// index of the nearest row of `cloud` to point p, brute force
Eigen::Index nearest_row(const Points& cloud, const Vec3& p) {
    Eigen::Index best = 0;
    double best_d = (cloud.row(0).transpose() - p).squaredNorm();
    for (Eigen::Index i = 1; i < cloud.rows(); ++i) {
        const double d = (cloud.row(i).transpose() - p).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

Points normalize_cloud(const Points& cloud) {
    const Vec3 mu = cloud.colwise().mean();
    Points c = cloud.rowwise() - mu.transpose();
    const double rms = std::sqrt(c.squaredNorm() / double(std::max<Eigen::Index>(cloud.rows(), 1)));
    if (rms > 1e-12) c /= rms;
    return c;
}

// strided subsample keeping at most `cap` rows; returns original row indices
std::vector<Eigen::Index> subsample_indices(Eigen::Index n, Eigen::Index cap) {
    const Eigen::Index stride = std::max<Eigen::Index>(1, (n + cap - 1) / cap);
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < n; i += stride) idx.push_back(i);
    return idx;
}

Points gather(const Points& cloud, const std::vector<Eigen::Index>& idx) {
    Points out(Eigen::Index(idx.size()), 3);
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(Eigen::Index(k)) = cloud.row(idx[k]);
    return out;
}

struct Alignment {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;  // (pred row, gt row) in subsample
    double score = std::numeric_limits<double>::infinity();
};

// mutual-nearest-neighbor pairing refined by repeated similarity fits,
// starting from a given rotation of the normalized prediction subsample
Alignment refine_alignment(const Points& sub_pred, const Points& sub_gt, const Mat3& init_rotation) {
    Alignment result;
    SimilarityTransform T;
    T.rotation = init_rotation;
    for (int iter = 0; iter < 8; ++iter) {
        const Points moved = apply_similarity(T, sub_pred);
        std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
        for (Eigen::Index i = 0; i < sub_gt.rows(); ++i) {
            const Eigen::Index j = nearest_row(moved, sub_gt.row(i).transpose());
            if (nearest_row(sub_gt, moved.row(j).transpose()) == i) pairs.emplace_back(j, i);
        }
        if (pairs.size() < 3) break;
        Points src(pairs.size(), 3), dst(pairs.size(), 3);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            src.row(Eigen::Index(k)) = sub_pred.row(pairs[k].first);
            dst.row(Eigen::Index(k)) = sub_gt.row(pairs[k].second);
        }
        try {
            T = procrustes_align(src, dst);
        } catch (const NumericalError&) {
            break;
        }
        const Points fitted = apply_similarity(T, sub_pred);
        double score = 0.0;
        for (Eigen::Index i = 0; i < sub_gt.rows(); ++i)
            score += (fitted.row(nearest_row(fitted, sub_gt.row(i).transpose())) - sub_gt.row(i)).norm();
        score /= double(sub_gt.rows());
        if (score < result.score - 1e-13) {
            result.score = score;
            result.pairs = std::move(pairs);
        } else {
            break;
        }
    }
    return result;
}

}  // namespace

double nn_vertex_error(const Points& pred, const Points& gt, NnErrorDetail* detail) {
    if (pred.rows() == 0 || gt.rows() == 0) throw InputError("nn_vertex_error: empty point cloud");

    // Correspondences are searched on centroid/scale normalized subsamples;
    // a PCA-based rotation search kicks in when the clouds are not already
    // roughly aligned, so a global similarity transform of the prediction is
    // fully absorbed. The error itself is measured over every gt vertex.
    const Points np = normalize_cloud(pred);
    const Points ng = normalize_cloud(gt);
    const auto pred_idx = subsample_indices(np.rows(), 400);
    const auto gt_idx = subsample_indices(ng.rows(), 400);
    const Points sub_pred = gather(np, pred_idx);
    const Points sub_gt = gather(ng, gt_idx);

    Alignment best = refine_alignment(sub_pred, sub_gt, Mat3::Identity());
    // near-symmetric bodies can make a misaligned fit look plausible, so the
    // principal-axis candidates are always raced unless the fit is exact
    if (best.score > 1e-10) {
        Eigen::SelfAdjointEigenSolver<Mat3> ep(sub_pred.transpose() * sub_pred);
        Eigen::SelfAdjointEigenSolver<Mat3> eg(sub_gt.transpose() * sub_gt);
        const Mat3 vp = ep.eigenvectors();
        const Mat3 vg = eg.eigenvectors();
        for (int sx : {1, -1}) {
            for (int sy : {1, -1}) {
                Vec3 signs(double(sx), double(sy), 1.0);
                signs(2) = vp.determinant() * vg.determinant() * signs(0) * signs(1);
                const Mat3 candidate = vg * signs.asDiagonal() * vp.transpose();
                const Alignment a = refine_alignment(sub_pred, sub_gt, candidate);
                if (a.score < best.score) best = a;
            }
        }
    }

    Points aligned = pred;
    if (best.pairs.size() >= 3) {
        Points src(best.pairs.size(), 3), dst(best.pairs.size(), 3);
        for (std::size_t k = 0; k < best.pairs.size(); ++k) {
            src.row(Eigen::Index(k)) = pred.row(pred_idx[std::size_t(best.pairs[k].first)]);
            dst.row(Eigen::Index(k)) = gt.row(gt_idx[std::size_t(best.pairs[k].second)]);
        }
        try {
            aligned = apply_similarity(procrustes_align(src, dst), pred);
        } catch (const NumericalError&) {
            const Vec3 shift = Vec3(gt.colwise().mean()) - Vec3(pred.colwise().mean());
            aligned.rowwise() += shift.transpose();
        }
    } else {
        const Vec3 shift = Vec3(gt.colwise().mean()) - Vec3(pred.colwise().mean());
        aligned.rowwise() += shift.transpose();
    }

    double total = 0.0;
    for (Eigen::Index i = 0; i < gt.rows(); ++i) {
        const Eigen::Index j = nearest_row(aligned, gt.row(i).transpose());
        total += (aligned.row(j) - gt.row(i)).norm();
    }
    if (detail) {
        detail->aligned_pred = aligned;
        detail->correspondence_count = int(best.pairs.size());
    }
    return total / double(gt.rows());
}

}  // namespace stab4d
