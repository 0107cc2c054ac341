#include "stab4d/rigid_fit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace stab4d {

bool pool_admit(KeyframePool& pool, KeyframeEntry entry, const RigidFitConfig& config) {
    if (!pool.entries.empty() && !(entry.iou > config.tau_q)) return false;
    entry.centroid = entry.posed_vertices.colwise().mean();
    pool.entries.push_back(std::move(entry));
    return true;
}

const KeyframeEntry& select_reference(const KeyframePool& pool, long long target_index,
                                      const RigidFitConfig& config, ChainDirection direction) {
    const KeyframeEntry* best = nullptr;
    double best_score = 0.0;
    long long best_gap = 0;
    for (const KeyframeEntry& e : pool.entries) {
        const bool eligible = direction == ChainDirection::forward ? e.frame_index <= target_index
                                                                   : e.frame_index >= target_index;
        if (!eligible) continue;
        const long long gap = std::llabs(e.frame_index - target_index);
        const double score = e.iou * std::exp(-double(gap) / config.tau_d);
        if (!best || score > best_score ||
            (score == best_score &&
             (gap < best_gap || (gap == best_gap && e.frame_index < best->frame_index)))) {
            best = &e;
            best_score = score;
            best_gap = gap;
        }
    }
    if (!best) throw InputError("select_reference: no eligible keyframe for frame " +
                                std::to_string(target_index));
    return *best;
}

Points transform_reference(const KeyframeEntry& reference, const RigidParams& params) {
    const Mat3 R = aa_to_matrix(params.omega);
    Points out = (reference.posed_vertices.rowwise() - reference.centroid.transpose()) * R.transpose();
    out.rowwise() += (reference.centroid + params.translation).transpose();
    return out;
}

GlobalPlacement compose_placement(const KeyframeEntry& reference, const RigidParams& params) {
    const Mat3 Rd = aa_to_matrix(params.omega);
    const Mat3 Rr = aa_to_matrix(reference.placement.rotation);
    GlobalPlacement out;
    out.rotation = nearest_aa_representative(matrix_to_aa(Rd * Rr), reference.placement.rotation);
    out.translation = Rd * (reference.placement.translation - reference.centroid) +
                      reference.centroid + params.translation;
    return out;
}

RigidParams params_from_placement(const KeyframeEntry& reference, const GlobalPlacement& placement) {
    const Mat3 Rr = aa_to_matrix(reference.placement.rotation);
    const Mat3 Rd = aa_to_matrix(placement.rotation) * Rr.transpose();
    RigidParams params;
    params.omega = matrix_to_aa(Rd);
    params.translation = placement.translation -
                         (Rd * (reference.placement.translation - reference.centroid) + reference.centroid);
    return params;
}

double rigid_objective(const RigidParams& params, const KeyframeEntry& reference,
                       const SilhouetteMask& target_mask, const std::optional<RigidParams>& neighbor,
                       const Faces& faces, const CameraIntrinsics& K, const RigidFitConfig& config) {
    if (target_mask.empty()) throw InputError("rigid_objective: empty target mask");
    const Points moved = transform_reference(reference, params);
    if ((moved.col(2).array() <= 1e-6).any()) return 1.0;
    // both silhouettes pass through the same reduction so that a transform
    // reproducing the target scores an exact Dice of 1
    const SilhouetteMask rendered =
        downscale_mask(rasterize_silhouette(moved, faces, K, 1), config.downscale);
    const SilhouetteMask target = downscale_mask(target_mask, config.downscale);
    double value = -dice(rendered, target);
    if (neighbor)
        value += config.lambda_temp * ((params.omega - neighbor->omega).norm() +
                                       (params.translation - neighbor->translation).norm());
    value += config.lambda_z * params.translation.z() * params.translation.z();
    return value;
}

NelderMeadResult nelder_mead(const std::function<double(const VecX&)>& objective, const VecX& x0,
                             const VecX& steps, int max_iter, double tol) {
    const int n = int(x0.size());
    if (steps.size() != n) throw InputError("nelder_mead: step vector dimension mismatch");

    std::vector<VecX> xs(n + 1, x0);
    std::vector<double> fs(n + 1);
    for (int i = 0; i < n; ++i) xs[i + 1][i] += steps[i];
    for (int i = 0; i <= n; ++i) {
        fs[i] = objective(xs[i]);
        if (!std::isfinite(fs[i])) throw NumericalError("nelder_mead: non-finite objective at initial simplex");
    }

    std::vector<int> order(n + 1);
    int iterations = 0;
    for (; iterations < max_iter; ++iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });
        if (fs[order[n]] - fs[order[0]] < tol) break;

        const int worst = order[n];
        VecX centroid = VecX::Zero(n);
        for (int i = 0; i < n; ++i) centroid += xs[order[i]];
        centroid /= double(n);

        const VecX xr = centroid + (centroid - xs[worst]);
        const double fr = objective(xr);
        if (fr < fs[order[0]]) {
            const VecX xe = centroid + 2.0 * (centroid - xs[worst]);
            const double fe = objective(xe);
            if (fe < fr) {
                xs[worst] = xe;
                fs[worst] = fe;
            } else {
                xs[worst] = xr;
                fs[worst] = fr;
            }
        } else if (fr < fs[order[n - 1]]) {
            xs[worst] = xr;
            fs[worst] = fr;
        } else {
            if (fr < fs[worst]) {
                const VecX xc = centroid + 0.5 * (xr - centroid);  // outside contraction
                const double fc = objective(xc);
                if (fc <= fr) {
                    xs[worst] = xc;
                    fs[worst] = fc;
                    continue;
                }
            } else {
                const VecX xc = centroid - 0.5 * (centroid - xs[worst]);  // inside contraction
                const double fc = objective(xc);
                if (fc < fs[worst]) {
                    xs[worst] = xc;
                    fs[worst] = fc;
                    continue;
                }
            }
            // shrink toward the best vertex
            const VecX& x1 = xs[order[0]];
            for (int i = 1; i <= n; ++i) {
                xs[order[i]] = x1 + 0.5 * (xs[order[i]] - x1);
                fs[order[i]] = objective(xs[order[i]]);
            }
        }
    }

    int best = 0;
    for (int i = 1; i <= n; ++i)
        if (fs[i] < fs[best]) best = i;
    return {xs[best], fs[best], iterations};
}

FitResult fit_frame(const KeyframeEntry& reference, const SilhouetteMask& target_mask,
                    const RigidParams& init, const std::optional<RigidParams>& neighbor,
                    const Faces& faces, const CameraIntrinsics& K, const RigidFitConfig& config) {
    FitResult result;
    result.params = init;
    if (target_mask.empty()) {
        const Points moved = transform_reference(reference, init);
        result.iou_after = iou(rasterize_silhouette(moved, faces, K, 1), target_mask);
        return result;
    }

    const SilhouetteMask target_small = downscale_mask(target_mask, config.downscale);

    auto objective = [&](const VecX& x) {
        RigidParams p;
        p.omega = x.head<3>();
        p.translation = x.tail<3>();
        const Points moved = transform_reference(reference, p);
        if ((moved.col(2).array() <= 1e-6).any()) return 1.0;
        const SilhouetteMask rendered =
            downscale_mask(rasterize_silhouette(moved, faces, K, 1), config.downscale);
        double value = -dice(rendered, target_small);
        if (neighbor)
            value += config.lambda_temp * ((p.omega - neighbor->omega).norm() +
                                           (p.translation - neighbor->translation).norm());
        value += config.lambda_z * p.translation.z() * p.translation.z();
        return value;
    };

    VecX x0(6);
    x0 << init.omega, init.translation;
    VecX steps(6);
    steps << 0.1, 0.1, 0.1, 0.05, 0.05, 0.05;

    // the discrete silhouette makes the objective piecewise constant, which
    // collapses the simplex early; restart it at the incumbent until the
    // iteration budget is spent or a restart stops paying off
    VecX best_x = x0;
    double best_f = std::numeric_limits<double>::infinity();
    int used = 0;
    while (used < config.max_iter) {
        const NelderMeadResult nm = nelder_mead(objective, best_x, steps, config.max_iter - used, 1e-6);
        used += std::max(nm.iterations, 1);
        if (nm.value < best_f - 1e-5) {
            best_f = nm.value;
            best_x = nm.x;
        } else {
            if (nm.value < best_f) {
                best_f = nm.value;
                best_x = nm.x;
            }
            break;
        }
    }

    result.params.omega = best_x.head<3>();
    result.params.translation = best_x.tail<3>();
    result.iterations = used;
    const Points moved = transform_reference(reference, result.params);
    if ((moved.col(2).array() > 1e-6).all())
        result.iou_after = iou(rasterize_silhouette(moved, faces, K, 1), target_mask);
    return result;
}

nlohmann::json FitReport::to_json() const {
    nlohmann::json doc;
    doc["fitted_count"] = fitted_count;
    nlohmann::json arr = nlohmann::json::array();
    for (const FitReportEntry& e : entries) {
        nlohmann::json node;
        node["frame"] = e.frame;
        node["pre_iou"] = e.pre_iou < 0 ? nlohmann::json(nullptr) : nlohmann::json(e.pre_iou);
        node["post_iou"] = e.post_iou < 0 ? nlohmann::json(nullptr) : nlohmann::json(e.post_iou);
        node["reference"] = e.reference < 0 ? nlohmann::json(nullptr) : nlohmann::json(e.reference);
        node["iterations"] = e.iterations;
        node["fitted"] = e.fitted;
        if (!e.note.empty()) node["note"] = e.note;
        arr.push_back(std::move(node));
    }
    doc["frames"] = std::move(arr);
    return doc;
}

namespace {

struct FittedFrame {
    GlobalPlacement placement;
    const KeyframeEntry* reference;
};

// first-order geodesic mean about the window center for rotations, plain
// mean for translations
GlobalPlacement window_average(const std::vector<GlobalPlacement>& placements, std::size_t center,
                               std::size_t lo, std::size_t hi) {
    const Mat3 Rc = aa_to_matrix(placements[center].rotation);
    Vec3 log_sum = Vec3::Zero();
    Vec3 trans_sum = Vec3::Zero();
    for (std::size_t i = lo; i <= hi; ++i) {
        log_sum += matrix_to_aa(Rc.transpose() * aa_to_matrix(placements[i].rotation));
        trans_sum += placements[i].translation;
    }
    const double n = double(hi - lo + 1);
    GlobalPlacement out;
    out.rotation = nearest_aa_representative(matrix_to_aa(Rc * aa_to_matrix(log_sum / n)),
                                             placements[center].rotation);
    out.translation = trans_sum / n;
    return out;
}

}  // namespace

std::vector<FrameRecord> run_rigid_fallback(std::vector<FrameRecord> frames,
                                            const std::vector<SilhouetteMask>& masks,
                                            const KeyframePool& pool, const BodyModel& model,
                                            const CameraIntrinsics& K, const RigidFitConfig& config,
                                            FitReport* report) {
    if (frames.empty()) throw InputError("run_rigid_fallback: empty input");
    if (masks.size() != frames.size())
        throw InputError("run_rigid_fallback: mask count does not match frame count");
    config.validate();

    const std::size_t n = frames.size();
    FitReport local_report;
    local_report.entries.resize(n);

    std::vector<char> needs_fit(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        FitReportEntry& e = local_report.entries[i];
        e.frame = frames[i].index;
        if (!frames[i].valid) {
            e.note = "invalid frame";
            continue;
        }
        if (masks[i].empty()) {
            e.note = "empty mask";
            continue;
        }
        const Points mesh = pose_mesh(model, frames[i].pose, frames[i].shape, frames[i].placement);
        e.pre_iou = iou(rasterize_silhouette(mesh, model.faces, K, 1), masks[i]);
        e.post_iou = e.pre_iou;
        needs_fit[i] = config.mode == RigidMode::full || e.pre_iou < config.tau_iou;
    }

    const bool any_fit = std::any_of(needs_fit.begin(), needs_fit.end(), [](char c) { return c != 0; });
    if (pool.entries.empty()) {
        if (any_fit) throw InputError("run_rigid_fallback: no usable reference (empty keyframe pool)");
        if (report) *report = std::move(local_report);
        return frames;
    }

    const long long k0 = pool.entries.front().frame_index;
    std::map<long long, FittedFrame> fitted;  // keyed by frame index

    auto fit_one = [&](std::size_t i, ChainDirection dir) {
        const long long t = frames[i].index;
        const KeyframeEntry& ref = select_reference(pool, t, config, dir);

        // nearest already-fitted neighbor initializes the search and anchors
        // the temporal regularizer
        const FittedFrame* nearest = nullptr;
        long long nearest_gap = 0;
        for (const auto& [idx, ff] : fitted) {
            const long long gap = std::llabs(idx - t);
            if (!nearest || gap < nearest_gap) {
                nearest = &ff;
                nearest_gap = gap;
            }
        }
        RigidParams init;
        std::optional<RigidParams> neighbor;
        if (nearest) {
            init = params_from_placement(ref, nearest->placement);
            if (double(nearest_gap) <= config.tau_g) neighbor = init;
        }

        const FitResult fit = fit_frame(ref, masks[i], init, neighbor, model.faces, K, config);

        frames[i].pose = ref.pose;
        frames[i].shape = ref.shape;
        frames[i].placement = compose_placement(ref, fit.params);
        fitted[t] = {frames[i].placement, &ref};

        FitReportEntry& e = local_report.entries[i];
        e.post_iou = fit.iou_after;
        e.reference = ref.frame_index;
        e.iterations = fit.iterations;
        e.fitted = true;
        ++local_report.fitted_count;
    };

    for (std::size_t i = 0; i < n; ++i)
        if (needs_fit[i] && frames[i].index > k0) fit_one(i, ChainDirection::forward);
    for (std::size_t i = n; i-- > 0;)
        if (needs_fit[i] && frames[i].index <= k0) fit_one(i, ChainDirection::backward);

    // moving-average smoothing of fitted trajectories, within maximal runs of
    // consecutive fitted frames only
    const int h = config.traj_window / 2;
    std::size_t i = 0;
    while (i < n) {
        if (!local_report.entries[i].fitted) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < n && local_report.entries[j + 1].fitted && frames[j + 1].index == frames[j].index + 1)
            ++j;
        if (j > i) {
            std::vector<GlobalPlacement> run;
            for (std::size_t k = i; k <= j; ++k) run.push_back(frames[k].placement);
            for (std::size_t k = i; k <= j; ++k) {
                const std::size_t c = k - i;
                const std::size_t lo = c >= std::size_t(h) ? c - h : 0;
                const std::size_t hi = std::min(run.size() - 1, c + h);
                frames[k].placement = window_average(run, c, lo, hi);
            }
            // refresh the reported IoU after smoothing
            for (std::size_t k = i; k <= j; ++k) {
                const Points mesh = pose_mesh(model, frames[k].pose, frames[k].shape, frames[k].placement);
                if ((mesh.col(2).array() > 1e-6).all())
                    local_report.entries[k].post_iou = iou(rasterize_silhouette(mesh, model.faces, K, 1), masks[k]);
            }
        }
        i = j + 1;
    }

    if (report) *report = std::move(local_report);
    return frames;
}

}  // namespace stab4d
