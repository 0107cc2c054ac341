#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "stab4d/stabilize.hpp"
#include "test_util.hpp"

using namespace stab4d;
namespace tu = testutil;

namespace {

constexpr double kPi = 3.14159265358979323846;

StabilizerConfig small_config() {
    StabilizerConfig cfg;
    cfg.warmup = 12;
    cfg.median_window = 5;
    return cfg;
}

// constant-parameter frames with a slowly turning placement
std::vector<FrameRecord> constant_frames(int n, int joints = 4) {
    std::vector<FrameRecord> frames;
    const PoseParams pose{0.1 * VecX::Ones(3 * joints)};
    const ShapeParams shape{0.2 * VecX::Ones(3), 1.0};
    GlobalPlacement placement;
    placement.translation = Vec3(0, 0, 2);
    for (int t = 0; t < n; ++t) frames.push_back(tu::make_frame(t, pose, shape, placement));
    return frames;
}

}  // namespace

TEST_CASE("reject_outlier accepts under threshold, holds over threshold") {
    StabilizerState state;
    state.config = StabilizerConfig{};
    const VecX zero = VecX::Zero(4);

    auto first = reject_outlier(state, ParamGroup::theta, zero);
    CHECK_FALSE(first.rejected);  // first frame always accepted

    VecX small = VecX::Zero(4);
    small[0] = 0.5;
    auto ok = reject_outlier(state, ParamGroup::theta, small);
    CHECK_FALSE(ok.rejected);
    CHECK((ok.accepted - small).norm() == 0.0);

    VecX big = small;
    big[1] = 0.7;  // distance 0.7 from last accepted
    auto held = reject_outlier(state, ParamGroup::theta, big);
    CHECK(held.rejected);
    CHECK((held.accepted - small).norm() == 0.0);
    CHECK(state.theta.reject_count == 1);
}

TEST_CASE("force-accept blends after n_max consecutive rejections") {
    StabilizerState state;
    state.config = StabilizerConfig{};
    state.config.n_max = 3;
    reject_outlier(state, ParamGroup::theta, VecX::Zero(2));

    VecX far(2);
    far << 3.0, 4.0;
    for (int i = 0; i < 3; ++i) {
        auto r = reject_outlier(state, ParamGroup::theta, far);
        CHECK(r.rejected);
        CHECK(state.theta.reject_count == i + 1);
    }
    auto forced = reject_outlier(state, ParamGroup::theta, far);
    CHECK(forced.force_accepted);
    CHECK_FALSE(forced.rejected);
    CHECK((forced.accepted - 0.5 * far).norm() < 1e-15);
    CHECK(state.theta.reject_count == 0);

    CHECK_THROWS_AS(reject_outlier(state, ParamGroup::theta, VecX::Zero(5)), InputError);
}

TEST_CASE("geodesic rejection flag measures rotation distance on the manifold") {
    constexpr double pi = 3.14159265358979323846;
    // two representations of nearly the same rotation: far apart as vectors,
    // close geodesically
    const Vec3 a((pi - 0.01), 0, 0);
    const Vec3 b(-(pi - 0.03), 0, 0);

    StabilizerState plain;
    plain.config = StabilizerConfig{};
    reject_outlier(plain, ParamGroup::rotation, a);
    CHECK(reject_outlier(plain, ParamGroup::rotation, b).rejected);

    StabilizerState geodesic;
    geodesic.config = StabilizerConfig{};
    geodesic.config.rotation_reject_geodesic = true;
    reject_outlier(geodesic, ParamGroup::rotation, a);
    CHECK_FALSE(reject_outlier(geodesic, ParamGroup::rotation, b).rejected);
}

TEST_CASE("lock_shape broadcasts one shape") {
    std::vector<FrameRecord> frames;
    for (int t = 0; t < 3; ++t) {
        ShapeParams shape{VecX::Constant(2, double(t)), 1.0 + 0.1 * t};
        frames.push_back(tu::make_frame(t, PoseParams::zeros(1), shape, GlobalPlacement{}));
    }
    const ShapeParams keyframe = frames[1].shape;
    const auto locked = lock_shape(frames, keyframe);
    for (const auto& f : locked) {
        CHECK((f.shape.beta - keyframe.beta).norm() == 0.0);
        CHECK(f.shape.scale == keyframe.scale);
        CHECK((f.pose.joint_rotations - frames[0].pose.joint_rotations).norm() == 0.0);
    }
    const auto single = lock_shape({frames.begin(), frames.begin() + 1}, frames[0].shape);
    CHECK((single[0].shape.beta - frames[0].shape.beta).norm() == 0.0);
}

TEST_CASE("median_filter constant, spike and brute-force oracle") {
    MatX constant = MatX::Constant(10, 3, 2.5);
    CHECK((median_filter(constant, 5) - constant).cwiseAbs().maxCoeff() == 0.0);

    MatX spike = MatX::Constant(9, 1, 1.0);
    spike(4, 0) = 50.0;
    CHECK(median_filter(spike, 3)(4, 0) == 1.0);

    std::mt19937_64 rng(3);
    MatX series(20, 5);
    for (int t = 0; t < 20; ++t) series.row(t) = tu::random_vec(rng, 5, 1.0).transpose();
    const MatX got = median_filter(series, 7);
    for (int t = 0; t < 20; ++t) {
        const int lo = std::max(0, t - 3), hi = std::min(19, t + 3);
        for (int c = 0; c < 5; ++c) {
            std::vector<double> window;
            for (int r = lo; r <= hi; ++r) window.push_back(series(r, c));
            std::sort(window.begin(), window.end());
            CHECK(got(t, c) == window[(window.size() - 1) / 2]);
        }
    }

    CHECK_THROWS_AS(median_filter(constant, 4), InputError);
}

TEST_CASE("classify_segment boundary is strict") {
    std::vector<VecX> same(5, VecX::Zero(3));
    CHECK(classify_segment(same, 0.05) == SegmentClass::static_segment);

    std::vector<VecX> stepping;
    for (int t = 0; t < 5; ++t) stepping.push_back(VecX::Constant(3, double(t)));
    CHECK(classify_segment(stepping, 0.05) == SegmentClass::dynamic_segment);

    // mean motion exactly at the threshold counts as dynamic
    std::vector<VecX> boundary;
    for (int t = 0; t < 3; ++t) {
        VecX v = VecX::Zero(1);
        v[0] = 0.05 * t;
        boundary.push_back(v);
    }
    CHECK(classify_segment(boundary, 0.05) == SegmentClass::dynamic_segment);
}

TEST_CASE("compute_anchor element-wise medians") {
    MatX same = MatX::Constant(6, 4, 0.7);
    CHECK((compute_anchor(same) - VecX::Constant(4, 0.7)).norm() == 0.0);

    MatX column(3, 1);
    column << 0.3, 0.1, 0.2;
    CHECK(compute_anchor(column)[0] == 0.2);

    MatX even(4, 1);
    even << 4.0, 1.0, 3.0, 2.0;
    CHECK(compute_anchor(even)[0] == 2.0);  // lower middle
}

TEST_CASE("element-wise anchor approximates the geodesic L1 median") {
    std::mt19937_64 rng(19);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> mag(0.0, 0.25);
    int ok = 0;
    const int trials = 60;
    for (int trial = 0; trial < trials; ++trial) {
        Vec3 base_axis(gauss(rng), gauss(rng), gauss(rng));
        base_axis.normalize();
        const Vec3 base = std::uniform_real_distribution<double>(0.2, 1.8)(rng) * base_axis;
        const Mat3 R_base = aa_to_matrix(base);

        MatX rows(48, 3);
        std::vector<Mat3> samples;
        for (int i = 0; i < 48; ++i) {
            Vec3 d(gauss(rng), gauss(rng), gauss(rng));
            d.normalize();
            d *= mag(rng);
            const Mat3 R = R_base * aa_to_matrix(d);
            samples.push_back(R);
            rows.row(i) = matrix_to_aa(R).transpose();
        }
        const Vec3 anchor = compute_anchor(rows).head<3>();
        const Mat3 oracle = tu::geodesic_l1_median(samples);
        if (matrix_to_aa(aa_to_matrix(anchor).transpose() * oracle).norm() < 0.05) ++ok;
    }
    CHECK(ok >= trials - 1);
}

TEST_CASE("pose_lock_step fixed point and limits") {
    const VecX v = VecX::Constant(3, 0.4);
    CHECK((pose_lock_step(v, v, v, 0.01, 0.005) - v).norm() < 1e-15);

    const VecX pred = VecX::Constant(3, 1.0);
    const VecX anchor = VecX::Constant(3, -1.0);
    CHECK((pose_lock_step(v, pred, anchor, 1.0, 0.005) - pred).norm() == 0.0);
    CHECK((pose_lock_step(v, pred, anchor, 0.0, 1.0) - anchor).norm() == 0.0);
}

TEST_CASE("pose_lock_step converges to the closed-form stationary point") {
    const double alpha = 0.05, alpha_a = 0.01;
    const double pred_value = 1.0, anchor_value = -0.5;
    const VecX pred = VecX::Constant(2, pred_value);
    const VecX anchor = VecX::Constant(2, anchor_value);
    VecX x = VecX::Constant(2, 0.3);
    for (int i = 0; i < 4000; ++i) x = pose_lock_step(x, pred, anchor, alpha, alpha_a);
    const double limit = (alpha * pred_value + (1.0 - alpha) * alpha_a * anchor_value) /
                         (alpha + (1.0 - alpha) * alpha_a);
    CHECK(std::abs(x[0] - limit) < 1e-9);
    // the limit sits on the segment between prediction and anchor
    CHECK(limit < pred_value);
    CHECK(limit > anchor_value);
}

TEST_CASE("interpolate_gaps midpoint, hold rule and rotation blend") {
    std::vector<FrameRecord> frames;
    FrameRecord a = tu::make_frame(0, PoseParams::zeros(1), ShapeParams{VecX::Zero(1), 1.0},
                                   GlobalPlacement{Vec3::Zero(), Vec3(0, 0, 1)});
    FrameRecord gap;
    gap.index = 1;
    gap.valid = false;
    FrameRecord b = tu::make_frame(2, PoseParams::zeros(1), ShapeParams{VecX::Zero(1), 1.0},
                                   GlobalPlacement{Vec3(0, 0, kPi / 2), Vec3(0, 0, 3)});
    frames = {a, gap, b};
    const auto filled = interpolate_gaps(frames);
    CHECK(filled[1].valid);
    CHECK((filled[1].placement.translation - Vec3(0, 0, 2)).norm() < 1e-12);
    CHECK((filled[1].placement.rotation - Vec3(0, 0, kPi / 4)).norm() < 1e-9);

    // leading gap copies the first valid frame
    std::vector<FrameRecord> lead = {gap, a};
    lead[0].index = 0;
    lead[1].index = 1;
    const auto held = interpolate_gaps(lead);
    CHECK(held[0].valid);
    CHECK((held[0].placement.translation - a.placement.translation).norm() == 0.0);

    std::vector<FrameRecord> none = {gap};
    CHECK_THROWS_AS(interpolate_gaps(none), InputError);
}

TEST_CASE("run_stabilizer is the identity on constant input in every mode") {
    const auto frames = constant_frames(40);
    for (StabilizerMode mode : {StabilizerMode::outlier_only, StabilizerMode::outlier_smooth,
                                StabilizerMode::outlier_smooth_lock, StabilizerMode::lock_direct}) {
        const auto out = run_stabilizer(frames, small_config(), mode);
        REQUIRE(out.size() == frames.size());
        for (std::size_t t = 0; t < out.size(); ++t) {
            CHECK((out[t].pose.joint_rotations - frames[t].pose.joint_rotations).cwiseAbs().maxCoeff() <
                  1e-9);
            CHECK((out[t].placement.rotation - frames[t].placement.rotation).norm() < 1e-9);
            CHECK((out[t].placement.translation - frames[t].placement.translation).norm() < 1e-9);
            CHECK((out[t].shape.beta - frames[t].shape.beta).norm() < 1e-9);
        }
    }
    CHECK_THROWS_AS(run_stabilizer(std::vector<FrameRecord>{}, small_config(),
                                   StabilizerMode::outlier_only),
                    InputError);
}

TEST_CASE("outlier frames are replaced by the last accepted value in mode B") {
    auto frames = constant_frames(30);
    std::mt19937_64 rng(7);
    std::vector<int> outliers = {5, 11, 19};
    for (int t : outliers)
        frames[std::size_t(t)].pose.joint_rotations += tu::random_vec(rng, 12, 1.0).normalized() * 1.5;

    StabilizerTrace trace;
    const auto out =
        run_stabilizer(frames, small_config(), StabilizerMode::outlier_only, std::nullopt, &trace);
    for (int t : outliers) {
        CHECK(trace.frames[std::size_t(t)].rejected_theta);
        CHECK((out[std::size_t(t)].pose.joint_rotations -
               frames[std::size_t(t - 1)].pose.joint_rotations)
                  .norm() < 1e-12);
    }
    CHECK_FALSE(trace.frames[4].rejected_theta);
}

TEST_CASE("rejection recovery moves toward the live prediction") {
    StabilizerConfig cfg = small_config();
    cfg.n_max = 4;
    auto frames = constant_frames(30);
    const VecX jump = VecX::Constant(12, 2.0);
    for (std::size_t t = 10; t < frames.size(); ++t) frames[t].pose.joint_rotations = jump;

    for (StabilizerMode mode : {StabilizerMode::outlier_only, StabilizerMode::lock_direct}) {
        const auto out = run_stabilizer(frames, cfg, mode);
        const double hold_distance = (frames[9].pose.joint_rotations - jump).norm();
        // frames 10..13 hold, frame 14 force-accepts
        CHECK((out[13].pose.joint_rotations - jump).norm() == doctest::Approx(hold_distance));
        CHECK((out[14].pose.joint_rotations - jump).norm() < hold_distance);
    }
}

TEST_CASE("outputs stay in the per-dimension hull of accepted values and anchor") {
    StabilizerConfig cfg = small_config();
    cfg.warmup = 8;
    std::mt19937_64 rng(23);
    auto frames = constant_frames(60);
    for (std::size_t t = 0; t < frames.size(); ++t)
        frames[t].pose.joint_rotations += 0.05 * tu::random_vec(rng, 12, 1.0);

    for (StabilizerMode mode : {StabilizerMode::outlier_smooth, StabilizerMode::outlier_smooth_lock,
                                StabilizerMode::lock_direct}) {
        // replay the rejection gate to recover the accepted stream
        StabilizerState replay;
        replay.config = cfg;
        VecX lo = VecX::Constant(12, std::numeric_limits<double>::infinity());
        VecX hi = -lo;
        std::vector<std::pair<VecX, VecX>> bounds;
        MatX accepted(frames.size(), 12);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            accepted.row(Eigen::Index(t)) =
                reject_outlier(replay, ParamGroup::theta, frames[t].pose.joint_rotations).accepted;
            lo = lo.cwiseMin(VecX(accepted.row(Eigen::Index(t))));
            hi = hi.cwiseMax(VecX(accepted.row(Eigen::Index(t))));
            bounds.emplace_back(lo, hi);
        }
        const auto out = run_stabilizer(frames, cfg, mode);
        for (std::size_t t = 0; t < out.size(); ++t) {
            const VecX& v = out[t].pose.joint_rotations;
            CHECK((v.array() >= bounds[t].first.array() - 1e-9).all());
            CHECK((v.array() <= bounds[t].second.array() + 1e-9).all());
        }
    }
}

TEST_CASE("gap interpolation inside the stream matches neighbors") {
    auto frames = constant_frames(25);
    for (std::size_t t = 8; t <= 10; ++t) {
        frames[t].valid = false;
        frames[t].pose = PoseParams{};
        frames[t].shape = ShapeParams{};
        frames[t].placement = GlobalPlacement{};
    }
    frames[12].placement.translation = Vec3(0.05, 0, 2);
    const auto out = run_stabilizer(frames, small_config(), StabilizerMode::outlier_only);
    REQUIRE(out.size() == frames.size());
    for (std::size_t t = 8; t <= 10; ++t) {
        CHECK(out[t].valid);
        CHECK((out[t].pose.joint_rotations - frames[0].pose.joint_rotations).norm() < 1e-12);
    }
}

TEST_CASE("batch processing is byte-identical to single-batch processing") {
    std::mt19937_64 rng(41);
    auto frames = constant_frames(80);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        frames[t].pose.joint_rotations += 0.03 * tu::random_vec(rng, 12, 1.0);
        frames[t].placement.translation += 0.01 * Vec3(tu::random_vec(rng, 3, 1.0));
        if (t % 17 == 5) frames[t].pose.joint_rotations += VecX::Constant(12, 1.0);
        if (t % 23 == 7) {
            frames[t].valid = false;
            frames[t].pose = PoseParams{};
            frames[t].shape = ShapeParams{};
            frames[t].placement = GlobalPlacement{};
        }
    }

    StabilizerConfig cfg = small_config();
    std::uniform_int_distribution<std::size_t> split_dist(1, frames.size() - 1);
    for (StabilizerMode mode : {StabilizerMode::outlier_only, StabilizerMode::outlier_smooth,
                                StabilizerMode::outlier_smooth_lock, StabilizerMode::lock_direct}) {
        const auto whole = run_stabilizer(frames, cfg, mode);
        for (int trial = 0; trial < 8; ++trial) {
            const std::size_t split = split_dist(rng);
            Stabilizer stab(cfg, mode);
            auto part1 = stab.process({frames.data(), split});
            auto part2 = stab.process({frames.data() + split, frames.size() - split});
            auto tail = stab.finish();
            std::vector<FrameRecord> combined;
            combined.insert(combined.end(), part1.begin(), part1.end());
            combined.insert(combined.end(), part2.begin(), part2.end());
            combined.insert(combined.end(), tail.begin(), tail.end());
            std::sort(combined.begin(), combined.end(),
                      [](const FrameRecord& a, const FrameRecord& b) { return a.index < b.index; });
            CHECK(frame_records_to_string(whole) == frame_records_to_string(combined));
        }
    }
}

TEST_CASE("anchor resets when segment motion exceeds the reset threshold") {
    StabilizerConfig cfg = small_config();
    cfg.warmup = 6;
    cfg.motion_reset = 0.3;
    auto frames = constant_frames(60);
    // sweep the pose smoothly past the reset threshold, then settle at a new value
    for (std::size_t t = 20; t < frames.size(); ++t)
        frames[t].pose.joint_rotations.array() += 0.12 * double(std::min<std::size_t>(t, 35) - 19);

    Stabilizer stab(cfg, StabilizerMode::lock_direct);
    stab.process(frames);
    // the anchor must have been re-evaluated from post-sweep frames
    const StabilizerState& st = stab.state();
    REQUIRE(st.anchor.has_value());
    CHECK((st.anchor->head<1>()[0]) > frames[0].pose.joint_rotations[0] + 0.5);
}
