#include <chrono>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "stab4d/pipeline.hpp"
#include "stab4d/synth_gen.hpp"

namespace {

using namespace stab4d;

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

ScenarioSpec load_spec(const std::string& path) {
    if (path.empty()) return ScenarioSpec{};
    std::ifstream in(path);
    if (!in) throw InputError("cannot open scenario spec: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw InputError("scenario parse error: " + std::string(e.what()));
    }
    return ScenarioSpec::from_json(doc);
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir, long long seed_override) {
    ScenarioSpec spec = load_spec(spec_path);
    if (seed_override >= 0) spec.seed = std::uint64_t(seed_override);
    const BodyModel model = make_procedural_body();
    const BundleSummary summary = generate_scenario(spec, model, out_dir);
    std::cout << "bundle written to " << summary.dir.string() << "\n"
              << "  frames:    " << summary.n_frames << "\n"
              << "  jittered:  " << summary.jittered_count << "\n"
              << "  outliers:  " << summary.outlier_count << "\n"
              << "  dropouts:  " << summary.dropout_count << "\n"
              << "  occluded:  " << summary.occluded_count << "\n";
    return 0;
}

int cmd_run(const std::string& bundle_dir, const std::string& preset_name,
            const std::string& config_path, const std::string& frames_override,
            const std::string& out_dir) {
    const Preset preset = preset_from_string(preset_name);
    PipelineConfig config;
    if (!config_path.empty()) config = read_config_file(config_path);

    const Bundle bundle = load_bundle(bundle_dir);
    const std::vector<FrameRecord> frames =
        frames_override.empty() ? bundle.pred_frames : read_frame_records(frames_override);
    const std::vector<SilhouetteMask> masks = load_masks(bundle.dir, frames, bundle.K);

    const auto t0 = std::chrono::steady_clock::now();
    const PipelineResult result = run_pipeline(frames, masks, bundle.model, bundle.K, preset, config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::filesystem::create_directories(out_dir);
    write_frame_records(std::filesystem::path(out_dir) / "corrected_frames.jsonl", result.frames);
    nlohmann::json report = result.diagnostics.to_json();
    report["runtime_seconds"] = seconds;
    std::ofstream rep(std::filesystem::path(out_dir) / "fit_report.json");
    if (!rep) throw InputError("cannot write fit_report.json");
    rep << report.dump(2) << "\n";

    std::cout << "preset " << preset_name << ": " << result.frames.size() << " frames corrected, "
              << result.diagnostics.fallback_frames.size() << " rigid-fitted, pool size "
              << result.diagnostics.pool_size << ", " << seconds << " s\n";
    return 0;
}

int cmd_eval(const std::string& corrected_path, const std::string& bundle_dir, int lag,
             const std::string& out_dir) {
    const Bundle bundle = load_bundle(bundle_dir);
    const std::vector<FrameRecord> corrected = read_frame_records(corrected_path);
    if (corrected.size() != bundle.gt_frames.size())
        throw InputError("eval: corrected frame count does not match the bundle");

    // evaluation is against the ground-truth masks of the bundle
    const std::vector<SilhouetteMask> masks = load_masks(bundle.dir, bundle.gt_frames, bundle.K);

    std::vector<Points> gt_vertices;
    const std::filesystem::path vert_path = bundle.dir / "gt_vertices.f32";
    const bool have_gt = std::filesystem::exists(vert_path);
    if (have_gt) gt_vertices = read_gt_vertices(vert_path);

    const MetricsReport report = compute_metrics(corrected, masks, bundle.model, bundle.K, lag,
                                                 have_gt ? &gt_vertices : nullptr);

    std::filesystem::create_directories(out_dir);
    std::ofstream metrics(std::filesystem::path(out_dir) / "metrics.json");
    if (!metrics) throw InputError("cannot write metrics.json");
    metrics << report.to_json().dump(2) << "\n";
    report.write_csv(std::filesystem::path(out_dir) / "per_frame.csv");

    std::cout << "mean IoU " << report.mean_iou << ", >0.6: " << report.pct_above_0_6
              << "%, <0.3: " << report.pct_below_0_3 << "%, d_mesh " << report.delta_mesh
              << " m, d_pose " << report.delta_pose << " rad, cv_iou(" << lag << ") "
              << report.cv_iou;
    if (report.pa_pve) std::cout << ", pa_pve " << *report.pa_pve << " mm";
    std::cout << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stab4d: stabilizes per-frame body-mesh predictions of a static subject"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, bundle_dir, preset = "F", config_path, corrected_path,
                frames_override;
    long long seed_override = -1;
    int lag = 20;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic scenario bundle");
    gen->add_option("--spec", spec_path, "scenario spec JSON (defaults used when omitted)");
    gen->add_option("--out", out_dir, "output bundle directory")->required();
    gen->add_option("--seed", seed_override, "override the scenario seed");

    CLI::App* run = app.add_subcommand("run", "run a pipeline preset over a bundle");
    run->add_option("--bundle", bundle_dir, "bundle directory")->required();
    run->add_option("--preset", preset, "pipeline preset A..F")->required();
    run->add_option("--config", config_path, "config JSON overriding defaults");
    run->add_option("--frames", frames_override, "frame records JSONL overriding the bundle predictions");
    run->add_option("--out", out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate corrected frames against a bundle");
    eval->add_option("--corrected", corrected_path, "corrected frame records JSONL")->required();
    eval->add_option("--bundle", bundle_dir, "bundle directory")->required();
    eval->add_option("--lag", lag, "cross-view lag in frames");
    eval->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }

    try {
        if (gen->parsed()) return cmd_gen(spec_path, out_dir, seed_override);
        if (run->parsed()) return cmd_run(bundle_dir, preset, config_path, frames_override, out_dir);
        if (eval->parsed()) return cmd_eval(corrected_path, bundle_dir, lag, out_dir);
    } catch (const stab4d::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const stab4d::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kExitNumerical;
    }
    return 0;
}
