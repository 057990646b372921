#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "sprout/config.hpp"
#include "sprout/fixtures.hpp"
#include "sprout/pipeline.hpp"

namespace fs = std::filesystem;
using namespace sprout;

namespace {

void print_mean(const pipeline::DatasetSummary& s) {
    if (!s.mean) return;
    std::printf("mean over %zu image(s): AJI %.4f  DQ %.4f  SQ %.4f  PQ %.4f  Dice %.4f\n", s.mean->images, s.mean->aji,
                s.mean->dq, s.mean->sq, s.mean->pq, s.mean->dice);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Training-free nuclear instance segmentation"};
    app.require_subcommand(1);

    fs::path input, out, gt_dir, config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers, pre_resize;
    bool debug = false, allow_unconverged = false, require_gt = false;
    auto* run = app.add_subcommand("run", "Segment one image or a directory of PNG images");
    run->add_option("--input", input, "Image file or directory")->required();
    run->add_option("--out", out, "Output directory")->required();
    run->add_option("--gt", gt_dir, "Ground-truth label maps, matched by file stem");
    run->add_option("--config", config_path, "YAML configuration");
    run->add_option("--seed", seed, "Override the configured seed");
    run->add_option("--workers", workers, "Images processed in parallel");
    run->add_option("--pre-resize", pre_resize, "Lanczos-3 resize of the longer side before processing");
    run->add_flag("--debug-activations", debug, "Also write per-class activation tensors");
    run->add_flag("--allow-unconverged", allow_unconverged, "Accept transport plans that hit max_iters");
    run->add_flag("--require-gt", require_gt, "Fail when an image has no ground truth");

    fs::path pred_dir, eval_gt, report;
    auto* eval = app.add_subcommand("eval", "Score predicted label maps against ground truth");
    eval->add_option("--pred", pred_dir, "Prediction directory")->required();
    eval->add_option("--gt", eval_gt, "Ground-truth directory")->required();
    eval->add_option("--out", report, "Report JSON path")->required();

    fs::path spec_path, fixtures_out;
    std::uint64_t fixtures_seed = 0;
    auto* fixtures = app.add_subcommand("fixtures", "Render synthetic H&E tiles with instance ground truth");
    fixtures->add_option("--spec", spec_path, "Fixture spec (YAML)")->required();
    fixtures->add_option("--out", fixtures_out, "Output directory")->required();
    fixtures->add_option("--seed", fixtures_seed, "Base seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*run) {
            auto cfg = config_path.empty() ? config::PipelineConfig{} : config::load(config_path);
            if (seed) cfg.seed = *seed;
            if (workers) cfg.workers = *workers;
            if (pre_resize) cfg.pre_resize = *pre_resize;
            if (debug) cfg.debug_activations = true;
            if (allow_unconverged) cfg.prompting.allow_unconverged = true;
            if (require_gt) cfg.require_gt = true;
            cfg.validate();
            const auto summary = pipeline::run_dataset(
                input, gt_dir.empty() ? std::nullopt : std::optional<fs::path>(gt_dir), cfg, out);
            for (const auto& r : summary.images) std::printf("%s: %zu instances\n", r.stem.c_str(), r.instances);
            print_mean(summary);
        } else if (*eval) {
            const auto summary = pipeline::evaluate_dirs(pred_dir, eval_gt);
            if (report.has_parent_path()) fs::create_directories(report.parent_path());
            std::ofstream(report) << summary.to_json().dump(2) << "\n";
            print_mean(summary);
        } else if (*fixtures) {
            const auto spec = fixtures::load_spec(spec_path);
            fixtures::generate(spec, fixtures_seed, fixtures_out, stain::StainMatrix::ruifrok_he());
            std::printf("wrote %d fixture(s) to %s\n", spec.images, fixtures_out.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
