#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>

#include "dppn/explain.hpp"
#include "dppn/gradcheck.hpp"
#include "dppn/train.hpp"

namespace fs = std::filesystem;
using namespace dppn;

namespace {

int log_level() {
    static const int level = [] {
        const char* env = std::getenv("DPPN_LOG");
        if (!env) return 1;
        if (std::strcmp(env, "quiet") == 0) return 0;
        if (std::strcmp(env, "debug") == 0) return 2;
        return 1;
    }();
    return level;
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
    if (log_level() >= 1) {
        std::fprintf(stderr, fmt, args...);
        std::fprintf(stderr, "\n");
    }
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
    if (log_level() >= 2) {
        std::fprintf(stderr, fmt, args...);
        std::fprintf(stderr, "\n");
    }
}

Dataset load_and_check(const std::string& manifest, const RunConfig& cfg,
                       bool need_both_splits) {
    Dataset ds = load_dataset(manifest);
    if (ds.manifest.image_size != cfg.image_size)
        throw std::invalid_argument("dataset image size " +
                                    std::to_string(ds.manifest.image_size) +
                                    " does not match config image_size " +
                                    std::to_string(cfg.image_size));
    if (need_both_splits &&
        (ds.split_indices("train").empty() || ds.split_indices("test").empty()))
        throw std::invalid_argument("train runs need non-empty train and test splits");
    return ds;
}

int cmd_gen_data(const std::string& out_dir, const GenDataParams& params) {
    const DatasetManifest manifest = gen_data(out_dir, params);
    log_info("wrote %zu images (%d classes) under %s", manifest.entries.size(),
             manifest.num_classes, out_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_path, long seed_override) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : parse_config_file(config_path);
    if (seed_override >= 0)
        cfg.seed = static_cast<std::uint32_t>(seed_override);

    const Dataset dataset = load_and_check(manifest_path, cfg, true);
    if (cfg.num_classes == 0)
        cfg.num_classes = dataset.manifest.num_classes;
    else if (cfg.num_classes != dataset.manifest.num_classes)
        throw std::invalid_argument("config num_classes does not match the manifest");
    validate_config(cfg);

    Model model = init_model(cfg, cfg.seed);
    log_info("training: %d classes, %d prototypes, latent %dx%d", cfg.num_classes,
             model.num_prototypes(), model.latent_h(), model.latent_w());

    const LossWeights weights = weights_from_config(cfg);
    const std::vector<EpochLog> log = run_training(model, dataset, weights);
    for (const EpochLog& e : log)
        log_debug("epoch %d [%s] total=%.5f ce=%.5f sep=%.5f clst=%.5f ortho=%.5f", e.epoch,
                  e.phase.c_str(), e.losses.total, e.losses.ce_margin, e.losses.sep,
                  e.losses.clst, e.losses.ortho);

    save_checkpoint(out_path, model);

    std::ofstream metrics(out_path + ".metrics.csv");
    metrics << "epoch,phase,ce_margin,sep,clst,ortho,total\n";
    char buf[200];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch,
                      e.phase.c_str(), e.losses.ce_margin, e.losses.sep, e.losses.clst,
                      e.losses.ortho, e.losses.total);
        metrics << buf;
    }
    log_info("checkpoint written to %s", out_path.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, const std::string& out_csv) {
    const Model model = load_checkpoint(checkpoint);
    const Dataset dataset = load_and_check(manifest_path, model.cfg, false);
    const EvalResult result = evaluate(model, dataset, split);

    if (!out_csv.empty()) {
        std::ofstream out(out_csv);
        if (!out)
            throw std::runtime_error("cannot open " + out_csv + " for writing");
        out << "image,label,prediction,top_score\n";
        char buf[400];
        for (std::size_t i = 0; i < result.image_ids.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%s,%d,%d,%.9g\n",
                          dataset.manifest.entries[result.image_ids[i]].path.c_str(),
                          result.labels[i], result.predictions[i],
                          static_cast<double>(result.top_scores[i]));
            out << buf;
        }
    }
    std::printf("accuracy %.4f (%zu images, split %s)\n", result.accuracy,
                result.image_ids.size(), split.c_str());
    return 0;
}

void write_overlay(const PpmImage& base, const std::vector<PartBox>& boxes,
                   const std::string& stem) {
    PpmImage img = base;
    draw_part_boxes(img, boxes);
    write_ppm(stem + ".ppm", img);
    std::ofstream sidecar(stem + ".txt");
    sidecar << format_box_sidecar(boxes);
}

int cmd_explain(const std::string& checkpoint, const std::string& manifest_path,
                const std::string& image_path, const std::string& mode, int top_k,
                int proto_id, const std::string& split, const std::string& out_dir) {
    const Model model = load_checkpoint(checkpoint);
    const Dataset dataset = load_and_check(manifest_path, model.cfg, false);

    PpmImage query;
    Tensor4 query_tensor;
    if (mode == "reasoning" || mode == "local") {
        if (image_path.empty())
            throw std::invalid_argument("mode=" + mode + " requires --image");
        query = read_ppm(image_path);
        if (query.width != model.cfg.image_size || query.height != model.cfg.image_size)
            throw std::invalid_argument("query image size does not match the model");
        Dataset probe;
        probe.manifest.image_size = query.width;
        probe.manifest.entries.push_back({image_path, 0, "test"});
        probe.images.push_back(query);
        query_tensor = probe.batch({0}, model.cfg.pixel_mean, model.cfg.pixel_std);
    }
    fs::create_directories(out_dir);

    if (mode == "reasoning") {
        const ReasoningReport report = reasoning_report(model, query_tensor);
        std::ofstream out((fs::path(out_dir) / "report.txt").string());
        out << format_reasoning_report(model, report);
        for (int k = 0; k < model.num_prototypes(); ++k) {
            if (model.proto_class(k) != report.predicted) continue;
            const std::vector<PartBox> boxes = visualize_prototype(model, query_tensor, k);
            write_overlay(query, boxes,
                          (fs::path(out_dir) / ("overlay_proto" + std::to_string(k))).string());
        }
        log_info("reasoning report for predicted class %d written to %s", report.predicted,
                 out_dir.c_str());
        return 0;
    }
    if (mode == "local") {
        const std::vector<RankedPrototype> ranked = local_analysis(model, query_tensor, top_k);
        std::ofstream out((fs::path(out_dir) / "local.txt").string());
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            const RankedPrototype& rp = ranked[i];
            out << "rank=" << i << " proto=" << model.proto_class(rp.proto_index) << "/"
                << model.prototypes[rp.proto_index].index_within_class
                << " score=" << rp.score << "\n";
            write_overlay(query, rp.boxes,
                          (fs::path(out_dir) / ("local_rank" + std::to_string(i) + "_query"))
                              .string());
            const std::vector<PartBox> src_boxes = provenance_boxes(model, rp.proto_index);
            write_overlay(dataset.images[src_boxes.front().source_image], src_boxes,
                          (fs::path(out_dir) / ("local_rank" + std::to_string(i) + "_source"))
                              .string());
        }
        return 0;
    }
    if (mode == "global") {
        if (proto_id < 0)
            throw std::invalid_argument("mode=global requires --proto-id");
        const std::vector<RankedImage> ranked =
            global_analysis(model, dataset, proto_id, split, top_k);
        std::ofstream out((fs::path(out_dir) / "global.txt").string());
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            const RankedImage& ri = ranked[i];
            out << "rank=" << i << " image="
                << dataset.manifest.entries[ri.image_id].path << " score=" << ri.score << "\n";
            write_overlay(dataset.images[ri.image_id], ri.boxes,
                          (fs::path(out_dir) / ("global_rank" + std::to_string(i))).string());
        }
        return 0;
    }
    throw std::invalid_argument("unknown explain mode: " + mode);
}

int cmd_grad_check(std::uint32_t seed) {
    const std::vector<GradCheckEntry> entries = run_grad_checks(seed);
    std::printf("%-24s %-12s %s\n", "group", "max rel err", "status");
    for (const GradCheckEntry& e : entries)
        std::printf("%-24s %-12.3e %s\n", e.group.c_str(), e.max_err * 1e-3,
                    e.pass ? "ok" : "FAIL");
    return all_groups_pass(entries) ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable prototypical part network"};
    app.require_subcommand(1);

    int jobs = 1;
    app.add_option("--jobs", jobs, "worker threads for batch-parallel kernels")
        ->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic pose-jittered dataset");
    std::string gen_out;
    GenDataParams gen_params;
    long gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--classes", gen_params.classes, "number of classes");
    gen->add_option("--per-class", gen_params.per_class_train, "training images per class");
    gen->add_option("--per-class-test", gen_params.per_class_test, "test images per class");
    gen->add_option("--size", gen_params.image_size, "image side length");
    gen->add_option("--jitter", gen_params.pose_jitter, "per-part positional jitter, pixels");
    gen->add_option("--seed", gen_seed, "rng seed");

    auto* train = app.add_subcommand("train", "run the full three-stage training pipeline");
    std::string train_config, train_manifest, train_out;
    long train_seed = -1;
    train->add_option("--config", train_config, "run configuration file");
    train->add_option("--manifest", train_manifest, "dataset manifest csv")->required();
    train->add_option("--out", train_out, "checkpoint output path")->required();
    train->add_option("--seed", train_seed, "seed override");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--manifest", eval_manifest, "dataset manifest csv")->required();
    eval->add_option("--split", eval_split, "train or test");
    eval->add_option("--out", eval_out, "per-image csv output");

    auto* explain = app.add_subcommand("explain", "export explanations for a checkpoint");
    std::string ex_ckpt, ex_manifest, ex_image, ex_mode = "reasoning", ex_split = "train",
                ex_out;
    int ex_top_k = 2, ex_proto = -1;
    explain->add_option("--checkpoint", ex_ckpt, "checkpoint path")->required();
    explain->add_option("--manifest", ex_manifest, "dataset manifest csv")->required();
    explain->add_option("--image", ex_image, "query image (ppm)");
    explain->add_option("--mode", ex_mode, "reasoning | local | global");
    explain->add_option("--top-k", ex_top_k, "ranked entries to emit");
    explain->add_option("--proto-id", ex_proto, "prototype index (global mode)");
    explain->add_option("--split", ex_split, "dataset split (global mode)");
    explain->add_option("--out", ex_out, "output directory")->required();

    auto* gradcheck = app.add_subcommand("grad-check", "finite-difference gradient suite");
    long gc_seed = 0;
    gradcheck->add_option("--seed", gc_seed, "rng seed");

    CLI11_PARSE(app, argc, argv);
    omp_set_num_threads(jobs);

    try {
        if (gen->parsed()) {
            gen_params.seed = static_cast<std::uint32_t>(gen_seed);
            return cmd_gen_data(gen_out, gen_params);
        }
        if (train->parsed())
            return cmd_train(train_config, train_manifest, train_out, train_seed);
        if (eval->parsed())
            return cmd_eval(eval_ckpt, eval_manifest, eval_split, eval_out);
        if (explain->parsed())
            return cmd_explain(ex_ckpt, ex_manifest, ex_image, ex_mode, ex_top_k, ex_proto,
                               ex_split, ex_out);
        if (gradcheck->parsed())
            return cmd_grad_check(static_cast<std::uint32_t>(gc_seed));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
