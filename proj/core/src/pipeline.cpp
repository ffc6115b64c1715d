#include "capl/pipeline.hpp"

#include <fstream>

#include <json.hpp>

#include "capl/caplt_io.hpp"
#include "capl/threading.hpp"

namespace capl {

namespace {

/// Inference over a dataset, written as <id>_instances/<id>_classes pairs.
void predict_dataset(const TinyHoverNet& net, const Dataset& data,
                     const std::filesystem::path& out_dir, const PostprocessConfig& post,
                     std::size_t threads) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::pair<InstanceLabelMap, ClassLabelMap>> preds(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        preds[i] = predict_sample(net, data.samples[i].image, post);
    });
    for (std::size_t i = 0; i < data.size(); ++i) {
        write_caplt(out_dir / (data.ids[i] + "_instances.caplt"), preds[i].first);
        write_caplt(out_dir / (data.ids[i] + "_classes.caplt"), preds[i].second);
    }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    const auto& out = cfg.out_dir;
    std::filesystem::create_directories(out);

    Rng root(cfg.seed);
    const DomainSpec source_spec = DomainSpec::source_default();
    const DomainSpec target_spec = DomainSpec::target_default();

    const auto data_dir = out / "data";
    generate_dataset(data_dir / "source_train", source_spec, cfg.n_train, cfg.patch_size,
                     root.split(1).next_u64(), "train");
    generate_dataset(data_dir / "source_test", source_spec, cfg.n_test, cfg.patch_size,
                     root.split(2).next_u64(), "test");
    generate_dataset(data_dir / "target_train", target_spec, cfg.n_train, cfg.patch_size,
                     root.split(3).next_u64(), "train");
    generate_dataset(data_dir / "target_test", target_spec, cfg.n_test, cfg.patch_size,
                     root.split(4).next_u64(), "test");

    const Dataset source_train = load_dataset(data_dir / "source_train");
    const Dataset target_train = load_dataset(data_dir / "target_train");
    const Dataset target_test = load_dataset(data_dir / "target_test");

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.threads = cfg.threads;

    PipelineResult result;
    EvalOptions eval_opts;
    eval_opts.radius = cfg.match_radius;
    eval_opts.threads = cfg.threads;

    auto run_variant = [&](const std::string& name, const ModelState& state) {
        predict_dataset(state.net, target_test, out / "preds" / name, cfg.post, cfg.threads);
        auto eval = evaluate_dirs(out / "preds" / name, data_dir / "target_test", eval_opts);
        write_eval_outputs(out / "eval" / name, eval);
        result.rows.emplace_back(name, eval.aggregate);
    };

    const std::filesystem::path runs = out / "runs";
    std::filesystem::create_directories(runs);

    {
        auto r = train_stage1(source_train, target_train, tc, AdaptMode::none);
        save_checkpoint(runs / "source_only.ckpt", r.checkpoint);
        write_history_csv(runs / "source_only_history.csv", r.history);
        run_variant("source_only", r.state);
    }
    {
        auto r = train_stage1(source_train, target_train, tc, AdaptMode::class_agnostic);
        save_checkpoint(runs / "baseline.ckpt", r.checkpoint);
        write_history_csv(runs / "baseline_history.csv", r.history);
        run_variant("baseline", r.state);
    }

    auto stage1 = train_stage1(source_train, target_train, tc, AdaptMode::class_aware);
    save_checkpoint(runs / "class_aware.ckpt", stage1.checkpoint);
    write_history_csv(runs / "class_aware_history.csv", stage1.history);
    run_variant("class_aware", stage1.state);
    for (int c = 0; c < kNumClasses; ++c)
        result.learned_weights.push_back(stage1.state.weights.omega(std::size_t(c)));

    if (!cfg.skip_stage2) {
        // stage-1 predictions on target train become the pseudo labels
        const auto pseudo_dir = out / "pseudo";
        std::filesystem::create_directories(pseudo_dir);
        std::vector<PseudoLabelSet> pseudo(target_train.size());
        parallel_for(target_train.size(), cfg.threads, [&](std::size_t i) {
            const auto maps = stage1.state.net.forward(target_train.samples[i].image);
            const std::size_t plane = cfg.patch_size * cfg.patch_size;
            Tensor np_fg({cfg.patch_size, cfg.patch_size});
            for (std::size_t px = 0; px < plane; ++px) np_fg[px] = maps.np_prob[plane + px];
            const auto inst = extract_instances(np_fg, maps.hv, cfg.post);
            pseudo[i] = build_pseudo_labels(maps.hv, inst, cfg.pseudo_min_pixels);
            pseudo[i].image_id = target_train.ids[i];
        });
        for (const auto& pl : pseudo) save_pseudo_labels(pseudo_dir, pl);

        auto stage2 = train_stage2(stage1.state, target_train, pseudo, tc);
        save_checkpoint(runs / "stage2.ckpt", stage2.checkpoint);
        write_history_csv(runs / "stage2_history.csv", stage2.history);
        run_variant("stage2", stage2.state);
    }

    std::string table = MetricReport::table_header() + "\n";
    nlohmann::json cmp;
    for (const auto& [name, report] : result.rows) {
        table += report.table_row(name) + "\n";
        cmp[name] = nlohmann::json::parse(report.to_json());
    }
    result.comparison_table = table;
    {
        std::ofstream os(out / "comparison.txt");
        os << table;
    }
    {
        std::ofstream os(out / "comparison.json");
        os << cmp.dump(2) << '\n';
    }
    return result;
}

}  // namespace capl
