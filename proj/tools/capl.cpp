// capl: batch CLI for the capl-kit nuclei segmentation/adaptation library.
//
// Exit codes: 0 success, 1 verification failure, 2 bad input.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "capl/caplt_io.hpp"
#include "capl/dataset.hpp"
#include "capl/eval_runner.hpp"
#include "capl/gradcheck.hpp"
#include "capl/manifest.hpp"
#include "capl/pipeline.hpp"
#include "capl/pseudo_label.hpp"
#include "capl/threading.hpp"
#include "capl/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitBadInput = 2;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("CAPL_SEED")) return std::strtoull(env, nullptr, 10);
    return 42;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void emit_manifest(const std::string& command, const std::filesystem::path& out_dir,
                   std::uint64_t seed, const std::string& config_json,
                   std::vector<std::string> inputs, std::vector<std::string> outputs,
                   const Stopwatch& watch) {
    capl::RunManifest m;
    m.command = command;
    m.config_json = config_json;
    m.seed = seed;
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    m.duration_seconds = watch.seconds();
    capl::write_run_manifest(out_dir, m);
}

std::vector<capl::PseudoLabelSet> load_pseudo_for(const capl::Dataset& target,
                                                  const std::filesystem::path& pseudo_dir) {
    std::vector<capl::PseudoLabelSet> out;
    out.reserve(target.size());
    for (const auto& id : target.ids) out.push_back(capl::load_pseudo_labels(pseudo_dir, id));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capl: category-aware domain-adaptive nuclei segmentation toolkit"};
    app.require_subcommand(1);

    // ---- gen ----------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "Generate a synthetic two-domain dataset split");
    std::string gen_domain = "source", gen_split = "train", gen_out;
    std::size_t gen_n = 64, gen_size = 64;
    std::uint64_t gen_seed = default_seed();
    gen->add_option("--domain", gen_domain, "Domain to draw from: source|target")
        ->check(CLI::IsMember({"source", "target"}));
    gen->add_option("--n", gen_n, "Number of samples")->default_val(64);
    gen->add_option("--size", gen_size, "Patch size in pixels (>= 32)")->default_val(64);
    gen->add_option("--seed", gen_seed, "Dataset seed")->default_val(default_seed());
    gen->add_option("--split", gen_split, "Split tag recorded in the manifest")
        ->default_val("train");
    gen->add_option("--out", gen_out, "Output directory")->required();

    // ---- train-stage1 ---------------------------------------------------------
    auto* ts1 = app.add_subcommand("train-stage1",
                                   "Warm supervised epochs then adversarial adaptation");
    std::string ts1_source, ts1_target, ts1_out, ts1_adapt = "class_aware";
    capl::TrainConfig ts1_cfg;
    ts1_cfg.seed = default_seed();
    ts1->add_option("--source", ts1_source, "Labelled source dataset dir")->required();
    ts1->add_option("--target", ts1_target, "Unlabelled target dataset dir")->required();
    ts1->add_option("--out", ts1_out, "Output directory")->required();
    ts1->add_option("--adapt", ts1_adapt, "Adaptation mode: none|class_agnostic|class_aware")
        ->check(CLI::IsMember({"none", "class_agnostic", "class_aware"}))
        ->default_val("class_aware");
    ts1->add_option("--epochs-warm", ts1_cfg.warm_epochs, "Decoder-only warm epochs")
        ->default_val(5);
    ts1->add_option("--epochs-full", ts1_cfg.full_epochs, "Full adaptation epochs")
        ->default_val(25);
    ts1->add_option("--lr", ts1_cfg.lr, "Adam learning rate")->default_val(1e-4);
    ts1->add_option("--batch", ts1_cfg.batch_size, "Batch size")->default_val(4);
    ts1->add_option("--seed", ts1_cfg.seed, "Training seed")->default_val(default_seed());
    ts1->add_option("--lambda-grl", ts1_cfg.lambda_grl, "Gradient reversal strength")
        ->default_val(1.0);
    ts1->add_option("--threads", ts1_cfg.threads, "Worker threads (0 = all cores)")
        ->default_val(0);

    // ---- pseudo-label ---------------------------------------------------------
    auto* pl = app.add_subcommand("pseudo-label",
                                  "Extract nuclei-level HV prototypes from stage-1 predictions");
    std::string pl_ckpt, pl_target, pl_out;
    std::size_t pl_min_pixels = 3;
    capl::PostprocessConfig pl_post;
    std::size_t pl_threads = 0;
    pl->add_option("--ckpt", pl_ckpt, "Stage-1 checkpoint")->required();
    pl->add_option("--target", pl_target, "Target dataset dir")->required();
    pl->add_option("--out", pl_out, "Output directory")->required();
    pl->add_option("--min-pixels", pl_min_pixels, "Discard pseudo-instances below this size")
        ->default_val(3);
    pl->add_option("--np-threshold", pl_post.np_threshold, "Foreground probability threshold")
        ->default_val(0.5);
    pl->add_option("--energy-threshold", pl_post.energy_threshold, "Watershed marker threshold")
        ->default_val(0.4);
    pl->add_option("--threads", pl_threads, "Worker threads (0 = all cores)")->default_val(0);

    // ---- train-stage2 ---------------------------------------------------------
    auto* ts2 = app.add_subcommand("train-stage2",
                                   "Self-training of the HV branch on pseudo-labelled targets");
    std::string ts2_ckpt, ts2_target, ts2_pseudo, ts2_out;
    capl::TrainConfig ts2_cfg;
    ts2_cfg.seed = default_seed();
    ts2->add_option("--ckpt", ts2_ckpt, "Stage-1 checkpoint to initialize from")->required();
    ts2->add_option("--target", ts2_target, "Target dataset dir")->required();
    ts2->add_option("--pseudo", ts2_pseudo, "Pseudo-label dir from pseudo-label")->required();
    ts2->add_option("--out", ts2_out, "Output directory")->required();
    ts2->add_option("--epochs", ts2_cfg.stage2_epochs, "Stage-2 epochs")->default_val(20);
    ts2->add_option("--lr", ts2_cfg.lr, "Adam learning rate")->default_val(1e-4);
    ts2->add_option("--batch", ts2_cfg.batch_size, "Batch size")->default_val(4);
    ts2->add_option("--seed", ts2_cfg.seed, "Training seed")->default_val(default_seed());
    ts2->add_option("--threads", ts2_cfg.threads, "Worker threads (0 = all cores)")
        ->default_val(0);

    // ---- eval -------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Metric battery over prediction/ground-truth dirs");
    std::string ev_pred, ev_gt, ev_out;
    capl::EvalOptions ev_opts;
    ev->add_option("--pred", ev_pred, "Prediction dir with *_instances/_classes files")
        ->required();
    ev->add_option("--gt", ev_gt, "Ground-truth dir")->required();
    ev->add_option("--out", ev_out, "Output directory")->required();
    ev->add_option("--radius", ev_opts.radius, "Detection match radius in px")->default_val(6.0);
    ev->add_option("--threads", ev_opts.threads, "Worker threads (0 = all cores)")
        ->default_val(0);

    // ---- gradcheck ---------------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck",
                                  "Finite-difference verification of every loss gradient");
    capl::GradCheckOptions gc_opts;
    gc->add_option("--loss", gc_opts.losses,
                   "Check only these losses (ce dice mse hv adv_bce nc_ca stage1 lp)");
    gc->add_option("--seeds", gc_opts.seeds, "Random instances per loss")->default_val(100);
    gc->add_flag("--inject-dice-sign-bug", gc_opts.inject_dice_sign_bug,
                 "Test fixture: corrupt the Dice gradient so the check must fail")
        ->group("");  // hidden

    // ---- pipeline ------------------------------------------------------------------
    auto* pp = app.add_subcommand("pipeline",
                                  "gen -> train-stage1 -> pseudo-label -> train-stage2 -> eval");
    capl::PipelineConfig pp_cfg;
    pp_cfg.seed = default_seed();
    std::string pp_out;
    pp->add_option("--seed", pp_cfg.seed, "Experiment seed")->default_val(default_seed());
    pp->add_option("--out", pp_out, "Output directory")->required();
    pp->add_option("--n-train", pp_cfg.n_train, "Training samples per domain")->default_val(64);
    pp->add_option("--n-test", pp_cfg.n_test, "Test samples per domain")->default_val(32);
    pp->add_option("--size", pp_cfg.patch_size, "Patch size in pixels")->default_val(64);
    pp->add_option("--epochs-warm", pp_cfg.train.warm_epochs, "Decoder-only warm epochs")
        ->default_val(5);
    pp->add_option("--epochs-full", pp_cfg.train.full_epochs, "Full adaptation epochs")
        ->default_val(25);
    pp->add_option("--epochs-stage2", pp_cfg.train.stage2_epochs, "Stage-2 epochs")
        ->default_val(20);
    pp->add_option("--lr", pp_cfg.train.lr, "Adam learning rate")->default_val(1e-4);
    pp->add_option("--lambda-grl", pp_cfg.train.lambda_grl, "Gradient reversal strength")
        ->default_val(1.0);
    pp->add_option("--np-threshold", pp_cfg.post.np_threshold, "Foreground threshold")
        ->default_val(0.5);
    pp->add_option("--energy-threshold", pp_cfg.post.energy_threshold, "Marker threshold")
        ->default_val(0.4);
    pp->add_option("--radius", pp_cfg.match_radius, "Detection match radius in px")
        ->default_val(6.0);
    pp->add_flag("--skip-stage2", pp_cfg.skip_stage2, "Stop after stage-1 variants");
    pp->add_option("--threads", pp_cfg.threads, "Worker threads (0 = all cores)")
        ->default_val(0);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitBadInput;
    }

    try {
        Stopwatch watch;

        if (*gen) {
            const capl::DomainSpec spec = gen_domain == "source"
                                              ? capl::DomainSpec::source_default()
                                              : capl::DomainSpec::target_default();
            auto ids = capl::generate_dataset(gen_out, spec, gen_n, gen_size, gen_seed, gen_split);
            emit_manifest("gen", gen_out, gen_seed, capl::domain_spec_to_json(spec), {},
                          {gen_out}, watch);
            std::printf("generated %zu %s samples into %s\n", ids.size(), gen_domain.c_str(),
                        gen_out.c_str());
            return kExitOk;
        }

        if (*ts1) {
            ts1_cfg.validate();
            const auto mode = capl::adapt_mode_from_name(ts1_adapt);
            const auto source = capl::load_dataset(ts1_source);
            const auto target = capl::load_dataset(ts1_target);
            auto result = capl::train_stage1(source, target, ts1_cfg, mode);
            std::filesystem::create_directories(ts1_out);
            capl::save_checkpoint(std::filesystem::path(ts1_out) / "checkpoint.ckpt",
                                  result.checkpoint);
            capl::write_history_csv(std::filesystem::path(ts1_out) / "history.csv",
                                    result.history);
            emit_manifest("train-stage1", ts1_out, ts1_cfg.seed, ts1_cfg.to_json(),
                          {ts1_source, ts1_target}, {ts1_out}, watch);
            std::printf("stage-1 (%s) done: final L_F=%.4f L_dis=%.4f\n", ts1_adapt.c_str(),
                        result.history.back().l_f, result.history.back().l_dis);
            return kExitOk;
        }

        if (*pl) {
            const auto ckpt = capl::load_checkpoint(pl_ckpt);
            const auto state = capl::state_from_checkpoint(ckpt);
            const auto target = capl::load_dataset(pl_target);
            std::filesystem::create_directories(pl_out);
            std::vector<capl::PseudoLabelSet> sets(target.size());
            capl::parallel_for(target.size(), pl_threads, [&](std::size_t i) {
                const auto maps = state.net.forward(target.samples[i].image);
                const std::size_t h = target.samples[i].height();
                const std::size_t w = target.samples[i].width();
                capl::Tensor np_fg({h, w});
                for (std::size_t px = 0; px < h * w; ++px)
                    np_fg[px] = maps.np_prob[h * w + px];
                const auto inst = capl::extract_instances(np_fg, maps.hv, pl_post);
                sets[i] = capl::build_pseudo_labels(maps.hv, inst, pl_min_pixels);
                sets[i].image_id = target.ids[i];
            });
            std::size_t total = 0;
            for (const auto& s : sets) {
                capl::save_pseudo_labels(pl_out, s);
                total += s.prototypes.size();
            }
            emit_manifest("pseudo-label", pl_out, 0, "", {pl_ckpt, pl_target}, {pl_out}, watch);
            std::printf("wrote %zu pseudo-label sets (%zu prototypes) into %s\n", sets.size(),
                        total, pl_out.c_str());
            return kExitOk;
        }

        if (*ts2) {
            ts2_cfg.validate();
            const auto ckpt = capl::load_checkpoint(ts2_ckpt);
            const auto init = capl::state_from_checkpoint(ckpt);
            const auto target = capl::load_dataset(ts2_target);
            const auto pseudo = load_pseudo_for(target, ts2_pseudo);
            auto result = capl::train_stage2(init, target, pseudo, ts2_cfg);
            std::filesystem::create_directories(ts2_out);
            capl::save_checkpoint(std::filesystem::path(ts2_out) / "checkpoint.ckpt",
                                  result.checkpoint);
            capl::write_history_csv(std::filesystem::path(ts2_out) / "history.csv",
                                    result.history);
            emit_manifest("train-stage2", ts2_out, ts2_cfg.seed, ts2_cfg.to_json(),
                          {ts2_ckpt, ts2_target, ts2_pseudo}, {ts2_out}, watch);
            std::printf("stage-2 done: final L_p=%.6f\n", result.history.back().l_p);
            return kExitOk;
        }

        if (*ev) {
            auto result = capl::evaluate_dirs(ev_pred, ev_gt, ev_opts);
            if (!result.ok()) {
                std::fprintf(stderr, "eval: %zu ids missing from %s:\n",
                             result.missing_ids.size(), ev_pred.c_str());
                for (const auto& id : result.missing_ids)
                    std::fprintf(stderr, "  %s\n", id.c_str());
                return kExitBadInput;
            }
            capl::write_eval_outputs(ev_out, result);
            emit_manifest("eval", ev_out, 0, "", {ev_pred, ev_gt}, {ev_out}, watch);
            std::printf("%s\n%s\n", capl::MetricReport::table_header().c_str(),
                        result.aggregate.table_row("corpus").c_str());
            return kExitOk;
        }

        if (*gc) {
            const auto results = capl::run_gradcheck(gc_opts);
            for (const auto& r : results)
                std::printf("%-8s max_rel_err=%.3e  %s\n", r.loss.c_str(), r.max_rel_error,
                            r.pass ? "PASS" : "FAIL");
            return capl::gradcheck_all_passed(results) ? kExitOk : kExitVerificationFailure;
        }

        if (*pp) {
            pp_cfg.out_dir = pp_out;
            auto result = capl::run_pipeline(pp_cfg);
            nlohmann::json cfg_echo{{"n_train", pp_cfg.n_train},
                                    {"n_test", pp_cfg.n_test},
                                    {"patch_size", pp_cfg.patch_size},
                                    {"skip_stage2", pp_cfg.skip_stage2},
                                    {"train", nlohmann::json::parse(pp_cfg.train.to_json())}};
            emit_manifest("pipeline", pp_out, pp_cfg.seed, cfg_echo.dump(), {}, {pp_out}, watch);
            std::printf("%s", result.comparison_table.c_str());
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "capl: %s\n", e.what());
        return kExitBadInput;
    }
    return kExitBadInput;
}
