#include "capl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "capl/losses.hpp"
#include "capl/threading.hpp"

namespace capl {

const char* adapt_mode_name(AdaptMode mode) {
    switch (mode) {
        case AdaptMode::none: return "none";
        case AdaptMode::class_agnostic: return "class_agnostic";
        case AdaptMode::class_aware: return "class_aware";
    }
    return "?";
}

AdaptMode adapt_mode_from_name(const std::string& name) {
    if (name == "none") return AdaptMode::none;
    if (name == "class_agnostic") return AdaptMode::class_agnostic;
    if (name == "class_aware") return AdaptMode::class_aware;
    throw std::invalid_argument("unknown adapt mode: " + name);
}

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (full_epochs < 1 || stage2_epochs < 1)
        throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["lr"] = lr;
    j["warm_epochs"] = warm_epochs;
    j["full_epochs"] = full_epochs;
    j["stage2_epochs"] = stage2_epochs;
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["lambda_grl"] = lambda_grl;
    j["threads"] = threads;
    j["augment"] = augment;
    j["freeze_discriminators"] = freeze_discriminators;
    return j.dump();
}

ModelState ModelState::init(std::uint64_t seed) {
    Rng root(seed);
    ModelState ms;
    ms.net = TinyHoverNet(root.split(100));
    ms.class_discs.reserve(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c)
        ms.class_discs.emplace_back(TinyHoverNet::kDec, 16, root.split(200 + std::uint64_t(c)));
    ms.np_disc = PixelDiscriminator(TinyHoverNet::kDec, 16, root.split(300));
    ms.hv_disc = PixelDiscriminator(TinyHoverNet::kDec, 16, root.split(301));
    ms.nc_disc_global = PixelDiscriminator(TinyHoverNet::kDec, 16, root.split(302));
    ms.weights = LearnableClassWeights(kNumClasses);
    return ms;
}

namespace {

void push_disc_views(std::vector<Adam::View>& views, const std::string& prefix,
                     PixelDiscriminator& d) {
    views.push_back({prefix + ".w1", d.w1.data(), d.w1.size()});
    views.push_back({prefix + ".b1", d.b1.data(), d.b1.size()});
    views.push_back({prefix + ".w2", d.w2.data(), d.w2.size()});
    views.push_back({prefix + ".b2", d.b2.data(), d.b2.size()});
}

constexpr std::size_t kNetViews = 16;
constexpr std::size_t kViewsPerDisc = 4;

std::size_t class_disc_slot(int c) { return kNetViews + kViewsPerDisc * std::size_t(c); }
std::size_t np_disc_slot() { return kNetViews + kViewsPerDisc * kNumClasses; }
std::size_t hv_disc_slot() { return np_disc_slot() + kViewsPerDisc; }
std::size_t global_disc_slot() { return hv_disc_slot() + kViewsPerDisc; }
std::size_t weights_slot() { return global_disc_slot() + kViewsPerDisc; }
std::size_t total_views() { return weights_slot() + 1; }

}  // namespace

std::vector<Adam::View> ModelState::param_views() {
    std::vector<Adam::View> views;
    views.reserve(total_views());
    for (auto& p : net.params()) views.push_back({p.name, p.tensor->data(), p.tensor->size()});
    for (int c = 0; c < kNumClasses; ++c)
        push_disc_views(views, "disc_nc" + std::to_string(c + 1), class_discs[std::size_t(c)]);
    push_disc_views(views, "disc_np", np_disc);
    push_disc_views(views, "disc_hv", hv_disc);
    push_disc_views(views, "disc_nc_global", nc_disc_global);
    views.push_back({"adapt.s", weights.s.data(), weights.s.size()});
    return views;
}

Checkpoint make_checkpoint(ModelState& state, const Adam* adam, const TrainConfig& cfg,
                           const std::string& stage, AdaptMode mode) {
    Checkpoint ckpt;
    ckpt.stage = stage;
    ckpt.adapt_mode = adapt_mode_name(mode);
    ckpt.config_json = cfg.to_json();
    auto views = state.param_views();
    for (std::size_t i = 0; i < views.size(); ++i) {
        ckpt.tensors.emplace(views[i].name,
                             Tensor({views[i].n}, std::vector<double>(views[i].data,
                                                                      views[i].data + views[i].n)));
        if (adam) {
            ckpt.tensors.emplace("adam.m." + views[i].name, Tensor({views[i].n}, adam->moment1(i)));
            ckpt.tensors.emplace("adam.v." + views[i].name, Tensor({views[i].n}, adam->moment2(i)));
        }
    }
    if (adam) ckpt.adam_step = adam->step_count();
    return ckpt;
}

ModelState state_from_checkpoint(const Checkpoint& ckpt) {
    ModelState ms = ModelState::init(0);
    for (auto& view : ms.param_views()) {
        const Tensor& t = ckpt.require(view.name);
        if (t.size() != view.n)
            throw std::runtime_error("checkpoint: size mismatch for " + view.name);
        std::copy(t.data(), t.data() + t.size(), view.data);
    }
    return ms;
}

// ---- per-sample gradient machinery ----------------------------------------

namespace {

using Arena = std::vector<std::vector<double>>;

Arena make_arena(const std::vector<Adam::View>& views) {
    Arena a(views.size());
    for (std::size_t i = 0; i < views.size(); ++i) a[i].assign(views[i].n, 0.0);
    return a;
}

void zero_arena(Arena& a) {
    for (auto& v : a) std::fill(v.begin(), v.end(), 0.0);
}

void add_arena(Arena& dst, const Arena& src) {
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
}

void add_scaled(std::vector<double>& dst, const Tensor& src, double scale) {
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
}

void add_disc_grads(Arena& arena, std::size_t slot, const PixelDiscriminator::Grads& g,
                    double scale) {
    add_scaled(arena[slot], g.w1, scale);
    add_scaled(arena[slot + 1], g.b1, scale);
    add_scaled(arena[slot + 2], g.w2, scale);
    add_scaled(arena[slot + 3], g.b2, scale);
}

struct SampleLosses {
    double l_f = 0.0;
    double l_dis = 0.0;
};

/// One sample's contribution to the stage-1 objective: supervised L_F when
/// requested plus the adversarial terms of the chosen adaptation mode.
/// Supervised upstream gradients are scaled by sup_w, adversarial ones by
/// adv_w; feature-extractor gradients from adversarial terms are reversed
/// with lambda_grl. Masks default to the sample's own NC prediction.
SampleLosses combined_backward(const ModelState& ms, const SyntheticSample& s,
                               DomainLabel label, bool supervised, AdaptMode mode,
                               double lambda_grl, double sup_w, double adv_w, Arena& arena,
                               const std::vector<ClassMask>* fixed_masks = nullptr) {
    SampleLosses out;
    auto cache = ms.net.forward_cached(s.image);
    TinyHoverNet::UpstreamGrads up;

    if (supervised) {
        auto sup = supervised_total(cache.out.np_prob, s.np_gt, cache.out.hv, s.hv_gt,
                                    cache.out.nc_prob, s.classes_onehot());
        out.l_f = sup.value;
        up.d_np_prob = sup.d_np * sup_w;
        up.d_hv = sup.d_hv * sup_w;
        up.d_nc_prob = sup.d_nc * sup_w;
    }

    if (mode != AdaptMode::none) {
        const double feat_scale = -lambda_grl * adv_w;

        auto np_fwd = ms.np_disc.forward(cache.out.np_feat);
        auto np_bce = adversarial_bce(np_fwd.out, label);
        auto np_g = ms.np_disc.backward(np_fwd, np_bce.grad);
        add_disc_grads(arena, np_disc_slot(), np_g, adv_w);
        up.d_np_feat = np_g.features * feat_scale;

        auto hv_fwd = ms.hv_disc.forward(cache.out.hv_feat);
        auto hv_bce = adversarial_bce(hv_fwd.out, label);
        auto hv_g = ms.hv_disc.backward(hv_fwd, hv_bce.grad);
        add_disc_grads(arena, hv_disc_slot(), hv_g, adv_w);
        up.d_hv_feat = hv_g.features * feat_scale;

        double nc_term = 0.0;
        if (mode == AdaptMode::class_agnostic) {
            auto nc_fwd = ms.nc_disc_global.forward(cache.out.nc_feat);
            auto nc_bce = adversarial_bce(nc_fwd.out, label);
            auto nc_g = ms.nc_disc_global.backward(nc_fwd, nc_bce.grad);
            add_disc_grads(arena, global_disc_slot(), nc_g, adv_w);
            up.d_nc_feat = nc_g.features * feat_scale;
            nc_term = nc_bce.value;
        } else {
            const std::vector<ClassMask> own_masks =
                fixed_masks ? std::vector<ClassMask>{}
                            : class_masks_from_prediction(cache.out.nc_prob);
            const std::vector<ClassMask>& masks = fixed_masks ? *fixed_masks : own_masks;
            std::vector<PrototypeFeature> protos;
            protos.reserve(masks.size());
            for (const auto& m : masks) protos.push_back(prototype_features(cache.out.nc_feat, m));
            auto ca = class_aware_adv_loss(protos, ms.class_discs, ms.weights, label);
            nc_term = ca.value;
            Tensor d_nc_feat(cache.out.nc_feat.shape());
            for (int c = 0; c < kNumClasses; ++c) {
                if (!ca.active[std::size_t(c)]) continue;
                add_disc_grads(arena, class_disc_slot(c), ca.disc_grads[std::size_t(c)], adv_w);
                arena[weights_slot()][std::size_t(c)] += adv_w * ca.s_grads[std::size_t(c)];
                d_nc_feat += hadamard(ca.feature_grads[std::size_t(c)], masks[std::size_t(c)].mask);
            }
            up.d_nc_feat = d_nc_feat * feat_scale;
        }
        out.l_dis = total_discriminator_loss(nc_term, np_bce.value, hv_bce.value);
    }

    auto net_grads = ms.net.backward(cache, up);
    for (std::size_t i = 0; i < kNetViews; ++i) add_scaled(arena[i], net_grads[i], 1.0);
    return out;
}

/// Forward-only evaluation of (L_F, L_dis) for one sample.
SampleLosses eval_losses(const ModelState& ms, const SyntheticSample& s, DomainLabel label,
                         bool supervised, AdaptMode mode,
                         const std::vector<ClassMask>* fixed_masks = nullptr) {
    SampleLosses out;
    auto outmaps = ms.net.forward(s.image);
    if (supervised) {
        auto sup = supervised_total(outmaps.np_prob, s.np_gt, outmaps.hv, s.hv_gt,
                                    outmaps.nc_prob, s.classes_onehot());
        out.l_f = sup.value;
    }
    if (mode != AdaptMode::none) {
        auto np_bce = adversarial_bce(ms.np_disc.forward(outmaps.np_feat).out, label);
        auto hv_bce = adversarial_bce(ms.hv_disc.forward(outmaps.hv_feat).out, label);
        double nc_term = 0.0;
        if (mode == AdaptMode::class_agnostic) {
            nc_term = adversarial_bce(ms.nc_disc_global.forward(outmaps.nc_feat).out, label).value;
        } else {
            const std::vector<ClassMask> own_masks =
                fixed_masks ? std::vector<ClassMask>{}
                            : class_masks_from_prediction(outmaps.nc_prob);
            const std::vector<ClassMask>& masks = fixed_masks ? *fixed_masks : own_masks;
            std::vector<PrototypeFeature> protos;
            for (const auto& m : masks) protos.push_back(prototype_features(outmaps.nc_feat, m));
            nc_term = class_aware_adv_loss(protos, ms.class_discs, ms.weights, label).value;
        }
        out.l_dis = total_discriminator_loss(nc_term, np_bce.value, hv_bce.value);
    }
    return out;
}

double stage2_backward(const ModelState& ms, const Tensor& image, const PseudoLabelSet& pl,
                       double weight, Arena& arena) {
    auto cache = ms.net.forward_cached(image);
    auto lp = prototype_loss(cache.out.hv, pl);
    TinyHoverNet::UpstreamGrads up;
    up.d_hv = lp.grad * weight;
    auto net_grads = ms.net.backward(cache, up);
    for (std::size_t i = 0; i < kNetViews; ++i) add_scaled(arena[i], net_grads[i], 1.0);
    return lp.value;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
    return idx;
}

/// Identity plus the five flip/rotate ops; index 0 keeps the sample as is.
SyntheticSample maybe_augment(const SyntheticSample& s, std::uint64_t choice) {
    if (choice == 0) return s;
    return augment(s, AugOp(choice - 1));
}

double phase_lr(double base, std::size_t epoch, std::size_t total) {
    return 2 * epoch < total ? base : base * 0.1;
}

void check_finite(double v, const char* what, std::size_t epoch) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("training diverged: ") + what +
                                 " is non-finite at epoch " + std::to_string(epoch));
}

}  // namespace

TrainResult train_stage1(const Dataset& source, const Dataset& target,
                         const TrainConfig& cfg, AdaptMode mode) {
    cfg.validate();
    if (source.size() == 0) throw std::invalid_argument("train_stage1: empty source dataset");
    if (mode != AdaptMode::none && target.size() == 0)
        throw std::invalid_argument("train_stage1: empty target dataset");

    TrainResult result;
    result.state = ModelState::init(cfg.seed);
    ModelState& ms = result.state;
    auto views = ms.param_views();

    std::vector<bool> decoder_active(views.size(), false);
    for (std::size_t i = 4; i < kNetViews; ++i) decoder_active[i] = true;  // np/hv/nc heads

    std::vector<bool> full_active(views.size(), false);
    for (std::size_t i = 0; i < kNetViews; ++i) full_active[i] = true;
    if (mode == AdaptMode::class_agnostic && !cfg.freeze_discriminators) {
        for (std::size_t i = 0; i < kViewsPerDisc; ++i) {
            full_active[np_disc_slot() + i] = true;
            full_active[hv_disc_slot() + i] = true;
            full_active[global_disc_slot() + i] = true;
        }
    } else if (mode == AdaptMode::class_aware && !cfg.freeze_discriminators) {
        for (int c = 0; c < kNumClasses; ++c)
            for (std::size_t i = 0; i < kViewsPerDisc; ++i)
                full_active[class_disc_slot(c) + i] = true;
        for (std::size_t i = 0; i < kViewsPerDisc; ++i) {
            full_active[np_disc_slot() + i] = true;
            full_active[hv_disc_slot() + i] = true;
        }
        full_active[weights_slot()] = true;
    }

    Rng root(cfg.seed);
    const std::size_t n_src = source.size();
    const std::size_t n_tgt = target.size();
    const std::size_t steps_per_epoch = (n_src + cfg.batch_size - 1) / cfg.batch_size;

    std::vector<Arena> arenas(2 * cfg.batch_size, make_arena(views));
    Arena total = make_arena(views);

    auto run_epoch = [&](Adam& adam, std::size_t epoch_key, std::size_t epoch_in_phase,
                         std::size_t phase_epochs, bool with_adaptation,
                         const std::vector<bool>& active) {
        Rng shuffle_rng = root.split(0xe0000 + epoch_key);
        Rng aug_rng = root.split(0xa0000 + epoch_key);
        auto src_order = shuffled_indices(n_src, shuffle_rng);
        auto tgt_order = n_tgt ? shuffled_indices(n_tgt, shuffle_rng) : std::vector<std::size_t>{};
        const double lr = phase_lr(cfg.lr, epoch_in_phase, phase_epochs);

        double lf_sum = 0.0, ldis_sum = 0.0;
        std::size_t lf_n = 0, ldis_n = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            struct Item {
                const SyntheticSample* sample;
                DomainLabel label;
                bool supervised;
                std::uint64_t aug;
            };
            std::vector<Item> items;
            const std::size_t b0 = step * cfg.batch_size;
            auto aug_choice = [&](std::size_t slot) -> std::uint64_t {
                return cfg.augment ? aug_rng.split((step << 8) | slot).next_below(6) : 0;
            };
            for (std::size_t k = 0; k < cfg.batch_size && b0 + k < n_src; ++k)
                items.push_back({&source.samples[src_order[b0 + k]], DomainLabel::source, true,
                                 aug_choice(items.size())});
            const std::size_t n_sup = items.size();
            if (with_adaptation && mode != AdaptMode::none) {
                for (std::size_t k = 0; k < n_sup; ++k)
                    items.push_back({&target.samples[tgt_order[(b0 + k) % n_tgt]],
                                     DomainLabel::target, false, aug_choice(items.size())});
            }
            const double sup_w = 1.0 / double(n_sup);
            const double adv_w = 1.0 / double(items.size());
            const bool adapt = with_adaptation && mode != AdaptMode::none;

            std::vector<SampleLosses> losses(items.size());
            parallel_for(items.size(), cfg.threads, [&](std::size_t i) {
                zero_arena(arenas[i]);
                const SyntheticSample s = maybe_augment(*items[i].sample, items[i].aug);
                losses[i] = combined_backward(ms, s, items[i].label, items[i].supervised,
                                              adapt ? mode : AdaptMode::none, cfg.lambda_grl,
                                              sup_w, adv_w, arenas[i]);
            });
            zero_arena(total);
            for (std::size_t i = 0; i < items.size(); ++i) add_arena(total, arenas[i]);
            adam.step(total, lr, &active);

            for (std::size_t i = 0; i < items.size(); ++i) {
                if (items[i].supervised) {
                    lf_sum += losses[i].l_f;
                    ++lf_n;
                }
                if (adapt) {
                    ldis_sum += losses[i].l_dis;
                    ++ldis_n;
                }
            }
        }
        EpochLog log;
        log.epoch = result.history.size();
        log.l_f = lf_n ? lf_sum / double(lf_n) : 0.0;
        log.l_dis = ldis_n ? ldis_sum / double(ldis_n) : 0.0;
        check_finite(log.l_f, "L_F", log.epoch);
        check_finite(log.l_dis, "L_dis", log.epoch);
        result.history.push_back(log);
    };

    {
        Adam warm_adam(views);
        for (std::size_t e = 0; e < cfg.warm_epochs; ++e)
            run_epoch(warm_adam, e, e, cfg.warm_epochs, false, decoder_active);
    }
    Adam full_adam(views);
    for (std::size_t e = 0; e < cfg.full_epochs; ++e)
        run_epoch(full_adam, 0x1000 + e, e, cfg.full_epochs, true, full_active);

    result.checkpoint = make_checkpoint(ms, &full_adam, cfg, "stage1", mode);
    return result;
}

TrainResult train_stage2(const ModelState& init, const Dataset& target,
                         const std::vector<PseudoLabelSet>& pseudo, const TrainConfig& cfg) {
    cfg.validate();
    if (target.size() == 0) throw std::invalid_argument("train_stage2: empty target dataset");
    if (pseudo.size() != target.size())
        throw std::invalid_argument("train_stage2: pseudo-label set does not match dataset");

    TrainResult result;
    result.state = init;
    ModelState& ms = result.state;
    auto views = ms.param_views();

    // encoder + HV decoder only; NP/NC decoders and discriminators frozen
    std::vector<bool> active(views.size(), false);
    active[0] = active[1] = active[2] = active[3] = true;  // enc1, enc2
    active[8] = active[9] = active[10] = active[11] = true;  // hv_a, hv_b

    Rng root(cfg.seed);
    const std::size_t n = target.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<Arena> arenas(cfg.batch_size, make_arena(views));
    Arena total = make_arena(views);
    Adam adam(views);

    for (std::size_t e = 0; e < cfg.stage2_epochs; ++e) {
        Rng shuffle_rng = root.split(0x20000 + e);
        Rng aug_rng = root.split(0x2a000 + e);
        auto order = shuffled_indices(n, shuffle_rng);
        const double lr = phase_lr(cfg.lr, e, cfg.stage2_epochs);

        double lp_sum = 0.0;
        std::size_t lp_n = 0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const std::size_t b0 = step * cfg.batch_size;
            const std::size_t b = std::min(cfg.batch_size, n - b0);
            const double w = 1.0 / double(b);
            std::vector<double> lp(b, 0.0);
            parallel_for(b, cfg.threads, [&](std::size_t k) {
                zero_arena(arenas[k]);
                const std::size_t idx = order[b0 + k];
                const std::uint64_t aug =
                    cfg.augment ? aug_rng.split((step << 8) | k).next_below(6) : 0;
                if (aug == 0) {
                    lp[k] = stage2_backward(ms, target.samples[idx].image, pseudo[idx], w, arenas[k]);
                } else {
                    // transform the image and the pseudo-label maps together
                    SyntheticSample carrier;
                    carrier.image = target.samples[idx].image;
                    carrier.instances = pseudo[idx].instance_map;
                    carrier.hv_gt = pseudo[idx].hv;
                    carrier.classes = ClassLabelMap(carrier.instances.height, carrier.instances.width);
                    carrier.np_gt = Tensor({2, carrier.instances.height, carrier.instances.width});
                    const SyntheticSample aug_s = maybe_augment(carrier, aug);
                    PseudoLabelSet aug_pl = build_pseudo_labels(aug_s.hv_gt, aug_s.instances, 1);
                    lp[k] = stage2_backward(ms, aug_s.image, aug_pl, w, arenas[k]);
                }
            });
            zero_arena(total);
            for (std::size_t k = 0; k < b; ++k) add_arena(total, arenas[k]);
            adam.step(total, lr, &active);
            for (std::size_t k = 0; k < b; ++k) {
                lp_sum += lp[k];
                ++lp_n;
            }
        }
        EpochLog log;
        log.epoch = e;
        log.l_p = lp_n ? lp_sum / double(lp_n) : 0.0;
        check_finite(log.l_p, "L_p", e);
        result.history.push_back(log);
    }

    result.checkpoint = make_checkpoint(ms, &adam, cfg, "stage2", AdaptMode::none);
    return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochLog>& history) {
    std::ofstream os(path);
    os << "epoch,L_F,L_dis,L_p\n";
    for (const auto& h : history)
        os << h.epoch << ',' << h.l_f << ',' << h.l_dis << ',' << h.l_p << '\n';
}

std::pair<InstanceLabelMap, ClassLabelMap> predict_sample(const TinyHoverNet& net,
                                                          const Tensor& image,
                                                          const PostprocessConfig& cfg) {
    auto out = net.forward(image);
    const std::size_t h = image.extent(1), w = image.extent(2);
    Tensor np_fg({h, w});
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) np_fg[i] = out.np_prob[plane + i];
    InstanceLabelMap inst = extract_instances(np_fg, out.hv, cfg);
    ClassLabelMap cls = class_map_from_instances(inst, out.nc_prob);
    return {std::move(inst), std::move(cls)};
}

// ---- finite-difference verification ---------------------------------------

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kFdDenomFloor});
    return std::abs(analytic - numeric) / denom;
}

FdProbe fd_probe(double f_plus, double f_minus, double f_center, double step, double analytic) {
    FdProbe p;
    p.central = (f_plus - f_minus) / (2.0 * step);
    const double left = (f_center - f_minus) / step;
    const double right = (f_plus - f_center) / step;
    const double denom = std::max({std::abs(analytic), std::abs(p.central), kFdDenomFloor});
    p.kinked = std::abs(left - right) > 0.5 * kGradTolerance * denom;
    return p;
}

namespace {

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx;
    if (k == 0 || k >= n) {
        idx.resize(n);
        std::iota(idx.begin(), idx.end(), 0);
    } else {
        for (std::size_t i = 0; i < k; ++i) idx.push_back(rng.next_below(n));
    }
    return idx;
}

}  // namespace

GradCheckReport backward_check(ModelState& state, const SyntheticSample& source_sample,
                               const SyntheticSample& target_sample, CheckedLoss loss,
                               AdaptMode mode, double lambda_grl,
                               std::size_t params_per_view, Rng pick) {
    if (loss == CheckedLoss::stage2)
        throw std::invalid_argument("backward_check: use backward_check_stage2 for L_p");
    const bool with_adv = loss == CheckedLoss::stage1 && mode != AdaptMode::none;

    auto views = state.param_views();
    Arena analytic = make_arena(views);
    combined_backward(state, source_sample, DomainLabel::source, true,
                      with_adv ? mode : AdaptMode::none, lambda_grl, 1.0, 1.0, analytic);
    if (with_adv)
        combined_backward(state, target_sample, DomainLabel::target, false, mode, lambda_grl,
                          1.0, 1.0, analytic);

    // freeze the argmax class masks at the unperturbed parameters; argmax is
    // piecewise constant, so this is exactly the function the analytic
    // gradient differentiates
    std::vector<ClassMask> src_masks, tgt_masks;
    if (with_adv && mode == AdaptMode::class_aware) {
        src_masks = class_masks_from_prediction(state.net.forward(source_sample.image).nc_prob);
        tgt_masks = class_masks_from_prediction(state.net.forward(target_sample.image).nc_prob);
    }
    auto eval_total = [&]() {
        SampleLosses src = eval_losses(state, source_sample, DomainLabel::source, true,
                                       with_adv ? mode : AdaptMode::none,
                                       src_masks.empty() ? nullptr : &src_masks);
        SampleLosses tgt;
        if (with_adv)
            tgt = eval_losses(state, target_sample, DomainLabel::target, false, mode,
                              tgt_masks.empty() ? nullptr : &tgt_masks);
        return std::pair(src.l_f, src.l_dis + tgt.l_dis);
    };

    // the objective whose one-sided slopes we probe: L_F - lambda*L_dis for
    // network parameters (the reversal contract), plain L_dis for the rest
    const auto [lf0, ldis0] = eval_total();
    auto objective = [&](double lf, double ldis, bool net_view) {
        if (!with_adv) return lf;
        return net_view ? lf - lambda_grl * ldis : ldis;
    };

    GradCheckReport report;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const bool net_view = v < kNetViews;
        if (!with_adv && !net_view) continue;  // L_F does not touch these
        for (std::size_t j : pick_indices(views[v].n, params_per_view, pick)) {
            double& p = views[v].data[j];
            const double keep = p;
            p = keep + kFdStep;
            const auto [lf_plus, ldis_plus] = eval_total();
            p = keep - kFdStep;
            const auto [lf_minus, ldis_minus] = eval_total();
            p = keep;
            const auto probe = fd_probe(objective(lf_plus, ldis_plus, net_view),
                                        objective(lf_minus, ldis_minus, net_view),
                                        objective(lf0, ldis0, net_view), kFdStep,
                                        analytic[v][j]);
            if (probe.kinked) {
                ++report.kinked_skipped;
                continue;
            }
            ++report.checked;
            const double rel = relative_error(analytic[v][j], probe.central);
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = views[v].name + "[" + std::to_string(j) + "]";
            }
        }
    }
    return report;
}

GradCheckReport backward_check_stage2(ModelState& state, const Tensor& image,
                                      const PseudoLabelSet& pl,
                                      std::size_t params_per_view, Rng pick) {
    auto views = state.param_views();
    Arena analytic = make_arena(views);
    stage2_backward(state, image, pl, 1.0, analytic);

    const double center = prototype_loss(state.net.forward(image).hv, pl).value;

    GradCheckReport report;
    for (std::size_t v = 0; v < kNetViews; ++v) {
        for (std::size_t j : pick_indices(views[v].n, params_per_view, pick)) {
            double& p = views[v].data[j];
            const double keep = p;
            p = keep + kFdStep;
            const double plus = prototype_loss(state.net.forward(image).hv, pl).value;
            p = keep - kFdStep;
            const double minus = prototype_loss(state.net.forward(image).hv, pl).value;
            p = keep;
            const auto probe = fd_probe(plus, minus, center, kFdStep, analytic[v][j]);
            if (probe.kinked) {
                ++report.kinked_skipped;
                continue;
            }
            ++report.checked;
            const double rel = relative_error(analytic[v][j], probe.central);
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = views[v].name + "[" + std::to_string(j) + "]";
            }
        }
    }
    return report;
}

}  // namespace capl
