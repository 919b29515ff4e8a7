#include "gat/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "gat/error.hpp"
#include "gat/metrics.hpp"
#include "gat/random.hpp"

namespace gat {

std::string to_string(Weighting w) { return w == Weighting::equal ? "equal" : "mgda"; }

std::string to_string(Regularizer r) {
    switch (r) {
        case Regularizer::off: return "off";
        case Regularizer::on: return "on";
        case Regularizer::detached: return "detached";
    }
    return "?";
}

std::string to_string(TrainMode m) {
    switch (m) {
        case TrainMode::standard: return "standard";
        case TrainMode::madry: return "madry";
        case TrainMode::gat: return "gat";
    }
    return "?";
}

std::string to_string(GradNormalization n) {
    switch (n) {
        case GradNormalization::none: return "none";
        case GradNormalization::l2: return "l2";
        case GradNormalization::loss: return "loss";
        case GradNormalization::loss_l2: return "loss+";
    }
    return "?";
}

GradNormalization normalization_from_string(const std::string& s) {
    if (s == "none") return GradNormalization::none;
    if (s == "l2") return GradNormalization::l2;
    if (s == "loss") return GradNormalization::loss;
    if (s == "loss+") return GradNormalization::loss_l2;
    throw ConfigError("unknown gradient normalization '" + s + "' (expected none, l2, loss or loss+)");
}

std::string to_string(RegWeighting r) { return r == RegWeighting::mgda ? "mgda" : "fixed"; }

RegWeighting reg_weighting_from_string(const std::string& s) {
    if (s == "mgda") return RegWeighting::mgda;
    if (s == "fixed") return RegWeighting::fixed;
    throw ConfigError("unknown regularizer weighting '" + s + "' (expected mgda or fixed)");
}

Weighting weighting_from_string(const std::string& s) {
    if (s == "equal") return Weighting::equal;
    if (s == "mgda") return Weighting::mgda;
    throw ConfigError("unknown weighting '" + s + "' (expected equal or mgda)");
}

Regularizer regularizer_from_string(const std::string& s) {
    if (s == "off") return Regularizer::off;
    if (s == "on") return Regularizer::on;
    if (s == "detached") return Regularizer::detached;
    throw ConfigError("unknown regularizer mode '" + s + "' (expected off, on or detached)");
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "standard") return TrainMode::standard;
    if (s == "madry") return TrainMode::madry;
    if (s == "gat") return TrainMode::gat;
    throw ConfigError("unknown training mode '" + s + "' (expected standard, madry or gat)");
}

void TrainConfig::validate() const {
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(mgda_scale > 0.0) || !std::isfinite(mgda_scale)) throw ConfigError("mgda scale must be > 0");
    for (double w : task_loss_weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("task loss weights must be finite and >= 0");
    attack.validate();
    eval_attack.validate();
    if (mgda.max_iters == 0 || !(mgda.tol > 0.0)) throw ConfigError("invalid MGDA options");
}

namespace {

nlohmann::json attack_json(const AttackConfig& a) {
    return {{"norm", to_string(a.norm)}, {"epsilon", a.epsilon},         {"step", a.step},
            {"steps", a.steps},          {"random_start", a.random_start}, {"selector", to_string(a.selector)}};
}

AttackConfig attack_from(const nlohmann::json& j) {
    AttackConfig a;
    a.norm = norm_from_string(j.value("norm", to_string(a.norm)));
    a.epsilon = j.value("epsilon", a.epsilon);
    a.step = j.value("step", a.step);
    a.steps = j.value("steps", a.steps);
    a.random_start = j.value("random_start", a.random_start);
    a.selector = selector_from_string(j.value("selector", to_string(a.selector)));
    return a;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"momentum", c.momentum},
            {"lr_horizon", c.lr_horizon},
            {"patience", c.patience},
            {"seed", c.seed},
            {"attack", attack_json(c.attack)},
            {"eval_attack", attack_json(c.eval_attack)},
            {"weighting", to_string(c.weighting)},
            {"regularizer", to_string(c.regularizer)},
            {"reg_weighting", to_string(c.reg_weighting)},
            {"mgda", {{"max_iters", c.mgda.max_iters}, {"tol", c.mgda.tol}}},
            {"mgda_scale", c.mgda_scale},
            {"mgda_normalization", to_string(c.mgda_normalization)},
            {"task_loss_weights", c.task_loss_weights},
            {"pool_seed", c.pool_seed},
            {"val_limit", c.val_limit}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        c.momentum = j.value("momentum", c.momentum);
        c.lr_horizon = j.value("lr_horizon", c.lr_horizon);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        if (j.contains("attack")) c.attack = attack_from(j["attack"]);
        if (j.contains("eval_attack")) c.eval_attack = attack_from(j["eval_attack"]);
        c.weighting = weighting_from_string(j.value("weighting", to_string(c.weighting)));
        c.regularizer = regularizer_from_string(j.value("regularizer", to_string(c.regularizer)));
        c.reg_weighting = reg_weighting_from_string(j.value("reg_weighting", to_string(c.reg_weighting)));
        if (j.contains("mgda")) {
            c.mgda.max_iters = j["mgda"].value("max_iters", c.mgda.max_iters);
            c.mgda.tol = j["mgda"].value("tol", c.mgda.tol);
        }
        c.mgda_scale = j.value("mgda_scale", c.mgda_scale);
        c.mgda_normalization = normalization_from_string(j.value("mgda_normalization", to_string(c.mgda_normalization)));
        c.task_loss_weights = j.value("task_loss_weights", c.task_loss_weights);
        c.pool_seed = j.value("pool_seed", c.pool_seed);
        c.val_limit = j.value("val_limit", c.val_limit);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid training config: ") + e.what());
    }
    c.validate();
    return c;
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = {{"epoch", r.epoch},
         {"lr", r.lr},
         {"clean_loss", r.clean_loss},
         {"adv_loss", r.adv_loss},
         {"reg", r.reg},
         {"alpha", r.alpha},
         {"val_clean_accuracy", r.val_clean_accuracy},
         {"val_robust_accuracy", r.val_robust_accuracy}};
}

double cosine_lr(double t, double horizon, double lr0) {
    if (!(horizon > 0.0)) throw ConfigError("cosine schedule horizon must be > 0");
    if (t < 0.0 || t > horizon) throw ConfigError("cosine schedule step outside [0, T]");
    return lr0 * (1.0 + std::cos(std::numbers::pi * t / horizon)) / 2.0;
}

// ---------------------------------------------------------------------------

Var curvature_regularizer(const MultiTaskModel& model, const ForwardPass& pass, Var x, std::span<const TaskLabels> labels,
                          std::size_t j, bool detached) {
    const auto enabled = model.enabled_tasks();
    auto pos = std::find(enabled.begin(), enabled.end(), j);
    if (pos == enabled.end() || pos == enabled.begin())
        throw ConfigError("regularizer needs an enabled task after the first one");
    if (!detached && x.graph().mode() != Graph::Mode::record_backward)
        throw GraphError("the curvature regularizer needs a record_backward graph");
    if (!x.requires_grad()) throw GraphError("the regularizer input must require gradients");

    Var xs[] = {x};
    auto input_grad = [&](std::size_t t) {
        Var loss = sum(per_sample_loss(*pass.outputs[t], model.head(t).spec, labels[t]));
        Var g = gradients(loss, xs)[0];
        if (g.shape().size() != 2) g = flatten(g);
        return detached ? detach(g) : g;
    };
    const Var gj = input_grad(j);
    std::optional<Var> total;
    for (auto k = enabled.begin(); k != pos; ++k) {
        const Var gk = input_grad(*k);
        Var dot = sum_cols(gj * gk);
        Var nj = sum_cols(gj * gj), nk = sum_cols(gk * gk);
        Var cos2 = (dot * dot) / add_scalar(nj * nk, 1e-12);
        Var diff = gj - gk, plus = gj + gk;
        Var xi = (add_scalar(-1.0 * cos2, 1.0) * sum_cols(diff * diff)) / add_scalar(sum_cols(plus * plus), 1e-12);
        total = total ? *total + xi : xi;
    }
    return mean(*total);
}

PreparedBatch prepare_batch(const MultiTaskModel& model, const LabeledCorpus& corpus, std::span<const std::size_t> ids,
                            const AugmentPipeline& pipeline, Rng& rng) {
    PreparedBatch out;
    out.ids.assign(ids.begin(), ids.end());
    out.labels.resize(model.task_count());
    const auto enabled = model.enabled_tasks();
    Tensor x = corpus.batch(ids);
    auto [xp, ss] = pipeline.apply_batch(x, corpus.dims, rng);
    out.x = std::move(xp);
    std::size_t stage = 0;
    for (auto t : enabled) {
        const auto& spec = model.head(t).spec;
        if (spec.kind == TaskKind::self_supervised)
            out.labels[t].classes = ss.at(stage++);
        else
            out.labels[t] = corpus.labels(spec, ids);
    }
    return out;
}

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL ^ (a + 0x632BE59BD9B4E019ULL) * 0xC2B2AE3D27D4EB4FULL;
    h ^= (b + 0x165667B19E3779F9ULL) * 0x85EBCA77C2B2AE63ULL;
    h ^= h >> 29;
    h *= 0xBF58476D1CE4E5B9ULL;
    return h ^ (h >> 32);
}

std::vector<double> flat(std::span<const Tensor> ts) {
    std::vector<double> out;
    for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

// Detached parameter gradients of a scalar.
std::vector<double> param_grads(Var scalar, std::span<const Var> vars) {
    if (scalar.graph().mode() == Graph::Mode::record_backward) return flat(second_order_backward(scalar, vars));
    std::vector<Tensor> ts;
    for (const auto& g : gradients(scalar, vars)) ts.push_back(g.value());
    return flat(ts);
}

void check_finite(double v, const std::string& what, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(v))
        throw NumericError("training diverged: " + what + " is not finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch));
}

struct Optimizer {
    std::vector<double> shared_velocity;
    std::vector<std::vector<double>> head_velocity;
    double momentum;

    void step(std::vector<double>& theta, std::vector<double>& velocity, std::span<const double> grad, double lr) const {
        if (velocity.empty()) velocity.assign(theta.size(), 0.0);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            velocity[i] = momentum * velocity[i] + grad[i];
            theta[i] -= lr * velocity[i];
        }
    }
};

struct BatchStats {
    std::vector<double> clean, adv, reg, alpha;
};

struct Trainer {
    TrainMode mode;
    const TrainConfig& cfg;
    MultiTaskModel model;
    Optimizer opt;
    std::vector<std::size_t> enabled;
    std::vector<std::string> objectives;

    double task_weight(std::size_t t) const { return cfg.task_loss_weights.empty() ? 1.0 : cfg.task_loss_weights.at(t); }
    bool adversarial() const { return mode != TrainMode::standard; }
    bool reg_active() const { return mode == TrainMode::gat && cfg.regularizer != Regularizer::off && enabled.size() >= 2; }
    bool reg_in_mgda() const {
        return reg_active() && cfg.regularizer == Regularizer::on && cfg.reg_weighting == RegWeighting::mgda;
    }
    bool use_mgda() const { return mode == TrainMode::gat && cfg.weighting == Weighting::mgda; }

    void build_objectives() {
        for (auto t : enabled) {
            objectives.push_back(model.head(t).spec.name + ":clean");
            if (adversarial()) objectives.push_back(model.head(t).spec.name + ":adv");
        }
        // detached regularizers have no parameter gradient, so they stay out of MGDA
        if (reg_in_mgda())
            for (std::size_t p = 1; p < enabled.size(); ++p) objectives.push_back(model.head(enabled[p]).spec.name + ":reg");
    }

    BatchStats step(const PreparedBatch& batch, double lr, std::uint64_t attack_seed, BatchLog& log) {
        const std::size_t tasks = model.task_count();
        BatchStats stats{std::vector<double>(tasks, 0.0), std::vector<double>(tasks, 0.0), std::vector<double>(tasks, 0.0), {}};

        Tensor x_adv;
        if (adversarial()) {
            ModelTarget target(model, batch.labels);
            const auto attacked = select_tasks(target, cfg.attack.selector);
            auto pb = pgd_attack(target, attacked, {}, batch.x, cfg.attack, attack_seed);
            log.max_delta_linf = pb.max_delta_norm(Norm::linf);
            x_adv = std::move(pb.x_adv);
        }

        const bool second = reg_active() && cfg.regularizer == Regularizer::on;
        Graph g(second ? Graph::Mode::record_backward : Graph::Mode::first_order);
        auto bound = bind(g, model, true);
        Var x = g.leaf("x", batch.x, reg_active());
        auto pass = forward(model, bound, x);
        std::vector<Var> clean(tasks), adv(tasks), reg(tasks);
        for (auto t : enabled) {
            clean[t] = task_loss(*pass.outputs[t], model.head(t).spec, batch.labels[t]);
            stats.clean[t] = clean[t].value().item();
            check_finite(stats.clean[t], model.head(t).spec.name + " clean loss", log.epoch, log.batch);
        }
        if (adversarial()) {
            auto pass_adv = forward(model, bound, g.leaf("x_adv", x_adv, false));
            for (auto t : enabled) {
                adv[t] = task_loss(*pass_adv.outputs[t], model.head(t).spec, batch.labels[t]);
                stats.adv[t] = adv[t].value().item();
                check_finite(stats.adv[t], model.head(t).spec.name + " adversarial loss", log.epoch, log.batch);
            }
        }
        if (reg_active()) {
            for (std::size_t p = 1; p < enabled.size(); ++p) {
                const auto t = enabled[p];
                reg[t] = curvature_regularizer(model, pass, x, batch.labels, t, cfg.regularizer == Regularizer::detached);
                stats.reg[t] = reg[t].value().item();
                check_finite(stats.reg[t], model.head(t).spec.name + " regularizer", log.epoch, log.batch);
            }
        }

        auto shared = model.shared_parameters();
        if (!use_mgda()) {
            std::optional<Var> total;
            for (auto t : enabled) {
                Var term = adversarial() ? clean[t] + adv[t] : clean[t];
                term = term * task_weight(t);
                total = total ? *total + term : term;
            }
            if (reg_active())
                for (std::size_t p = 1; p < enabled.size(); ++p) total = *total + reg[enabled[p]];
            auto all = bound.all();
            const auto grad = param_grads(*total, all);
            std::span<const double> gs(grad);
            opt.step(shared, opt.shared_velocity, gs.first(shared.size()), lr);
            model.set_shared_parameters(shared);
            std::size_t offset = shared.size();
            for (std::size_t t = 0; t < tasks; ++t) {
                auto head = model.head_parameters(t);
                if (model.head(t).enabled) {
                    opt.step(head, opt.head_velocity[t], gs.subspan(offset, head.size()), lr);
                    model.set_head_parameters(t, head);
                }
                offset += head.size();
            }
            return stats;
        }

        // MGDA on the shared encoder
        std::vector<Var> objective_vars;
        for (auto t : enabled) {
            objective_vars.push_back(clean[t]);
            if (adversarial()) objective_vars.push_back(adv[t]);
        }
        if (reg_in_mgda())
            for (std::size_t p = 1; p < enabled.size(); ++p) objective_vars.push_back(reg[enabled[p]]);
        std::vector<std::vector<double>> grads, scaled;
        for (const auto& o : objective_vars) {
            grads.push_back(param_grads(o, bound.encoder));
            double norm = 0.0;
            for (double v : grads.back()) norm += v * v;
            norm = std::sqrt(norm);
            const double loss = o.value().item();
            double f = 1.0;
            switch (cfg.mgda_normalization) {
                case GradNormalization::none: break;
                case GradNormalization::l2: f = norm; break;
                case GradNormalization::loss: f = loss; break;
                case GradNormalization::loss_l2: f = loss * norm; break;
            }
            auto g = grads.back();
            if (f > 0.0)
                for (auto& v : g) v /= f;
            scaled.push_back(std::move(g));
        }
        auto sol = mgda_frank_wolfe(gram_matrix(scaled), cfg.mgda);
        validate_weights(sol.weights);
        log.alpha = sol.weights;
        log.direction_norm_sq = sol.norm_sq;
        log.mgda_iterations = sol.iterations;
        log.mgda_converged = sol.converged;
        if (sol.norm_sq > 0.0) {
            const auto ds = combine(scaled, sol.weights);
            for (std::size_t k = 0; k < scaled.size(); ++k) {
                double gd = 0.0;
                for (std::size_t i = 0; i < ds.size(); ++i) gd += scaled[k][i] * ds[i];
                if (gd < (1.0 - cfg.mgda.tol) * sol.norm_sq * (1.0 - 1e-9) || (sol.weights[k] > 0.0 && gd <= 0.0))
                    log.certificate = false;
            }
        }
        auto d = combine(grads, sol.weights);
        stats.alpha = sol.weights;
        for (auto& v : d) v *= cfg.mgda_scale;
        if (reg_active() && cfg.regularizer == Regularizer::on && cfg.reg_weighting == RegWeighting::fixed) {
            for (std::size_t p = 1; p < enabled.size(); ++p) {
                const auto rg = param_grads(reg[enabled[p]], bound.encoder);
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += rg[i];
            }
        }
        opt.step(shared, opt.shared_velocity, d, lr);
        model.set_shared_parameters(shared);
        for (auto t : enabled) {
            Var own = adversarial() ? clean[t] + adv[t] : clean[t];
            auto hg = param_grads(own, bound.heads[t]);
            auto head = model.head_parameters(t);
            opt.step(head, opt.head_velocity[t], hg, lr);
            model.set_head_parameters(t, head);
        }
        return stats;
    }
};

std::vector<std::size_t> validation_ids(const LabeledCorpus& corpus, const TrainConfig& cfg) {
    auto ids = corpus.indices(Split::val);
    if (cfg.val_limit > 0 && ids.size() > cfg.val_limit) ids.resize(cfg.val_limit);
    return ids;
}

}  // namespace

TrainResult train(TrainMode mode, const MultiTaskModel& initial, const LabeledCorpus& corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (!cfg.task_loss_weights.empty() && cfg.task_loss_weights.size() != initial.task_count())
        throw ConfigError("need one task loss weight per task");
    const auto train_ids = corpus.indices(Split::train);
    if (train_ids.empty()) throw ConfigError("dataset has no training samples");
    if (initial.encoder_spec().input_width() != corpus.dims.size())
        throw ConfigError("model input width does not match the corpus images");

    Trainer tr{mode, cfg, initial, {}, initial.enabled_tasks(), {}};
    tr.opt.momentum = cfg.momentum;
    tr.opt.head_velocity.resize(initial.task_count());
    tr.build_objectives();

    std::vector<TaskSpec> enabled_specs;
    for (auto t : tr.enabled) enabled_specs.push_back(initial.head(t).spec);
    AugmentPipeline pipeline(enabled_specs, cfg.pool_seed);

    TrainResult result{initial, {}, {}, tr.objectives, 0, false, std::nullopt};
    if (!pipeline.pools().empty()) result.pool = pipeline.pools().begin()->second;
    if (cfg.epochs == 0) return result;

    const auto val_ids = validation_ids(corpus, cfg);
    const double horizon = double(cfg.lr_horizon ? cfg.lr_horizon : cfg.epochs);
    double best = -1.0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(std::min(double(epoch), horizon), horizon, cfg.lr);
        auto order = train_ids;
        Rng(mix(cfg.seed, epoch, 0)).shuffle(order);
        const std::size_t batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        const std::size_t tasks = tr.model.task_count();
        rec.clean_loss.assign(tasks, 0.0);
        rec.adv_loss.assign(tasks, 0.0);
        rec.reg.assign(tasks, 0.0);
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * cfg.batch_size, hi = std::min(order.size(), lo + cfg.batch_size);
            std::span<const std::size_t> ids(order.data() + lo, hi - lo);
            Rng batch_rng(mix(cfg.seed, epoch, 2 * b + 1));
            auto prepared = prepare_batch(tr.model, corpus, ids, pipeline, batch_rng);
            BatchLog log;
            log.epoch = epoch;
            log.batch = b;
            auto stats = tr.step(prepared, lr, mix(cfg.seed, epoch, 2 * b + 2), log);
            for (std::size_t t = 0; t < tasks; ++t) {
                rec.clean_loss[t] += stats.clean[t] / double(batches);
                rec.adv_loss[t] += stats.adv[t] / double(batches);
                rec.reg[t] += stats.reg[t] / double(batches);
            }
            if (!stats.alpha.empty()) {
                if (rec.alpha.empty()) rec.alpha.assign(stats.alpha.size(), 0.0);
                for (std::size_t k = 0; k < stats.alpha.size(); ++k) rec.alpha[k] += stats.alpha[k] / double(batches);
            }
            result.batches.push_back(std::move(log));
        }
        if (!val_ids.empty()) {
            auto ev = evaluate_model(tr.model, corpus, val_ids, cfg.eval_attack, mix(cfg.seed, epoch, 1));
            rec.val_clean_accuracy = ev.clean_accuracy;
            rec.val_robust_accuracy = ev.robust_accuracy;
        }
        result.records.push_back(rec);
        if (val_ids.empty() || rec.val_robust_accuracy > best) {
            best = rec.val_robust_accuracy;
            result.model = tr.model;
            result.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    if (mode == TrainMode::gat) result.model = result.model.disable_auxiliary();
    return result;
}

TrainResult train_standard(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config) {
    return train(TrainMode::standard, model, corpus, config);
}
TrainResult train_madry(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config) {
    return train(TrainMode::madry, model, corpus, config);
}
TrainResult train_gat(const MultiTaskModel& model, const LabeledCorpus& corpus, const TrainConfig& config) {
    return train(TrainMode::gat, model, corpus, config);
}

// ---------------------------------------------------------------------------

namespace {

EvalResult evaluate_impl(const MultiTaskModel& surrogate_in, const MultiTaskModel& target_in, const LabeledCorpus& corpus,
                         std::span<const std::size_t> ids, const AttackConfig& attack_in, std::uint64_t seed,
                         std::size_t batch_size) {
    if (ids.empty()) throw ConfigError("empty evaluation set");
    if (batch_size == 0) throw ConfigError("evaluation batch size must be >= 1");
    const auto surrogate = surrogate_in.disable_auxiliary();
    const auto target = target_in.disable_auxiliary();
    const auto& spec = target.head(0).spec;
    if (spec.loss == LossFamily::mse) throw ConfigError("evaluation needs a classification target task");
    AttackConfig attack = attack_in;
    attack.selector = TaskSelector::main_only;
    const bool binary = spec.arity == 2;

    EvalResult r;
    r.count = ids.size();
    std::vector<double> clean_scores, robust_scores;
    std::vector<int> truth;
    double vuln = 0.0;
    auto decide = [&](const Tensor& out, std::vector<int>& pred, std::vector<double>& scores) {
        if (spec.loss == LossFamily::binary_ce) {
            for (std::size_t i = 0; i < out.rows(); ++i) {
                pred.push_back(out.at(i, 0) > 0.0 ? 1 : 0);
                scores.push_back(out.at(i, 0));
            }
        } else {
            auto p = argmax_rows(out);
            pred.insert(pred.end(), p.begin(), p.end());
            if (binary)
                for (std::size_t i = 0; i < out.rows(); ++i) scores.push_back(out.at(i, 1) - out.at(i, 0));
        }
    };
    for (std::size_t lo = 0; lo < ids.size(); lo += batch_size) {
        std::span<const std::size_t> part = ids.subspan(lo, std::min(batch_size, ids.size() - lo));
        Tensor x = corpus.batch(part);
        TaskLabels y = corpus.labels(spec, part);
        std::vector<TaskLabels> labels(target.task_count());
        labels[0] = y;
        ModelTarget victim(target, labels), crafter(surrogate, labels);
        auto pb = pgd_attack(crafter, x, attack, seed + lo);
        const Tensor clean_out = predict(target, x)[0];
        const Tensor robust_out = predict(target, pb.x_adv)[0];
        std::vector<int> cp, rp;
        decide(clean_out, cp, clean_scores);
        decide(robust_out, rp, robust_scores);
        auto after = victim.evaluate(pb.x_adv, std::vector<std::size_t>{0}, {}, false).losses[0];
        auto before = victim.evaluate(x, std::vector<std::size_t>{0}, {}, false).losses[0];
        for (std::size_t i = 0; i < part.size(); ++i) {
            r.clean_correct.push_back(cp[i] == y.classes[i]);
            r.robust_correct.push_back(rp[i] == y.classes[i]);
            r.robust_predictions.push_back(rp[i]);
            truth.push_back(y.classes[i]);
            vuln += std::abs(after[i] - before[i]);
        }
    }
    const double n = double(ids.size());
    r.clean_accuracy = double(std::count(r.clean_correct.begin(), r.clean_correct.end(), true)) / n;
    r.robust_accuracy = double(std::count(r.robust_correct.begin(), r.robust_correct.end(), true)) / n;
    r.vulnerability = vuln / n;
    if (binary && std::count(truth.begin(), truth.end(), 1) > 0 && std::count(truth.begin(), truth.end(), 0) > 0) {
        r.clean_auc = roc_auc(clean_scores, truth);
        r.robust_auc = roc_auc(robust_scores, truth);
    }
    return r;
}

}  // namespace

EvalResult evaluate_model(const MultiTaskModel& model, const LabeledCorpus& corpus, std::span<const std::size_t> ids,
                          const AttackConfig& attack, std::uint64_t seed, std::size_t batch_size) {
    return evaluate_impl(model, model, corpus, ids, attack, seed, batch_size);
}

EvalResult evaluate_transfer(const MultiTaskModel& surrogate, const MultiTaskModel& target, const LabeledCorpus& corpus,
                             std::span<const std::size_t> ids, const AttackConfig& attack, std::uint64_t seed,
                             std::size_t batch_size) {
    if (!(surrogate.head(0).spec == target.head(0).spec)) throw ConfigError("surrogate and target tasks differ");
    return evaluate_impl(surrogate, target, corpus, ids, attack, seed, batch_size);
}

nlohmann::json run_manifest(TrainMode mode, const TrainConfig& config, const TrainResult& result) {
    nlohmann::json batches = nlohmann::json::array();
    for (const auto& b : result.batches)
        batches.push_back({{"epoch", b.epoch},
                           {"batch", b.batch},
                           {"alpha", b.alpha},
                           {"direction_norm_sq", b.direction_norm_sq},
                           {"certificate", b.certificate},
                           {"mgda_iterations", b.mgda_iterations},
                           {"mgda_converged", b.mgda_converged},
                           {"max_delta_linf", b.max_delta_linf}});
    nlohmann::json j{{"mode", to_string(mode)},
                     {"config", to_json(config)},
                     {"seed", config.seed},
                     {"objectives", result.objectives},
                     {"records", result.records},
                     {"batches", std::move(batches)},
                     {"best_epoch", result.best_epoch},
                     {"stopped_early", result.stopped_early}};
    if (result.pool) j["permutation_pool"] = *result.pool;
    return j;
}

}  // namespace gat
