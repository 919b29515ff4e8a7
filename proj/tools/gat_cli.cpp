#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gat/error.hpp"
#include "gat/experiment.hpp"
#include "gat/train.hpp"

namespace {

using namespace gat;
using nlohmann::json;

constexpr int kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4;

// Training and attack flags. Only flags that were actually given (on the
// command line or in the config file) end up in the config patch, so preset
// defaults survive unless overridden.
struct Flag {
    std::string name;
    std::vector<std::string> paths;  // JSON pointers into TrainConfig
    char type;                       // u, i, d, b, s
    std::string help;
    std::string value{};
    CLI::Option* opt = nullptr;
};

std::vector<Flag> train_flags() {
    return {
        {"--epochs", {"/epochs"}, 'u', "training epochs"},
        {"--batch-size", {"/batch_size"}, 'u', "minibatch size"},
        {"--lr", {"/lr"}, 'd', "initial learning rate"},
        {"--momentum", {"/momentum"}, 'd', "SGD momentum"},
        {"--lr-horizon", {"/lr_horizon"}, 'u', "cosine schedule horizon in epochs (0 = epochs)"},
        {"--patience", {"/patience"}, 'u', "early-stopping patience in epochs"},
        {"--weighting", {"/weighting"}, 's', "equal or mgda"},
        {"--regularizer", {"/regularizer"}, 's', "off, on or detached"},
        {"--reg-weighting", {"/reg_weighting"}, 's', "mgda or fixed"},
        {"--mgda-normalization", {"/mgda_normalization"}, 's', "none, l2, loss or loss+"},
        {"--mgda-scale", {"/mgda_scale"}, 'd', "multiplier of the MGDA direction"},
        {"--mgda-max-iters", {"/mgda/max_iters"}, 'u', "Frank-Wolfe iteration cap"},
        {"--mgda-tol", {"/mgda/tol"}, 'd', "Frank-Wolfe gap tolerance"},
        {"--pool-seed", {"/pool_seed"}, 'u', "jigsaw permutation pool seed"},
        {"--val-limit", {"/val_limit"}, 'u', "validation samples used for early stopping (0 = all)"},
        {"--norm", {"/attack/norm", "/eval_attack/norm"}, 's', "attack norm: linf or l2"},
        {"--epsilon", {"/attack/epsilon", "/eval_attack/epsilon"}, 'd', "attack budget"},
        {"--attack-step", {"/attack/step", "/eval_attack/step"}, 'd', "PGD step size"},
        {"--attack-steps", {"/attack/steps", "/eval_attack/steps"}, 'u', "PGD iterations"},
        {"--random-start", {"/attack/random_start", "/eval_attack/random_start"}, 'b', "PGD random start"},
        {"--selector", {"/attack/selector"}, 's', "training attack target: main, all or auxiliary"},
    };
}

void add_flags(CLI::App* app, std::vector<Flag>& flags) {
    for (auto& f : flags) f.opt = app->add_option(f.name, f.value, f.help);
}

json to_value(const Flag& f) {
    try {
        switch (f.type) {
            case 'u': return std::stoull(f.value);
            case 'i': return std::stoll(f.value);
            case 'd': return std::stod(f.value);
            case 'b': {
                std::string v = f.value;
                for (auto& c : v) c = char(std::tolower(static_cast<unsigned char>(c)));
                if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
                if (v == "false" || v == "0" || v == "no" || v == "off") return false;
                throw ConfigError("");
            }
            default: return f.value;
        }
    } catch (const std::exception&) {
        throw ConfigError("invalid value '" + f.value + "' for " + f.name);
    }
}

json config_patch(const std::vector<Flag>& flags) {
    json patch = json::object();
    for (const auto& f : flags) {
        if (f.opt->count() == 0) continue;
        std::string v = f.value;
        for (const auto& p : f.paths) {
            json value = to_value(f);
            if (f.name == "--selector") {
                if (v == "main") value = "main_only";
                if (v == "all" || v == "both") value = "all_tasks";
                if (v == "auxiliary") value = "auxiliary_only";
            }
            patch[json::json_pointer(p)] = value;
        }
    }
    return patch;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* what) {
    std::vector<std::size_t> out;
    for (const auto& x : split_list(s)) {
        try {
            out.push_back(std::stoull(x));
        } catch (const std::exception&) {
            throw ConfigError(std::string("invalid ") + what + " entry '" + x + "'");
        }
    }
    return out;
}

struct DataFlags {
    std::string path;
    SyntheticOptions synth;
};

void add_data_flags(CLI::App* app, DataFlags& d, bool with_path) {
    if (with_path) app->add_option("--data", d.path, "GATC1 corpus file (default: generate the synthetic corpus)");
    app->add_option("--n", d.synth.n, "synthetic sample count");
    app->add_option("--image-size", d.synth.image_size, "synthetic image side");
    app->add_option("--classes", d.synth.fine_classes, "synthetic fine classes");
    app->add_option("--data-seed", d.synth.seed, "synthetic generator seed");
    app->add_option("--noise", d.synth.noise, "synthetic pixel noise");
    app->add_option("--val", d.synth.val_count, "validation split size");
    app->add_option("--test", d.synth.test_count, "test split size");
    app->add_option("--jigsaw-grid", d.synth.jigsaw_grid, "jigsaw grid side");
}

LabeledCorpus load_data(const DataFlags& d) {
    return d.path.empty() ? generate_synthetic(d.synth) : load_corpus(d.path);
}

std::uint64_t seed_value(const std::string& text, const char* what) {
    try {
        std::size_t pos = 0;
        auto v = std::stoull(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("invalid ") + what + " '" + text + "'");
    }
}

bool argv_has(int argc, char** argv, const char* flag) {
    const std::size_t n = std::strlen(flag);
    for (int i = 1; i < argc; ++i)
        if (std::strncmp(argv[i], flag, n) == 0 && (argv[i][n] == '\0' || argv[i][n] == '=')) return true;
    return false;
}

// Precedence: command line, then GAT_SEED, then config file, then default.
std::uint64_t resolve_seed(int argc, char** argv, std::uint64_t current) {
    if (argv_has(argc, argv, "--seed")) return current;
    if (const char* env = std::getenv("GAT_SEED")) return seed_value(env, "GAT_SEED");
    return current;
}

TrainConfig build_config(const std::vector<Flag>& flags, std::uint64_t seed) {
    auto j = to_json(TrainConfig{});
    j.merge_patch(config_patch(flags));
    j["seed"] = seed;
    return train_config_from_json(j);
}

AttackConfig attack_from_flags(const std::vector<Flag>& flags) {
    auto c = build_config(flags, 0).attack;
    c.selector = TaskSelector::main_only;
    c.validate();
    return c;
}

MultiTaskModel make_model(const LabeledCorpus& corpus, const std::vector<std::string>& aux, const std::vector<std::size_t>& hidden,
                          std::size_t grid, std::uint64_t seed) {
    std::vector<TaskSpec> specs{tasks::fine_target(corpus.fine_classes())};
    for (const auto& a : aux) specs.push_back(tasks::auxiliary(a, grid));
    std::vector<std::size_t> widths{corpus.dims.size()};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    return MultiTaskModel::build({widths}, specs, seed);
}

json eval_json(const EvalResult& e) {
    json j{{"count", e.count},
           {"clean_accuracy", e.clean_accuracy},
           {"robust_accuracy", e.robust_accuracy},
           {"vulnerability", e.vulnerability}};
    if (e.clean_auc) j["clean_auc"] = *e.clean_auc;
    if (e.robust_auc) j["robust_auc"] = *e.robust_auc;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
}

int run(int argc, char** argv) {
    CLI::App app{"Guided adversarial training lab: data, training, attacks and experiment presets"};
    app.require_subcommand(1);
    app.set_config("--config", "", "key = value config file ([verb] sections or verb.key entries)");

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "render the synthetic shapes corpus to a GATC1 file");
    DataFlags gen_data;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output corpus path")->required();
    add_data_flags(gen, gen_data, false);

    // train
    auto* tr = app.add_subcommand("train", "train one model and evaluate it on the test split");
    DataFlags tr_data;
    auto tr_flags = train_flags();
    std::string tr_mode = "gat", tr_aux = "macro", tr_hidden = "128,64", tr_out, tr_manifest;
    std::uint64_t tr_seed = 0;
    double tr_fraction = 1.0;
    add_data_flags(tr, tr_data, true);
    add_flags(tr, tr_flags);
    tr->add_option("--seed", tr_seed, "training seed (GAT_SEED overrides the config file)");
    tr->add_option("--mode", tr_mode, "standard, madry or gat");
    tr->add_option("--aux", tr_aux, "comma-separated auxiliary tasks (macro, rotation, jigsaw, age, gender, marker)");
    tr->add_option("--hidden", tr_hidden, "comma-separated hidden widths");
    tr->add_option("--fraction", tr_fraction, "stratified fraction of the training split");
    tr->add_option("--out", tr_out, "checkpoint path");
    tr->add_option("--manifest", tr_manifest, "run manifest path (config, epoch records, per-batch weights)");

    // attack
    auto* at = app.add_subcommand("attack", "run PGD against a checkpoint and write per-sample losses");
    DataFlags at_data;
    auto at_flags = train_flags();
    std::string at_model, at_split = "test", at_out;
    std::uint64_t at_seed = 0;
    add_data_flags(at, at_data, true);
    add_flags(at, at_flags);
    at->add_option("--model", at_model, "checkpoint")->required();
    at->add_option("--split", at_split, "train, val or test");
    at->add_option("--out", at_out, "CSV output (default stdout)");
    at->add_option("--seed", at_seed, "attack seed");

    // eval
    auto* ev = app.add_subcommand("eval", "clean and robust metrics of a checkpoint");
    DataFlags ev_data;
    auto ev_flags = train_flags();
    std::string ev_model, ev_surrogate, ev_split = "test";
    std::uint64_t ev_seed = 0;
    add_data_flags(ev, ev_data, true);
    add_flags(ev, ev_flags);
    ev->add_option("--model", ev_model, "checkpoint")->required();
    ev->add_option("--surrogate", ev_surrogate, "craft the attack on this checkpoint instead (transfer)");
    ev->add_option("--split", ev_split, "train, val or test");
    ev->add_option("--seed", ev_seed, "attack seed");

    // experiment
    auto* ex = app.add_subcommand("experiment", "run a preset over seeds and write CSV tables and a report");
    DataFlags ex_data;
    auto ex_flags = train_flags();
    std::string ex_preset, ex_out = "runs", ex_seeds = "0,1,2", ex_resume, ex_timestamp, ex_hidden = "128,64";
    std::size_t ex_threads = 1;
    std::uint64_t ex_seed_base = 0;
    add_data_flags(ex, ex_data, true);
    add_flags(ex, ex_flags);
    ex->add_option("--preset", ex_preset, "gat-vs-at, weight-ablation, task-count, attack-target, transfer, correlation, scarce-data")
        ->required();
    ex->add_option("--out", ex_out, "output root");
    ex->add_option("--seeds", ex_seeds, "comma-separated seeds");
    auto* ex_seed_opt = ex->add_option("--seed", ex_seed_base, "single seed (same as --seeds N)");
    ex->add_option("--threads", ex_threads, "parallel runs");
    ex->add_option("--resume", ex_resume, "experiment directory to resume");
    ex->add_option("--timestamp", ex_timestamp, "directory name under <out>/<preset> (default: UTC time)");
    ex->add_option("--hidden", ex_hidden, "comma-separated hidden widths");

    // report
    auto* rp = app.add_subcommand("report", "re-render report.md of an experiment directory");
    std::string rp_dir;
    rp->add_option("--dir", rp_dir, "experiment directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    if (gen->parsed()) {
        auto corpus = generate_synthetic(gen_data.synth);
        save_corpus(corpus, gen_out);
        json out = dataset_manifest(corpus, gen_out);
        std::cout << out.dump(2) << "\n";
        return kOk;
    }

    if (tr->parsed()) {
        tr_seed = resolve_seed(argc, argv, tr_seed);
        auto cfg = build_config(tr_flags, tr_seed);
        auto corpus = load_data(tr_data);
        if (tr_fraction < 1.0) corpus = split_subset(corpus, tr_fraction, true, tr_seed, Split::train);
        const auto mode = train_mode_from_string(tr_mode);
        const auto aux = mode == TrainMode::gat ? split_list(tr_aux) : std::vector<std::string>{};
        auto model = make_model(corpus, aux, parse_sizes(tr_hidden, "hidden width"), tr_data.synth.jigsaw_grid, tr_seed);
        auto result = train(mode, model, corpus, cfg);
        if (!tr_out.empty()) save_checkpoint(result.model, tr_out);
        if (!tr_manifest.empty()) write_text(tr_manifest, run_manifest(mode, cfg, result).dump(1) + "\n");
        auto e = evaluate_model(result.model, corpus, corpus.indices(Split::test), cfg.eval_attack, tr_seed + 0x5eed);
        json out{{"mode", to_string(mode)},
                 {"seed", tr_seed},
                 {"best_epoch", result.best_epoch},
                 {"epochs_run", result.records.size()},
                 {"test", eval_json(e)}};
        std::cout << out.dump(2) << "\n";
        return kOk;
    }

    if (at->parsed()) {
        at_seed = resolve_seed(argc, argv, at_seed);
        auto corpus = load_data(at_data);
        auto model = load_checkpoint(at_model).disable_auxiliary();
        const auto ids = corpus.indices(split_from_string(at_split));
        if (ids.empty()) throw ConfigError("split '" + at_split + "' is empty");
        std::vector<TaskLabels> labels(model.task_count());
        labels[0] = corpus.labels(model.head(0).spec, ids);
        ModelTarget target(model, labels);
        auto pb = pgd_attack(target, corpus.batch(ids), attack_from_flags(at_flags), at_seed);
        std::vector<std::string> names;
        for (const auto& h : model.heads()) names.push_back(h.spec.name);
        if (at_out.empty()) {
            write_attack_csv(std::cout, pb, ids, names);
        } else {
            std::ofstream out(at_out);
            if (!out) throw IoError("cannot write " + at_out);
            write_attack_csv(out, pb, ids, names);
        }
        return kOk;
    }

    if (ev->parsed()) {
        ev_seed = resolve_seed(argc, argv, ev_seed);
        auto corpus = load_data(ev_data);
        auto model = load_checkpoint(ev_model);
        const auto ids = corpus.indices(split_from_string(ev_split));
        const auto attack = attack_from_flags(ev_flags);
        auto e = ev_surrogate.empty()
                     ? evaluate_model(model, corpus, ids, attack, ev_seed)
                     : evaluate_transfer(load_checkpoint(ev_surrogate), model, corpus, ids, attack, ev_seed);
        json out = eval_json(e);
        if (!ev_surrogate.empty()) out["transfer_success_rate"] = 1.0 - e.robust_accuracy;
        std::cout << out.dump(2) << "\n";
        return kOk;
    }

    if (ex->parsed()) {
        ExperimentOptions o;
        o.preset = ex_preset;
        if (argv_has(argc, argv, "--seed") || ex_seed_opt->count()) {
            ex_seed_base = resolve_seed(argc, argv, ex_seed_base);
            o.seeds = {ex_seed_base};
        } else if (const char* env = std::getenv("GAT_SEED"); env && !argv_has(argc, argv, "--seeds")) {
            o.seeds = {seed_value(env, "GAT_SEED")};
        } else {
            o.seeds.clear();
            for (const auto& s : split_list(ex_seeds)) o.seeds.push_back(seed_value(s, "seed"));
        }
        o.overrides = config_patch(ex_flags);
        o.hidden = parse_sizes(ex_hidden, "hidden width");
        o.data = ex_data.synth;
        if (!ex_data.path.empty()) o.corpus_path = ex_data.path;
        o.out_root = ex_out;
        o.timestamp = ex_timestamp;
        if (!ex_resume.empty()) o.dir = ex_resume;
        o.threads = ex_threads;
        auto res = run_experiment(o);
        std::cout << res.dir.string() << "\n";
        for (const auto& a : res.aggregates)
            std::cout << "  " << a.variant << ": clean " << a.clean_mean << " robust " << a.robust_mean << " (n=" << a.runs
                      << ")\n";
        return kOk;
    }

    if (rp->parsed()) {
        std::cout << render_report(rp_dir);
        return kOk;
    }
    return kConfig;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const gat::ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const gat::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const gat::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
}
