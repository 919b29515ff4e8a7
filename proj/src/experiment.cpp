#include "gat/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "gat/error.hpp"
#include "gat/random.hpp"

#ifndef GAT_VERSION
#define GAT_VERSION "0.0.0"
#endif

namespace gat {

namespace fs = std::filesystem;

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"gat-vs-at", "weight-ablation", "task-count", "attack-target",
                                                "transfer",  "correlation",     "scarce-data"};
    return names;
}

namespace {

Variant make(std::string name, TrainMode mode, std::vector<std::string> aux, const TrainConfig& base) {
    return {std::move(name), mode, std::move(aux), base, 1.0};
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::string file_stem(const std::string& variant, std::uint64_t seed) {
    std::string s;
    for (char c : variant) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '-';
    return s + "_s" + std::to_string(seed);
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes through a temporary so readers never see a partial file.
void write_file(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string crc_hex(const std::string& bytes) {
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", crc32_of(bytes));
    return hex;
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

TrainConfig apply_overrides(const TrainConfig& c, const nlohmann::json& overrides) {
    if (overrides.is_null() || overrides.empty()) return c;
    if (!overrides.is_object()) throw ConfigError("config overrides must be an object");
    auto j = to_json(c);
    j.merge_patch(overrides);
    return train_config_from_json(j);
}

}  // namespace

std::vector<Variant> preset_variants(const ExperimentOptions& o) {
    const TrainConfig& b = o.base;
    std::vector<Variant> v;
    const std::string& p = o.preset;
    if (p == "gat-vs-at") {
        v.push_back(make("standard", TrainMode::standard, {}, b));
        v.push_back(make("madry", TrainMode::madry, {}, b));
        v.push_back(make("gat-macro", TrainMode::gat, {"macro"}, b));
    } else if (p == "weight-ablation") {
        for (auto w : {Weighting::equal, Weighting::mgda})
            for (std::string aux : {"none", "jigsaw", "rotation", "macro"}) {
                auto var = make(to_string(w) + "/" + aux, TrainMode::gat, {}, b);
                if (aux != "none") var.auxiliary = {aux};
                var.config.weighting = w;
                v.push_back(var);
            }
    } else if (p == "task-count") {
        const std::vector<std::string> order{"macro", "rotation", "jigsaw"};
        for (std::size_t k = 0; k <= order.size(); ++k)
            v.push_back(make("tasks-" + std::to_string(k + 1), TrainMode::gat,
                             std::vector<std::string>(order.begin(), order.begin() + std::ptrdiff_t(k)), b));
    } else if (p == "attack-target") {
        for (auto [name, sel] : {std::pair{"main", TaskSelector::main_only}, std::pair{"both", TaskSelector::all_tasks},
                                 std::pair{"auxiliary", TaskSelector::auxiliary_only}}) {
            auto var = make(std::string("gat-macro/") + name, TrainMode::gat, {"macro"}, b);
            var.config.attack.selector = sel;
            v.push_back(var);
        }
    } else if (p == "transfer") {
        v.push_back(make("standard", TrainMode::standard, {}, b));
        v.push_back(make("madry", TrainMode::madry, {}, b));
        v.push_back(make("gat-macro", TrainMode::gat, {"macro"}, b));
        v.push_back(make("gat-rotation", TrainMode::gat, {"rotation"}, b));
    } else if (p == "correlation") {
        for (std::string aux : {"macro", "rotation", "jigsaw", "gender", "age", "marker"}) {
            v.push_back(make("equal/" + aux, TrainMode::gat, {aux}, b));
            v.back().config.weighting = Weighting::equal;
        }
    } else if (p == "scarce-data") {
        for (double f : {0.1, 0.25, 0.5}) {
            auto var = make("gat-macro@" + std::to_string(int(std::lround(f * 100))) + "%", TrainMode::gat, {"macro"}, b);
            var.data_fraction = f;
            v.push_back(var);
        }
    } else {
        throw ConfigError("unknown preset '" + p + "' (expected one of " + join(preset_names(), ", ") + ")");
    }
    for (auto& var : v) var.config = apply_overrides(var.config, o.overrides);
    return v;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const RunRow& r) {
    std::string correct;
    for (bool c : r.robust_correct) correct += c ? '1' : '0';
    nlohmann::json j{{"variant", r.variant},
                     {"seed", r.seed},
                     {"mode", r.mode},
                     {"tasks", r.tasks},
                     {"data_fraction", r.data_fraction},
                     {"train_count", r.train_count},
                     {"clean_accuracy", r.clean_accuracy},
                     {"robust_accuracy", r.robust_accuracy},
                     {"vulnerability", r.vulnerability},
                     {"best_epoch", r.best_epoch},
                     {"epochs_run", r.epochs_run},
                     {"robust_correct", correct},
                     {"epochs", r.epochs},
                     {"seconds", r.seconds}};
    if (r.clean_auc) j["clean_auc"] = *r.clean_auc;
    if (r.robust_auc) j["robust_auc"] = *r.robust_auc;
    if (r.gradient_metrics)
        j["gradient_metrics"] = {{"cosine", r.gradient_metrics->cosine},
                                 {"magnitude_similarity", r.gradient_metrics->magnitude_similarity},
                                 {"curvature", r.gradient_metrics->curvature}};
    return j;
}

RunRow run_row_from_json(const nlohmann::json& j) {
    RunRow r;
    try {
        r.variant = j.at("variant").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.mode = j.at("mode").get<std::string>();
        r.tasks = j.at("tasks").get<std::string>();
        r.data_fraction = j.at("data_fraction").get<double>();
        r.train_count = j.at("train_count").get<std::size_t>();
        r.clean_accuracy = j.at("clean_accuracy").get<double>();
        r.robust_accuracy = j.at("robust_accuracy").get<double>();
        r.vulnerability = j.at("vulnerability").get<double>();
        r.best_epoch = j.at("best_epoch").get<std::size_t>();
        r.epochs_run = j.at("epochs_run").get<std::size_t>();
        for (char c : j.at("robust_correct").get<std::string>()) r.robust_correct.push_back(c == '1');
        r.epochs = j.value("epochs", nlohmann::json::array());
        r.seconds = j.value("seconds", 0.0);
        if (j.contains("clean_auc")) r.clean_auc = j["clean_auc"].get<double>();
        if (j.contains("robust_auc")) r.robust_auc = j["robust_auc"].get<double>();
        if (j.contains("gradient_metrics")) {
            const auto& g = j["gradient_metrics"];
            r.gradient_metrics = PairMetrics{g.at("cosine").get<double>(), g.at("magnitude_similarity").get<double>(),
                                             g.at("curvature").get<double>()};
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed journal entry: ") + e.what());
    }
    return r;
}

std::vector<AggregateRow> aggregate(const std::vector<RunRow>& rows) {
    std::vector<AggregateRow> out;
    auto stats = [](const std::vector<double>& xs, double& mean, double& sd) {
        mean = 0.0;
        for (double x : xs) mean += x;
        mean /= double(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        sd = xs.size() > 1 ? std::sqrt(ss / double(xs.size() - 1)) : 0.0;
    };
    std::vector<std::string> order;
    for (const auto& r : rows)
        if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    for (const auto& name : order) {
        std::vector<double> c, rb, vu;
        for (const auto& r : rows)
            if (r.variant == name) {
                c.push_back(r.clean_accuracy);
                rb.push_back(r.robust_accuracy);
                vu.push_back(r.vulnerability);
            }
        AggregateRow a;
        a.variant = name;
        a.runs = c.size();
        stats(c, a.clean_mean, a.clean_std);
        stats(rb, a.robust_mean, a.robust_std);
        stats(vu, a.vulnerability_mean, a.vulnerability_std);
        out.push_back(a);
    }
    return out;
}

std::string runs_csv(const std::vector<RunRow>& rows) {
    std::string s =
        "variant,seed,mode,tasks,data_fraction,train_count,clean_accuracy,robust_accuracy,clean_auc,robust_auc,"
        "vulnerability,best_epoch,epochs_run,cosine,magnitude_similarity,curvature\n";
    for (const auto& r : rows) {
        s += r.variant + "," + std::to_string(r.seed) + "," + r.mode + "," + r.tasks + "," + fmt(r.data_fraction) + "," +
             std::to_string(r.train_count) + "," + fmt(r.clean_accuracy) + "," + fmt(r.robust_accuracy) + "," +
             (r.clean_auc ? fmt(*r.clean_auc) : "") + "," + (r.robust_auc ? fmt(*r.robust_auc) : "") + "," +
             fmt(r.vulnerability) + "," + std::to_string(r.best_epoch) + "," + std::to_string(r.epochs_run) + ",";
        if (r.gradient_metrics)
            s += fmt(r.gradient_metrics->cosine) + "," + fmt(r.gradient_metrics->magnitude_similarity) + "," +
                 fmt(r.gradient_metrics->curvature);
        else
            s += ",,";
        s += "\n";
    }
    return s;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
    std::string s = "variant,runs,clean_mean,clean_std,robust_mean,robust_std,vulnerability_mean,vulnerability_std\n";
    for (const auto& a : rows)
        s += a.variant + "," + std::to_string(a.runs) + "," + fmt(a.clean_mean) + "," + fmt(a.clean_std) + "," +
             fmt(a.robust_mean) + "," + fmt(a.robust_std) + "," + fmt(a.vulnerability_mean) + "," +
             fmt(a.vulnerability_std) + "\n";
    return s;
}

std::optional<PairMetrics> input_gradient_metrics(const MultiTaskModel& model, const LabeledCorpus& corpus,
                                                  std::span<const std::size_t> ids, std::uint64_t pool_seed, std::uint64_t seed,
                                                  std::size_t batch_size) {
    const auto enabled = model.enabled_tasks();
    if (enabled.size() < 2) throw ConfigError("gradient metrics need at least one enabled auxiliary task");
    if (ids.empty()) throw ConfigError("empty evaluation set");
    std::vector<TaskSpec> specs;
    for (auto t : enabled) specs.push_back(model.head(t).spec);
    AugmentPipeline pipeline(specs, pool_seed);
    Rng rng(seed);
    PairMetrics total;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < ids.size(); lo += batch_size) {
        auto part = ids.subspan(lo, std::min(batch_size, ids.size() - lo));
        auto pb = prepare_batch(model, corpus, part, pipeline, rng);
        ModelTarget target(model, pb.labels);
        GradientBundle bundle;
        bundle.tag = GradientTag::input;
        for (auto t : enabled) {
            std::vector<std::size_t> one{t};
            auto lg = target.evaluate(pb.x, one, {}, true);
            bundle.grads.emplace_back(lg.grad.data().begin(), lg.grad.data().end());
        }
        // a saturated head can have an exactly zero input gradient, where the angle is undefined
        if (std::any_of(bundle.grads.begin(), bundle.grads.end(), [](const std::vector<double>& g) {
                return std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
            }))
            continue;
        auto m = bundle_metrics(bundle);
        total.cosine += m.cosine;
        total.magnitude_similarity += m.magnitude_similarity;
        total.curvature += m.curvature;
        ++batches;
    }
    if (batches == 0) return std::nullopt;
    total.cosine /= double(batches);
    total.magnitude_similarity /= double(batches);
    total.curvature /= double(batches);
    return total;
}

// ---------------------------------------------------------------------------

namespace {

struct Plan {
    std::string preset;
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
};

nlohmann::json plan_json(const Plan& p, const ExperimentOptions& o) {
    nlohmann::json vars = nlohmann::json::array();
    for (const auto& v : p.variants)
        vars.push_back({{"name", v.name},
                        {"mode", to_string(v.mode)},
                        {"auxiliary", v.auxiliary},
                        {"data_fraction", v.data_fraction},
                        {"config", to_json(v.config)}});
    return {{"preset", p.preset}, {"seeds", p.seeds}, {"hidden", o.hidden}, {"variants", vars}};
}

std::vector<std::string> plan_variant_names(const nlohmann::json& plan) {
    std::vector<std::string> out;
    for (const auto& v : plan.at("variants")) out.push_back(v.at("name").get<std::string>());
    return out;
}

std::vector<RunRow> read_journal(const fs::path& dir) {
    std::vector<RunRow> rows;
    const fs::path p = dir / "journal.jsonl";
    if (!fs::exists(p)) return rows;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            break;  // torn final line from an interrupted write
        }
        rows.push_back(run_row_from_json(j));
    }
    return rows;
}

// Rows ordered by plan variant order, then seed.
void sort_rows(std::vector<RunRow>& rows, const std::vector<std::string>& order) {
    auto rank = [&](const std::string& v) {
        return std::size_t(std::find(order.begin(), order.end(), v) - order.begin());
    };
    std::stable_sort(rows.begin(), rows.end(), [&](const RunRow& a, const RunRow& b) {
        return std::pair{rank(a.variant), a.seed} < std::pair{rank(b.variant), b.seed};
    });
}

std::vector<TaskSpec> variant_tasks(const Variant& v, const LabeledCorpus& corpus, std::size_t grid) {
    std::vector<TaskSpec> specs{tasks::fine_target(corpus.fine_classes())};
    for (const auto& a : v.auxiliary) specs.push_back(tasks::auxiliary(a, grid));
    return specs;
}

std::size_t jigsaw_grid_for(const LabeledCorpus& corpus, const ExperimentOptions& o) {
    if (!o.corpus_path) return o.data.jigsaw_grid;
    return corpus.dims.height % 4 == 0 ? 4 : 2;
}

MultiTaskModel initial_model(const Variant& v, const LabeledCorpus& corpus, const ExperimentOptions& o,
                             std::uint64_t seed) {
    std::vector<std::size_t> widths{corpus.dims.size()};
    widths.insert(widths.end(), o.hidden.begin(), o.hidden.end());
    return MultiTaskModel::build({widths}, variant_tasks(v, corpus, jigsaw_grid_for(corpus, o)), seed);
}

LabeledCorpus variant_corpus(const Variant& v, const LabeledCorpus& corpus, std::uint64_t seed) {
    if (v.data_fraction >= 1.0) return corpus;
    return split_subset(corpus, v.data_fraction, true, seed, Split::train);
}

RunRow execute(const Variant& v, std::uint64_t seed, const LabeledCorpus& full, const ExperimentOptions& o,
               const fs::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig cfg = v.config;
    cfg.seed = seed;
    const LabeledCorpus corpus = variant_corpus(v, full, seed);
    const auto model = initial_model(v, corpus, o, seed);
    auto result = train(v.mode, model, corpus, cfg);
    const auto test = corpus.indices(Split::test);
    auto ev = evaluate_model(result.model, corpus, test, cfg.eval_attack, seed + 0x5eed);

    RunRow r;
    r.variant = v.name;
    r.seed = seed;
    r.mode = to_string(v.mode);
    std::vector<std::string> names;
    for (const auto& h : model.heads()) names.push_back(h.spec.name);
    r.tasks = join(names, "+");
    r.data_fraction = v.data_fraction;
    r.train_count = corpus.indices(Split::train).size();
    r.clean_accuracy = ev.clean_accuracy;
    r.robust_accuracy = ev.robust_accuracy;
    r.clean_auc = ev.clean_auc;
    r.robust_auc = ev.robust_auc;
    r.vulnerability = ev.vulnerability;
    r.best_epoch = result.best_epoch;
    r.epochs_run = result.records.size();
    r.robust_correct = ev.robust_correct;
    r.epochs = result.records;
    if (model.task_count() > 1) {
        auto full_model = result.model;
        for (auto& h : full_model.heads()) h.enabled = true;
        r.gradient_metrics = input_gradient_metrics(full_model, corpus, test, cfg.pool_seed, seed + 0x9a7);
    }
    const std::string stem = file_stem(v.name, seed);
    if (o.save_models) save_checkpoint(result.model, dir / "models" / (stem + ".json"));
    write_file(dir / "runs" / (stem + ".json"), run_manifest(v.mode, cfg, result).dump(1) + "\n");
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

std::vector<TransferCell> transfer_matrix(const Plan& plan, const LabeledCorpus& corpus, const fs::path& dir) {
    std::vector<TransferCell> cells;
    const auto test = corpus.indices(Split::test);
    for (auto seed : plan.seeds) {
        std::vector<MultiTaskModel> models;
        for (const auto& v : plan.variants)
            models.push_back(load_checkpoint(dir / "models" / (file_stem(v.name, seed) + ".json")));
        for (std::size_t s = 0; s < models.size(); ++s)
            for (std::size_t t = 0; t < models.size(); ++t) {
                const auto& cfg = plan.variants[s].config;
                auto ev = evaluate_transfer(models[s], models[t], corpus, test, cfg.eval_attack, seed + 0x7a5);
                cells.push_back({seed, plan.variants[s].name, plan.variants[t].name, 1.0 - ev.robust_accuracy});
            }
    }
    return cells;
}

std::string transfer_csv(const std::vector<TransferCell>& cells) {
    std::string s = "seed,surrogate,target,success_rate\n";
    for (const auto& c : cells)
        s += std::to_string(c.seed) + "," + c.surrogate + "," + c.target + "," + fmt(c.success_rate) + "\n";
    return s;
}

std::vector<TransferCell> parse_transfer_csv(const std::string& text) {
    std::vector<TransferCell> cells;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        std::string x;
        while (std::getline(ls, x, ',')) f.push_back(x);
        if (f.size() != 4) throw IoError("malformed transfer.csv line: " + line);
        cells.push_back({std::stoull(f[0]), f[1], f[2], std::stod(f[3])});
    }
    return cells;
}

const char* kMetricNames[] = {"cosine", "magnitude_similarity", "curvature"};

double metric_of(const PairMetrics& m, int k) {
    return k == 0 ? m.cosine : k == 1 ? m.magnitude_similarity : m.curvature;
}

std::map<std::string, PearsonResult> correlations(const std::vector<RunRow>& rows) {
    std::map<std::string, PearsonResult> out;
    for (int k = 0; k < 3; ++k) {
        std::vector<double> xs, ys;
        for (const auto& r : rows)
            if (r.gradient_metrics) {
                xs.push_back(metric_of(*r.gradient_metrics, k));
                ys.push_back(r.robust_accuracy);
            }
        if (xs.size() < 3) continue;
        try {
            out[kMetricNames[k]] = pearson_r(xs, ys);
        } catch (const NumericError&) {
            // constant column; no correlation defined
        }
    }
    return out;
}

std::string report_text(const std::string& preset, const std::vector<RunRow>& rows,
                        const std::vector<TransferCell>& transfer) {
    std::ostringstream md;
    md << "# " << preset << "\n\n";
    md << "Target-task accuracy on the test split, mean ± sample std over seeds.\n\n";
    md << "| variant | runs | clean | robust | vulnerability |\n|---|---|---|---|---|\n";
    for (const auto& a : aggregate(rows))
        md << "| " << a.variant << " | " << a.runs << " | " << fmt4(a.clean_mean) << " ± " << fmt4(a.clean_std) << " | "
           << fmt4(a.robust_mean) << " ± " << fmt4(a.robust_std) << " | " << fmt4(a.vulnerability_mean) << " ± "
           << fmt4(a.vulnerability_std) << " |\n";

    // McNemar between each GAT variant and the adversarial-training baseline.
    const RunRow* any_base = nullptr;
    for (const auto& r : rows)
        if (r.mode == "madry") any_base = &r;
    std::ostringstream mc;
    if (any_base) {
        const std::string base = any_base->variant;
        mc << "\n## McNemar vs " << base << " (robust correctness, shared test set)\n\n";
        mc << "| variant | seed | b (only variant right) | c (only baseline right) | chi2 | p < 0.05 |\n|---|---|---|---|---|---|\n";
        for (const auto& r : rows) {
            if (r.mode != "gat") continue;
            auto it = std::find_if(rows.begin(), rows.end(),
                                   [&](const RunRow& x) { return x.variant == base && x.seed == r.seed; });
            if (it == rows.end() || it->robust_correct.size() != r.robust_correct.size()) continue;
            std::size_t b = 0, c = 0;
            for (std::size_t i = 0; i < r.robust_correct.size(); ++i) {
                b += r.robust_correct[i] && !it->robust_correct[i];
                c += !r.robust_correct[i] && it->robust_correct[i];
            }
            mc << "| " << r.variant << " | " << r.seed << " | " << b << " | " << c << " | ";
            if (b + c == 0) {
                mc << "- | no (identical) |\n";
                continue;
            }
            auto t = mcnemar_test(b, c);
            mc << fmt4(t.chi2) << " | " << (t.reject ? "yes" : "no") << " |\n";
        }
    }
    md << mc.str();

    if (!transfer.empty()) {
        std::vector<std::string> names;
        for (const auto& c : transfer)
            if (std::find(names.begin(), names.end(), c.surrogate) == names.end()) names.push_back(c.surrogate);
        md << "\n## Transfer success rate (rows: surrogate, columns: target; mean over seeds)\n\n| surrogate |";
        for (const auto& n : names) md << " " << n << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < names.size(); ++i) md << "---|";
        md << "\n";
        for (const auto& s : names) {
            md << "| " << s << " |";
            for (const auto& t : names) {
                double sum = 0.0;
                int n = 0;
                for (const auto& c : transfer)
                    if (c.surrogate == s && c.target == t) {
                        sum += c.success_rate;
                        ++n;
                    }
                md << " " << fmt4(n ? sum / n : 0.0) << " |";
            }
            md << "\n";
        }
    }

    auto corr = correlations(rows);
    if (preset == "correlation" && !corr.empty()) {
        md << "\n## Pearson correlation with robust accuracy (input-gradient measures, target vs auxiliary)\n\n";
        md << "| measure | r | p |\n|---|---|---|\n";
        for (const auto& [name, pr] : corr) md << "| " << name << " | " << fmt4(pr.r) << " | " << fmt4(pr.p_value) << " |\n";
    }
    return md.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentOptions& o) {
    if (o.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (o.threads == 0) throw ConfigError("threads must be >= 1");
    Plan plan{o.preset, preset_variants(o), o.seeds};
    if (plan.preset == "transfer" && !o.save_models) throw ConfigError("the transfer preset needs saved models");

    const fs::path dir = o.dir ? *o.dir : o.out_root / o.preset / (o.timestamp.empty() ? utc_timestamp() : o.timestamp);
    fs::create_directories(dir / "models");
    fs::create_directories(dir / "runs");

    const auto pj = plan_json(plan, o);
    if (fs::exists(dir / "plan.json")) {
        if (nlohmann::json::parse(read_file(dir / "plan.json")) != pj)
            throw ConfigError("experiment directory " + dir.string() + " holds a different plan; refusing to resume");
    } else {
        write_file(dir / "plan.json", pj.dump(2) + "\n");
    }

    const LabeledCorpus corpus = o.corpus_path ? load_corpus(*o.corpus_path) : generate_synthetic(o.data);
    auto dataset = dataset_manifest(corpus, o.corpus_path ? *o.corpus_path : fs::path("synthetic.gatc"));
    if (!o.corpus_path) dataset["generator"] = {{"n", o.data.n},
                                                {"image_size", o.data.image_size},
                                                {"fine_classes", o.data.fine_classes},
                                                {"seed", o.data.seed},
                                                {"noise", o.data.noise},
                                                {"val_count", o.data.val_count},
                                                {"test_count", o.data.test_count}};
    write_file(dir / "dataset.manifest.json", dataset.dump(2) + "\n");

    std::vector<RunRow> rows = read_journal(dir);
    std::set<std::pair<std::string, std::uint64_t>> done;
    for (const auto& r : rows) done.insert({r.variant, r.seed});
    std::vector<std::pair<const Variant*, std::uint64_t>> pending;
    for (const auto& v : plan.variants)
        for (auto s : plan.seeds)
            if (!done.count({v.name, s})) pending.push_back({&v, s});

    std::mutex mu;
    std::exception_ptr failure;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next++;
            if (i >= pending.size()) return;
            {
                std::lock_guard lock(mu);
                if (failure) return;
            }
            try {
                RunRow row = execute(*pending[i].first, pending[i].second, corpus, o, dir);
                std::lock_guard lock(mu);
                std::ofstream j(dir / "journal.jsonl", std::ios::app);
                if (!j) throw IoError("cannot append to the journal");
                j << to_json(row).dump() << "\n";
                rows.push_back(std::move(row));
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min(o.threads, std::max<std::size_t>(1, pending.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<std::string> order;
    for (const auto& v : plan.variants) order.push_back(v.name);
    sort_rows(rows, order);

    ExperimentResult res;
    res.dir = dir;
    res.rows = rows;
    res.aggregates = aggregate(rows);
    if (plan.preset == "transfer") {
        res.transfer = transfer_matrix(plan, corpus, dir);
        write_file(dir / "transfer.csv", transfer_csv(res.transfer));
    }
    res.correlation = correlations(rows);
    if (plan.preset == "correlation") {
        for (int k = 0; k < 3; ++k) {
            std::string s = std::string("variant,seed,") + kMetricNames[k] + ",robust_accuracy\n";
            for (const auto& r : rows)
                if (r.gradient_metrics)
                    s += r.variant + "," + std::to_string(r.seed) + "," + fmt(metric_of(*r.gradient_metrics, k)) + "," +
                         fmt(r.robust_accuracy) + "\n";
            write_file(dir / (std::string("correlation_") + kMetricNames[k] + ".csv"), s);
        }
        std::string s = "metric,r,p_value\n";
        for (const auto& [name, pr] : res.correlation) s += name + "," + fmt(pr.r) + "," + fmt(pr.p_value) + "\n";
        write_file(dir / "correlation.csv", s);
    }

    write_file(dir / "runs.csv", runs_csv(rows));
    write_file(dir / "aggregate.csv", aggregate_csv(res.aggregates));
    write_file(dir / "report.md", report_text(plan.preset, rows, res.transfer));

    // Manifest last: its presence marks a complete experiment.
    nlohmann::json files = nlohmann::json::array();
    std::vector<fs::path> listed;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "manifest.json") listed.push_back(e.path());
    std::sort(listed.begin(), listed.end());
    for (const auto& p : listed) {
        const auto bytes = read_file(p);
        files.push_back({{"path", fs::relative(p, dir).generic_string()}, {"bytes", bytes.size()}, {"crc32", crc_hex(bytes)}});
    }
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : rows) {
        auto j = to_json(r);
        j.erase("robust_correct");
        j["run_manifest"] = "runs/" + file_stem(r.variant, r.seed) + ".json";
        if (o.save_models) j["checkpoint"] = "models/" + file_stem(r.variant, r.seed) + ".json";
        runs.push_back(j);
    }
    nlohmann::json manifest{{"preset", plan.preset},
                            {"version", GAT_VERSION},
                            {"plan", pj},
                            {"dataset", "dataset.manifest.json"},
                            {"runs", runs},
                            {"files", files}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return res;
}

std::string render_report(const fs::path& dir) {
    if (!fs::exists(dir / "plan.json")) throw IoError("no plan.json in " + dir.string());
    const auto plan = nlohmann::json::parse(read_file(dir / "plan.json"));
    auto rows = read_journal(dir);
    sort_rows(rows, plan_variant_names(plan));
    std::vector<TransferCell> transfer;
    if (fs::exists(dir / "transfer.csv")) transfer = parse_transfer_csv(read_file(dir / "transfer.csv"));
    auto text = report_text(plan.at("preset").get<std::string>(), rows, transfer);
    write_file(dir / "report.md", text);
    return text;
}

}  // namespace gat
