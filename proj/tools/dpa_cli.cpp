// dpa — deterministic partition-aggregation classifiers with exact poisoning
// certificates, plus brute-force verification oracles.
//
// Commands: ingest, train, certify, curve, verify, ra-compare, binary2means.
// Every run is a pure function of (config, input files); the manifest records
// all resolved settings so runs are self-describing. Model and feature-map
// blobs are cached content-addressed under DPA_CACHE_DIR (default:
// <out>/cache); the parallelism degree --jobs is deliberately not part of any
// cache key because results must not depend on it.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"

#include "dpa/binary_cluster.hpp"
#include "dpa/common.hpp"
#include "dpa/dataset.hpp"
#include "dpa/ensemble.hpp"
#include "dpa/learners.hpp"
#include "dpa/partition.hpp"
#include "dpa/verification.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes shared with CI: 0 sound/ok, 1 usage or runtime error,
// 2 verification counterexample (an implementation bug, never a theorem
// violation), 3 enumeration refused (cap exceeded).
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCounterexample = 2;
constexpr int kExitRefused = 3;

struct DataArgs {
    std::string container;  // canonical .dpads file
    std::string images;     // IDX pair
    std::string labels;
    std::string csv;
    bool csv_header = false;
    int num_classes = 0;
    bool hist_eq = false;
};

void add_data_options(CLI::App* cmd, DataArgs& a, const std::string& prefix,
                      const std::string& what) {
    const std::string p = prefix.empty() ? "" : prefix + "-";
    cmd->add_option("--" + p + "data", a.container, what + ": canonical .dpads container");
    cmd->add_option("--" + p + "images", a.images, what + ": IDX image file");
    cmd->add_option("--" + p + "labels", a.labels, what + ": IDX label file");
    cmd->add_option("--" + p + "csv", a.csv, what + ": CSV file (features..., label)");
    cmd->add_flag("--" + p + "csv-header", a.csv_header, what + ": skip one CSV header line");
    cmd->add_option("--" + p + "num-classes", a.num_classes,
                    what + ": class count (default: infer from labels)");
    cmd->add_flag("--" + p + "hist-eq", a.hist_eq,
                  what + ": histogram-equalize every image after loading");
}

dpa::Dataset load_data(const DataArgs& a, const std::string& what) {
    dpa::Dataset d;
    if (!a.container.empty()) {
        d = dpa::load_dataset_container(a.container);
        if (a.num_classes != 0 && a.num_classes != d.num_classes) {
            throw std::runtime_error(what + ": container declares " +
                                     std::to_string(d.num_classes) + " classes, flag says " +
                                     std::to_string(a.num_classes));
        }
    } else if (!a.images.empty() || !a.labels.empty()) {
        if (a.images.empty() || a.labels.empty()) {
            throw std::runtime_error(what + ": IDX input needs both images and labels files");
        }
        d = dpa::load_idx_dataset(a.images, a.labels, a.num_classes);
    } else if (!a.csv.empty()) {
        d = dpa::load_csv_dataset(a.csv, a.csv_header, a.num_classes);
    } else {
        throw std::runtime_error(what + ": no input given (use --" +
                                 (what == "training set" ? "train-" : "") +
                                 "data, --...-images/--...-labels, or --...-csv)");
    }
    if (a.hist_eq) d = dpa::histogram_equalize(d);
    return d;
}

json data_provenance(const DataArgs& a) {
    json j;
    if (!a.container.empty()) j["container"] = a.container;
    if (!a.images.empty()) j["images"] = a.images;
    if (!a.labels.empty()) j["labels"] = a.labels;
    if (!a.csv.empty()) j["csv"] = a.csv;
    j["hist_eq"] = a.hist_eq;
    return j;
}

/// Pipeline knobs shared by train and verify. Defaults are written into the
/// manifest so every run is reproducible from its artifacts alone.
struct PipelineArgs {
    int config_version = 1;
    std::string strategy = "ssdpa-sort";
    std::uint32_t k = 0;
    bool merge_labels = false;
    std::string learner = "nearest-centroid";
    std::uint32_t epochs = 20;
    double lr0 = 0.05;
    double lr_decay = 0.2;
    double input_scale = 1.0 / 255.0;
    std::string fmap = "identity";
    std::uint32_t fmap_out_dim = 40;
    std::uint64_t fmap_seed = 0;
    std::uint32_t kmeans_iters = 25;
};

void add_pipeline_options(CLI::App* cmd, PipelineArgs& a) {
    cmd->add_option("--config-version", a.config_version, "config schema version (must be 1)")
        ->check(CLI::IsMember({1}));
    cmd->add_option("--strategy", a.strategy, "partitioning strategy")
        ->check(CLI::IsMember({"dpa-hash", "ssdpa-sort", "ssdpa-hash"}));
    cmd->add_option("--k", a.k, "ensemble size (number of partitions)")->required();
    cmd->add_flag("--merge-labels", a.merge_labels,
                  "allow repeated sample values; identical samples share a partition");
    cmd->add_option("--learner", a.learner, "base classifier kind")
        ->check(CLI::IsMember({"nearest-centroid", "logistic-regression", "cluster-agree"}));
    cmd->add_option("--epochs", a.epochs, "logistic regression: SGD epochs");
    cmd->add_option("--lr0", a.lr0, "logistic regression: initial step size");
    cmd->add_option("--lr-decay", a.lr_decay, "logistic regression: step decay per epoch");
    cmd->add_option("--input-scale", a.input_scale, "logistic regression: feature scale factor");
    cmd->add_option("--fmap", a.fmap, "feature map kind")
        ->check(CLI::IsMember({"identity", "pca", "kmeans-bag", "cluster2"}));
    cmd->add_option("--fmap-out-dim", a.fmap_out_dim, "feature map output dimension");
    cmd->add_option("--fmap-seed", a.fmap_seed, "kmeans-bag initialization seed");
    cmd->add_option("--kmeans-iters", a.kmeans_iters, "kmeans-bag iteration cap");
}

dpa::LearnerConfig learner_config(const PipelineArgs& a) {
    dpa::LearnerConfig cfg;
    cfg.kind = dpa::learner_kind_from_string(a.learner);
    cfg.epochs = a.epochs;
    cfg.lr0 = a.lr0;
    cfg.lr_decay = a.lr_decay;
    cfg.input_scale = a.input_scale;
    return cfg;
}

dpa::FeatureMapConfig fmap_config(const PipelineArgs& a) {
    dpa::FeatureMapConfig cfg;
    cfg.kind = dpa::feature_map_kind_from_string(a.fmap);
    cfg.out_dim = a.fmap_out_dim;
    cfg.seed = a.fmap_seed;
    cfg.kmeans_iters = a.kmeans_iters;
    return cfg;
}

dpa::PartitionPlan make_plan(const dpa::Dataset& d, const PipelineArgs& a) {
    const dpa::Strategy strategy = dpa::strategy_from_string(a.strategy);
    switch (strategy) {
        case dpa::Strategy::DpaHash: return dpa::dpa_partition(d, a.k);
        case dpa::Strategy::SsdpaSort: return dpa::ssdpa_partition(d, a.k, a.merge_labels);
        case dpa::Strategy::SsdpaHash: return dpa::ssdpa_hash_partition(d, a.k);
    }
    throw std::logic_error("unreachable strategy");
}

json pipeline_manifest(const PipelineArgs& a) {
    return json{{"config_version", a.config_version},
                {"strategy", a.strategy},
                {"k", a.k},
                {"merge_labels", a.merge_labels},
                {"learner",
                 {{"kind", a.learner},
                  {"epochs", a.epochs},
                  {"lr0", a.lr0},
                  {"lr_decay", a.lr_decay},
                  {"input_scale", a.input_scale}}},
                {"feature_map",
                 {{"kind", a.fmap},
                  {"out_dim", a.fmap_out_dim},
                  {"seed", a.fmap_seed},
                  {"kmeans_iters", a.kmeans_iters}}}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw std::runtime_error(path.string() + ": write failed");
}

fs::path cache_directory(const fs::path& out_dir) {
    if (const char* env = std::getenv("DPA_CACHE_DIR"); env && *env) return fs::path(env);
    return out_dir / "cache";
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

int cmd_ingest(const DataArgs& data, const std::string& out_path) {
    const dpa::Dataset d = load_data(data, "input");
    dpa::save_dataset(d, out_path);
    const auto unique = dpa::verify_unique_samples(d);
    json j{{"out", out_path},
           {"m", d.size()},
           {"dim", d.dim},
           {"num_classes", d.num_classes},
           {"content_hash", dpa::hash_hex(dpa::dataset_content_hash(d))},
           {"unique_samples", unique.ok},
           {"sample_label_collisions", unique.collisions.size()}};
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const DataArgs& data, const PipelineArgs& pipe, const std::string& out_dir,
              int jobs) {
    const dpa::Dataset d = load_data(data, "training set");
    if (pipe.k > d.size()) {
        std::cerr << "warning: k=" << pipe.k << " exceeds m=" << d.size()
                  << "; partitions have size <= 1 and some are empty\n";
    }
    const dpa::PartitionPlan plan = make_plan(d, pipe);
    const dpa::LearnerConfig lcfg = learner_config(pipe);
    const dpa::FeatureMapConfig fcfg = fmap_config(pipe);
    const std::uint64_t dhash = plan.dataset_hash;
    const std::uint64_t phash = plan.content_hash();

    const fs::path out(out_dir);
    fs::create_directories(out);
    const fs::path cache = cache_directory(out);
    fs::create_directories(cache);

    dpa::Ensemble e;
    e.plan = plan;
    e.learner_cfg = lcfg;
    e.fmap_cfg = fcfg;
    e.num_classes = std::uint32_t(d.num_classes);
    e.dim = std::uint32_t(d.dim);
    e.shared_fmap = plan.strategy != dpa::Strategy::DpaHash ||
                    fcfg.kind == dpa::FeatureMapKind::Identity;

    const auto sorted = dpa::canonical_sort(d);
    const auto members = dpa::partition_members(plan);

    std::uint64_t fmaps_fitted = 0, fmaps_cached = 0;
    if (e.shared_fmap) {
        dpa::Fnv1a key;
        key.update("FMAPKEY1", 8);
        key.update_u64(dhash);
        key.update_u64(fcfg.content_hash());
        const fs::path fpath = cache / ("fmap_" + dpa::hash_hex(key.digest()) + ".bin");
        bool hit = false;
        if (fs::exists(fpath)) {
            try {
                e.fmaps.push_back(dpa::load_feature_map(fpath.string()));
                hit = true;
                ++fmaps_cached;
            } catch (const std::exception& ex) {
                std::cerr << "warning: discarding unreadable cache entry " << fpath << ": "
                          << ex.what() << '\n';
            }
        }
        if (!hit) {
            std::vector<dpa::Sample> unlabeled;
            unlabeled.reserve(sorted.size());
            for (const auto& t : sorted) unlabeled.push_back(t.sample);
            e.fmaps.push_back(dpa::fit_feature_map(std::move(unlabeled), fcfg, d.dim));
            const fs::path tmp = fpath.string() + ".tmp";
            dpa::save_feature_map(e.fmaps[0], tmp.string());
            fs::rename(tmp, fpath);
            ++fmaps_fitted;
        }
    } else {
        // Per-partition maps are functions of small partitions; fitting them
        // is cheaper than a cache round-trip, so they are not cached.
        e.fmaps.resize(plan.k);
        dpa::parallel_for(plan.k, jobs, [&](std::size_t i) {
            std::vector<dpa::Sample> part;
            part.reserve(members[i].size());
            for (std::uint32_t jj : members[i]) part.push_back(sorted[jj].sample);
            e.fmaps[i] = dpa::fit_partition_feature_map(part, fcfg, d.dim);
        });
        fmaps_fitted = plan.k;
    }

    e.models.resize(plan.k);
    std::vector<std::uint8_t> was_cached(plan.k, 0);
    dpa::parallel_for(plan.k, jobs, [&](std::size_t i) {
        const dpa::FeatureMap& fm = e.fmap_for(std::uint32_t(i));
        dpa::Fnv1a key;
        key.update("MDLKEY01", 8);
        key.update_u64(dhash);
        key.update_u64(phash);
        key.update_u64(lcfg.content_hash());
        key.update_u64(fm.content_hash());
        key.update_u64(i);
        const fs::path mpath = cache / ("model_" + dpa::hash_hex(key.digest()) + ".bin");
        if (fs::exists(mpath)) {
            try {
                e.models[i] = dpa::load_model(mpath.string());
                if (e.models[i].partition_index == i) {
                    was_cached[i] = 1;
                    return;
                }
            } catch (const std::exception&) {
                // fall through to retrain; the cache entry is stale or corrupt
            }
        }
        std::vector<dpa::LabeledSample> part;
        part.reserve(members[i].size());
        for (std::uint32_t jj : members[i]) part.push_back(sorted[jj]);
        e.models[i] = dpa::train_base(std::move(part), lcfg, fm, std::uint64_t(i), d.num_classes,
                                      std::uint32_t(i));
        const fs::path tmp = mpath.string() + ".tmp" + std::to_string(i);
        dpa::save_model(e.models[i], tmp.string());
        fs::rename(tmp, mpath);
    });
    std::uint64_t cache_hits = 0;
    for (auto b : was_cached) cache_hits += b;

    const fs::path edir = out / "ensemble";
    dpa::save_ensemble(e, edir.string());

    json manifest;
    manifest["command"] = "train";
    manifest["config"] = pipeline_manifest(pipe);
    manifest["train_input"] = data_provenance(data);
    manifest["dataset_hash"] = dpa::hash_hex(dhash);
    manifest["plan_hash"] = dpa::hash_hex(phash);
    manifest["m"] = d.size();
    manifest["dim"] = d.dim;
    manifest["num_classes"] = d.num_classes;
    manifest["ensemble_dir"] = edir.string();
    manifest["cache_dir"] = cache.string();
    manifest["models_trained"] = plan.k - cache_hits;
    manifest["cache_hits"] = cache_hits;
    manifest["fmaps_fitted"] = fmaps_fitted;
    manifest["fmaps_cached"] = fmaps_cached;
    manifest["jobs"] = jobs;  // runtime knob only; never part of cache keys
    write_text(out / "manifest.json", manifest.dump(2) + "\n");
    std::cout << manifest.dump(2) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// certify / curve
// ---------------------------------------------------------------------------

int cmd_certify(const std::string& ensemble_dir, const DataArgs& test_args,
                const std::string& out_dir, std::int64_t rho_max_opt, int jobs) {
    const dpa::Ensemble e = dpa::load_ensemble(ensemble_dir);  // refuses on hash mismatch
    const dpa::Dataset test = load_data(test_args, "test set");
    const dpa::Evaluation ev = dpa::evaluate(e, test, jobs);
    const std::uint32_t rho_max =
        rho_max_opt >= 0 ? std::uint32_t(rho_max_opt) : e.plan.k / 2;
    const dpa::CertifiedCurve curve =
        dpa::certified_accuracy_curve(ev, rho_max, dpa::threat_for(e.plan.strategy));

    const fs::path out(out_dir);
    fs::create_directories(out);
    dpa::write_certificates_jsonl(ev, (out / "certificates.jsonl").string());
    dpa::write_curve_csv(curve, (out / "curve.csv").string());
    dpa::write_summary_json(ev, curve, (out / "summary.json").string());

    std::ifstream summary(out / "summary.json");
    std::cout << summary.rdbuf();
    return kExitOk;
}

int cmd_curve(const std::string& certificates_path, const std::string& out_path,
              std::int64_t rho_max_opt) {
    std::ifstream in(certificates_path);
    if (!in) throw std::runtime_error(certificates_path + ": cannot open");
    dpa::Evaluation ev;
    std::string line;
    std::uint32_t max_rho_seen = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        dpa::Certificate cert;
        cert.predicted = j.at("predicted").get<int>();
        cert.rho_bar = j.at("rho_bar").get<std::uint32_t>();
        cert.counts = j.at("counts").get<std::vector<std::uint32_t>>();
        ev.certificates.push_back(std::move(cert));
        ev.true_labels.push_back(j.at("true_label").get<int>());
        max_rho_seen = std::max(max_rho_seen, ev.certificates.back().rho_bar);
    }
    const std::uint32_t rho_max = rho_max_opt >= 0 ? std::uint32_t(rho_max_opt) : max_rho_seen;
    const dpa::CertifiedCurve curve =
        dpa::certified_accuracy_curve(ev, rho_max, dpa::Threat::SymmetricDifference);
    dpa::write_curve_csv(curve, out_path);
    std::cout << "{\"points\": " << curve.points.size() << ", \"out\": \"" << out_path << "\"}\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

int cmd_verify(const DataArgs& train_args, const DataArgs& test_args, const PipelineArgs& pipe,
               const std::string& threat, std::int64_t rho_opt, std::uint64_t index,
               std::uint64_t cap, int jobs) {
    const dpa::Dataset d = load_data(train_args, "training set");
    const dpa::Dataset test = load_data(test_args, "test set");
    if (index >= test.size()) {
        throw std::runtime_error("--index " + std::to_string(index) +
                                 " out of range for test set of size " +
                                 std::to_string(test.size()));
    }
    const dpa::Sample& x = test.items[index].sample;

    dpa::PipelineConfig cfg;
    cfg.strategy = dpa::strategy_from_string(pipe.strategy);
    cfg.k = pipe.k;
    cfg.merge_labels = pipe.merge_labels;
    cfg.learner = learner_config(pipe);
    cfg.fmap = fmap_config(pipe);
    cfg.jobs = jobs;

    // Default rho: the sample's own certificate, the radius the theorems
    // promise to be safe.
    std::uint32_t rho;
    if (rho_opt >= 0) {
        rho = std::uint32_t(rho_opt);
    } else {
        const dpa::PartitionPlan plan = make_plan(d, pipe);
        const dpa::Ensemble e = dpa::train_ensemble(d, plan, cfg.learner, cfg.fmap, jobs);
        rho = dpa::certify(dpa::vote_counts(e, x)).rho_bar;
    }

    const auto t0 = std::chrono::steady_clock::now();
    dpa::Verdict verdict;
    if (threat == "label-flip") {
        verdict = dpa::exhaustive_label_flip_verify(d, cfg, x, rho, cap);
    } else if (threat == "removal") {
        verdict = dpa::exhaustive_removal_verify(d, cfg, x, rho, cap);
    } else {
        verdict = dpa::insertion_adversary_verify(d, cfg, x, rho);
    }
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();

    json j{{"threat", threat},
           {"rho", rho},
           {"verdict", dpa::to_string(verdict.outcome)},
           {"sets_checked", verdict.sets_checked},
           {"wall_time_ms", wall_ms},
           {"sample_index", index},
           {"baseline_prediction", verdict.baseline_prediction}};
    if (verdict.outcome == dpa::VerdictOutcome::Refused) {
        j["required_enumeration"] = verdict.required;
        j["enumeration_cap"] = cap;
    }
    if (verdict.outcome == dpa::VerdictOutcome::Counterexample) {
        j["changed_prediction"] = verdict.changed_prediction;
        if (!verdict.flips.empty()) {
            json flips = json::array();
            for (const auto& f : verdict.flips) {
                flips.push_back({{"index", f.index}, {"new_label", f.new_label}});
            }
            j["counterexample"] = {{"flips", flips}};
        }
        if (!verdict.removals.empty()) j["counterexample"] = {{"removals", verdict.removals}};
    }
    if (!verdict.note.empty()) j["note"] = verdict.note;
    std::cout << j.dump(2) << '\n';

    switch (verdict.outcome) {
        case dpa::VerdictOutcome::Sound: return kExitOk;
        case dpa::VerdictOutcome::Counterexample: return kExitCounterexample;
        case dpa::VerdictOutcome::Refused: return kExitRefused;
    }
    return kExitError;
}

// ---------------------------------------------------------------------------
// ra-compare
// ---------------------------------------------------------------------------

int cmd_ra_compare(std::uint64_t m, std::uint64_t s, std::uint64_t r) {
    const double ra = dpa::ra_poison_prob(m, s, r);
    // The matched partition-ensemble has k = m/s base classifiers.
    const std::uint64_t k = s == 0 ? 1 : std::max<std::uint64_t>(1, m / s);
    const double bound = dpa::dpa_poison_bound(r, k);
    json j{{"m", m},
           {"s", s},
           {"r", r},
           {"k", k},
           {"ra_poison_prob", ra},
           {"dpa_poison_bound", bound},
           {"difference", bound - ra}};
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// binary2means
// ---------------------------------------------------------------------------

dpa::Dataset filter_binary(const dpa::Dataset& d, int class_a, int class_b) {
    dpa::Dataset out;
    out.dim = d.dim;
    out.num_classes = 2;
    for (const auto& t : d.items) {
        if (t.label == class_a) out.items.push_back({t.sample, 0});
        else if (t.label == class_b) out.items.push_back({t.sample, 1});
    }
    return out;
}

int cmd_binary2means(const DataArgs& train_args, const DataArgs& test_args, int class_a,
                     int class_b, std::uint32_t max_iters, std::int64_t verify_rho,
                     std::uint64_t cap) {
    if (class_a == class_b) throw std::runtime_error("--class-a and --class-b must differ");
    const dpa::Dataset train_full = load_data(train_args, "training set");
    const dpa::Dataset test_full = load_data(test_args, "test set");
    const dpa::Dataset train = filter_binary(train_full, class_a, class_b);
    const dpa::Dataset test = filter_binary(test_full, class_a, class_b);
    if (train.items.empty()) {
        throw std::runtime_error("no training items with labels " + std::to_string(class_a) +
                                 " or " + std::to_string(class_b));
    }

    const dpa::BinaryCertificate cert = dpa::binary_certify(train, max_iters);
    const dpa::BinaryEvaluation ev = dpa::binary_evaluate(cert, test);

    json j{{"class_map", {{std::to_string(class_a), 0}, {std::to_string(class_b), 1}}},
           {"m", ev.m},
           {"test_size", test.size()},
           {"clean_accuracy", ev.clean_accuracy},
           {"rho_bar", ev.rho_bar},
           {"votes",
            {{cert.votes[0][0], cert.votes[0][1]}, {cert.votes[1][0], cert.votes[1][1]}}},
           {"hypothesis", cert.swapped ? "H-swapped" : "H-straight"},
           {"v_win", cert.v_win},
           {"v_lose", cert.v_lose}};

    int code = kExitOk;
    if (verify_rho >= 0) {
        const dpa::Verdict verdict =
            dpa::binary_flip_verify(train, std::uint32_t(verify_rho), cap);
        j["verify"] = {{"rho", verify_rho},
                       {"verdict", dpa::to_string(verdict.outcome)},
                       {"sets_checked", verdict.sets_checked}};
        if (verdict.outcome == dpa::VerdictOutcome::Counterexample) code = kExitCounterexample;
        if (verdict.outcome == dpa::VerdictOutcome::Refused) {
            j["verify"]["required_enumeration"] = verdict.required;
            code = kExitRefused;
        }
    }
    std::cout << j.dump(2) << '\n';
    return code;
}

// ---------------------------------------------------------------------------
// config files
// ---------------------------------------------------------------------------

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Expands a flat key=value run config into ordinary --key=value tokens.
///
/// CLI11's native config machinery resolves file keys against the root
/// command only, so subcommand options would force sectioned files. Expanding
/// the file ourselves keeps the format flat, validates every key against the
/// subcommand's actual options, and makes "flags override the file" literal:
/// a key the command line already sets is simply not injected.
void expand_config_args(CLI::App& app, std::vector<std::string>& args) {
    if (args.empty()) return;
    CLI::App* sub = app.get_subcommand_no_throw(args[0]);
    if (sub == nullptr || sub->get_option_no_throw("--config") == nullptr) return;

    // pull --config <path> / --config=<path> out of the raw arguments
    std::string path;
    std::vector<std::string> rest;
    rest.reserve(args.size());
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string value;
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw std::runtime_error("--config requires a file path");
            value = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            value = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
            continue;
        }
        if (!path.empty()) throw std::runtime_error("only one --config may be given");
        path = value;
    }
    if (path.empty()) return;

    std::ifstream in(path);
    if (!in) throw std::runtime_error("config file " + path + ": cannot open");

    // long options the command line already sets; those beat the file
    std::set<std::string> given;
    for (std::size_t i = 1; i < rest.size(); ++i) {
        if (rest[i].rfind("--", 0) != 0) continue;
        given.insert(rest[i].substr(0, rest[i].find('=')));
    }

    std::set<std::string> seen;
    std::vector<std::string> injected;
    bool versioned = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trimmed(line);
        if (t.empty() || t[0] == '#') continue;
        const std::string where = "config file " + path + " line " + std::to_string(lineno);
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw std::runtime_error(where + ": expected key=value");
        const std::string key = trimmed(t.substr(0, eq));
        const std::string value = trimmed(t.substr(eq + 1));
        if (key.empty()) throw std::runtime_error(where + ": empty key");
        if (!seen.insert(key).second) {
            throw std::runtime_error(where + ": duplicate key '" + key + "'");
        }
        if (key == "config-version") {
            if (value != "1") {
                throw std::runtime_error(where + ": unsupported config-version '" + value +
                                         "' (expected 1)");
            }
            versioned = true;
            continue;
        }
        if (key == "config") {
            throw std::runtime_error(where + ": config files cannot chain to other config files");
        }
        if (sub->get_option_no_throw("--" + key) == nullptr) {
            throw std::runtime_error(where + ": unknown key '" + key + "' for '" + args[0] + "'");
        }
        if (given.count("--" + key) != 0) continue;  // explicit flag wins
        injected.push_back("--" + key + "=" + value);
    }
    if (!versioned) {
        throw std::runtime_error("config file " + path +
                                 ": missing config-version (expected config-version=1)");
    }

    rest.insert(rest.end(), injected.begin(), injected.end());
    args = std::move(rest);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "dpa: partition-aggregation classifiers with exact certificates against "
        "training-set poisoning, plus brute-force verification oracles"};
    app.require_subcommand(1);
    int exit_code = kExitOk;

    // ingest ----------------------------------------------------------------
    auto* ingest = app.add_subcommand("ingest", "convert a dataset to the canonical container");
    static DataArgs ingest_data;
    static std::string ingest_out;
    add_data_options(ingest, ingest_data, "", "input");
    ingest->add_option("--out", ingest_out, "output .dpads path")->required();
    ingest->callback([&] { exit_code = cmd_ingest(ingest_data, ingest_out); });

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "partition the training set and train k models");
    static DataArgs train_data;
    static PipelineArgs train_pipe;
    static std::string train_out;
    static int train_jobs = dpa::default_jobs();
    add_data_options(train, train_data, "train", "training set");
    add_pipeline_options(train, train_pipe);
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--jobs", train_jobs, "worker threads (never affects results)");
    static std::string train_config;
    train->add_option("--config", train_config,
                      "flat key=value config file (config-version=1); flags override it");
    train->callback([&] { exit_code = cmd_train(train_data, train_pipe, train_out, train_jobs); });

    // certify ---------------------------------------------------------------
    auto* certify = app.add_subcommand("certify", "certificates + curve + summary for a test set");
    static std::string certify_ensemble;
    static DataArgs certify_test;
    static std::string certify_out = ".";
    static std::int64_t certify_rho_max = -1;
    static int certify_jobs = dpa::default_jobs();
    certify->add_option("--ensemble", certify_ensemble, "ensemble directory from train")
        ->required();
    add_data_options(certify, certify_test, "test", "test set");
    certify->add_option("--out", certify_out, "output directory");
    certify->add_option("--rho-max", certify_rho_max, "curve endpoint (default: k/2)");
    certify->add_option("--jobs", certify_jobs, "worker threads (never affects results)");
    certify->callback([&] {
        exit_code =
            cmd_certify(certify_ensemble, certify_test, certify_out, certify_rho_max, certify_jobs);
    });

    // curve -----------------------------------------------------------------
    auto* curve = app.add_subcommand("curve", "recompute a certified-accuracy curve from JSONL");
    static std::string curve_in, curve_out = "curve.csv";
    static std::int64_t curve_rho_max = -1;
    curve->add_option("--certificates", curve_in, "certificates.jsonl from certify")->required();
    curve->add_option("--out", curve_out, "output CSV path");
    curve->add_option("--rho-max", curve_rho_max, "curve endpoint (default: max rho_bar seen)");
    curve->callback([&] { exit_code = cmd_curve(curve_in, curve_out, curve_rho_max); });

    // verify ----------------------------------------------------------------
    auto* verify = app.add_subcommand("verify", "run a brute-force oracle against the certificate");
    static DataArgs verify_train, verify_test;
    static PipelineArgs verify_pipe;
    static std::string verify_threat;
    static std::int64_t verify_rho = -1;
    static std::uint64_t verify_index = 0;
    static std::uint64_t verify_cap = dpa::kDefaultEnumerationCap;
    static int verify_jobs = dpa::default_jobs();
    add_data_options(verify, verify_train, "train", "training set");
    add_data_options(verify, verify_test, "test", "test set");
    add_pipeline_options(verify, verify_pipe);
    verify->add_option("--threat", verify_threat, "attack model to enumerate")
        ->check(CLI::IsMember({"label-flip", "removal", "insertion"}))
        ->required();
    verify->add_option("--rho", verify_rho,
                       "attack budget (default: the sample's certified radius)");
    verify->add_option("--index", verify_index, "test sample to probe");
    verify->add_option("--enum-cap", verify_cap, "refuse enumerations larger than this");
    verify->add_option("--jobs", verify_jobs, "worker threads (never affects results)");
    static std::string verify_config;
    verify->add_option("--config", verify_config,
                       "flat key=value config file (config-version=1); flags override it");
    verify->callback([&] {
        exit_code = cmd_verify(verify_train, verify_test, verify_pipe, verify_threat, verify_rho,
                               verify_index, verify_cap, verify_jobs);
    });

    // ra-compare ------------------------------------------------------------
    auto* ra = app.add_subcommand(
        "ra-compare", "randomized-ablation poisoning probability vs the partition union bound");
    static std::uint64_t ra_m = 0, ra_s = 0, ra_r = 0;
    ra->add_option("m", ra_m, "training set size")->required();
    ra->add_option("s", ra_s, "ablation subset size")->required();
    ra->add_option("r", ra_r, "number of flipped labels")->required();
    ra->callback([&] { exit_code = cmd_ra_compare(ra_m, ra_s, ra_r); });

    // binary2means ----------------------------------------------------------
    auto* b2m = app.add_subcommand(
        "binary2means", "binary 2-means pipeline with a single global flip certificate");
    static DataArgs b2m_train, b2m_test;
    static int b2m_a = 0, b2m_b = 1;
    static std::uint32_t b2m_iters = 100;
    static std::int64_t b2m_verify_rho = -1;
    static std::uint64_t b2m_cap = dpa::kDefaultEnumerationCap;
    add_data_options(b2m, b2m_train, "train", "training set");
    add_data_options(b2m, b2m_test, "test", "test set");
    b2m->add_option("--class-a", b2m_a, "first class (mapped to label 0)")->required();
    b2m->add_option("--class-b", b2m_b, "second class (mapped to label 1)")->required();
    b2m->add_option("--max-iters", b2m_iters, "Lloyd iteration cap");
    b2m->add_option("--verify-rho", b2m_verify_rho,
                    "also run the exhaustive flip oracle up to this budget");
    b2m->add_option("--enum-cap", b2m_cap, "refuse enumerations larger than this");
    b2m->callback([&] {
        exit_code = cmd_binary2means(b2m_train, b2m_test, b2m_a, b2m_b, b2m_iters, b2m_verify_rho,
                                     b2m_cap);
    });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config_args(app, args);
        std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the message (or the help text)
        return code == 0 ? kExitOk : kExitError;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return kExitError;
    }
    return exit_code;
}
