#include "dpa/ensemble.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dpa {

namespace fs = std::filesystem;

std::string to_string(Threat t) {
    switch (t) {
        case Threat::SymmetricDifference: return "symmetric-difference";
        case Threat::LabelFlip: return "label-flip";
    }
    throw std::logic_error("unreachable threat value");
}

Threat threat_for(Strategy s) {
    return s == Strategy::DpaHash ? Threat::SymmetricDifference : Threat::LabelFlip;
}

FeatureMap fit_partition_feature_map(const std::vector<Sample>& samples,
                                     const FeatureMapConfig& cfg, std::size_t in_dim) {
    FeatureMapConfig identity_cfg;  // kind Identity
    if (cfg.kind == FeatureMapKind::Identity || samples.empty()) {
        return fit_feature_map({}, identity_cfg, in_dim);
    }
    if (cfg.kind == FeatureMapKind::KmeansBag || cfg.kind == FeatureMapKind::Cluster2) {
        std::vector<Sample> uniq = samples;
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        const std::size_t need = cfg.kind == FeatureMapKind::Cluster2 ? 2 : cfg.out_dim;
        if (uniq.size() < need) return fit_feature_map({}, identity_cfg, in_dim);
    }
    return fit_feature_map(samples, cfg, in_dim);
}

Ensemble train_ensemble(const Dataset& d, const PartitionPlan& plan, const LearnerConfig& lcfg,
                        const FeatureMapConfig& fcfg, int jobs) {
    if (plan.dataset_hash != dataset_content_hash(d)) {
        throw std::invalid_argument(
            "partition plan was computed from a different dataset (content hash mismatch)");
    }
    Ensemble e;
    e.plan = plan;
    e.learner_cfg = lcfg;
    e.fmap_cfg = fcfg;
    e.num_classes = std::uint32_t(d.num_classes);
    e.dim = std::uint32_t(d.dim);

    const auto sorted = canonical_sort(d);
    const auto members = partition_members(plan);

    // ssdpa strategies share one map fitted on all unlabeled samples; the
    // identity map is parameter-free so sharing it is equally sound for dpa.
    e.shared_fmap =
        plan.strategy != Strategy::DpaHash || fcfg.kind == FeatureMapKind::Identity;
    if (e.shared_fmap) {
        std::vector<Sample> unlabeled;
        unlabeled.reserve(sorted.size());
        for (const auto& t : sorted) unlabeled.push_back(t.sample);
        e.fmaps.push_back(fit_feature_map(std::move(unlabeled), fcfg, d.dim));
    } else {
        e.fmaps.resize(plan.k);
        parallel_for(plan.k, jobs, [&](std::size_t i) {
            std::vector<Sample> part;
            part.reserve(members[i].size());
            for (std::uint32_t j : members[i]) part.push_back(sorted[j].sample);
            e.fmaps[i] = fit_partition_feature_map(part, fcfg, d.dim);
        });
    }

    e.models.resize(plan.k);
    parallel_for(plan.k, jobs, [&](std::size_t i) {
        std::vector<LabeledSample> part;
        part.reserve(members[i].size());
        for (std::uint32_t j : members[i]) part.push_back(sorted[j]);
        e.models[i] = train_base(std::move(part), lcfg, e.fmap_for(std::uint32_t(i)),
                                 /*seed=*/std::uint64_t(i), d.num_classes, std::uint32_t(i));
    });
    return e;
}

std::vector<std::uint32_t> vote_counts(const Ensemble& e, const Sample& x) {
    if (x.dim() != e.dim) {
        throw std::invalid_argument("sample dimension " + std::to_string(x.dim()) +
                                    " does not match ensemble dimension " + std::to_string(e.dim));
    }
    std::vector<std::uint32_t> counts(e.num_classes, 0);
    if (e.shared_fmap) {
        const auto f = e.fmaps[0].transform(x);
        for (const auto& m : e.models) ++counts[std::size_t(m.predict_features(f))];
    } else {
        for (std::uint32_t i = 0; i < e.models.size(); ++i) {
            ++counts[std::size_t(predict(e.models[i], e.fmaps[i], x))];
        }
    }
    return counts;
}

int aggregate(const std::vector<std::uint32_t>& counts) {
    int best = 0;
    for (std::size_t c = 1; c < counts.size(); ++c) {
        if (counts[c] > counts[std::size_t(best)]) best = int(c);  // strict >: ties stay low
    }
    return best;
}

Certificate certify(const std::vector<std::uint32_t>& counts) {
    Certificate cert;
    cert.counts = counts;
    cert.predicted = aggregate(counts);
    std::uint64_t k = 0;
    for (auto c : counts) k += c;
    const std::size_t winner = std::size_t(cert.predicted);
    bool have_challenger = false;
    std::uint64_t challenger = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (c == winner) continue;
        const std::uint64_t v = counts[c] + (c < winner ? 1 : 0);
        if (!have_challenger || v > challenger) {
            challenger = v;
            have_challenger = true;
        }
    }
    // A one-class universe can never change prediction; cap at floor(k/2).
    cert.rho_bar = have_challenger ? std::uint32_t((counts[winner] - challenger) / 2)
                                   : std::uint32_t(k / 2);
    return cert;
}

Evaluation evaluate(const Ensemble& e, const Dataset& test, int jobs) {
    if (test.dim != e.dim) {
        throw std::invalid_argument("test set dimension " + std::to_string(test.dim) +
                                    " does not match ensemble dimension " + std::to_string(e.dim));
    }
    const std::size_t n = test.items.size();
    const std::uint32_t k = e.plan.k;
    Evaluation ev;
    ev.true_labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ev.true_labels[i] = test.items[i].label;

    // With a shared map, transform each test item once and reuse the
    // features across all k models.
    std::vector<std::vector<double>> feats;
    if (e.shared_fmap) {
        feats.resize(n);
        parallel_for(n, jobs, [&](std::size_t i) {
            feats[i] = e.fmaps[0].transform(test.items[i].sample);
        });
    }

    // preds[model][item]; each model writes only its own row, so the result
    // is independent of scheduling.
    std::vector<std::vector<std::uint16_t>> preds(k, std::vector<std::uint16_t>(n));
    parallel_for(k, jobs, [&](std::size_t mi) {
        const auto& model = e.models[mi];
        if (e.shared_fmap) {
            for (std::size_t i = 0; i < n; ++i) {
                preds[mi][i] = std::uint16_t(model.predict_features(feats[i]));
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                preds[mi][i] = std::uint16_t(predict(model, e.fmaps[mi], test.items[i].sample));
            }
        }
    });

    ev.certificates.resize(n);
    std::uint64_t ensemble_correct = 0;
    std::uint64_t base_correct = 0;  // summed over all models and items
    std::vector<std::uint32_t> counts(e.num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::uint32_t mi = 0; mi < k; ++mi) {
            ++counts[preds[mi][i]];
            if (int(preds[mi][i]) == ev.true_labels[i]) ++base_correct;
        }
        ev.certificates[i] = certify(counts);
        if (ev.certificates[i].predicted == ev.true_labels[i]) ++ensemble_correct;
    }
    ev.clean_accuracy = n == 0 ? 0.0 : double(ensemble_correct) / double(n);
    ev.base_classifier_accuracy =
        n == 0 ? 0.0 : double(base_correct) / (double(n) * double(k));
    return ev;
}

CertifiedCurve certified_accuracy_curve(const Evaluation& ev, std::uint32_t rho_max,
                                        Threat threat) {
    CertifiedCurve curve;
    curve.threat = threat;
    const std::size_t n = ev.certificates.size();
    // histogram over rho_bar of correctly classified items, then a suffix
    // sum: certified(rho) = #{correct && rho_bar >= rho} / n
    std::vector<std::uint64_t> by_rho(std::size_t(rho_max) + 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (ev.certificates[i].predicted != ev.true_labels[i]) continue;
        ++by_rho[std::min<std::size_t>(ev.certificates[i].rho_bar, rho_max)];
    }
    std::uint64_t suffix = 0;
    std::vector<std::uint64_t> certified(std::size_t(rho_max) + 1, 0);
    for (std::size_t r = rho_max + 1; r-- > 0;) {
        suffix += by_rho[r];
        certified[r] = suffix;
    }
    curve.points.resize(std::size_t(rho_max) + 1);
    for (std::uint32_t r = 0; r <= rho_max; ++r) {
        curve.points[r] = {r, n == 0 ? 0.0 : double(certified[r]) / double(n)};
    }
    return curve;
}

std::optional<std::uint32_t> median_certified_robustness(const CertifiedCurve& curve) {
    std::optional<std::uint32_t> best;
    for (const auto& p : curve.points) {
        if (p.certified_accuracy >= 0.5) best = p.rho;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Artifact I/O
// ---------------------------------------------------------------------------

namespace {

std::string format_fraction(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

void write_certificates_jsonl(const Evaluation& ev, const std::string& path) {
    std::ofstream out(path, std::ios::binary);  // binary: no newline translation
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    std::string line;
    for (std::size_t i = 0; i < ev.certificates.size(); ++i) {
        const auto& cert = ev.certificates[i];
        line.clear();
        line += "{\"index\":";
        line += std::to_string(i);
        line += ",\"true_label\":";
        line += std::to_string(ev.true_labels[i]);
        line += ",\"predicted\":";
        line += std::to_string(cert.predicted);
        line += ",\"counts\":[";
        for (std::size_t c = 0; c < cert.counts.size(); ++c) {
            if (c) line += ',';
            line += std::to_string(cert.counts[c]);
        }
        line += "],\"rho_bar\":";
        line += std::to_string(cert.rho_bar);
        line += "}\n";
        out << line;
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

void write_curve_csv(const CertifiedCurve& curve, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "rho,certified_accuracy\n";
    for (const auto& p : curve.points) {
        out << p.rho << ',' << format_fraction(p.certified_accuracy) << '\n';
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

void write_summary_json(const Evaluation& ev, const CertifiedCurve& curve,
                        const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    const auto median = median_certified_robustness(curve);
    out << "{\n";
    out << "  \"clean_accuracy\": " << format_fraction(ev.clean_accuracy) << ",\n";
    out << "  \"median_certified_robustness\": "
        << (median ? std::to_string(*median) : std::string("\"N/A\"")) << ",\n";
    out << "  \"base_classifier_accuracy\": " << format_fraction(ev.base_classifier_accuracy)
        << ",\n";
    out << "  \"threat\": \"" << to_string(curve.threat) << "\"\n";
    out << "}\n";
    if (!out) throw std::runtime_error(path + ": write failed");
}

void save_ensemble(const Ensemble& e, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "models");
    save_plan(e.plan, (fs::path(dir) / "plan.json").string());

    nlohmann::json j;
    j["format_version"] = 1;
    j["strategy"] = to_string(e.plan.strategy);
    j["k"] = e.plan.k;
    j["num_classes"] = e.num_classes;
    j["dim"] = e.dim;
    j["dataset_hash"] = hash_hex(e.plan.dataset_hash);
    j["plan_hash"] = hash_hex(e.plan.content_hash());
    j["learner"] = {{"kind", to_string(e.learner_cfg.kind)},
                    {"epochs", e.learner_cfg.epochs},
                    {"lr0", e.learner_cfg.lr0},
                    {"lr_decay", e.learner_cfg.lr_decay},
                    {"input_scale", e.learner_cfg.input_scale}};
    j["feature_map"] = {{"kind", to_string(e.fmap_cfg.kind)},
                        {"out_dim", e.fmap_cfg.out_dim},
                        {"seed", e.fmap_cfg.seed},
                        {"kmeans_iters", e.fmap_cfg.kmeans_iters}};
    j["shared_fmap"] = e.shared_fmap;

    std::vector<std::string> fmap_hashes;
    for (std::size_t i = 0; i < e.fmaps.size(); ++i) {
        const std::string name =
            e.shared_fmap ? std::string("fmap_shared.bin")
                          : "fmap_" + std::to_string(i) + ".bin";
        save_feature_map(e.fmaps[i], (fs::path(dir) / name).string());
        fmap_hashes.push_back(hash_hex(e.fmaps[i].content_hash()));
    }
    j["fmap_hashes"] = fmap_hashes;

    std::vector<std::string> model_hashes;
    for (std::size_t i = 0; i < e.models.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "model_%06zu.bin", i);
        save_model(e.models[i], (fs::path(dir) / "models" / name).string());
        model_hashes.push_back(hash_hex(e.models[i].content_hash()));
    }
    j["model_hashes"] = model_hashes;

    std::ofstream out(fs::path(dir) / "ensemble.json");
    if (!out) throw std::runtime_error(dir + "/ensemble.json: cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error(dir + "/ensemble.json: write failed");
}

Ensemble load_ensemble(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "ensemble.json");
    if (!in) throw std::runtime_error(dir + "/ensemble.json: cannot open");
    nlohmann::json j = nlohmann::json::parse(in);

    Ensemble e;
    e.plan = load_plan((fs::path(dir) / "plan.json").string());
    if (hash_hex(e.plan.content_hash()) != j.at("plan_hash").get<std::string>()) {
        throw std::runtime_error(dir + ": plan hash mismatch (stale artifact)");
    }
    e.num_classes = j.at("num_classes").get<std::uint32_t>();
    e.dim = j.at("dim").get<std::uint32_t>();
    e.learner_cfg.kind = learner_kind_from_string(j.at("learner").at("kind").get<std::string>());
    e.learner_cfg.epochs = j.at("learner").at("epochs").get<std::uint32_t>();
    e.learner_cfg.lr0 = j.at("learner").at("lr0").get<double>();
    e.learner_cfg.lr_decay = j.at("learner").at("lr_decay").get<double>();
    e.learner_cfg.input_scale = j.at("learner").at("input_scale").get<double>();
    e.fmap_cfg.kind =
        feature_map_kind_from_string(j.at("feature_map").at("kind").get<std::string>());
    e.fmap_cfg.out_dim = j.at("feature_map").at("out_dim").get<std::uint32_t>();
    e.fmap_cfg.seed = j.at("feature_map").at("seed").get<std::uint64_t>();
    e.fmap_cfg.kmeans_iters = j.at("feature_map").at("kmeans_iters").get<std::uint32_t>();
    e.shared_fmap = j.at("shared_fmap").get<bool>();

    const auto fmap_hashes = j.at("fmap_hashes").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < fmap_hashes.size(); ++i) {
        const std::string name =
            e.shared_fmap ? std::string("fmap_shared.bin")
                          : "fmap_" + std::to_string(i) + ".bin";
        FeatureMap fm = load_feature_map((fs::path(dir) / name).string());
        if (hash_hex(fm.content_hash()) != fmap_hashes[i]) {
            throw std::runtime_error(dir + "/" + name + ": content hash mismatch (stale artifact)");
        }
        e.fmaps.push_back(std::move(fm));
    }

    const auto model_hashes = j.at("model_hashes").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < model_hashes.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "model_%06zu.bin", i);
        BaseModel m = load_model((fs::path(dir) / "models" / name).string());
        if (hash_hex(m.content_hash()) != model_hashes[i]) {
            throw std::runtime_error(dir + "/models/" + name +
                                     ": content hash mismatch (stale artifact)");
        }
        if (m.partition_index != i) {
            throw std::runtime_error(dir + "/models/" + name + ": partition index " +
                                     std::to_string(m.partition_index) + " does not match slot " +
                                     std::to_string(i));
        }
        e.models.push_back(std::move(m));
    }
    if (e.models.size() != e.plan.k) {
        throw std::runtime_error(dir + ": manifest lists " + std::to_string(e.models.size()) +
                                 " models for k=" + std::to_string(e.plan.k));
    }
    return e;
}

}  // namespace dpa
