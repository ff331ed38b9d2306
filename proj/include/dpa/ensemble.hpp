#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpa/dataset.hpp"
#include "dpa/learners.hpp"
#include "dpa/partition.hpp"

namespace dpa {

/// The trained partition ensemble: k base models plus the feature map(s)
/// their inputs pass through. For ssdpa strategies a single feature map is
/// fitted on all unlabeled samples and shared (the trusted-unlabeled-data
/// channel); for dpa-hash the map is identity or fitted per partition — a
/// shared fitted map would let one poisoned sample touch every base model.
struct Ensemble {
    PartitionPlan plan;
    LearnerConfig learner_cfg;
    FeatureMapConfig fmap_cfg;
    bool shared_fmap = true;
    std::vector<FeatureMap> fmaps;  // size 1 if shared, else k
    std::vector<BaseModel> models;  // size k, models[i].partition_index == i
    std::uint32_t num_classes = 0;
    std::uint32_t dim = 0;

    const FeatureMap& fmap_for(std::uint32_t partition) const {
        return shared_fmap ? fmaps[0] : fmaps[partition];
    }
};

/// Per-test-sample certificate: with counts n and predicted class c,
///   rho_bar = floor((n_c - max_{c' != c}(n_{c'} + [c' < c])) / 2)
/// is the number of partition-local edits guaranteed not to change the
/// prediction. Classes never voted for still challenge with count 0.
struct Certificate {
    int predicted = 0;
    std::vector<std::uint32_t> counts;
    std::uint32_t rho_bar = 0;
};

enum class Threat { SymmetricDifference, LabelFlip };

std::string to_string(Threat t);

struct CurvePoint {
    std::uint32_t rho = 0;
    double certified_accuracy = 0.0;
};

/// certified_accuracy(rho) = fraction of test items both correctly
/// classified and certified at radius >= rho. Non-increasing; the rho = 0
/// point is the clean accuracy.
struct CertifiedCurve {
    Threat threat = Threat::SymmetricDifference;
    std::vector<CurvePoint> points;
};

struct Evaluation {
    std::vector<Certificate> certificates;  // aligned with test.items
    std::vector<int> true_labels;
    double clean_accuracy = 0.0;
    /// Mean over all k base models of single-model accuracy on the test set.
    double base_classifier_accuracy = 0.0;
};

/// Trains all k base models (seed = partition index). `plan` must have been
/// computed from `d` (hash-checked). Results are independent of `jobs`.
/// Per-partition feature maps that cannot be fitted (empty partition, or too
/// few distinct samples for kmeans-bag) fall back to identity for that
/// partition alone.
Ensemble train_ensemble(const Dataset& d, const PartitionPlan& plan, const LearnerConfig& lcfg,
                        const FeatureMapConfig& fcfg, int jobs = 1);

/// The per-partition fitting rule train_ensemble applies for non-shared
/// maps: the configured map when the partition supports it, identity when it
/// cannot be fitted (empty partition, or fewer distinct samples than the map
/// needs). Exposed so cached trainers reproduce the exact same fallback.
FeatureMap fit_partition_feature_map(const std::vector<Sample>& samples,
                                     const FeatureMapConfig& cfg, std::size_t in_dim);

/// counts[c] = number of base models predicting class c; sums to k.
std::vector<std::uint32_t> vote_counts(const Ensemble& e, const Sample& x);

/// Plurality winner, ties to the smaller class index.
int aggregate(const std::vector<std::uint32_t>& counts);

Certificate certify(const std::vector<std::uint32_t>& counts);

/// Predicts and certifies every test item; also accumulates the mean base
/// model accuracy. Deterministic for any `jobs`.
Evaluation evaluate(const Ensemble& e, const Dataset& test, int jobs = 1);

/// Threat label is derived from the partitioning strategy: dpa-hash
/// certifies symmetric-difference edits, ssdpa strategies certify label
/// flips.
Threat threat_for(Strategy s);

CertifiedCurve certified_accuracy_curve(const Evaluation& ev, std::uint32_t rho_max, Threat threat);

/// Largest rho with certified accuracy >= 0.5; nullopt ("N/A") if even the
/// rho = 0 point is below one half.
std::optional<std::uint32_t> median_certified_robustness(const CertifiedCurve& curve);

// ---------------------------------------------------------------------------
// Artifact I/O
// ---------------------------------------------------------------------------

/// One JSON object per test sample:
///   {"index":i,"true_label":y,"predicted":c,"counts":[...],"rho_bar":r}
/// Emitted manually with fixed key order so equal inputs give equal bytes.
void write_certificates_jsonl(const Evaluation& ev, const std::string& path);

/// CSV "rho,certified_accuracy" rows.
void write_curve_csv(const CertifiedCurve& curve, const std::string& path);

/// JSON summary {clean_accuracy, median_certified_robustness,
/// base_classifier_accuracy}; median is the string "N/A" when undefined.
void write_summary_json(const Evaluation& ev, const CertifiedCurve& curve,
                        const std::string& path);

/// Ensemble directory: ensemble.json manifest + plan.json(.assign) + feature
/// map blob(s) + models/model_NNNNNN.bin. Loading re-hashes every artifact
/// and refuses on mismatch.
void save_ensemble(const Ensemble& e, const std::string& dir);
Ensemble load_ensemble(const std::string& dir);

}  // namespace dpa
