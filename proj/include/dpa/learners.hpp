#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpa/dataset.hpp"

namespace dpa {

// ---------------------------------------------------------------------------
// Feature maps
//
// An unsupervised embedding fitted on unlabeled samples only, shared by all
// base classifiers of an SS-DPA ensemble. Fitting always canonical-sorts its
// input and runs fixed-order reductions, so the same sample set (in any
// order) produces bit-identical parameters.
// ---------------------------------------------------------------------------

/// Cluster2 is the binary pipeline's clustering exposed as a feature map:
/// fitted with the deterministic seed-free 2-means of binary_cluster.hpp,
/// transforming to the negative distances to the two centroids. It exists so
/// the generic ensemble can reproduce the specialized binary pipeline
/// exactly (see the cluster-agree learner below).
enum class FeatureMapKind { Identity, Pca, KmeansBag, Cluster2 };

std::string to_string(FeatureMapKind k);
FeatureMapKind feature_map_kind_from_string(const std::string& s);

struct FeatureMapConfig {
    FeatureMapKind kind = FeatureMapKind::Identity;
    std::uint32_t out_dim = 0;       // ignored for identity
    std::uint64_t seed = 0;          // kmeans-bag initialization
    std::uint32_t kmeans_iters = 25; // Lloyd's iteration cap

    std::uint64_t content_hash() const;
};

struct FeatureMap {
    FeatureMapKind kind = FeatureMapKind::Identity;
    std::uint32_t in_dim = 0;
    std::uint32_t out_dim = 0;
    // pca: mean (in_dim) and components (out_dim x in_dim, row-major, each
    // row a unit principal direction with the fixed sign convention).
    std::vector<double> mean;
    std::vector<double> components;
    // kmeans-bag: centroids (out_dim x in_dim, row-major); features are the
    // negative Euclidean distances to each centroid.
    std::vector<double> centroids;

    std::vector<double> transform(const Sample& x) const;
    std::uint64_t content_hash() const;
};

/// Fits a feature map on the given unlabeled samples (deduplicated,
/// canonical-sorted internally). `in_dim` is authoritative; pca requires
/// cfg.out_dim <= in_dim, kmeans-bag requires at least out_dim distinct
/// samples. Identity accepts an empty sample list.
FeatureMap fit_feature_map(std::vector<Sample> unlabeled, const FeatureMapConfig& cfg,
                           std::size_t in_dim);

void save_feature_map(const FeatureMap& m, const std::string& path);
FeatureMap load_feature_map(const std::string& path);

// ---------------------------------------------------------------------------
// Base classifiers
// ---------------------------------------------------------------------------

/// ClusterAgree is the binary pipeline's one-labeled-sample base classifier:
/// trained on a single item over cluster2 features, it predicts that item's
/// label for queries in the same cluster and the opposite label otherwise.
/// Only meaningful with num_classes = 2, a cluster2 feature map, and
/// one-item partitions (k = m).
enum class LearnerKind { NearestCentroid, LogisticRegression, ClusterAgree };

std::string to_string(LearnerKind k);
LearnerKind learner_kind_from_string(const std::string& s);

struct LearnerConfig {
    LearnerKind kind = LearnerKind::NearestCentroid;
    // Logistic regression only; nearest-centroid has no hyperparameters
    // (scaling features uniformly cannot change an argmin of distances).
    std::uint32_t epochs = 20;
    double lr0 = 0.05;                  // step size at epoch 0
    double lr_decay = 0.2;              // lr_e = lr0 / (1 + lr_decay * e)
    double input_scale = 1.0 / 255.0;   // multiplies features before SGD

    std::uint64_t content_hash() const;
};

struct BaseModel {
    LearnerKind kind = LearnerKind::NearestCentroid;
    std::uint32_t partition_index = 0;
    std::uint64_t seed = 0;
    std::uint32_t num_classes = 0;
    std::uint32_t feat_dim = 0;
    std::uint64_t fmap_hash = 0;  // feature map this model's inputs came from

    // nearest-centroid: per-class mean feature vectors for the classes seen
    // in the partition, in increasing class id. Empty = the constant model
    // predicting class 0 (the empty-partition fallback).
    std::vector<int> centroid_classes;
    std::vector<double> centroids;  // centroid_classes.size() x feat_dim

    // logistic-regression: weights (num_classes x feat_dim) and biases.
    std::vector<double> weights;
    std::vector<double> biases;
    double input_scale = 1.0;

    // cluster-agree: the training item's cluster (1 or 2; 0 = empty
    // partition, constant class 0) and label.
    int agree_cluster = 0;
    int agree_label = 0;

    /// Class id for an already-transformed feature vector. Nearest-centroid:
    /// argmin distance; logistic-regression: argmax logit; ties always to
    /// the smaller class id.
    int predict_features(std::span<const double> f) const;

    std::uint64_t content_hash() const;
};

/// Trains one base classifier on a partition. Items are canonical-sorted
/// first, so any presentation order of the same set gives bit-identical
/// weights; `seed` drives the SGD shuffling RNG. An empty partition yields
/// the constant model predicting class 0.
BaseModel train_base(std::vector<LabeledSample> partition, const LearnerConfig& cfg,
                     const FeatureMap& fmap, std::uint64_t seed, int num_classes,
                     std::uint32_t partition_index);

/// Transform + predict. Throws std::invalid_argument on dimension mismatch.
int predict(const BaseModel& m, const FeatureMap& fmap, const Sample& x);

void save_model(const BaseModel& m, const std::string& path);
BaseModel load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Multinomial cross-entropy helpers, exposed for gradient checking
// ---------------------------------------------------------------------------

/// Mean cross-entropy of softmax(W f + b) over the given feature/label set.
double logreg_loss(std::span<const double> weights, std::span<const double> biases,
                   std::uint32_t num_classes, std::uint32_t feat_dim,
                   const std::vector<std::vector<double>>& features,
                   const std::vector<int>& labels);

/// Analytic gradient of logreg_loss with respect to weights and biases.
void logreg_grad(std::span<const double> weights, std::span<const double> biases,
                 std::uint32_t num_classes, std::uint32_t feat_dim,
                 const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 std::vector<double>& grad_weights, std::vector<double>& grad_biases);

}  // namespace dpa
