#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dpa/dataset.hpp"

namespace dpa {

/// 2-means centroids in canonical order: mu1 is the lexicographically
/// smaller vector.
struct TwoMeans {
    std::vector<double> mu1;
    std::vector<double> mu2;
};

/// Lloyd's algorithm with a deterministic, seed-free initialization: the
/// lexicographically smallest distinct sample and the sample farthest from
/// it (ties to the lexicographically smaller candidate). Fit on the distinct
/// sample values. Throws std::invalid_argument with fewer than 2 distinct
/// samples.
TwoMeans two_means(const std::vector<Sample>& samples, std::uint32_t max_iters = 100);

/// 1 if ||mu1 - s|| <= ||mu2 - s|| else 2 (ties to cluster 1).
int assign_cluster(const Sample& s, const TwoMeans& tm);

/// The specialized binary pipeline: every training item is its own
/// partition (k = m), base classifiers share the 2-means clustering, and a
/// single global label-flip certificate covers every test prediction.
///
/// Each item votes for the hypothesis (cluster -> label mapping) under which
/// its own label agrees with its cluster: H-straight maps cluster 1 to label
/// 0, H-swapped maps cluster 1 to label 1. With vote totals v_win >= v_lose,
///   rho_bar = floor((v_win - v_lose - tie_penalty) / 2)
/// where tie_penalty is 0 when the winning hypothesis also wins vote ties
/// (H-straight, mirroring the ensemble's smaller-label tie-break) and 1
/// otherwise.
struct BinaryCertificate {
    TwoMeans clustering;
    /// votes[cluster - 1][label]: training items by (cluster, label).
    std::array<std::array<std::uint64_t, 2>, 2> votes{};
    bool swapped = false;  // winning hypothesis: false = H-straight
    std::uint64_t v_win = 0;
    std::uint64_t v_lose = 0;
    std::uint32_t tie_penalty = 0;
    std::uint64_t rho_bar = 0;
    std::uint64_t m = 0;

    /// Label assigned to cluster 1 or 2 under the winning hypothesis.
    int cluster_label(int cluster) const {
        const int c1 = swapped ? 1 : 0;
        return cluster == 1 ? c1 : 1 - c1;
    }
};

/// Clusters, tallies and certifies a binary training set (num_classes must
/// be 2). The certificate counts label flips; the clustering itself uses
/// only unlabeled data and therefore never moves under this threat.
BinaryCertificate binary_certify(const Dataset& train, std::uint32_t max_iters = 100);

int binary_predict(const BinaryCertificate& cert, const Sample& x);

struct BinaryEvaluation {
    double clean_accuracy = 0.0;
    std::uint64_t rho_bar = 0;
    std::uint64_t m = 0;
    std::array<std::array<std::uint64_t, 2>, 2> votes{};
};

BinaryEvaluation binary_evaluate(const BinaryCertificate& cert, const Dataset& test);

}  // namespace dpa
