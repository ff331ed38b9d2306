#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpa/dataset.hpp"
#include "dpa/ensemble.hpp"

namespace dpa {

/// Everything needed to retrain the full pipeline from scratch: the oracles
/// below do exactly that for every enumerated attack, so they share no code
/// path with the certificate they are checking.
struct PipelineConfig {
    Strategy strategy = Strategy::SsdpaSort;
    std::uint32_t k = 3;
    bool merge_labels = false;
    LearnerConfig learner;
    FeatureMapConfig fmap;
    int jobs = 1;
};

/// Partition + train + vote on a single query. The oracles' unit of work.
int pipeline_predict(const Dataset& d, const PipelineConfig& cfg, const Sample& x);

/// True iff no reassignment of up to rho base-model votes can change the
/// plurality winner. Simulates the adversary move by move — for each target
/// class, votes migrate one at a time from the winner until the aggregate
/// flips or the budget runs out. Moving winner votes is optimal: every other
/// move closes the winner/target gap by at most as much.
bool vote_flip_check(const std::vector<std::uint32_t>& counts, std::uint32_t rho);

/// Reference adversary: exhaustively enumerates every way to take j <= rho
/// votes (bounded by each class's count) and redistribute them. Exponential;
/// for cross-checking vote_flip_check on small k only.
bool brute_force_vote_flip_check(const std::vector<std::uint32_t>& counts, std::uint32_t rho);

enum class VerdictOutcome { Sound, Counterexample, Refused };

std::string to_string(VerdictOutcome v);

struct LabelFlip {
    std::uint32_t index = 0;  // canonical item index
    int new_label = 0;
};

struct Verdict {
    VerdictOutcome outcome = VerdictOutcome::Sound;
    std::uint64_t sets_checked = 0;
    /// Refused: the enumeration size the request would need (saturated).
    std::uint64_t required = 0;
    int baseline_prediction = 0;
    int changed_prediction = 0;                // counterexample only
    std::vector<LabelFlip> flips;              // label-flip witness
    std::vector<std::uint32_t> removals;       // removal witness (canonical indices)
    std::string note;                          // human-readable detail (insertion spot checks)
};

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// Number of attack sets the exhaustive oracles would enumerate:
/// sum_{j=0..rho} C(m,j) * branches^j, computed exactly and saturated to
/// uint64 max. branches is the choices per touched item (num_classes - 1 for
/// label flips, 1 for removals).
std::uint64_t enumeration_size(std::uint64_t m, std::uint32_t rho, std::uint64_t branches);

/// Retrains the pipeline for every label-flip set of size <= rho (sets in
/// lexicographic order: size, then indices, then replacement labels) and
/// checks that the prediction on x never moves. Counting flips per item
/// requires unique sample values, which ssdpa partitioning enforces anyway.
/// Refuses (never truncates) when sum_{j<=rho} C(m,j)*(C-1)^j exceeds cap:
/// a silently truncated oracle would prove nothing. Note the certificate
/// bounds label flips only under ssdpa strategies.
Verdict exhaustive_label_flip_verify(const Dataset& d, const PipelineConfig& cfg, const Sample& x,
                                     std::uint32_t rho,
                                     std::uint64_t cap = kDefaultEnumerationCap);

/// Same, for every removal set of size <= rho (sum_{j<=rho} C(m,j) vs cap).
/// Removals are symmetric-difference edits, the dpa-hash threat model.
Verdict exhaustive_removal_verify(const Dataset& d, const PipelineConfig& cfg, const Sample& x,
                                  std::uint32_t rho,
                                  std::uint64_t cap = kDefaultEnumerationCap);

/// Insertion attacks have an unbounded search space, so the verdict uses the
/// vote-level over-approximation: up to rho insertions touch at most rho
/// partitions, whose base models the adversary may then steer to any class —
/// sound iff vote_flip_check(counts(x), rho). A concrete spot check then
/// crafts rho samples with pixel sums targeting partitions that currently
/// vote for the winner, labels them with the strongest challenger, retrains,
/// and confirms the abstraction was at least as pessimistic.
Verdict insertion_adversary_verify(const Dataset& d, const PipelineConfig& cfg, const Sample& x,
                                   std::uint32_t rho);

/// Flip oracle for the specialized binary pipeline: enumerates label-flip
/// sets and checks the consensus hypothesis (hence every test prediction)
/// never changes. The clustering is label-independent, so only the vote
/// tally is recomputed per set.
Verdict binary_flip_verify(const Dataset& d, std::uint32_t rho,
                           std::uint64_t cap = kDefaultEnumerationCap);

/// Probability that a randomized-ablation classifier (keeping s of m
/// training samples) uses at least one of r flipped labels:
///   1 - C(m-r, s) / C(m, s)
/// computed with exact big-integer ratios; the final division is the only
/// floating-point step.
double ra_poison_prob(std::uint64_t m, std::uint64_t s, std::uint64_t r);

/// Union bound on the proportion of base classifiers r label flips can
/// poison: min(r/k, 1).
double dpa_poison_bound(std::uint64_t r, std::uint64_t k);

}  // namespace dpa
