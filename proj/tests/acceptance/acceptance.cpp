#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

// Acceptance gate: eight end-to-end criteria, each printing exactly one
// [PASS]/[FAIL] line. Numeric tolerances and runtime budgets are pinned in
// the individual cases; a failing criterion fails the suite.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpa/binary_cluster.hpp"
#include "dpa/dataset.hpp"
#include "dpa/ensemble.hpp"
#include "dpa/learners.hpp"
#include "dpa/partition.hpp"
#include "dpa/verification.hpp"

#ifndef DPA_MNIST_DIR
#error "DPA_MNIST_DIR must be defined"
#endif

namespace fs = std::filesystem;

namespace {

dpa::Sample S(std::initializer_list<int> v) {
    dpa::Sample s;
    s.values.reserve(v.size());
    for (int x : v) s.values.push_back(dpa::Pixel(x));
    return s;
}

struct Stopwatch {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double secs() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void criterion_line(int n, const char* name, bool ok, double secs) {
    std::printf("[%s] criterion %d: %s (%.1f s)\n", ok ? "PASS" : "FAIL", n, name, secs);
    std::fflush(stdout);
}

const dpa::Dataset& mnist_train() {
    static const dpa::Dataset d =
        dpa::load_idx_dataset(std::string(DPA_MNIST_DIR) + "/train-images-idx3-ubyte",
                              std::string(DPA_MNIST_DIR) + "/train-labels-idx1-ubyte");
    return d;
}

const dpa::Dataset& mnist_test() {
    static const dpa::Dataset d =
        dpa::load_idx_dataset(std::string(DPA_MNIST_DIR) + "/t10k-images-idx3-ubyte",
                              std::string(DPA_MNIST_DIR) + "/t10k-labels-idx1-ubyte");
    return d;
}

/// Keeps classes a/b only and relabels them 0/1.
dpa::Dataset filter_two(const dpa::Dataset& d, int a, int b) {
    std::vector<dpa::LabeledSample> kept;
    for (const auto& t : d.items) {
        if (t.label != a && t.label != b) continue;
        kept.push_back({t.sample, t.label == a ? 0 : 1});
    }
    return dpa::make_dataset(std::move(kept), 2);
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.is_open());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Random toy corpus shared by the two oracle-soundness criteria: distinct
/// 2-d integer samples in diagonal class bands, a tenth of the labels
/// flipped, probes jittered off training points. In-distribution probes keep
/// most certificates strictly positive, so the oracles enumerate real attack
/// sets instead of just replaying the baseline.
struct Toy {
    dpa::Dataset data;
    std::vector<dpa::Sample> probes;
};

/// The training sample this ensemble certifies most strongly.
dpa::Sample deepest_query(const dpa::Ensemble& e, const dpa::Dataset& d) {
    dpa::Sample best = d.items.front().sample;
    std::uint32_t best_rho = 0;
    for (const auto& t : d.items) {
        const std::uint32_t rho = dpa::certify(dpa::vote_counts(e, t.sample)).rho_bar;
        if (rho > best_rho) {
            best_rho = rho;
            best = t.sample;
        }
    }
    return best;
}

Toy make_toy(std::mt19937& rng, int num_classes) {
    const std::size_t m = 7 + rng() % 8;  // 7..14
    std::set<std::pair<int, int>> seen;
    std::vector<dpa::LabeledSample> items;
    while (items.size() < m) {
        const int x = int(rng() % 16), y = int(rng() % 16);
        if (!seen.insert({x, y}).second) continue;
        int label = (x + y) * num_classes / 31;  // bands across the diagonal
        if (rng() % 10 == 0) label = int(rng() % num_classes);
        items.push_back({S({x, y}), label});
    }
    Toy toy;
    toy.data = dpa::make_dataset(std::move(items), num_classes);
    for (int i = 0; i < 3; ++i) {
        const dpa::Sample& anchor = toy.data.items[rng() % m].sample;
        const int px = std::clamp(int(anchor.values[0]) + int(rng() % 3) - 1, 0, 15);
        const int py = std::clamp(int(anchor.values[1]) + int(rng() % 3) - 1, 0, 15);
        toy.probes.push_back(S({px, py}));
    }
    return toy;
}

/// MNIST pipeline used by the determinism and trend criteria: sorted-rank
/// partitioning, 40-component PCA features shared across partitions,
/// logistic-regression base models.
dpa::Evaluation run_mnist(const dpa::Dataset& train, std::uint32_t k) {
    dpa::LearnerConfig lcfg;
    lcfg.kind = dpa::LearnerKind::LogisticRegression;
    dpa::FeatureMapConfig fcfg;
    fcfg.kind = dpa::FeatureMapKind::Pca;
    fcfg.out_dim = 40;
    const dpa::PartitionPlan plan = dpa::ssdpa_partition(train, k);
    const dpa::Ensemble e = dpa::train_ensemble(train, plan, lcfg, fcfg, 1);
    return dpa::evaluate(e, mnist_test(), 1);
}

// The k = 50 evaluation feeds two criteria; computed once.
const dpa::Evaluation& mnist_eval_k50() {
    static const dpa::Evaluation ev = run_mnist(mnist_train(), 50);
    return ev;
}

}  // namespace

TEST_CASE("criterion 1: ablation flip probability and the partition bound match their closed forms") {
    Stopwatch sw;
    const double ra = dpa::ra_poison_prob(60000, 50, 200);
    const double bound = dpa::dpa_poison_bound(200, 1200);
    const bool ra_ok = std::abs(ra - 0.154) <= 0.0005;
    const bool bound_ok = std::abs(bound - 0.1667) <= 0.0005;
    const double secs = sw.secs();
    const bool ok = ra_ok && bound_ok && secs < 1.0;
    criterion_line(1, "ablation flip probability and the partition bound match their closed forms",
                   ok, secs);
    CHECK(ra_ok);
    CHECK(bound_ok);
    CHECK(secs < 1.0);
}

TEST_CASE("criterion 2: binary 1-vs-7 digits land in the expected accuracy and certificate band") {
    Stopwatch sw;
    const dpa::Dataset train = filter_two(mnist_train(), 1, 7);
    const dpa::Dataset test = filter_two(mnist_test(), 1, 7);
    const dpa::BinaryCertificate cert = dpa::binary_certify(train);
    const dpa::BinaryEvaluation ev = dpa::binary_evaluate(cert, test);
    const double secs = sw.secs();
    const bool acc_ok = ev.clean_accuracy >= 0.94 && ev.clean_accuracy <= 0.97;
    const bool rho_ok = ev.rho_bar >= 5000 && ev.rho_bar <= 6500;
    const bool ok = train.size() == 13007 && acc_ok && rho_ok && secs < 300.0;
    criterion_line(2, "binary 1-vs-7 digits land in the expected accuracy and certificate band",
                   ok, secs);
    CHECK(train.size() == 13007);
    CHECK(ev.m == 13007);
    CHECK(acc_ok);
    CHECK(rho_ok);
    CHECK(secs < 300.0);
}

TEST_CASE("criterion 3: label-flip certificates survive exhaustive attack on a randomized corpus") {
    Stopwatch sw;
    std::mt19937 rng(321);
    dpa::PipelineConfig cfg;
    cfg.strategy = dpa::Strategy::SsdpaSort;
    std::uint64_t verifications = 0, sound = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int num_classes = 2 + int(rng() % 2);
        const Toy toy = make_toy(rng, num_classes);
        cfg.k = 3 + rng() % 5;  // 3..7
        if (cfg.k > toy.data.size()) cfg.k = std::uint32_t(toy.data.size());
        const dpa::PartitionPlan plan = dpa::ssdpa_partition(toy.data, cfg.k);
        const dpa::Ensemble e = dpa::train_ensemble(toy.data, plan, cfg.learner, cfg.fmap, 1);
        // probes plus the training point with the largest certificate, so
        // every toy contributes at least one deep enumeration
        std::vector<dpa::Sample> queries = toy.probes;
        queries.push_back(deepest_query(e, toy.data));
        for (const auto& x : queries) {
            const std::uint32_t rho = dpa::certify(dpa::vote_counts(e, x)).rho_bar;
            const dpa::Verdict v = dpa::exhaustive_label_flip_verify(toy.data, cfg, x, rho);
            ++verifications;
            if (v.outcome == dpa::VerdictOutcome::Sound) ++sound;
        }
    }
    const double secs = sw.secs();
    const bool ok = verifications == 400 && sound == verifications && secs < 600.0;
    criterion_line(3, "label-flip certificates survive exhaustive attack on a randomized corpus",
                   ok, secs);
    CHECK(verifications == 400);
    CHECK(sound == verifications);
    CHECK(secs < 600.0);
}

TEST_CASE("criterion 4: removal certificates survive exhaustive attack on a randomized corpus") {
    Stopwatch sw;
    std::mt19937 rng(654);
    dpa::PipelineConfig cfg;
    cfg.strategy = dpa::Strategy::DpaHash;
    std::uint64_t verifications = 0, sound = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int num_classes = 2 + int(rng() % 2);
        const Toy toy = make_toy(rng, num_classes);
        cfg.k = 3 + rng() % 5;  // 3..7
        const dpa::PartitionPlan plan = dpa::dpa_partition(toy.data, cfg.k);
        const dpa::Ensemble e = dpa::train_ensemble(toy.data, plan, cfg.learner, cfg.fmap, 1);
        std::vector<dpa::Sample> queries = toy.probes;
        queries.push_back(deepest_query(e, toy.data));
        for (const auto& x : queries) {
            const std::uint32_t rho = dpa::certify(dpa::vote_counts(e, x)).rho_bar;
            const dpa::Verdict v = dpa::exhaustive_removal_verify(toy.data, cfg, x, rho);
            ++verifications;
            if (v.outcome == dpa::VerdictOutcome::Sound) ++sound;
        }
    }
    const double secs = sw.secs();
    const bool ok = verifications == 400 && sound == verifications && secs < 600.0;
    criterion_line(4, "removal certificates survive exhaustive attack on a randomized corpus", ok,
                   secs);
    CHECK(verifications == 400);
    CHECK(sound == verifications);
    CHECK(secs < 600.0);
}

TEST_CASE("criterion 5: greedy vote adversary matches brute force for every counts vector") {
    Stopwatch sw;
    std::uint64_t compared = 0, mismatches = 0;
    // every composition of k votes into C classes, every budget 0..k
    for (std::uint32_t C = 2; C <= 4; ++C) {
        for (std::uint32_t k = 1; k <= 8; ++k) {
            std::vector<std::uint32_t> counts(C, 0);
            counts[0] = k;
            while (true) {
                for (std::uint32_t rho = 0; rho <= k; ++rho) {
                    ++compared;
                    if (dpa::vote_flip_check(counts, rho) !=
                        dpa::brute_force_vote_flip_check(counts, rho)) {
                        ++mismatches;
                    }
                }
                // colex successor of the composition
                std::size_t i = 0;
                while (i + 1 < C && counts[i] == 0) ++i;
                if (i + 1 == C) break;
                const std::uint32_t head = counts[i];
                counts[i] = 0;
                counts[0] = head - 1;
                ++counts[i + 1];
            }
        }
    }
    const double secs = sw.secs();
    const bool ok = mismatches == 0 && secs < 60.0;
    criterion_line(5, "greedy vote adversary matches brute force for every counts vector", ok,
                   secs);
    CHECK(compared > 0);
    CHECK(mismatches == 0);
    CHECK(secs < 60.0);
}

TEST_CASE("criterion 6: training on shuffled data yields byte-identical certificates") {
    Stopwatch sw;
    const dpa::Dataset& d1 = mnist_train();
    std::vector<dpa::LabeledSample> items = d1.items;
    std::shuffle(items.begin(), items.end(), std::mt19937(99));
    const dpa::Dataset d2 = dpa::make_dataset(std::move(items), d1.num_classes);

    const dpa::Evaluation& ev1 = mnist_eval_k50();
    const dpa::Evaluation ev2 = run_mnist(d2, 50);

    const fs::path p1 = fs::temp_directory_path() / "dpa_acc_certs_base.jsonl";
    const fs::path p2 = fs::temp_directory_path() / "dpa_acc_certs_shuffled.jsonl";
    dpa::write_certificates_jsonl(ev1, p1.string());
    dpa::write_certificates_jsonl(ev2, p2.string());
    const bool identical = slurp(p1) == slurp(p2);
    fs::remove(p1);
    fs::remove(p2);

    const double secs = sw.secs();
    const bool ok = identical && secs < 900.0;
    criterion_line(6, "training on shuffled data yields byte-identical certificates", ok, secs);
    CHECK(identical);
    CHECK(secs < 900.0);
}

TEST_CASE("criterion 7: structural invariants hold") {
    Stopwatch sw;
    bool sizes_ok = true, counts_ok = true, rho_ok = true, curve_ok = true;
    bool insert_ok = true, remove_ok = true, flip_ok = true;

    std::mt19937 rng(987);
    // 103 distinct 2-d samples across 3 classes
    std::set<std::pair<int, int>> seen;
    std::vector<dpa::LabeledSample> items;
    while (items.size() < 103) {
        const int x = int(rng() % 64), y = int(rng() % 64);
        if (!seen.insert({x, y}).second) continue;
        items.push_back({S({x, y}), (x + y) / 43});
    }
    const dpa::Dataset d = dpa::make_dataset(items, 3);

    // sorted-rank partitions are balanced to within one sample
    for (std::uint32_t k : {2u, 7u, 9u, 50u}) {
        const auto sizes = dpa::ssdpa_partition(d, k).partition_sizes();
        const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
        if (*hi - *lo > 1) sizes_ok = false;
    }

    // vote counts sum to k; certificates stay within [0, k/2]; the curve is
    // non-increasing and starts at the clean accuracy
    const std::uint32_t k = 7;
    const dpa::PartitionPlan plan = dpa::ssdpa_partition(d, k);
    dpa::LearnerConfig lcfg;
    dpa::FeatureMapConfig fcfg;
    const dpa::Ensemble e = dpa::train_ensemble(d, plan, lcfg, fcfg, 1);
    std::vector<dpa::LabeledSample> queries;
    for (int i = 0; i < 40; ++i) {
        queries.push_back({S({int(rng() % 64), int(rng() % 64)}), int(rng() % 3)});
    }
    const dpa::Evaluation ev = dpa::evaluate(e, dpa::make_dataset(queries, 3), 1);
    for (const auto& c : ev.certificates) {
        std::uint64_t total = 0;
        for (auto n : c.counts) total += n;
        if (total != k) counts_ok = false;
        if (c.rho_bar > k / 2) rho_ok = false;
    }
    const dpa::CertifiedCurve curve =
        dpa::certified_accuracy_curve(ev, k / 2, dpa::Threat::LabelFlip);
    if (curve.points.front().certified_accuracy != ev.clean_accuracy) curve_ok = false;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
        if (curve.points[i].certified_accuracy > curve.points[i - 1].certified_accuracy) {
            curve_ok = false;
        }
    }

    // hash partitioning: one insertion or removal touches one partition
    const auto members_of = [](const dpa::Dataset& ds, std::uint32_t kk) {
        const dpa::PartitionPlan p = dpa::dpa_partition(ds, kk);
        const auto sorted = dpa::canonical_sort(ds);
        std::vector<std::multiset<std::pair<dpa::Sample, int>>> out(kk);
        for (std::size_t j = 0; j < p.assignment.size(); ++j) {
            out[p.assignment[j]].insert({sorted[j].sample, sorted[j].label});
        }
        return out;
    };
    const auto base = members_of(d, k);

    const auto touched = [&](const std::vector<std::multiset<std::pair<dpa::Sample, int>>>& other) {
        int n = 0;
        for (std::uint32_t i = 0; i < k; ++i) {
            if (base[i] != other[i]) ++n;
        }
        return n;
    };

    std::vector<dpa::LabeledSample> plus = items;
    plus.push_back({S({255, 255}), 1});
    if (touched(members_of(dpa::make_dataset(plus, 3), k)) > 1) insert_ok = false;

    std::vector<dpa::LabeledSample> minus = items;
    minus.erase(minus.begin() + 17);
    if (touched(members_of(dpa::make_dataset(minus, 3), k)) > 1) remove_ok = false;

    // sorted-rank partitioning: a label flip never moves any sample
    std::vector<dpa::LabeledSample> flipped = items;
    flipped[23].label = (flipped[23].label + 1) % 3;
    if (dpa::ssdpa_partition(dpa::make_dataset(flipped, 3), k).assignment != plan.assignment) {
        flip_ok = false;
    }

    const double secs = sw.secs();
    const bool ok =
        sizes_ok && counts_ok && rho_ok && curve_ok && insert_ok && remove_ok && flip_ok;
    criterion_line(7, "structural invariants hold", ok, secs);
    CHECK(sizes_ok);
    CHECK(counts_ok);
    CHECK(rho_ok);
    CHECK(curve_ok);
    CHECK(insert_ok);
    CHECK(remove_ok);
    CHECK(flip_ok);
}

TEST_CASE("criterion 8: larger k trades clean accuracy for certified robustness") {
    Stopwatch sw;
    const dpa::Evaluation& ev50 = mnist_eval_k50();
    const dpa::Evaluation ev1200 = run_mnist(mnist_train(), 1200);

    const auto curve50 = dpa::certified_accuracy_curve(ev50, 25, dpa::Threat::LabelFlip);
    const auto curve1200 = dpa::certified_accuracy_curve(ev1200, 600, dpa::Threat::LabelFlip);
    const auto med50 = dpa::median_certified_robustness(curve50);
    const auto med1200 = dpa::median_certified_robustness(curve1200);

    const double secs = sw.secs();
    const bool medians_present = med50.has_value() && med1200.has_value();
    const bool robustness_up = medians_present && *med1200 > *med50;
    const bool accuracy_down = ev50.clean_accuracy > ev1200.clean_accuracy;
    const bool ok = robustness_up && accuracy_down;
    criterion_line(8, "larger k trades clean accuracy for certified robustness", ok, secs);
    REQUIRE(medians_present);
    CHECK(*med1200 > *med50);
    CHECK(ev50.clean_accuracy > ev1200.clean_accuracy);
    std::printf("    k=50:   clean %.4f, median certified robustness %u\n", ev50.clean_accuracy,
                *med50);
    std::printf("    k=1200: clean %.4f, median certified robustness %u\n", ev1200.clean_accuracy,
                *med1200);
}
