#include "dpa/binary_cluster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpa {

namespace {

double sq_dist(const Sample& s, const std::vector<double>& mu) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double d = double(s.values[i]) - mu[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

TwoMeans two_means(const std::vector<Sample>& samples, std::uint32_t max_iters) {
    // Fit on the distinct sample values in canonical order; both the
    // initialization rule and the fixed-order reductions below need it.
    std::vector<Sample> pts = samples;
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 2) {
        throw std::invalid_argument("two_means needs at least 2 distinct samples, got " +
                                    std::to_string(pts.size()));
    }
    const std::size_t dim = pts.front().dim();
    const std::size_t n = pts.size();

    // Initialization: centroid A = the lexicographically smallest sample,
    // centroid B = the sample farthest from it. Iterating in lex order with
    // a strict > keeps distance ties on the lex-smaller candidate.
    std::vector<double> a(pts[0].values.begin(), pts[0].values.end());
    std::size_t far = 1;
    double far_d = sq_dist(pts[1], a);
    for (std::size_t i = 2; i < n; ++i) {
        const double d = sq_dist(pts[i], a);
        if (d > far_d) {
            far_d = d;
            far = i;
        }
    }
    std::vector<double> b(pts[far].values.begin(), pts[far].values.end());

    std::vector<int> assign(n, 0);  // 0 = centroid A, 1 = centroid B
    for (std::uint32_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            // Ties go to centroid A, matching assign_cluster's <=.
            const int cl = sq_dist(pts[i], a) <= sq_dist(pts[i], b) ? 0 : 1;
            if (assign[i] != cl) {
                assign[i] = cl;
                changed = true;
            }
        }
        // Empty-cluster repair: hand over the point farthest from the
        // surviving centroid (ties to the lower index).
        for (int side = 0; side < 2; ++side) {
            if (std::count(assign.begin(), assign.end(), side) > 0) continue;
            const auto& survivor = side == 0 ? b : a;
            std::size_t pick = 0;
            double pick_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = sq_dist(pts[i], survivor);
                if (d > pick_d) {
                    pick_d = d;
                    pick = i;
                }
            }
            assign[pick] = side;
            changed = true;
        }
        if (!changed) break;
        // Update: fixed-order sequential means over the canonical order.
        std::vector<double> sum_a(dim, 0.0), sum_b(dim, 0.0);
        std::uint64_t na = 0, nb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& sum = assign[i] == 0 ? sum_a : sum_b;
            for (std::size_t j = 0; j < dim; ++j) sum[j] += double(pts[i].values[j]);
            (assign[i] == 0 ? na : nb) += 1;
        }
        for (std::size_t j = 0; j < dim; ++j) {
            a[j] = sum_a[j] / double(na);
            b[j] = sum_b[j] / double(nb);
        }
    }

    TwoMeans tm;
    if (std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end())) {
        tm.mu1 = std::move(b);
        tm.mu2 = std::move(a);
    } else {
        tm.mu1 = std::move(a);
        tm.mu2 = std::move(b);
    }
    return tm;
}

int assign_cluster(const Sample& s, const TwoMeans& tm) {
    if (s.dim() != tm.mu1.size()) {
        throw std::invalid_argument("sample dimension " + std::to_string(s.dim()) +
                                    " does not match centroid dimension " +
                                    std::to_string(tm.mu1.size()));
    }
    return sq_dist(s, tm.mu1) <= sq_dist(s, tm.mu2) ? 1 : 2;
}

BinaryCertificate binary_certify(const Dataset& train, std::uint32_t max_iters) {
    if (train.num_classes != 2) {
        throw std::invalid_argument("binary certification needs a 2-class dataset, got " +
                                    std::to_string(train.num_classes) + " classes");
    }
    const auto sorted = canonical_sort(train);
    std::vector<Sample> unlabeled;
    unlabeled.reserve(sorted.size());
    for (const auto& t : sorted) unlabeled.push_back(t.sample);

    BinaryCertificate cert;
    cert.clustering = two_means(unlabeled, max_iters);
    cert.m = sorted.size();
    for (const auto& t : sorted) {
        const int cl = assign_cluster(t.sample, cert.clustering);
        ++cert.votes[std::size_t(cl - 1)][std::size_t(t.label)];
    }
    // An item votes for the hypothesis that labels its own cluster with its
    // own label: (cluster 1, label 0) and (cluster 2, label 1) vote
    // H-straight, the other two cells vote H-swapped.
    const std::uint64_t v_straight = cert.votes[0][0] + cert.votes[1][1];
    const std::uint64_t v_swapped = cert.votes[0][1] + cert.votes[1][0];
    cert.swapped = v_swapped > v_straight;  // tie stays with H-straight
    cert.v_win = cert.swapped ? v_swapped : v_straight;
    cert.v_lose = cert.swapped ? v_straight : v_swapped;
    cert.tie_penalty = cert.swapped ? 1 : 0;
    cert.rho_bar = (cert.v_win - cert.v_lose - cert.tie_penalty) / 2;
    return cert;
}

int binary_predict(const BinaryCertificate& cert, const Sample& x) {
    return cert.cluster_label(assign_cluster(x, cert.clustering));
}

BinaryEvaluation binary_evaluate(const BinaryCertificate& cert, const Dataset& test) {
    BinaryEvaluation ev;
    ev.rho_bar = cert.rho_bar;
    ev.m = cert.m;
    ev.votes = cert.votes;
    if (test.items.empty()) return ev;
    std::uint64_t correct = 0;
    for (const auto& t : test.items) {
        if (binary_predict(cert, t.sample) == t.label) ++correct;
    }
    ev.clean_accuracy = double(correct) / double(test.items.size());
    return ev;
}

}  // namespace dpa
