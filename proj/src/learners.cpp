#include "dpa/learners.hpp"

#include <Eigen/Dense>

#include "dpa/binary_cluster.hpp"
#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace dpa {

namespace {

void append_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
    buf.push_back(char((v >> 16) & 0xff));
    buf.push_back(char((v >> 24) & 0xff));
}

void append_u64(std::string& buf, std::uint64_t v) {
    append_u32(buf, std::uint32_t(v & 0xffffffffu));
    append_u32(buf, std::uint32_t(v >> 32));
}

void append_doubles(std::string& buf, std::span<const double> v) {
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

std::uint32_t take_u32(const std::string& buf, std::size_t& pos, const std::string& path) {
    if (pos + 4 > buf.size()) throw std::runtime_error(path + ": truncated at byte " + std::to_string(pos));
    std::uint32_t v = std::uint32_t(std::uint8_t(buf[pos])) |
                      (std::uint32_t(std::uint8_t(buf[pos + 1])) << 8) |
                      (std::uint32_t(std::uint8_t(buf[pos + 2])) << 16) |
                      (std::uint32_t(std::uint8_t(buf[pos + 3])) << 24);
    pos += 4;
    return v;
}

std::uint64_t take_u64(const std::string& buf, std::size_t& pos, const std::string& path) {
    std::uint64_t lo = take_u32(buf, pos, path);
    std::uint64_t hi = take_u32(buf, pos, path);
    return lo | (hi << 32);
}

std::vector<double> take_doubles(const std::string& buf, std::size_t& pos, std::size_t n,
                                 const std::string& path) {
    if (pos + n * sizeof(double) > buf.size()) {
        throw std::runtime_error(path + ": truncated at byte " + std::to_string(pos));
    }
    std::vector<double> v(n);
    std::memcpy(v.data(), buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    return v;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

std::string to_string(FeatureMapKind k) {
    switch (k) {
        case FeatureMapKind::Identity: return "identity";
        case FeatureMapKind::Pca: return "pca";
        case FeatureMapKind::KmeansBag: return "kmeans-bag";
        case FeatureMapKind::Cluster2: return "cluster2";
    }
    throw std::logic_error("unreachable feature map kind");
}

FeatureMapKind feature_map_kind_from_string(const std::string& s) {
    if (s == "identity") return FeatureMapKind::Identity;
    if (s == "pca") return FeatureMapKind::Pca;
    if (s == "kmeans-bag") return FeatureMapKind::KmeansBag;
    if (s == "cluster2") return FeatureMapKind::Cluster2;
    throw std::invalid_argument("unknown feature map kind '" + s +
                                "' (want identity, pca, kmeans-bag, or cluster2)");
}

std::uint64_t FeatureMapConfig::content_hash() const {
    Fnv1a h;
    h.update("FMAPCFG1", 8);
    h.update_u32(std::uint32_t(kind));
    h.update_u32(out_dim);
    h.update_u64(seed);
    h.update_u32(kmeans_iters);
    return h.digest();
}

std::vector<double> FeatureMap::transform(const Sample& x) const {
    if (x.dim() != in_dim) {
        throw std::invalid_argument("sample dimension " + std::to_string(x.dim()) +
                                    " does not match feature map input dimension " +
                                    std::to_string(in_dim));
    }
    switch (kind) {
        case FeatureMapKind::Identity: {
            std::vector<double> f(x.values.begin(), x.values.end());
            return f;
        }
        case FeatureMapKind::Pca: {
            // f = components * (x - mean), rows in fixed order
            std::vector<double> centered(in_dim);
            for (std::uint32_t i = 0; i < in_dim; ++i) centered[i] = double(x.values[i]) - mean[i];
            std::vector<double> f(out_dim, 0.0);
            for (std::uint32_t r = 0; r < out_dim; ++r) {
                const double* row = components.data() + std::size_t(r) * in_dim;
                double acc = 0.0;
                for (std::uint32_t i = 0; i < in_dim; ++i) acc += row[i] * centered[i];
                f[r] = acc;
            }
            return f;
        }
        case FeatureMapKind::KmeansBag:
        case FeatureMapKind::Cluster2: {
            std::vector<double> f(out_dim, 0.0);
            for (std::uint32_t r = 0; r < out_dim; ++r) {
                const double* row = centroids.data() + std::size_t(r) * in_dim;
                double acc = 0.0;
                for (std::uint32_t i = 0; i < in_dim; ++i) {
                    double dlt = double(x.values[i]) - row[i];
                    acc += dlt * dlt;
                }
                f[r] = -std::sqrt(acc);
            }
            return f;
        }
    }
    throw std::logic_error("unreachable feature map kind");
}

namespace {

FeatureMap fit_pca(const std::vector<Sample>& sorted, std::uint32_t out_dim, std::size_t in_dim) {
    const std::size_t m = sorted.size();
    // Mean from exact integer sums; division is the only rounding step.
    std::vector<std::uint64_t> sums(in_dim, 0);
    for (const auto& s : sorted) {
        for (std::size_t i = 0; i < in_dim; ++i) sums[i] += s.values[i];
    }
    Eigen::VectorXd mu(in_dim);
    for (std::size_t i = 0; i < in_dim; ++i) mu[Eigen::Index(i)] = double(sums[i]) / double(m);

    // Second-moment matrix accumulated chunk by chunk in a fixed order, then
    // covariance = S/m - mu mu^T. Chunking keeps peak memory small without
    // changing the result (each chunk's GEMM is the same every run).
    const std::size_t chunk = 4096;
    Eigen::MatrixXd second = Eigen::MatrixXd::Zero(Eigen::Index(in_dim), Eigen::Index(in_dim));
    Eigen::MatrixXd block(chunk, in_dim);
    for (std::size_t start = 0; start < m; start += chunk) {
        const std::size_t rows = std::min(chunk, m - start);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto& vals = sorted[start + r].values;
            for (std::size_t i = 0; i < in_dim; ++i) block(Eigen::Index(r), Eigen::Index(i)) = double(vals[i]);
        }
        second.noalias() += block.topRows(Eigen::Index(rows)).transpose() * block.topRows(Eigen::Index(rows));
    }
    Eigen::MatrixXd cov = second / double(m) - mu * mu.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("pca eigendecomposition failed to converge");
    }
    // Eigenvalues come out ascending; take the top out_dim in descending
    // order and apply the sign convention: the entry of largest magnitude in
    // each component is made positive (ties to the lower index).
    FeatureMap fm;
    fm.kind = FeatureMapKind::Pca;
    fm.in_dim = std::uint32_t(in_dim);
    fm.out_dim = out_dim;
    fm.mean.assign(mu.data(), mu.data() + in_dim);
    fm.components.resize(std::size_t(out_dim) * in_dim);
    for (std::uint32_t r = 0; r < out_dim; ++r) {
        Eigen::VectorXd v = solver.eigenvectors().col(Eigen::Index(in_dim - 1 - r));
        std::size_t pivot = 0;
        for (std::size_t i = 1; i < in_dim; ++i) {
            if (std::abs(v[Eigen::Index(i)]) > std::abs(v[Eigen::Index(pivot)])) pivot = i;
        }
        if (v[Eigen::Index(pivot)] < 0) v = -v;
        for (std::size_t i = 0; i < in_dim; ++i) {
            fm.components[std::size_t(r) * in_dim + i] = v[Eigen::Index(i)];
        }
    }
    return fm;
}

FeatureMap fit_kmeans_bag(const std::vector<Sample>& sorted, const FeatureMapConfig& cfg,
                          std::size_t in_dim) {
    const std::size_t m = sorted.size();
    const std::uint32_t kc = cfg.out_dim;
    if (m < kc) {
        throw std::invalid_argument("kmeans-bag needs at least out_dim=" + std::to_string(kc) +
                                    " distinct samples, got " + std::to_string(m));
    }
    Eigen::MatrixXd X(m, in_dim);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t i = 0; i < in_dim; ++i) X(Eigen::Index(r), Eigen::Index(i)) = double(sorted[r].values[i]);
    }
    // Seeded initialization: draw distinct canonical indices. The input is
    // sorted and deduplicated, so distinct indices mean distinct centroids.
    DetRng rng(cfg.seed);
    std::vector<std::size_t> init;
    while (init.size() < kc) {
        std::size_t cand = rng.below(m);
        if (std::find(init.begin(), init.end(), cand) == init.end()) init.push_back(cand);
    }
    Eigen::MatrixXd cent(kc, in_dim);
    for (std::uint32_t c = 0; c < kc; ++c) cent.row(c) = X.row(Eigen::Index(init[c]));

    std::vector<std::uint32_t> assign(m, 0);
    for (std::uint32_t iter = 0; iter < cfg.kmeans_iters; ++iter) {
        bool changed = false;
        // Assignment step: nearest centroid, ties to the lower centroid index.
        for (std::size_t r = 0; r < m; ++r) {
            std::uint32_t best = 0;
            double best_d = (X.row(Eigen::Index(r)) - cent.row(0)).squaredNorm();
            for (std::uint32_t c = 1; c < kc; ++c) {
                double d2 = (X.row(Eigen::Index(r)) - cent.row(c)).squaredNorm();
                if (d2 < best_d) {
                    best_d = d2;
                    best = c;
                }
            }
            if (assign[r] != best) {
                assign[r] = best;
                changed = true;
            }
        }
        // Empty-cluster repair: hand the point farthest from its centroid
        // (ties to the lower index) to the empty cluster.
        for (std::uint32_t c = 0; c < kc; ++c) {
            if (std::count(assign.begin(), assign.end(), c) > 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t r = 0; r < m; ++r) {
                double d2 = (X.row(Eigen::Index(r)) - cent.row(Eigen::Index(assign[r]))).squaredNorm();
                if (d2 > far_d) {
                    far_d = d2;
                    far = r;
                }
            }
            assign[far] = c;
            changed = true;
        }
        if (!changed) break;
        // Update step: fixed-order sequential means.
        cent.setZero();
        std::vector<std::uint64_t> counts(kc, 0);
        for (std::size_t r = 0; r < m; ++r) {
            cent.row(Eigen::Index(assign[r])) += X.row(Eigen::Index(r));
            ++counts[assign[r]];
        }
        for (std::uint32_t c = 0; c < kc; ++c) cent.row(c) /= double(counts[c]);
    }

    FeatureMap fm;
    fm.kind = FeatureMapKind::KmeansBag;
    fm.in_dim = std::uint32_t(in_dim);
    fm.out_dim = kc;
    fm.centroids.resize(std::size_t(kc) * in_dim);
    for (std::uint32_t c = 0; c < kc; ++c) {
        for (std::size_t i = 0; i < in_dim; ++i) {
            fm.centroids[std::size_t(c) * in_dim + i] = cent(Eigen::Index(c), Eigen::Index(i));
        }
    }
    return fm;
}

}  // namespace

FeatureMap fit_feature_map(std::vector<Sample> unlabeled, const FeatureMapConfig& cfg,
                           std::size_t in_dim) {
    for (const auto& s : unlabeled) {
        if (s.dim() != in_dim) {
            throw std::invalid_argument("unlabeled sample dimension " + std::to_string(s.dim()) +
                                        " does not match in_dim " + std::to_string(in_dim));
        }
    }
    if (cfg.kind == FeatureMapKind::Identity) {
        FeatureMap fm;
        fm.kind = FeatureMapKind::Identity;
        fm.in_dim = std::uint32_t(in_dim);
        fm.out_dim = std::uint32_t(in_dim);
        return fm;
    }
    if (unlabeled.empty()) {
        throw std::invalid_argument(to_string(cfg.kind) + " feature map needs a non-empty sample set");
    }
    if (cfg.kind == FeatureMapKind::Cluster2) {
        const TwoMeans tm = two_means(unlabeled);
        FeatureMap fm;
        fm.kind = FeatureMapKind::Cluster2;
        fm.in_dim = std::uint32_t(in_dim);
        fm.out_dim = 2;
        fm.centroids = tm.mu1;
        fm.centroids.insert(fm.centroids.end(), tm.mu2.begin(), tm.mu2.end());
        return fm;
    }
    if (cfg.out_dim == 0) {
        throw std::invalid_argument("feature map out_dim must be >= 1");
    }
    // PCA cannot produce more components than input dimensions; a centroid
    // bag can be as large as the number of distinct samples allows.
    if (cfg.kind == FeatureMapKind::Pca && cfg.out_dim > in_dim) {
        throw std::invalid_argument("pca out_dim " + std::to_string(cfg.out_dim) +
                                    " must be in [1, " + std::to_string(in_dim) + "]");
    }
    // Set semantics + canonical order make the fit independent of how the
    // caller happened to order the samples.
    std::sort(unlabeled.begin(), unlabeled.end());
    unlabeled.erase(std::unique(unlabeled.begin(), unlabeled.end()), unlabeled.end());
    if (cfg.kind == FeatureMapKind::Pca) return fit_pca(unlabeled, cfg.out_dim, in_dim);
    return fit_kmeans_bag(unlabeled, cfg, in_dim);
}

namespace {

std::string serialize_feature_map(const FeatureMap& m) {
    std::string buf;
    buf.append("DPAFMAP1", 8);
    append_u32(buf, 1);  // version
    append_u32(buf, std::uint32_t(m.kind));
    append_u32(buf, m.in_dim);
    append_u32(buf, m.out_dim);
    append_u64(buf, m.mean.size());
    append_doubles(buf, m.mean);
    append_u64(buf, m.components.size());
    append_doubles(buf, m.components);
    append_u64(buf, m.centroids.size());
    append_doubles(buf, m.centroids);
    return buf;
}

}  // namespace

std::uint64_t FeatureMap::content_hash() const {
    const std::string buf = serialize_feature_map(*this);
    Fnv1a h;
    h.update(buf.data(), buf.size());
    return h.digest();
}

void save_feature_map(const FeatureMap& m, const std::string& path) {
    write_file(path, serialize_feature_map(m));
}

FeatureMap load_feature_map(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), "DPAFMAP1", 8) != 0) {
        throw std::runtime_error(path + ": bad magic at byte offset 0 (want \"DPAFMAP1\")");
    }
    std::size_t pos = 8;
    std::uint32_t version = take_u32(buf, pos, path);
    if (version != 1) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    FeatureMap m;
    m.kind = FeatureMapKind(take_u32(buf, pos, path));
    m.in_dim = take_u32(buf, pos, path);
    m.out_dim = take_u32(buf, pos, path);
    m.mean = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    m.components = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    m.centroids = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    return m;
}

// ---------------------------------------------------------------------------
// Base classifiers
// ---------------------------------------------------------------------------

std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::NearestCentroid: return "nearest-centroid";
        case LearnerKind::LogisticRegression: return "logistic-regression";
        case LearnerKind::ClusterAgree: return "cluster-agree";
    }
    throw std::logic_error("unreachable learner kind");
}

LearnerKind learner_kind_from_string(const std::string& s) {
    if (s == "nearest-centroid") return LearnerKind::NearestCentroid;
    if (s == "logistic-regression") return LearnerKind::LogisticRegression;
    if (s == "cluster-agree") return LearnerKind::ClusterAgree;
    throw std::invalid_argument("unknown learner kind '" + s +
                                "' (want nearest-centroid, logistic-regression, or cluster-agree)");
}

std::uint64_t LearnerConfig::content_hash() const {
    Fnv1a h;
    h.update("LRNRCFG1", 8);
    h.update_u32(std::uint32_t(kind));
    h.update_u32(epochs);
    h.update_u64(std::bit_cast<std::uint64_t>(lr0));
    h.update_u64(std::bit_cast<std::uint64_t>(lr_decay));
    h.update_u64(std::bit_cast<std::uint64_t>(input_scale));
    return h.digest();
}

int BaseModel::predict_features(std::span<const double> f) const {
    if (kind == LearnerKind::ClusterAgree) {
        if (agree_cluster == 0) return 0;  // empty partition fallback
        // cluster2 features are negative distances, so f[0] >= f[1] is the
        // same tie-to-cluster-1 rule as assign_cluster's <=.
        const int cluster = f[0] >= f[1] ? 1 : 2;
        return cluster == agree_cluster ? agree_label : 1 - agree_label;
    }
    if (kind == LearnerKind::NearestCentroid) {
        if (centroid_classes.empty()) return 0;  // constant model fallback
        int best = centroid_classes[0];
        double best_d = 0.0;
        for (std::size_t ci = 0; ci < centroid_classes.size(); ++ci) {
            const double* row = centroids.data() + ci * feat_dim;
            double d2 = 0.0;
            for (std::uint32_t i = 0; i < feat_dim; ++i) {
                double dlt = f[i] - row[i];
                d2 += dlt * dlt;
            }
            // Strict < with classes stored in increasing id keeps ties on
            // the smaller class id.
            if (ci == 0 || d2 < best_d) {
                best_d = d2;
                best = centroid_classes[ci];
            }
        }
        return best;
    }
    // logistic regression: argmax logit, ties to the smaller class id
    int best = 0;
    double best_z = -std::numeric_limits<double>::infinity();
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        const double* row = weights.data() + std::size_t(c) * feat_dim;
        double z = biases[c];
        for (std::uint32_t i = 0; i < feat_dim; ++i) z += row[i] * (f[i] * input_scale);
        if (z > best_z) {
            best_z = z;
            best = int(c);
        }
    }
    return best;
}

namespace {

void train_logreg(BaseModel& model, const std::vector<std::vector<double>>& feats,
                  const std::vector<int>& labels, const LearnerConfig& cfg, std::uint64_t seed) {
    const std::uint32_t C = model.num_classes;
    const std::uint32_t F = model.feat_dim;
    model.weights.assign(std::size_t(C) * F, 0.0);
    model.biases.assign(C, 0.0);
    model.input_scale = cfg.input_scale;
    if (feats.empty()) return;  // zero weights: every logit 0, argmax -> class 0

    std::vector<double> scaled(F);
    std::vector<double> probs(C);
    std::vector<std::size_t> order(feats.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    DetRng rng(seed);
    for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr0 / (1.0 + cfg.lr_decay * double(epoch));
        deterministic_shuffle(order, rng);
        for (std::size_t oi = 0; oi < order.size(); ++oi) {
            const std::size_t idx = order[oi];
            const auto& f = feats[idx];
            for (std::uint32_t i = 0; i < F; ++i) scaled[i] = f[i] * cfg.input_scale;
            // softmax with max subtraction
            double zmax = -std::numeric_limits<double>::infinity();
            for (std::uint32_t c = 0; c < C; ++c) {
                const double* row = model.weights.data() + std::size_t(c) * F;
                double z = model.biases[c];
                for (std::uint32_t i = 0; i < F; ++i) z += row[i] * scaled[i];
                probs[c] = z;
                zmax = std::max(zmax, z);
            }
            double zsum = 0.0;
            for (std::uint32_t c = 0; c < C; ++c) {
                probs[c] = std::exp(probs[c] - zmax);
                zsum += probs[c];
            }
            for (std::uint32_t c = 0; c < C; ++c) probs[c] /= zsum;
            // per-sample gradient step: dL/dz_c = p_c - [c == y]
            const int y = labels[idx];
            for (std::uint32_t c = 0; c < C; ++c) {
                const double g = probs[c] - (int(c) == y ? 1.0 : 0.0);
                double* row = model.weights.data() + std::size_t(c) * F;
                for (std::uint32_t i = 0; i < F; ++i) row[i] -= lr * g * scaled[i];
                model.biases[c] -= lr * g;
            }
        }
    }
}

}  // namespace

BaseModel train_base(std::vector<LabeledSample> partition, const LearnerConfig& cfg,
                     const FeatureMap& fmap, std::uint64_t seed, int num_classes,
                     std::uint32_t partition_index) {
    if (num_classes <= 0) throw std::invalid_argument("num_classes must be positive");
    std::sort(partition.begin(), partition.end());

    BaseModel model;
    model.kind = cfg.kind;
    model.partition_index = partition_index;
    model.seed = seed;
    model.num_classes = std::uint32_t(num_classes);
    model.feat_dim = fmap.out_dim;
    model.fmap_hash = fmap.content_hash();

    std::vector<std::vector<double>> feats;
    std::vector<int> labels;
    feats.reserve(partition.size());
    labels.reserve(partition.size());
    for (const auto& t : partition) {
        feats.push_back(fmap.transform(t.sample));
        labels.push_back(t.label);
    }

    if (cfg.kind == LearnerKind::ClusterAgree) {
        if (num_classes != 2) {
            throw std::invalid_argument("cluster-agree needs a 2-class dataset, got " +
                                        std::to_string(num_classes) + " classes");
        }
        if (fmap.kind != FeatureMapKind::Cluster2) {
            throw std::invalid_argument("cluster-agree needs a cluster2 feature map");
        }
        if (partition.size() > 1) {
            throw std::invalid_argument("cluster-agree partitions hold at most one item (k = m), got " +
                                        std::to_string(partition.size()));
        }
        if (!partition.empty()) {
            model.agree_cluster = feats[0][0] >= feats[0][1] ? 1 : 2;
            model.agree_label = labels[0];
        }
    } else if (cfg.kind == LearnerKind::NearestCentroid) {
        // Per-class means in increasing class id; fixed-order sums over the
        // canonical-sorted items.
        for (int c = 0; c < num_classes; ++c) {
            std::vector<double> sum(model.feat_dim, 0.0);
            std::uint64_t count = 0;
            for (std::size_t i = 0; i < feats.size(); ++i) {
                if (labels[i] != c) continue;
                for (std::uint32_t j = 0; j < model.feat_dim; ++j) sum[j] += feats[i][j];
                ++count;
            }
            if (count == 0) continue;
            for (std::uint32_t j = 0; j < model.feat_dim; ++j) sum[j] /= double(count);
            model.centroid_classes.push_back(c);
            model.centroids.insert(model.centroids.end(), sum.begin(), sum.end());
        }
    } else {
        train_logreg(model, feats, labels, cfg, seed);
    }
    return model;
}

int predict(const BaseModel& m, const FeatureMap& fmap, const Sample& x) {
    const auto f = fmap.transform(x);  // validates dimensions
    if (m.feat_dim != fmap.out_dim) {
        throw std::invalid_argument("model feature dimension " + std::to_string(m.feat_dim) +
                                    " does not match feature map output dimension " +
                                    std::to_string(fmap.out_dim));
    }
    return m.predict_features(f);
}

namespace {

std::string serialize_model(const BaseModel& m) {
    std::string buf;
    buf.append("DPAMODL1", 8);
    append_u32(buf, 1);  // version
    append_u32(buf, std::uint32_t(m.kind));
    append_u32(buf, m.partition_index);
    append_u64(buf, m.seed);
    append_u32(buf, m.num_classes);
    append_u32(buf, m.feat_dim);
    append_u64(buf, m.fmap_hash);
    append_u64(buf, m.centroid_classes.size());
    for (int c : m.centroid_classes) append_u32(buf, std::uint32_t(c));
    append_u64(buf, m.centroids.size());
    append_doubles(buf, m.centroids);
    append_u64(buf, m.weights.size());
    append_doubles(buf, m.weights);
    append_u64(buf, m.biases.size());
    append_doubles(buf, m.biases);
    append_u64(buf, std::bit_cast<std::uint64_t>(m.input_scale));
    append_u32(buf, std::uint32_t(m.agree_cluster));
    append_u32(buf, std::uint32_t(m.agree_label));
    return buf;
}

}  // namespace

std::uint64_t BaseModel::content_hash() const {
    const std::string buf = serialize_model(*this);
    Fnv1a h;
    h.update(buf.data(), buf.size());
    return h.digest();
}

void save_model(const BaseModel& m, const std::string& path) {
    write_file(path, serialize_model(m));
}

BaseModel load_model(const std::string& path) {
    const std::string buf = read_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), "DPAMODL1", 8) != 0) {
        throw std::runtime_error(path + ": bad magic at byte offset 0 (want \"DPAMODL1\")");
    }
    std::size_t pos = 8;
    std::uint32_t version = take_u32(buf, pos, path);
    if (version != 1) throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    BaseModel m;
    m.kind = LearnerKind(take_u32(buf, pos, path));
    m.partition_index = take_u32(buf, pos, path);
    m.seed = take_u64(buf, pos, path);
    m.num_classes = take_u32(buf, pos, path);
    m.feat_dim = take_u32(buf, pos, path);
    m.fmap_hash = take_u64(buf, pos, path);
    std::uint64_t ncc = take_u64(buf, pos, path);
    m.centroid_classes.resize(ncc);
    for (auto& c : m.centroid_classes) c = int(take_u32(buf, pos, path));
    m.centroids = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    m.weights = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    m.biases = take_doubles(buf, pos, take_u64(buf, pos, path), path);
    m.input_scale = std::bit_cast<double>(take_u64(buf, pos, path));
    m.agree_cluster = int(take_u32(buf, pos, path));
    m.agree_label = int(take_u32(buf, pos, path));
    return m;
}

// ---------------------------------------------------------------------------
// Cross-entropy helpers for gradient checking
// ---------------------------------------------------------------------------

double logreg_loss(std::span<const double> weights, std::span<const double> biases,
                   std::uint32_t num_classes, std::uint32_t feat_dim,
                   const std::vector<std::vector<double>>& features,
                   const std::vector<int>& labels) {
    double total = 0.0;
    std::vector<double> z(num_classes);
    for (std::size_t n = 0; n < features.size(); ++n) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            const double* row = weights.data() + std::size_t(c) * feat_dim;
            double acc = biases[c];
            for (std::uint32_t i = 0; i < feat_dim; ++i) acc += row[i] * features[n][i];
            z[c] = acc;
            zmax = std::max(zmax, acc);
        }
        double zsum = 0.0;
        for (std::uint32_t c = 0; c < num_classes; ++c) zsum += std::exp(z[c] - zmax);
        total += -(z[labels[n]] - zmax - std::log(zsum));
    }
    return total / double(features.size());
}

void logreg_grad(std::span<const double> weights, std::span<const double> biases,
                 std::uint32_t num_classes, std::uint32_t feat_dim,
                 const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
                 std::vector<double>& grad_weights, std::vector<double>& grad_biases) {
    grad_weights.assign(std::size_t(num_classes) * feat_dim, 0.0);
    grad_biases.assign(num_classes, 0.0);
    std::vector<double> p(num_classes);
    for (std::size_t n = 0; n < features.size(); ++n) {
        double zmax = -std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            const double* row = weights.data() + std::size_t(c) * feat_dim;
            double acc = biases[c];
            for (std::uint32_t i = 0; i < feat_dim; ++i) acc += row[i] * features[n][i];
            p[c] = acc;
            zmax = std::max(zmax, acc);
        }
        double zsum = 0.0;
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            p[c] = std::exp(p[c] - zmax);
            zsum += p[c];
        }
        for (std::uint32_t c = 0; c < num_classes; ++c) {
            const double g = p[c] / zsum - (int(c) == labels[n] ? 1.0 : 0.0);
            double* row = grad_weights.data() + std::size_t(c) * feat_dim;
            for (std::uint32_t i = 0; i < feat_dim; ++i) row[i] += g * features[n][i];
            grad_biases[c] += g;
        }
    }
    const double inv = 1.0 / double(features.size());
    for (auto& g : grad_weights) g *= inv;
    for (auto& g : grad_biases) g *= inv;
}

}  // namespace dpa
