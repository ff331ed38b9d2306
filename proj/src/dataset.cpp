#include "dpa/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dpa {

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& path, std::uint64_t offset,
                          const char* what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (!in) {
        throw std::runtime_error(path + ": truncated while reading " + what + " at byte offset " +
                                 std::to_string(offset));
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::uint32_t read_le_u32(std::istream& in, const std::string& path, const char* what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (!in) throw std::runtime_error(path + ": truncated while reading " + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::uint64_t read_le_u64(std::istream& in, const std::string& path, const char* what) {
    std::uint64_t lo = read_le_u32(in, path, what);
    std::uint64_t hi = read_le_u32(in, path, what);
    return lo | (hi << 32);
}

/// Serializes in the canonical layout, feeding every byte to both the stream
/// (if any) and the hasher. Keeping one writer guarantees the content hash
/// and the on-disk bytes can never drift apart.
std::uint64_t serialize_canonical(const Dataset& d, std::ostream* out) {
    const auto sorted = canonical_sort(d);
    std::string buf;
    buf.reserve(28 + sorted.size() * (d.dim + 2));
    buf.append("DPADSET1", 8);
    auto put_u32 = [&buf](std::uint32_t v) {
        buf.push_back(char(v & 0xff));
        buf.push_back(char((v >> 8) & 0xff));
        buf.push_back(char((v >> 16) & 0xff));
        buf.push_back(char((v >> 24) & 0xff));
    };
    put_u32(1);  // format version
    put_u32(std::uint32_t(d.dim));
    put_u32(std::uint32_t(d.num_classes));
    std::uint64_t m = sorted.size();
    put_u32(std::uint32_t(m & 0xffffffffu));
    put_u32(std::uint32_t(m >> 32));
    for (const auto& t : sorted) {
        buf.append(reinterpret_cast<const char*>(t.sample.values.data()), t.sample.values.size());
        buf.push_back(char(t.label & 0xff));
        buf.push_back(char((t.label >> 8) & 0xff));
    }
    if (out) out->write(buf.data(), std::streamsize(buf.size()));
    Fnv1a h;
    h.update(buf.data(), buf.size());
    return h.digest();
}

}  // namespace

Dataset make_dataset(std::vector<LabeledSample> records, int num_classes) {
    Dataset d;
    if (!records.empty()) d.dim = records.front().sample.dim();
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].sample.dim() != d.dim) {
            throw std::runtime_error("record " + std::to_string(i) + " has dimension " +
                                     std::to_string(records[i].sample.dim()) + ", expected " +
                                     std::to_string(d.dim));
        }
        if (records[i].label < 0) {
            throw std::runtime_error("record " + std::to_string(i) + " has negative label " +
                                     std::to_string(records[i].label));
        }
    }
    // Collapse exact (features, label) duplicates: the training set has set
    // semantics, and one duplicate silently outvoting others would break the
    // certificate arithmetic.
    std::vector<LabeledSample> sorted = records;
    std::sort(sorted.begin(), sorted.end());
    std::size_t before = sorted.size();
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (sorted.size() != before) {
        std::cerr << "warning: dropped " << (before - sorted.size())
                  << " exact duplicate record(s); keeping one copy each\n";
        std::set<LabeledSample> seen;
        std::vector<LabeledSample> kept;
        kept.reserve(sorted.size());
        for (auto& r : records) {
            if (seen.insert(r).second) kept.push_back(std::move(r));
        }
        records = std::move(kept);
    }
    int max_label = -1;
    for (const auto& r : records) max_label = std::max(max_label, r.label);
    if (num_classes == 0) {
        d.num_classes = max_label + 1;
    } else {
        if (max_label >= num_classes) {
            throw std::runtime_error("label " + std::to_string(max_label) +
                                     " out of range for num_classes=" + std::to_string(num_classes));
        }
        d.num_classes = num_classes;
    }
    d.items = std::move(records);
    return d;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int num_classes) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error(images_path + ": cannot open");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error(labels_path + ": cannot open");

    std::uint32_t img_magic = read_be_u32(img, images_path, 0, "image magic");
    if (img_magic != 0x00000803u) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "bad image magic 0x%08x at byte offset 0 (want 0x00000803)",
                      img_magic);
        throw std::runtime_error(images_path + ": " + msg);
    }
    std::uint32_t n_img = read_be_u32(img, images_path, 4, "image count");
    std::uint32_t rows = read_be_u32(img, images_path, 8, "row count");
    std::uint32_t cols = read_be_u32(img, images_path, 12, "column count");

    std::uint32_t lab_magic = read_be_u32(lab, labels_path, 0, "label magic");
    if (lab_magic != 0x00000801u) {
        char msg[96];
        std::snprintf(msg, sizeof msg, "bad label magic 0x%08x at byte offset 0 (want 0x00000801)",
                      lab_magic);
        throw std::runtime_error(labels_path + ": " + msg);
    }
    std::uint32_t n_lab = read_be_u32(lab, labels_path, 4, "label count");
    if (n_img != n_lab) {
        throw std::runtime_error(images_path + ": image count " + std::to_string(n_img) +
                                 " does not match label count " + std::to_string(n_lab));
    }

    const std::size_t dim = std::size_t(rows) * cols;
    std::vector<LabeledSample> records(n_img);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        records[i].sample.values.resize(dim);
        img.read(reinterpret_cast<char*>(records[i].sample.values.data()), std::streamsize(dim));
        if (!img) {
            throw std::runtime_error(images_path + ": truncated while reading image " +
                                     std::to_string(i) + " at byte offset " +
                                     std::to_string(16 + std::uint64_t(i) * dim));
        }
        unsigned char lv = 0;
        lab.read(reinterpret_cast<char*>(&lv), 1);
        if (!lab) {
            throw std::runtime_error(labels_path + ": truncated while reading label " +
                                     std::to_string(i) + " at byte offset " +
                                     std::to_string(8 + std::uint64_t(i)));
        }
        records[i].label = int(lv);
    }
    return make_dataset(std::move(records), num_classes);
}

Dataset load_csv_dataset(const std::string& path, bool skip_header, int num_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::vector<LabeledSample> records;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (row == 1 && skip_header) continue;
        if (line.empty()) continue;
        std::vector<long> fields;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                std::size_t pos = 0;
                long v = std::stol(tok, &pos);
                while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
                if (pos != tok.size()) throw std::invalid_argument(tok);
                fields.push_back(v);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": row " + std::to_string(row) +
                                         ": cannot parse field '" + tok + "' as an integer");
            }
        }
        if (fields.size() < 2) {
            throw std::runtime_error(path + ": row " + std::to_string(row) +
                                     ": need at least one feature and a label, got " +
                                     std::to_string(fields.size()) + " field(s)");
        }
        LabeledSample rec;
        rec.sample.values.reserve(fields.size() - 1);
        for (std::size_t j = 0; j + 1 < fields.size(); ++j) {
            if (fields[j] < 0 || fields[j] > 255) {
                throw std::runtime_error(path + ": row " + std::to_string(row) + ": feature " +
                                         std::to_string(j) + " value " + std::to_string(fields[j]) +
                                         " outside [0, 255]");
            }
            rec.sample.values.push_back(Pixel(fields[j]));
        }
        rec.label = int(fields.back());
        records.push_back(std::move(rec));
    }
    return make_dataset(std::move(records), num_classes);
}

std::vector<LabeledSample> canonical_sort(const Dataset& d) {
    std::vector<LabeledSample> out = d.items;
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t pixel_sum(const Sample& s) {
    std::uint64_t sum = 0;
    for (Pixel v : s.values) sum += v;
    return sum;
}

std::uint64_t pixel_sum_hash(const LabeledSample& t) { return pixel_sum(t.sample); }

UniqueSamplesReport verify_unique_samples(const Dataset& d) {
    UniqueSamplesReport rep;
    // Group indices by sample value; any group spanning two labels is a
    // collision. Sorting index views keeps this O(m log m) without copying
    // pixel data.
    std::vector<std::uint32_t> idx(d.items.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (d.items[a].sample != d.items[b].sample) return d.items[a].sample < d.items[b].sample;
        return a < b;
    });
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        const auto& a = d.items[idx[i]];
        const auto& b = d.items[idx[i + 1]];
        if (a.sample == b.sample && a.label != b.label) {
            rep.ok = false;
            rep.collisions.emplace_back(std::min(idx[i], idx[i + 1]), std::max(idx[i], idx[i + 1]));
        }
    }
    return rep;
}

std::vector<std::uint32_t> unique_sample_ranks(const std::vector<LabeledSample>& sorted_items) {
    std::vector<std::uint32_t> ranks(sorted_items.size(), 0);
    std::uint32_t rank = 0;
    for (std::size_t i = 1; i < sorted_items.size(); ++i) {
        if (sorted_items[i].sample != sorted_items[i - 1].sample) ++rank;
        ranks[i] = rank;
    }
    return ranks;
}

Sample histogram_equalize(const Sample& s) {
    std::array<std::uint64_t, 256> hist{};
    for (Pixel v : s.values) ++hist[v];
    std::array<std::uint64_t, 256> cdf{};
    std::uint64_t run = 0;
    std::uint64_t cdf_min = 0;
    bool seen = false;
    for (int v = 0; v < 256; ++v) {
        run += hist[v];
        cdf[v] = run;
        if (!seen && hist[v] > 0) {
            cdf_min = run;
            seen = true;
        }
    }
    const std::uint64_t n = s.values.size();
    if (n == 0 || cdf_min == n) return s;  // empty or single-intensity image
    Sample out;
    out.values.resize(s.values.size());
    const std::uint64_t denom = n - cdf_min;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        // round(255 * (cdf(v) - cdf_min) / denom) in exact integer arithmetic
        std::uint64_t num = 255 * (cdf[s.values[i]] - cdf_min);
        out.values[i] = Pixel((num + denom / 2) / denom);
    }
    return out;
}

Dataset histogram_equalize(const Dataset& d) {
    std::vector<LabeledSample> records;
    records.reserve(d.items.size());
    for (const auto& t : d.items) records.push_back({histogram_equalize(t.sample), t.label});
    return make_dataset(std::move(records), d.num_classes);
}

void save_dataset(const Dataset& d, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    serialize_canonical(d, &out);
    if (!out) throw std::runtime_error(path + ": write failed");
}

Dataset load_dataset_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::array<char, 8> magic{};
    in.read(magic.data(), 8);
    if (!in || std::memcmp(magic.data(), "DPADSET1", 8) != 0) {
        throw std::runtime_error(path + ": bad magic at byte offset 0 (want \"DPADSET1\")");
    }
    std::uint32_t version = read_le_u32(in, path, "format version");
    if (version != 1) {
        throw std::runtime_error(path + ": unsupported format version " + std::to_string(version));
    }
    std::uint32_t dim = read_le_u32(in, path, "dim");
    std::uint32_t num_classes = read_le_u32(in, path, "num_classes");
    std::uint64_t m = read_le_u64(in, path, "record count");
    std::vector<LabeledSample> records(m);
    for (std::uint64_t i = 0; i < m; ++i) {
        records[i].sample.values.resize(dim);
        in.read(reinterpret_cast<char*>(records[i].sample.values.data()), std::streamsize(dim));
        std::array<unsigned char, 2> lb{};
        in.read(reinterpret_cast<char*>(lb.data()), 2);
        if (!in) {
            throw std::runtime_error(path + ": truncated while reading record " + std::to_string(i) +
                                     " at byte offset " +
                                     std::to_string(28 + i * (std::uint64_t(dim) + 2)));
        }
        records[i].label = int(lb[0]) | (int(lb[1]) << 8);
    }
    return make_dataset(std::move(records), int(num_classes));
}

std::uint64_t dataset_content_hash(const Dataset& d) { return serialize_canonical(d, nullptr); }

}  // namespace dpa
