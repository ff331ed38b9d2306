#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dpa/dataset.hpp"

using namespace dpa;
namespace fs = std::filesystem;

namespace {

Sample S(std::initializer_list<int> px) {
    Sample s;
    for (int v : px) s.values.push_back(Pixel(v));
    return s;
}

Dataset toy() {
    // Deliberately unsorted; canonical order is [1,2] < [3,4] < [5,6] < [7,8].
    return make_dataset({{S({5, 6}), 1}, {S({1, 2}), 0}, {S({7, 8}), 1}, {S({3, 4}), 0}}, 2);
}

}  // namespace

TEST_CASE("make_dataset infers dim and num_classes") {
    Dataset d = make_dataset({{S({1, 2, 3}), 4}, {S({0, 0, 0}), 2}});
    CHECK(d.dim == 3);
    CHECK(d.num_classes == 5);  // labels 0..4
    CHECK(d.size() == 2);
}

TEST_CASE("make_dataset rejects ragged rows and bad labels") {
    CHECK_THROWS(make_dataset({{S({1, 2}), 0}, {S({1}), 0}}));
    CHECK_THROWS(make_dataset({{S({1}), 3}}, 2));   // label out of declared range
    CHECK_THROWS(make_dataset({{S({1}), -1}}, 2));  // negative label
}

TEST_CASE("canonical_sort orders lexicographically and is idempotent") {
    Dataset d = toy();
    auto sorted = canonical_sort(d);
    REQUIRE(sorted.size() == 4);
    CHECK(sorted[0].sample.values == std::vector<Pixel>{1, 2});
    CHECK(sorted[1].sample.values == std::vector<Pixel>{3, 4});
    CHECK(sorted[2].sample.values == std::vector<Pixel>{5, 6});
    CHECK(sorted[3].sample.values == std::vector<Pixel>{7, 8});

    Dataset d2 = d;
    d2.items = sorted;
    CHECK(canonical_sort(d2) == sorted);
}

TEST_CASE("canonical order sorts equal samples by label") {
    Dataset d = make_dataset({{S({9}), 1}, {S({9}), 0}}, 2);
    auto sorted = canonical_sort(d);
    CHECK(sorted[0].label == 0);
    CHECK(sorted[1].label == 1);
}

TEST_CASE("pixel_sum ignores labels, counts every pixel") {
    CHECK(pixel_sum(S({0, 255, 3})) == 258);
    CHECK(pixel_sum(S({})) == 0);
    // hash is a function of the values alone, not the label
    LabeledSample a{S({1, 2, 3}), 0};
    LabeledSample b{S({1, 2, 3}), 1};
    CHECK(pixel_sum_hash(a) == pixel_sum_hash(b));
}

TEST_CASE("verify_unique_samples finds value collisions across labels") {
    Dataset clean = toy();
    CHECK(verify_unique_samples(clean).ok);

    Dataset dup = make_dataset({{S({1, 2}), 0}, {S({1, 2}), 1}, {S({9, 9}), 0}}, 2);
    auto report = verify_unique_samples(dup);
    CHECK_FALSE(report.ok);
    REQUIRE(report.collisions.size() == 1);
}

TEST_CASE("unique_sample_ranks merges identical values") {
    Dataset d = make_dataset({{S({1}), 0}, {S({1}), 1}, {S({2}), 0}, {S({3}), 1}}, 2);
    auto sorted = canonical_sort(d);
    auto ranks = unique_sample_ranks(sorted);
    REQUIRE(ranks.size() == 4);
    CHECK(ranks[0] == 0);
    CHECK(ranks[1] == 0);  // identical values share a rank
    CHECK(ranks[2] == 1);
    CHECK(ranks[3] == 2);
}

// Hand-derived oracle for the remap v -> round(255 * (cdf(v) - cdf_min) / (N - cdf_min)).
// Image [0, 0, 128, 255]: counts {0:2, 128:1, 255:1}, cdf {0:2, 128:3, 255:4},
// cdf_min = 2, N = 4. 0 -> 0; 128 -> round(255*1/2) = 128 (exactly 127.5, ties
// round up); 255 -> round(255*2/2) = 255.
TEST_CASE("histogram_equalize matches a hand-computed example") {
    Sample s = S({0, 0, 128, 255});
    Sample eq = histogram_equalize(s);
    CHECK(eq.values == std::vector<Pixel>{0, 0, 128, 255});

    // Low-contrast image stretched to full range: [100, 100, 101, 102].
    // cdf {100:2, 101:3, 102:4}, cdf_min=2: 100->0, 101->round(255/2)=128, 102->255.
    Sample low = S({100, 100, 101, 102});
    Sample eq2 = histogram_equalize(low);
    CHECK(eq2.values == std::vector<Pixel>{0, 0, 128, 255});
}

TEST_CASE("histogram_equalize leaves single-intensity images unchanged") {
    Sample flat = S({7, 7, 7});
    CHECK(histogram_equalize(flat).values == flat.values);
}

TEST_CASE("histogram_equalize output stays in range and preserves value order") {
    Sample s = S({3, 200, 45, 45, 99, 0, 255, 17});
    Sample eq = histogram_equalize(s);
    REQUIRE(eq.values.size() == s.values.size());
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        for (std::size_t j = 0; j < s.values.size(); ++j) {
            if (s.values[i] < s.values[j]) CHECK(eq.values[i] <= eq.values[j]);
            if (s.values[i] == s.values[j]) CHECK(eq.values[i] == eq.values[j]);
        }
    }
}

TEST_CASE("container round-trip preserves content and hash") {
    Dataset d = toy();
    const fs::path path = fs::temp_directory_path() / "dpa_test_roundtrip.dpads";
    save_dataset(d, path.string());
    Dataset back = load_dataset_container(path.string());
    CHECK(back.dim == d.dim);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.items == canonical_sort(d));  // container stores canonical order
    CHECK(dataset_content_hash(back) == dataset_content_hash(d));
    fs::remove(path);
}

TEST_CASE("content hash is permutation invariant and label sensitive") {
    Dataset d = toy();
    Dataset shuffled = d;
    std::swap(shuffled.items[0], shuffled.items[3]);
    std::swap(shuffled.items[1], shuffled.items[2]);
    CHECK(dataset_content_hash(d) == dataset_content_hash(shuffled));

    Dataset relabeled = d;
    relabeled.items[0].label = 0;
    CHECK(dataset_content_hash(d) != dataset_content_hash(relabeled));
}

TEST_CASE("container loader rejects corrupted files") {
    Dataset d = toy();
    const fs::path path = fs::temp_directory_path() / "dpa_test_corrupt.dpads";
    save_dataset(d, path.string());
    // Truncate the file mid-record.
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 3);
    CHECK_THROWS(load_dataset_container(path.string()));
    fs::remove(path);
}

TEST_CASE("csv loader parses labels and validates ranges") {
    const fs::path path = fs::temp_directory_path() / "dpa_test.csv";
    {
        std::ofstream out(path);
        out << "a,b,label\n10, 20,1\n0,255,0\n";
    }
    Dataset d = load_csv_dataset(path.string(), /*skip_header=*/true, 0);
    CHECK(d.size() == 2);
    CHECK(d.dim == 2);
    CHECK(d.num_classes == 2);

    {
        std::ofstream out(path);
        out << "300,0,1\n";  // feature out of [0,255]
    }
    CHECK_THROWS(load_csv_dataset(path.string(), false, 0));
    fs::remove(path);
}

TEST_CASE("idx loader round-trips a synthetic file pair") {
    const fs::path img = fs::temp_directory_path() / "dpa_test_images.idx";
    const fs::path lbl = fs::temp_directory_path() / "dpa_test_labels.idx";
    // Two 2x2 images, big-endian IDX headers.
    {
        std::ofstream out(img, std::ios::binary);
        const unsigned char hdr[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
        out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
        const unsigned char px[] = {1, 2, 3, 4, 5, 6, 7, 8};
        out.write(reinterpret_cast<const char*>(px), sizeof px);
    }
    {
        std::ofstream out(lbl, std::ios::binary);
        const unsigned char hdr[] = {0, 0, 8, 1, 0, 0, 0, 2};
        out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
        const unsigned char lb[] = {3, 0};
        out.write(reinterpret_cast<const char*>(lb), sizeof lb);
    }
    Dataset d = load_idx_dataset(img.string(), lbl.string(), 0);
    REQUIRE(d.size() == 2);
    CHECK(d.dim == 4);
    CHECK(d.num_classes == 4);
    CHECK(d.items[0].sample.values == std::vector<Pixel>{1, 2, 3, 4});
    CHECK(d.items[0].label == 3);
    CHECK(d.items[1].label == 0);

    // Mismatched counts must be rejected.
    {
        std::ofstream out(lbl, std::ios::binary);
        const unsigned char hdr[] = {0, 0, 8, 1, 0, 0, 0, 1};
        out.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
        const unsigned char lb[] = {3};
        out.write(reinterpret_cast<const char*>(lb), sizeof lb);
    }
    CHECK_THROWS(load_idx_dataset(img.string(), lbl.string(), 0));
    fs::remove(img);
    fs::remove(lbl);
}
