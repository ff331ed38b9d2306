#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dpa/common.hpp"

namespace dpa {

using Pixel = std::uint8_t;

/// An unlabeled sample: a fixed-length vector of integer intensities in
/// [0, 255]. Kept as exact integers so hashing and lexicographic sorting are
/// bit-exact. Comparison is lexicographic over the pixel values.
struct Sample {
    std::vector<Pixel> values;

    std::size_t dim() const { return values.size(); }
    auto operator<=>(const Sample&) const = default;
};

/// A sample plus its integer class label. Comparison orders by sample first,
/// label second, which is exactly the canonical order used throughout:
/// lexicographic by pixel values with the label as the final key.
struct LabeledSample {
    Sample sample;
    int label = 0;

    auto operator<=>(const LabeledSample&) const = default;
};

/// A training or test set with set semantics: no two items are identical as
/// (features, label) pairs. Items keep their load order; canonical_sort
/// produces the order-independent view.
struct Dataset {
    std::vector<LabeledSample> items;
    std::size_t dim = 0;
    int num_classes = 0;

    std::size_t size() const { return items.size(); }
};

/// Builds a Dataset from raw records: collapses duplicate (features, label)
/// pairs to one item (warning on stderr), validates labels against
/// num_classes (0 = infer as max label + 1).
Dataset make_dataset(std::vector<LabeledSample> records, int num_classes = 0);

// ---------------------------------------------------------------------------
// Loading
//
// IDX (as published for MNIST), big-endian:
//   images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, then
//           count*rows*cols pixel bytes, row-major
//   labels: u32 magic 0x00000801, u32 count, then count label bytes
//
// CSV: one row per sample, integer features then the integer label, no
// header by default.
// ---------------------------------------------------------------------------

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int num_classes = 0);

Dataset load_csv_dataset(const std::string& path, bool skip_header = false, int num_classes = 0);

// ---------------------------------------------------------------------------
// Canonical order & hashing
// ---------------------------------------------------------------------------

/// Sorted copy of the item set: lexicographic by pixel values, label as the
/// final key. A pure function of the set; any permutation of the same items
/// yields an identical list.
std::vector<LabeledSample> canonical_sort(const Dataset& d);

/// Sum of all pixel values. The label does not contribute, so the hash is
/// reusable for SS-DPA partitioning where label-independence is required.
std::uint64_t pixel_sum(const Sample& s);
std::uint64_t pixel_sum_hash(const LabeledSample& t);

/// Result of the repeated-sample check: ok iff no two items share identical
/// pixel values with different labels. Collisions are reported as index pairs
/// into d.items.
struct UniqueSamplesReport {
    bool ok = true;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> collisions;
};

UniqueSamplesReport verify_unique_samples(const Dataset& d);

/// For canonically sorted items, maps each position to the rank of its
/// (unique) sample value. Identical samples with different labels share a
/// rank; this is what merge-labels partitioning keys on.
std::vector<std::uint32_t> unique_sample_ranks(const std::vector<LabeledSample>& sorted_items);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Global per-image histogram equalization over 256 bins using the classic
/// cumulative-distribution remap v -> round(255*(cdf(v)-cdf_min)/(N-cdf_min)).
/// Single-intensity images pass through unchanged.
Sample histogram_equalize(const Sample& s);

Dataset histogram_equalize(const Dataset& d);

// ---------------------------------------------------------------------------
// Canonical serialized container
//
// Little-endian binary layout, items in canonical order:
//   offset 0   8 bytes  magic "DPADSET1"
//   offset 8   u32      format version (1)
//   offset 12  u32      dim
//   offset 16  u32      num_classes
//   offset 20  u64      m
//   offset 28  m records of (dim pixel bytes, u16 label)
//
// The byte stream is a pure function of the item set, so its FNV-1a 64 hash
// serves as the dataset's content hash.
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset_container(const std::string& path);

/// Content hash: FNV-1a 64 over the canonical serialization byte stream.
std::uint64_t dataset_content_hash(const Dataset& d);

}  // namespace dpa
