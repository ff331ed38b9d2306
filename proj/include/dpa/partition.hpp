#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpa/dataset.hpp"

namespace dpa {

/// How training items are assigned to partitions.
///   DpaHash   — per-item pixel-sum hash mod k; one edit (insert or delete)
///               touches at most one partition.
///   SsdpaSort — 0-based index in the lexicographically sorted unlabeled
///               sample list, mod k; label flips move nothing, sizes are
///               balanced to within 1.
///   SsdpaHash — same assignment function as DpaHash; kept as a separate
///               strategy because it certifies against label flips (the hash
///               ignores labels) while trading away balance.
enum class Strategy { DpaHash, SsdpaSort, SsdpaHash };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

/// A complete sample -> partition assignment. Items are identified by their
/// position in canonical_sort(dataset), so the plan is a pure function of the
/// item set (never of file order). `dataset_hash` ties the plan to the exact
/// dataset it was computed from.
struct PartitionPlan {
    Strategy strategy = Strategy::DpaHash;
    std::uint32_t k = 1;
    bool merge_labels = false;
    std::uint64_t dataset_hash = 0;
    /// assignment[j] = partition of the j-th canonical item, in [0, k).
    std::vector<std::uint32_t> assignment;

    std::vector<std::uint64_t> partition_sizes() const;

    /// FNV-1a 64 over the plan's canonical serialization; cache key component.
    std::uint64_t content_hash() const;
};

/// Partition by pixel-sum hash: item t goes to pixel_sum_hash(t) mod k.
/// Assignment depends only on each item's own value.
PartitionPlan dpa_partition(const Dataset& d, std::uint32_t k);

/// Partition by sorted-sample index: the item at 0-based position j of the
/// canonical unlabeled order goes to partition j mod k. Requires unique
/// sample values (no feature vector under two labels) unless merge_labels is
/// set, in which case identical samples share their sorted rank and land in
/// one partition together — a label-set edit then still touches exactly one
/// partition.
PartitionPlan ssdpa_partition(const Dataset& d, std::uint32_t k, bool merge_labels = false);

/// Hashed SS-DPA variant: the assignment is identical to dpa_partition, but
/// the resulting certificate counts label flips.
PartitionPlan ssdpa_hash_partition(const Dataset& d, std::uint32_t k);

/// Groups canonical item indices by partition: result[i] lists the canonical
/// indices assigned to partition i, in increasing order.
std::vector<std::vector<std::uint32_t>> partition_members(const PartitionPlan& plan);

/// Persist as JSON (k, strategy, partition sizes, dataset hash) plus a
/// compact binary sidecar at path + ".assign" holding the item-level map.
void save_plan(const PartitionPlan& plan, const std::string& json_path);
PartitionPlan load_plan(const std::string& json_path);

}  // namespace dpa
