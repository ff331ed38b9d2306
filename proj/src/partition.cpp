#include "dpa/partition.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dpa {

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::DpaHash: return "dpa-hash";
        case Strategy::SsdpaSort: return "ssdpa-sort";
        case Strategy::SsdpaHash: return "ssdpa-hash";
    }
    throw std::logic_error("unreachable strategy value");
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "dpa-hash") return Strategy::DpaHash;
    if (s == "ssdpa-sort") return Strategy::SsdpaSort;
    if (s == "ssdpa-hash") return Strategy::SsdpaHash;
    throw std::invalid_argument("unknown strategy '" + s +
                                "' (want dpa-hash, ssdpa-sort, or ssdpa-hash)");
}

std::vector<std::uint64_t> PartitionPlan::partition_sizes() const {
    std::vector<std::uint64_t> sizes(k, 0);
    for (std::uint32_t p : assignment) ++sizes[p];
    return sizes;
}

std::uint64_t PartitionPlan::content_hash() const {
    Fnv1a h;
    h.update("DPAPLAN1", 8);
    h.update_u32(std::uint32_t(strategy));
    h.update_u32(k);
    h.update_u32(merge_labels ? 1 : 0);
    h.update_u64(dataset_hash);
    for (std::uint32_t a : assignment) h.update_u32(a);
    return h.digest();
}

namespace {

PartitionPlan hash_plan(const Dataset& d, std::uint32_t k, Strategy strategy) {
    if (k == 0) throw std::invalid_argument("ensemble size k must be >= 1");
    if (d.items.empty()) throw std::invalid_argument("cannot partition an empty dataset");
    PartitionPlan plan;
    plan.strategy = strategy;
    plan.k = k;
    plan.dataset_hash = dataset_content_hash(d);
    const auto sorted = canonical_sort(d);
    plan.assignment.resize(sorted.size());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        plan.assignment[j] = std::uint32_t(pixel_sum_hash(sorted[j]) % k);
    }
    return plan;
}

}  // namespace

PartitionPlan dpa_partition(const Dataset& d, std::uint32_t k) {
    return hash_plan(d, k, Strategy::DpaHash);
}

PartitionPlan ssdpa_hash_partition(const Dataset& d, std::uint32_t k) {
    return hash_plan(d, k, Strategy::SsdpaHash);
}

PartitionPlan ssdpa_partition(const Dataset& d, std::uint32_t k, bool merge_labels) {
    if (k == 0) throw std::invalid_argument("ensemble size k must be >= 1");
    if (d.items.empty()) throw std::invalid_argument("cannot partition an empty dataset");
    const auto sorted = canonical_sort(d);
    // Rank each item by its unique sample value. With the uniqueness
    // precondition ranks are just 0..m-1; under merge_labels identical
    // samples share a rank so they co-locate in one partition.
    const auto ranks = unique_sample_ranks(sorted);
    if (!merge_labels) {
        for (std::size_t j = 1; j < sorted.size(); ++j) {
            if (sorted[j].sample == sorted[j - 1].sample) {
                throw std::invalid_argument(
                    "ssdpa-sort requires unique sample values: canonical items " +
                    std::to_string(j - 1) + " and " + std::to_string(j) +
                    " share a feature vector under labels " + std::to_string(sorted[j - 1].label) +
                    " and " + std::to_string(sorted[j].label) +
                    " (rerun with merge-labels to allow this)");
            }
        }
    }
    PartitionPlan plan;
    plan.strategy = Strategy::SsdpaSort;
    plan.k = k;
    plan.merge_labels = merge_labels;
    plan.dataset_hash = dataset_content_hash(d);
    plan.assignment.resize(sorted.size());
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        plan.assignment[j] = ranks[j] % k;
    }
    return plan;
}

std::vector<std::vector<std::uint32_t>> partition_members(const PartitionPlan& plan) {
    std::vector<std::vector<std::uint32_t>> members(plan.k);
    for (std::uint32_t j = 0; j < plan.assignment.size(); ++j) {
        members[plan.assignment[j]].push_back(j);
    }
    return members;
}

void save_plan(const PartitionPlan& plan, const std::string& json_path) {
    nlohmann::json j;
    j["strategy"] = to_string(plan.strategy);
    j["k"] = plan.k;
    j["merge_labels"] = plan.merge_labels;
    j["dataset_hash"] = hash_hex(plan.dataset_hash);
    j["plan_hash"] = hash_hex(plan.content_hash());
    j["m"] = plan.assignment.size();
    j["partition_sizes"] = plan.partition_sizes();
    {
        std::ofstream out(json_path);
        if (!out) throw std::runtime_error(json_path + ": cannot open for writing");
        out << j.dump(2) << '\n';
    }
    const std::string sidecar = json_path + ".assign";
    std::ofstream out(sidecar, std::ios::binary);
    if (!out) throw std::runtime_error(sidecar + ": cannot open for writing");
    out.write("DPAASGN1", 8);
    std::uint64_t m = plan.assignment.size();
    out.write(reinterpret_cast<const char*>(&m), 8);
    // Assignments are written as little-endian u32; this code assumes a
    // little-endian host (asserted at build time in common.hpp).
    out.write(reinterpret_cast<const char*>(plan.assignment.data()),
              std::streamsize(plan.assignment.size() * 4));
    if (!out) throw std::runtime_error(sidecar + ": write failed");
}

PartitionPlan load_plan(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) throw std::runtime_error(json_path + ": cannot open");
    nlohmann::json j = nlohmann::json::parse(in);
    PartitionPlan plan;
    plan.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    plan.k = j.at("k").get<std::uint32_t>();
    plan.merge_labels = j.value("merge_labels", false);
    plan.dataset_hash = std::stoull(j.at("dataset_hash").get<std::string>(), nullptr, 16);

    const std::string sidecar = json_path + ".assign";
    std::ifstream bin(sidecar, std::ios::binary);
    if (!bin) throw std::runtime_error(sidecar + ": cannot open");
    std::array<char, 8> magic{};
    bin.read(magic.data(), 8);
    if (!bin || std::memcmp(magic.data(), "DPAASGN1", 8) != 0) {
        throw std::runtime_error(sidecar + ": bad magic at byte offset 0 (want \"DPAASGN1\")");
    }
    std::uint64_t m = 0;
    bin.read(reinterpret_cast<char*>(&m), 8);
    plan.assignment.resize(m);
    bin.read(reinterpret_cast<char*>(plan.assignment.data()), std::streamsize(m * 4));
    if (!bin) throw std::runtime_error(sidecar + ": truncated assignment table");
    for (std::uint32_t a : plan.assignment) {
        if (a >= plan.k) {
            throw std::runtime_error(sidecar + ": assignment value " + std::to_string(a) +
                                     " out of range for k=" + std::to_string(plan.k));
        }
    }
    const std::uint64_t stored = std::stoull(j.at("plan_hash").get<std::string>(), nullptr, 16);
    if (plan.content_hash() != stored) {
        throw std::runtime_error(json_path + ": plan hash mismatch (stale or corrupt sidecar)");
    }
    return plan;
}

}  // namespace dpa
