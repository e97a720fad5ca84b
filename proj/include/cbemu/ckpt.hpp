// Multi-level checkpoint/restart. Each node bundles the blocks of its local
// ranks into one container file per epoch; Buddy level replicates that
// container into a companion node's store, Global level copies it into a
// shared store. Node stores are emulated as per-node directories.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbemu::ckpt
{
    struct CkptError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    enum class Level : std::uint8_t
    {
        Local = 0,
        Buddy = 1,
        Global = 2,
    };

    const char *to_string(Level level) noexcept;

    // 64-bit FNV-1a, the block checksum recorded in container indexes.
    std::uint64_t fnv1a64(std::span<const std::byte> data) noexcept;

    struct CheckpointBlock
    {
        std::uint32_t rank = 0;
        std::uint64_t epoch = 0;
        std::vector<std::byte> payload;
    };

    // Container layout (little-endian):
    //   magic "CBCK" (43 42 43 4B), u32 version=1, u32 block_count,
    //   block_count * (u32 rank, u64 offset, u64 length, u64 checksum),
    //   payloads at the recorded offsets.
    std::vector<std::byte> container_pack(std::span<const CheckpointBlock> blocks);
    std::vector<CheckpointBlock> container_unpack(std::span<const std::byte> bytes,
                                                  std::uint64_t epoch = 0);

    struct FailureModel
    {
        double node_mtbf_s = 0.0;
        double checkpoint_cost_s = 0.0;
    };

    // Young's approximation: sqrt(2 * C * MTBF_system) with
    // MTBF_system = node_mtbf / n_nodes.
    double plan_interval(const FailureModel &fm, int n_nodes);

    struct RankImage
    {
        std::uint32_t rank = 0;
        std::uint32_t node = 0;
        std::vector<std::byte> bytes;
    };

    struct CheckpointSet
    {
        std::uint64_t epoch = 0;
        Level requested = Level::Local;
        Level achieved = Level::Local;
        bool downgraded = false;
        std::vector<std::filesystem::path> files;
    };

    struct RestartResult
    {
        std::uint64_t epoch = 0;
        std::map<std::uint32_t, std::vector<std::byte>> per_rank;
    };

    class Store
    {
    public:
        // Root directory plus the number of participating nodes; node
        // indices must be < n_nodes. Creates the directory hierarchy.
        Store(std::filesystem::path root, std::uint32_t n_nodes);

        // Collective write of one epoch at the given level. Buddy level on a
        // single node degenerates and is recorded as a downgrade to Global.
        // Keeps the two newest epochs per level, pruning older files.
        CheckpointSet write(std::uint64_t epoch, Level level, std::span<const RankImage> images);

        // Restores the newest epoch recoverable despite the failed node
        // stores, preferring Local over Buddy over Global retrieval.
        // Throws CkptError if no epoch is recoverable.
        RestartResult restart_latest(const std::set<std::uint32_t> &failed_nodes) const;

        // Emulates losing a node's non-volatile store.
        void destroy_node_store(std::uint32_t node);

        std::uint32_t buddy_of(std::uint32_t node) const noexcept;
        std::filesystem::path local_container(std::uint32_t node, std::uint64_t epoch) const;
        std::filesystem::path buddy_container(std::uint32_t holder, std::uint32_t origin,
                                              std::uint64_t epoch) const;
        std::filesystem::path global_container(std::uint32_t node, std::uint64_t epoch) const;
        const std::filesystem::path &root() const noexcept { return root_; }

    private:
        struct Manifest
        {
            std::uint64_t epoch = 0;
            Level level = Level::Local;
            std::map<std::uint32_t, std::vector<std::uint32_t>> ranks_by_node;
        };

        std::filesystem::path manifest_path(std::uint64_t epoch) const;
        void write_manifest(std::uint64_t epoch, Level achieved,
                            const std::map<std::uint32_t, std::vector<std::uint32_t>> &ranks_by_node);
        Manifest read_manifest(std::uint64_t epoch) const;
        std::vector<std::uint64_t> known_epochs() const;
        void prune_retention();
        bool node_recoverable(const Manifest &m, std::uint32_t node,
                              const std::set<std::uint32_t> &failed,
                              std::vector<CheckpointBlock> *out) const;

        std::filesystem::path root_;
        std::uint32_t n_nodes_ = 0;
    };
}
