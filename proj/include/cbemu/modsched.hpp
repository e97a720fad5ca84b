// Module-aware resource manager: Cluster and Booster nodes are reserved
// independently, so a job may request any combination of the two pools.
#pragma once

#include "cbemu/platform.hpp"

#include <cstdint>
#include <deque>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cbemu::sched
{
    struct SchedError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    struct JobRequest
    {
        std::string id;
        int cluster_nodes = 0;
        int booster_nodes = 0;
    };

    // A granted reservation. Node indices are dense integers per kind.
    struct Allocation
    {
        std::string job;
        std::uint64_t alloc_id = 0;
        std::vector<int> cluster_set;
        std::vector<int> booster_set;

        const std::vector<int> &node_set(platform::NodeKind kind) const noexcept
        {
            return kind == platform::NodeKind::Cluster ? cluster_set : booster_set;
        }
    };

    struct PoolState
    {
        int cluster_total = 0;
        int cluster_free = 0;
        int booster_total = 0;
        int booster_free = 0;
    };

    // Strict-FIFO scheduler over the two pools. No backfilling: a blocked
    // head job blocks everything behind it. All operations are linearizable
    // behind one lock.
    class Scheduler
    {
    public:
        Scheduler(int cluster_nodes, int booster_nodes);

        // Enqueues a request. Throws SchedError if the request violates its
        // invariants or can never fit the machine.
        std::string submit(const JobRequest &req);

        // Grants queued jobs in FIFO order while both pools have capacity.
        std::vector<std::pair<std::string, Allocation>> try_allocate();

        // Returns an allocation's nodes to the free pools. Throws SchedError
        // on double release or unknown allocation.
        void release(const Allocation &alloc);

        PoolState pool_status() const;

    private:
        std::vector<int> take_nodes(std::vector<bool> &free, int count);

        mutable std::mutex mu_;
        std::vector<bool> cluster_free_;
        std::vector<bool> booster_free_;
        std::deque<JobRequest> queue_;
        std::vector<std::uint64_t> live_allocs_;
        std::uint64_t next_alloc_id_ = 1;
    };
}
