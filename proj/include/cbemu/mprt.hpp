// Message-passing runtime with deterministic virtual time.
//
// Ranks are emulated as cooperatively scheduled workers inside one process:
// exactly one rank executes at a time and the scheduler always resumes the
// lowest-id runnable rank, so every run with the same config and program is
// bit-for-bit reproducible. Virtual time is bookkeeping, not wall clock:
// clocks advance only through compute charges and the comm cost model.
//
// Timing rules:
//   * A matched transfer starts when both sides have posted
//     (start = max(send post, recv post)) and ends start + comm_cost(bytes).
//   * Blocking send/recv are isend/irecv + an immediate wait, so they charge
//     identically to the non-blocking pair with no overlap work.
//   * wait_all advances the caller to max(own clock, latest transfer end);
//     compute issued between post and wait overlaps with the transfer.
//   * Collectives synchronize the member clocks: everyone leaves at
//     max(entry clocks) + 2*ceil(log2(n)) * comm_cost(payload bytes), i.e. a
//     binary reduce-broadcast tree with fixed child ordering.
//   * Reduction values fold sequentially over member index (v0 op v1 op ...),
//     independent of arrival order; the tree fixes cost, not association.
#pragma once

#include "cbemu/modsched.hpp"
#include "cbemu/platform.hpp"

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace cbemu::mprt
{
    struct MprtError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    // Opaque handle to a process group. World communicators span one world;
    // the two sides of an InterComm are plain groups.
    struct Comm
    {
        std::uint32_t id = 0;
    };

    // Connection between a spawning group and its children. Both sides
    // resolve the same id; `local` is always the caller's own side.
    struct InterComm
    {
        std::uint32_t id = 0;
        Comm local;
        Comm remote;
    };

    struct Request
    {
        std::uint64_t id = 0;
    };

    enum class ReduceOp : std::uint8_t
    {
        Sum,
        Max,
    };

    struct TraceEvent
    {
        double time_s = 0.0;
        std::string rank;
        std::string op;
        std::string peer;
        std::uint64_t bytes = 0;
    };

    struct RuntimeOptions
    {
        int ranks_per_node = 1;
        bool trace = false;
    };

    class Runtime;

    // Per-rank execution context handed to role functions. All operations
    // are issued through this object; a context is only valid on its own
    // rank's call stack.
    class RankCtx
    {
    public:
        int rank() const noexcept;
        int world_size() const noexcept;
        int comm_size(Comm comm) const;
        Comm world() const noexcept;
        platform::NodeKind kind() const noexcept;
        int node_index() const noexcept;
        const platform::PlatformConfig &config() const noexcept;

        double now() const;

        // Charges work/speed(kind, solver) virtual seconds.
        void compute(double work_units, platform::Solver solver);

        // Charges raw virtual seconds (exchange surcharges and similar
        // model-level costs that are not work-unit based).
        void charge(double seconds);

        void send(Comm comm, int dst_index, int tag, std::span<const std::byte> payload);
        std::vector<std::byte> recv(Comm comm, int src_index, int tag);
        Request isend(Comm comm, int dst_index, int tag, std::span<const std::byte> payload);
        Request irecv(Comm comm, int src_index, int tag);

        // Indices on an InterComm address the remote group.
        void send(const InterComm &inter, int remote_index, int tag, std::span<const std::byte> payload);
        std::vector<std::byte> recv(const InterComm &inter, int remote_index, int tag);
        Request isend(const InterComm &inter, int remote_index, int tag, std::span<const std::byte> payload);
        Request irecv(const InterComm &inter, int remote_index, int tag);

        // Returns one payload per handle, empty vectors for sends.
        std::vector<std::vector<std::byte>> wait_all(std::span<const Request> requests);

        std::vector<double> allreduce(Comm comm, ReduceOp op, std::span<const double> values);
        void barrier(Comm comm);

        // Collective over `comm`: starts n_children ranks of the named role
        // on target-kind nodes of the allocation and connects the groups.
        InterComm spawn(Comm comm, const std::string &role, int n_children,
                        platform::NodeKind target, const sched::Allocation &alloc);

        // Mirrored InterComm for spawned worlds, nothing for initial worlds.
        std::optional<InterComm> parent() const;

    private:
        friend class Runtime;
        RankCtx(Runtime &rt, std::uint32_t grank) : rt_(&rt), grank_(grank) {}

        Runtime *rt_;
        std::uint32_t grank_;
    };

    using RoleFn = std::function<void(RankCtx &)>;

    class Runtime
    {
    public:
        explicit Runtime(platform::PlatformConfig cfg, RuntimeOptions opts = {});
        ~Runtime();

        Runtime(const Runtime &) = delete;
        Runtime &operator=(const Runtime &) = delete;

        void register_role(const std::string &name, RoleFn fn);

        // Declares an initial world started at run(). Ranks are mapped
        // round-robin onto the allocation's nodes of the given kind.
        Comm add_world(const std::string &role, int n, platform::NodeKind kind,
                       const sched::Allocation &alloc);

        // Drives all worlds to completion. Throws MprtError with per-rank
        // detail if the program drains with blocked ranks or unmatched
        // messages, and rethrows the first rank error otherwise.
        void run();

        double max_clock() const;
        double final_clock(std::uint32_t world, std::uint32_t index) const;
        const std::vector<TraceEvent> &trace() const noexcept { return trace_; }
        const platform::PlatformConfig &config() const noexcept { return cfg_; }

    private:
        friend class RankCtx;

        struct AbortRun
        {
        };

        enum class St : std::uint8_t
        {
            Created,
            Ready,
            Running,
            Blocked,
            Done,
        };

        struct RankState
        {
            std::uint32_t grank = 0;
            std::uint32_t world = 0;
            std::uint32_t index = 0;
            platform::NodeKind kind = platform::NodeKind::Cluster;
            int node_index = 0;
            double clock = 0.0;

            St st = St::Created;
            std::condition_variable cv;
            std::function<bool()> unblock;
            std::string blocked_what;
            bool abort_requested = false;

            RoleFn role;
            std::thread thread;
            std::exception_ptr error;

            std::optional<InterComm> parent;

            // Result slots filled by whoever completes a collective.
            std::vector<double> coll_result;
            std::optional<InterComm> spawn_result;
        };

        struct CommData
        {
            std::uint32_t id = 0;
            std::uint32_t world = 0;
            std::vector<std::uint32_t> members;
        };

        struct InterData
        {
            std::uint32_t id = 0;
            std::uint32_t group_a = 0;
            std::uint32_t group_b = 0;
        };

        struct Envelope
        {
            std::uint64_t seq = 0;
            std::uint32_t context = 0;
            std::uint32_t src = 0;
            std::uint32_t dst = 0;
            int tag = 0;
            std::vector<std::byte> payload;
            double post_time = 0.0;
            std::uint64_t send_handle = 0;
        };

        struct PendingRecv
        {
            std::uint64_t seq = 0;
            std::uint32_t context = 0;
            std::uint32_t src = 0;
            std::uint32_t dst = 0;
            int tag = 0;
            double post_time = 0.0;
            std::uint64_t recv_handle = 0;
        };

        struct HandleData
        {
            std::uint64_t id = 0;
            std::uint32_t owner = 0;
            bool is_recv = false;
            bool matched = false;
            bool waited = false;
            double transfer_end = 0.0;
            std::vector<std::byte> payload;
            std::uint32_t peer = 0;
            int tag = 0;
            std::uint64_t bytes = 0;
        };

        struct CollectiveSite
        {
            enum class Kind : std::uint8_t
            {
                Allreduce,
                Barrier,
                Spawn,
            };
            Kind kind = Kind::Barrier;
            std::uint32_t comm = 0;
            std::vector<bool> arrived;
            std::size_t arrived_count = 0;

            ReduceOp op = ReduceOp::Sum;
            std::size_t vec_len = 0;
            std::vector<std::vector<double>> contributions;

            std::string spawn_role;
            int spawn_children = 0;
            platform::NodeKind spawn_target = platform::NodeKind::Cluster;
            std::uint64_t spawn_alloc_id = 0;
            std::vector<int> spawn_nodes;
        };

        // --- locked helpers (mu_ held) ---
        std::uint32_t create_world_locked(const std::string &role, int n, platform::NodeKind kind,
                                          const sched::Allocation &alloc, bool start_threads);
        void start_rank_thread_locked(RankState &r);
        RankState &rank_locked(std::uint32_t grank) { return *ranks_[grank]; }
        const CommData &comm_locked(std::uint32_t id) const;
        void check_member(const CommData &c, std::uint32_t grank, int index, const char *what) const;
        int member_index(const CommData &c, std::uint32_t grank, const char *what) const;
        std::string rank_label(std::uint32_t grank) const;
        void trace_locked(std::uint32_t grank, double t, const std::string &op, const std::string &peer,
                          std::uint64_t bytes);
        void try_match_send_locked(Envelope &&env);
        void try_match_recv_locked(PendingRecv &&pr);
        void complete_match_locked(Envelope &env, const PendingRecv &pr);
        void block_until_locked(std::unique_lock<std::mutex> &lock, RankState &self, std::string what,
                                std::function<bool()> pred);
        std::uint64_t post_send_locked(std::uint32_t ctx_id, std::uint32_t src, std::uint32_t dst, int tag,
                                       std::span<const std::byte> payload);
        std::uint64_t post_recv_locked(std::uint32_t ctx_id, std::uint32_t src, std::uint32_t dst, int tag);
        std::vector<std::vector<std::byte>> wait_all_impl(RankState &self, std::span<const Request> requests);
        std::vector<double> allreduce_impl(RankState &self, Comm comm, ReduceOp op,
                                           std::span<const double> values);
        void barrier_impl(RankState &self, Comm comm);
        InterComm spawn_impl(RankState &self, Comm comm, const std::string &role, int n_children,
                             platform::NodeKind target, const sched::Allocation &alloc);
        void complete_collective_locked(std::uint32_t comm_id, CollectiveSite &site);
        double collective_cost_locked(const CommData &c, std::uint64_t bytes) const;
        void resolve_endpoints(const CommData **local, const CommData **remote, const InterComm &inter,
                               std::uint32_t grank) const;

        void scheduler_loop(std::unique_lock<std::mutex> &lock);
        void promote_blocked_locked();
        void abort_all_locked(std::unique_lock<std::mutex> &lock);
        [[noreturn]] void drain_error_locked(std::unique_lock<std::mutex> &lock);
        std::string unmatched_report_locked() const;

        platform::PlatformConfig cfg_;
        RuntimeOptions opts_;

        mutable std::mutex mu_;
        std::condition_variable sched_cv_;

        std::map<std::string, RoleFn> roles_;
        std::vector<std::unique_ptr<RankState>> ranks_;
        // Deque: world creation during spawn must not invalidate live
        // references to existing communicators.
        std::deque<CommData> comms_;
        std::vector<InterData> inters_;
        std::vector<std::uint32_t> world_comms_;
        std::uint32_t next_world_ = 0;

        std::vector<Envelope> unmatched_sends_;
        std::vector<PendingRecv> unmatched_recvs_;
        std::map<std::uint64_t, HandleData> handles_;
        std::uint64_t next_seq_ = 1;
        std::uint64_t next_handle_ = 1;

        std::map<std::uint32_t, CollectiveSite> active_collectives_;

        std::vector<TraceEvent> trace_;
        bool started_ = false;
        bool finished_ = false;
    };
}
