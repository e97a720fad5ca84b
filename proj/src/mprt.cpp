#include "cbemu/mprt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cbemu::mprt
{
    namespace
    {
        constexpr std::uint32_t kInterBit = 0x80000000u;

        int ceil_log2(std::size_t n)
        {
            int r = 0;
            while ((std::size_t{1} << r) < n)
            {
                ++r;
            }
            return r;
        }
    }

    // ------------------------------------------------------------------
    // Runtime lifecycle
    // ------------------------------------------------------------------

    Runtime::Runtime(platform::PlatformConfig cfg, RuntimeOptions opts)
        : cfg_(std::move(cfg)), opts_(opts)
    {
        if (opts_.ranks_per_node < 1)
        {
            throw MprtError("ranks_per_node must be >= 1");
        }
    }

    Runtime::~Runtime()
    {
        {
            std::lock_guard lock(mu_);
            for (auto &up : ranks_)
            {
                if (up->st != St::Done)
                {
                    up->abort_requested = true;
                    up->cv.notify_all();
                }
            }
        }
        for (auto &up : ranks_)
        {
            if (up->thread.joinable())
            {
                up->thread.join();
            }
        }
    }

    void Runtime::register_role(const std::string &name, RoleFn fn)
    {
        std::lock_guard lock(mu_);
        if (!fn)
        {
            throw MprtError("register_role: null function for '" + name + "'");
        }
        roles_[name] = std::move(fn);
    }

    Comm Runtime::add_world(const std::string &role, int n, platform::NodeKind kind,
                            const sched::Allocation &alloc)
    {
        std::lock_guard lock(mu_);
        if (started_)
        {
            throw MprtError("add_world after run()");
        }
        const std::uint32_t comm_id = create_world_locked(role, n, kind, alloc, /*start_threads=*/false);
        return Comm{comm_id};
    }

    std::uint32_t Runtime::create_world_locked(const std::string &role, int n, platform::NodeKind kind,
                                               const sched::Allocation &alloc, bool start_threads)
    {
        auto role_it = roles_.find(role);
        if (role_it == roles_.end())
        {
            throw MprtError("unknown role '" + role + "'");
        }
        if (n < 1)
        {
            throw MprtError("world size must be >= 1");
        }

        std::vector<int> nodes = alloc.node_set(kind);
        std::sort(nodes.begin(), nodes.end());
        const int needed = (n + opts_.ranks_per_node - 1) / opts_.ranks_per_node;
        if (static_cast<int>(nodes.size()) < needed)
        {
            std::ostringstream oss;
            oss << "insufficient allocation: " << n << " " << platform::to_string(kind)
                << " ranks need " << needed << " nodes, allocation has " << nodes.size();
            throw MprtError(oss.str());
        }

        const std::uint32_t world = next_world_++;
        CommData comm;
        comm.id = static_cast<std::uint32_t>(comms_.size());
        comm.world = world;

        for (int i = 0; i < n; ++i)
        {
            auto r = std::make_unique<RankState>();
            r->grank = static_cast<std::uint32_t>(ranks_.size());
            r->world = world;
            r->index = static_cast<std::uint32_t>(i);
            r->kind = kind;
            r->node_index = nodes[static_cast<std::size_t>(i) % nodes.size()];
            r->role = role_it->second;
            comm.members.push_back(r->grank);
            ranks_.push_back(std::move(r));
        }

        comms_.push_back(std::move(comm));
        world_comms_.push_back(comms_.back().id);

        if (start_threads)
        {
            for (std::uint32_t g : comms_.back().members)
            {
                start_rank_thread_locked(*ranks_[g]);
            }
        }
        return comms_.back().id;
    }

    void Runtime::start_rank_thread_locked(RankState &r)
    {
        r.st = St::Ready;
        r.thread = std::thread([this, rp = &r] {
            RankState &self = *rp;
            std::unique_lock lock(mu_);
            self.cv.wait(lock, [&] { return self.st == St::Running || self.abort_requested; });
            if (self.abort_requested)
            {
                self.st = St::Done;
                sched_cv_.notify_all();
                return;
            }
            RankCtx ctx(*this, self.grank);
            lock.unlock();

            std::exception_ptr err;
            try
            {
                self.role(ctx);
            }
            catch (const AbortRun &)
            {
            }
            catch (...)
            {
                err = std::current_exception();
            }

            lock.lock();
            self.error = err;
            self.st = St::Done;
            sched_cv_.notify_all();
        });
    }

    void Runtime::run()
    {
        std::unique_lock lock(mu_);
        if (started_)
        {
            throw MprtError("run() already invoked");
        }
        started_ = true;
        if (ranks_.empty())
        {
            throw MprtError("run(): no worlds declared");
        }
        for (auto &up : ranks_)
        {
            if (up->st == St::Created)
            {
                start_rank_thread_locked(*up);
            }
        }

        try
        {
            scheduler_loop(lock);
        }
        catch (...)
        {
            finished_ = true;
            lock.unlock();
            for (auto &up : ranks_)
            {
                if (up->thread.joinable())
                {
                    up->thread.join();
                }
            }
            throw;
        }

        finished_ = true;
        const std::string leftovers = unmatched_report_locked();
        lock.unlock();
        for (auto &up : ranks_)
        {
            if (up->thread.joinable())
            {
                up->thread.join();
            }
        }
        if (!leftovers.empty())
        {
            throw MprtError("drain: " + leftovers);
        }
    }

    void Runtime::scheduler_loop(std::unique_lock<std::mutex> &lock)
    {
        while (true)
        {
            promote_blocked_locked();

            RankState *next = nullptr;
            bool any_alive = false;
            for (auto &up : ranks_)
            {
                if (up->st != St::Done)
                {
                    any_alive = true;
                }
                if (up->st == St::Ready && next == nullptr)
                {
                    next = up.get();
                }
            }
            if (!any_alive)
            {
                return;
            }
            if (next == nullptr)
            {
                drain_error_locked(lock);
            }

            next->st = St::Running;
            next->cv.notify_all();
            sched_cv_.wait(lock, [&] { return next->st != St::Running; });

            if (next->st == St::Done && next->error)
            {
                std::exception_ptr err = next->error;
                abort_all_locked(lock);
                std::rethrow_exception(err);
            }
        }
    }

    void Runtime::promote_blocked_locked()
    {
        for (auto &up : ranks_)
        {
            RankState &r = *up;
            if (r.st == St::Blocked && r.unblock && r.unblock())
            {
                r.st = St::Ready;
            }
        }
    }

    void Runtime::abort_all_locked(std::unique_lock<std::mutex> &lock)
    {
        for (auto &up : ranks_)
        {
            if (up->st != St::Done)
            {
                up->abort_requested = true;
                up->cv.notify_all();
            }
        }
        sched_cv_.wait(lock, [&] {
            return std::all_of(ranks_.begin(), ranks_.end(),
                               [](const auto &up) { return up->st == St::Done; });
        });
    }

    void Runtime::drain_error_locked(std::unique_lock<std::mutex> &lock)
    {
        std::ostringstream oss;
        oss << "drain: no runnable ranks";
        for (const auto &up : ranks_)
        {
            if (up->st == St::Blocked)
            {
                oss << "; " << rank_label(up->grank) << " blocked in " << up->blocked_what;
            }
        }
        const std::string unmatched = unmatched_report_locked();
        if (!unmatched.empty())
        {
            oss << "; " << unmatched;
        }
        abort_all_locked(lock);
        throw MprtError(oss.str());
    }

    std::string Runtime::unmatched_report_locked() const
    {
        std::ostringstream oss;
        bool first = true;
        for (const auto &env : unmatched_sends_)
        {
            if (!first)
            {
                oss << "; ";
            }
            first = false;
            oss << "unmatched send " << rank_label(env.src) << " -> " << rank_label(env.dst)
                << " tag=" << env.tag << " (" << env.payload.size() << " bytes)";
        }
        for (const auto &pr : unmatched_recvs_)
        {
            if (!first)
            {
                oss << "; ";
            }
            first = false;
            oss << "unmatched recv by " << rank_label(pr.dst) << " (src=" << rank_label(pr.src)
                << ", tag=" << pr.tag << ")";
        }
        return oss.str();
    }

    // ------------------------------------------------------------------
    // Accessors
    // ------------------------------------------------------------------

    double Runtime::max_clock() const
    {
        std::lock_guard lock(mu_);
        double m = 0.0;
        for (const auto &up : ranks_)
        {
            m = std::max(m, up->clock);
        }
        return m;
    }

    double Runtime::final_clock(std::uint32_t world, std::uint32_t index) const
    {
        std::lock_guard lock(mu_);
        for (const auto &up : ranks_)
        {
            if (up->world == world && up->index == index)
            {
                return up->clock;
            }
        }
        throw MprtError("final_clock: no such rank");
    }

    const Runtime::CommData &Runtime::comm_locked(std::uint32_t id) const
    {
        if (id >= comms_.size())
        {
            throw MprtError("invalid communicator handle");
        }
        return comms_[id];
    }

    void Runtime::check_member(const CommData &c, std::uint32_t grank, int index, const char *what) const
    {
        if (index < 0 || static_cast<std::size_t>(index) >= c.members.size())
        {
            std::ostringstream oss;
            oss << what << ": invalid rank index " << index << " (size " << c.members.size() << ")";
            throw MprtError(oss.str());
        }
        (void)grank;
    }

    int Runtime::member_index(const CommData &c, std::uint32_t grank, const char *what) const
    {
        for (std::size_t i = 0; i < c.members.size(); ++i)
        {
            if (c.members[i] == grank)
            {
                return static_cast<int>(i);
            }
        }
        throw MprtError(std::string(what) + ": caller is not a member of the communicator");
    }

    std::string Runtime::rank_label(std::uint32_t grank) const
    {
        const RankState &r = *ranks_[grank];
        return "w" + std::to_string(r.world) + "." + std::to_string(r.index);
    }

    void Runtime::trace_locked(std::uint32_t grank, double t, const std::string &op,
                               const std::string &peer, std::uint64_t bytes)
    {
        if (!opts_.trace)
        {
            return;
        }
        trace_.push_back(TraceEvent{t, rank_label(grank), op, peer, bytes});
    }

    // ------------------------------------------------------------------
    // Point-to-point
    // ------------------------------------------------------------------

    void Runtime::complete_match_locked(Envelope &env, const PendingRecv &pr)
    {
        const double start = std::max(env.post_time, pr.post_time);
        const double cost = platform::comm_cost(static_cast<double>(env.payload.size()),
                                                ranks_[env.src]->kind, ranks_[env.dst]->kind, cfg_);
        const double end = start + cost;

        HandleData &sh = handles_.at(env.send_handle);
        sh.matched = true;
        sh.transfer_end = end;

        HandleData &rh = handles_.at(pr.recv_handle);
        rh.matched = true;
        rh.transfer_end = end;
        rh.bytes = env.payload.size();
        rh.payload = std::move(env.payload);
    }

    void Runtime::try_match_send_locked(Envelope &&env)
    {
        for (auto it = unmatched_recvs_.begin(); it != unmatched_recvs_.end(); ++it)
        {
            if (it->context == env.context && it->src == env.src && it->dst == env.dst &&
                it->tag == env.tag)
            {
                complete_match_locked(env, *it);
                unmatched_recvs_.erase(it);
                return;
            }
        }
        unmatched_sends_.push_back(std::move(env));
    }

    void Runtime::try_match_recv_locked(PendingRecv &&pr)
    {
        for (auto it = unmatched_sends_.begin(); it != unmatched_sends_.end(); ++it)
        {
            if (it->context == pr.context && it->src == pr.src && it->dst == pr.dst &&
                it->tag == pr.tag)
            {
                complete_match_locked(*it, pr);
                unmatched_sends_.erase(it);
                return;
            }
        }
        unmatched_recvs_.push_back(std::move(pr));
    }

    std::uint64_t Runtime::post_send_locked(std::uint32_t ctx_id, std::uint32_t src, std::uint32_t dst,
                                            int tag, std::span<const std::byte> payload)
    {
        const std::uint64_t hid = next_handle_++;
        HandleData h;
        h.id = hid;
        h.owner = src;
        h.is_recv = false;
        h.peer = dst;
        h.tag = tag;
        h.bytes = payload.size();
        handles_.emplace(hid, std::move(h));

        Envelope env;
        env.seq = next_seq_++;
        env.context = ctx_id;
        env.src = src;
        env.dst = dst;
        env.tag = tag;
        env.payload.assign(payload.begin(), payload.end());
        env.post_time = ranks_[src]->clock;
        env.send_handle = hid;
        try_match_send_locked(std::move(env));
        return hid;
    }

    std::uint64_t Runtime::post_recv_locked(std::uint32_t ctx_id, std::uint32_t src, std::uint32_t dst,
                                            int tag)
    {
        const std::uint64_t hid = next_handle_++;
        HandleData h;
        h.id = hid;
        h.owner = dst;
        h.is_recv = true;
        h.peer = src;
        h.tag = tag;
        handles_.emplace(hid, std::move(h));

        PendingRecv pr;
        pr.seq = next_seq_++;
        pr.context = ctx_id;
        pr.src = src;
        pr.dst = dst;
        pr.tag = tag;
        pr.post_time = ranks_[dst]->clock;
        pr.recv_handle = hid;
        try_match_recv_locked(std::move(pr));
        return hid;
    }

    void Runtime::block_until_locked(std::unique_lock<std::mutex> &lock, RankState &self,
                                     std::string what, std::function<bool()> pred)
    {
        if (pred && pred())
        {
            return;
        }
        self.st = St::Blocked;
        self.blocked_what = std::move(what);
        self.unblock = std::move(pred);
        sched_cv_.notify_all();
        self.cv.wait(lock, [&] { return self.st == St::Running || self.abort_requested; });
        if (self.abort_requested)
        {
            throw AbortRun{};
        }
        self.blocked_what.clear();
        self.unblock = nullptr;
    }

    std::vector<std::vector<std::byte>> Runtime::wait_all_impl(RankState &self,
                                                               std::span<const Request> requests)
    {
        std::unique_lock lock(mu_);
        for (const Request &req : requests)
        {
            auto it = handles_.find(req.id);
            if (it == handles_.end())
            {
                throw MprtError("wait_all: unknown request handle");
            }
            if (it->second.owner != self.grank)
            {
                throw MprtError("wait_all: request belongs to another rank");
            }
            if (it->second.waited)
            {
                throw MprtError("wait_all: request already waited on");
            }
        }

        const auto all_matched = [this, &requests] {
            return std::all_of(requests.begin(), requests.end(),
                               [this](const Request &req) { return handles_.at(req.id).matched; });
        };

        if (!all_matched())
        {
            std::ostringstream oss;
            oss << "wait_all(";
            bool first = true;
            for (const Request &req : requests)
            {
                const HandleData &h = handles_.at(req.id);
                if (h.matched)
                {
                    continue;
                }
                if (!first)
                {
                    oss << ", ";
                }
                first = false;
                oss << (h.is_recv ? "recv src=" : "send dst=") << rank_label(h.peer) << " tag=" << h.tag;
            }
            oss << ")";
            block_until_locked(lock, self, oss.str(), all_matched);
        }

        double end = self.clock;
        std::vector<std::vector<std::byte>> out;
        out.reserve(requests.size());
        for (const Request &req : requests)
        {
            HandleData &h = handles_.at(req.id);
            end = std::max(end, h.transfer_end);
            h.waited = true;
            out.push_back(std::move(h.payload));
        }
        self.clock = end;
        trace_locked(self.grank, self.clock, "wait", "-", 0);
        return out;
    }

    // ------------------------------------------------------------------
    // Collectives
    // ------------------------------------------------------------------

    double Runtime::collective_cost_locked(const CommData &c, std::uint64_t bytes) const
    {
        const std::size_t n = c.members.size();
        if (n <= 1)
        {
            return 0.0;
        }
        const platform::NodeKind k = ranks_[c.members[0]]->kind;
        const int rounds = 2 * ceil_log2(n);
        return rounds * platform::comm_cost(static_cast<double>(bytes), k, k, cfg_);
    }

    void Runtime::complete_collective_locked(std::uint32_t comm_id, CollectiveSite &site)
    {
        const CommData &c = comm_locked(comm_id);
        const std::size_t n = c.members.size();

        double entry_max = 0.0;
        for (std::uint32_t g : c.members)
        {
            entry_max = std::max(entry_max, ranks_[g]->clock);
        }

        std::uint64_t bytes = 0;
        std::vector<double> result;
        const char *opname = "barrier";
        if (site.kind == CollectiveSite::Kind::Allreduce)
        {
            opname = "allreduce";
            bytes = 8 * static_cast<std::uint64_t>(site.vec_len);
            // Sequential fold over member index: the combine order is part of
            // the contract, not an implementation accident.
            result = site.contributions[0];
            for (std::size_t i = 1; i < n; ++i)
            {
                const auto &v = site.contributions[i];
                for (std::size_t j = 0; j < result.size(); ++j)
                {
                    result[j] = site.op == ReduceOp::Sum ? result[j] + v[j] : std::max(result[j], v[j]);
                }
            }
        }

        const double done = entry_max + collective_cost_locked(c, bytes);
        for (std::uint32_t g : c.members)
        {
            RankState &r = *ranks_[g];
            r.clock = std::max(r.clock, done);
            if (site.kind == CollectiveSite::Kind::Allreduce)
            {
                r.coll_result = result;
            }
            if (r.st == St::Blocked)
            {
                r.st = St::Ready;
                r.blocked_what.clear();
                r.unblock = nullptr;
            }
            trace_locked(g, done, opname, "-", bytes);
        }
        active_collectives_.erase(comm_id);
    }

    std::vector<double> Runtime::allreduce_impl(RankState &self, Comm comm, ReduceOp op,
                                                std::span<const double> values)
    {
        std::unique_lock lock(mu_);
        const CommData &c = comm_locked(comm.id);
        const int my_idx = member_index(c, self.grank, "allreduce");
        const std::size_t n = c.members.size();

        if (n == 1)
        {
            trace_locked(self.grank, self.clock, "allreduce", "-", 8 * values.size());
            return std::vector<double>(values.begin(), values.end());
        }

        auto [it, inserted] = active_collectives_.try_emplace(comm.id);
        CollectiveSite &site = it->second;
        if (inserted)
        {
            site.kind = CollectiveSite::Kind::Allreduce;
            site.comm = comm.id;
            site.op = op;
            site.vec_len = values.size();
            site.arrived.assign(n, false);
            site.contributions.assign(n, {});
        }
        else
        {
            if (site.kind != CollectiveSite::Kind::Allreduce)
            {
                throw MprtError("collective mismatch: members disagree on the operation");
            }
            if (site.op != op || site.vec_len != values.size())
            {
                throw MprtError("allreduce: members disagree on op or vector length");
            }
        }
        site.arrived[static_cast<std::size_t>(my_idx)] = true;
        ++site.arrived_count;
        site.contributions[static_cast<std::size_t>(my_idx)].assign(values.begin(), values.end());

        if (site.arrived_count == n)
        {
            complete_collective_locked(comm.id, site);
        }
        else
        {
            block_until_locked(lock, self, "allreduce", nullptr);
        }
        return std::move(self.coll_result);
    }

    void Runtime::barrier_impl(RankState &self, Comm comm)
    {
        std::unique_lock lock(mu_);
        const CommData &c = comm_locked(comm.id);
        const int my_idx = member_index(c, self.grank, "barrier");
        const std::size_t n = c.members.size();

        if (n == 1)
        {
            trace_locked(self.grank, self.clock, "barrier", "-", 0);
            return;
        }

        auto [it, inserted] = active_collectives_.try_emplace(comm.id);
        CollectiveSite &site = it->second;
        if (inserted)
        {
            site.kind = CollectiveSite::Kind::Barrier;
            site.comm = comm.id;
            site.arrived.assign(n, false);
        }
        else if (site.kind != CollectiveSite::Kind::Barrier)
        {
            throw MprtError("collective mismatch: members disagree on the operation");
        }
        site.arrived[static_cast<std::size_t>(my_idx)] = true;
        ++site.arrived_count;

        if (site.arrived_count == n)
        {
            complete_collective_locked(comm.id, site);
        }
        else
        {
            block_until_locked(lock, self, "barrier", nullptr);
        }
    }

    InterComm Runtime::spawn_impl(RankState &self, Comm comm, const std::string &role, int n_children,
                                  platform::NodeKind target, const sched::Allocation &alloc)
    {
        std::unique_lock lock(mu_);
        const CommData &c = comm_locked(comm.id);
        const int my_idx = member_index(c, self.grank, "spawn");
        const std::size_t n = c.members.size();

        if (n_children < 1)
        {
            throw MprtError("spawn: n_children must be >= 1");
        }

        auto [it, inserted] = active_collectives_.try_emplace(comm.id);
        CollectiveSite &site = it->second;
        if (inserted)
        {
            site.kind = CollectiveSite::Kind::Spawn;
            site.comm = comm.id;
            site.arrived.assign(n, false);
            site.spawn_role = role;
            site.spawn_children = n_children;
            site.spawn_target = target;
            site.spawn_alloc_id = alloc.alloc_id;
            site.spawn_nodes = alloc.node_set(target);
        }
        else
        {
            if (site.kind != CollectiveSite::Kind::Spawn)
            {
                throw MprtError("collective mismatch: members disagree on the operation");
            }
            if (site.spawn_role != role || site.spawn_children != n_children ||
                site.spawn_target != target || site.spawn_alloc_id != alloc.alloc_id)
            {
                throw MprtError("spawn: members disagree on arguments (non-collective invocation)");
            }
        }
        site.arrived[static_cast<std::size_t>(my_idx)] = true;
        ++site.arrived_count;

        if (site.arrived_count == n)
        {
            // Last arrival creates the child world and wires both sides.
            sched::Allocation child_alloc;
            child_alloc.alloc_id = site.spawn_alloc_id;
            (site.spawn_target == platform::NodeKind::Cluster ? child_alloc.cluster_set
                                                              : child_alloc.booster_set) = site.spawn_nodes;

            const std::uint32_t child_comm_id =
                create_world_locked(site.spawn_role, site.spawn_children, site.spawn_target, child_alloc,
                                    /*start_threads=*/true);

            InterData inter;
            inter.id = kInterBit | static_cast<std::uint32_t>(inters_.size());
            inter.group_a = comm.id;
            inter.group_b = child_comm_id;
            inters_.push_back(inter);

            double entry_max = 0.0;
            for (std::uint32_t g : c.members)
            {
                entry_max = std::max(entry_max, ranks_[g]->clock);
            }

            const InterComm parent_view{inter.id, Comm{comm.id}, Comm{child_comm_id}};
            const InterComm child_view{inter.id, Comm{child_comm_id}, Comm{comm.id}};

            for (std::uint32_t g : comms_[child_comm_id].members)
            {
                ranks_[g]->parent = child_view;
            }
            for (std::uint32_t g : c.members)
            {
                RankState &r = *ranks_[g];
                r.clock = std::max(r.clock, entry_max);
                r.spawn_result = parent_view;
                if (r.st == St::Blocked)
                {
                    r.st = St::Ready;
                    r.blocked_what.clear();
                    r.unblock = nullptr;
                }
                trace_locked(g, r.clock, "spawn", "w" + std::to_string(comms_[child_comm_id].world), 0);
            }
            active_collectives_.erase(comm.id);
        }
        else
        {
            block_until_locked(lock, self, "spawn", nullptr);
        }

        InterComm out = *self.spawn_result;
        self.spawn_result.reset();
        return out;
    }

    void Runtime::resolve_endpoints(const CommData **local, const CommData **remote,
                                    const InterComm &inter, std::uint32_t grank) const
    {
        if ((inter.id & kInterBit) == 0 || (inter.id & ~kInterBit) >= inters_.size())
        {
            throw MprtError("invalid InterComm handle");
        }
        const InterData &data = inters_[inter.id & ~kInterBit];
        const CommData &a = comm_locked(data.group_a);
        const CommData &b = comm_locked(data.group_b);
        const bool in_a = std::find(a.members.begin(), a.members.end(), grank) != a.members.end();
        const bool in_b = std::find(b.members.begin(), b.members.end(), grank) != b.members.end();
        if (!in_a && !in_b)
        {
            throw MprtError("InterComm: caller is not a member of either group");
        }
        *local = in_a ? &a : &b;
        *remote = in_a ? &b : &a;
    }

    // ------------------------------------------------------------------
    // RankCtx
    // ------------------------------------------------------------------

    int RankCtx::rank() const noexcept { return static_cast<int>(rt_->ranks_[grank_]->index); }

    int RankCtx::world_size() const noexcept
    {
        const auto &r = *rt_->ranks_[grank_];
        return static_cast<int>(rt_->comms_[rt_->world_comms_[r.world]].members.size());
    }

    int RankCtx::comm_size(Comm comm) const
    {
        std::lock_guard lock(rt_->mu_);
        return static_cast<int>(rt_->comm_locked(comm.id).members.size());
    }

    Comm RankCtx::world() const noexcept
    {
        return Comm{rt_->world_comms_[rt_->ranks_[grank_]->world]};
    }

    platform::NodeKind RankCtx::kind() const noexcept { return rt_->ranks_[grank_]->kind; }

    int RankCtx::node_index() const noexcept { return rt_->ranks_[grank_]->node_index; }

    const platform::PlatformConfig &RankCtx::config() const noexcept { return rt_->cfg_; }

    double RankCtx::now() const
    {
        std::lock_guard lock(rt_->mu_);
        return rt_->ranks_[grank_]->clock;
    }

    void RankCtx::compute(double work_units, platform::Solver solver)
    {
        std::lock_guard lock(rt_->mu_);
        Runtime::RankState &self = *rt_->ranks_[grank_];
        self.clock += platform::compute_cost(work_units, self.kind, solver, rt_->cfg_);
        rt_->trace_locked(grank_, self.clock, "compute", "-", 0);
    }

    void RankCtx::charge(double seconds)
    {
        if (seconds < 0.0)
        {
            throw MprtError("charge: negative duration");
        }
        std::lock_guard lock(rt_->mu_);
        rt_->ranks_[grank_]->clock += seconds;
    }

    Request RankCtx::isend(Comm comm, int dst_index, int tag, std::span<const std::byte> payload)
    {
        std::lock_guard lock(rt_->mu_);
        const auto &c = rt_->comm_locked(comm.id);
        rt_->member_index(c, grank_, "isend");
        rt_->check_member(c, grank_, dst_index, "isend");
        const std::uint64_t hid =
            rt_->post_send_locked(comm.id, grank_, c.members[static_cast<std::size_t>(dst_index)], tag, payload);
        rt_->trace_locked(grank_, rt_->ranks_[grank_]->clock, "isend",
                          rt_->rank_label(c.members[static_cast<std::size_t>(dst_index)]), payload.size());
        return Request{hid};
    }

    Request RankCtx::irecv(Comm comm, int src_index, int tag)
    {
        std::lock_guard lock(rt_->mu_);
        const auto &c = rt_->comm_locked(comm.id);
        rt_->member_index(c, grank_, "irecv");
        rt_->check_member(c, grank_, src_index, "irecv");
        const std::uint64_t hid =
            rt_->post_recv_locked(comm.id, c.members[static_cast<std::size_t>(src_index)], grank_, tag);
        rt_->trace_locked(grank_, rt_->ranks_[grank_]->clock, "irecv",
                          rt_->rank_label(c.members[static_cast<std::size_t>(src_index)]), 0);
        return Request{hid};
    }

    Request RankCtx::isend(const InterComm &inter, int remote_index, int tag,
                           std::span<const std::byte> payload)
    {
        std::lock_guard lock(rt_->mu_);
        const Runtime::CommData *local = nullptr;
        const Runtime::CommData *remote = nullptr;
        rt_->resolve_endpoints(&local, &remote, inter, grank_);
        rt_->check_member(*remote, grank_, remote_index, "isend(inter)");
        const std::uint64_t hid = rt_->post_send_locked(
            inter.id, grank_, remote->members[static_cast<std::size_t>(remote_index)], tag, payload);
        rt_->trace_locked(grank_, rt_->ranks_[grank_]->clock, "isend",
                          rt_->rank_label(remote->members[static_cast<std::size_t>(remote_index)]),
                          payload.size());
        return Request{hid};
    }

    Request RankCtx::irecv(const InterComm &inter, int remote_index, int tag)
    {
        std::lock_guard lock(rt_->mu_);
        const Runtime::CommData *local = nullptr;
        const Runtime::CommData *remote = nullptr;
        rt_->resolve_endpoints(&local, &remote, inter, grank_);
        rt_->check_member(*remote, grank_, remote_index, "irecv(inter)");
        const std::uint64_t hid = rt_->post_recv_locked(
            inter.id, remote->members[static_cast<std::size_t>(remote_index)], grank_, tag);
        rt_->trace_locked(grank_, rt_->ranks_[grank_]->clock, "irecv",
                          rt_->rank_label(remote->members[static_cast<std::size_t>(remote_index)]), 0);
        return Request{hid};
    }

    std::vector<std::vector<std::byte>> RankCtx::wait_all(std::span<const Request> requests)
    {
        return rt_->wait_all_impl(*rt_->ranks_[grank_], requests);
    }

    void RankCtx::send(Comm comm, int dst_index, int tag, std::span<const std::byte> payload)
    {
        const Request req = isend(comm, dst_index, tag, payload);
        wait_all(std::span<const Request>(&req, 1));
    }

    std::vector<std::byte> RankCtx::recv(Comm comm, int src_index, int tag)
    {
        const Request req = irecv(comm, src_index, tag);
        auto payloads = wait_all(std::span<const Request>(&req, 1));
        return std::move(payloads[0]);
    }

    void RankCtx::send(const InterComm &inter, int remote_index, int tag,
                       std::span<const std::byte> payload)
    {
        const Request req = isend(inter, remote_index, tag, payload);
        wait_all(std::span<const Request>(&req, 1));
    }

    std::vector<std::byte> RankCtx::recv(const InterComm &inter, int remote_index, int tag)
    {
        const Request req = irecv(inter, remote_index, tag);
        auto payloads = wait_all(std::span<const Request>(&req, 1));
        return std::move(payloads[0]);
    }

    std::vector<double> RankCtx::allreduce(Comm comm, ReduceOp op, std::span<const double> values)
    {
        return rt_->allreduce_impl(*rt_->ranks_[grank_], comm, op, values);
    }

    void RankCtx::barrier(Comm comm) { rt_->barrier_impl(*rt_->ranks_[grank_], comm); }

    InterComm RankCtx::spawn(Comm comm, const std::string &role, int n_children,
                             platform::NodeKind target, const sched::Allocation &alloc)
    {
        return rt_->spawn_impl(*rt_->ranks_[grank_], comm, role, n_children, target, alloc);
    }

    std::optional<InterComm> RankCtx::parent() const
    {
        std::lock_guard lock(rt_->mu_);
        return rt_->ranks_[grank_]->parent;
    }
}
