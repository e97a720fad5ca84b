#include "cbemu/modsched.hpp"

#include <algorithm>

namespace cbemu::sched
{
    Scheduler::Scheduler(int cluster_nodes, int booster_nodes)
        : cluster_free_(static_cast<std::size_t>(cluster_nodes), true),
          booster_free_(static_cast<std::size_t>(booster_nodes), true)
    {
        if (cluster_nodes < 0 || booster_nodes < 0)
        {
            throw SchedError("negative pool size");
        }
    }

    std::string Scheduler::submit(const JobRequest &req)
    {
        std::lock_guard lock(mu_);
        if (req.cluster_nodes < 0 || req.booster_nodes < 0)
        {
            throw SchedError("submit: negative node count in request '" + req.id + "'");
        }
        if (req.cluster_nodes + req.booster_nodes < 1)
        {
            throw SchedError("submit: empty request '" + req.id + "'");
        }
        if (req.cluster_nodes > static_cast<int>(cluster_free_.size()) ||
            req.booster_nodes > static_cast<int>(booster_free_.size()))
        {
            throw SchedError("submit: request '" + req.id + "' exceeds machine size, never satisfiable");
        }
        queue_.push_back(req);
        return req.id;
    }

    std::vector<int> Scheduler::take_nodes(std::vector<bool> &free, int count)
    {
        std::vector<int> taken;
        taken.reserve(static_cast<std::size_t>(count));
        for (std::size_t i = 0; i < free.size() && static_cast<int>(taken.size()) < count; ++i)
        {
            if (free[i])
            {
                free[i] = false;
                taken.push_back(static_cast<int>(i));
            }
        }
        return taken;
    }

    std::vector<std::pair<std::string, Allocation>> Scheduler::try_allocate()
    {
        std::lock_guard lock(mu_);
        std::vector<std::pair<std::string, Allocation>> grants;

        while (!queue_.empty())
        {
            const JobRequest &head = queue_.front();
            const int cn_free = static_cast<int>(std::count(cluster_free_.begin(), cluster_free_.end(), true));
            const int bn_free = static_cast<int>(std::count(booster_free_.begin(), booster_free_.end(), true));
            if (head.cluster_nodes > cn_free || head.booster_nodes > bn_free)
            {
                break;
            }

            Allocation alloc;
            alloc.job = head.id;
            alloc.alloc_id = next_alloc_id_++;
            alloc.cluster_set = take_nodes(cluster_free_, head.cluster_nodes);
            alloc.booster_set = take_nodes(booster_free_, head.booster_nodes);
            live_allocs_.push_back(alloc.alloc_id);
            grants.emplace_back(head.id, std::move(alloc));
            queue_.pop_front();
        }
        return grants;
    }

    void Scheduler::release(const Allocation &alloc)
    {
        std::lock_guard lock(mu_);
        auto it = std::find(live_allocs_.begin(), live_allocs_.end(), alloc.alloc_id);
        if (it == live_allocs_.end())
        {
            throw SchedError("release: allocation " + std::to_string(alloc.alloc_id) +
                             " for job '" + alloc.job + "' is not live (double release?)");
        }
        live_allocs_.erase(it);

        for (int n : alloc.cluster_set)
        {
            cluster_free_.at(static_cast<std::size_t>(n)) = true;
        }
        for (int n : alloc.booster_set)
        {
            booster_free_.at(static_cast<std::size_t>(n)) = true;
        }
    }

    PoolState Scheduler::pool_status() const
    {
        std::lock_guard lock(mu_);
        PoolState s;
        s.cluster_total = static_cast<int>(cluster_free_.size());
        s.booster_total = static_cast<int>(booster_free_.size());
        s.cluster_free = static_cast<int>(std::count(cluster_free_.begin(), cluster_free_.end(), true));
        s.booster_free = static_cast<int>(std::count(booster_free_.begin(), booster_free_.end(), true));
        return s;
    }
}
