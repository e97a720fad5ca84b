#include "cbemu/bench.hpp"

#include "cbemu/modsched.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>

namespace cbemu::bench
{
    using platform::NodeKind;

    const char *to_string(Mode mode) noexcept
    {
        switch (mode)
        {
        case Mode::Cluster: return "cluster";
        case Mode::Booster: return "booster";
        case Mode::CB: return "cb";
        }
        return "?";
    }

    std::optional<Mode> parse_mode(const std::string &name)
    {
        if (name == "cluster")
        {
            return Mode::Cluster;
        }
        if (name == "booster")
        {
            return Mode::Booster;
        }
        if (name == "cb")
        {
            return Mode::CB;
        }
        return std::nullopt;
    }

    xpic::SimParams scale_params(const xpic::SimParams &per_node, int nodes)
    {
        if (nodes < 1)
        {
            throw BenchError("node count must be >= 1");
        }
        xpic::SimParams p = per_node;
        p.cells_y *= nodes;
        // Re-balance the aspect ratio so the grid stays square-ish under
        // weak scaling.
        while (p.cells_y >= 2 * p.cells_x && p.cells_y % 2 == 0)
        {
            p.cells_x *= 2;
            p.cells_y /= 2;
        }
        return p;
    }

    RunReport run_scenario(const Scenario &s, const platform::PlatformConfig &cfg)
    {
        if (s.nodes < 1)
        {
            throw BenchError("scenario needs at least one node per participating module");
        }

        sched::Scheduler scheduler(cfg.cluster.node_count, cfg.booster.node_count);
        sched::JobRequest req;
        req.id = "bench";
        req.cluster_nodes = s.mode == Mode::Booster ? 0 : s.nodes;
        req.booster_nodes = s.mode == Mode::Cluster ? 0 : s.nodes;
        scheduler.submit(req);
        auto grants = scheduler.try_allocate();
        if (grants.size() != 1)
        {
            throw BenchError("allocation failed for " + std::string(to_string(s.mode)) + "/" +
                             std::to_string(s.nodes) + " nodes");
        }
        sched::Allocation alloc = std::move(grants[0].second);

        auto rc = std::make_shared<xpic::RunContext>();
        rc->params = scale_params(s.per_node, s.nodes);
        rc->alloc = alloc;
        rc->field_ranks = s.nodes;

        xpic::StepTrace trace;
        if (s.mode == Mode::CB)
        {
            rc->split_out = &trace;
        }
        else
        {
            rc->mono_out = &trace;
        }

        // Checkpoint stores live per module world under the requested root.
        std::unique_ptr<ckpt::Store> store_a;
        std::unique_ptr<ckpt::Store> store_b;
        if (s.checkpoint)
        {
            const auto base = s.checkpoint->root /
                              (std::string(to_string(s.mode)) + std::to_string(s.nodes));
            if (s.mode == Mode::CB)
            {
                store_a = std::make_unique<ckpt::Store>(base / "booster",
                                                        static_cast<std::uint32_t>(s.nodes));
                store_b = std::make_unique<ckpt::Store>(base / "cluster",
                                                        static_cast<std::uint32_t>(s.nodes));
                rc->ckpt_booster = xpic::CkptPlan{store_a.get(), s.checkpoint->level,
                                                  s.checkpoint->interval_s,
                                                  static_cast<std::uint32_t>(s.nodes)};
                rc->ckpt_cluster = xpic::CkptPlan{store_b.get(), s.checkpoint->level,
                                                  s.checkpoint->interval_s,
                                                  static_cast<std::uint32_t>(s.nodes)};
            }
            else
            {
                store_a = std::make_unique<ckpt::Store>(base, static_cast<std::uint32_t>(s.nodes));
                rc->ckpt_mono = xpic::CkptPlan{store_a.get(), s.checkpoint->level,
                                               s.checkpoint->interval_s,
                                               static_cast<std::uint32_t>(s.nodes)};
            }
        }

        mprt::Runtime rt(cfg, mprt::RuntimeOptions{.ranks_per_node = 1, .trace = s.trace});
        xpic::register_xpic_roles(rt, rc);

        if (s.mode == Mode::CB)
        {
            rt.add_world("xpic.booster", s.nodes, NodeKind::Booster, alloc);
        }
        else
        {
            const NodeKind kind = s.mode == Mode::Cluster ? NodeKind::Cluster : NodeKind::Booster;
            rt.add_world("xpic.monolithic", s.nodes, kind, alloc);
        }
        rt.run();

        scheduler.release(alloc);

        RunReport report;
        report.scenario = s;
        report.actual = rc->params;
        report.trace = trace;
        report.total_s = trace.span_s;
        report.field_s = trace.field_total_s;
        report.particle_s = trace.particle_total_s;
        report.exchange_s = trace.span_s - trace.field_total_s - trace.particle_total_s;
        report.exchange_field_side_s = trace.exchange_field_side_s;
        report.exchange_particle_side_s = trace.exchange_particle_side_s;
        if (s.trace)
        {
            report.events = rt.trace();
        }
        return report;
    }

    ScaleTable weak_scaling(const std::vector<Mode> &modes, const std::vector<int> &node_counts,
                            const xpic::SimParams &per_node, const platform::PlatformConfig &cfg,
                            const std::optional<CkptOptions> &checkpoint, bool trace)
    {
        if (node_counts.empty() || node_counts.front() != 1)
        {
            throw BenchError("weak scaling counts must start at 1");
        }
        if (!std::is_sorted(node_counts.begin(), node_counts.end()))
        {
            throw BenchError("weak scaling counts must be ascending");
        }

        ScaleTable table;
        for (Mode mode : modes)
        {
            double t1 = 0.0;
            for (int n : node_counts)
            {
                Scenario s;
                s.mode = mode;
                s.nodes = n;
                s.per_node = per_node;
                s.checkpoint = checkpoint;
                s.trace = trace;

                ScalePoint point;
                point.mode = mode;
                point.nodes = n;
                point.report = run_scenario(s, cfg);
                if (n == 1)
                {
                    t1 = point.report.total_s;
                }
                point.speedup = n * t1 / point.report.total_s;
                point.efficiency = t1 / point.report.total_s;
                table.points.push_back(std::move(point));
            }
        }
        return table;
    }

    SpeedupSummary speedup_table(const RunReport &cluster, const RunReport &booster,
                                 const RunReport &cb)
    {
        SpeedupSummary s;
        s.cluster_over_cb = cluster.total_s / cb.total_s;
        s.booster_over_cb = booster.total_s / cb.total_s;
        s.field_booster_over_cluster = booster.field_s / cb.field_s;
        s.particle_cluster_over_booster = cluster.particle_s / cb.particle_s;
        return s;
    }

    std::string results_csv(const ScaleTable &table)
    {
        std::string out = "mode,nodes,total_us,field_us,particle_us,exchange_us,speedup,efficiency\n";
        char line[512];
        for (const auto &p : table.points)
        {
            std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.9f,%.9f\n",
                          to_string(p.mode), p.nodes, p.report.total_s * 1e6, p.report.field_s * 1e6,
                          p.report.particle_s * 1e6, p.report.exchange_s * 1e6, p.speedup,
                          p.efficiency);
            out += line;
        }
        return out;
    }

    namespace
    {
        void write_text(const std::filesystem::path &path, const std::string &text)
        {
            std::ofstream f(path, std::ios::binary | std::ios::trunc);
            if (!f)
            {
                throw BenchError("cannot write " + path.string());
            }
            f << text;
        }

        std::string plot_data(const ScaleTable &table, bool efficiency)
        {
            // One row per node count, one column per mode present.
            std::vector<Mode> modes;
            std::vector<int> counts;
            std::map<std::pair<int, int>, double> value;
            for (const auto &p : table.points)
            {
                const int mi = static_cast<int>(p.mode);
                if (std::find(modes.begin(), modes.end(), p.mode) == modes.end())
                {
                    modes.push_back(p.mode);
                }
                if (std::find(counts.begin(), counts.end(), p.nodes) == counts.end())
                {
                    counts.push_back(p.nodes);
                }
                value[{p.nodes, mi}] = efficiency ? p.efficiency : p.report.total_s * 1e6;
            }
            std::sort(counts.begin(), counts.end());

            std::string out = "# nodes counts per participating module; cb pairs that many "
                              "Cluster and Booster nodes 1:1\n# nodes";
            for (Mode m : modes)
            {
                out += " ";
                out += to_string(m);
            }
            out += "\n";
            char buf[64];
            for (int n : counts)
            {
                out += std::to_string(n);
                for (Mode m : modes)
                {
                    auto it = value.find({n, static_cast<int>(m)});
                    if (it == value.end())
                    {
                        out += " -";
                    }
                    else
                    {
                        std::snprintf(buf, sizeof(buf), " %.9g", it->second);
                        out += buf;
                    }
                }
                out += "\n";
            }
            return out;
        }

        std::string events_csv(const std::vector<mprt::TraceEvent> &events)
        {
            std::string out = "time_us,rank,op,peer,bytes\n";
            char line[256];
            for (const auto &ev : events)
            {
                std::snprintf(line, sizeof(line), "%.6f,%s,%s,%s,%llu\n", ev.time_s * 1e6,
                              ev.rank.c_str(), ev.op.c_str(), ev.peer.c_str(),
                              static_cast<unsigned long long>(ev.bytes));
                out += line;
            }
            return out;
        }
    }

    void emit_results(const ScaleTable &table, const std::filesystem::path &dir)
    {
        std::filesystem::create_directories(dir);
        write_text(dir / "results.csv", results_csv(table));
        write_text(dir / "runtime.dat", plot_data(table, false));
        write_text(dir / "efficiency.dat", plot_data(table, true));

        for (const auto &p : table.points)
        {
            const std::string stem = std::string(to_string(p.mode)) + "_" + std::to_string(p.nodes);
            write_text(dir / ("trace_" + stem + ".csv"), p.report.trace.to_csv());
            if (!p.report.events.empty())
            {
                write_text(dir / ("events_" + stem + ".csv"), events_csv(p.report.events));
            }
        }
    }
}
