// Benchmark harness: runs the mini application Cluster-only, Booster-only
// or in Cluster-Booster mode, collects virtual-time reports and produces
// the weak-scaling speedup/efficiency tables and plot data.
#pragma once

#include "cbemu/ckpt.hpp"
#include "cbemu/mprt.hpp"
#include "cbemu/platform.hpp"
#include "cbemu/xpic.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cbemu::bench
{
    struct BenchError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    enum class Mode
    {
        Cluster,
        Booster,
        CB,
    };

    const char *to_string(Mode mode) noexcept;
    std::optional<Mode> parse_mode(const std::string &name);

    struct CkptOptions
    {
        ckpt::Level level = ckpt::Level::Local;
        double interval_s = 0.0;
        std::filesystem::path root;
    };

    // One benchmark run. `nodes` counts nodes per participating module: cb
    // mode reserves that many Cluster AND Booster nodes (1:1 pairing).
    // The grid in `per_node` is the per-node problem; weak scaling grows it
    // with the node count.
    struct Scenario
    {
        Mode mode = Mode::CB;
        int nodes = 1;
        xpic::SimParams per_node;
        std::optional<CkptOptions> checkpoint;
        bool trace = false;
    };

    struct RunReport
    {
        Scenario scenario;
        xpic::SimParams actual;

        double total_s = 0.0;
        double field_s = 0.0;
        double particle_s = 0.0;
        // Non-overlapped exchange: whatever the span is not attributed to a
        // solver segment (surcharges, transfers, interface reductions).
        double exchange_s = 0.0;

        // Modeled per-side exchange shares (split mode only).
        double exchange_field_side_s = 0.0;
        double exchange_particle_side_s = 0.0;

        xpic::StepTrace trace;
        std::vector<mprt::TraceEvent> events;
    };

    // Grows the per-node grid to `nodes` copies, alternating the doubled
    // dimension to keep the domain square-ish.
    xpic::SimParams scale_params(const xpic::SimParams &per_node, int nodes);

    RunReport run_scenario(const Scenario &s, const platform::PlatformConfig &cfg);

    struct ScalePoint
    {
        Mode mode = Mode::CB;
        int nodes = 1;
        RunReport report;
        double speedup = 1.0;
        double efficiency = 1.0;
    };

    struct ScaleTable
    {
        std::vector<ScalePoint> points;
    };

    // Runs every (mode, count) pair; counts must be ascending and start at 1
    // so each mode's own one-node run anchors its efficiency.
    ScaleTable weak_scaling(const std::vector<Mode> &modes, const std::vector<int> &node_counts,
                            const xpic::SimParams &per_node, const platform::PlatformConfig &cfg,
                            const std::optional<CkptOptions> &checkpoint = {}, bool trace = false);

    struct SpeedupSummary
    {
        double cluster_over_cb = 0.0;
        double booster_over_cb = 0.0;
        // Per-solver ratios: the same field work on Booster vs Cluster and
        // the same particle work on Cluster vs Booster.
        double field_booster_over_cluster = 0.0;
        double particle_cluster_over_booster = 0.0;
    };

    SpeedupSummary speedup_table(const RunReport &cluster, const RunReport &booster,
                                 const RunReport &cb);

    std::string results_csv(const ScaleTable &table);

    // Writes results.csv plus runtime.dat / efficiency.dat (x = nodes, one
    // column per mode) and per-run step traces and event logs.
    void emit_results(const ScaleTable &table, const std::filesystem::path &dir);
}
