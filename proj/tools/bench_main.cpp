// Command-line benchmark driver: single runs and weak-scaling sweeps over
// the emulated two-module machine.
#include <CLI11.hpp>

#include "cbemu/bench.hpp"
#include "cbemu/platform.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace
{
    struct CommonOpts
    {
        int cells_per_node = 1024;
        int particles_per_cell = 2;
        int steps = 4;
        std::uint64_t seed = 1;
        double dt = 0.1;
        double tol = 1e-6;
        double thermal_velocity = 0.05;
        double b0z = 0.0;
        std::string config_path;
        std::string out_dir = "bench-out";
        std::string ckpt_level;
        double ckpt_interval = 0.0;
        bool trace = false;
    };

    void add_common(CLI::App *cmd, CommonOpts &o)
    {
        cmd->add_option("--cells-per-node", o.cells_per_node,
                        "Grid cells per node (must be a perfect square)");
        cmd->add_option("--particles-per-cell", o.particles_per_cell, "Particles per cell");
        cmd->add_option("--steps", o.steps, "Time steps");
        cmd->add_option("--seed", o.seed, "Random seed");
        cmd->add_option("--dt", o.dt, "Time step size");
        cmd->add_option("--tol", o.tol, "Field solver tolerance");
        cmd->add_option("--thermal-velocity", o.thermal_velocity, "Thermal velocity");
        cmd->add_option("--b0z", o.b0z, "Static magnetic field (z component)");
        cmd->add_option("--config", o.config_path, "Platform config JSON file");
        cmd->add_option("--ckpt-level", o.ckpt_level, "Checkpoint level: local|buddy|global");
        cmd->add_option("--ckpt-interval", o.ckpt_interval, "Checkpoint interval (virtual seconds)");
        cmd->add_flag("--trace", o.trace, "Write runtime event logs");
        cmd->add_option("--out", o.out_dir, "Output directory");
    }

    int build_per_node(const CommonOpts &o, cbemu::xpic::SimParams &p)
    {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(o.cells_per_node))));
        if (side < 1 || side * side != o.cells_per_node)
        {
            std::fprintf(stderr, "error: --cells-per-node must be a perfect square, got %d\n",
                         o.cells_per_node);
            return 1;
        }
        p.cells_x = side;
        p.cells_y = side;
        p.particles_per_cell = o.particles_per_cell;
        p.steps = o.steps;
        p.seed = o.seed;
        p.dt = o.dt;
        p.solver_tol = o.tol;
        p.thermal_velocity = o.thermal_velocity;
        p.b0 = {0.0, 0.0, o.b0z};
        return 0;
    }

    int build_ckpt(const CommonOpts &o, std::optional<cbemu::bench::CkptOptions> &out)
    {
        if (o.ckpt_level.empty())
        {
            return 0;
        }
        cbemu::bench::CkptOptions c;
        if (o.ckpt_level == "local")
        {
            c.level = cbemu::ckpt::Level::Local;
        }
        else if (o.ckpt_level == "buddy")
        {
            c.level = cbemu::ckpt::Level::Buddy;
        }
        else if (o.ckpt_level == "global")
        {
            c.level = cbemu::ckpt::Level::Global;
        }
        else
        {
            std::fprintf(stderr, "error: unknown checkpoint level '%s'\n", o.ckpt_level.c_str());
            return 1;
        }
        if (!(o.ckpt_interval > 0.0))
        {
            std::fprintf(stderr, "error: --ckpt-interval must be positive\n");
            return 1;
        }
        c.interval_s = o.ckpt_interval;
        c.root = std::filesystem::path(o.out_dir) / "ckpt";
        out = c;
        return 0;
    }

    int load_config(const CommonOpts &o, cbemu::platform::PlatformConfig &cfg)
    {
        if (o.config_path.empty())
        {
            cfg = cbemu::platform::default_config();
            return 0;
        }
        std::ifstream f(o.config_path);
        if (!f)
        {
            std::fprintf(stderr, "error: cannot open config file '%s'\n", o.config_path.c_str());
            return 1;
        }
        std::stringstream ss;
        ss << f.rdbuf();
        cfg = cbemu::platform::load_platform_config(ss.str());
        return 0;
    }

    void write_config_used(const cbemu::platform::PlatformConfig &cfg, const std::string &out_dir)
    {
        std::filesystem::create_directories(out_dir);
        std::ofstream f(std::filesystem::path(out_dir) / "config_used.json",
                        std::ios::binary | std::ios::trunc);
        f << cbemu::platform::serialize_config(cfg);
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Virtual-time benchmark for the two-module machine emulator"};
    app.require_subcommand(1);

    CommonOpts run_opts;
    std::string run_mode = "cb";
    int run_nodes = 1;
    CLI::App *run_cmd = app.add_subcommand("run", "Run one scenario");
    run_cmd->add_option("--mode", run_mode, "cluster|booster|cb")->required();
    run_cmd->add_option("--nodes", run_nodes, "Nodes per participating module")->required();
    add_common(run_cmd, run_opts);

    CommonOpts scale_opts;
    std::string scale_modes = "all";
    std::vector<int> scale_nodes{1, 2, 4, 8};
    CLI::App *scale_cmd = app.add_subcommand("scale", "Weak-scaling sweep");
    scale_cmd->add_option("--modes", scale_modes, "all or comma list of cluster,booster,cb");
    scale_cmd->add_option("--nodes", scale_nodes, "Ascending node counts starting at 1")
        ->delimiter(',');
    add_common(scale_cmd, scale_opts);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try
    {
        if (run_cmd->parsed())
        {
            const auto mode = cbemu::bench::parse_mode(run_mode);
            if (!mode)
            {
                std::fprintf(stderr, "error: unknown mode '%s'\n", run_mode.c_str());
                return 1;
            }
            cbemu::bench::Scenario s;
            s.mode = *mode;
            s.nodes = run_nodes;
            s.trace = run_opts.trace;
            if (build_per_node(run_opts, s.per_node) != 0 ||
                build_ckpt(run_opts, s.checkpoint) != 0)
            {
                return 1;
            }
            cbemu::platform::PlatformConfig cfg;
            if (load_config(run_opts, cfg) != 0)
            {
                return 1;
            }

            cbemu::bench::ScaleTable table;
            cbemu::bench::ScalePoint point;
            point.mode = s.mode;
            point.nodes = s.nodes;
            point.report = cbemu::bench::run_scenario(s, cfg);
            table.points.push_back(std::move(point));

            cbemu::bench::emit_results(table, run_opts.out_dir);
            write_config_used(cfg, run_opts.out_dir);

            const auto &r = table.points[0].report;
            std::printf("%s nodes=%d total=%.3f ms (field %.3f ms, particle %.3f ms, "
                        "exchange %.3f ms)\n",
                        cbemu::bench::to_string(s.mode), s.nodes, r.total_s * 1e3, r.field_s * 1e3,
                        r.particle_s * 1e3, r.exchange_s * 1e3);
            return 0;
        }

        // scale
        std::vector<cbemu::bench::Mode> modes;
        if (scale_modes == "all")
        {
            modes = {cbemu::bench::Mode::Cluster, cbemu::bench::Mode::Booster,
                     cbemu::bench::Mode::CB};
        }
        else
        {
            std::stringstream ss(scale_modes);
            std::string item;
            while (std::getline(ss, item, ','))
            {
                const auto mode = cbemu::bench::parse_mode(item);
                if (!mode)
                {
                    std::fprintf(stderr, "error: unknown mode '%s'\n", item.c_str());
                    return 1;
                }
                modes.push_back(*mode);
            }
            if (modes.empty())
            {
                std::fprintf(stderr, "error: no modes selected\n");
                return 1;
            }
        }

        cbemu::xpic::SimParams per_node;
        std::optional<cbemu::bench::CkptOptions> ckpt;
        if (build_per_node(scale_opts, per_node) != 0 || build_ckpt(scale_opts, ckpt) != 0)
        {
            return 1;
        }
        cbemu::platform::PlatformConfig cfg;
        if (load_config(scale_opts, cfg) != 0)
        {
            return 1;
        }

        const auto table =
            cbemu::bench::weak_scaling(modes, scale_nodes, per_node, cfg, ckpt, scale_opts.trace);
        cbemu::bench::emit_results(table, scale_opts.out_dir);
        write_config_used(cfg, scale_opts.out_dir);

        for (const auto &p : table.points)
        {
            std::printf("%s nodes=%d total=%.3f ms speedup=%.3f efficiency=%.3f\n",
                        cbemu::bench::to_string(p.mode), p.nodes, p.report.total_s * 1e3, p.speedup,
                        p.efficiency);
        }
        return 0;
    }
    catch (const std::exception &e)
    {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
