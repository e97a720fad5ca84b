#include "cbemu/platform.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

namespace cbemu::platform
{
    namespace
    {
        using nlohmann::json;

        void require_known_keys(const json &j, const std::string &prefix,
                                const std::set<std::string> &known)
        {
            for (const auto &item : j.items())
            {
                if (known.count(item.key()) == 0)
                {
                    throw ConfigError("unknown config key: " + prefix + item.key());
                }
            }
        }

        double require_number(const json &j, const std::string &path)
        {
            if (!j.is_number())
            {
                throw ConfigError("config key is not a number: " + path);
            }
            return j.get<double>();
        }

        int require_int(const json &j, const std::string &path)
        {
            if (!j.is_number_integer())
            {
                throw ConfigError("config key is not an integer: " + path);
            }
            return j.get<int>();
        }

        void parse_module(const json &j, const std::string &prefix, ModuleSpec &out)
        {
            require_known_keys(j, prefix + ".",
                               {"node_count", "cores_per_node", "speed_factor_field",
                                "speed_factor_particle", "mpi_latency"});
            if (j.contains("node_count"))
            {
                out.node_count = require_int(j.at("node_count"), prefix + ".node_count");
            }
            if (j.contains("cores_per_node"))
            {
                out.cores_per_node = require_int(j.at("cores_per_node"), prefix + ".cores_per_node");
            }
            if (j.contains("speed_factor_field"))
            {
                out.speed_factor_field = require_number(j.at("speed_factor_field"), prefix + ".speed_factor_field");
            }
            if (j.contains("speed_factor_particle"))
            {
                out.speed_factor_particle =
                    require_number(j.at("speed_factor_particle"), prefix + ".speed_factor_particle");
            }
            if (j.contains("mpi_latency"))
            {
                out.mpi_latency_us = require_number(j.at("mpi_latency"), prefix + ".mpi_latency");
            }
        }

        void parse_work_model(const json &j, WorkModel &out)
        {
            require_known_keys(j, "work_model.",
                               {"field_units_per_cell_iter", "particle_units_per_particle",
                                "diag_work_fraction"});
            if (j.contains("field_units_per_cell_iter"))
            {
                out.field_units_per_cell_iter =
                    require_number(j.at("field_units_per_cell_iter"), "work_model.field_units_per_cell_iter");
            }
            if (j.contains("particle_units_per_particle"))
            {
                out.particle_units_per_particle =
                    require_number(j.at("particle_units_per_particle"), "work_model.particle_units_per_particle");
            }
            if (j.contains("diag_work_fraction"))
            {
                out.diag_work_fraction = require_number(j.at("diag_work_fraction"), "work_model.diag_work_fraction");
            }
        }
    }

    const char *to_string(NodeKind kind) noexcept
    {
        return kind == NodeKind::Cluster ? "cluster" : "booster";
    }

    PlatformConfig default_config()
    {
        PlatformConfig cfg;

        cfg.cluster.kind = NodeKind::Cluster;
        cfg.cluster.node_count = 16;
        cfg.cluster.cores_per_node = 24;
        cfg.cluster.speed_factor_field = 1.0;
        cfg.cluster.speed_factor_particle = 1.0 / 1.35;
        cfg.cluster.mpi_latency_us = 1.0;

        cfg.booster.kind = NodeKind::Booster;
        cfg.booster.node_count = 8;
        cfg.booster.cores_per_node = 64;
        cfg.booster.speed_factor_field = 1.0 / 6.0;
        cfg.booster.speed_factor_particle = 1.0;
        cfg.booster.mpi_latency_us = 1.8;

        cfg.interconnect.link_bandwidth_bits_per_s = 100e9;
        cfg.comm_overhead_fraction = 0.035;
        return cfg;
    }

    PlatformConfig load_platform_config(const std::string &text)
    {
        PlatformConfig cfg = default_config();
        if (text.empty())
        {
            return cfg;
        }

        json j;
        try
        {
            j = json::parse(text, nullptr, true, /*allow comments*/ true);
        }
        catch (const json::parse_error &e)
        {
            throw ConfigError(std::string("config parse error: ") + e.what());
        }
        if (!j.is_object())
        {
            throw ConfigError("config root must be an object");
        }

        require_known_keys(j, "", {"cluster", "booster", "interconnect", "comm_overhead_fraction", "work_model"});

        if (j.contains("cluster"))
        {
            parse_module(j.at("cluster"), "cluster", cfg.cluster);
        }
        if (j.contains("booster"))
        {
            parse_module(j.at("booster"), "booster", cfg.booster);
        }
        if (j.contains("interconnect"))
        {
            const json &ic = j.at("interconnect");
            require_known_keys(ic, "interconnect.", {"link_bandwidth"});
            if (ic.contains("link_bandwidth"))
            {
                cfg.interconnect.link_bandwidth_bits_per_s =
                    require_number(ic.at("link_bandwidth"), "interconnect.link_bandwidth");
            }
        }
        if (j.contains("comm_overhead_fraction"))
        {
            cfg.comm_overhead_fraction = require_number(j.at("comm_overhead_fraction"), "comm_overhead_fraction");
        }
        if (j.contains("work_model"))
        {
            parse_work_model(j.at("work_model"), cfg.work_model);
        }

        if (auto violations = validate_config(cfg); !violations.empty())
        {
            std::string msg = "invalid config:";
            for (const auto &v : violations)
            {
                msg += " " + v;
            }
            throw ConfigError(msg);
        }
        return cfg;
    }

    std::string serialize_config(const PlatformConfig &cfg)
    {
        const auto module_json = [](const ModuleSpec &m) {
            return json{
                {"node_count", m.node_count},
                {"cores_per_node", m.cores_per_node},
                {"speed_factor_field", m.speed_factor_field},
                {"speed_factor_particle", m.speed_factor_particle},
                {"mpi_latency", m.mpi_latency_us},
            };
        };

        json j{
            {"cluster", module_json(cfg.cluster)},
            {"booster", module_json(cfg.booster)},
            {"interconnect", json{{"link_bandwidth", cfg.interconnect.link_bandwidth_bits_per_s}}},
            {"comm_overhead_fraction", cfg.comm_overhead_fraction},
            {"work_model",
             json{
                 {"field_units_per_cell_iter", cfg.work_model.field_units_per_cell_iter},
                 {"particle_units_per_particle", cfg.work_model.particle_units_per_particle},
                 {"diag_work_fraction", cfg.work_model.diag_work_fraction},
             }},
        };
        return j.dump(2) + "\n";
    }

    std::vector<std::string> validate_config(const PlatformConfig &cfg)
    {
        std::vector<std::string> out;

        const auto check_module = [&out](const ModuleSpec &m, const std::string &prefix) {
            if (m.node_count < 1)
            {
                out.push_back(prefix + ".node_count");
            }
            if (m.cores_per_node < 1)
            {
                out.push_back(prefix + ".cores_per_node");
            }
            if (!(m.speed_factor_field > 0.0))
            {
                out.push_back(prefix + ".speed_factor_field");
            }
            if (!(m.speed_factor_particle > 0.0))
            {
                out.push_back(prefix + ".speed_factor_particle");
            }
            if (!(m.mpi_latency_us > 0.0))
            {
                out.push_back(prefix + ".mpi_latency");
            }
        };

        check_module(cfg.cluster, "cluster");
        check_module(cfg.booster, "booster");
        if (!(cfg.interconnect.link_bandwidth_bits_per_s > 0.0))
        {
            out.push_back("interconnect.link_bandwidth");
        }
        if (!(cfg.comm_overhead_fraction >= 0.0 && cfg.comm_overhead_fraction < 1.0))
        {
            out.push_back("comm_overhead_fraction");
        }
        if (!(cfg.work_model.field_units_per_cell_iter >= 0.0))
        {
            out.push_back("work_model.field_units_per_cell_iter");
        }
        if (!(cfg.work_model.particle_units_per_particle >= 0.0))
        {
            out.push_back("work_model.particle_units_per_particle");
        }
        if (!(cfg.work_model.diag_work_fraction >= 0.0 && cfg.work_model.diag_work_fraction < 1.0))
        {
            out.push_back("work_model.diag_work_fraction");
        }
        return out;
    }

    double comm_cost(double size_bytes, NodeKind src, NodeKind dst, const PlatformConfig &cfg)
    {
        if (size_bytes < 0.0)
        {
            throw std::invalid_argument("comm_cost: negative size");
        }
        // Cross-kind latency is the max of the endpoint latencies: the slower
        // endpoint dominates small-message cost.
        const double latency =
            std::max(cfg.module_spec(src).mpi_latency_s(), cfg.module_spec(dst).mpi_latency_s());
        return latency + size_bytes / cfg.interconnect.bandwidth_bytes_per_s();
    }

    double compute_cost(double work, NodeKind kind, Solver solver, const PlatformConfig &cfg)
    {
        if (work < 0.0)
        {
            throw std::invalid_argument("compute_cost: negative work");
        }
        const ModuleSpec &m = cfg.module_spec(kind);
        const double rate = solver == Solver::Field ? m.speed_factor_field : m.speed_factor_particle;
        return work / rate;
    }
}
