// Emulated machine description: two node pools (Cluster, Booster) on a
// uniform fabric, plus the virtual-time cost model used by the runtime.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbemu::platform
{
    enum class NodeKind : std::uint8_t
    {
        Cluster = 0,
        Booster = 1,
    };

    const char *to_string(NodeKind kind) noexcept;

    enum class Solver : std::uint8_t
    {
        Field = 0,
        Particle = 1,
    };

    // One homogeneous node pool. Latency is kept in the config-file unit
    // (microseconds) so a load/serialize/load cycle is bit-exact; use
    // mpi_latency_s() for arithmetic.
    struct ModuleSpec
    {
        NodeKind kind = NodeKind::Cluster;
        int node_count = 1;
        int cores_per_node = 1;

        // Work-unit throughput of this module per solver (work-units/second).
        // Only the cross-module ratios are calibrated; the faster module for
        // each solver runs at rate 1.
        double speed_factor_field = 1.0;
        double speed_factor_particle = 1.0;

        double mpi_latency_us = 1.0;

        double mpi_latency_s() const noexcept { return mpi_latency_us * 1e-6; }
    };

    struct InterconnectModel
    {
        // Uniform fabric: one bandwidth for every node pair. Stored in the
        // config-file unit (bits/s).
        double link_bandwidth_bits_per_s = 100e9;

        double bandwidth_bytes_per_s() const noexcept { return link_bandwidth_bits_per_s / 8.0; }
    };

    // Work-unit scales for the bundled particle-in-cell benchmark. They are
    // ordinary config keys (not hard-coded) so the calibration is visible and
    // overridable next to the hardware numbers it was fitted against.
    struct WorkModel
    {
        // Field-solver work units per grid cell per CG iteration.
        double field_units_per_cell_iter = 1.0e-9;

        // Particle-solver work units per particle per step.
        double particle_units_per_particle = 1.5e-6;

        // Diagnostics (energies, output) charged as a fraction of the
        // preceding solver segment; this is the designated overlap work.
        double diag_work_fraction = 0.01;
    };

    struct PlatformConfig
    {
        ModuleSpec cluster;
        ModuleSpec booster;
        InterconnectModel interconnect;

        // Cross-module exchange surcharge: each solver side of a split run
        // charges this fraction of its compute segment as exchange handling.
        double comm_overhead_fraction = 0.035;

        WorkModel work_model;

        const ModuleSpec &module_spec(NodeKind kind) const noexcept
        {
            return kind == NodeKind::Cluster ? cluster : booster;
        }
    };

    // Prototype-machine defaults: 16 Cluster / 8 Booster nodes, 100 Gbit/s
    // fabric, 1.0 us / 1.8 us MPI latency, field solver 6x faster on the
    // Cluster, particle solver 1.35x faster on the Booster.
    PlatformConfig default_config();

    struct ConfigError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    // Parses a JSON document; unspecified fields keep their defaults.
    // Latencies are microseconds and bandwidth is bits/s in the file.
    // Throws ConfigError naming the offending key on parse or validation
    // failure.
    PlatformConfig load_platform_config(const std::string &text);

    // Inverse of load_platform_config (same units as the file schema).
    std::string serialize_config(const PlatformConfig &cfg);

    // Returns every invariant violation as a key path; empty means valid.
    std::vector<std::string> validate_config(const PlatformConfig &cfg);

    // End-to-end transfer time for one message: max(endpoint latency) plus
    // size over fabric bandwidth. Monotone and affine in size.
    double comm_cost(double size_bytes, NodeKind src, NodeKind dst, const PlatformConfig &cfg);

    // Virtual seconds to execute `work` work-units of the given solver on a
    // node of the given kind.
    double compute_cost(double work, NodeKind kind, Solver solver, const PlatformConfig &cfg);
}
