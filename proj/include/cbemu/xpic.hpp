// Miniature particle-in-cell application: a 2D electrostatic model split
// into a field solver (CG Poisson solve, communication heavy) and a particle
// solver (Boris push + moment gathering, embarrassingly parallel).
//
// The same numerical kernels run in two placements:
//   * monolithic: both solvers on every rank of one world; partial moments
//     and solved fields are combined with world-wide reductions;
//   * split: the particle solver on a Booster world that spawns the field
//     solver onto Cluster nodes, exchanging row blocks through the
//     inter-communicator with non-blocking transfers overlapped by
//     diagnostics.
// All reductions fold in a fixed member order and all partitions use the
// same contiguous-block rule, so both placements produce bit-identical
// physics; only virtual time differs.
#pragma once

#include "cbemu/ckpt.hpp"
#include "cbemu/modsched.hpp"
#include "cbemu/mprt.hpp"
#include "cbemu/platform.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cbemu::xpic
{
    struct XpicError : std::runtime_error
    {
        using std::runtime_error::runtime_error;
    };

    struct SimParams
    {
        int cells_x = 32;
        int cells_y = 32;
        double cell_size = 1.0;
        double dt = 0.1;
        int particles_per_cell = 2;
        int steps = 4;
        std::uint64_t seed = 1;
        std::array<double, 3> b0 = {0.0, 0.0, 0.0};
        double solver_tol = 1e-6;
        int solver_max_iters = 5000;

        // One species; thermal_velocity 0 places a cold population.
        double thermal_velocity = 0.05;
        double charge = -1.0;
        double mass = 1.0;

        int total_cells() const noexcept { return cells_x * cells_y; }
        std::int64_t total_particles() const noexcept
        {
            return static_cast<std::int64_t>(total_cells()) * particles_per_cell;
        }
        double domain_x() const noexcept { return cells_x * cell_size; }
        double domain_y() const noexcept { return cells_y * cell_size; }
    };

    void validate(const SimParams &p);

    // Contiguous block partition with the remainder on the last part.
    struct Range
    {
        std::int64_t begin = 0;
        std::int64_t end = 0;
        std::int64_t size() const noexcept { return end - begin; }
    };
    Range block_range(std::int64_t total, int parts, int index);

    struct FieldGrid
    {
        int nx = 0;
        int ny = 0;
        double h = 1.0;
        std::vector<double> phi;
        std::vector<double> ex;
        std::vector<double> ey;
        std::array<double, 3> b0 = {0.0, 0.0, 0.0};

        std::size_t idx(int i, int j) const noexcept
        {
            return static_cast<std::size_t>(j) * static_cast<std::size_t>(nx) +
                   static_cast<std::size_t>(i);
        }
    };

    FieldGrid make_grid(const SimParams &p);

    struct ParticleSet
    {
        std::vector<double> x;
        std::vector<double> y;
        std::vector<double> vx;
        std::vector<double> vy;
        std::vector<double> vz;
        double charge = -1.0;
        double mass = 1.0;

        std::size_t size() const noexcept { return x.size(); }
    };

    // Particles of one global index block. State depends only on
    // (params.seed, global particle index), never on the rank layout.
    ParticleSet init_particles(const SimParams &p, Range block);

    struct Moments
    {
        int nx = 0;
        int ny = 0;
        std::vector<double> rho;
        std::vector<double> jx;
        std::vector<double> jy;
        std::vector<double> jz;
    };

    // Cloud-in-cell deposition of this set onto a full-size periodic grid.
    Moments pcl_gather_moments(const ParticleSet &particles, const SimParams &p);

    struct PushDiag
    {
        // Electric impulse applied during the push and the resulting
        // momentum change, both summed in particle order.
        double impulse_x = 0.0;
        double impulse_y = 0.0;
        double dmom_x = 0.0;
        double dmom_y = 0.0;
    };

    // Boris push: half electric kick, magnetic rotation, half kick, drift
    // with periodic wrap. E is interpolated with the deposition weights.
    PushDiag pcl_move(ParticleSet &particles, const FieldGrid &grid, const SimParams &p);

    // Static uniform field placeholder keeping the main-loop structure.
    std::array<double, 3> fld_calculate_b(const std::array<double, 3> &b0);

    // ------------------------------------------------------------------
    // Interface buffer: the packed image moved between the solvers.
    // Header: u32 kind (1 fields, 2 moments), u32 nx, u32 ny, u32 row0,
    // u32 nrows; then payload doubles (fields: ex rows, ey rows, b0[3];
    // moments: rho, jx, jy, jz rows).
    // ------------------------------------------------------------------

    enum class BufferKind : std::uint32_t
    {
        Fields = 1,
        Moments = 2,
    };

    struct ParsedBuffer
    {
        BufferKind kind = BufferKind::Fields;
        int nx = 0;
        int ny = 0;
        int row0 = 0;
        int nrows = 0;
        // Fields: [ex rows][ey rows], b0 populated.
        // Moments: [rho][jx][jy][jz] rows.
        std::vector<std::vector<double>> planes;
        std::array<double, 3> b0 = {0.0, 0.0, 0.0};
    };

    std::vector<std::byte> cpy_to_arr_fields(const FieldGrid &grid, int row0, int nrows);
    std::vector<std::byte> cpy_to_arr_moments(const Moments &m, int row0, int nrows);
    ParsedBuffer cpy_from_arr(std::span<const std::byte> bytes);

    // ------------------------------------------------------------------
    // Distributed field solve
    // ------------------------------------------------------------------

    struct SolveStats
    {
        int iters = 0;
        double residual_rel = 0.0;
        double bnorm = 0.0;
    };

    // Conjugate-gradient solve of the periodic 5-point Poisson problem
    // (mean-free right-hand side, warm-started from the previous phi).
    // Dot products are allreduced over `comm` every iteration and boundary
    // rows travel point-to-point, so the solver carries the global
    // communication character of a real field solver. Charges
    // `work_per_iter` field work units per iteration.
    SolveStats fld_calculate_e(mprt::RankCtx &ctx, mprt::Comm comm, FieldGrid &grid,
                               const Moments &moments, const SimParams &p, Range rows,
                               double work_per_iter);

    // Kinetic and field energy, reduced over the provided communicators in
    // fixed member order.
    double kinetic_energy(mprt::RankCtx &ctx, mprt::Comm comm, const ParticleSet &particles);
    double field_energy_rows(mprt::RankCtx &ctx, mprt::Comm comm, const FieldGrid &grid, Range rows);
    std::pair<double, double> compute_energies(mprt::RankCtx &ctx, mprt::Comm comm,
                                               const ParticleSet &particles, const FieldGrid &grid,
                                               Range rows);

    // ------------------------------------------------------------------
    // Inter-module exchange: non-blocking, rank-to-rank by contiguous row
    // blocks. Moments go from every particle rank to every field rank
    // (partial sums must reach each row owner); solved fields go from each
    // field rank to the particle ranks whose transfer blocks intersect its
    // rows. Callers overlap diagnostics before waiting on the requests.
    // ------------------------------------------------------------------

    inline constexpr int kTagMoments = 200;
    inline constexpr int kTagFields = 201;

    std::vector<mprt::Request> booster_to_cluster(mprt::RankCtx &ctx, const mprt::InterComm &inter,
                                                  const Moments &partial, int field_ranks);
    std::vector<mprt::Request> cluster_to_booster(mprt::RankCtx &ctx, const mprt::InterComm &inter,
                                                  const FieldGrid &grid, Range rows,
                                                  int particle_ranks);

    // ------------------------------------------------------------------
    // Step trace
    // ------------------------------------------------------------------

    struct StepRow
    {
        int step = 0;
        double kinetic = 0.0;
        double field_energy = 0.0;
        int cg_iters = 0;
        double residual_rel = 0.0;
        double charge_err_rel = 0.0;
        double t_field_us = 0.0;
        double t_particle_us = 0.0;
        double t_exchange_us = 0.0;
    };

    struct StepTrace
    {
        std::vector<StepRow> rows;

        // Per-role accounting in virtual seconds, filled by the role that
        // produced this trace (and merged across roles in split mode).
        double loop_end_clock_s = 0.0;
        double span_s = 0.0;
        double field_total_s = 0.0;
        double particle_total_s = 0.0;
        double surcharge_total_s = 0.0;
        double transfer_total_s = 0.0;

        // Modeled cross-module exchange cost attributed to each solver side
        // (surcharge plus raw transfer time); zero in monolithic runs.
        double exchange_field_side_s = 0.0;
        double exchange_particle_side_s = 0.0;

        std::string to_csv() const;
    };

    // Observation hook for state snapshots: (step, plane name, flat offset,
    // values). Offsets are global (row * nx for grid planes, particle index
    // for particle planes), so snapshots assemble identically in any mode.
    using CaptureFn =
        std::function<void(int step, const std::string &what, std::int64_t offset,
                           std::span<const double> values)>;

    struct CkptPlan
    {
        ckpt::Store *store = nullptr;
        ckpt::Level level = ckpt::Level::Local;
        double interval_s = 0.0;
        std::uint32_t n_nodes = 1;
    };

    // Shared context captured by the registered roles.
    struct RunContext
    {
        SimParams params;
        sched::Allocation alloc;
        int field_ranks = 1;

        StepTrace *split_out = nullptr;
        StepTrace *mono_out = nullptr;
        CaptureFn capture;

        std::optional<CkptPlan> ckpt_booster;
        std::optional<CkptPlan> ckpt_cluster;
        std::optional<CkptPlan> ckpt_mono;
    };

    // Registers "xpic.monolithic", "xpic.booster" and "xpic.cluster" with
    // the runtime. The booster role spawns the cluster role, mirroring the
    // production launch order.
    void register_xpic_roles(mprt::Runtime &rt, std::shared_ptr<RunContext> rc);

    // Role drivers (also callable directly from custom roles/tests).
    StepTrace run_monolithic(mprt::RankCtx &ctx, const RunContext &rc);
    StepTrace run_booster_role(mprt::RankCtx &ctx, const RunContext &rc);
    StepTrace run_cluster_role(mprt::RankCtx &ctx, const RunContext &rc, const mprt::InterComm &parent);
}
