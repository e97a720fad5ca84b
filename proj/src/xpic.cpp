#include "cbemu/xpic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace cbemu::xpic
{
    using mprt::Comm;
    using mprt::InterComm;
    using mprt::RankCtx;
    using mprt::ReduceOp;
    using mprt::Request;
    using platform::NodeKind;
    using platform::Solver;

    namespace
    {
        constexpr int kTagGather = 202;
        constexpr int kTagSidecar = 210;
        constexpr int kTagCkpt = 220;
        constexpr int kTagHaloToPrev = 100;
        constexpr int kTagHaloToNext = 101;

        std::uint64_t splitmix64(std::uint64_t x)
        {
            x += 0x9e3779b97f4a7c15ull;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
            return x ^ (x >> 31);
        }

        // k-th uniform draw for one particle, independent of rank layout.
        double unit_draw(std::uint64_t seed, std::int64_t particle, int k)
        {
            const std::uint64_t v =
                splitmix64(seed ^ (0x100000001b3ull * static_cast<std::uint64_t>(particle) +
                                   0x9e3779b9ull * static_cast<std::uint64_t>(k + 1)));
            return static_cast<double>(v >> 11) * 0x1.0p-53;
        }

        double wrap_periodic(double x, double length)
        {
            x -= length * std::floor(x / length);
            if (x >= length)
            {
                x -= length;
            }
            if (x < 0.0)
            {
                x = 0.0;
            }
            return x;
        }

        void put_u32(std::vector<std::byte> &out, std::uint32_t v)
        {
            const std::size_t at = out.size();
            out.resize(at + 4);
            std::memcpy(out.data() + at, &v, 4);
        }

        void put_doubles(std::vector<std::byte> &out, const double *src, std::size_t n)
        {
            const std::size_t at = out.size();
            out.resize(at + n * 8);
            std::memcpy(out.data() + at, src, n * 8);
        }

        std::uint32_t get_u32(std::span<const std::byte> in, std::size_t at)
        {
            std::uint32_t v;
            std::memcpy(&v, in.data() + at, 4);
            return v;
        }
    }

    void validate(const SimParams &p)
    {
        if (p.cells_x < 1 || p.cells_y < 1 || p.particles_per_cell < 1 || p.steps < 0)
        {
            throw XpicError("invalid simulation size parameters");
        }
        if (!(p.cell_size > 0.0) || !(p.dt > 0.0))
        {
            throw XpicError("cell_size and dt must be positive");
        }
        if (!(p.solver_tol > 0.0) || p.solver_max_iters < 1)
        {
            throw XpicError("solver tolerance and iteration limit must be positive");
        }
        if (!(p.mass > 0.0))
        {
            throw XpicError("particle mass must be positive");
        }
        if (p.thermal_velocity < 0.0)
        {
            throw XpicError("thermal velocity must be non-negative");
        }
    }

    Range block_range(std::int64_t total, int parts, int index)
    {
        const std::int64_t q = total / parts;
        Range r;
        r.begin = q * index;
        r.end = index == parts - 1 ? total : q * (index + 1);
        return r;
    }

    FieldGrid make_grid(const SimParams &p)
    {
        FieldGrid g;
        g.nx = p.cells_x;
        g.ny = p.cells_y;
        g.h = p.cell_size;
        g.b0 = p.b0;
        const std::size_t n = static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny);
        g.phi.assign(n, 0.0);
        g.ex.assign(n, 0.0);
        g.ey.assign(n, 0.0);
        return g;
    }

    ParticleSet init_particles(const SimParams &p, Range block)
    {
        ParticleSet set;
        set.charge = p.charge;
        set.mass = p.mass;
        const std::size_t n = static_cast<std::size_t>(block.size());
        set.x.resize(n);
        set.y.resize(n);
        set.vx.assign(n, 0.0);
        set.vy.assign(n, 0.0);
        set.vz.assign(n, 0.0);

        const double lx = p.domain_x();
        const double ly = p.domain_y();
        for (std::int64_t g = block.begin; g < block.end; ++g)
        {
            const std::size_t i = static_cast<std::size_t>(g - block.begin);
            set.x[i] = wrap_periodic(unit_draw(p.seed, g, 0) * lx, lx);
            set.y[i] = wrap_periodic(unit_draw(p.seed, g, 1) * ly, ly);
            if (p.thermal_velocity > 0.0)
            {
                // Box-Muller pairs; the fourth draw seeds the third component.
                const double u1 = unit_draw(p.seed, g, 2);
                const double u2 = unit_draw(p.seed, g, 3);
                const double u3 = unit_draw(p.seed, g, 4);
                const double u4 = unit_draw(p.seed, g, 5);
                const double r1 = std::sqrt(-2.0 * std::log1p(-u1));
                const double r2 = std::sqrt(-2.0 * std::log1p(-u3));
                set.vx[i] = p.thermal_velocity * r1 * std::cos(2.0 * M_PI * u2);
                set.vy[i] = p.thermal_velocity * r1 * std::sin(2.0 * M_PI * u2);
                set.vz[i] = p.thermal_velocity * r2 * std::cos(2.0 * M_PI * u4);
            }
        }
        return set;
    }

    Moments pcl_gather_moments(const ParticleSet &particles, const SimParams &p)
    {
        Moments m;
        m.nx = p.cells_x;
        m.ny = p.cells_y;
        const std::size_t n = static_cast<std::size_t>(m.nx) * static_cast<std::size_t>(m.ny);
        m.rho.assign(n, 0.0);
        m.jx.assign(n, 0.0);
        m.jy.assign(n, 0.0);
        m.jz.assign(n, 0.0);

        const double h = p.cell_size;
        const double inv_area = 1.0 / (h * h);
        const double q = particles.charge;

        for (std::size_t k = 0; k < particles.size(); ++k)
        {
            const double gx = particles.x[k] / h;
            const double gy = particles.y[k] / h;
            const int i0 = static_cast<int>(gx);
            const int j0 = static_cast<int>(gy);
            const double fx = gx - i0;
            const double fy = gy - j0;
            const int i1 = (i0 + 1) % m.nx;
            const int j1 = (j0 + 1) % m.ny;

            const double w00 = (1.0 - fx) * (1.0 - fy);
            const double w10 = fx * (1.0 - fy);
            const double w01 = (1.0 - fx) * fy;
            const double w11 = fx * fy;

            const std::size_t c00 = static_cast<std::size_t>(j0) * m.nx + i0;
            const std::size_t c10 = static_cast<std::size_t>(j0) * m.nx + i1;
            const std::size_t c01 = static_cast<std::size_t>(j1) * m.nx + i0;
            const std::size_t c11 = static_cast<std::size_t>(j1) * m.nx + i1;

            const double qa = q * inv_area;
            m.rho[c00] += qa * w00;
            m.rho[c10] += qa * w10;
            m.rho[c01] += qa * w01;
            m.rho[c11] += qa * w11;

            const double jxv = qa * particles.vx[k];
            const double jyv = qa * particles.vy[k];
            const double jzv = qa * particles.vz[k];
            m.jx[c00] += jxv * w00;
            m.jx[c10] += jxv * w10;
            m.jx[c01] += jxv * w01;
            m.jx[c11] += jxv * w11;
            m.jy[c00] += jyv * w00;
            m.jy[c10] += jyv * w10;
            m.jy[c01] += jyv * w01;
            m.jy[c11] += jyv * w11;
            m.jz[c00] += jzv * w00;
            m.jz[c10] += jzv * w10;
            m.jz[c01] += jzv * w01;
            m.jz[c11] += jzv * w11;
        }
        return m;
    }

    PushDiag pcl_move(ParticleSet &particles, const FieldGrid &grid, const SimParams &p)
    {
        PushDiag diag;
        const double h = grid.h;
        const double lx = p.domain_x();
        const double ly = p.domain_y();
        const double q = particles.charge;
        const double m = particles.mass;
        const double qmdt2 = q * p.dt / (2.0 * m);

        const double tx = qmdt2 * grid.b0[0];
        const double ty = qmdt2 * grid.b0[1];
        const double tz = qmdt2 * grid.b0[2];
        const double t2 = tx * tx + ty * ty + tz * tz;
        const double sx = 2.0 * tx / (1.0 + t2);
        const double sy = 2.0 * ty / (1.0 + t2);
        const double sz = 2.0 * tz / (1.0 + t2);

        for (std::size_t k = 0; k < particles.size(); ++k)
        {
            const double gx = particles.x[k] / h;
            const double gy = particles.y[k] / h;
            const int i0 = static_cast<int>(gx);
            const int j0 = static_cast<int>(gy);
            const double fx = gx - i0;
            const double fy = gy - j0;
            const int i1 = (i0 + 1) % grid.nx;
            const int j1 = (j0 + 1) % grid.ny;

            const double w00 = (1.0 - fx) * (1.0 - fy);
            const double w10 = fx * (1.0 - fy);
            const double w01 = (1.0 - fx) * fy;
            const double w11 = fx * fy;

            const std::size_t c00 = grid.idx(i0, j0);
            const std::size_t c10 = grid.idx(i1, j0);
            const std::size_t c01 = grid.idx(i0, j1);
            const std::size_t c11 = grid.idx(i1, j1);

            const double epx =
                w00 * grid.ex[c00] + w10 * grid.ex[c10] + w01 * grid.ex[c01] + w11 * grid.ex[c11];
            const double epy =
                w00 * grid.ey[c00] + w10 * grid.ey[c10] + w01 * grid.ey[c01] + w11 * grid.ey[c11];

            const double vx0 = particles.vx[k];
            const double vy0 = particles.vy[k];
            const double vz0 = particles.vz[k];

            // Half electric kick.
            double vmx = vx0 + qmdt2 * epx;
            double vmy = vy0 + qmdt2 * epy;
            double vmz = vz0;

            // Magnetic rotation.
            const double prx = vmx + (vmy * tz - vmz * ty);
            const double pry = vmy + (vmz * tx - vmx * tz);
            const double prz = vmz + (vmx * ty - vmy * tx);
            const double vpx = vmx + (pry * sz - prz * sy);
            const double vpy = vmy + (prz * sx - prx * sz);
            const double vpz = vmz + (prx * sy - pry * sx);

            // Second half kick.
            const double vx1 = vpx + qmdt2 * epx;
            const double vy1 = vpy + qmdt2 * epy;
            const double vz1 = vpz;

            particles.vx[k] = vx1;
            particles.vy[k] = vy1;
            particles.vz[k] = vz1;
            particles.x[k] = wrap_periodic(particles.x[k] + vx1 * p.dt, lx);
            particles.y[k] = wrap_periodic(particles.y[k] + vy1 * p.dt, ly);

            diag.impulse_x += q * epx * p.dt;
            diag.impulse_y += q * epy * p.dt;
            diag.dmom_x += m * (vx1 - vx0);
            diag.dmom_y += m * (vy1 - vy0);
        }
        return diag;
    }

    std::array<double, 3> fld_calculate_b(const std::array<double, 3> &b0)
    {
        return b0;
    }

    // ------------------------------------------------------------------
    // Interface buffers
    // ------------------------------------------------------------------

    namespace
    {
        std::vector<std::byte> pack_header(BufferKind kind, int nx, int ny, int row0, int nrows,
                                           std::size_t payload_doubles)
        {
            std::vector<std::byte> out;
            out.reserve(20 + payload_doubles * 8);
            put_u32(out, static_cast<std::uint32_t>(kind));
            put_u32(out, static_cast<std::uint32_t>(nx));
            put_u32(out, static_cast<std::uint32_t>(ny));
            put_u32(out, static_cast<std::uint32_t>(row0));
            put_u32(out, static_cast<std::uint32_t>(nrows));
            return out;
        }
    }

    std::vector<std::byte> cpy_to_arr_fields(const FieldGrid &grid, int row0, int nrows)
    {
        const std::size_t cells = static_cast<std::size_t>(nrows) * grid.nx;
        auto out = pack_header(BufferKind::Fields, grid.nx, grid.ny, row0, nrows, 2 * cells + 3);
        put_doubles(out, grid.ex.data() + static_cast<std::size_t>(row0) * grid.nx, cells);
        put_doubles(out, grid.ey.data() + static_cast<std::size_t>(row0) * grid.nx, cells);
        put_doubles(out, grid.b0.data(), 3);
        return out;
    }

    std::vector<std::byte> cpy_to_arr_moments(const Moments &m, int row0, int nrows)
    {
        const std::size_t cells = static_cast<std::size_t>(nrows) * m.nx;
        auto out = pack_header(BufferKind::Moments, m.nx, m.ny, row0, nrows, 4 * cells);
        put_doubles(out, m.rho.data() + static_cast<std::size_t>(row0) * m.nx, cells);
        put_doubles(out, m.jx.data() + static_cast<std::size_t>(row0) * m.nx, cells);
        put_doubles(out, m.jy.data() + static_cast<std::size_t>(row0) * m.nx, cells);
        put_doubles(out, m.jz.data() + static_cast<std::size_t>(row0) * m.nx, cells);
        return out;
    }

    ParsedBuffer cpy_from_arr(std::span<const std::byte> bytes)
    {
        if (bytes.size() < 20)
        {
            throw XpicError("interface buffer truncated");
        }
        ParsedBuffer b;
        const std::uint32_t kind = get_u32(bytes, 0);
        if (kind != static_cast<std::uint32_t>(BufferKind::Fields) &&
            kind != static_cast<std::uint32_t>(BufferKind::Moments))
        {
            throw XpicError("interface buffer kind mismatch");
        }
        b.kind = static_cast<BufferKind>(kind);
        b.nx = static_cast<int>(get_u32(bytes, 4));
        b.ny = static_cast<int>(get_u32(bytes, 8));
        b.row0 = static_cast<int>(get_u32(bytes, 12));
        b.nrows = static_cast<int>(get_u32(bytes, 16));
        if (b.nx < 1 || b.ny < 1 || b.nrows < 0 || b.row0 < 0 || b.row0 + b.nrows > b.ny)
        {
            throw XpicError("interface buffer shape-header mismatch");
        }

        const std::size_t cells = static_cast<std::size_t>(b.nrows) * b.nx;
        const std::size_t planes = b.kind == BufferKind::Fields ? 2 : 4;
        const std::size_t tail = b.kind == BufferKind::Fields ? 3 : 0;
        if (bytes.size() != 20 + (planes * cells + tail) * 8)
        {
            throw XpicError("interface buffer size does not match its shape header");
        }

        std::size_t at = 20;
        b.planes.resize(planes);
        for (auto &plane : b.planes)
        {
            plane.resize(cells);
            std::memcpy(plane.data(), bytes.data() + at, cells * 8);
            at += cells * 8;
        }
        if (tail == 3)
        {
            std::memcpy(b.b0.data(), bytes.data() + at, 24);
        }
        return b;
    }

    // ------------------------------------------------------------------
    // Distributed field solve
    // ------------------------------------------------------------------

    namespace
    {
        double reduce_sum(RankCtx &ctx, Comm comm, double partial)
        {
            return ctx.allreduce(comm, ReduceOp::Sum, std::span<const double>(&partial, 1))[0];
        }

        std::vector<std::byte> pack_row(const std::vector<double> &a, int nx, int row)
        {
            std::vector<std::byte> out(static_cast<std::size_t>(nx) * 8);
            std::memcpy(out.data(), a.data() + static_cast<std::size_t>(row) * nx,
                        static_cast<std::size_t>(nx) * 8);
            return out;
        }

        void unpack_row(std::vector<double> &a, int nx, int row, const std::vector<std::byte> &bytes)
        {
            std::memcpy(a.data() + static_cast<std::size_t>(row) * nx, bytes.data(),
                        static_cast<std::size_t>(nx) * 8);
        }

        // Sends boundary rows around the ring so the 5-point stencil can be
        // applied on the owned rows.
        void halo_exchange(RankCtx &ctx, Comm comm, std::vector<double> &a, int nx, int ny,
                           Range rows)
        {
            const int group = ctx.comm_size(comm);
            if (group <= 1)
            {
                return;
            }
            const int me = ctx.rank();
            const int prev = (me - 1 + group) % group;
            const int next = (me + 1) % group;
            const int r0 = static_cast<int>(rows.begin);
            const int r1 = static_cast<int>(rows.end);

            const Request reqs[4] = {
                ctx.isend(comm, prev, kTagHaloToPrev, pack_row(a, nx, r0)),
                ctx.isend(comm, next, kTagHaloToNext, pack_row(a, nx, r1 - 1)),
                ctx.irecv(comm, prev, kTagHaloToNext),
                ctx.irecv(comm, next, kTagHaloToPrev),
            };
            auto payloads = ctx.wait_all(reqs);
            unpack_row(a, nx, (r0 - 1 + ny) % ny, payloads[2]);
            unpack_row(a, nx, r1 % ny, payloads[3]);
        }

        // Applies the scaled negative 5-point Laplacian on the owned rows.
        void apply_operator(const std::vector<double> &in, std::vector<double> &out, int nx, int ny,
                            Range rows, double h)
        {
            const double inv_h2 = 1.0 / (h * h);
            for (int j = static_cast<int>(rows.begin); j < static_cast<int>(rows.end); ++j)
            {
                const int jm = (j - 1 + ny) % ny;
                const int jp = (j + 1) % ny;
                for (int i = 0; i < nx; ++i)
                {
                    const int im = (i - 1 + nx) % nx;
                    const int ip = (i + 1) % nx;
                    const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                    out[c] = (4.0 * in[c] - in[static_cast<std::size_t>(j) * nx + im] -
                              in[static_cast<std::size_t>(j) * nx + ip] -
                              in[static_cast<std::size_t>(jm) * nx + i] -
                              in[static_cast<std::size_t>(jp) * nx + i]) *
                             inv_h2;
                }
            }
        }
    }

    SolveStats fld_calculate_e(RankCtx &ctx, Comm comm, FieldGrid &grid, const Moments &moments,
                               const SimParams &p, Range rows, double work_per_iter)
    {
        const int nx = grid.nx;
        const int ny = grid.ny;
        const std::size_t n = grid.phi.size();
        const double total_cells = static_cast<double>(nx) * static_cast<double>(ny);

        // Periodic problem: project the mean off the right-hand side.
        double sum = 0.0;
        for (std::int64_t j = rows.begin; j < rows.end; ++j)
        {
            for (int i = 0; i < nx; ++i)
            {
                sum += moments.rho[static_cast<std::size_t>(j) * nx + i];
            }
        }
        const double mean = reduce_sum(ctx, comm, sum) / total_cells;

        std::vector<double> b(n, 0.0);
        double bnorm2_local = 0.0;
        for (std::int64_t j = rows.begin; j < rows.end; ++j)
        {
            for (int i = 0; i < nx; ++i)
            {
                const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                b[c] = moments.rho[c] - mean;
                bnorm2_local += b[c] * b[c];
            }
        }
        const double bnorm2 = reduce_sum(ctx, comm, bnorm2_local);

        SolveStats stats;
        stats.bnorm = std::sqrt(bnorm2);

        const auto finish_fields = [&] {
            halo_exchange(ctx, comm, grid.phi, nx, ny, rows);
            const double inv_2h = 1.0 / (2.0 * grid.h);
            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                const int jm = (static_cast<int>(j) - 1 + ny) % ny;
                const int jp = (static_cast<int>(j) + 1) % ny;
                for (int i = 0; i < nx; ++i)
                {
                    const int im = (i - 1 + nx) % nx;
                    const int ip = (i + 1) % nx;
                    const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                    grid.ex[c] = (grid.phi[static_cast<std::size_t>(j) * nx + im] -
                                  grid.phi[static_cast<std::size_t>(j) * nx + ip]) *
                                 inv_2h;
                    grid.ey[c] = (grid.phi[static_cast<std::size_t>(jm) * nx + i] -
                                  grid.phi[static_cast<std::size_t>(jp) * nx + i]) *
                                 inv_2h;
                }
            }
        };

        if (bnorm2 == 0.0)
        {
            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                std::fill_n(grid.phi.begin() + static_cast<std::ptrdiff_t>(j) * nx, nx, 0.0);
            }
            finish_fields();
            return stats;
        }

        // Warm start from the previous potential.
        halo_exchange(ctx, comm, grid.phi, nx, ny, rows);
        std::vector<double> r(n, 0.0);
        std::vector<double> pv(n, 0.0);
        std::vector<double> ap(n, 0.0);
        apply_operator(grid.phi, ap, nx, ny, rows, grid.h);
        double rr_local = 0.0;
        for (std::int64_t j = rows.begin; j < rows.end; ++j)
        {
            for (int i = 0; i < nx; ++i)
            {
                const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                r[c] = b[c] - ap[c];
                pv[c] = r[c];
                rr_local += r[c] * r[c];
            }
        }
        double rr = reduce_sum(ctx, comm, rr_local);

        const double stop = p.solver_tol * p.solver_tol * bnorm2;
        while (rr > stop)
        {
            if (stats.iters >= p.solver_max_iters)
            {
                throw XpicError("field solver did not converge within " +
                                std::to_string(p.solver_max_iters) + " iterations");
            }
            ++stats.iters;
            ctx.compute(work_per_iter, Solver::Field);

            halo_exchange(ctx, comm, pv, nx, ny, rows);
            apply_operator(pv, ap, nx, ny, rows, grid.h);

            double pap_local = 0.0;
            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                for (int i = 0; i < nx; ++i)
                {
                    const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                    pap_local += pv[c] * ap[c];
                }
            }
            const double pap = reduce_sum(ctx, comm, pap_local);
            const double alpha = rr / pap;

            double rr_new_local = 0.0;
            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                for (int i = 0; i < nx; ++i)
                {
                    const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                    grid.phi[c] += alpha * pv[c];
                    r[c] -= alpha * ap[c];
                    rr_new_local += r[c] * r[c];
                }
            }
            const double rr_new = reduce_sum(ctx, comm, rr_new_local);
            const double beta = rr_new / rr;
            rr = rr_new;

            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                for (int i = 0; i < nx; ++i)
                {
                    const std::size_t c = static_cast<std::size_t>(j) * nx + i;
                    pv[c] = r[c] + beta * pv[c];
                }
            }
        }

        stats.residual_rel = std::sqrt(rr) / stats.bnorm;
        finish_fields();
        return stats;
    }

    double kinetic_energy(RankCtx &ctx, Comm comm, const ParticleSet &particles)
    {
        double partial = 0.0;
        for (std::size_t k = 0; k < particles.size(); ++k)
        {
            partial += 0.5 * particles.mass *
                       (particles.vx[k] * particles.vx[k] + particles.vy[k] * particles.vy[k] +
                        particles.vz[k] * particles.vz[k]);
        }
        return reduce_sum(ctx, comm, partial);
    }

    double field_energy_rows(RankCtx &ctx, Comm comm, const FieldGrid &grid, Range rows)
    {
        double partial = 0.0;
        for (std::int64_t j = rows.begin; j < rows.end; ++j)
        {
            for (int i = 0; i < grid.nx; ++i)
            {
                const std::size_t c = static_cast<std::size_t>(j) * grid.nx + i;
                partial += 0.5 * (grid.ex[c] * grid.ex[c] + grid.ey[c] * grid.ey[c]) * grid.h * grid.h;
            }
        }
        return reduce_sum(ctx, comm, partial);
    }

    std::pair<double, double> compute_energies(RankCtx &ctx, Comm comm, const ParticleSet &particles,
                                               const FieldGrid &grid, Range rows)
    {
        const double kinetic = kinetic_energy(ctx, comm, particles);
        const double field = field_energy_rows(ctx, comm, grid, rows);
        return {kinetic, field};
    }

    std::vector<Request> booster_to_cluster(RankCtx &ctx, const InterComm &inter,
                                            const Moments &partial, int field_ranks)
    {
        if (field_ranks != ctx.comm_size(inter.remote))
        {
            throw XpicError("booster_to_cluster: partner count mismatch across the InterComm");
        }
        std::vector<Request> reqs;
        reqs.reserve(static_cast<std::size_t>(field_ranks));
        for (int c = 0; c < field_ranks; ++c)
        {
            const Range fr = block_range(partial.ny, field_ranks, c);
            reqs.push_back(ctx.isend(inter, c, kTagMoments,
                                     cpy_to_arr_moments(partial, static_cast<int>(fr.begin),
                                                        static_cast<int>(fr.size()))));
        }
        return reqs;
    }

    std::vector<Request> cluster_to_booster(RankCtx &ctx, const InterComm &inter,
                                            const FieldGrid &grid, Range rows, int particle_ranks)
    {
        if (particle_ranks != ctx.comm_size(inter.remote))
        {
            throw XpicError("cluster_to_booster: partner count mismatch across the InterComm");
        }
        std::vector<Request> reqs;
        for (int pr = 0; pr < particle_ranks; ++pr)
        {
            const Range tb = block_range(grid.ny, particle_ranks, pr);
            const std::int64_t lo = std::max(rows.begin, tb.begin);
            const std::int64_t hi = std::min(rows.end, tb.end);
            if (lo >= hi)
            {
                continue;
            }
            reqs.push_back(ctx.isend(inter, pr, kTagFields,
                                     cpy_to_arr_fields(grid, static_cast<int>(lo),
                                                       static_cast<int>(hi - lo))));
        }
        return reqs;
    }

    std::string StepTrace::to_csv() const
    {
        std::string out = "step,kinetic,field_energy,cg_iters,t_field_us,t_particle_us,t_exchange_us\n";
        char line[256];
        for (const auto &r : rows)
        {
            std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%d,%.6f,%.6f,%.6f\n", r.step,
                          r.kinetic, r.field_energy, r.cg_iters, r.t_field_us, r.t_particle_us,
                          r.t_exchange_us);
            out += line;
        }
        return out;
    }

    // ------------------------------------------------------------------
    // Shared role helpers
    // ------------------------------------------------------------------

    namespace
    {
        struct DiagPair
        {
            double field_energy = 0.0;
            double charge_err_rel = 0.0;
        };

        // Field energy and total deposited charge in one reduction.
        DiagPair field_diag(RankCtx &ctx, Comm comm, const FieldGrid &grid, const Moments &mom,
                            Range rows, const SimParams &p)
        {
            double fe = 0.0;
            double charge = 0.0;
            for (std::int64_t j = rows.begin; j < rows.end; ++j)
            {
                for (int i = 0; i < grid.nx; ++i)
                {
                    const std::size_t c = static_cast<std::size_t>(j) * grid.nx + i;
                    fe += 0.5 * (grid.ex[c] * grid.ex[c] + grid.ey[c] * grid.ey[c]) * grid.h * grid.h;
                    charge += mom.rho[c] * grid.h * grid.h;
                }
            }
            const double partials[2] = {fe, charge};
            const auto total = ctx.allreduce(comm, ReduceOp::Sum, partials);

            DiagPair out;
            out.field_energy = total[0];
            const double expected = static_cast<double>(p.total_particles()) * p.charge;
            out.charge_err_rel = std::abs(total[1] - expected) / std::abs(expected);
            return out;
        }

        void capture_rows(const CaptureFn &fn, int step, const char *what,
                          const std::vector<double> &a, int nx, Range rows)
        {
            if (!fn)
            {
                return;
            }
            fn(step, what, rows.begin * nx,
               std::span<const double>(a.data() + static_cast<std::size_t>(rows.begin) * nx,
                                       static_cast<std::size_t>(rows.size()) * nx));
        }

        void capture_particles(const CaptureFn &fn, int step, const ParticleSet &set, Range block)
        {
            if (!fn)
            {
                return;
            }
            fn(step, "px", block.begin, set.x);
            fn(step, "py", block.begin, set.y);
            fn(step, "pvx", block.begin, set.vx);
            fn(step, "pvy", block.begin, set.vy);
            fn(step, "pvz", block.begin, set.vz);
        }

        std::vector<std::byte> pack_state(const ParticleSet &set, const FieldGrid &grid, Range rows,
                                          int step)
        {
            std::vector<std::byte> out;
            const double header[2] = {static_cast<double>(step), static_cast<double>(set.size())};
            put_doubles(out, header, 2);
            put_doubles(out, set.x.data(), set.size());
            put_doubles(out, set.y.data(), set.size());
            put_doubles(out, set.vx.data(), set.size());
            put_doubles(out, set.vy.data(), set.size());
            put_doubles(out, set.vz.data(), set.size());
            put_doubles(out, grid.phi.data() + rows.begin * grid.nx,
                        static_cast<std::size_t>(rows.size()) * grid.nx);
            return out;
        }

        // Interval-driven collective checkpoint: rank 0 decides on virtual
        // time, gathers the rank images and bundles them per node.
        void maybe_checkpoint(RankCtx &ctx, Comm comm, const std::optional<CkptPlan> &plan,
                              std::uint64_t &epoch, double &next_time,
                              const std::function<std::vector<std::byte>()> &state)
        {
            if (!plan || plan->store == nullptr)
            {
                return;
            }
            const int me = ctx.rank();
            const int n = ctx.comm_size(comm);
            const double decide = (me == 0 && ctx.now() >= next_time) ? 1.0 : 0.0;
            const auto flag = ctx.allreduce(comm, ReduceOp::Max, std::span<const double>(&decide, 1));
            if (flag[0] < 0.5)
            {
                return;
            }
            ++epoch;
            const std::uint32_t n_nodes = std::max<std::uint32_t>(plan->n_nodes, 1);
            auto bytes = state();
            if (me != 0)
            {
                ctx.send(comm, 0, kTagCkpt, bytes);
                return;
            }

            std::vector<ckpt::RankImage> images;
            images.push_back({0, 0, std::move(bytes)});
            for (int r = 1; r < n; ++r)
            {
                ckpt::RankImage img;
                img.rank = static_cast<std::uint32_t>(r);
                img.node = static_cast<std::uint32_t>(r) % n_nodes;
                img.bytes = ctx.recv(comm, r, kTagCkpt);
                images.push_back(std::move(img));
            }
            plan->store->write(epoch, plan->level, images);
            next_time = ctx.now() + plan->interval_s;
        }
    }

    // ------------------------------------------------------------------
    // Monolithic driver
    // ------------------------------------------------------------------

    StepTrace run_monolithic(RankCtx &ctx, const RunContext &rc)
    {
        const SimParams &p = rc.params;
        validate(p);
        const Comm comm = ctx.world();
        const int n = ctx.world_size();
        const int me = ctx.rank();
        if (p.cells_y < n)
        {
            throw XpicError("grid has fewer rows than ranks");
        }

        const Range rows = block_range(p.cells_y, n, me);
        const Range block = block_range(p.total_particles(), n, me);
        const auto &wm = ctx.config().work_model;
        const double w_particle = wm.particle_units_per_particle * static_cast<double>(block.size());
        const double w_field_iter =
            wm.field_units_per_cell_iter * static_cast<double>(rows.size()) * p.cells_x;

        ParticleSet particles = init_particles(p, block);
        FieldGrid grid = make_grid(p);
        Moments mom;
        const std::size_t cells = grid.phi.size();

        StepTrace trace;
        std::uint64_t ckpt_epoch = 0;
        double ckpt_next = rc.ckpt_mono ? rc.ckpt_mono->interval_s : 0.0;

        for (int step = 0; step <= p.steps; ++step)
        {
            StepRow row;
            row.step = step;

            // Particle phase (the initial step only deposits).
            Moments partial;
            if (step > 0)
            {
                const double t0 = ctx.now();
                pcl_move(particles, grid, p);
                partial = pcl_gather_moments(particles, p);
                ctx.compute(w_particle, Solver::Particle);
                row.t_particle_us = (ctx.now() - t0) * 1e6;
                trace.particle_total_s += ctx.now() - t0;
            }
            else
            {
                partial = pcl_gather_moments(particles, p);
            }

            // Interface: combine the partial moments across the world.
            double t_ex = ctx.now();
            {
                std::vector<double> vec;
                vec.reserve(4 * cells);
                vec.insert(vec.end(), partial.rho.begin(), partial.rho.end());
                vec.insert(vec.end(), partial.jx.begin(), partial.jx.end());
                vec.insert(vec.end(), partial.jy.begin(), partial.jy.end());
                vec.insert(vec.end(), partial.jz.begin(), partial.jz.end());
                const auto folded = ctx.allreduce(comm, ReduceOp::Sum, vec);
                mom.nx = p.cells_x;
                mom.ny = p.cells_y;
                mom.rho.assign(folded.begin(), folded.begin() + cells);
                mom.jx.assign(folded.begin() + cells, folded.begin() + 2 * cells);
                mom.jy.assign(folded.begin() + 2 * cells, folded.begin() + 3 * cells);
                mom.jz.assign(folded.begin() + 3 * cells, folded.begin() + 4 * cells);
            }
            double exchange_s = ctx.now() - t_ex;

            // Field phase.
            const double t1 = ctx.now();
            const SolveStats stats = fld_calculate_e(ctx, comm, grid, mom, p, rows, w_field_iter);
            grid.b0 = fld_calculate_b(grid.b0);
            row.t_field_us = (ctx.now() - t1) * 1e6;
            trace.field_total_s += ctx.now() - t1;
            row.cg_iters = stats.iters;
            row.residual_rel = stats.residual_rel;

            // Interface: distribute the solved field rows across the world.
            t_ex = ctx.now();
            {
                std::vector<double> vec(2 * cells, 0.0);
                for (std::int64_t j = rows.begin; j < rows.end; ++j)
                {
                    for (int i = 0; i < p.cells_x; ++i)
                    {
                        const std::size_t c = static_cast<std::size_t>(j) * p.cells_x + i;
                        vec[c] = grid.ex[c];
                        vec[cells + c] = grid.ey[c];
                    }
                }
                const auto folded = ctx.allreduce(comm, ReduceOp::Sum, vec);
                std::copy(folded.begin(), folded.begin() + cells, grid.ex.begin());
                std::copy(folded.begin() + cells, folded.end(), grid.ey.begin());
            }
            exchange_s += ctx.now() - t_ex;
            row.t_exchange_us = exchange_s * 1e6;

            // Diagnostics run serially in the original loop: there is no
            // transfer to hide them behind.
            const double w_field_step = w_field_iter * stats.iters;
            ctx.compute(wm.diag_work_fraction * w_particle, Solver::Particle);
            row.kinetic = kinetic_energy(ctx, comm, particles);
            ctx.compute(wm.diag_work_fraction * w_field_step, Solver::Field);
            const DiagPair diag = field_diag(ctx, comm, grid, mom, rows, p);
            row.field_energy = diag.field_energy;
            row.charge_err_rel = diag.charge_err_rel;

            if (rc.capture)
            {
                capture_rows(rc.capture, step, "phi", grid.phi, p.cells_x, rows);
                capture_rows(rc.capture, step, "rho", mom.rho, p.cells_x, rows);
                capture_rows(rc.capture, step, "ex", grid.ex, p.cells_x, rows);
                capture_rows(rc.capture, step, "ey", grid.ey, p.cells_x, rows);
                capture_particles(rc.capture, step, particles, block);
            }

            trace.rows.push_back(row);
            maybe_checkpoint(ctx, comm, rc.ckpt_mono, ckpt_epoch, ckpt_next,
                             [&] { return pack_state(particles, grid, rows, step); });
        }

        trace.loop_end_clock_s = ctx.now();
        const double span =
            ctx.allreduce(comm, ReduceOp::Max,
                          std::span<const double>(&trace.loop_end_clock_s, 1))[0];
        trace.span_s = span;

        if (me == 0 && rc.mono_out != nullptr)
        {
            *rc.mono_out = trace;
        }
        return trace;
    }

    // ------------------------------------------------------------------
    // Split drivers
    // ------------------------------------------------------------------

    StepTrace run_booster_role(RankCtx &ctx, const RunContext &rc)
    {
        const SimParams &p = rc.params;
        validate(p);
        const Comm comm = ctx.world();
        const int np = ctx.world_size();
        const int me = ctx.rank();
        if (p.cells_y < np)
        {
            throw XpicError("grid has fewer rows than particle ranks");
        }

        // Launch order: the particle side starts first and spawns the field
        // solver onto the Cluster.
        const InterComm inter =
            ctx.spawn(comm, "xpic.cluster", rc.field_ranks, NodeKind::Cluster, rc.alloc);
        const int nf = ctx.comm_size(inter.remote);

        const Range tb = block_range(p.cells_y, np, me);
        const Range block = block_range(p.total_particles(), np, me);
        const auto &wm = ctx.config().work_model;
        const double w_particle = wm.particle_units_per_particle * static_cast<double>(block.size());

        ParticleSet particles = init_particles(p, block);
        FieldGrid grid = make_grid(p);

        StepTrace trace;
        std::uint64_t ckpt_epoch = 0;
        double ckpt_next = rc.ckpt_booster ? rc.ckpt_booster->interval_s : 0.0;

        for (int step = 0; step <= p.steps; ++step)
        {
            StepRow row;
            row.step = step;

            Moments partial;
            double surcharge_s = 0.0;
            if (step > 0)
            {
                const double t0 = ctx.now();
                pcl_move(particles, grid, p);
                partial = pcl_gather_moments(particles, p);
                ctx.compute(w_particle, Solver::Particle);
                row.t_particle_us = (ctx.now() - t0) * 1e6;
                trace.particle_total_s += ctx.now() - t0;

                // Cross-module exchange surcharge on the particle side.
                surcharge_s = ctx.config().comm_overhead_fraction *
                              platform::compute_cost(w_particle, ctx.kind(), Solver::Particle,
                                                     ctx.config());
                ctx.charge(surcharge_s);
                trace.surcharge_total_s += surcharge_s;
            }
            else
            {
                partial = pcl_gather_moments(particles, p);
            }

            // Moments travel to every field rank, block by owned rows.
            double transfer_s = 0.0;
            for (int c = 0; c < nf; ++c)
            {
                const Range fr = block_range(p.cells_y, nf, c);
                const double bytes = 20.0 + 32.0 * static_cast<double>(fr.size()) * p.cells_x;
                transfer_s += platform::comm_cost(bytes, NodeKind::Booster, NodeKind::Cluster,
                                                  ctx.config());
            }
            std::vector<Request> reqs = booster_to_cluster(ctx, inter, partial, nf);
            trace.transfer_total_s += transfer_s;

            // New fields come back split by our transfer blocks.
            std::vector<int> field_sources;
            for (int c = 0; c < nf; ++c)
            {
                const Range fr = block_range(p.cells_y, nf, c);
                if (std::max(fr.begin, tb.begin) < std::min(fr.end, tb.end))
                {
                    field_sources.push_back(c);
                }
            }
            const std::size_t first_field = reqs.size();
            for (int c : field_sources)
            {
                reqs.push_back(ctx.irecv(inter, c, kTagFields));
            }

            // Overlap window: energies while the exchange is in flight.
            ctx.compute(wm.diag_work_fraction * w_particle, Solver::Particle);
            row.kinetic = kinetic_energy(ctx, comm, particles);

            auto payloads = ctx.wait_all(reqs);
            for (std::size_t k = first_field; k < payloads.size(); ++k)
            {
                const ParsedBuffer buf = cpy_from_arr(payloads[k]);
                if (buf.kind != BufferKind::Fields || buf.nx != p.cells_x || buf.ny != p.cells_y)
                {
                    throw XpicError("unexpected field buffer shape");
                }
                const std::size_t cells = static_cast<std::size_t>(buf.nrows) * buf.nx;
                std::memcpy(grid.ex.data() + static_cast<std::size_t>(buf.row0) * buf.nx,
                            buf.planes[0].data(), cells * 8);
                std::memcpy(grid.ey.data() + static_cast<std::size_t>(buf.row0) * buf.nx,
                            buf.planes[1].data(), cells * 8);
                grid.b0 = buf.b0;
            }

            // Assemble the full field image inside the particle world.
            if (np > 1)
            {
                std::vector<Request> gather;
                for (int pr = 0; pr < np; ++pr)
                {
                    if (pr == me)
                    {
                        continue;
                    }
                    gather.push_back(ctx.isend(comm, pr, kTagGather,
                                               cpy_to_arr_fields(grid, static_cast<int>(tb.begin),
                                                                 static_cast<int>(tb.size()))));
                }
                for (int pr = 0; pr < np; ++pr)
                {
                    if (pr == me)
                    {
                        continue;
                    }
                    gather.push_back(ctx.irecv(comm, pr, kTagGather));
                }
                auto parts = ctx.wait_all(gather);
                for (std::size_t k = static_cast<std::size_t>(np - 1); k < parts.size(); ++k)
                {
                    const ParsedBuffer buf = cpy_from_arr(parts[k]);
                    const std::size_t cells = static_cast<std::size_t>(buf.nrows) * buf.nx;
                    std::memcpy(grid.ex.data() + static_cast<std::size_t>(buf.row0) * buf.nx,
                                buf.planes[0].data(), cells * 8);
                    std::memcpy(grid.ey.data() + static_cast<std::size_t>(buf.row0) * buf.nx,
                                buf.planes[1].data(), cells * 8);
                }
            }

            row.t_exchange_us = (surcharge_s + transfer_s) * 1e6;
            if (rc.capture)
            {
                capture_rows(rc.capture, step, "ex", grid.ex, p.cells_x, tb);
                capture_rows(rc.capture, step, "ey", grid.ey, p.cells_x, tb);
                capture_particles(rc.capture, step, particles, block);
            }
            trace.rows.push_back(row);
            maybe_checkpoint(ctx, comm, rc.ckpt_booster, ckpt_epoch, ckpt_next, [&] {
                return pack_state(particles, grid, Range{0, 0}, step);
            });
        }

        trace.loop_end_clock_s = ctx.now();
        const double span_b =
            ctx.allreduce(comm, ReduceOp::Max,
                          std::span<const double>(&trace.loop_end_clock_s, 1))[0];
        trace.span_s = span_b;

        if (me == 0)
        {
            // Merge the field side's diagnostics sidecar.
            const auto bytes = ctx.recv(inter, 0, kTagSidecar);
            const double *d = reinterpret_cast<const double *>(bytes.data());
            std::size_t at = 0;
            const auto next = [&] { return d[at++]; };
            const std::size_t nrows = static_cast<std::size_t>(next());
            if (nrows != trace.rows.size())
            {
                throw XpicError("trace merge: row count mismatch between solvers");
            }
            for (auto &row : trace.rows)
            {
                row.field_energy = next();
                row.cg_iters = static_cast<int>(next());
                row.residual_rel = next();
                row.charge_err_rel = next();
                row.t_field_us = next();
                row.t_exchange_us += next();
            }
            trace.exchange_particle_side_s = trace.surcharge_total_s + trace.transfer_total_s;
            const double span_c = next();
            trace.field_total_s = next();
            const double surcharge_c = next();
            const double transfer_c = next();
            trace.exchange_field_side_s = surcharge_c + transfer_c;
            trace.surcharge_total_s += surcharge_c;
            trace.transfer_total_s += transfer_c;
            trace.span_s = std::max(span_b, span_c);

            if (rc.split_out != nullptr)
            {
                *rc.split_out = trace;
            }
        }
        return trace;
    }

    StepTrace run_cluster_role(RankCtx &ctx, const RunContext &rc, const InterComm &parent)
    {
        const SimParams &p = rc.params;
        validate(p);
        const Comm comm = ctx.world();
        const int nf = ctx.world_size();
        const int me = ctx.rank();
        const int np = ctx.comm_size(parent.remote);
        if (p.cells_y < nf)
        {
            throw XpicError("grid has fewer rows than field ranks");
        }

        const Range rows = block_range(p.cells_y, nf, me);
        const auto &wm = ctx.config().work_model;
        const double w_field_iter =
            wm.field_units_per_cell_iter * static_cast<double>(rows.size()) * p.cells_x;

        FieldGrid grid = make_grid(p);
        Moments mom;
        mom.nx = p.cells_x;
        mom.ny = p.cells_y;
        const std::size_t cells = grid.phi.size();
        mom.rho.assign(cells, 0.0);
        mom.jx.assign(cells, 0.0);
        mom.jy.assign(cells, 0.0);
        mom.jz.assign(cells, 0.0);

        StepTrace trace;
        std::vector<Request> outstanding;
        std::uint64_t ckpt_epoch = 0;
        double ckpt_next = rc.ckpt_cluster ? rc.ckpt_cluster->interval_s : 0.0;

        for (int step = 0; step <= p.steps; ++step)
        {
            StepRow row;
            row.step = step;

            // Collect one partial-moment block from every particle rank and
            // fold them in rank order.
            std::vector<Request> reqs;
            for (int pr = 0; pr < np; ++pr)
            {
                reqs.push_back(ctx.irecv(parent, pr, kTagMoments));
            }
            if (!outstanding.empty())
            {
                ctx.wait_all(outstanding);
                outstanding.clear();
            }
            auto payloads = ctx.wait_all(reqs);

            const double t0 = ctx.now();
            for (int pr = 0; pr < np; ++pr)
            {
                const ParsedBuffer buf = cpy_from_arr(payloads[static_cast<std::size_t>(pr)]);
                if (buf.kind != BufferKind::Moments || buf.nx != p.cells_x ||
                    buf.ny != p.cells_y || buf.row0 != rows.begin ||
                    buf.nrows != static_cast<int>(rows.size()))
                {
                    throw XpicError("unexpected moments buffer shape");
                }
                const std::size_t base = static_cast<std::size_t>(rows.begin) * p.cells_x;
                const std::size_t count = static_cast<std::size_t>(rows.size()) * p.cells_x;
                double *dst[4] = {mom.rho.data() + base, mom.jx.data() + base,
                                  mom.jy.data() + base, mom.jz.data() + base};
                for (int plane = 0; plane < 4; ++plane)
                {
                    const auto &src = buf.planes[static_cast<std::size_t>(plane)];
                    if (pr == 0)
                    {
                        std::memcpy(dst[plane], src.data(), count * 8);
                    }
                    else
                    {
                        for (std::size_t c = 0; c < count; ++c)
                        {
                            dst[plane][c] += src[c];
                        }
                    }
                }
            }

            const SolveStats stats = fld_calculate_e(ctx, comm, grid, mom, p, rows, w_field_iter);
            grid.b0 = fld_calculate_b(grid.b0);
            row.t_field_us = (ctx.now() - t0) * 1e6;
            trace.field_total_s += ctx.now() - t0;
            row.cg_iters = stats.iters;
            row.residual_rel = stats.residual_rel;

            const double w_field_step = w_field_iter * stats.iters;
            const double surcharge_s =
                ctx.config().comm_overhead_fraction *
                platform::compute_cost(w_field_step, ctx.kind(), Solver::Field, ctx.config());
            ctx.charge(surcharge_s);
            trace.surcharge_total_s += surcharge_s;

            // Ship the fresh field rows to the particle ranks whose transfer
            // blocks intersect ours.
            double transfer_s = 0.0;
            for (int pr = 0; pr < np; ++pr)
            {
                const Range tb = block_range(p.cells_y, np, pr);
                const std::int64_t lo = std::max(rows.begin, tb.begin);
                const std::int64_t hi = std::min(rows.end, tb.end);
                if (lo >= hi)
                {
                    continue;
                }
                const double bytes = 20.0 + (16.0 * static_cast<double>(hi - lo) * p.cells_x + 24.0);
                transfer_s += platform::comm_cost(bytes, NodeKind::Cluster, NodeKind::Booster,
                                                  ctx.config());
            }
            const auto sent = cluster_to_booster(ctx, parent, grid, rows, np);
            outstanding.insert(outstanding.end(), sent.begin(), sent.end());
            trace.transfer_total_s += transfer_s;

            // Overlap window: field-side diagnostics during the transfer.
            ctx.compute(wm.diag_work_fraction * w_field_step, Solver::Field);
            const DiagPair diag = field_diag(ctx, comm, grid, mom, rows, p);
            row.field_energy = diag.field_energy;
            row.charge_err_rel = diag.charge_err_rel;
            row.t_exchange_us = (surcharge_s + transfer_s) * 1e6;

            if (rc.capture)
            {
                capture_rows(rc.capture, step, "phi", grid.phi, p.cells_x, rows);
                capture_rows(rc.capture, step, "rho", mom.rho, p.cells_x, rows);
            }
            trace.rows.push_back(row);
            maybe_checkpoint(ctx, comm, rc.ckpt_cluster, ckpt_epoch, ckpt_next, [&] {
                ParticleSet empty;
                return pack_state(empty, grid, rows, step);
            });
        }

        if (!outstanding.empty())
        {
            ctx.wait_all(outstanding);
            outstanding.clear();
        }

        trace.loop_end_clock_s = ctx.now();
        const double span_c =
            ctx.allreduce(comm, ReduceOp::Max,
                          std::span<const double>(&trace.loop_end_clock_s, 1))[0];
        trace.span_s = span_c;

        if (me == 0)
        {
            std::vector<double> sidecar;
            sidecar.push_back(static_cast<double>(trace.rows.size()));
            for (const auto &row : trace.rows)
            {
                sidecar.push_back(row.field_energy);
                sidecar.push_back(static_cast<double>(row.cg_iters));
                sidecar.push_back(row.residual_rel);
                sidecar.push_back(row.charge_err_rel);
                sidecar.push_back(row.t_field_us);
                sidecar.push_back(row.t_exchange_us);
            }
            sidecar.push_back(span_c);
            sidecar.push_back(trace.field_total_s);
            sidecar.push_back(trace.surcharge_total_s);
            sidecar.push_back(trace.transfer_total_s);

            std::vector<std::byte> bytes(sidecar.size() * 8);
            std::memcpy(bytes.data(), sidecar.data(), bytes.size());
            ctx.send(parent, 0, kTagSidecar, bytes);
        }
        return trace;
    }

    void register_xpic_roles(mprt::Runtime &rt, std::shared_ptr<RunContext> rc)
    {
        rt.register_role("xpic.monolithic", [rc](RankCtx &ctx) { run_monolithic(ctx, *rc); });
        rt.register_role("xpic.booster", [rc](RankCtx &ctx) { run_booster_role(ctx, *rc); });
        rt.register_role("xpic.cluster", [rc](RankCtx &ctx) {
            const auto parent = ctx.parent();
            if (!parent)
            {
                throw XpicError("xpic.cluster must be spawned by the particle side");
            }
            run_cluster_role(ctx, *rc, *parent);
        });
    }
}
