#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cbemu/mprt.hpp"

#include <atomic>
#include <cstring>
#include <numeric>

using namespace cbemu;
using namespace cbemu::mprt;
using platform::NodeKind;
using platform::Solver;

namespace
{
    sched::Allocation make_alloc(int cn, int bn)
    {
        sched::Allocation a;
        a.job = "test";
        a.alloc_id = 1;
        for (int i = 0; i < cn; ++i)
        {
            a.cluster_set.push_back(i);
        }
        for (int i = 0; i < bn; ++i)
        {
            a.booster_set.push_back(i);
        }
        return a;
    }

    std::vector<std::byte> bytes_of(const std::string &s)
    {
        std::vector<std::byte> out(s.size());
        std::memcpy(out.data(), s.data(), s.size());
        return out;
    }

    std::string string_of(const std::vector<std::byte> &b)
    {
        return std::string(reinterpret_cast<const char *>(b.data()), b.size());
    }
}

TEST_CASE("ranks are mapped round-robin onto the allocation")
{
    Runtime rt(platform::default_config(), RuntimeOptions{.ranks_per_node = 2});
    std::vector<int> nodes(4, -1);
    rt.register_role("main", [&](RankCtx &ctx) { nodes[ctx.rank()] = ctx.node_index(); });
    rt.add_world("main", 4, NodeKind::Booster, make_alloc(0, 2));
    rt.run();
    CHECK(nodes == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("one rank per node on the full booster")
{
    Runtime rt(platform::default_config());
    std::vector<int> nodes(8, -1);
    rt.register_role("main", [&](RankCtx &ctx) { nodes[ctx.rank()] = ctx.node_index(); });
    rt.add_world("main", 8, NodeKind::Booster, make_alloc(0, 8));
    rt.run();
    CHECK(nodes == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("insufficient allocation is rejected")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [](RankCtx &) {});
    CHECK_THROWS_WITH_AS(rt.add_world("main", 4, NodeKind::Cluster, make_alloc(2, 0)),
                         doctest::Contains("insufficient allocation"), MprtError);
}

TEST_CASE("blocking send/recv transfers the payload and charges the cost model")
{
    const auto cfg = platform::default_config();
    Runtime rt(cfg);
    std::string received;
    const std::string msg(1024, 'x');

    rt.register_role("main", [&](RankCtx &ctx) {
        if (ctx.rank() == 0)
        {
            ctx.send(ctx.world(), 1, 7, bytes_of(msg));
        }
        else
        {
            received = string_of(ctx.recv(ctx.world(), 0, 7));
        }
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    rt.run();

    CHECK(received == msg);
    const double expected = 1.0e-6 + 1024.0 / 12.5e9;
    CHECK(rt.final_clock(0, 1) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(rt.final_clock(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("zero-byte message costs latency only")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        if (ctx.rank() == 0)
        {
            ctx.send(ctx.world(), 1, 0, {});
        }
        else
        {
            auto p = ctx.recv(ctx.world(), 0, 0);
            CHECK(p.empty());
        }
    });
    rt.add_world("main", 2, NodeKind::Booster, make_alloc(0, 2));
    rt.run();
    CHECK(rt.final_clock(0, 1) == doctest::Approx(1.8e-6).epsilon(1e-12));
}

TEST_CASE("tag mismatch is reported at drain, never silently matched")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        if (ctx.rank() == 0)
        {
            ctx.isend(ctx.world(), 1, 1, bytes_of("a"));
        }
        else
        {
            ctx.recv(ctx.world(), 0, 2);
        }
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("tag=2"), MprtError);
}

TEST_CASE("mutual blocking receives are reported as a drain failure")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        ctx.recv(ctx.world(), 1 - ctx.rank(), 0);
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("no runnable ranks"), MprtError);
}

TEST_CASE("isend overlaps compute with the transfer")
{
    const auto cfg = platform::default_config();
    const double size = 1048576.0;
    const double transfer = 1.0e-6 + size / 12.5e9;

    const auto run_with_compute = [&](double work) {
        Runtime rt(cfg);
        rt.register_role("main", [&](RankCtx &ctx) {
            if (ctx.rank() == 0)
            {
                std::vector<std::byte> big(static_cast<std::size_t>(size));
                Request r = ctx.isend(ctx.world(), 1, 0, big);
                ctx.compute(work, Solver::Field);
                ctx.wait_all(std::span<const Request>(&r, 1));
            }
            else
            {
                ctx.recv(ctx.world(), 0, 0);
            }
        });
        rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
        rt.run();
        return rt.final_clock(0, 0);
    };

    // Cluster field rate is 1 unit/s, so work equals seconds here.
    const double small = transfer / 2.0;
    const double large = transfer * 3.0;
    CHECK(run_with_compute(small) == doctest::Approx(transfer).epsilon(1e-12));
    CHECK(run_with_compute(large) == doctest::Approx(large).epsilon(1e-12));

    // Overlap bound: max(compute, transfer) <= charged <= compute + transfer.
    for (double w : {small, large, transfer})
    {
        const double charged = run_with_compute(w);
        CHECK(charged >= std::max(w, transfer) - 1e-15);
        CHECK(charged <= w + transfer + 1e-15);
    }
}

TEST_CASE("wait_all on an empty list is immediate")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        ctx.wait_all({});
        CHECK(ctx.now() == 0.0);
    });
    rt.add_world("main", 1, NodeKind::Cluster, make_alloc(1, 0));
    rt.run();
}

TEST_CASE("nonblocking pair with no overlap equals the blocking pair")
{
    const auto cfg = platform::default_config();
    const std::string msg(4096, 'q');

    const auto run_mode = [&](bool blocking) {
        Runtime rt(cfg);
        rt.register_role("main", [&](RankCtx &ctx) {
            if (ctx.rank() == 0)
            {
                if (blocking)
                {
                    ctx.send(ctx.world(), 1, 0, bytes_of(msg));
                }
                else
                {
                    Request r = ctx.isend(ctx.world(), 1, 0, bytes_of(msg));
                    ctx.wait_all(std::span<const Request>(&r, 1));
                }
            }
            else
            {
                if (blocking)
                {
                    ctx.recv(ctx.world(), 0, 0);
                }
                else
                {
                    Request r = ctx.irecv(ctx.world(), 0, 0);
                    ctx.wait_all(std::span<const Request>(&r, 1));
                }
            }
        });
        rt.add_world("main", 2, NodeKind::Booster, make_alloc(0, 2));
        rt.run();
        return std::pair{rt.final_clock(0, 0), rt.final_clock(0, 1)};
    };

    CHECK(run_mode(true) == run_mode(false));
}

TEST_CASE("waiting twice on the same handle fails")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        if (ctx.rank() == 0)
        {
            Request r = ctx.isend(ctx.world(), 1, 0, bytes_of("x"));
            ctx.wait_all(std::span<const Request>(&r, 1));
            ctx.wait_all(std::span<const Request>(&r, 1));
        }
        else
        {
            ctx.recv(ctx.world(), 0, 0);
        }
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("already waited"), MprtError);
}

TEST_CASE("per-pair FIFO: same (src, dst, tag) messages arrive in send order")
{
    Runtime rt(platform::default_config());
    std::vector<std::string> got;
    rt.register_role("main", [&](RankCtx &ctx) {
        if (ctx.rank() == 0)
        {
            ctx.isend(ctx.world(), 1, 5, bytes_of("first"));
            ctx.isend(ctx.world(), 1, 5, bytes_of("second"));
            ctx.isend(ctx.world(), 1, 5, bytes_of("third"));
        }
        else
        {
            for (int i = 0; i < 3; ++i)
            {
                got.push_back(string_of(ctx.recv(ctx.world(), 0, 5)));
            }
        }
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    rt.run();
    CHECK(got == std::vector<std::string>{"first", "second", "third"});
}

TEST_CASE("allreduce folds sequentially over member index")
{
    Runtime rt(platform::default_config());
    // Non-associative values: a tree combine would give a different bit
    // pattern than the sequential left fold.
    const std::vector<double> contribs{1e16, 1.0, -1e16, 1.0};
    std::vector<double> results(4, 0.0);

    rt.register_role("main", [&](RankCtx &ctx) {
        const double v = contribs[static_cast<std::size_t>(ctx.rank())];
        auto out = ctx.allreduce(ctx.world(), ReduceOp::Sum, std::span<const double>(&v, 1));
        results[static_cast<std::size_t>(ctx.rank())] = out[0];
    });
    rt.add_world("main", 4, NodeKind::Cluster, make_alloc(4, 0));
    rt.run();

    double oracle = contribs[0];
    for (std::size_t i = 1; i < contribs.size(); ++i)
    {
        oracle += contribs[i];
    }
    for (double r : results)
    {
        CHECK(r == oracle);
    }
}

TEST_CASE("allreduce sum and max over a vector")
{
    Runtime rt(platform::default_config());
    std::vector<double> sum_result, max_result;
    rt.register_role("main", [&](RankCtx &ctx) {
        const double base = static_cast<double>(ctx.rank() + 1);
        const std::vector<double> v{base, -base};
        auto s = ctx.allreduce(ctx.world(), ReduceOp::Sum, v);
        auto m = ctx.allreduce(ctx.world(), ReduceOp::Max, v);
        if (ctx.rank() == 0)
        {
            sum_result = s;
            max_result = m;
        }
    });
    rt.add_world("main", 4, NodeKind::Cluster, make_alloc(4, 0));
    rt.run();
    CHECK(sum_result == std::vector<double>{10.0, -10.0});
    CHECK(max_result == std::vector<double>{4.0, -1.0});
}

TEST_CASE("allreduce on a single-member communicator is free")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        const std::vector<double> v{42.0};
        auto out = ctx.allreduce(ctx.world(), ReduceOp::Sum, v);
        CHECK(out == v);
        CHECK(ctx.now() == 0.0);
    });
    rt.add_world("main", 1, NodeKind::Booster, make_alloc(0, 1));
    rt.run();
}

TEST_CASE("allreduce charges tree rounds on the vector byte size")
{
    const auto cfg = platform::default_config();
    Runtime rt(cfg);
    rt.register_role("main", [&](RankCtx &ctx) {
        const std::vector<double> v{1.0, 2.0, 3.0};
        ctx.allreduce(ctx.world(), ReduceOp::Sum, v);
    });
    rt.add_world("main", 4, NodeKind::Booster, make_alloc(0, 4));
    rt.run();

    // 4 members: 2 * ceil(log2(4)) = 4 rounds over 24-byte payloads.
    const double round = 1.8e-6 + 24.0 / 12.5e9;
    CHECK(rt.final_clock(0, 0) == doctest::Approx(4.0 * round).epsilon(1e-12));
    CHECK(rt.final_clock(0, 3) == doctest::Approx(4.0 * round).epsilon(1e-12));
}

TEST_CASE("mismatched allreduce vector lengths fail")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [&](RankCtx &ctx) {
        std::vector<double> v(static_cast<std::size_t>(1 + ctx.rank()), 1.0);
        ctx.allreduce(ctx.world(), ReduceOp::Sum, v);
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("disagree"), MprtError);
}

TEST_CASE("barrier synchronizes clocks to the tree completion time")
{
    const auto cfg = platform::default_config();

    SUBCASE("two ranks with different clocks")
    {
        Runtime rt(cfg);
        rt.register_role("main", [&](RankCtx &ctx) {
            ctx.charge(ctx.rank() == 0 ? 5.0 : 9.0);
            ctx.barrier(ctx.world());
            CHECK(ctx.now() >= 9.0);
        });
        rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
        rt.run();
        const double expected = 9.0 + 2.0 * 1.0e-6;
        CHECK(rt.final_clock(0, 0) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(rt.final_clock(0, 1) == doctest::Approx(expected).epsilon(1e-12));
    }

    SUBCASE("eight ranks match the tree oracle")
    {
        Runtime rt(cfg);
        rt.register_role("main", [&](RankCtx &ctx) { ctx.barrier(ctx.world()); });
        rt.add_world("main", 8, NodeKind::Booster, make_alloc(0, 8));
        rt.run();
        const double expected = 2.0 * 3.0 * 1.8e-6;
        for (std::uint32_t i = 0; i < 8; ++i)
        {
            CHECK(rt.final_clock(0, i) == doctest::Approx(expected).epsilon(1e-12));
        }
    }

    SUBCASE("size-1 barrier is a no-op")
    {
        Runtime rt(cfg);
        rt.register_role("main", [&](RankCtx &ctx) {
            ctx.barrier(ctx.world());
            CHECK(ctx.now() == 0.0);
        });
        rt.add_world("main", 1, NodeKind::Cluster, make_alloc(1, 0));
        rt.run();
    }
}

TEST_CASE("spawn connects parent and child groups with mirrored sizes")
{
    for (int parents = 1; parents <= 4; ++parents)
    {
        for (int children = 1; children <= 4; ++children)
        {
            Runtime rt(platform::default_config());
            const auto alloc = make_alloc(4, 4);
            int checks = 0;

            rt.register_role("child", [&](RankCtx &ctx) {
                auto p = ctx.parent();
                REQUIRE(p.has_value());
                // Mirror: the child's remote side is the spawner's group.
                CHECK(ctx.world_size() == children);
                CHECK(ctx.rank() < children);
                CHECK(p->local.id == ctx.world().id);
                ++checks;
            });
            rt.register_role("parent", [&](RankCtx &ctx) {
                CHECK(!ctx.parent().has_value());
                InterComm ic =
                    ctx.spawn(ctx.world(), "child", children, NodeKind::Cluster, alloc);
                CHECK(ic.local.id == ctx.world().id);
                ++checks;
            });

            // Booster world spawning the Cluster role, matching the launch order.
            rt.add_world("parent", parents, NodeKind::Booster, alloc);
            rt.run();
            CHECK(checks == parents + children);
        }
    }
}

TEST_CASE("spawned child sees the mirrored InterComm id and can message back")
{
    Runtime rt(platform::default_config());
    const auto alloc = make_alloc(2, 2);
    std::string child_got, parent_got;

    rt.register_role("child", [&](RankCtx &ctx) {
        auto p = ctx.parent();
        REQUIRE(p.has_value());
        if (ctx.rank() == 0)
        {
            child_got = string_of(ctx.recv(*p, 0, 3));
            ctx.send(*p, 1, 4, bytes_of("up"));
        }
    });
    rt.register_role("parent", [&](RankCtx &ctx) {
        InterComm ic = ctx.spawn(ctx.world(), "child", 2, NodeKind::Cluster, alloc);
        if (ctx.rank() == 0)
        {
            ctx.send(ic, 0, 3, bytes_of("down"));
        }
        else
        {
            parent_got = string_of(ctx.recv(ic, 0, 4));
        }
    });
    rt.add_world("parent", 2, NodeKind::Booster, alloc);
    rt.run();
    CHECK(child_got == "down");
    CHECK(parent_got == "up");
}

TEST_CASE("spawn rejects degenerate and inconsistent invocations")
{
    SUBCASE("zero children")
    {
        Runtime rt(platform::default_config());
        const auto alloc = make_alloc(2, 2);
        rt.register_role("child", [](RankCtx &) {});
        rt.register_role("parent", [&](RankCtx &ctx) {
            ctx.spawn(ctx.world(), "child", 0, NodeKind::Cluster, alloc);
        });
        rt.add_world("parent", 1, NodeKind::Booster, alloc);
        CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("n_children"), MprtError);
    }

    SUBCASE("unknown role")
    {
        Runtime rt(platform::default_config());
        const auto alloc = make_alloc(2, 2);
        rt.register_role("parent", [&](RankCtx &ctx) {
            ctx.spawn(ctx.world(), "nope", 1, NodeKind::Cluster, alloc);
        });
        rt.add_world("parent", 1, NodeKind::Booster, alloc);
        CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("unknown role"), MprtError);
    }

    SUBCASE("members disagreeing on arguments")
    {
        Runtime rt(platform::default_config());
        const auto alloc = make_alloc(4, 2);
        rt.register_role("child", [](RankCtx &) {});
        rt.register_role("parent", [&](RankCtx &ctx) {
            ctx.spawn(ctx.world(), "child", 1 + ctx.rank(), NodeKind::Cluster, alloc);
        });
        rt.add_world("parent", 2, NodeKind::Booster, alloc);
        CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("disagree"), MprtError);
    }

    SUBCASE("insufficient allocation for the children")
    {
        Runtime rt(platform::default_config());
        const auto alloc = make_alloc(1, 1);
        rt.register_role("child", [](RankCtx &) {});
        rt.register_role("parent", [&](RankCtx &ctx) {
            ctx.spawn(ctx.world(), "child", 3, NodeKind::Cluster, alloc);
        });
        rt.add_world("parent", 1, NodeKind::Booster, alloc);
        CHECK_THROWS_WITH_AS(rt.run(), doctest::Contains("insufficient"), MprtError);
    }
}

TEST_CASE("identical runs produce identical traces and clocks")
{
    const auto run_once = [](std::vector<TraceEvent> &trace_out) {
        Runtime rt(platform::default_config(), RuntimeOptions{.ranks_per_node = 1, .trace = true});
        rt.register_role("main", [](RankCtx &ctx) {
            const int n = ctx.world_size();
            std::vector<double> v{static_cast<double>(ctx.rank())};
            ctx.allreduce(ctx.world(), ReduceOp::Sum, v);
            if (ctx.rank() == 0)
            {
                for (int i = 1; i < n; ++i)
                {
                    ctx.send(ctx.world(), i, 9, bytes_of("ping"));
                }
            }
            else
            {
                ctx.recv(ctx.world(), 0, 9);
                ctx.compute(1.0e-6, Solver::Particle);
            }
            ctx.barrier(ctx.world());
        });
        rt.add_world("main", 4, NodeKind::Booster, make_alloc(0, 4));
        rt.run();
        trace_out = rt.trace();
        return rt.max_clock();
    };

    std::vector<TraceEvent> t1, t2;
    const double c1 = run_once(t1);
    const double c2 = run_once(t2);
    CHECK(c1 == c2);
    REQUIRE(t1.size() == t2.size());
    for (std::size_t i = 0; i < t1.size(); ++i)
    {
        CHECK(t1[i].time_s == t2[i].time_s);
        CHECK(t1[i].rank == t2[i].rank);
        CHECK(t1[i].op == t2[i].op);
        CHECK(t1[i].peer == t2[i].peer);
        CHECK(t1[i].bytes == t2[i].bytes);
    }
}

TEST_CASE("clocks never decrease along any rank's trace")
{
    Runtime rt(platform::default_config(), RuntimeOptions{.ranks_per_node = 1, .trace = true});
    rt.register_role("main", [](RankCtx &ctx) {
        const int peer = 1 - ctx.rank();
        for (int i = 0; i < 5; ++i)
        {
            if (ctx.rank() == 0)
            {
                ctx.send(ctx.world(), peer, i, bytes_of("x"));
                ctx.compute(1e-7, Solver::Field);
            }
            else
            {
                ctx.recv(ctx.world(), peer, i);
            }
            ctx.barrier(ctx.world());
        }
    });
    rt.add_world("main", 2, NodeKind::Cluster, make_alloc(2, 0));
    rt.run();

    std::map<std::string, double> last;
    for (const auto &ev : rt.trace())
    {
        auto [it, inserted] = last.try_emplace(ev.rank, ev.time_s);
        if (!inserted)
        {
            CHECK(ev.time_s >= it->second);
            it->second = ev.time_s;
        }
    }
}

TEST_CASE("errors in a role abort the run and propagate")
{
    Runtime rt(platform::default_config());
    rt.register_role("main", [](RankCtx &ctx) {
        if (ctx.rank() == 1)
        {
            throw std::runtime_error("boom");
        }
        ctx.barrier(ctx.world());
    });
    rt.add_world("main", 4, NodeKind::Cluster, make_alloc(4, 0));
    CHECK_THROWS_WITH(rt.run(), "boom");
}
