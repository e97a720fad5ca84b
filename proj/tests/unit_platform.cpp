#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cbemu/platform.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace cbemu::platform;

namespace
{
    bool same_config(const PlatformConfig &a, const PlatformConfig &b)
    {
        const auto same_module = [](const ModuleSpec &x, const ModuleSpec &y) {
            return x.node_count == y.node_count && x.cores_per_node == y.cores_per_node &&
                   x.speed_factor_field == y.speed_factor_field &&
                   x.speed_factor_particle == y.speed_factor_particle &&
                   x.mpi_latency_us == y.mpi_latency_us;
        };
        return same_module(a.cluster, b.cluster) && same_module(a.booster, b.booster) &&
               a.interconnect.link_bandwidth_bits_per_s == b.interconnect.link_bandwidth_bits_per_s &&
               a.comm_overhead_fraction == b.comm_overhead_fraction &&
               a.work_model.field_units_per_cell_iter == b.work_model.field_units_per_cell_iter &&
               a.work_model.particle_units_per_particle == b.work_model.particle_units_per_particle &&
               a.work_model.diag_work_fraction == b.work_model.diag_work_fraction;
    }
}

TEST_CASE("empty document yields prototype defaults")
{
    const PlatformConfig cfg = load_platform_config("");
    CHECK(cfg.cluster.node_count == 16);
    CHECK(cfg.booster.node_count == 8);
    CHECK(cfg.cluster.mpi_latency_us == 1.0);
    CHECK(cfg.booster.mpi_latency_us == 1.8);
    CHECK(cfg.interconnect.link_bandwidth_bits_per_s == 100e9);
    CHECK(cfg.comm_overhead_fraction == 0.035);
    CHECK(validate_config(cfg).empty());
}

TEST_CASE("single-field override keeps remaining defaults")
{
    const PlatformConfig cfg = load_platform_config(R"({"booster": {"node_count": 1}})");
    CHECK(cfg.booster.node_count == 1);
    CHECK(cfg.cluster.node_count == 16);
    CHECK(cfg.booster.mpi_latency_us == 1.8);
}

TEST_CASE("validation errors name the offending key")
{
    CHECK_THROWS_WITH_AS(load_platform_config(R"({"cluster": {"node_count": 0}})"),
                         doctest::Contains("cluster.node_count"), ConfigError);
    CHECK_THROWS_WITH_AS(load_platform_config(R"({"interconnect": {"link_bandwidth": 0}})"),
                         doctest::Contains("interconnect.link_bandwidth"), ConfigError);
    CHECK_THROWS_WITH_AS(load_platform_config(R"({"comm_overhead_fraction": 1.5})"),
                         doctest::Contains("comm_overhead_fraction"), ConfigError);
    CHECK_THROWS_WITH_AS(load_platform_config(R"({"nonsense": 1})"),
                         doctest::Contains("nonsense"), ConfigError);
    CHECK_THROWS_AS(load_platform_config("{ not json"), ConfigError);
}

TEST_CASE("validate_config reports violations without throwing")
{
    PlatformConfig cfg = default_config();
    CHECK(validate_config(cfg).empty());

    cfg.comm_overhead_fraction = 1.5;
    auto v = validate_config(cfg);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == "comm_overhead_fraction");

    cfg = default_config();
    cfg.interconnect.link_bandwidth_bits_per_s = 0.0;
    v = validate_config(cfg);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == "interconnect.link_bandwidth");
}

TEST_CASE("comm_cost reproduces the prototype anchors")
{
    const PlatformConfig cfg = default_config();

    const double cn_cn = comm_cost(0.0, NodeKind::Cluster, NodeKind::Cluster, cfg);
    CHECK(cn_cn == doctest::Approx(1.0e-6).epsilon(1e-12));

    const double bn_bn = comm_cost(0.0, NodeKind::Booster, NodeKind::Booster, cfg);
    CHECK(bn_bn == doctest::Approx(1.8e-6).epsilon(1e-12));

    // 1 MiB across the modules: max latency plus size over 12.5 GB/s.
    const double expected = 1.8e-6 + 1048576.0 / 12.5e9;
    const double cn_bn = comm_cost(1048576.0, NodeKind::Cluster, NodeKind::Booster, cfg);
    CHECK(cn_bn == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("comm_cost is affine, symmetric and monotone")
{
    const PlatformConfig cfg = default_config();
    const double bw = cfg.interconnect.bandwidth_bytes_per_s();

    for (double a : {0.0, 17.0, 4096.0, 1.5e7})
    {
        for (double b : {0.0, 3.0, 1024.0, 2.5e6})
        {
            const double lhs = comm_cost(a + b, NodeKind::Cluster, NodeKind::Booster, cfg) -
                               comm_cost(a, NodeKind::Cluster, NodeKind::Booster, cfg);
            CHECK(lhs == doctest::Approx(b / bw).epsilon(1e-9));
        }
    }

    for (double s : {0.0, 1.0, 65536.0})
    {
        CHECK(comm_cost(s, NodeKind::Cluster, NodeKind::Booster, cfg) ==
              comm_cost(s, NodeKind::Booster, NodeKind::Cluster, cfg));
    }

    double prev = -1.0;
    for (double s : {0.0, 1.0, 100.0, 1e6, 1e9})
    {
        const double c = comm_cost(s, NodeKind::Booster, NodeKind::Booster, cfg);
        CHECK(c >= prev);
        prev = c;
    }
}

TEST_CASE("compute_cost carries exactly the calibrated solver ratios")
{
    const PlatformConfig cfg = default_config();
    const double w = 3.7;

    const double field_cluster = compute_cost(w, NodeKind::Cluster, Solver::Field, cfg);
    const double field_booster = compute_cost(w, NodeKind::Booster, Solver::Field, cfg);
    CHECK(field_booster / field_cluster == doctest::Approx(6.0).epsilon(1e-12));

    const double pcl_booster = compute_cost(w, NodeKind::Booster, Solver::Particle, cfg);
    const double pcl_cluster = compute_cost(w, NodeKind::Cluster, Solver::Particle, cfg);
    CHECK(pcl_cluster / pcl_booster == doctest::Approx(1.35).epsilon(1e-12));

    CHECK(compute_cost(0.0, NodeKind::Cluster, Solver::Field, cfg) == 0.0);
    CHECK(compute_cost(0.0, NodeKind::Booster, Solver::Particle, cfg) == 0.0);

    // Linear in work, decreasing in speed factor.
    CHECK(compute_cost(2.0 * w, NodeKind::Cluster, Solver::Field, cfg) ==
          doctest::Approx(2.0 * field_cluster).epsilon(1e-12));
}

TEST_CASE("default config round-trips through serialization")
{
    const PlatformConfig a = load_platform_config("");
    const PlatformConfig b = load_platform_config(serialize_config(a));
    CHECK(same_config(a, b));

    // And again, to make sure serialization itself is stable.
    CHECK(serialize_config(a) == serialize_config(b));
}

#ifdef CBEMU_SOURCE_DIR
TEST_CASE("the shipped default config file matches the built-in defaults")
{
    std::ifstream f(std::string(CBEMU_SOURCE_DIR) + "/configs/default.json");
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    const PlatformConfig file_cfg = load_platform_config(ss.str());
    CHECK(same_config(file_cfg, default_config()));
}
#endif
