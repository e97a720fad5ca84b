#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cbemu/ckpt.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace cbemu::ckpt;
namespace fs = std::filesystem;

namespace
{
    std::vector<std::byte> rand_bytes(std::mt19937_64 &rng, std::size_t n)
    {
        std::vector<std::byte> out(n);
        for (auto &b : out)
        {
            b = static_cast<std::byte>(rng() & 0xff);
        }
        return out;
    }

    fs::path fresh_dir(const std::string &name)
    {
        const fs::path p = fs::temp_directory_path() / ("cbemu_ckpt_" + name);
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }

    std::vector<RankImage> images_for(std::mt19937_64 &rng, std::uint32_t nodes,
                                      std::uint32_t ranks_per_node, std::size_t bytes)
    {
        std::vector<RankImage> images;
        for (std::uint32_t node = 0; node < nodes; ++node)
        {
            for (std::uint32_t r = 0; r < ranks_per_node; ++r)
            {
                RankImage img;
                img.rank = node * ranks_per_node + r;
                img.node = node;
                img.bytes = rand_bytes(rng, bytes);
                images.push_back(std::move(img));
            }
        }
        return images;
    }
}

TEST_CASE("container pack/unpack round-trips bit-exactly")
{
    std::mt19937_64 rng(7);
    std::vector<CheckpointBlock> blocks;
    for (std::uint32_t r = 0; r < 4; ++r)
    {
        blocks.push_back({r, 12, rand_bytes(rng, 1024)});
    }
    const auto bytes = container_pack(blocks);
    const auto back = container_unpack(bytes, 12);
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
    {
        CHECK(back[i].rank == blocks[i].rank);
        CHECK(back[i].payload == blocks[i].payload);
    }

    // Deterministic layout: packing again yields the same bytes.
    CHECK(container_pack(blocks) == bytes);
}

TEST_CASE("empty container is just a header")
{
    const auto bytes = container_pack({});
    CHECK(bytes.size() == 12);
    CHECK(container_unpack(bytes).empty());
}

TEST_CASE("a flipped payload byte is detected and attributed to its rank")
{
    std::mt19937_64 rng(13);
    std::vector<CheckpointBlock> blocks;
    for (std::uint32_t r = 0; r < 3; ++r)
    {
        blocks.push_back({r, 1, rand_bytes(rng, 256)});
    }
    auto bytes = container_pack(blocks);

    // Payload region starts after header + index; corrupt rank 1's block.
    const std::size_t payload_start = 12 + 3 * 28;
    const std::size_t victim = payload_start + 256 + 17;
    bytes[victim] ^= std::byte{0x01};

    CHECK_THROWS_WITH_AS(container_unpack(bytes, 1), doctest::Contains("rank 1"), CkptError);
}

TEST_CASE("truncated container is rejected")
{
    std::mt19937_64 rng(99);
    std::vector<CheckpointBlock> blocks{{0, 1, rand_bytes(rng, 64)}};
    auto bytes = container_pack(blocks);
    bytes.resize(bytes.size() - 8);
    CHECK_THROWS_AS(container_unpack(bytes, 1), CkptError);

    std::vector<std::byte> tiny(4, std::byte{0});
    CHECK_THROWS_AS(container_unpack(tiny), CkptError);
}

TEST_CASE("pack rejects mixed epochs and duplicate ranks")
{
    std::vector<CheckpointBlock> mixed{{0, 1, {}}, {1, 2, {}}};
    CHECK_THROWS_AS(container_pack(mixed), CkptError);
    std::vector<CheckpointBlock> dup{{0, 1, {}}, {0, 1, {}}};
    CHECK_THROWS_AS(container_pack(dup), CkptError);
}

TEST_CASE("plan_interval follows the square-root law")
{
    const double t = plan_interval({1e6, 60.0}, 1);
    CHECK(t == doctest::Approx(std::sqrt(2.0 * 60.0 * 1e6)).epsilon(1e-12));

    // Quadrupling the node count halves the interval.
    const double t4 = plan_interval({1e6, 60.0}, 4);
    CHECK(t4 == doctest::Approx(t / 2.0).epsilon(1e-12));

    // Free checkpoints mean checkpointing continuously.
    CHECK(plan_interval({1e6, 0.0}, 1) == 0.0);

    CHECK_THROWS_AS(plan_interval({0.0, 60.0}, 1), CkptError);
    CHECK_THROWS_AS(plan_interval({1e6, 60.0}, 0), CkptError);
}

TEST_CASE("buddy writes leave each node with its own plus one buddy container")
{
    std::mt19937_64 rng(21);
    const auto root = fresh_dir("buddy_layout");
    Store store(root, 4);

    const auto images = images_for(rng, 4, 2, 512);
    const auto set = store.write(1, Level::Buddy, images);
    CHECK(set.achieved == Level::Buddy);
    CHECK_FALSE(set.downgraded);

    for (std::uint32_t node = 0; node < 4; ++node)
    {
        CHECK(fs::exists(store.local_container(node, 1)));
        const std::uint32_t origin = (node + 4 - 1) % 4;
        CHECK(fs::exists(store.buddy_container(node, origin, 1)));

        // Exactly one local container and one buddy replica per node store.
        int files = 0;
        for (const auto &e : fs::directory_iterator(root / ("node" + std::to_string(node))))
        {
            (void)e;
            ++files;
        }
        CHECK(files == 2);
    }
}

TEST_CASE("local-only epochs do not survive the loss of that node's store")
{
    std::mt19937_64 rng(22);
    const auto root = fresh_dir("local_loss");
    Store store(root, 2);
    store.write(1, Level::Local, images_for(rng, 2, 1, 128));

    store.destroy_node_store(0);
    CHECK_THROWS_AS(store.restart_latest({0}), CkptError);
}

TEST_CASE("buddy level survives any single node-store loss bit-exactly")
{
    for (std::uint32_t nodes = 2; nodes <= 8; ++nodes)
    {
        for (std::uint32_t victim = 0; victim < nodes; ++victim)
        {
            std::mt19937_64 rng(1000 + nodes * 16 + victim);
            const auto root = fresh_dir("buddy_" + std::to_string(nodes) + "_" + std::to_string(victim));
            Store store(root, nodes);

            const auto images = images_for(rng, nodes, 2, 256);
            store.write(5, Level::Buddy, images);

            store.destroy_node_store(victim);
            const auto restored = store.restart_latest({victim});
            CHECK(restored.epoch == 5);
            REQUIRE(restored.per_rank.size() == images.size());
            for (const auto &img : images)
            {
                REQUIRE(restored.per_rank.count(img.rank) == 1);
                CHECK(restored.per_rank.at(img.rank) == img.bytes);
            }
        }
    }
}

TEST_CASE("global level survives the loss of every node store")
{
    std::mt19937_64 rng(31);
    const auto root = fresh_dir("global_loss");
    Store store(root, 4);
    const auto images = images_for(rng, 4, 1, 2048);
    store.write(3, Level::Global, images);

    std::set<std::uint32_t> all;
    for (std::uint32_t n = 0; n < 4; ++n)
    {
        store.destroy_node_store(n);
        all.insert(n);
    }
    const auto restored = store.restart_latest(all);
    CHECK(restored.epoch == 3);
    for (const auto &img : images)
    {
        CHECK(restored.per_rank.at(img.rank) == img.bytes);
    }
}

TEST_CASE("two adjacent buddies lost falls back to an older global epoch")
{
    std::mt19937_64 rng(41);
    const auto root = fresh_dir("adjacent");
    Store store(root, 4);

    const auto old_images = images_for(rng, 4, 1, 300);
    store.write(1, Level::Global, old_images);
    const auto new_images = images_for(rng, 4, 1, 300);
    store.write(2, Level::Buddy, new_images);

    // Nodes 1 and 2 are adjacent in the cyclic buddy map: node 1's replica
    // lives on node 2, so epoch 2 is unrecoverable for node 1.
    store.destroy_node_store(1);
    store.destroy_node_store(2);
    const auto restored = store.restart_latest({1, 2});
    CHECK(restored.epoch == 1);
    for (const auto &img : old_images)
    {
        CHECK(restored.per_rank.at(img.rank) == img.bytes);
    }
}

TEST_CASE("no failures restores the newest epoch through the local path")
{
    std::mt19937_64 rng(51);
    const auto root = fresh_dir("newest");
    Store store(root, 3);
    store.write(1, Level::Local, images_for(rng, 3, 1, 64));
    const auto latest = images_for(rng, 3, 1, 64);
    store.write(2, Level::Local, latest);

    const auto restored = store.restart_latest({});
    CHECK(restored.epoch == 2);
    for (const auto &img : latest)
    {
        CHECK(restored.per_rank.at(img.rank) == img.bytes);
    }
}

TEST_CASE("single-node buddy request is downgraded to global with a warning")
{
    std::mt19937_64 rng(61);
    const auto root = fresh_dir("downgrade");
    Store store(root, 1);
    const auto set = store.write(1, Level::Buddy, images_for(rng, 1, 2, 128));
    CHECK(set.downgraded);
    CHECK(set.achieved == Level::Global);
    CHECK(fs::exists(store.global_container(0, 1)));
}

TEST_CASE("retention keeps the two newest epochs per level")
{
    std::mt19937_64 rng(71);
    const auto root = fresh_dir("retention");
    Store store(root, 2);

    for (std::uint64_t e = 1; e <= 5; ++e)
    {
        store.write(e, Level::Buddy, images_for(rng, 2, 1, 64));
    }

    // Only epochs 4 and 5 survive.
    for (std::uint32_t node = 0; node < 2; ++node)
    {
        CHECK_FALSE(fs::exists(store.local_container(node, 3)));
        CHECK(fs::exists(store.local_container(node, 4)));
        CHECK(fs::exists(store.local_container(node, 5)));
    }
    const auto restored = store.restart_latest({});
    CHECK(restored.epoch == 5);
}

TEST_CASE("pruning never removes the newest complete epoch of any level")
{
    std::mt19937_64 rng(81);
    const auto root = fresh_dir("retention_levels");
    Store store(root, 2);

    const auto global_images = images_for(rng, 2, 1, 64);
    store.write(1, Level::Global, global_images);
    for (std::uint64_t e = 2; e <= 6; ++e)
    {
        store.write(e, Level::Local, images_for(rng, 2, 1, 64));
    }

    // Epoch 1 is still the newest (and only) global epoch.
    CHECK(fs::exists(store.global_container(0, 1)));
    store.destroy_node_store(0);
    store.destroy_node_store(1);
    const auto restored = store.restart_latest({0, 1});
    CHECK(restored.epoch == 1);
}
