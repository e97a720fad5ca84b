#include "cbemu/ckpt.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container serialization assumes a little-endian host");

namespace cbemu::ckpt
{
    namespace
    {
        constexpr std::uint8_t kMagic[4] = {0x43, 0x42, 0x43, 0x4B};  // "CBCK"
        constexpr std::uint32_t kVersion = 1;
        constexpr std::size_t kHeaderSize = 4 + 4 + 4;
        constexpr std::size_t kEntrySize = 4 + 8 + 8 + 8;

        template <typename T>
        void put(std::vector<std::byte> &out, T value)
        {
            const std::size_t at = out.size();
            out.resize(at + sizeof(T));
            std::memcpy(out.data() + at, &value, sizeof(T));
        }

        template <typename T>
        T get(std::span<const std::byte> in, std::size_t at)
        {
            if (at + sizeof(T) > in.size())
            {
                throw CkptError("container truncated");
            }
            T value;
            std::memcpy(&value, in.data() + at, sizeof(T));
            return value;
        }

        std::vector<std::byte> read_file(const std::filesystem::path &p)
        {
            std::ifstream f(p, std::ios::binary);
            if (!f)
            {
                throw CkptError("cannot open " + p.string());
            }
            f.seekg(0, std::ios::end);
            const auto size = static_cast<std::size_t>(f.tellg());
            f.seekg(0);
            std::vector<std::byte> out(size);
            f.read(reinterpret_cast<char *>(out.data()), static_cast<std::streamsize>(size));
            if (!f)
            {
                throw CkptError("short read on " + p.string());
            }
            return out;
        }

        void write_file(const std::filesystem::path &p, std::span<const std::byte> bytes)
        {
            std::ofstream f(p, std::ios::binary | std::ios::trunc);
            if (!f)
            {
                throw CkptError("cannot create " + p.string());
            }
            f.write(reinterpret_cast<const char *>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
            if (!f)
            {
                throw CkptError("short write on " + p.string());
            }
        }
    }

    const char *to_string(Level level) noexcept
    {
        switch (level)
        {
        case Level::Local: return "local";
        case Level::Buddy: return "buddy";
        case Level::Global: return "global";
        }
        return "?";
    }

    std::uint64_t fnv1a64(std::span<const std::byte> data) noexcept
    {
        std::uint64_t hash = 14695981039346656037ull;
        for (std::byte b : data)
        {
            hash ^= static_cast<std::uint64_t>(b);
            hash *= 1099511628211ull;
        }
        return hash;
    }

    std::vector<std::byte> container_pack(std::span<const CheckpointBlock> blocks)
    {
        for (std::size_t i = 1; i < blocks.size(); ++i)
        {
            if (blocks[i].epoch != blocks[0].epoch)
            {
                throw CkptError("container_pack: blocks span multiple epochs");
            }
        }
        for (std::size_t i = 0; i < blocks.size(); ++i)
        {
            for (std::size_t j = i + 1; j < blocks.size(); ++j)
            {
                if (blocks[i].rank == blocks[j].rank)
                {
                    throw CkptError("container_pack: duplicate rank " + std::to_string(blocks[i].rank));
                }
            }
        }

        std::vector<std::byte> out;
        out.reserve(kHeaderSize + blocks.size() * kEntrySize);
        put(out, kMagic[0]);
        put(out, kMagic[1]);
        put(out, kMagic[2]);
        put(out, kMagic[3]);
        put(out, kVersion);
        put(out, static_cast<std::uint32_t>(blocks.size()));

        std::uint64_t offset = kHeaderSize + blocks.size() * kEntrySize;
        for (const auto &b : blocks)
        {
            put(out, b.rank);
            put(out, offset);
            put(out, static_cast<std::uint64_t>(b.payload.size()));
            put(out, fnv1a64(b.payload));
            offset += b.payload.size();
        }
        for (const auto &b : blocks)
        {
            out.insert(out.end(), b.payload.begin(), b.payload.end());
        }
        return out;
    }

    std::vector<CheckpointBlock> container_unpack(std::span<const std::byte> bytes, std::uint64_t epoch)
    {
        if (bytes.size() < kHeaderSize)
        {
            throw CkptError("container truncated");
        }
        for (std::size_t i = 0; i < 4; ++i)
        {
            if (get<std::uint8_t>(bytes, i) != kMagic[i])
            {
                throw CkptError("container magic mismatch");
            }
        }
        if (get<std::uint32_t>(bytes, 4) != kVersion)
        {
            throw CkptError("unsupported container version");
        }
        const std::uint32_t count = get<std::uint32_t>(bytes, 8);

        std::vector<CheckpointBlock> out;
        out.reserve(count);
        std::uint64_t prev_end = kHeaderSize + static_cast<std::uint64_t>(count) * kEntrySize;
        for (std::uint32_t i = 0; i < count; ++i)
        {
            const std::size_t at = kHeaderSize + i * kEntrySize;
            CheckpointBlock b;
            b.rank = get<std::uint32_t>(bytes, at);
            b.epoch = epoch;
            const auto offset = get<std::uint64_t>(bytes, at + 4);
            const auto length = get<std::uint64_t>(bytes, at + 12);
            const auto checksum = get<std::uint64_t>(bytes, at + 20);

            if (offset < prev_end || offset + length > bytes.size())
            {
                throw CkptError("container index entry out of bounds (rank " +
                                std::to_string(b.rank) + ")");
            }
            prev_end = offset + length;

            b.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                             bytes.begin() + static_cast<std::ptrdiff_t>(offset + length));
            if (fnv1a64(b.payload) != checksum)
            {
                throw CkptError("checksum mismatch for rank " + std::to_string(b.rank));
            }
            out.push_back(std::move(b));
        }
        return out;
    }

    double plan_interval(const FailureModel &fm, int n_nodes)
    {
        if (!(fm.node_mtbf_s > 0.0) || !(fm.checkpoint_cost_s >= 0.0) || n_nodes < 1)
        {
            throw CkptError("plan_interval: inputs must be positive");
        }
        const double system_mtbf = fm.node_mtbf_s / static_cast<double>(n_nodes);
        return std::sqrt(2.0 * fm.checkpoint_cost_s * system_mtbf);
    }

    // ------------------------------------------------------------------
    // Store
    // ------------------------------------------------------------------

    Store::Store(std::filesystem::path root, std::uint32_t n_nodes)
        : root_(std::move(root)), n_nodes_(n_nodes)
    {
        if (n_nodes_ == 0)
        {
            throw CkptError("store needs at least one node");
        }
        for (std::uint32_t k = 0; k < n_nodes_; ++k)
        {
            std::filesystem::create_directories(root_ / ("node" + std::to_string(k)));
        }
        std::filesystem::create_directories(root_ / "global");
    }

    std::uint32_t Store::buddy_of(std::uint32_t node) const noexcept
    {
        return (node + 1) % n_nodes_;
    }

    std::filesystem::path Store::local_container(std::uint32_t node, std::uint64_t epoch) const
    {
        return root_ / ("node" + std::to_string(node)) / ("epoch" + std::to_string(epoch) + ".cbck");
    }

    std::filesystem::path Store::buddy_container(std::uint32_t holder, std::uint32_t origin,
                                                 std::uint64_t epoch) const
    {
        return root_ / ("node" + std::to_string(holder)) /
               ("buddy_of_" + std::to_string(origin) + "_epoch" + std::to_string(epoch) + ".cbck");
    }

    std::filesystem::path Store::global_container(std::uint32_t node, std::uint64_t epoch) const
    {
        return root_ / "global" / ("node" + std::to_string(node) + "_epoch" + std::to_string(epoch) + ".cbck");
    }

    CheckpointSet Store::write(std::uint64_t epoch, Level level, std::span<const RankImage> images)
    {
        CheckpointSet set;
        set.epoch = epoch;
        set.requested = level;
        set.achieved = level;

        if (level == Level::Buddy && n_nodes_ == 1)
        {
            // A single node cannot hold a useful replica of itself.
            set.achieved = Level::Global;
            set.downgraded = true;
            level = Level::Global;
        }

        std::map<std::uint32_t, std::vector<CheckpointBlock>> by_node;
        for (const auto &img : images)
        {
            if (img.node >= n_nodes_)
            {
                throw CkptError("write: node index " + std::to_string(img.node) + " out of range");
            }
            CheckpointBlock b;
            b.rank = img.rank;
            b.epoch = epoch;
            b.payload = img.bytes;
            by_node[img.node].push_back(std::move(b));
        }

        std::map<std::uint32_t, std::vector<std::uint32_t>> ranks_by_node;
        for (auto &[node, blocks] : by_node)
        {
            const auto container = container_pack(blocks);
            const auto local = local_container(node, epoch);
            write_file(local, container);
            set.files.push_back(local);

            if (level == Level::Buddy)
            {
                const auto buddy = buddy_container(buddy_of(node), node, epoch);
                write_file(buddy, container);
                set.files.push_back(buddy);
            }
            if (level == Level::Global)
            {
                const auto global = global_container(node, epoch);
                write_file(global, container);
                set.files.push_back(global);
            }
            for (const auto &b : blocks)
            {
                ranks_by_node[node].push_back(b.rank);
            }
        }

        write_manifest(epoch, set.achieved, ranks_by_node);
        prune_retention();
        return set;
    }

    void Store::destroy_node_store(std::uint32_t node)
    {
        std::filesystem::remove_all(root_ / ("node" + std::to_string(node)));
    }

    // The manifest is the store's checkpoint database: one file per epoch at
    // the store root recording the achieved level and the participating
    // nodes. Restart consults it instead of guessing from surviving files.
    std::filesystem::path Store::manifest_path(std::uint64_t epoch) const
    {
        return root_ / ("epoch" + std::to_string(epoch) + ".manifest");
    }

    void Store::write_manifest(std::uint64_t epoch, Level achieved,
                               const std::map<std::uint32_t, std::vector<std::uint32_t>> &ranks_by_node)
    {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto &[node, ranks] : ranks_by_node)
        {
            nodes.push_back({{"node", node}, {"ranks", ranks}});
        }
        const nlohmann::json j{
            {"epoch", epoch},
            {"level", to_string(achieved)},
            {"nodes", nodes},
        };
        const std::string text = j.dump();
        std::vector<std::byte> bytes(text.size());
        std::memcpy(bytes.data(), text.data(), text.size());
        write_file(manifest_path(epoch), bytes);
    }

    Store::Manifest Store::read_manifest(std::uint64_t epoch) const
    {
        const auto bytes = read_file(manifest_path(epoch));
        const auto j = nlohmann::json::parse(std::string(reinterpret_cast<const char *>(bytes.data()),
                                                         bytes.size()));
        Manifest m;
        m.epoch = j.at("epoch").get<std::uint64_t>();
        const std::string level = j.at("level").get<std::string>();
        m.level = level == "global" ? Level::Global : level == "buddy" ? Level::Buddy : Level::Local;
        for (const auto &n : j.at("nodes"))
        {
            m.ranks_by_node[n.at("node").get<std::uint32_t>()] =
                n.at("ranks").get<std::vector<std::uint32_t>>();
        }
        return m;
    }

    std::vector<std::uint64_t> Store::known_epochs() const
    {
        std::set<std::uint64_t> epochs;
        for (const auto &entry : std::filesystem::directory_iterator(root_))
        {
            const std::string name = entry.path().filename().string();
            if (name.rfind("epoch", 0) == 0 && name.size() > 14 &&
                name.substr(name.size() - 9) == ".manifest")
            {
                const std::string digits = name.substr(5, name.size() - 14);
                if (!digits.empty() &&
                    std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(c); }))
                {
                    epochs.insert(std::stoull(digits));
                }
            }
        }
        return {epochs.begin(), epochs.end()};
    }

    void Store::prune_retention()
    {
        // Retention: keep the two newest epochs per level, prune older files
        // of that level. The newest complete epoch of each level is always
        // among the survivors.
        std::map<Level, std::vector<std::uint64_t>> per_level;
        std::map<std::uint64_t, Manifest> manifests;
        for (std::uint64_t e : known_epochs())
        {
            Manifest m = read_manifest(e);
            per_level[Level::Local].push_back(e);
            if (m.level == Level::Buddy)
            {
                per_level[Level::Buddy].push_back(e);
            }
            if (m.level == Level::Global)
            {
                per_level[Level::Global].push_back(e);
            }
            manifests.emplace(e, std::move(m));
        }

        std::set<std::uint64_t> fully_pruned;
        for (auto &[level, epochs] : per_level)
        {
            if (epochs.size() <= 2)
            {
                continue;
            }
            for (std::size_t i = 0; i + 2 < epochs.size(); ++i)
            {
                const std::uint64_t e = epochs[i];
                const Manifest &m = manifests.at(e);
                std::error_code ec;
                for (const auto &[node, ranks] : m.ranks_by_node)
                {
                    if (level == Level::Local)
                    {
                        std::filesystem::remove(local_container(node, e), ec);
                    }
                    else if (level == Level::Buddy)
                    {
                        std::filesystem::remove(buddy_container(buddy_of(node), node, e), ec);
                    }
                    else
                    {
                        std::filesystem::remove(global_container(node, e), ec);
                    }
                }
                if (level == Level::Local && manifests.at(e).level == Level::Local)
                {
                    fully_pruned.insert(e);
                }
            }
        }

        // Drop manifests whose epochs have no surviving level anywhere.
        for (std::uint64_t e : fully_pruned)
        {
            std::error_code ec;
            std::filesystem::remove(manifest_path(e), ec);
        }
    }

    bool Store::node_recoverable(const Manifest &m, std::uint32_t node,
                                 const std::set<std::uint32_t> &failed,
                                 std::vector<CheckpointBlock> *out) const
    {
        const auto try_read = [&](const std::filesystem::path &p) {
            if (!std::filesystem::exists(p))
            {
                return false;
            }
            try
            {
                auto blocks = container_unpack(read_file(p), m.epoch);
                if (out)
                {
                    *out = std::move(blocks);
                }
                return true;
            }
            catch (const CkptError &)
            {
                return false;
            }
        };

        // Retrieval preference: Local, then the buddy replica, then global.
        if (failed.count(node) == 0 && try_read(local_container(node, m.epoch)))
        {
            return true;
        }
        if (m.level == Level::Buddy)
        {
            const std::uint32_t holder = buddy_of(node);
            if (failed.count(holder) == 0 && try_read(buddy_container(holder, node, m.epoch)))
            {
                return true;
            }
        }
        if (m.level == Level::Global && try_read(global_container(node, m.epoch)))
        {
            return true;
        }
        return false;
    }

    RestartResult Store::restart_latest(const std::set<std::uint32_t> &failed_nodes) const
    {
        const auto epochs = known_epochs();
        for (auto it = epochs.rbegin(); it != epochs.rend(); ++it)
        {
            Manifest m;
            try
            {
                m = read_manifest(*it);
            }
            catch (...)
            {
                continue;
            }

            RestartResult result;
            result.epoch = m.epoch;
            bool ok = true;
            for (const auto &[node, ranks] : m.ranks_by_node)
            {
                std::vector<CheckpointBlock> blocks;
                if (!node_recoverable(m, node, failed_nodes, &blocks))
                {
                    ok = false;
                    break;
                }
                for (auto &b : blocks)
                {
                    result.per_rank[b.rank] = std::move(b.payload);
                }
            }
            if (ok)
            {
                return result;
            }
        }
        throw CkptError("restart: no recoverable epoch under the given failure set");
    }
}
