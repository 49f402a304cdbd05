#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "lifelong/error.hpp"
#include "lifelong/io.hpp"
#include "lifelong/rng.hpp"

namespace lifelong {

// Modalities stacked in a latent window, in storage order.
enum class Modality : int { agent_view = 0, eye_in_hand = 1, language = 2, state = 3 };
inline constexpr int kNumModalities = 4;

struct LatentShape {
    int modalities = kNumModalities;
    int window = 8;
    int embed = 64;

    Eigen::Index size() const { return static_cast<Eigen::Index>(modalities) * window * embed; }
    // Offset of row (modality, timestep) in the flattened (M, L, E) tensor.
    Eigen::Index offset(int modality, int t) const {
        return (static_cast<Eigen::Index>(modality) * window + t) * embed;
    }
    bool operator==(const LatentShape&) const = default;
};

// Post-modulation features of one observation window, flattened (M, L, E).
struct LatentSequence {
    Eigen::VectorXf data;
    int task_id = 0;
    int timestep_index = 0;

    auto row(const LatentShape& s, Modality m, int t) const {
        return data.segment(s.offset(static_cast<int>(m), t), s.embed);
    }
};

struct BufferEntry {
    LatentSequence latent;
    Eigen::VectorXf action;
    int task_id = 0;
};

namespace mlr {

struct BufferConfig {
    LatentShape shape;
    int action_dim = 4;
    std::size_t per_task_capacity = 200;
    double store_probability = 0.5;
    std::uint64_t seed = 0;
};

struct MemoryStats {
    std::map<int, std::size_t> entries_per_task;
    std::uint64_t total_bytes_latent = 0;
    std::uint64_t equivalent_raw_bytes = 0;
};

// Raw-observation size the buffer is compared against.
struct RawObservationDims {
    int image_side = 32;  // two image_side^2 grids per step
    int state_dim = 8;
};

// Latent replay memory with probabilistic admission and a per-task cap.
// Single writer; concurrent readers only while no offer is in flight.
class ReplayBuffer {
public:
    explicit ReplayBuffer(BufferConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
        require_config(cfg.store_probability >= 0.0 && cfg.store_probability <= 1.0,
                       "store_probability must lie in [0, 1]");
        require_config(cfg.per_task_capacity >= 1, "per_task_capacity must be >= 1");
    }

    const BufferConfig& config() const { return cfg_; }

    // Admits `entry` with probability store_probability. A full partition
    // evicts a uniformly chosen entry of the same task. Exactly two engine
    // draws are consumed per call.
    bool offer(BufferEntry entry) {
        check(entry);
        const double u = uniform01(rng_);
        const double v = uniform01(rng_);
        if (!(u < cfg_.store_probability)) return false;
        auto& part = parts_[entry.task_id];
        if (part.size() < cfg_.per_task_capacity) {
            part.push_back(std::move(entry));
        } else {
            const auto victim = std::min(static_cast<std::size_t>(v * static_cast<double>(part.size())),
                                         part.size() - 1);
            part[victim] = std::move(entry);
        }
        return true;
    }

    bool empty() const { return parts_.empty(); }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& [id, part] : parts_) n += part.size();
        return n;
    }

    const std::map<int, std::vector<BufferEntry>>& partitions() const { return parts_; }

    std::uint64_t bytes_per_entry() const {
        return (static_cast<std::uint64_t>(cfg_.shape.size()) + cfg_.action_dim) * sizeof(float);
    }

    MemoryStats memory_stats(RawObservationDims raw = {}) const {
        MemoryStats s;
        const std::uint64_t raw_per_step =
            2ULL * raw.image_side * raw.image_side + raw.state_dim + cfg_.action_dim;
        const std::uint64_t raw_per_window = raw_per_step * cfg_.shape.window * sizeof(float);
        for (const auto& [id, part] : parts_) {
            s.entries_per_task[id] = part.size();
            s.total_bytes_latent += part.size() * bytes_per_entry();
            s.equivalent_raw_bytes += part.size() * raw_per_window;
        }
        return s;
    }

    // Checkpoint: magic, version, dims, per-task count table, per-entry
    // timestep table, then float32 payload (latent then action) sorted by
    // (task_id, insertion order).
    io::Bytes serialize() const {
        io::ByteWriter w;
        w.u32(kMagic);
        w.u32(kVersion);
        w.u32(static_cast<std::uint32_t>(cfg_.shape.modalities));
        w.u32(static_cast<std::uint32_t>(cfg_.shape.window));
        w.u32(static_cast<std::uint32_t>(cfg_.shape.embed));
        w.u32(static_cast<std::uint32_t>(cfg_.action_dim));
        w.u32(static_cast<std::uint32_t>(parts_.size()));
        for (const auto& [id, part] : parts_) {
            w.i32(id);
            w.u32(static_cast<std::uint32_t>(part.size()));
        }
        for (const auto& [id, part] : parts_)
            for (const auto& e : part) w.i32(e.latent.timestep_index);
        for (const auto& [id, part] : parts_) {
            for (const auto& e : part) {
                w.f32s(std::span(e.latent.data.data(), static_cast<std::size_t>(e.latent.data.size())));
                w.f32s(std::span(e.action.data(), static_cast<std::size_t>(e.action.size())));
            }
        }
        return w.take();
    }

    // Restores entries into a buffer built from `cfg`; dims must match.
    static ReplayBuffer deserialize(std::span<const std::uint8_t> bytes, BufferConfig cfg) {
        io::ByteReader r(bytes);
        require(r.u32() == kMagic, "not a replay buffer checkpoint");
        require(r.u32() == kVersion, "unsupported replay buffer checkpoint version");
        LatentShape shape;
        shape.modalities = static_cast<int>(r.u32());
        shape.window = static_cast<int>(r.u32());
        shape.embed = static_cast<int>(r.u32());
        const int action_dim = static_cast<int>(r.u32());
        cfg.shape = shape;
        cfg.action_dim = action_dim;
        ReplayBuffer buf(cfg);
        const auto n_tasks = r.u32();
        std::vector<std::pair<int, std::uint32_t>> counts;
        for (std::uint32_t i = 0; i < n_tasks; ++i) {
            const int id = r.i32();
            counts.emplace_back(id, r.u32());
        }
        std::vector<int> steps;
        for (const auto& [id, n] : counts)
            for (std::uint32_t i = 0; i < n; ++i) steps.push_back(r.i32());
        std::size_t k = 0;
        for (const auto& [id, n] : counts) {
            auto& part = buf.parts_[id];
            for (std::uint32_t i = 0; i < n; ++i) {
                BufferEntry e;
                e.task_id = id;
                e.latent.task_id = id;
                e.latent.timestep_index = steps[k++];
                e.latent.data.resize(shape.size());
                r.f32s(std::span(e.latent.data.data(), static_cast<std::size_t>(shape.size())));
                e.action.resize(action_dim);
                r.f32s(std::span(e.action.data(), static_cast<std::size_t>(action_dim)));
                part.push_back(std::move(e));
            }
        }
        require(r.done(), "trailing bytes in replay buffer checkpoint");
        return buf;
    }

private:
    static constexpr std::uint32_t kMagic = 0x4252524c;  // "LRRB"
    static constexpr std::uint32_t kVersion = 1;

    void check(const BufferEntry& e) const {
        require(e.latent.data.size() == cfg_.shape.size(), "latent window has wrong shape");
        require(e.action.size() == cfg_.action_dim, "action has wrong dimension");
        require(e.latent.task_id == e.task_id, "entry and latent disagree on task id");
        require(e.latent.data.allFinite() && e.action.allFinite(), "non-finite buffer entry");
    }

    BufferConfig cfg_;
    Rng rng_;
    std::map<int, std::vector<BufferEntry>> parts_;
};

// Draws n entries with replacement: a task uniformly among nonempty
// partitions, then an entry uniformly within it.
inline std::vector<const BufferEntry*> sample_replay_batch(const ReplayBuffer& buffer, std::size_t n,
                                                           Rng& rng) {
    std::vector<const BufferEntry*> out;
    if (buffer.empty()) return out;
    std::vector<const std::vector<BufferEntry>*> parts;
    for (const auto& [id, part] : buffer.partitions())
        if (!part.empty()) parts.push_back(&part);
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& part = *parts[uniform_index(rng, parts.size())];
        out.push_back(&part[uniform_index(rng, part.size())]);
    }
    return out;
}

}  // namespace mlr
}  // namespace lifelong
