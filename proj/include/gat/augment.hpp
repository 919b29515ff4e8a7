#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "gat/random.hpp"
#include "gat/task.hpp"
#include "gat/tensor.hpp"
#include "json.hpp"

namespace gat {

// Row-major, channel-interleaved image: pixel (y, x, c) at (y * width + x) * channels + c.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c, std::vector<double> values);

    double at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
    double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
    bool in_unit_range() const;

    friend bool operator==(const Image&, const Image&) = default;
};

struct ImageDims {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;

    std::size_t size() const { return height * width * channels; }
    friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

// Counterclockwise rotation by 90 * angle_id degrees.
Image apply_rotation(const Image& image, int angle_id);

using Permutation = std::vector<std::size_t>;

// Output chunk k is input chunk perm[k]; chunks are the grid cells in row-major order.
Image permute_chunks(const Image& image, std::size_t grid, const Permutation& perm);
Permutation inverse(const Permutation& perm);

// Distinct permutations of grid*grid chunks; entry 0 is the identity.
class PermutationPool {
   public:
    // Greedy selection maximizing the minimum Hamming distance to the entries
    // already chosen, over seeded random candidates.
    static PermutationPool build(std::size_t grid, std::size_t size, std::uint64_t seed);
    static PermutationPool from_entries(std::size_t grid, std::vector<Permutation> entries);

    std::size_t grid() const noexcept { return grid_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const Permutation& operator[](std::size_t i) const { return entries_.at(i); }
    const std::vector<Permutation>& entries() const noexcept { return entries_; }
    std::size_t min_hamming_distance() const;

    friend bool operator==(const PermutationPool&, const PermutationPool&) = default;

   private:
    std::size_t grid_ = 0;
    std::vector<Permutation> entries_;
};

void to_json(nlohmann::json& j, const PermutationPool& pool);
PermutationPool pool_from_json(const nlohmann::json& j);

Image apply_jigsaw(const Image& image, std::size_t perm_id, const PermutationPool& pool);

// Fine label -> macro class. Index is the fine label.
using GroupMap = std::vector<int>;

int macro_label(int fine_label, const GroupMap& map);
// Throws ConfigError unless every fine class in [0, fine_classes) maps to a class in [0, groups).
void validate_group_map(const GroupMap& map, std::size_t fine_classes, std::size_t groups);
// Vehicles (airplane, automobile, ship, truck) -> 0, animals -> 1.
GroupMap cifar10_vehicles_animals();

struct AugmentDraw {
    Image image;
    // One label per self-supervised task, in declaration order.
    std::vector<int> labels;
};

// Self-supervised preprocessing of Algorithm-1 style: every self-supervised
// task's transform is applied in declaration order, each with its own draw.
class AugmentPipeline {
   public:
    AugmentPipeline() = default;
    // Builds one permutation pool per jigsaw task, seeded from pool_seed.
    AugmentPipeline(std::span<const TaskSpec> tasks, std::uint64_t pool_seed);

    // Indices into the task list of the self-supervised tasks.
    const std::vector<std::size_t>& stages() const noexcept { return stages_; }
    bool empty() const noexcept { return stages_.empty(); }
    const std::map<std::size_t, PermutationPool>& pools() const noexcept { return pools_; }
    void set_pool(std::size_t task, PermutationPool pool);

    // Applies the stages with the given per-stage labels.
    AugmentDraw apply(const Image& image, std::span<const int> labels) const;
    // Draws each stage's label uniformly from the task's arity.
    AugmentDraw apply(const Image& image, Rng& rng) const;

    // Batch version over flattened rows of x. Returns the transformed batch and
    // per-stage label vectors.
    std::pair<Tensor, std::vector<std::vector<int>>> apply_batch(const Tensor& x, const ImageDims& dims,
                                                                 Rng& rng) const;

   private:
    std::vector<TaskSpec> tasks_;
    std::vector<std::size_t> stages_;
    std::map<std::size_t, PermutationPool> pools_;
};

AugmentDraw compose_preprocessors(std::span<const TaskSpec> tasks, const Image& image, Rng& rng,
                                  std::uint64_t pool_seed);

}  // namespace gat
