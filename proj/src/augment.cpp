#include "gat/augment.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "gat/error.hpp"

namespace gat {

Image::Image(std::size_t h, std::size_t w, std::size_t c, std::vector<double> values)
    : height(h), width(w), channels(c), pixels(std::move(values)) {
    if (h == 0 || w == 0 || c == 0) throw ShapeError("image dimensions must be positive");
    if (pixels.size() != h * w * c)
        throw ShapeError("image of " + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) +
                         " needs " + std::to_string(h * w * c) + " pixels, got " + std::to_string(pixels.size()));
}

bool Image::in_unit_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

Image apply_rotation(const Image& image, int angle_id) {
    if (angle_id < 0 || angle_id > 3) throw ConfigError("rotation angle id must be in 0..3, got " + std::to_string(angle_id));
    if (image.height != image.width) throw ShapeError("rotation needs a square image");
    Image out = image;
    const std::size_t n = image.width;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < image.channels; ++c) {
                std::size_t y = i, x = j;
                // out[i][j] = in[j][n-1-i] for one quarter turn
                for (int k = 0; k < angle_id; ++k) {
                    const std::size_t ny = x, nx = n - 1 - y;
                    y = ny;
                    x = nx;
                }
                out.at(i, j, c) = image.at(y, x, c);
            }
    return out;
}

namespace {

void check_permutation(const Permutation& perm, std::size_t cells) {
    if (perm.size() != cells) throw ConfigError("permutation has " + std::to_string(perm.size()) + " entries, grid has " + std::to_string(cells));
    std::vector<bool> seen(cells, false);
    for (auto p : perm) {
        if (p >= cells || seen[p]) throw ConfigError("invalid permutation");
        seen[p] = true;
    }
}

}  // namespace

Image permute_chunks(const Image& image, std::size_t grid, const Permutation& perm) {
    if (grid == 0 || image.height % grid != 0 || image.width % grid != 0)
        throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " is not divisible by jigsaw grid " + std::to_string(grid));
    check_permutation(perm, grid * grid);
    const std::size_t ch = image.height / grid, cw = image.width / grid;
    Image out = image;
    for (std::size_t k = 0; k < perm.size(); ++k) {
        const std::size_t oy = (k / grid) * ch, ox = (k % grid) * cw;
        const std::size_t iy = (perm[k] / grid) * ch, ix = (perm[k] % grid) * cw;
        for (std::size_t y = 0; y < ch; ++y)
            for (std::size_t x = 0; x < cw; ++x)
                for (std::size_t c = 0; c < image.channels; ++c) out.at(oy + y, ox + x, c) = image.at(iy + y, ix + x, c);
    }
    return out;
}

Permutation inverse(const Permutation& perm) {
    Permutation inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv.at(perm[k]) = k;
    return inv;
}

namespace {

std::size_t hamming(const Permutation& a, const Permutation& b) {
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

double factorial_capped(std::size_t n) {
    double f = 1.0;
    for (std::size_t i = 2; i <= n && f < 1e18; ++i) f *= double(i);
    return f;
}

}  // namespace

PermutationPool PermutationPool::build(std::size_t grid, std::size_t size, std::uint64_t seed) {
    if (grid < 2) throw ConfigError("jigsaw grid side must be >= 2");
    if (size == 0) throw ConfigError("permutation pool must be non-empty");
    const std::size_t cells = grid * grid;
    if (double(size) > factorial_capped(cells))
        throw ConfigError("pool size " + std::to_string(size) + " exceeds the number of permutations of " +
                          std::to_string(cells) + " chunks");

    std::vector<Permutation> candidates;
    if (cells <= 8) {
        Permutation p(cells);
        std::iota(p.begin(), p.end(), 0);
        do candidates.push_back(p);
        while (std::next_permutation(p.begin(), p.end()));
    } else {
        Rng rng(seed);
        std::set<Permutation> unique;
        const std::size_t want = std::max<std::size_t>(2000, size * 50);
        Permutation p(cells);
        std::iota(p.begin(), p.end(), 0);
        unique.insert(p);
        while (unique.size() < want) {
            rng.shuffle(p);
            unique.insert(p);
        }
        candidates.assign(unique.begin(), unique.end());
    }
    // Shuffle so that ties are broken by the seed rather than lexicographic order.
    Rng order(seed ^ 0x5bd1e995ULL);
    order.shuffle(candidates);

    PermutationPool pool;
    pool.grid_ = grid;
    Permutation id(cells);
    std::iota(id.begin(), id.end(), 0);
    pool.entries_.push_back(id);
    std::vector<std::size_t> nearest(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) nearest[c] = hamming(candidates[c], id);
    while (pool.entries_.size() < size) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c)
            if (nearest[c] > nearest[best]) best = c;
        if (nearest[best] == 0) throw ConfigError("not enough distinct permutations for the pool");
        const Permutation chosen = candidates[best];
        pool.entries_.push_back(chosen);
        for (std::size_t c = 0; c < candidates.size(); ++c) nearest[c] = std::min(nearest[c], hamming(candidates[c], chosen));
    }
    return pool;
}

PermutationPool PermutationPool::from_entries(std::size_t grid, std::vector<Permutation> entries) {
    if (entries.empty()) throw ConfigError("permutation pool must be non-empty");
    std::set<Permutation> unique;
    for (const auto& p : entries) {
        check_permutation(p, grid * grid);
        if (!unique.insert(p).second) throw ConfigError("permutation pool entries must be distinct");
    }
    for (std::size_t k = 0; k < entries[0].size(); ++k)
        if (entries[0][k] != k) throw ConfigError("permutation pool entry 0 must be the identity");
    PermutationPool pool;
    pool.grid_ = grid;
    pool.entries_ = std::move(entries);
    return pool;
}

std::size_t PermutationPool::min_hamming_distance() const {
    std::size_t best = grid_ * grid_;
    for (std::size_t i = 0; i < entries_.size(); ++i)
        for (std::size_t j = i + 1; j < entries_.size(); ++j) best = std::min(best, hamming(entries_[i], entries_[j]));
    return best;
}

void to_json(nlohmann::json& j, const PermutationPool& pool) {
    j = {{"grid", pool.grid()}, {"entries", pool.entries()}};
}

PermutationPool pool_from_json(const nlohmann::json& j) {
    try {
        return PermutationPool::from_entries(j.at("grid").get<std::size_t>(), j.at("entries").get<std::vector<Permutation>>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed permutation pool: ") + e.what());
    }
}

Image apply_jigsaw(const Image& image, std::size_t perm_id, const PermutationPool& pool) {
    if (perm_id >= pool.size())
        throw ConfigError("permutation id " + std::to_string(perm_id) + " out of range for pool of " + std::to_string(pool.size()));
    return permute_chunks(image, pool.grid(), pool[perm_id]);
}

int macro_label(int fine_label, const GroupMap& map) {
    if (fine_label < 0 || std::size_t(fine_label) >= map.size() || map[std::size_t(fine_label)] < 0)
        throw ConfigError("fine label " + std::to_string(fine_label) + " has no macro class");
    return map[std::size_t(fine_label)];
}

void validate_group_map(const GroupMap& map, std::size_t fine_classes, std::size_t groups) {
    if (map.size() != fine_classes)
        throw ConfigError("group map covers " + std::to_string(map.size()) + " fine classes, expected " + std::to_string(fine_classes));
    for (std::size_t f = 0; f < map.size(); ++f)
        if (map[f] < 0 || std::size_t(map[f]) >= groups)
            throw ConfigError("fine class " + std::to_string(f) + " maps outside the macro classes");
}

GroupMap cifar10_vehicles_animals() { return {0, 0, 1, 1, 1, 1, 1, 1, 0, 0}; }

// ---------------------------------------------------------------------------

AugmentPipeline::AugmentPipeline(std::span<const TaskSpec> tasks, std::uint64_t pool_seed)
    : tasks_(tasks.begin(), tasks.end()) {
    for (std::size_t t = 0; t < tasks_.size(); ++t) {
        tasks_[t].validate();
        if (tasks_[t].kind != TaskKind::self_supervised) continue;
        stages_.push_back(t);
        if (tasks_[t].preprocessor == Preprocessor::jigsaw)
            pools_.emplace(t, PermutationPool::build(tasks_[t].jigsaw_grid, tasks_[t].jigsaw_pool_size, pool_seed + t));
    }
}

void AugmentPipeline::set_pool(std::size_t task, PermutationPool pool) {
    auto it = pools_.find(task);
    if (it == pools_.end()) throw ConfigError("task " + std::to_string(task) + " is not a jigsaw task");
    if (pool.size() != tasks_[task].jigsaw_pool_size || pool.grid() != tasks_[task].jigsaw_grid)
        throw ConfigError("pool does not match jigsaw task '" + tasks_[task].name + "'");
    it->second = std::move(pool);
}

AugmentDraw AugmentPipeline::apply(const Image& image, std::span<const int> labels) const {
    if (labels.size() != stages_.size()) throw ConfigError("need one label per self-supervised task");
    AugmentDraw out{image, {}};
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        const auto& task = tasks_[stages_[s]];
        if (task.preprocessor == Preprocessor::rotation)
            out.image = apply_rotation(out.image, labels[s]);
        else {
            if (labels[s] < 0) throw ConfigError("negative permutation id");
            out.image = apply_jigsaw(out.image, std::size_t(labels[s]), pools_.at(stages_[s]));
        }
        out.labels.push_back(labels[s]);
    }
    return out;
}

AugmentDraw AugmentPipeline::apply(const Image& image, Rng& rng) const {
    std::vector<int> labels;
    for (auto t : stages_) labels.push_back(int(rng.index(tasks_[t].arity)));
    return apply(image, labels);
}

std::pair<Tensor, std::vector<std::vector<int>>> AugmentPipeline::apply_batch(const Tensor& x, const ImageDims& dims,
                                                                             Rng& rng) const {
    const std::size_t n = x.rows();
    if (x.cols() != dims.size()) throw ShapeError("batch rows do not match the image dimensions");
    std::vector<std::vector<int>> labels(stages_.size(), std::vector<int>(n));
    if (stages_.empty()) return {x, labels};
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = x.row(i);
        Image img(dims.height, dims.width, dims.channels, {row.begin(), row.end()});
        auto draw = apply(img, rng);
        std::copy(draw.image.pixels.begin(), draw.image.pixels.end(), out.row(i).begin());
        for (std::size_t s = 0; s < stages_.size(); ++s) labels[s][i] = draw.labels[s];
    }
    return {out, labels};
}

AugmentDraw compose_preprocessors(std::span<const TaskSpec> tasks, const Image& image, Rng& rng,
                                  std::uint64_t pool_seed) {
    return AugmentPipeline(tasks, pool_seed).apply(image, rng);
}

}  // namespace gat
