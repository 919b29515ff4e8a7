#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gat/augment.hpp"
#include "gat/task.hpp"
#include "gat/tensor.hpp"
#include "json.hpp"

namespace gat {

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

enum class ColumnType { real, categorical };

struct MetadataColumn {
    std::string name;
    ColumnType type = ColumnType::real;
    std::size_t arity = 1;  // number of classes for categorical columns
    std::vector<double> values;

    friend bool operator==(const MetadataColumn&, const MetadataColumn&) = default;
};

struct LabeledCorpus {
    std::string name;
    std::uint64_t seed = 0;
    ImageDims dims;
    std::vector<float> pixels;  // N * H * W * C, sample-major
    std::vector<int> fine;
    std::vector<std::string> class_names;
    GroupMap group_map;
    std::vector<std::string> macro_names;
    std::vector<MetadataColumn> columns;
    std::vector<Split> splits;

    std::size_t size() const noexcept { return fine.size(); }
    std::size_t fine_classes() const noexcept { return class_names.size(); }
    std::size_t macro_classes() const noexcept { return macro_names.size(); }
    int macro(std::size_t i) const { return macro_label(fine.at(i), group_map); }
    const MetadataColumn& column(const std::string& name) const;
    bool has_column(const std::string& name) const;

    std::vector<std::size_t> indices(Split s) const;
    std::vector<std::size_t> class_counts() const;
    // Flattened [n, H*W*C] batch of the given samples.
    Tensor batch(std::span<const std::size_t> idx) const;
    Image image(std::size_t i) const;
    // Labels of a non-self-supervised task, read from its label column.
    TaskLabels labels(const TaskSpec& task, std::span<const std::size_t> idx) const;
    LabeledCorpus select(std::span<const std::size_t> idx) const;

    // Throws ShapeError / ConfigError on any violated invariant.
    void validate() const;
    friend bool operator==(const LabeledCorpus&, const LabeledCorpus&) = default;
};

struct SyntheticOptions {
    std::size_t n = 3000;
    std::size_t image_size = 16;
    std::size_t fine_classes = 8;
    std::uint64_t seed = 0;
    double noise = 0.08;
    // Explicit split sizes; the rest is train.
    std::size_t val_count = 300;
    std::size_t test_count = 700;
    std::size_t jigsaw_grid = 4;
};

// Parametric shapes. Fine class picks the shape family; even classes are
// angular and odd classes rounded, which gives the two macro classes.
LabeledCorpus generate_synthetic(const SyntheticOptions& options);
const std::vector<std::string>& synthetic_class_names();

// GATC1 container.
std::string serialize_corpus(const LabeledCorpus& corpus);
LabeledCorpus parse_corpus(const std::string& bytes);
std::uint32_t crc32_of(std::string_view bytes);
std::uint32_t corpus_checksum(const LabeledCorpus& corpus);

nlohmann::json dataset_manifest(const LabeledCorpus& corpus, const std::filesystem::path& file);
// Writes the corpus and "<path>.manifest.json".
void save_corpus(const LabeledCorpus& corpus, const std::filesystem::path& path);
LabeledCorpus load_corpus(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& corpus_path);

// Seeded subsample of round(fraction * N) samples, in original order. When
// `within` is set only that split is subsampled and all other samples are kept.
// Stratified mode allocates by largest remainder, first over macro classes and
// then over fine classes inside each macro class.
std::vector<std::size_t> subset_indices(const LabeledCorpus& corpus, double fraction, bool stratify,
                                        std::uint64_t seed, std::optional<Split> within = std::nullopt);
LabeledCorpus split_subset(const LabeledCorpus& corpus, double fraction, bool stratify, std::uint64_t seed,
                           std::optional<Split> within = std::nullopt);

}  // namespace gat
