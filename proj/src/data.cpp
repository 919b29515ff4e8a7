#include "gat/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gat/error.hpp"
#include "gat/random.hpp"

namespace gat {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "'");
}

const MetadataColumn& LabeledCorpus::column(const std::string& col) const {
    for (const auto& c : columns)
        if (c.name == col) return c;
    throw ConfigError("corpus '" + name + "' has no column '" + col + "'");
}

bool LabeledCorpus::has_column(const std::string& col) const {
    return col == "fine" || col == "macro" ||
           std::any_of(columns.begin(), columns.end(), [&](const auto& c) { return c.name == col; });
}

std::vector<std::size_t> LabeledCorpus::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(i);
    return out;
}

std::vector<std::size_t> LabeledCorpus::class_counts() const {
    std::vector<std::size_t> counts(fine_classes(), 0);
    for (int f : fine) counts.at(std::size_t(f))++;
    return counts;
}

Tensor LabeledCorpus::batch(std::span<const std::size_t> idx) const {
    const std::size_t d = dims.size();
    Tensor out(Shape{std::max<std::size_t>(idx.size(), 1), d});
    if (idx.empty()) throw ShapeError("empty batch");
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const float* src = pixels.data() + idx[r] * d;
        auto row = out.row(r);
        for (std::size_t k = 0; k < d; ++k) row[k] = src[k];
    }
    return out;
}

Image LabeledCorpus::image(std::size_t i) const {
    const std::size_t d = dims.size();
    return Image(dims.height, dims.width, dims.channels,
                 std::vector<double>(pixels.begin() + std::ptrdiff_t(i * d), pixels.begin() + std::ptrdiff_t((i + 1) * d)));
}

TaskLabels LabeledCorpus::labels(const TaskSpec& task, std::span<const std::size_t> idx) const {
    if (task.kind == TaskKind::self_supervised)
        throw ConfigError("labels of self-supervised task '" + task.name + "' come from its preprocessor");
    TaskLabels out;
    if (task.label_column == "fine" || task.label_column == "macro") {
        const std::size_t arity = task.label_column == "fine" ? fine_classes() : macro_classes();
        if (task.arity != arity)
            throw ConfigError("task '" + task.name + "' arity " + std::to_string(task.arity) + " != " + std::to_string(arity) +
                              " classes in column '" + task.label_column + "'");
        for (auto i : idx) out.classes.push_back(task.label_column == "fine" ? fine.at(i) : macro(i));
        return out;
    }
    const auto& col = column(task.label_column);
    if (task.loss == LossFamily::mse) {
        if (col.type != ColumnType::real) throw ConfigError("regression task '" + task.name + "' needs a real column");
        for (auto i : idx) out.values.push_back(col.values.at(i));
    } else {
        if (col.type != ColumnType::categorical || col.arity != task.arity)
            throw ConfigError("task '" + task.name + "' does not match column '" + col.name + "'");
        for (auto i : idx) out.classes.push_back(int(col.values.at(i)));
    }
    return out;
}

LabeledCorpus LabeledCorpus::select(std::span<const std::size_t> idx) const {
    LabeledCorpus out = *this;
    out.pixels.clear();
    out.fine.clear();
    out.splits.clear();
    for (auto& c : out.columns) c.values.clear();
    const std::size_t d = dims.size();
    for (auto i : idx) {
        if (i >= size()) throw ConfigError("sample index out of range");
        out.pixels.insert(out.pixels.end(), pixels.begin() + std::ptrdiff_t(i * d), pixels.begin() + std::ptrdiff_t((i + 1) * d));
        out.fine.push_back(fine[i]);
        out.splits.push_back(splits[i]);
        for (std::size_t c = 0; c < columns.size(); ++c) out.columns[c].values.push_back(columns[c].values[i]);
    }
    return out;
}

void LabeledCorpus::validate() const {
    const std::size_t n = size();
    if (dims.height == 0 || dims.width == 0 || dims.channels == 0) throw ShapeError("corpus image dimensions must be positive");
    if (pixels.size() != n * dims.size()) throw ShapeError("pixel block does not match sample count");
    if (splits.size() != n) throw ShapeError("split column length mismatch");
    if (class_names.empty()) throw ConfigError("corpus has no classes");
    validate_group_map(group_map, class_names.size(), macro_names.size());
    for (int f : fine)
        if (f < 0 || std::size_t(f) >= class_names.size()) throw ConfigError("fine label " + std::to_string(f) + " out of range");
    for (float p : pixels)
        if (!(p >= 0.0f && p <= 1.0f)) throw NumericError("pixel outside [0,1]");
    for (const auto& c : columns) {
        if (c.values.size() != n) throw ShapeError("column '" + c.name + "' length mismatch");
        if (c.name.empty() || c.name.find_first_of(",\n") != std::string::npos || c.name == "fine" || c.name == "macro" ||
            c.name == "id" || c.name == "split")
            throw ConfigError("invalid column name '" + c.name + "'");
        for (double v : c.values) {
            if (!std::isfinite(v)) throw NumericError("non-finite value in column '" + c.name + "'");
            if (c.type == ColumnType::categorical && (v != std::floor(v) || v < 0 || v >= double(c.arity)))
                throw ConfigError("column '" + c.name + "' value out of range");
        }
    }
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& synthetic_class_names() {
    static const std::vector<std::string> names{"square", "circle",  "triangle", "ring",
                                                "diamond", "ellipse", "plus",     "double-circle"};
    return names;
}

namespace {

bool in_shape(int fine, bool flip, double u, double v) {
    if (flip) std::swap(u, v);
    switch (fine) {
        case 0: return std::max(std::abs(u), std::abs(v)) <= 0.8;
        case 1: return u * u + v * v <= 0.81;
        case 2: {
            // apex up, base at v = 0.7
            if (v > 0.7 || v < -0.9) return false;
            const double half = 0.85 * (v + 0.9) / 1.6;
            return std::abs(u) <= half;
        }
        case 3: {
            const double r2 = u * u + v * v;
            return r2 <= 0.81 && r2 >= 0.25;
        }
        case 4: return std::abs(u) + std::abs(v) <= 0.95;
        case 5: return (u / 0.95) * (u / 0.95) + (v / 0.5) * (v / 0.5) <= 1.0;
        case 6: return (std::abs(u) <= 0.28 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.28 && std::abs(u) <= 0.9);
        case 7: return (u - 0.48) * (u - 0.48) + v * v <= 0.18 || (u + 0.48) * (u + 0.48) + v * v <= 0.18;
        default: return false;
    }
}

// style 0 filled, 1 thick outline, 2 thin outline
bool covered(int fine, bool flip, int style, double u, double v) {
    if (!in_shape(fine, flip, u, v)) return false;
    if (style == 0) return true;
    const double s = style == 1 ? 0.55 : 0.78;
    return !in_shape(fine, flip, u / s, v / s);
}

constexpr double kMinRadius = 0.28, kMaxRadius = 0.46;  // fraction of the image side

}  // namespace

LabeledCorpus generate_synthetic(const SyntheticOptions& o) {
    if (o.fine_classes < 2 || o.fine_classes > synthetic_class_names().size())
        throw ConfigError("synthetic corpus supports 2 to " + std::to_string(synthetic_class_names().size()) + " fine classes");
    if (o.n < o.fine_classes) throw ConfigError("need at least one sample per fine class");
    if (o.image_size < 4) throw ShapeError("image size must be at least 4");
    if (o.jigsaw_grid == 0 || o.image_size % o.jigsaw_grid != 0)
        throw ShapeError("image size " + std::to_string(o.image_size) + " is not divisible by jigsaw grid " +
                         std::to_string(o.jigsaw_grid));
    if (o.val_count + o.test_count >= o.n) throw ConfigError("validation and test splits leave no training data");
    if (!(o.noise >= 0.0 && o.noise < 1.0)) throw ConfigError("noise must be in [0,1)");

    LabeledCorpus c;
    c.name = "synthetic-shapes";
    c.seed = o.seed;
    c.dims = {o.image_size, o.image_size, 1};
    c.class_names.assign(synthetic_class_names().begin(), synthetic_class_names().begin() + std::ptrdiff_t(o.fine_classes));
    for (std::size_t f = 0; f < o.fine_classes; ++f) c.group_map.push_back(int(f % 2));
    c.macro_names = {"angular", "rounded"};
    MetadataColumn age{"age", ColumnType::real, 1, {}};
    MetadataColumn gender{"gender", ColumnType::categorical, 3, {}};
    MetadataColumn marker{"marker", ColumnType::categorical, 2, {}};

    Rng rng(o.seed);
    Rng label_rng = rng.fork(1);
    Rng split_rng = rng.fork(2);
    Rng render_rng = rng.fork(3);

    c.fine.resize(o.n);
    for (std::size_t i = 0; i < o.n; ++i) c.fine[i] = int(i % o.fine_classes);
    label_rng.shuffle(c.fine);

    const std::size_t side = o.image_size;
    const double sidef = double(side);
    c.pixels.reserve(o.n * side * side);
    for (std::size_t i = 0; i < o.n; ++i) {
        const int f = c.fine[i];
        const double scale = render_rng.uniform();
        const double r = (kMinRadius + (kMaxRadius - kMinRadius) * scale) * sidef;
        const double margin = std::max(0.0, sidef / 2.0 - r);
        const double cx = sidef / 2.0 + render_rng.uniform(-margin, margin);
        const double cy = sidef / 2.0 + render_rng.uniform(-margin, margin);
        const bool flip = render_rng.uniform() < 0.5;
        const int style = int(render_rng.index(3));
        const bool dot = render_rng.uniform() < 0.5;
        const std::size_t corner = render_rng.index(4);
        const double bg = render_rng.uniform(0.0, 0.25);
        const double fg = render_rng.uniform(0.7, 1.0);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                int hits = 0;
                for (int sy = 0; sy < 2; ++sy)
                    for (int sx = 0; sx < 2; ++sx) {
                        const double px = double(x) + 0.25 + 0.5 * sx, py = double(y) + 0.25 + 0.5 * sy;
                        hits += covered(f, flip, style, (px - cx) / r, (py - cy) / r);
                    }
                double v = bg + (fg - bg) * hits / 4.0;
                if (dot) {
                    const std::size_t dy = corner / 2 ? side - 2 : 0, dx = corner % 2 ? side - 2 : 0;
                    if (y >= dy && y < dy + 2 && x >= dx && x < dx + 2) v = fg;
                }
                v += o.noise * render_rng.normal();
                c.pixels.push_back(float(std::clamp(v, 0.0, 1.0)));
            }
        age.values.push_back(scale);
        gender.values.push_back(style);
        marker.values.push_back(dot ? 1.0 : 0.0);
    }
    c.columns = {std::move(age), std::move(gender), std::move(marker)};

    std::vector<std::size_t> order(o.n);
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    c.splits.assign(o.n, Split::train);
    for (std::size_t k = 0; k < o.val_count; ++k) c.splits[order[k]] = Split::val;
    for (std::size_t k = 0; k < o.test_count; ++k) c.splits[order[o.val_count + k]] = Split::test;
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "GATC1\n";

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else
            cur.push_back(ch);
    }
    out.push_back(cur);
    return out;
}

std::string csv_block(const LabeledCorpus& c) {
    std::string out = "id,fine,split";
    for (const auto& col : c.columns) out += "," + col.name;
    out += "\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        out += std::to_string(i) + "," + std::to_string(c.fine[i]) + "," + to_string(c.splits[i]);
        for (const auto& col : c.columns)
            out += "," + (col.type == ColumnType::categorical ? std::to_string(long(col.values[i])) : format_double(col.values[i]));
        out += "\n";
    }
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(char((v >> (8 * k)) & 0xFF));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(std::uint8_t(s[at + std::size_t(k)])) << (8 * k);
    return v;
}

}  // namespace

std::uint32_t crc32_of(std::string_view bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t chunk = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), uInt(chunk));
        pos += chunk;
    }
    return std::uint32_t(crc);
}

std::string serialize_corpus(const LabeledCorpus& c) {
    c.validate();
    const std::string csv = csv_block(c);
    nlohmann::json schema = nlohmann::json::array();
    for (const auto& col : c.columns)
        schema.push_back({{"name", col.name},
                          {"type", col.type == ColumnType::real ? "real" : "categorical"},
                          {"arity", col.arity}});
    nlohmann::json meta{{"name", c.name},
                        {"seed", c.seed},
                        {"count", c.size()},
                        {"dims", {c.dims.height, c.dims.width, c.dims.channels}},
                        {"class_names", c.class_names},
                        {"group_map", c.group_map},
                        {"macro_names", c.macro_names},
                        {"columns", schema},
                        {"pixel_bytes", c.pixels.size() * 4},
                        {"csv_bytes", csv.size()}};
    std::string out(kMagic);
    out += meta.dump();
    out += "\n";
    const std::size_t start = out.size();
    out.resize(start + c.pixels.size() * 4);
    for (std::size_t k = 0; k < c.pixels.size(); ++k) {
        const std::uint32_t bits = std::bit_cast<std::uint32_t>(c.pixels[k]);
        for (int b = 0; b < 4; ++b) out[start + 4 * k + std::size_t(b)] = char((bits >> (8 * b)) & 0xFF);
    }
    out += csv;
    put_u32(out, crc32_of(out));
    return out;
}

LabeledCorpus parse_corpus(const std::string& bytes) {
    if (bytes.size() < kMagic.size() || bytes.compare(0, kMagic.size(), kMagic) != 0)
        throw ParseError("missing GATC1 header", 0);
    std::size_t pos = kMagic.size();
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) throw ParseError("unterminated metadata block", bytes.size());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.begin() + std::ptrdiff_t(pos), bytes.begin() + std::ptrdiff_t(eol));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed metadata block: ") + e.what(), pos);
    }
    pos = eol + 1;

    LabeledCorpus c;
    std::size_t count = 0, pixel_bytes = 0, csv_bytes = 0;
    try {
        c.name = meta.at("name").get<std::string>();
        c.seed = meta.at("seed").get<std::uint64_t>();
        count = meta.at("count").get<std::size_t>();
        auto dims = meta.at("dims").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw ParseError("dims must have three entries", kMagic.size());
        c.dims = {dims[0], dims[1], dims[2]};
        c.class_names = meta.at("class_names").get<std::vector<std::string>>();
        c.group_map = meta.at("group_map").get<GroupMap>();
        c.macro_names = meta.at("macro_names").get<std::vector<std::string>>();
        for (const auto& s : meta.at("columns")) {
            MetadataColumn col;
            col.name = s.at("name").get<std::string>();
            const auto type = s.at("type").get<std::string>();
            if (type != "real" && type != "categorical") throw ParseError("unknown column type '" + type + "'", kMagic.size());
            col.type = type == "real" ? ColumnType::real : ColumnType::categorical;
            col.arity = s.at("arity").get<std::size_t>();
            c.columns.push_back(std::move(col));
        }
        pixel_bytes = meta.at("pixel_bytes").get<std::size_t>();
        csv_bytes = meta.at("csv_bytes").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("metadata block: ") + e.what(), kMagic.size());
    }
    if (pixel_bytes != count * c.dims.size() * 4) throw ParseError("pixel block size disagrees with dims", kMagic.size());

    if (bytes.size() - pos < pixel_bytes) throw ParseError("truncated pixel block", bytes.size());
    c.pixels.resize(pixel_bytes / 4);
    for (std::size_t k = 0; k < c.pixels.size(); ++k) c.pixels[k] = std::bit_cast<float>(get_u32(bytes, pos + 4 * k));
    pos += pixel_bytes;
    if (bytes.size() - pos < csv_bytes) throw ParseError("truncated label block", bytes.size());
    const std::size_t csv_start = pos;
    pos += csv_bytes;
    if (bytes.size() - pos < 4) throw ParseError("truncated checksum footer", bytes.size());
    if (bytes.size() - pos > 4) throw ParseError("trailing bytes after checksum footer", pos + 4);
    const std::uint32_t stored = get_u32(bytes, pos);
    const std::uint32_t actual = crc32_of(std::string_view(bytes).substr(0, pos));
    if (stored != actual) throw ParseError("checksum mismatch", pos);

    std::istringstream csv(bytes.substr(csv_start, csv_bytes));
    std::string line;
    std::size_t line_offset = csv_start;
    std::getline(csv, line);
    std::string expected = "id,fine,split";
    for (const auto& col : c.columns) expected += "," + col.name;
    if (line != expected) throw ParseError("schema error: label header '" + line + "' does not match metadata", line_offset);
    const std::size_t width = 3 + c.columns.size();
    line_offset += line.size() + 1;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(csv, line)) throw ParseError("label block has fewer rows than samples", line_offset);
        const auto fields = split_fields(line);
        if (fields.size() != width)
            throw ParseError("schema error: row has " + std::to_string(fields.size()) + " fields, header has " + std::to_string(width),
                             line_offset);
        try {
            if (std::stoul(fields[0]) != i) throw ParseError("row id out of sequence", line_offset);
            std::size_t used = 0;
            const int f = std::stoi(fields[1], &used);
            if (used != fields[1].size()) throw std::invalid_argument("fine");
            c.fine.push_back(f);
            c.splits.push_back(split_from_string(fields[2]));
            for (std::size_t k = 0; k < c.columns.size(); ++k) {
                const double v = std::stod(fields[3 + k], &used);
                if (used != fields[3 + k].size()) throw std::invalid_argument("value");
                c.columns[k].values.push_back(v);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError("malformed label row", line_offset);
        }
        line_offset += line.size() + 1;
    }
    if (std::getline(csv, line)) throw ParseError("label block has more rows than samples", line_offset);
    try {
        c.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("invalid corpus: ") + e.what(), csv_start);
    }
    return c;
}

std::uint32_t corpus_checksum(const LabeledCorpus& corpus) {
    const std::string bytes = serialize_corpus(corpus);
    return get_u32(bytes, bytes.size() - 4);
}

std::filesystem::path manifest_path(const std::filesystem::path& corpus_path) {
    return corpus_path.string() + ".manifest.json";
}

nlohmann::json dataset_manifest(const LabeledCorpus& corpus, const std::filesystem::path& file) {
    const std::string bytes = serialize_corpus(corpus);
    char hex[9];
    std::snprintf(hex, sizeof hex, "%08x", get_u32(bytes, bytes.size() - 4));
    nlohmann::json splits;
    for (auto s : {Split::train, Split::val, Split::test}) splits[to_string(s)] = corpus.indices(s).size();
    return {{"corpus", corpus.name},
            {"seed", corpus.seed},
            {"count", corpus.size()},
            {"class_names", corpus.class_names},
            {"class_counts", corpus.class_counts()},
            {"group_map", corpus.group_map},
            {"split_counts", splits},
            {"files", {{{"path", file.filename().string()}, {"bytes", bytes.size()}, {"crc32", hex}}}}};
}

void save_corpus(const LabeledCorpus& corpus, const std::filesystem::path& path) {
    const std::string bytes = serialize_corpus(corpus);
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write corpus " + path.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw IoError("failed writing corpus " + path.string());
    }
    std::ofstream m(manifest_path(path));
    if (!m) throw IoError("cannot write manifest for " + path.string());
    m << dataset_manifest(corpus, path).dump(2) << '\n';
}

LabeledCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read corpus " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_corpus(bytes);
}

// ---------------------------------------------------------------------------

namespace {

// Largest-remainder apportionment of `total` over `weights`; ties go to the
// lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
    const std::size_t sum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
    std::vector<std::size_t> out(weights.size(), 0), rem(weights.size(), 0);
    if (sum == 0) return out;
    std::size_t given = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        out[i] = total * weights[i] / sum;
        rem[i] = total * weights[i] % sum;
        given += out[i];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
    for (std::size_t k = 0; given < total; ++k, ++given) out[order[k % order.size()]]++;
    return out;
}

}  // namespace

std::vector<std::size_t> subset_indices(const LabeledCorpus& corpus, double fraction, bool stratify, std::uint64_t seed,
                                        std::optional<Split> within) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must be in (0, 1]");
    std::vector<std::size_t> pool, kept;
    for (std::size_t i = 0; i < corpus.size(); ++i) (!within || corpus.splits[i] == *within ? pool : kept).push_back(i);
    if (pool.empty()) throw ConfigError("no samples to subsample");
    const std::size_t k = std::max<std::size_t>(1, std::size_t(std::llround(fraction * double(pool.size()))));
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    if (!stratify) {
        auto order = pool;
        rng.shuffle(order);
        chosen.assign(order.begin(), order.begin() + std::ptrdiff_t(k));
    } else {
        const std::size_t fine_n = corpus.fine_classes(), macro_n = corpus.macro_classes();
        std::vector<std::vector<std::size_t>> by_fine(fine_n);
        for (auto i : pool) by_fine[std::size_t(corpus.fine[i])].push_back(i);
        std::vector<std::size_t> macro_counts(macro_n, 0);
        for (std::size_t f = 0; f < fine_n; ++f) macro_counts[std::size_t(corpus.group_map[f])] += by_fine[f].size();
        const auto macro_alloc = apportion(k, macro_counts);
        for (std::size_t m = 0; m < macro_n; ++m) {
            std::vector<std::size_t> members, weights;
            for (std::size_t f = 0; f < fine_n; ++f)
                if (std::size_t(corpus.group_map[f]) == m) {
                    members.push_back(f);
                    weights.push_back(by_fine[f].size());
                }
            const auto alloc = apportion(macro_alloc[m], weights);
            for (std::size_t j = 0; j < members.size(); ++j) {
                auto& cls = by_fine[members[j]];
                if (!cls.empty() && alloc[j] == 0)
                    throw ConfigError("fraction " + std::to_string(fraction) + " leaves class '" +
                                      corpus.class_names[members[j]] + "' empty under stratification");
                Rng class_rng = rng.fork(members[j]);
                class_rng.shuffle(cls);
                chosen.insert(chosen.end(), cls.begin(), cls.begin() + std::ptrdiff_t(alloc[j]));
            }
        }
    }
    chosen.insert(chosen.end(), kept.begin(), kept.end());
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

LabeledCorpus split_subset(const LabeledCorpus& corpus, double fraction, bool stratify, std::uint64_t seed,
                           std::optional<Split> within) {
    return corpus.select(subset_indices(corpus, fraction, stratify, seed, within));
}

}  // namespace gat
