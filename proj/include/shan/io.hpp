#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "shan/error.hpp"
#include "shan/hazegen.hpp"
#include "shan/network.hpp"
#include "shan/tensor.hpp"

namespace shan {

namespace fs = std::filesystem;

namespace detail {

inline void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
}

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
    is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) throw DataError(std::string("truncated input while reading ") + what);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    read_exact(is, b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    read_exact(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    read_exact(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

inline float get_f32(std::istream& is, const char* what) {
    std::uint32_t u = get_u32(is, what);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
    return os;
}

inline std::ifstream open_in(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path.string() + "'");
    return is;
}

inline void write_shape_and_data(std::ostream& os, const Shape& shape, std::span<const float> data) {
    put_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : data) put_f32(os, v);
}

inline Tensor<float> read_shape_and_data(std::istream& is, const char* what) {
    const std::uint32_t rank = get_u32(is, what);
    if (rank == 0 || rank > 8) throw DataError(std::string(what) + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        e = get_u32(is, what);
        if (e == 0) throw DataError(std::string(what) + ": zero extent");
    }
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = get_f32(is, what);
    return Tensor<float>(std::move(shape), std::move(data));
}

} // namespace detail

// ---------------------------------------------------------------------------
// F32M: "F32M", u32 version = 1, u32 rank, rank x u32 extents, f32 LE data.

inline void write_f32m(std::ostream& os, const Tensor<float>& t) {
    os.write("F32M", 4);
    detail::put_u32(os, 1);
    detail::write_shape_and_data(os, t.shape(), t.data());
}

inline void write_f32m(const fs::path& path, const Tensor<float>& t) {
    auto os = detail::open_out(path);
    write_f32m(os, t);
}

inline Tensor<float> read_f32m(std::istream& is) {
    char magic[4];
    detail::read_exact(is, magic, 4, "F32M magic");
    if (std::memcmp(magic, "F32M", 4) != 0) throw DataError("not an F32M file (bad magic)");
    const std::uint32_t version = detail::get_u32(is, "F32M version");
    if (version != 1) throw DataError("unsupported F32M version " + std::to_string(version));
    return detail::read_shape_and_data(is, "F32M");
}

inline Tensor<float> read_f32m(const fs::path& path) {
    auto is = detail::open_in(path);
    return read_f32m(is);
}

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255). value = round(255 x), clamped.

inline void write_ppm(std::ostream& os, const Tensor<float>& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw ShapeError("write_ppm", "C", "expected 3 x H x W image, got " + shape_str(img.shape()));
    const std::size_t h = img.dim(1), w = img.dim(2), hw = h * w;
    os << "P6\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> buf(hw * 3);
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            double v = std::round(255.0 * static_cast<double>(img[c * hw + i]));
            buf[i * 3 + c] = static_cast<unsigned char>(std::clamp(std::isnan(v) ? 0.0 : v, 0.0, 255.0));
        }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline void write_ppm(const fs::path& path, const Tensor<float>& img) {
    auto os = detail::open_out(path);
    write_ppm(os, img);
}

namespace detail {
inline std::size_t ppm_token(std::istream& is) {
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw DataError("malformed PPM header");
    std::size_t v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + static_cast<std::size_t>(ch - '0');
        ch = is.get();
    }
    // single whitespace after the token is consumed by the get() above
    return v;
}
} // namespace detail

inline Tensor<float> read_ppm(std::istream& is) {
    char magic[2];
    detail::read_exact(is, magic, 2, "PPM magic");
    if (magic[0] != 'P' || magic[1] != '6') throw DataError("not a binary PPM (P6) image");
    const std::size_t w = detail::ppm_token(is), h = detail::ppm_token(is), maxval = detail::ppm_token(is);
    if (w == 0 || h == 0) throw DataError("PPM has zero size");
    if (maxval != 255) throw DataError("only maxval 255 PPM images are supported");
    std::vector<unsigned char> buf(w * h * 3);
    detail::read_exact(is, buf.data(), buf.size(), "PPM pixels");
    Tensor<float> img(Shape{3, h, w});
    const std::size_t hw = h * w;
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) img[c * hw + i] = static_cast<float>(buf[i * 3 + c]) / 255.0f;
    return img;
}

inline Tensor<float> read_ppm(const fs::path& path) {
    auto is = detail::open_in(path);
    return read_ppm(is);
}

// ---------------------------------------------------------------------------
// key=value text (one pair per line, '#' comments)

inline KeyValues parse_kv(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            s.erase(0, s.find_first_not_of(ws));
            s.erase(s.find_last_not_of(ws) + 1);
            return s;
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("line " + std::to_string(lineno) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::string format_kv(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline KeyValues read_kv(const fs::path& path) {
    auto is = detail::open_in(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_kv(ss.str());
}

// ---------------------------------------------------------------------------
// SHAN checkpoint:
//   "SHAN", u32 version, u64 param count,
//   per parameter (lexicographic): u16 name length, name, u32 rank, extents, f32 data,
//   u32 config length, config bytes (key=value lines), u64 seed.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Tensor<float> value;
};

struct CheckpointData {
    std::vector<CheckpointEntry> params;
    KeyValues config;
    std::uint64_t seed = 0;

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.value.numel();
        return n;
    }
};

template <typename T>
void save_checkpoint(std::ostream& os, const Model<T>& model) {
    os.write("SHAN", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u64(os, model.params().size());
    for (const auto& [name, var] : model.params()) {
        if (name.size() > 0xFFFF) throw DataError("parameter name too long: " + name);
        detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        Tensor<float> f = var.value().template cast<float>();
        detail::write_shape_and_data(os, f.shape(), f.data());
    }
    const std::string cfg = format_kv(model.config().to_kv());
    detail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::put_u64(os, model.config().seed);
}

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& model) {
    auto os = detail::open_out(path);
    save_checkpoint(os, model);
    if (!os) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

inline CheckpointData read_checkpoint(std::istream& is) {
    char magic[4];
    detail::read_exact(is, magic, 4, "checkpoint magic");
    if (std::memcmp(magic, "SHAN", 4) != 0) throw DataError("not a SHAN checkpoint (bad magic)");
    const std::uint32_t version = detail::get_u32(is, "checkpoint version");
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t count = detail::get_u64(is, "parameter count");
    CheckpointData data;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint16_t len = detail::get_u16(is, "parameter name length");
        std::string name(len, '\0');
        detail::read_exact(is, name.data(), len, "parameter name");
        data.params.push_back({name, detail::read_shape_and_data(is, "parameter")});
    }
    const std::uint32_t cfg_len = detail::get_u32(is, "config length");
    std::string cfg(cfg_len, '\0');
    detail::read_exact(is, cfg.data(), cfg_len, "config block");
    data.config = parse_kv(cfg);
    data.seed = detail::get_u64(is, "seed");
    return data;
}

inline CheckpointData read_checkpoint(const fs::path& path) {
    auto is = detail::open_in(path);
    return read_checkpoint(is);
}

/// Rebuilds the model from the stored config and copies every parameter in.
template <typename T>
Model<T> load_checkpoint(const CheckpointData& data) {
    ModelConfig cfg;
    cfg.apply(data.config);
    cfg.seed = data.seed;
    Model<T> model(cfg);
    if (data.params.size() != model.params().size())
        throw DataError("checkpoint has " + std::to_string(data.params.size()) + " parameters, model expects " +
                        std::to_string(model.params().size()));
    for (const auto& entry : data.params) {
        if (!model.params().contains(entry.name)) throw DataError("checkpoint parameter '" + entry.name + "' unknown");
        Var<T> v = model.params().get(entry.name);
        if (v.shape() != entry.value.shape())
            throw DataError("checkpoint parameter '" + entry.name + "' has shape " + shape_str(entry.value.shape()) +
                            ", model expects " + shape_str(v.shape()));
        v.mutable_value() = entry.value.template cast<T>();
    }
    return model;
}

template <typename T>
Model<T> load_checkpoint(const fs::path& path) {
    return load_checkpoint<T>(read_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Dataset directory: {root}/{split}/{id}_hazy.ppm, {id}_gt.ppm, {id}_t.f32, meta.tsv

struct DatasetEntry {
    std::string id;
    HazyPair<float> pair;
};

inline void write_dataset(const fs::path& root, const std::string& split, const std::vector<HazyPair<float>>& pairs) {
    const fs::path dir = root / split;
    fs::create_directories(dir);
    std::ofstream meta(dir / "meta.tsv");
    if (!meta) throw DataError("cannot write '" + (dir / "meta.tsv").string() + "'");
    meta << "id\tA_r\tA_g\tA_b\tbeta\n";
    meta << std::setprecision(17);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::ostringstream id;
        id << std::setw(4) << std::setfill('0') << i;
        const auto& p = pairs[i];
        write_ppm(dir / (id.str() + "_hazy.ppm"), p.hazy);
        write_ppm(dir / (id.str() + "_gt.ppm"), p.clean);
        write_f32m(dir / (id.str() + "_t.f32"), p.transmission);
        meta << id.str() << '\t' << p.params.atmospheric_light[0] << '\t' << p.params.atmospheric_light[1] << '\t'
             << p.params.atmospheric_light[2] << '\t' << p.params.beta << '\n';
    }
}

/// Reads a split. Rows come from meta.tsv when present; otherwise every
/// `{id}_hazy.ppm` with a matching `{id}_gt.ppm` is used (real image pairs).
inline std::vector<DatasetEntry> read_dataset(const fs::path& root, const std::string& split) {
    const fs::path dir = root / split;
    if (!fs::is_directory(dir)) throw DataError("dataset split directory '" + dir.string() + "' not found");
    std::vector<DatasetEntry> out;
    const fs::path meta = dir / "meta.tsv";
    if (fs::exists(meta)) {
        std::ifstream in(meta);
        std::string line;
        std::getline(in, line);
        if (line.rfind("id\tA_r\tA_g\tA_b\tbeta", 0) != 0) throw DataError("meta.tsv: unexpected header");
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            DatasetEntry e;
            HazeParams hp;
            if (!(row >> e.id >> hp.atmospheric_light[0] >> hp.atmospheric_light[1] >> hp.atmospheric_light[2] >>
                  hp.beta))
                throw DataError("meta.tsv: malformed row '" + line + "'");
            e.pair.params = hp;
            out.push_back(std::move(e));
        }
    } else {
        for (const auto& f : fs::directory_iterator(dir)) {
            const std::string name = f.path().filename().string();
            const std::string suffix = "_hazy.ppm";
            if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                out.push_back({name.substr(0, name.size() - suffix.size()), {}});
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    }
    if (out.empty()) throw DataError("dataset split '" + dir.string() + "' is empty");
    for (auto& e : out) {
        e.pair.hazy = read_ppm(dir / (e.id + "_hazy.ppm"));
        e.pair.clean = read_ppm(dir / (e.id + "_gt.ppm"));
        if (e.pair.hazy.shape() != e.pair.clean.shape())
            throw DataError("dataset item '" + e.id + "': hazy and ground truth sizes differ");
        const fs::path t = dir / (e.id + "_t.f32");
        e.pair.transmission = fs::exists(t) ? read_f32m(t)
                                            : Tensor<float>(Shape{1, e.pair.hazy.dim(1), e.pair.hazy.dim(2)}, 1.0f);
    }
    return out;
}

inline std::vector<HazyPair<float>> pairs_of(const std::vector<DatasetEntry>& entries) {
    std::vector<HazyPair<float>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.pair);
    return out;
}

} // namespace shan
