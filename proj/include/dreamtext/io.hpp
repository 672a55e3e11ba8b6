#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dreamtext/rng.hpp"
#include "dreamtext/tensor.hpp"

// File formats. Everything on disk is one of two things:
//   - line records: one structured-text record per line, space-separated
//     key=value pairs in a fixed key order (manifests, metrics, configs);
//   - tensor containers: a versioned binary header followed by named tensors,
//     each as (name length, name, rank, dims, raw little-endian f64 data)
//     (checkpoints and corpus samples share this encoding).
// Doubles in text records are printed with %.17g so they parse back bit-exact.

namespace dreamtext {

// ---------------------------------------------------------------------------
// line records
// ---------------------------------------------------------------------------

using Record = std::vector<std::pair<std::string, std::string>>;

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("bad numeric value '" + s + "'");
    return v;
}

inline std::string encode_record(const Record& rec) {
    std::ostringstream os;
    for (std::size_t i = 0; i < rec.size(); ++i) {
        const auto& [key, value] = rec[i];
        if (key.find_first_of(" =\n") != std::string::npos)
            throw std::invalid_argument("record key '" + key + "' contains a reserved character");
        if (value.find_first_of(" \n") != std::string::npos || value.empty())
            throw std::invalid_argument("record value for '" + key +
                                        "' is empty or contains a space");
        if (i) os << ' ';
        os << key << '=' << value;
    }
    return os.str();
}

inline Record parse_record(const std::string& line) {
    Record rec;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("malformed record token '" + tok + "'");
        rec.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
    return rec;
}

inline const std::string* rec_find(const Record& rec, const std::string& key) {
    for (const auto& [k, v] : rec)
        if (k == key) return &v;
    return nullptr;
}

inline std::string rec_get(const Record& rec, const std::string& key) {
    if (const std::string* v = rec_find(rec, key)) return *v;
    throw std::invalid_argument("record is missing key '" + key + "'");
}

inline long long rec_get_int(const Record& rec, const std::string& key) {
    return std::stoll(rec_get(rec, key));
}

inline double rec_get_double(const Record& rec, const std::string& key) {
    return parse_double(rec_get(rec, key));
}

// ---------------------------------------------------------------------------
// binary primitives (explicitly little-endian)
// ---------------------------------------------------------------------------

namespace bin {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("unexpected end of binary file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("unexpected end of binary file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("unexpected end of binary file");
    return s;
}

}  // namespace bin

// ---------------------------------------------------------------------------
// named-tensor containers
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

inline void write_tensor_blob(std::ostream& os, const std::string& name, const Tensor& t) {
    bin::put_string(os, name);
    bin::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) bin::put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
    for (double v : t.data()) bin::put_f64(os, v);
}

inline NamedTensor read_tensor_blob(std::istream& is) {
    NamedTensor nt;
    nt.name = bin::get_string(is);
    const std::uint32_t rank = bin::get_u32(is);
    if (rank > 8) throw std::runtime_error("tensor '" + nt.name + "' has implausible rank");
    Shape shape(rank);
    long long numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(bin::get_u32(is));
        numel *= shape[i];
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (double& v : data) v = bin::get_f64(is);
    nt.tensor = Tensor::from(shape, std::move(data));
    return nt;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");
    return is;
}

inline void write_tensor_container(const std::string& path, const char magic[4],
                                   const std::vector<NamedTensor>& tensors) {
    std::ofstream os = open_out(path);
    os.write(magic, 4);
    bin::put_u32(os, 1);  // container version
    bin::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& nt : tensors) write_tensor_blob(os, nt.name, nt.tensor);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<NamedTensor> read_tensor_container(const std::string& path,
                                                      const char magic[4]) {
    std::ifstream is = open_in(path);
    char got[4];
    is.read(got, 4);
    if (!is || std::memcmp(got, magic, 4) != 0)
        throw std::runtime_error("'" + path + "' is not a " + std::string(magic, 4) + " file");
    const std::uint32_t version = bin::get_u32(is);
    if (version != 1)
        throw std::runtime_error("'" + path + "' has unsupported version " +
                                 std::to_string(version));
    const std::uint32_t count = bin::get_u32(is);
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(read_tensor_blob(is));
    return tensors;
}

inline const Tensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name,
                                 const std::string& path) {
    for (const NamedTensor& nt : tensors)
        if (nt.name == name) return nt.tensor;
    throw std::runtime_error("'" + path + "' has no tensor named '" + name + "'");
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'D', 'T', 'C', 'P'};
inline constexpr char kSampleMagic[4] = {'D', 'T', 'G', 'S'};

// Raw checkpoint contents; model/optimizer reconstruction happens a layer up.
struct CheckpointData {
    std::uint32_t version = 1;
    long long step = 0;
    Rng::State rng;
    long long adam_step_count = 0;
    std::string config_line;  // config echoed as one line record
    std::vector<NamedTensor> tensors;
};

inline void save_checkpoint_file(const std::string& path, const CheckpointData& ckpt) {
    std::ofstream os = open_out(path);
    os.write(kCheckpointMagic, 4);
    bin::put_u32(os, ckpt.version);
    bin::put_u64(os, static_cast<std::uint64_t>(ckpt.step));
    bin::put_u64(os, ckpt.rng.s);
    bin::put_u32(os, ckpt.rng.has_spare ? 1 : 0);
    bin::put_f64(os, ckpt.rng.spare);
    bin::put_u64(os, static_cast<std::uint64_t>(ckpt.adam_step_count));
    bin::put_string(os, ckpt.config_line);
    bin::put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const NamedTensor& nt : ckpt.tensors) write_tensor_blob(os, nt.name, nt.tensor);
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream is = open_in(path);
    char got[4];
    is.read(got, 4);
    if (!is || std::memcmp(got, kCheckpointMagic, 4) != 0)
        throw std::runtime_error("'" + path + "' is not a checkpoint file");
    CheckpointData ckpt;
    ckpt.version = bin::get_u32(is);
    if (ckpt.version != 1)
        throw std::runtime_error("'" + path + "' has unsupported checkpoint version " +
                                 std::to_string(ckpt.version));
    ckpt.step = static_cast<long long>(bin::get_u64(is));
    ckpt.rng.s = bin::get_u64(is);
    ckpt.rng.has_spare = bin::get_u32(is) != 0;
    ckpt.rng.spare = bin::get_f64(is);
    ckpt.adam_step_count = static_cast<long long>(bin::get_u64(is));
    ckpt.config_line = bin::get_string(is);
    const std::uint32_t count = bin::get_u32(is);
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) ckpt.tensors.push_back(read_tensor_blob(is));
    return ckpt;
}

// ---------------------------------------------------------------------------
// metrics log
// ---------------------------------------------------------------------------

struct MetricsRecord {
    long long step = 0;
    double l_mask = 0, l_attn = 0, l_align = 0, l_id = 0, l_warmup = 0, total = 0;
    std::optional<double> miou;  // present only on eval steps
    long long wall_ms = 0;
};

inline std::string metrics_to_line(const MetricsRecord& m) {
    Record rec;
    rec.emplace_back("step", std::to_string(m.step));
    rec.emplace_back("l_mask", format_double(m.l_mask));
    rec.emplace_back("l_attn", format_double(m.l_attn));
    rec.emplace_back("l_align", format_double(m.l_align));
    rec.emplace_back("l_id", format_double(m.l_id));
    rec.emplace_back("l_warmup", format_double(m.l_warmup));
    rec.emplace_back("total", format_double(m.total));
    if (m.miou) rec.emplace_back("miou", format_double(*m.miou));
    rec.emplace_back("wall_ms", std::to_string(m.wall_ms));
    return encode_record(rec);
}

inline MetricsRecord metrics_from_line(const std::string& line) {
    const Record rec = parse_record(line);
    MetricsRecord m;
    m.step = rec_get_int(rec, "step");
    m.l_mask = rec_get_double(rec, "l_mask");
    m.l_attn = rec_get_double(rec, "l_attn");
    m.l_align = rec_get_double(rec, "l_align");
    m.l_id = rec_get_double(rec, "l_id");
    m.l_warmup = rec_get_double(rec, "l_warmup");
    m.total = rec_get_double(rec, "total");
    if (const std::string* v = rec_find(rec, "miou")) m.miou = parse_double(*v);
    m.wall_ms = rec_get_int(rec, "wall_ms");
    return m;
}

inline std::vector<MetricsRecord> load_metrics_log(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open metrics log '" + path + "'");
    std::vector<MetricsRecord> out;
    std::string line;
    long long prev_step = -1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        MetricsRecord m = metrics_from_line(line);
        if (m.step <= prev_step)
            throw std::runtime_error("metrics log steps are not strictly increasing at step " +
                                     std::to_string(m.step));
        prev_step = m.step;
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// portable pixmap (P6)
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, int width, int height,
                      const std::vector<unsigned char>& rgb) {
    if (static_cast<long long>(rgb.size()) != 3LL * width * height)
        throw std::invalid_argument("write_ppm: buffer size does not match " +
                                    std::to_string(width) + "x" + std::to_string(height));
    std::ofstream os = open_out(path);
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace dreamtext
