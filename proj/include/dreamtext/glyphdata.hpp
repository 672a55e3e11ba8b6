#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dreamtext/io.hpp"
#include "dreamtext/rng.hpp"
#include "dreamtext/tensor.hpp"

// Synthetic multi-font glyph corpus. Characters come from a 5x7 bitmap atlas
// embedded below; bold and italic variants are derived programmatically, so
// the per-character ink pixels double as exact segmentation masks.

namespace dreamtext {

namespace font {

inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
inline constexpr int kNumVariants = 3;  // plain, bold (dilated), italic (sheared)
inline constexpr int kCharSpacing = 1;

// Row bitmaps for 'A'..'P', bit 4 = leftmost column.
inline constexpr std::array<std::array<std::uint8_t, 7>, 16> kAtlas = {{
    {0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001},  // A
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110},  // B
    {0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110},  // C
    {0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110},  // D
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111},  // E
    {0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000},  // F
    {0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01110},  // G
    {0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001},  // H
    {0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110},  // I
    {0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100},  // J
    {0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001},  // K
    {0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111},  // L
    {0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001},  // M
    {0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001},  // N
    {0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110},  // O
    {0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000},  // P
}};

inline int italic_shift(int row) { return (kGlyphHeight - 1 - row) / 3; }

inline int cell_width(int variant) {
    switch (variant) {
        case 0: return kGlyphWidth;
        case 1: return kGlyphWidth + 1;                          // bold dilates right
        case 2: return kGlyphWidth + italic_shift(0);            // italic shears right
        default: throw std::out_of_range("unknown font variant " + std::to_string(variant));
    }
}

inline bool atlas_bit(int glyph, int row, int col) {
    if (col < 0 || col >= kGlyphWidth) return false;
    return (kAtlas[static_cast<std::size_t>(glyph)][static_cast<std::size_t>(row)] >>
            (kGlyphWidth - 1 - col)) &
           1u;
}

// Ink test inside a variant's cell.
inline bool cell_pixel(int glyph, int variant, int row, int col) {
    switch (variant) {
        case 0: return atlas_bit(glyph, row, col);
        case 1: return atlas_bit(glyph, row, col) || atlas_bit(glyph, row, col - 1);
        case 2: return atlas_bit(glyph, row, col - italic_shift(row));
        default: return false;
    }
}

}  // namespace font

inline constexpr const char* kDefaultAlphabet = "ABCDEFGHIJKLMNOP";

// One training example: image z0 in [-1, 1], binary text-region mask B,
// character indices, exact per-character segmentation masks S, class labels.
struct GlyphSample {
    Tensor image;        // [C x H x W]
    Tensor region_mask;  // [1 x H x W], binary
    Tensor char_masks;   // [n_max x H x W], binary, padding slices all-zero
    std::vector<int> text;
    std::vector<int> labels;
    int font_id = 0;

    int n_chars() const { return static_cast<int>(text.size()); }
    std::vector<int> active_positions() const {
        std::vector<int> idx(text.size());
        for (std::size_t i = 0; i < text.size(); ++i) idx[i] = static_cast<int>(i);
        return idx;
    }
};

struct CorpusConfig {
    int count = 200;
    int channels = 1;
    int height = 32;
    int width = 32;
    int n_max = 8;
    std::string alphabet = kDefaultAlphabet;
    int fonts = font::kNumVariants;
    int min_len = 2;
    int max_len = 4;
    std::uint64_t seed = 1;

    int alphabet_size() const { return static_cast<int>(alphabet.size()); }
};

struct CorpusManifest {
    CorpusConfig config;
    struct Entry {
        std::string file;
        std::string text;
        int font_id = 0;
    };
    std::vector<Entry> entries;
};

inline GlyphSample render_sample(const std::vector<int>& text, int font_id, Rng& rng,
                                 const CorpusConfig& cfg) {
    const int n = static_cast<int>(text.size());
    if (n < 1 || n > cfg.n_max)
        throw std::invalid_argument("render_sample: text length " + std::to_string(n) +
                                    " outside [1, " + std::to_string(cfg.n_max) + "]");
    if (font_id < 0 || font_id >= cfg.fonts)
        throw std::out_of_range("render_sample: unknown font_id " + std::to_string(font_id));
    for (int c : text)
        if (c < 0 || c >= cfg.alphabet_size())
            throw std::out_of_range("render_sample: character index " + std::to_string(c) +
                                    " outside alphabet of size " +
                                    std::to_string(cfg.alphabet_size()));

    const int cell_w = font::cell_width(font_id);
    const int word_w = n * cell_w + (n - 1) * font::kCharSpacing;
    const int word_h = font::kGlyphHeight;
    if (word_w > cfg.width || word_h > cfg.height)
        throw std::invalid_argument("render_sample: text too long, word box " +
                                    std::to_string(word_w) + "x" + std::to_string(word_h) +
                                    " exceeds image " + std::to_string(cfg.width) + "x" +
                                    std::to_string(cfg.height));

    // Draw order is part of the determinism contract: placement, ink level,
    // then the background components.
    const int ox = rng.uniform_int(0, cfg.width - word_w);
    const int oy = rng.uniform_int(0, cfg.height - word_h);
    const double ink = 0.55 + 0.4 * rng.uniform();

    struct Wave {
        double fx, fy, amp, phase;
    };
    std::array<Wave, 3> waves;
    for (Wave& w : waves) {
        w.fx = rng.uniform_int(0, 2);
        w.fy = rng.uniform_int(0, 2);
        if (w.fx == 0.0 && w.fy == 0.0) w.fy = 1.0;
        w.amp = 0.1 + 0.3 * rng.uniform();
        w.phase = 2.0 * 3.14159265358979323846 * rng.uniform();
    }

    GlyphSample s;
    s.text = text;
    s.labels = text;  // class index == alphabet index
    s.font_id = font_id;
    s.image = Tensor::zeros({cfg.channels, cfg.height, cfg.width});
    s.region_mask = Tensor::zeros({1, cfg.height, cfg.width});
    s.char_masks = Tensor::zeros({cfg.n_max, cfg.height, cfg.width});

    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            double raw = 0.0;
            for (const Wave& w : waves)
                raw += w.amp * std::cos(2.0 * 3.14159265358979323846 *
                                            (w.fx * x / cfg.width + w.fy * y / cfg.height) +
                                        w.phase);
            const double bg = -0.45 + 0.3 * std::tanh(raw);
            for (int ch = 0; ch < cfg.channels; ++ch) s.image(ch, y, x) = bg;
        }

    for (int i = 0; i < n; ++i) {
        const int cx = ox + i * (cell_w + font::kCharSpacing);
        for (int r = 0; r < word_h; ++r)
            for (int c = 0; c < cell_w; ++c)
                if (font::cell_pixel(text[static_cast<std::size_t>(i)], font_id, r, c)) {
                    const int y = oy + r, x = cx + c;
                    for (int ch = 0; ch < cfg.channels; ++ch) s.image(ch, y, x) = ink;
                    s.char_masks(i, y, x) = 1.0;
                }
    }

    for (int y = oy; y < oy + word_h; ++y)
        for (int x = ox; x < ox + word_w; ++x) s.region_mask(0, y, x) = 1.0;

    return s;
}

// Luminance average: equal 1/3 channel weights for C=3, identity for C=1.
inline Tensor grayscale(const Tensor& image) {
    if (image.rank() != 3)
        throw std::invalid_argument("grayscale: expected [C x H x W], got " +
                                    detail::shape_str(image.shape()));
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (c != 1 && c != 3)
        throw std::invalid_argument("grayscale: unsupported channel count " + std::to_string(c));
    Tensor out = Tensor::zeros({1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (c == 1) {
                out(0, y, x) = image(0, y, x);
            } else {
                out(0, y, x) = (image(0, y, x) + image(1, y, x) + image(2, y, x)) / 3.0;
            }
        }
    return out;
}

// Tight bounding-box crop of the text region, grayscaled and nearest-neighbor
// resized to the image-encoder input size.
inline Tensor crop_text_region(const GlyphSample& sample, int out_h, int out_w) {
    const Tensor& rm = sample.region_mask;
    const int h = rm.dim(1), w = rm.dim(2);
    int y0 = h, y1 = -1, x0 = w, x1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (rm(0, y, x) > 0.5) {
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
    if (y1 < 0) throw std::invalid_argument("crop_text_region: region mask is empty");

    const Tensor gray = grayscale(sample.image);
    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    Tensor out = Tensor::zeros({1, out_h, out_w});
    for (int y = 0; y < out_h; ++y) {
        const int sy = y0 + static_cast<int>((static_cast<long long>(y) * bh) / out_h);
        for (int x = 0; x < out_w; ++x) {
            const int sx = x0 + static_cast<int>((static_cast<long long>(x) * bw) / out_w);
            out(0, y, x) = gray(0, sy, sx);
        }
    }
    return out;
}

// Throws on the first violated GlyphSample invariant.
inline void check_sample_invariants(const GlyphSample& s, const CorpusConfig& cfg) {
    const int h = cfg.height, w = cfg.width;
    if (s.image.shape() != Shape{cfg.channels, h, w})
        throw std::logic_error("sample image shape mismatch");
    if (s.char_masks.shape() != Shape{cfg.n_max, h, w})
        throw std::logic_error("sample char_masks shape mismatch");
    for (double v : s.image.data())
        if (!(v >= -1.0 && v <= 1.0)) throw std::logic_error("image value outside [-1, 1]");
    for (int i = 0; i < cfg.n_max; ++i) {
        long long count = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = s.char_masks(i, y, x);
                if (v != 0.0 && v != 1.0) throw std::logic_error("char mask not binary");
                if (v == 1.0) {
                    ++count;
                    if (s.region_mask(0, y, x) != 1.0)
                        throw std::logic_error("char mask escapes region mask");
                    for (int j = 0; j < i; ++j)
                        if (s.char_masks(j, y, x) == 1.0)
                            throw std::logic_error("char masks overlap");
                }
            }
        if (i < s.n_chars() && count == 0) throw std::logic_error("active char mask is empty");
        if (i >= s.n_chars() && count != 0) throw std::logic_error("padding char mask not empty");
    }
}

// ---------------------------------------------------------------------------
// corpus persistence (tensor containers + one line-record manifest)
// ---------------------------------------------------------------------------

namespace detail_corpus {

inline std::string sample_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d.dt", index);
    return buf;
}

inline std::string text_to_string(const std::vector<int>& text, const std::string& alphabet) {
    std::string s;
    for (int c : text) s += alphabet.at(static_cast<std::size_t>(c));
    return s;
}

inline std::vector<int> text_from_string(const std::string& s, const std::string& alphabet) {
    std::vector<int> out;
    for (char ch : s) {
        const std::size_t pos = alphabet.find(ch);
        if (pos == std::string::npos)
            throw std::runtime_error("manifest text character '" + std::string(1, ch) +
                                     "' not in alphabet");
        out.push_back(static_cast<int>(pos));
    }
    return out;
}

inline Tensor int_vec_tensor(const std::vector<int>& v) {
    std::vector<double> d(v.begin(), v.end());
    return Tensor::from({std::max<int>(1, static_cast<int>(d.size()))},
                        d.empty() ? std::vector<double>{0} : d);
}

}  // namespace detail_corpus

inline void save_sample_file(const std::string& path, const GlyphSample& s) {
    std::vector<NamedTensor> tensors;
    tensors.push_back({"image", s.image});
    tensors.push_back({"region_mask", s.region_mask});
    tensors.push_back({"char_masks", s.char_masks});
    tensors.push_back({"text", detail_corpus::int_vec_tensor(s.text)});
    tensors.push_back({"labels", detail_corpus::int_vec_tensor(s.labels)});
    tensors.push_back({"font_id", Tensor::scalar(s.font_id)});
    write_tensor_container(path, kSampleMagic, tensors);
}

inline GlyphSample load_sample_file(const std::string& path, int n_chars) {
    const std::vector<NamedTensor> tensors = read_tensor_container(path, kSampleMagic);
    GlyphSample s;
    s.image = find_tensor(tensors, "image", path);
    s.region_mask = find_tensor(tensors, "region_mask", path);
    s.char_masks = find_tensor(tensors, "char_masks", path);
    const Tensor& text = find_tensor(tensors, "text", path);
    const Tensor& labels = find_tensor(tensors, "labels", path);
    for (int i = 0; i < n_chars; ++i) {
        s.text.push_back(static_cast<int>(text(i)));
        s.labels.push_back(static_cast<int>(labels(i)));
    }
    s.font_id = static_cast<int>(find_tensor(tensors, "font_id", path).value());
    return s;
}

inline CorpusManifest make_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw std::runtime_error("cannot create corpus directory '" + out_dir + "'");

    CorpusManifest manifest;
    manifest.config = cfg;
    std::ofstream mf((fs::path(out_dir) / "manifest.txt").string(), std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write manifest in '" + out_dir + "'");

    Record header;
    header.emplace_back("kind", "corpus");
    header.emplace_back("version", "1");
    header.emplace_back("count", std::to_string(cfg.count));
    header.emplace_back("channels", std::to_string(cfg.channels));
    header.emplace_back("height", std::to_string(cfg.height));
    header.emplace_back("width", std::to_string(cfg.width));
    header.emplace_back("n_max", std::to_string(cfg.n_max));
    header.emplace_back("alphabet", cfg.alphabet);
    header.emplace_back("fonts", std::to_string(cfg.fonts));
    header.emplace_back("min_len", std::to_string(cfg.min_len));
    header.emplace_back("max_len", std::to_string(cfg.max_len));
    header.emplace_back("seed", std::to_string(cfg.seed));
    mf << encode_record(header) << "\n";

    for (int i = 0; i < cfg.count; ++i) {
        Rng rng(cfg.seed, static_cast<std::uint64_t>(i));  // per-sample stream
        const int len = rng.uniform_int(cfg.min_len, cfg.max_len);
        std::vector<int> text(static_cast<std::size_t>(len));
        for (int& c : text) c = rng.uniform_int(0, cfg.alphabet_size() - 1);
        const int font_id = rng.uniform_int(0, cfg.fonts - 1);
        GlyphSample sample = render_sample(text, font_id, rng, cfg);

        const std::string fname = detail_corpus::sample_filename(i);
        const std::string fpath = (fs::path(out_dir) / fname).string();
        save_sample_file(fpath, sample);

        Record entry;
        entry.emplace_back("sample", fname);
        entry.emplace_back("text", detail_corpus::text_to_string(text, cfg.alphabet));
        entry.emplace_back("font", std::to_string(font_id));
        mf << encode_record(entry) << "\n";
        manifest.entries.push_back({fname, rec_get(entry, "text"), font_id});
    }
    if (!mf) throw std::runtime_error("manifest write failed in '" + out_dir + "'");
    return manifest;
}

struct Corpus {
    CorpusConfig config;
    std::vector<GlyphSample> samples;
};

inline Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string mpath = (fs::path(dir) / "manifest.txt").string();
    std::ifstream mf(mpath);
    if (!mf) throw std::runtime_error("cannot open corpus manifest '" + mpath + "'");

    std::string line;
    if (!std::getline(mf, line)) throw std::runtime_error("empty corpus manifest '" + mpath + "'");
    const Record header = parse_record(line);
    if (rec_get(header, "kind") != "corpus")
        throw std::runtime_error("'" + mpath + "' is not a corpus manifest");

    Corpus corpus;
    corpus.config.count = static_cast<int>(rec_get_int(header, "count"));
    corpus.config.channels = static_cast<int>(rec_get_int(header, "channels"));
    corpus.config.height = static_cast<int>(rec_get_int(header, "height"));
    corpus.config.width = static_cast<int>(rec_get_int(header, "width"));
    corpus.config.n_max = static_cast<int>(rec_get_int(header, "n_max"));
    corpus.config.alphabet = rec_get(header, "alphabet");
    corpus.config.fonts = static_cast<int>(rec_get_int(header, "fonts"));
    corpus.config.min_len = static_cast<int>(rec_get_int(header, "min_len"));
    corpus.config.max_len = static_cast<int>(rec_get_int(header, "max_len"));
    corpus.config.seed = static_cast<std::uint64_t>(rec_get_int(header, "seed"));

    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        const Record entry = parse_record(line);
        const std::string fname = rec_get(entry, "sample");
        const std::string text = rec_get(entry, "text");
        GlyphSample s = load_sample_file((fs::path(dir) / fname).string(),
                                         static_cast<int>(text.size()));
        const std::vector<int> expect =
            detail_corpus::text_from_string(text, corpus.config.alphabet);
        if (s.text != expect)
            throw std::runtime_error("sample '" + fname + "' disagrees with manifest text");
        corpus.samples.push_back(std::move(s));
    }
    if (static_cast<int>(corpus.samples.size()) != corpus.config.count)
        throw std::runtime_error("corpus '" + dir + "' has " +
                                 std::to_string(corpus.samples.size()) + " samples, manifest says " +
                                 std::to_string(corpus.config.count));
    return corpus;
}

}  // namespace dreamtext
