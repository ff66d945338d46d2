#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmsarc/tensor.hpp"
#include "mmsarc/vocab.hpp"

namespace mmsarc {

constexpr int kImgC = 3;
constexpr int kImgH = 32;
constexpr int kImgW = 32;
constexpr long kImgSize = static_cast<long>(kImgC) * kImgH * kImgW;

struct MultimodalSample {
    std::string id;
    std::vector<std::string> text_tokens;       // without [CLS]/[SEP]
    std::vector<std::string> attribute_tokens;  // without [CLS]/[SEP]
    std::vector<double> image;                  // kImgC x kImgH x kImgW, values in [0,1]
    int label = 0;                              // 1 = sarcastic (incongruent)

    // generator ground truth, serialized for analysis commands and tests
    int text_class = -1;
    int image_class = -1;
};

struct GeneratorConfig {
    long n_samples = 2500;
    double attr_noise = 0.25;   // probability an attribute token misreports the image class
    double pixel_noise = 0.15;  // gaussian sigma on pixels
    int text_noise_tokens = 6;
    int n_attributes = 5;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_samples < 1) throw ConfigError("generator: n_samples must be >= 1");
        if (attr_noise < 0.0 || attr_noise > 1.0)
            throw ConfigError("generator: attr_noise must lie in [0, 1]");
        if (pixel_noise < 0.0) throw ConfigError("generator: pixel_noise must be >= 0");
        if (text_noise_tokens < 0) throw ConfigError("generator: text_noise_tokens must be >= 0");
        if (n_attributes < 1) throw ConfigError("generator: n_attributes must be >= 1");
    }
};

namespace words {

// the two latent text classes speak in disjoint sentiment vocabularies
inline const std::array<const char*, 5> kSentiment0{"delightful", "wonderful", "charming",
                                                    "superb", "lovely"};
inline const std::array<const char*, 5> kSentiment1{"miserable", "dreadful", "awful", "gloomy",
                                                    "rotten"};
// attribute tokens naming the two image pattern classes
inline const std::array<const char*, 5> kAttr0{"stripes", "bands", "lines", "streaks", "bars"};
inline const std::array<const char*, 5> kAttr1{"disc", "circle", "blob", "dot", "sphere"};
// label-neutral filler
inline const std::array<const char*, 32> kNoise{
    "the",  "a",     "of",    "to",   "and",  "in",   "it",    "is",    "was",  "for",  "on",
    "that", "with",  "as",    "at",   "this", "but",  "from",  "by",    "or",   "an",   "so",
    "if",   "about", "which", "when", "what", "just", "quite", "very",  "some", "then"};

}  // namespace words

/// Vocabulary covering everything the generator can emit.
inline Vocabulary build_vocabulary() {
    Vocabulary v;
    for (auto* w : words::kSentiment0) v.add(w);
    for (auto* w : words::kSentiment1) v.add(w);
    for (auto* w : words::kAttr0) v.add(w);
    for (auto* w : words::kAttr1) v.add(w);
    for (auto* w : words::kNoise) v.add(w);
    return v;
}

namespace detail {

inline double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

/// Pattern amplitude around mid-gray. Deliberately large against the default
/// sigma = 0.15: learning the template from scratch has to co-adapt the conv
/// filters with the conditioning that routes them, and that only gets off the
/// ground within the pinned 15-epoch budget when the per-pixel contrast is
/// strong — the bootstrap signal scales with amplitude times the fraction of
/// patterned images, and amplitudes under ~0.3 stall it.
inline constexpr double kPatternAmp = 0.45;

/// Fraction of images that actually show their class pattern; the rest stay
/// flat mid-gray, so their pixels carry no class information. Difficulty of
/// the pixel channel is controlled here rather than by shrinking the
/// amplitude (which stalls learning instead of capping it): the raster route
/// tops out at kPatternProb + (1-kPatternProb)/2 = 0.875, the blank quarter
/// is decidable only through the attributes (majority-vote ceiling ~0.896 at
/// attr_noise = 0.25), and fusing both channels beats either alone.
inline constexpr double kPatternProb = 0.75;

inline bool inside_disc(int y, int x) {
    const double dy = y - (kImgH - 1) / 2.0, dx = x - (kImgW - 1) / 2.0;
    return dy * dy + dx * dx <= 10.0 * 10.0;
}

/// Zero-mean unit template for each class (the disc's background level is
/// scaled by the area ratio), so mean luminance carries no class information.
inline double pattern_value(int image_class, int y, int x) {
    if (image_class == 0) return ((y / 4) % 2 == 0) ? 1.0 : -1.0;
    static const double bg = [] {
        int inside = 0;
        for (int y2 = 0; y2 < kImgH; ++y2)
            for (int x2 = 0; x2 < kImgW; ++x2)
                if (inside_disc(y2, x2)) ++inside;
        return static_cast<double>(inside) / static_cast<double>(kImgH * kImgW - inside);
    }();
    return inside_disc(y, x) ? 1.0 : -bg;
}

inline void render_image(int image_class, double sigma, Rng& rng, std::vector<double>& px) {
    px.assign(static_cast<std::size_t>(kImgSize), 0.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double amp = u01(rng) < kPatternProb ? kPatternAmp : 0.0;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int y = 0; y < kImgH; ++y)
        for (int x = 0; x < kImgW; ++x) {
            const double base = 0.5 + amp * pattern_value(image_class, y, x);
            for (int c = 0; c < kImgC; ++c) {
                double v = base + sigma * noise(rng);
                v = std::min(1.0, std::max(0.0, v));
                // store exactly what the 32-bit on-disk format can hold
                px[static_cast<std::size_t>(c) * kImgH * kImgW + static_cast<std::size_t>(y) * kImgW + x] =
                    quantize_f32(v);
            }
        }
}

}  // namespace detail

/// Planted-incongruity corpus: label = XOR of a latent text class and a latent
/// image class, so neither modality alone predicts it. Deterministic per seed;
/// each sample derives its own stream, so generation order is irrelevant.
inline std::vector<MultimodalSample> generate_synthetic(const GeneratorConfig& cfg) {
    cfg.validate();
    std::vector<MultimodalSample> out(static_cast<std::size_t>(cfg.n_samples));
    for (long i = 0; i < cfg.n_samples; ++i) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::uniform_int_distribution<int> bit(0, 1);
        std::uniform_int_distribution<std::size_t> pick5(0, 4);
        std::uniform_int_distribution<std::size_t> pick_noise(0, words::kNoise.size() - 1);
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        MultimodalSample& s = out[static_cast<std::size_t>(i)];
        char idbuf[24];
        std::snprintf(idbuf, sizeof(idbuf), "s%06ld", i);
        s.id = idbuf;
        s.text_class = bit(rng);
        s.image_class = bit(rng);
        s.label = s.text_class ^ s.image_class;

        s.text_tokens.reserve(static_cast<std::size_t>(cfg.text_noise_tokens) + 1);
        s.text_tokens.push_back(s.text_class == 0 ? words::kSentiment0[pick5(rng)]
                                                  : words::kSentiment1[pick5(rng)]);
        for (int t = 0; t < cfg.text_noise_tokens; ++t)
            s.text_tokens.push_back(words::kNoise[pick_noise(rng)]);
        std::shuffle(s.text_tokens.begin(), s.text_tokens.end(), rng);

        s.attribute_tokens.reserve(static_cast<std::size_t>(cfg.n_attributes));
        for (int a = 0; a < cfg.n_attributes; ++a) {
            const bool flip = u01(rng) < cfg.attr_noise;
            const int named = flip ? 1 - s.image_class : s.image_class;
            s.attribute_tokens.push_back(named == 0 ? words::kAttr0[pick5(rng)]
                                                    : words::kAttr1[pick5(rng)]);
        }

        detail::render_image(s.image_class, cfg.pixel_noise, rng, s.image);
    }
    return out;
}

/// Seeded shuffle then contiguous [train | val | test] slices; val and test
/// take the floor of their share, train gets the remainder.
inline void split_dataset(const std::vector<MultimodalSample>& samples, std::uint64_t seed,
                          std::vector<MultimodalSample>& train, std::vector<MultimodalSample>& val,
                          std::vector<MultimodalSample>& test, double val_ratio = 0.1,
                          double test_ratio = 0.1) {
    if (val_ratio < 0 || test_ratio < 0 || val_ratio + test_ratio >= 1.0)
        throw ConfigError("split: ratios must be nonnegative and leave room for train");
    std::vector<std::size_t> idx(samples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(mix_seed(seed, 0x5917ULL));  // fixed stream tag for the split
    std::shuffle(idx.begin(), idx.end(), rng);

    const long n = static_cast<long>(samples.size());
    const long n_val = static_cast<long>(std::floor(static_cast<double>(n) * val_ratio));
    const long n_test = static_cast<long>(std::floor(static_cast<double>(n) * test_ratio));
    const long n_train = n - n_val - n_test;
    train.clear();
    val.clear();
    test.clear();
    for (long i = 0; i < n; ++i) {
        const MultimodalSample& s = samples[idx[static_cast<std::size_t>(i)]];
        if (i < n_train) train.push_back(s);
        else if (i < n_train + n_val) val.push_back(s);
        else test.push_back(s);
    }
}

// ------------------------------------------------------------------ base64

namespace detail {

inline const char* b64_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string b64_encode(const std::uint8_t* data, std::size_t len) {
    const char* tab = b64_alphabet();
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
        if (i + 1 < len) v |= static_cast<std::uint32_t>(data[i + 1]) << 8;
        if (i + 2 < len) v |= data[i + 2];
        out.push_back(tab[(v >> 18) & 63]);
        out.push_back(tab[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? tab[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? tab[v & 63] : '=');
    }
    return out;
}

inline std::vector<std::uint8_t> b64_decode(const std::string& s) {
    std::array<int, 256> rev;
    rev.fill(-1);
    const char* tab = b64_alphabet();
    for (int i = 0; i < 64; ++i) rev[static_cast<std::size_t>(static_cast<unsigned char>(tab[i]))] = i;
    if (s.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 4 * 3);
    for (std::size_t i = 0; i < s.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = s[i + static_cast<std::size_t>(k)];
            v <<= 6;
            if (c == '=') {
                ++pad;
            } else {
                const int d = rev[static_cast<std::size_t>(static_cast<unsigned char>(c))];
                if (d < 0 || pad > 0) throw DataError("base64: invalid character");
                v |= static_cast<std::uint32_t>(d);
            }
        }
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

inline std::string encode_image_f32le(const std::vector<double>& px) {
    std::vector<std::uint8_t> bytes(px.size() * 4);
    for (std::size_t i = 0; i < px.size(); ++i) {
        const float f = static_cast<float>(px[i]);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        bytes[i * 4 + 0] = static_cast<std::uint8_t>(u & 0xff);
        bytes[i * 4 + 1] = static_cast<std::uint8_t>((u >> 8) & 0xff);
        bytes[i * 4 + 2] = static_cast<std::uint8_t>((u >> 16) & 0xff);
        bytes[i * 4 + 3] = static_cast<std::uint8_t>((u >> 24) & 0xff);
    }
    return b64_encode(bytes.data(), bytes.size());
}

inline std::vector<double> decode_image_f32le(const std::string& b64, long expect) {
    const auto bytes = b64_decode(b64);
    if (bytes.size() != static_cast<std::size_t>(expect) * 4)
        throw DataError("image payload holds " + std::to_string(bytes.size() / 4) +
                        " floats, expected " + std::to_string(expect));
    std::vector<double> px(static_cast<std::size_t>(expect));
    for (std::size_t i = 0; i < px.size(); ++i) {
        std::uint32_t u = static_cast<std::uint32_t>(bytes[i * 4 + 0]) |
                          (static_cast<std::uint32_t>(bytes[i * 4 + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[i * 4 + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[i * 4 + 3]) << 24);
        float f;
        std::memcpy(&f, &u, 4);
        px[i] = static_cast<double>(f);
    }
    return px;
}

inline std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += v[i];
    }
    return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace detail

// ------------------------------------------------------------------- JSONL

inline void write_jsonl(const std::string& path, const std::vector<MultimodalSample>& samples) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& s : samples) {
        nlohmann::json j;
        j["id"] = s.id;
        j["text"] = detail::join(s.text_tokens);
        j["attributes"] = s.attribute_tokens;
        j["image"] = {{"shape", {kImgC, kImgH, kImgW}}, {"data", detail::encode_image_f32le(s.image)}};
        j["label"] = s.label;
        if (s.text_class >= 0) j["text_class"] = s.text_class;
        if (s.image_class >= 0) j["image_class"] = s.image_class;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path);
}

inline std::vector<MultimodalSample> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    std::vector<MultimodalSample> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        MultimodalSample s;
        try {
            for (const char* key : {"id", "text", "attributes", "image", "label"})
                if (!j.contains(key))
                    throw DataError(std::string("missing key '") + key + "'");
            s.id = j.at("id").get<std::string>();
            s.text_tokens = detail::split_ws(j.at("text").get<std::string>());
            s.attribute_tokens = j.at("attributes").get<std::vector<std::string>>();
            const auto& img = j.at("image");
            const auto shape = img.at("shape").get<std::vector<int>>();
            if (shape != std::vector<int>{kImgC, kImgH, kImgW})
                throw DataError("unsupported image shape");
            s.image = detail::decode_image_f32le(img.at("data").get<std::string>(), kImgSize);
            for (double v : s.image)
                if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel outside [0,1]");
            s.label = j.at("label").get<int>();
            if (s.label != 0 && s.label != 1) throw DataError("label must be 0 or 1");
            if (s.text_tokens.empty()) throw DataError("empty text");
            if (s.attribute_tokens.empty()) throw DataError("empty attribute list");
            s.text_class = j.value("text_class", -1);
            s.image_class = j.value("image_class", -1);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mmsarc
