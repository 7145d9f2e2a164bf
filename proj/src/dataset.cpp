#include "fsplat/dataset.hpp"

#include "fsplat/binary.hpp"
#include "fsplat/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace fsplat {

FeatureMapD to_double(const FeatureMap &m) {
    FeatureMapD out(m.height, m.width, m.dim);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = static_cast<double>(static_cast<float>(m.data[i]));
    return out;
}

FeatureMap to_half(const FeatureMapD &m) {
    FeatureMap out(m.height, m.width, m.dim);
    for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = Half(static_cast<float>(m.data[i]));
    return out;
}

FeatureMapD resize_bilinear(const FeatureMapD &m, int height, int width) {
    require(m.height > 0 && m.width > 0, ErrorCode::Contract, "cannot resize an empty feature map");
    if (m.height == height && m.width == width) return m;
    FeatureMapD out(height, width, m.dim);
    const double sy = double(m.height) / height;
    const double sx = double(m.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(m.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, m.height - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(m.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, m.width - 1);
            const double tx = fx - x0;
            auto o = out.at(x, y);
            auto a = m.at(x0, y0), b = m.at(x1, y0), c = m.at(x0, y1), d = m.at(x1, y1);
            for (int k = 0; k < m.dim; ++k)
                o[k] = (1 - ty) * ((1 - tx) * a[k] + tx * b[k]) + ty * ((1 - tx) * c[k] + tx * d[k]);
        }
    }
    return out;
}

std::size_t BinaryMask::count() const { return std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }); }

std::vector<std::uint32_t> rle_encode(const BinaryMask &mask) {
    std::vector<std::uint32_t> runs;
    std::uint8_t current = 0;
    std::uint32_t len = 0;
    for (auto b : mask.bits) {
        const std::uint8_t v = b ? 1 : 0;
        if (v != current) {
            runs.push_back(len);
            len = 0;
            current = v;
        }
        ++len;
    }
    runs.push_back(len);
    return runs;
}

BinaryMask rle_decode(int height, int width, std::span<const std::uint32_t> runs) {
    require(height >= 0 && width >= 0, ErrorCode::Format, "negative mask size");
    BinaryMask mask(height, width);
    const std::size_t total = std::size_t(height) * width;
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (auto run : runs) {
        if (pos + run > total) fail(ErrorCode::Format, "RLE runs exceed mask size");
        std::fill_n(mask.bits.begin() + pos, run, value);
        pos += run;
        value ^= 1;
    }
    if (pos != total) fail(ErrorCode::Format, "RLE runs do not cover the mask exactly");
    return mask;
}

std::vector<std::uint8_t> encode_masks(const std::vector<BinaryMask> &masks) {
    binary::Writer w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(masks.size()));
    for (const auto &m : masks) {
        const auto runs = rle_encode(m);
        w.put<std::uint32_t>(m.height);
        w.put<std::uint32_t>(m.width);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(runs.size()));
        for (auto r : runs) w.put(r);
    }
    return std::move(w.bytes());
}

std::vector<BinaryMask> decode_masks(std::span<const std::uint8_t> bytes) {
    binary::Reader r(bytes);
    const auto n = r.get<std::uint32_t>();
    std::vector<BinaryMask> masks;
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto h = r.get<std::uint32_t>();
        const auto w = r.get<std::uint32_t>();
        const auto count = r.get<std::uint32_t>();
        if (std::size_t(count) * 4 > r.remaining()) fail(ErrorCode::Format, "truncated RLE mask");
        std::vector<std::uint32_t> runs(count);
        for (auto &run : runs) run = r.get<std::uint32_t>();
        masks.push_back(rle_decode(static_cast<int>(h), static_cast<int>(w), runs));
    }
    return masks;
}

std::vector<std::uint8_t> encode_feature_map(const FeatureMap &m) {
    binary::Writer w;
    w.put<std::uint32_t>(m.height);
    w.put<std::uint32_t>(m.width);
    w.put<std::uint32_t>(m.dim);
    for (Half h : m.data) w.put(half_bits(h));
    return std::move(w.bytes());
}

FeatureMap decode_feature_map(std::span<const std::uint8_t> bytes) {
    binary::Reader r(bytes);
    const auto h = r.get<std::uint32_t>();
    const auto w = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    const std::size_t n = std::size_t(h) * w * d;
    if (n * 2 != r.remaining()) fail(ErrorCode::Format, "feature map payload size mismatch");
    FeatureMap m(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
    for (auto &v : m.data) v = half_from_bits(r.get<std::uint16_t>());
    return m;
}

std::vector<int> FeatureDataset::training_views() const {
    std::vector<int> out;
    for (int i = 0; i < int(views.size()); ++i)
        if (std::find(holdout.begin(), holdout.end(), i) == holdout.end()) out.push_back(i);
    return out;
}

void FeatureDataset::validate() const {
    for (const auto &[word, v] : vocab)
        require(std::abs(v.norm() - 1.0) <= 1e-3, ErrorCode::Validation, "vocabulary vector '" + word + "' is not unit norm");
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto &view = views[i];
        view.camera.validate();
        for (const auto &m : view.masks)
            if (m.width != view.rgb.width || m.height != view.rgb.height)
                fail(ErrorCode::Validation, "view " + std::to_string(i) + ": mask size " + std::to_string(m.width) + "x" +
                                                std::to_string(m.height) + " does not match image " +
                                                std::to_string(view.rgb.width) + "x" + std::to_string(view.rgb.height));
        if (view.rgb.width != view.camera.width || view.rgb.height != view.camera.height)
            fail(ErrorCode::Validation, "view " + std::to_string(i) + ": image size does not match camera");
    }
    for (int h : holdout)
        require(h >= 0 && h < int(views.size()), ErrorCode::Validation, "holdout index out of range");
}

namespace {

std::string numbered(int i, const char *ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%03d%s", i, ext);
    return buf;
}

nlohmann::json read_json(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorCode::Format, path.string() + ": " + e.what());
    }
}

} // namespace

Vocabulary load_vocab(const std::filesystem::path &path) {
    const auto j = read_json(path);
    Vocabulary vocab;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto values = it.value().get<std::vector<double>>();
        vocab[it.key()] = Eigen::Map<const Eigen::VectorXd>(values.data(), Eigen::Index(values.size()));
    }
    return vocab;
}

void save_vocab(const Vocabulary &vocab, const std::filesystem::path &path) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto &[word, v] : vocab) j[word] = std::vector<double>(v.data(), v.data() + v.size());
    std::ofstream out(path);
    if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
    out << j.dump() << "\n";
}

FeatureDataset load_dataset(const std::filesystem::path &dir) {
    FeatureDataset ds;
    const auto cams_json = read_json(dir / "cameras.json");
    std::vector<Camera> cams;
    for (const auto &v : cams_json.at("views")) cams.push_back(camera_from_json(v));
    if (cams_json.contains("holdout")) ds.holdout = cams_json.at("holdout").get<std::vector<int>>();
    for (int i = 0; i < int(cams.size()); ++i) {
        DatasetView view;
        view.camera = cams[i];
        view.rgb = read_png(dir / "rgb" / numbered(i, ".png"));
        if (view.rgb.channels == 4) {
            Image8 rgb(view.rgb.width, view.rgb.height, 3);
            for (int y = 0; y < rgb.height; ++y)
                for (int x = 0; x < rgb.width; ++x)
                    for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = view.rgb.at(x, y, c);
            view.rgb = std::move(rgb);
        }
        view.clip = decode_feature_map(binary::read_file(dir / "clip" / numbered(i, ".bin")));
        view.dino = decode_feature_map(binary::read_file(dir / "dino" / numbered(i, ".bin")));
        const auto mask_path = dir / "masks" / numbered(i, ".rle");
        if (std::filesystem::exists(mask_path)) view.masks = decode_masks(binary::read_file(mask_path));
        ds.views.push_back(std::move(view));
    }
    ds.vocab = load_vocab(dir / "vocab.json");
    ds.validate();
    return ds;
}

void save_dataset(const FeatureDataset &ds, const std::filesystem::path &dir) {
    for (const char *sub : {"rgb", "clip", "dino", "masks"}) std::filesystem::create_directories(dir / sub);
    nlohmann::json cams;
    cams["views"] = nlohmann::json::array();
    for (const auto &v : ds.views) cams["views"].push_back(camera_to_json(v.camera));
    cams["holdout"] = ds.holdout;
    {
        std::ofstream out(dir / "cameras.json");
        if (!out) fail(ErrorCode::Io, "cannot write cameras.json");
        out << cams.dump(2) << "\n";
    }
    for (int i = 0; i < int(ds.views.size()); ++i) {
        const auto &v = ds.views[i];
        write_png(v.rgb, dir / "rgb" / numbered(i, ".png"));
        binary::write_file(dir / "clip" / numbered(i, ".bin"), encode_feature_map(v.clip));
        binary::write_file(dir / "dino" / numbered(i, ".bin"), encode_feature_map(v.dino));
        binary::write_file(dir / "masks" / numbered(i, ".rle"), encode_masks(v.masks));
    }
    save_vocab(ds.vocab, dir / "vocab.json");
}

} // namespace fsplat
