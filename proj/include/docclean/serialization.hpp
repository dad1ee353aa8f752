#pragma once

// Binary model container. Layout (all integers and floats little-endian):
//   "DCMODEL\0" | u32 version | u32 array count
//   per array: u32 name length | name | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
//   u64 FNV-1a hash of every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "docclean/background.hpp"
#include "docclean/common.hpp"
#include "docclean/features.hpp"
#include "docclean/model.hpp"

namespace docclean {

static_assert(std::endian::native == std::endian::little, "the model container assumes a little-endian host");

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr char kModelMagic[8] = {'D', 'C', 'M', 'O', 'D', 'E', 'L', '\0'};

/// Everything `clean` and `match` need from a training run.
struct ModelBundle {
    ModelParams params;
    BackgroundDensity background;
    FeaturePipeline pipeline;

    friend bool operator==(const ModelBundle& a, const ModelBundle& b) {
        return a.params == b.params && a.background == b.background && pipeline_array(a.pipeline) == pipeline_array(b.pipeline);
    }

    static std::vector<double> pipeline_array(const FeaturePipeline& p) {
        return {p.kind == FeatureKind::gabor ? 1.0 : 0.0,
                double(p.patch_size.rows),
                double(p.patch_size.cols),
                double(p.stride.rows),
                double(p.stride.cols),
                double(p.subsample),
                double(p.gabor.num_orientations),
                double(p.gabor.num_scales),
                double(p.gabor.kernel_size),
                p.gabor.wavelength_base,
                p.gabor.response == GaborResponse::real ? 1.0 : 0.0};
    }
};

inline std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace detail {

struct NamedArray {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) throw FormatError("model file is truncated");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

inline const NamedArray& require(const std::map<std::string, NamedArray>& arrays, const std::string& name,
                                 std::size_t size) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw FormatError("model file lacks array '" + name + "'");
    if (it->second.data.size() != size)
        throw FormatError("array '" + name + "' has " + std::to_string(it->second.data.size()) + " values, expected " +
                          std::to_string(size));
    return it->second;
}

}  // namespace detail

inline std::string encode_model(const ModelBundle& bundle) {
    const auto& p = bundle.params;
    p.validate();
    bundle.background.require_fitted();
    const std::size_t F = bundle.background.feature_dim();
    const std::size_t B = bundle.background.dimension(0).bins();
    std::vector<double> edges, dens, floors;
    for (const auto& h : bundle.background.dimensions()) {
        if (h.bins() != B) throw std::invalid_argument("all background dimensions must share a bin count");
        edges.insert(edges.end(), h.edges.begin(), h.edges.end());
        dens.insert(dens.end(), h.densities.begin(), h.densities.end());
        floors.push_back(h.floor_density);
    }
    const std::size_t C = p.num_classes, P1 = p.pattern_dims.rows, P2 = p.pattern_dims.cols, Fm = p.feature_dim;
    const std::vector<std::pair<std::string, detail::NamedArray>> arrays = {
        {"dims", {{6}, {double(C), double(p.patch_dims.rows), double(p.patch_dims.cols), double(P1), double(P2), double(Fm)}}},
        {"pi", {{C}, p.pi}},
        {"means", {{C, P1, P2, Fm}, p.means}},
        {"variances", {{C, P1, P2, Fm}, p.variances}},
        {"masks", {{C, P1, P2}, p.masks}},
        {"bg_edges", {{F, B + 1}, edges}},
        {"bg_density", {{F, B}, dens}},
        {"bg_floor", {{F}, floors}},
        {"feature_config", {{11}, ModelBundle::pipeline_array(bundle.pipeline)}},
    };
    std::string out(kModelMagic, sizeof(kModelMagic));
    detail::put<std::uint32_t>(out, kModelFormatVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, arr] : arrays) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(arr.dims.size()));
        for (auto d : arr.dims) detail::put<std::uint64_t>(out, d);
        for (double v : arr.data) detail::put<double>(out, v);
    }
    detail::put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
    return out;
}

inline ModelBundle decode_model(const std::string& bytes) {
    if (bytes.size() < sizeof(kModelMagic) + 8 + 8 || std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0)
        throw FormatError("not a model file (bad magic or too short)");
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    const std::string body = bytes.substr(0, bytes.size() - 8);
    detail::Reader in(body);
    in.take(sizeof(kModelMagic));
    const auto version = in.get<std::uint32_t>();
    if (version != kModelFormatVersion)
        throw FormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                          std::to_string(kModelFormatVersion) + ")");
    if (fnv1a(body.data(), body.size()) != stored) throw FormatError("model file checksum mismatch (corrupt or truncated)");
    const auto count = in.get<std::uint32_t>();
    std::map<std::string, detail::NamedArray> arrays;
    for (std::uint32_t a = 0; a < count; ++a) {
        const auto name = in.take(in.get<std::uint32_t>());
        detail::NamedArray arr;
        const auto ndim = in.get<std::uint32_t>();
        if (ndim > 8) throw FormatError("array '" + name + "' has too many dimensions");
        std::uint64_t total = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            arr.dims.push_back(in.get<std::uint64_t>());
            total *= arr.dims.back();
        }
        if (total > body.size() / 8) throw FormatError("array '" + name + "' is larger than the file");
        arr.data.resize(total);
        for (auto& v : arr.data) v = in.get<double>();
        arrays[name] = std::move(arr);
    }
    if (in.pos() != body.size()) throw FormatError("trailing bytes in model file");

    const auto& dims = detail::require(arrays, "dims", 6).data;
    const auto as_size = [](double v) {
        if (!(v >= 0.0) || v != std::floor(v)) throw FormatError("dimension is not a non-negative integer");
        return static_cast<std::size_t>(v);
    };
    ModelBundle out;
    try {
        out.params = ModelParams(as_size(dims[0]), {as_size(dims[1]), as_size(dims[2])}, {as_size(dims[3]), as_size(dims[4])},
                                 as_size(dims[5]));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid model dimensions: ") + e.what());
    }
    auto& p = out.params;
    const std::size_t P = p.pattern_cells();
    p.pi = detail::require(arrays, "pi", p.num_classes).data;
    p.means = detail::require(arrays, "means", p.num_classes * P * p.feature_dim).data;
    p.variances = detail::require(arrays, "variances", p.num_classes * P * p.feature_dim).data;
    p.masks = detail::require(arrays, "masks", p.num_classes * P).data;
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid model parameters: ") + e.what());
    }

    const auto& floors = detail::require(arrays, "bg_floor", p.feature_dim).data;
    const auto dens_it = arrays.find("bg_density");
    if (dens_it == arrays.end()) throw FormatError("model file lacks array 'bg_density'");
    const auto& dens_arr = dens_it->second;
    if (dens_arr.dims.size() != 2 || dens_arr.dims[0] != p.feature_dim) throw FormatError("bad background density shape");
    const std::size_t B = dens_arr.dims[1];
    const auto& edges = detail::require(arrays, "bg_edges", p.feature_dim * (B + 1)).data;
    std::vector<HistogramDensity> hs;
    for (std::size_t f = 0; f < p.feature_dim; ++f) {
        HistogramDensity h;
        h.edges.assign(edges.begin() + f * (B + 1), edges.begin() + (f + 1) * (B + 1));
        h.densities.assign(dens_arr.data.begin() + f * B, dens_arr.data.begin() + (f + 1) * B);
        h.floor_density = floors[f];
        hs.push_back(std::move(h));
    }
    try {
        out.background = BackgroundDensity(std::move(hs));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid background density: ") + e.what());
    }

    const auto& fc = detail::require(arrays, "feature_config", 11).data;
    auto& pipe = out.pipeline;
    pipe.kind = fc[0] != 0.0 ? FeatureKind::gabor : FeatureKind::color;
    pipe.patch_size = {as_size(fc[1]), as_size(fc[2])};
    pipe.stride = {as_size(fc[3]), as_size(fc[4])};
    pipe.subsample = as_size(fc[5]);
    pipe.gabor.num_orientations = as_size(fc[6]);
    pipe.gabor.num_scales = as_size(fc[7]);
    pipe.gabor.kernel_size = as_size(fc[8]);
    pipe.gabor.wavelength_base = fc[9];
    pipe.gabor.response = fc[10] != 0.0 ? GaborResponse::real : GaborResponse::magnitude;
    return out;
}

inline void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
    const auto bytes = encode_model(bundle);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing model file " + path.string());
}

inline ModelBundle load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open model file " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_model(bytes);
}

}  // namespace docclean
