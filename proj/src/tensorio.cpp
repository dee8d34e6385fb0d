#include "elpq/tensorio.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace elpq {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'N', 'S'};
constexpr uint16_t kVersion = 1;
constexpr size_t kMaxRank = 4;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open file: " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::f32: return 4;
        case Dtype::i32: return 4;
        case Dtype::u8: return 1;
    }
    throw io_error("unsupported dtype");
}

}  // namespace

size_t Tensor::size() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
}

void Tensor::validate() const {
    if (dims.empty()) throw io_error("tensor dims: rank must be >= 1");
    if (dims.size() > kMaxRank) throw io_error("tensor dims: rank must be <= 4");
    for (uint32_t d : dims)
        if (d == 0) throw io_error("tensor dims: all dims must be >= 1");
    const size_t n = size();
    const size_t have = std::visit([](const auto& v) { return v.size(); }, data);
    if (have != n)
        throw io_error("tensor data: expected " + std::to_string(n) + " values, have " +
                       std::to_string(have));
}

Tensor Tensor::from_f32(std::vector<uint32_t> dims, std::vector<float> values) {
    Tensor t{Dtype::f32, std::move(dims), std::move(values)};
    t.validate();
    return t;
}

Tensor Tensor::from_i32(std::vector<uint32_t> dims, std::vector<int32_t> values) {
    Tensor t{Dtype::i32, std::move(dims), std::move(values)};
    t.validate();
    return t;
}

Tensor Tensor::from_u8(std::vector<uint32_t> dims, std::vector<uint8_t> values) {
    Tensor t{Dtype::u8, std::move(dims), std::move(values)};
    t.validate();
    return t;
}

Tensor read_tensor(const std::string& path) {
    const std::vector<uint8_t> raw = read_file(path);
    if (raw.size() < 8) throw io_error(path + ": truncated header");
    if (std::memcmp(raw.data(), kMagic, 4) != 0) throw io_error(path + ": bad magic");
    if (get_u16(raw.data() + 4) != kVersion)
        throw io_error(path + ": unsupported version " + std::to_string(get_u16(raw.data() + 4)));
    const uint8_t dcode = raw[6];
    if (dcode > 2) throw io_error(path + ": unsupported dtype code " + std::to_string(dcode));
    const Dtype dtype = static_cast<Dtype>(dcode);
    const uint8_t rank = raw[7];
    if (rank < 1 || rank > kMaxRank)
        throw io_error(path + ": unsupported rank " + std::to_string(rank));

    size_t off = 8;
    if (raw.size() < off + size_t(rank) * 4) throw io_error(path + ": truncated dims");
    std::vector<uint32_t> dims(rank);
    size_t count = 1;
    for (int i = 0; i < rank; ++i) {
        dims[i] = get_u32(raw.data() + off);
        if (dims[i] == 0) throw io_error(path + ": dims must be >= 1");
        count *= dims[i];
        off += 4;
    }

    const size_t need = count * dtype_size(dtype);
    if (raw.size() < off + need) throw io_error(path + ": truncated payload");
    if (raw.size() > off + need) throw io_error(path + ": trailing bytes after payload");

    Tensor t;
    t.dtype = dtype;
    t.dims = std::move(dims);
    switch (dtype) {
        case Dtype::f32: {
            std::vector<float> v(count);
            for (size_t i = 0; i < count; ++i)
                v[i] = std::bit_cast<float>(get_u32(raw.data() + off + 4 * i));
            t.data = std::move(v);
            break;
        }
        case Dtype::i32: {
            std::vector<int32_t> v(count);
            for (size_t i = 0; i < count; ++i)
                v[i] = static_cast<int32_t>(get_u32(raw.data() + off + 4 * i));
            t.data = std::move(v);
            break;
        }
        case Dtype::u8: {
            t.data = std::vector<uint8_t>(raw.begin() + off, raw.end());
            break;
        }
    }
    t.validate();
    return t;
}

void write_tensor(const Tensor& t, const std::string& path) {
    t.validate();
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(out, d);
    switch (t.dtype) {
        case Dtype::f32:
            for (float v : t.f32()) put_u32(out, std::bit_cast<uint32_t>(v));
            break;
        case Dtype::i32:
            for (int32_t v : t.i32()) put_u32(out, static_cast<uint32_t>(v));
            break;
        case Dtype::u8:
            out.append(reinterpret_cast<const char*>(t.u8().data()), t.u8().size());
            break;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("write failed: " + path);
}

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::fc: return "fc";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "conv") return LayerKind::conv;
    if (name == "fc") return LayerKind::fc;
    if (name == "relu") return LayerKind::relu;
    if (name == "maxpool") return LayerKind::maxpool;
    throw io_error("unknown layer kind: " + name);
}

std::vector<StageShape> propagate_shapes(const Model& m) {
    if (m.input_dims.size() != 3)
        throw shape_error("input_dims must be [C,H,W], got rank " +
                          std::to_string(m.input_dims.size()));
    StageShape s{m.input_dims[0], m.input_dims[1], m.input_dims[2]};
    std::vector<StageShape> shapes{s};
    for (const LayerDef& layer : m.layers) {
        switch (layer.kind) {
            case LayerKind::conv: {
                const auto& wd = layer.weights.dims;
                if (wd.size() != 4)
                    throw shape_error("layer '" + layer.name + "': conv weights must be rank 4");
                if (wd[1] != s.c)
                    throw shape_error("layer '" + layer.name + "': expected in_ch " +
                                      std::to_string(s.c) + ", got " + std::to_string(wd[1]));
                const int kh = int(wd[2]), kw = int(wd[3]);
                const int oh = (int(s.h) + 2 * layer.pad - kh) / layer.stride + 1;
                const int ow = (int(s.w) + 2 * layer.pad - kw) / layer.stride + 1;
                if (int(s.h) + 2 * layer.pad < kh || int(s.w) + 2 * layer.pad < kw)
                    throw shape_error("layer '" + layer.name + "': kernel larger than input");
                s = StageShape{wd[0], uint32_t(oh), uint32_t(ow)};
                break;
            }
            case LayerKind::fc: {
                const auto& wd = layer.weights.dims;
                if (wd.size() != 2)
                    throw shape_error("layer '" + layer.name + "': fc weights must be rank 2");
                if (wd[1] != s.count())
                    throw shape_error("layer '" + layer.name + "': expected in_features " +
                                      std::to_string(s.count()) + ", got " + std::to_string(wd[1]));
                s = StageShape{wd[0], 1, 1};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::maxpool: {
                if (layer.pool_size < 1)
                    throw shape_error("layer '" + layer.name + "': pool_size must be >= 1");
                if (s.h < uint32_t(layer.pool_size) || s.w < uint32_t(layer.pool_size))
                    throw shape_error("layer '" + layer.name + "': pool window larger than input");
                const uint32_t oh = (s.h - layer.pool_size) / layer.stride + 1;
                const uint32_t ow = (s.w - layer.pool_size) / layer.stride + 1;
                s = StageShape{s.c, oh, ow};
                break;
            }
        }
        shapes.push_back(s);
    }
    return shapes;
}

Model load_model(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open manifest: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("manifest parse error in " + manifest_path + ": " + e.what());
    }
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

    Model m;
    if (!j.contains("input_dims")) throw io_error("manifest: missing input_dims");
    m.input_dims = j.at("input_dims").get<std::vector<uint32_t>>();
    if (!j.contains("layers")) throw io_error("manifest: missing layers");

    for (const auto& jl : j.at("layers")) {
        LayerDef l;
        l.name = jl.at("name").get<std::string>();
        l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
        l.weights_ref = jl.value("weights", "");
        l.bias_ref = jl.value("bias", "");
        l.stride = jl.value("stride", 1);
        l.pad = jl.value("pad", 0);
        l.pool_size = jl.value("pool_size", 0);
        if (l.stride < 1) throw io_error("layer '" + l.name + "': stride must be >= 1");
        if (l.pad < 0) throw io_error("layer '" + l.name + "': pad must be >= 0");

        if (l.has_weights() && l.weights_ref.empty())
            throw io_error("layer '" + l.name + "': " + layer_kind_name(l.kind) +
                           " requires a weights reference");
        if (!l.has_weights() && (!l.weights_ref.empty() || !l.bias_ref.empty()))
            throw io_error("layer '" + l.name + "': " + layer_kind_name(l.kind) +
                           " must not reference weights or bias");

        if (!l.weights_ref.empty()) {
            const std::string p = (base / l.weights_ref).string();
            if (!std::filesystem::exists(p)) throw io_error("missing tensor file: " + p);
            l.weights = read_tensor(p);
        }
        if (!l.bias_ref.empty()) {
            const std::string p = (base / l.bias_ref).string();
            if (!std::filesystem::exists(p)) throw io_error("missing tensor file: " + p);
            l.bias = read_tensor(p);
        } else if (l.has_weights()) {
            // Absent bias reference means zero bias.
            l.bias = Tensor::from_f32({l.weights.dims[0]},
                                      std::vector<float>(l.weights.dims[0], 0.0f));
        }
        m.layers.push_back(std::move(l));
    }

    propagate_shapes(m);  // shape compatibility is part of the load contract
    return m;
}

Tensor Dataset::image(size_t i) const {
    const auto& d = images.dims;
    if (d.size() != 4) throw shape_error("dataset images must be rank 4 [N][C][H][W]");
    if (i >= d[0]) throw shape_error("sample index out of range");
    const size_t per = size_t(d[1]) * d[2] * d[3];
    const float* src = images.f32().data() + i * per;
    return Tensor::from_f32({d[1], d[2], d[3]}, std::vector<float>(src, src + per));
}

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open dataset manifest: " + manifest_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("dataset manifest parse error: " + std::string(e.what()));
    }
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    Dataset ds;
    ds.images = read_tensor((base / j.at("images").get<std::string>()).string());
    ds.labels = read_tensor((base / j.at("labels").get<std::string>()).string());
    if (ds.images.dims.size() != 4) throw io_error("dataset images must be rank 4");
    if (ds.images.dtype != Dtype::f32) throw io_error("dataset images must be f32");
    if (ds.labels.dims.size() != 1) throw io_error("dataset labels must be rank 1");
    if (ds.labels.dtype != Dtype::i32) throw io_error("dataset labels must be i32");
    if (ds.labels.dims[0] != ds.images.dims[0])
        throw io_error("dataset images/labels count mismatch");
    return ds;
}

}  // namespace elpq
