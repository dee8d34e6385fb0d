#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "elpq/error.hpp"

namespace elpq {

// ---------------------------------------------------------------------------
// Tensor container
//
// On-disk layout (CTNS):
//   bytes 0-3   magic "CTNS"
//   bytes 4-5   version, u16 little-endian, currently 1
//   byte  6     dtype: 0=f32, 1=i32, 2=u8
//   byte  7     rank, 1..4
//   then        rank x u32 dims, little-endian
//   then        payload, row-major, little-endian
// ---------------------------------------------------------------------------

enum class Dtype : uint8_t { f32 = 0, i32 = 1, u8 = 2 };

struct Tensor {
    Dtype dtype = Dtype::f32;
    std::vector<uint32_t> dims;
    std::variant<std::vector<float>, std::vector<int32_t>, std::vector<uint8_t>> data;

    size_t size() const;
    size_t rank() const { return dims.size(); }

    std::vector<float>& f32() { return std::get<std::vector<float>>(data); }
    const std::vector<float>& f32() const { return std::get<std::vector<float>>(data); }
    std::vector<int32_t>& i32() { return std::get<std::vector<int32_t>>(data); }
    const std::vector<int32_t>& i32() const { return std::get<std::vector<int32_t>>(data); }
    std::vector<uint8_t>& u8() { return std::get<std::vector<uint8_t>>(data); }
    const std::vector<uint8_t>& u8() const { return std::get<std::vector<uint8_t>>(data); }

    // Throws io_error when dims/data break an invariant.
    void validate() const;

    bool operator==(const Tensor& other) const = default;

    static Tensor from_f32(std::vector<uint32_t> dims, std::vector<float> values);
    static Tensor from_i32(std::vector<uint32_t> dims, std::vector<int32_t> values);
    static Tensor from_u8(std::vector<uint32_t> dims, std::vector<uint8_t> values);
};

Tensor read_tensor(const std::string& path);
void write_tensor(const Tensor& t, const std::string& path);

// ---------------------------------------------------------------------------
// Model manifest
//
// JSON document:
//   {"input_dims":[C,H,W],
//    "layers":[{"name","kind","weights","bias","stride","pad","pool_size"}]}
// Tensor paths are resolved relative to the manifest's directory.
// ---------------------------------------------------------------------------

enum class LayerKind { conv, fc, relu, maxpool };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerDef {
    std::string name;
    LayerKind kind = LayerKind::conv;
    std::string weights_ref;  // empty when absent
    std::string bias_ref;
    int stride = 1;
    int pad = 0;
    int pool_size = 0;  // maxpool only

    // Populated by load_model. Conv weights are [out_ch][in_ch][kh][kw],
    // fc weights are [out_features][in_features], biases are rank-1 f32.
    Tensor weights;
    Tensor bias;

    bool has_weights() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
};

struct Model {
    std::vector<LayerDef> layers;
    std::vector<uint32_t> input_dims;  // [C,H,W]
};

// Shape of the activation tensor between layers.
struct StageShape {
    uint32_t c = 0, h = 0, w = 0;
    size_t count() const { return size_t(c) * h * w; }
};

// Propagates input_dims through every layer, throwing shape_error with the
// offending layer's name on any incompatibility. Index i of the result is
// the shape entering layer i; the last entry is the model output shape.
std::vector<StageShape> propagate_shapes(const Model& m);

Model load_model(const std::string& manifest_path);

// Labeled dataset: images [N][C][H][W] f32, labels [N] i32.
// Loaded from a JSON manifest {"images": path, "labels": path}.
struct Dataset {
    Tensor images;
    Tensor labels;

    size_t count() const { return images.dims.empty() ? 0 : images.dims[0]; }
    // Extracts sample i as a [C][H][W] tensor.
    Tensor image(size_t i) const;
    int32_t label(size_t i) const { return labels.i32().at(i); }
};

Dataset load_dataset(const std::string& manifest_path);

}  // namespace elpq
