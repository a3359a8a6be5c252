#pragma once

// Fixed-topology convolutional forward pass (five conv stages, two hidden fc
// layers) used to produce per-layer image features.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "abmpipe/core.hpp"

namespace abmpipe::cnn {

struct Shape3 {
    int channels = 0;
    int height = 0;
    int width = 0;

    std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
    bool operator==(const Shape3&) const = default;
};

/// Activation volume, channel-major then row-major.
struct Tensor3 {
    Shape3 shape;
    std::vector<double> data;

    Tensor3() = default;
    explicit Tensor3(Shape3 s, double fill = 0.0) : shape(s), data(s.size(), fill) {}
    Tensor3(Shape3 s, std::vector<double> values);

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
    }
};

struct ConvLayerSpec {
    int out_channels = 0;
    int kernel_size = 0;
    int stride = 1;
    int padding = 0;

    /// floor((in + 2*padding - kernel) / stride) + 1; throws DataError unless positive.
    int output_size(int in) const;

    bool operator==(const ConvLayerSpec&) const = default;
};

struct PoolSpec {
    int window = 0;
    int stride = 1;

    int output_size(int in) const;

    bool operator==(const PoolSpec&) const = default;
};

struct ConvStage {
    ConvLayerSpec conv;
    std::optional<PoolSpec> pool_after;

    bool operator==(const ConvStage&) const = default;
};

/// Layer geometry. `alexnet()` is the 3x227x227 configuration whose conv
/// activations are 96x55x55, 256x27x27, 384x13x13, 384x13x13, 256x13x13.
struct Architecture {
    Shape3 input{3, 227, 227};
    std::array<ConvStage, 5> convs{};
    int fc6_units = 4096;
    int fc7_units = 4096;

    static Architecture alexnet();

    /// Post-ReLU, pre-pool activation shape of a conv layer (fc layers are units x 1 x 1).
    Shape3 layer_shape(LayerId layer) const;
    std::size_t feature_length(LayerId layer) const { return layer_shape(layer).size(); }
    /// Flattened input length of fc6 (pooled conv5 volume).
    std::size_t fc6_inputs() const;

    /// Throws DataError if any stage produces a non-positive size.
    void validate() const;

    bool operator==(const Architecture&) const = default;
};

struct ConvWeights {
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 0;
    std::vector<double> weight;  // out x in x kernel x kernel
    std::vector<double> bias;    // out
};

struct DenseWeights {
    int out_features = 0;
    int in_features = 0;
    std::vector<double> weight;  // out x in, row-major
    std::vector<double> bias;    // out
};

struct NetworkWeights {
    Architecture arch;
    std::array<ConvWeights, 5> conv;
    DenseWeights fc6;
    DenseWeights fc7;
    std::string provenance;  // "seed:<n>" or the directory the weights came from
    std::optional<std::uint64_t> seed;

    /// Checks array shapes against `arch` and that every value is finite.
    void validate() const;
};

/// Scaled-uniform initializer: weights ~ U(-s, s) with s = sqrt(2 / fan_in), zero biases.
NetworkWeights init_weights(const Architecture& arch, std::uint64_t seed);

/// Weight directory: `weights.json` plus one matrix CSV per parameter array.
void save_weights(const NetworkWeights& weights, const std::filesystem::path& dir);
NetworkWeights load_weights(const std::filesystem::path& dir);

Tensor3 conv2d(const Tensor3& input, const ConvWeights& weights, int stride, int padding);
void relu_inplace(std::span<double> x);
std::vector<double> relu(std::span<const double> x);
Tensor3 maxpool(const Tensor3& input, int window, int stride);
std::vector<double> fc_forward(std::span<const double> x, const DenseWeights& weights);

/// Runs the forward pass once and returns the requested layers' post-ReLU
/// activations, flattened channel-major. Conv features are taken before pooling.
std::map<LayerId, std::vector<double>> forward_layers(const ImageTensor& image,
                                                      const NetworkWeights& weights,
                                                      std::span<const LayerId> layers);

FeatureVector extract_features(const ImageTensor& image, std::string image_id,
                               const NetworkWeights& weights, LayerId layer);

/// Elementwise mean; the result carries `group_label` as its image id.
FeatureVector average_features(std::span<const FeatureVector> features, std::string group_label);

}  // namespace abmpipe::cnn
