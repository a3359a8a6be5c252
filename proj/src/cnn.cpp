#include "abmpipe/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "abmpipe/csv.hpp"
#include "json.hpp"

namespace abmpipe::cnn {

namespace fs = std::filesystem;

namespace {

// Smallest y with y*stride + offset >= 0 and the bound past the largest y with
// y*stride + offset < limit, clipped to [0, out).
std::pair<int, int> valid_range(int out, int stride, int offset, int limit) {
    int lo = 0;
    if (offset < 0) lo = (-offset + stride - 1) / stride;
    int hi = out;
    // need y*stride + offset <= limit - 1
    const int last = limit - 1 - offset;
    if (last < 0) return {0, 0};
    hi = std::min(hi, last / stride + 1);
    return {std::min(lo, hi), hi};
}

std::string shape_text(const Shape3& s) {
    return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" +
           std::to_string(s.width);
}

}  // namespace

Tensor3::Tensor3(Shape3 s, std::vector<double> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
        throw DataError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_text(shape));
    }
}

int ConvLayerSpec::output_size(int in) const {
    if (out_channels <= 0 || kernel_size <= 0 || stride <= 0 || padding < 0) {
        throw DataError("invalid conv layer spec");
    }
    const int span = in + 2 * padding - kernel_size;
    if (span < 0) {
        throw DataError("conv kernel " + std::to_string(kernel_size) + " larger than padded input " +
                        std::to_string(in + 2 * padding));
    }
    return span / stride + 1;
}

int PoolSpec::output_size(int in) const {
    if (window <= 0 || stride <= 0) throw DataError("invalid pooling spec");
    if (window > in) {
        throw DataError("pooling window " + std::to_string(window) + " larger than input " +
                        std::to_string(in));
    }
    return (in - window) / stride + 1;
}

Architecture Architecture::alexnet() {
    Architecture a;
    a.input = {3, 227, 227};
    a.convs = {{
        {{96, 11, 4, 0}, PoolSpec{3, 2}},
        {{256, 5, 1, 2}, PoolSpec{3, 2}},
        {{384, 3, 1, 1}, std::nullopt},
        {{384, 3, 1, 1}, std::nullopt},
        {{256, 3, 1, 1}, PoolSpec{3, 2}},
    }};
    a.fc6_units = 4096;
    a.fc7_units = 4096;
    return a;
}

Shape3 Architecture::layer_shape(LayerId layer) const {
    if (layer == LayerId::Fc6) return {fc6_units, 1, 1};
    if (layer == LayerId::Fc7) return {fc7_units, 1, 1};
    Shape3 s = input;
    const auto target = layer_index(layer);
    for (std::size_t i = 0; i < convs.size(); ++i) {
        const auto& stage = convs[i];
        s = {stage.conv.out_channels, stage.conv.output_size(s.height),
             stage.conv.output_size(s.width)};
        if (i == target) return s;
        if (stage.pool_after) {
            s.height = stage.pool_after->output_size(s.height);
            s.width = stage.pool_after->output_size(s.width);
        }
    }
    return s;
}

std::size_t Architecture::fc6_inputs() const {
    Shape3 s = layer_shape(LayerId::Conv5);
    if (const auto& pool = convs[4].pool_after) {
        s.height = pool->output_size(s.height);
        s.width = pool->output_size(s.width);
    }
    return s.size();
}

void Architecture::validate() const {
    if (input.channels <= 0 || input.height <= 0 || input.width <= 0) {
        throw DataError("architecture input shape must be positive");
    }
    if (fc6_units <= 0 || fc7_units <= 0) throw DataError("fc layer widths must be positive");
    (void)fc6_inputs();
}

void NetworkWeights::validate() const {
    arch.validate();
    int in_channels = arch.input.channels;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        const auto& spec = arch.convs[i].conv;
        const auto& w = conv[i];
        const auto expected = static_cast<std::size_t>(spec.out_channels) * in_channels *
                              spec.kernel_size * spec.kernel_size;
        if (w.out_channels != spec.out_channels || w.in_channels != in_channels ||
            w.kernel != spec.kernel_size || w.weight.size() != expected ||
            w.bias.size() != static_cast<std::size_t>(spec.out_channels)) {
            throw DataError("conv" + std::to_string(i + 1) + " weights do not match architecture");
        }
        if (!all_finite(w.weight) || !all_finite(w.bias)) {
            throw DataError("conv" + std::to_string(i + 1) + " weights contain non-finite values");
        }
        in_channels = spec.out_channels;
    }
    auto check_dense = [](const DenseWeights& w, std::size_t out, std::size_t in, const char* name) {
        if (static_cast<std::size_t>(w.out_features) != out ||
            static_cast<std::size_t>(w.in_features) != in || w.weight.size() != out * in ||
            w.bias.size() != out) {
            throw DataError(std::string(name) + " weights do not match architecture");
        }
        if (!all_finite(w.weight) || !all_finite(w.bias)) {
            throw DataError(std::string(name) + " weights contain non-finite values");
        }
    };
    check_dense(fc6, static_cast<std::size_t>(arch.fc6_units), arch.fc6_inputs(), "fc6");
    check_dense(fc7, static_cast<std::size_t>(arch.fc7_units),
                static_cast<std::size_t>(arch.fc6_units), "fc7");
}

NetworkWeights init_weights(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    auto fill = [&rng](std::vector<double>& v, std::size_t fan_in) {
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-scale, scale);
        for (auto& x : v) x = dist(rng);
    };

    NetworkWeights w;
    w.arch = arch;
    int in_channels = arch.input.channels;
    for (std::size_t i = 0; i < w.conv.size(); ++i) {
        const auto& spec = arch.convs[i].conv;
        auto& c = w.conv[i];
        c.out_channels = spec.out_channels;
        c.in_channels = in_channels;
        c.kernel = spec.kernel_size;
        const std::size_t fan_in = static_cast<std::size_t>(in_channels) * c.kernel * c.kernel;
        c.weight.resize(static_cast<std::size_t>(c.out_channels) * fan_in);
        c.bias.assign(static_cast<std::size_t>(c.out_channels), 0.0);
        fill(c.weight, fan_in);
        in_channels = spec.out_channels;
    }
    auto make_dense = [&](int out, std::size_t in) {
        DenseWeights d;
        d.out_features = out;
        d.in_features = static_cast<int>(in);
        d.weight.resize(static_cast<std::size_t>(out) * in);
        d.bias.assign(static_cast<std::size_t>(out), 0.0);
        fill(d.weight, in);
        return d;
    };
    w.fc6 = make_dense(arch.fc6_units, arch.fc6_inputs());
    w.fc7 = make_dense(arch.fc7_units, static_cast<std::size_t>(arch.fc6_units));
    w.provenance = "seed:" + std::to_string(seed);
    w.seed = seed;
    return w;
}

// ---------------------------------------------------------------------------
// Weight directory IO
// ---------------------------------------------------------------------------

namespace {

void write_param(const fs::path& dir, const std::string& name, std::span<const double> values,
                 std::size_t rows) {
    const std::size_t cols = rows ? values.size() / rows : 0;
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::vector<std::string> ids;
    ids.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        ids.push_back("r" + std::to_string(r));
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * cols + c];
        }
    }
    write_matrix_csv(dir / (name + ".csv"), ids, m);
}

std::vector<double> read_param(const fs::path& dir, const std::string& name, std::size_t rows,
                               std::size_t cols) {
    const auto table = read_matrix_csv(dir / (name + ".csv"));
    if (table.rows() != rows || table.cols() != cols) {
        throw DataError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " values, found " + std::to_string(table.rows()) + "x" +
                        std::to_string(table.cols()));
    }
    std::vector<double> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
    }
    return out;
}

nlohmann::json arch_to_json(const Architecture& a) {
    nlohmann::json convs = nlohmann::json::array();
    for (const auto& s : a.convs) {
        nlohmann::json c = {{"out_channels", s.conv.out_channels},
                            {"kernel_size", s.conv.kernel_size},
                            {"stride", s.conv.stride},
                            {"padding", s.conv.padding}};
        if (s.pool_after) c["pool"] = {{"window", s.pool_after->window}, {"stride", s.pool_after->stride}};
        convs.push_back(c);
    }
    return {{"input", {a.input.channels, a.input.height, a.input.width}},
            {"convs", convs},
            {"fc6_units", a.fc6_units},
            {"fc7_units", a.fc7_units}};
}

Architecture arch_from_json(const nlohmann::json& j) {
    Architecture a;
    const auto& in = j.at("input");
    a.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    const auto& convs = j.at("convs");
    if (convs.size() != a.convs.size()) throw DataError("weights.json: expected 5 conv layers");
    for (std::size_t i = 0; i < a.convs.size(); ++i) {
        const auto& c = convs.at(i);
        a.convs[i].conv = {c.at("out_channels").get<int>(), c.at("kernel_size").get<int>(),
                           c.at("stride").get<int>(), c.at("padding").get<int>()};
        if (c.contains("pool")) {
            a.convs[i].pool_after = PoolSpec{c["pool"].at("window").get<int>(),
                                             c["pool"].at("stride").get<int>()};
        }
    }
    a.fc6_units = j.at("fc6_units").get<int>();
    a.fc7_units = j.at("fc7_units").get<int>();
    return a;
}

}  // namespace

void save_weights(const NetworkWeights& weights, const fs::path& dir) {
    weights.validate();
    fs::create_directories(dir);
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < weights.conv.size(); ++i) {
        const auto& c = weights.conv[i];
        const std::string name = "conv" + std::to_string(i + 1);
        write_param(dir, name + "_weight", c.weight, static_cast<std::size_t>(c.out_channels));
        write_param(dir, name + "_bias", c.bias, static_cast<std::size_t>(c.out_channels));
        params.push_back({{"name", name + "_weight"},
                          {"shape", {c.out_channels, c.in_channels, c.kernel, c.kernel}},
                          {"path", name + "_weight.csv"}});
        params.push_back({{"name", name + "_bias"}, {"shape", {c.out_channels}}, {"path", name + "_bias.csv"}});
    }
    for (const auto* name : {"fc6", "fc7"}) {
        const auto& d = std::string(name) == "fc6" ? weights.fc6 : weights.fc7;
        write_param(dir, std::string(name) + "_weight", d.weight, static_cast<std::size_t>(d.out_features));
        write_param(dir, std::string(name) + "_bias", d.bias, static_cast<std::size_t>(d.out_features));
        params.push_back({{"name", std::string(name) + "_weight"},
                          {"shape", {d.out_features, d.in_features}},
                          {"path", std::string(name) + "_weight.csv"}});
        params.push_back({{"name", std::string(name) + "_bias"},
                          {"shape", {d.out_features}},
                          {"path", std::string(name) + "_bias.csv"}});
    }
    nlohmann::json j = {{"format", "abm-weights/1"},
                        {"architecture", arch_to_json(weights.arch)},
                        {"params", params},
                        {"seed", weights.seed ? nlohmann::json(*weights.seed) : nlohmann::json(nullptr)}};
    std::ofstream out(dir / "weights.json", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "weights.json").string());
    out << j.dump(2) << '\n';
}

NetworkWeights load_weights(const fs::path& dir) {
    std::ifstream in(dir / "weights.json");
    if (!in) throw DataError("cannot open " + (dir / "weights.json").string());
    nlohmann::json j;
    NetworkWeights w;
    try {
        in >> j;
        w.arch = arch_from_json(j.at("architecture"));
        if (j.contains("seed") && !j["seed"].is_null()) w.seed = j["seed"].get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("weights.json: " + std::string(e.what()));
    }
    w.arch.validate();

    int in_channels = w.arch.input.channels;
    for (std::size_t i = 0; i < w.conv.size(); ++i) {
        const auto& spec = w.arch.convs[i].conv;
        auto& c = w.conv[i];
        const std::string name = "conv" + std::to_string(i + 1);
        c.out_channels = spec.out_channels;
        c.in_channels = in_channels;
        c.kernel = spec.kernel_size;
        c.weight = read_param(dir, name + "_weight", static_cast<std::size_t>(c.out_channels),
                              static_cast<std::size_t>(in_channels) * c.kernel * c.kernel);
        c.bias = read_param(dir, name + "_bias", static_cast<std::size_t>(c.out_channels), 1);
        in_channels = spec.out_channels;
    }
    auto load_dense = [&](const std::string& name, int out, std::size_t in_features) {
        DenseWeights d;
        d.out_features = out;
        d.in_features = static_cast<int>(in_features);
        d.weight = read_param(dir, name + "_weight", static_cast<std::size_t>(out), in_features);
        d.bias = read_param(dir, name + "_bias", static_cast<std::size_t>(out), 1);
        return d;
    };
    w.fc6 = load_dense("fc6", w.arch.fc6_units, w.arch.fc6_inputs());
    w.fc7 = load_dense("fc7", w.arch.fc7_units, static_cast<std::size_t>(w.arch.fc6_units));
    w.provenance = dir.string();
    w.validate();
    return w;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Tensor3 conv2d(const Tensor3& input, const ConvWeights& weights, int stride, int padding) {
    const auto& in = input.shape;
    if (weights.in_channels != in.channels) {
        throw DataError("conv2d: input has " + std::to_string(in.channels) +
                        " channels, weights expect " + std::to_string(weights.in_channels));
    }
    const auto k = weights.kernel;
    const auto expected = static_cast<std::size_t>(weights.out_channels) * in.channels * k * k;
    if (weights.weight.size() != expected ||
        weights.bias.size() != static_cast<std::size_t>(weights.out_channels)) {
        throw DataError("conv2d: weight array shape mismatch");
    }
    if (!all_finite(input.data)) throw DataError("conv2d: non-finite input");

    const ConvLayerSpec spec{weights.out_channels, k, stride, padding};
    const Shape3 out_shape{weights.out_channels, spec.output_size(in.height), spec.output_size(in.width)};
    if (out_shape.height <= 0 || out_shape.width <= 0) throw DataError("conv2d: empty output");

    Tensor3 out(out_shape);
    const std::size_t in_plane = static_cast<std::size_t>(in.height) * in.width;
    const std::size_t out_plane = static_cast<std::size_t>(out_shape.height) * out_shape.width;

    for (int o = 0; o < out_shape.channels; ++o) {
        double* dst = out.data.data() + o * out_plane;
        std::fill(dst, dst + out_plane, weights.bias[static_cast<std::size_t>(o)]);
        for (int c = 0; c < in.channels; ++c) {
            const double* src = input.data.data() + c * in_plane;
            const double* w = weights.weight.data() +
                              ((static_cast<std::size_t>(o) * in.channels + c) * k) * k;
            for (int i = 0; i < k; ++i) {
                const auto [y0, y1] = valid_range(out_shape.height, stride, i - padding, in.height);
                for (int j = 0; j < k; ++j) {
                    const double wv = w[i * k + j];
                    const auto [x0, x1] = valid_range(out_shape.width, stride, j - padding, in.width);
                    for (int y = y0; y < y1; ++y) {
                        const double* row = src + static_cast<std::size_t>(y * stride + i - padding) * in.width;
                        double* orow = dst + static_cast<std::size_t>(y) * out_shape.width;
                        for (int x = x0; x < x1; ++x) {
                            orow[x] += wv * row[x * stride + j - padding];
                        }
                    }
                }
            }
        }
    }
    return out;
}

void relu_inplace(std::span<double> x) {
    for (auto& v : x) v = v > 0.0 ? v : 0.0;
}

std::vector<double> relu(std::span<const double> x) {
    std::vector<double> out(x.begin(), x.end());
    relu_inplace(out);
    return out;
}

Tensor3 maxpool(const Tensor3& input, int window, int stride) {
    const PoolSpec spec{window, stride};
    const Shape3 out_shape{input.shape.channels, spec.output_size(input.shape.height),
                           spec.output_size(input.shape.width)};
    Tensor3 out(out_shape);
    for (int c = 0; c < out_shape.channels; ++c) {
        for (int y = 0; y < out_shape.height; ++y) {
            for (int x = 0; x < out_shape.width; ++x) {
                double best = input.at(c, y * stride, x * stride);
                for (int i = 0; i < window; ++i) {
                    for (int j = 0; j < window; ++j) {
                        best = std::max(best, input.at(c, y * stride + i, x * stride + j));
                    }
                }
                out.at(c, y, x) = best;
            }
        }
    }
    return out;
}

std::vector<double> fc_forward(std::span<const double> x, const DenseWeights& weights) {
    if (x.size() != static_cast<std::size_t>(weights.in_features) ||
        weights.weight.size() != static_cast<std::size_t>(weights.out_features) * x.size() ||
        weights.bias.size() != static_cast<std::size_t>(weights.out_features)) {
        throw DataError("fc_forward: input length " + std::to_string(x.size()) +
                        " does not match weights " + std::to_string(weights.out_features) + "x" +
                        std::to_string(weights.in_features));
    }
    std::vector<double> out(static_cast<std::size_t>(weights.out_features));
    for (std::size_t o = 0; o < out.size(); ++o) {
        const double* w = weights.weight.data() + o * x.size();
        double acc = weights.bias[o];
        for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i];
        out[o] = acc;
    }
    return out;
}

std::map<LayerId, std::vector<double>> forward_layers(const ImageTensor& image,
                                                      const NetworkWeights& weights,
                                                      std::span<const LayerId> layers) {
    const auto& arch = weights.arch;
    const Shape3 image_shape{image.channels(), image.height(), image.width()};
    if (!(image_shape == arch.input)) {
        throw DataError("image is " + shape_text(image_shape) + ", network expects " +
                        shape_text(arch.input));
    }
    std::map<LayerId, std::vector<double>> out;
    if (layers.empty()) return out;
    std::size_t deepest = 0;
    for (auto l : layers) deepest = std::max(deepest, layer_index(l));
    auto wanted = [&](LayerId l) { return std::find(layers.begin(), layers.end(), l) != layers.end(); };

    Tensor3 act(image_shape, std::vector<double>(image.values().begin(), image.values().end()));
    for (std::size_t i = 0; i < arch.convs.size(); ++i) {
        const auto& stage = arch.convs[i];
        act = conv2d(act, weights.conv[i], stage.conv.stride, stage.conv.padding);
        relu_inplace(act.data);
        if (wanted(kAllLayers[i])) out[kAllLayers[i]] = act.data;
        if (deepest == i) return out;
        if (stage.pool_after) act = maxpool(act, stage.pool_after->window, stage.pool_after->stride);
    }
    auto fc6 = fc_forward(act.data, weights.fc6);
    relu_inplace(fc6);
    if (wanted(LayerId::Fc6)) out[LayerId::Fc6] = fc6;
    if (deepest == layer_index(LayerId::Fc6)) return out;
    auto fc7 = fc_forward(fc6, weights.fc7);
    relu_inplace(fc7);
    out[LayerId::Fc7] = std::move(fc7);
    return out;
}

FeatureVector extract_features(const ImageTensor& image, std::string image_id,
                               const NetworkWeights& weights, LayerId layer) {
    const std::array<LayerId, 1> one{layer};
    auto values = forward_layers(image, weights, one);
    return FeatureVector{layer, std::move(image_id), std::move(values.at(layer))};
}

FeatureVector average_features(std::span<const FeatureVector> features, std::string group_label) {
    if (features.empty()) throw DataError("average_features: empty group");
    const auto layer = features.front().layer;
    const auto d = features.front().values.size();
    std::vector<double> sum(d, 0.0);
    for (const auto& f : features) {
        if (f.layer != layer) throw DataError("average_features: mixed layers in group");
        if (f.values.size() != d) throw DataError("average_features: mixed feature lengths");
        for (std::size_t i = 0; i < d; ++i) sum[i] += f.values[i];
    }
    const double n = static_cast<double>(features.size());
    for (auto& v : sum) v /= n;
    return FeatureVector{layer, std::move(group_label), std::move(sum)};
}

}  // namespace abmpipe::cnn
