#include "abmpipe/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

namespace abmpipe {

namespace {

constexpr std::array<std::string_view, 7> kLayerNames = {"conv1", "conv2", "conv3", "conv4",
                                                         "conv5", "fc6",   "fc7"};

// channels x height x width per layer; fc layers are 4096 x 1 x 1.
constexpr std::array<std::array<std::size_t, 3>, 7> kPaperShapes = {{
    {96, 55, 55},
    {256, 27, 27},
    {384, 13, 13},
    {384, 13, 13},
    {256, 13, 13},
    {4096, 1, 1},
    {4096, 1, 1},
}};

constexpr std::array<std::string_view, 10> kRoiNames = {"V1",  "V2",  "V3",  "V4",  "LOC",
                                                        "FFA", "PPA", "LVC", "HVC", "VC"};

constexpr std::array<RoiId, 3> kLvc = {RoiId::V1, RoiId::V2, RoiId::V3};
constexpr std::array<RoiId, 3> kHvc = {RoiId::LOC, RoiId::FFA, RoiId::PPA};

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

std::string_view layer_name(LayerId layer) { return kLayerNames[layer_index(layer)]; }

std::size_t layer_index(LayerId layer) { return static_cast<std::size_t>(layer); }

LayerId parse_layer(std::string_view name) {
    const std::string lower = lowercase(name);
    for (std::size_t i = 0; i < kLayerNames.size(); ++i) {
        if (kLayerNames[i] == lower) return kAllLayers[i];
    }
    throw DataError("unknown layer '" + std::string(name) + "' (expected conv1..conv5, fc6, fc7)");
}

std::size_t paper_feature_length(LayerId layer) {
    const auto& s = kPaperShapes[layer_index(layer)];
    return s[0] * s[1] * s[2];
}

std::string_view roi_name(RoiId roi) { return kRoiNames[roi_index(roi)]; }

std::size_t roi_index(RoiId roi) { return static_cast<std::size_t>(roi); }

RoiId parse_roi(std::string_view name) {
    const std::string lower = lowercase(name);
    for (std::size_t i = 0; i < kRoiNames.size(); ++i) {
        if (lowercase(kRoiNames[i]) == lower) return kAllRois[i];
    }
    throw DataError("unknown ROI '" + std::string(name) + "'");
}

std::span<const RoiId> roi_composition(RoiId roi) {
    switch (roi) {
        case RoiId::LVC: return kLvc;
        case RoiId::HVC: return kHvc;
        case RoiId::VC: return kAtomicRois;
        default: return {&kAtomicRois[roi_index(roi)], 1};
    }
}

bool is_atomic(RoiId roi) { return roi_index(roi) < kAtomicRois.size(); }

ImageTensor::ImageTensor(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    if (channels <= 0 || height <= 0 || width <= 0) {
        throw DataError("image dimensions must be positive");
    }
    const auto expected = static_cast<std::size_t>(channels) * height * width;
    if (values_.size() != expected) {
        throw DataError("image has " + std::to_string(values_.size()) + " values, expected " +
                        std::to_string(expected));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw DataError("image value at flat index " + std::to_string(i) +
                            " is outside [0, 1]");
        }
    }
}

ImageTensor ImageTensor::zeros(int channels, int height, int width) {
    return ImageTensor(channels, height, width,
                       std::vector<double>(static_cast<std::size_t>(channels) * height * width));
}

std::optional<std::size_t> LabeledMatrix::find(std::string_view id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
}

Matrix LabeledMatrix::select_rows(std::span<const std::string> wanted, std::string_view what) const {
    std::unordered_map<std::string_view, std::size_t> index;
    index.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);

    Matrix out(static_cast<Eigen::Index>(wanted.size()), values.cols());
    for (std::size_t r = 0; r < wanted.size(); ++r) {
        auto it = index.find(wanted[r]);
        if (it == index.end()) {
            throw DataError("image id '" + wanted[r] + "' missing from " + std::string(what));
        }
        out.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(it->second));
    }
    return out;
}

std::vector<double> LabeledMatrix::row(std::size_t i) const {
    std::vector<double> out(cols());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    return out;
}

std::vector<std::string> default_columns(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
    return out;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace abmpipe
