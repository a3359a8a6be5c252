#pragma once

// Shared identifiers, record types and error classes for the ABM pipeline.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace abmpipe {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Malformed or inconsistent input data (bad files, id mismatches, shape errors).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A linear solve that cannot be carried out, e.g. singular normal equations at lambda = 0.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CNN layers
// ---------------------------------------------------------------------------

enum class LayerId { Conv1, Conv2, Conv3, Conv4, Conv5, Fc6, Fc7 };

inline constexpr std::array<LayerId, 7> kAllLayers = {
    LayerId::Conv1, LayerId::Conv2, LayerId::Conv3, LayerId::Conv4,
    LayerId::Conv5, LayerId::Fc6,   LayerId::Fc7};

std::string_view layer_name(LayerId layer);
LayerId parse_layer(std::string_view name);
std::size_t layer_index(LayerId layer);

/// Flattened post-activation length of a layer for a 3x227x227 input
/// (conv1 96x55x55 ... fc7 4096).
std::size_t paper_feature_length(LayerId layer);

// ---------------------------------------------------------------------------
// Brain regions
// ---------------------------------------------------------------------------

enum class RoiId { V1, V2, V3, V4, LOC, FFA, PPA, LVC, HVC, VC };

inline constexpr std::array<RoiId, 10> kAllRois = {
    RoiId::V1,  RoiId::V2,  RoiId::V3,  RoiId::V4,  RoiId::LOC,
    RoiId::FFA, RoiId::PPA, RoiId::LVC, RoiId::HVC, RoiId::VC};

inline constexpr std::array<RoiId, 7> kAtomicRois = {
    RoiId::V1, RoiId::V2, RoiId::V3, RoiId::V4, RoiId::LOC, RoiId::FFA, RoiId::PPA};

inline constexpr std::array<RoiId, 3> kCompositeRois = {RoiId::LVC, RoiId::HVC, RoiId::VC};

std::string_view roi_name(RoiId roi);
RoiId parse_roi(std::string_view name);
std::size_t roi_index(RoiId roi);

/// Atomic constituents in concatenation order; an atomic ROI returns itself.
std::span<const RoiId> roi_composition(RoiId roi);
bool is_atomic(RoiId roi);

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// Dense channel-major, row-major image with values in [0, 1].
class ImageTensor {
public:
    ImageTensor(int channels, int height, int width, std::vector<double> values);

    static ImageTensor zeros(int channels, int height, int width);

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::span<const double> values() const { return values_; }

private:
    int channels_;
    int height_;
    int width_;
    std::vector<double> values_;
};

struct FeatureVector {
    LayerId layer;
    std::string image_id;
    std::vector<double> values;
};

struct FmriRecord {
    RoiId roi;
    std::string image_id;
    std::vector<double> voxels;
};

struct AbmRecord {
    std::string image_id;
    double abm;
};

// ---------------------------------------------------------------------------
// Id-labelled matrices (the in-memory form of the `id,c0,c1,...` CSV format)
// ---------------------------------------------------------------------------

struct LabeledMatrix {
    std::vector<std::string> ids;
    std::vector<std::string> columns;  // header names after `id`
    Matrix values;

    std::size_t rows() const { return ids.size(); }
    std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }

    std::optional<std::size_t> find(std::string_view id) const;

    /// Rows for `wanted` in that order. Throws DataError naming the first
    /// missing id; `what` labels the table in the message.
    Matrix select_rows(std::span<const std::string> wanted, std::string_view what) const;

    std::vector<double> row(std::size_t i) const;
};

/// Default `c0..c{n-1}` header names.
std::vector<std::string> default_columns(std::size_t n);

bool all_finite(std::span<const double> values);

}  // namespace abmpipe
