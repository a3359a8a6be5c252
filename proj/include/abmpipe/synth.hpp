#pragma once

// Behavioural ABM (lag-8 minus lag-2 T2 accuracy), an RSVP trial simulator,
// and a synthetic dataset generator with known linear ground truth.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "abmpipe/core.hpp"
#include "abmpipe/dataset.hpp"

namespace abmpipe::synth {

/// T1 -> T2 onset intervals of the two lag conditions.
inline constexpr int kLag2Ms = 200;
inline constexpr int kLag8Ms = 800;

struct ObserverParams {
    double p_correct_lag2 = 0.5;
    double p_correct_lag8 = 0.9;
    int trials_per_lag = 100;
    std::uint64_t seed = 0;
};

struct RsvpResult {
    int trials_per_lag = 0;
    int correct_lag2 = 0;
    int correct_lag8 = 0;
    double p_hat_lag2 = 0.0;
    double p_hat_lag8 = 0.0;
    double empirical_abm = 0.0;
};

/// p_lag8 - p_lag2; both must be probabilities.
double compute_abm(double p_lag8, double p_lag2);

/// Draws T2 correctness for each trial (lag 2 then lag 8, alternating) from a
/// seeded generator and reports the empirical ABM.
RsvpResult simulate_rsvp(const ObserverParams& params);

/// Layer that drives each atomic ROI's synthetic voxels:
/// V1->conv1, V2->conv2, V3->conv3, V4->conv4, LOC->conv5, FFA->fc6, PPA->fc7.
LayerId wired_layer(RoiId atomic_roi);

struct SynthConfig {
    std::map<RoiId, int> voxels;            // atomic ROIs only
    std::map<LayerId, int> feature_lengths;  // all seven layers
    /// Dimension of the per-image latent shared by every layer.
    int latent_dim = 16;
    int n_stage1 = 1200;
    int n_stage2 = 41;
    int n_test = 50;
    /// Images per category, taken from the front of the test split.
    int category_size = 12;
    double fmri_noise_sigma = 0.3;
    double abm_noise_sigma = 0.0;
    LayerId abm_source_layer = LayerId::Conv3;
    double category_shift = 0.0;
    std::uint64_t seed = 0;

    /// 120 voxels for V1-V4, 180 for LOC/FFA/PPA, 256 features per layer.
    static SynthConfig desk_defaults();
    /// desk_defaults() with the full AlexNet feature lengths.
    static SynthConfig paper_dims();

    int voxel_count(RoiId roi) const;  // composites sum their constituents
    int feature_length(LayerId layer) const;
    std::size_t total_images() const;

    /// Throws DataError describing the first invalid field.
    void validate() const;
};

struct GroundTruth {
    std::vector<std::string> image_ids;  // row order of latents and noise
    Matrix latents;                      // images x latent_dim
    std::map<LayerId, Matrix> loadings;  // features = latents * loadings'
    std::map<RoiId, Matrix> encoding;    // atomic: voxels = features(wired layer) * encoding' + noise
    std::map<RoiId, Matrix> fmri_noise;  // atomic: images x voxels
    Vector abm_weights;                  // unit vector over abm_source_layer features
    Vector abm_noise;                    // images, added before rescaling
    double abm_gain = 1.0;               // abm = gain * (features . w + noise) + offset
    double abm_offset = 0.0;
    LayerId abm_source_layer = LayerId::Conv3;
    double category_shift = 0.0;
    /// Noise-free animal minus object mean ABM; its sign is what compare_categories should recover.
    double expected_category_difference = 0.0;
};

struct SynthDataset {
    SynthConfig config;
    Dataset data;
    GroundTruth truth;
};

/// Generation, with every random draw from one seeded stream in this order:
/// layer loadings, ROI encodings, the ABM weight direction, per-image latents,
/// fMRI noise, ABM noise. Noise is drawn even when its sigma is zero, so the
/// signal part of a dataset does not depend on the noise levels.
///
/// Object-category latents are re-centred onto the animal-category mean, then
/// object features at the ABM source layer move by category_shift along w.
SynthDataset generate_synthetic(const SynthConfig& config);

/// Writes the dataset (core formats + manifest.json) and a `ground_truth/`
/// sidecar under `dir`. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const SynthDataset& dataset, const std::filesystem::path& dir);

GroundTruth read_ground_truth(const std::filesystem::path& dataset_dir);

}  // namespace abmpipe::synth
