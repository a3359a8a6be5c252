#pragma once

// Dataset manifest (JSON) and the in-memory dataset it describes.
//
// Manifest layout, paths relative to the manifest's directory:
//
//   {
//     "format": "abm-dataset/1",
//     "features":   {"conv1": "features/conv1.csv", ...},
//     "fmri":       {"V1": "fmri/V1.csv", ...},
//     "abm":        "abm.csv",
//     "images":     {"path": "images.csv", "channels": 3, "height": 227, "width": 227},
//     "splits":     {"stage1_train": [...], "stage2_train": [...], "test": [...]},
//     "categories": {"animal": [...], "object": [...]}
//   }
//
// Every member is optional except "splits"; commands check for what they need.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "abmpipe/core.hpp"

namespace abmpipe {

inline constexpr const char* kManifestFormat = "abm-dataset/1";

struct ImageSource {
    std::filesystem::path path;
    int channels = 3;
    int height = 227;
    int width = 227;
};

struct Splits {
    std::vector<std::string> stage1_train;
    std::vector<std::string> stage2_train;
    std::vector<std::string> test;
};

struct DatasetManifest {
    std::filesystem::path base_dir;  // directory the relative paths resolve against
    std::map<LayerId, std::filesystem::path> features;
    std::map<RoiId, std::filesystem::path> fmri;
    std::optional<std::filesystem::path> abm;
    std::optional<ImageSource> images;
    Splits splits;
    std::map<std::string, std::vector<std::string>> categories;

    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

using FeatureTables = std::map<LayerId, LabeledMatrix>;
using FmriTables = std::map<RoiId, LabeledMatrix>;

struct Dataset {
    FeatureTables features;
    FmriTables fmri;
    LabeledMatrix abm;  // single column `abm`
    Splits splits;
    std::map<std::string, std::vector<std::string>> categories;
};

/// Loads every table the manifest lists.
Dataset load_dataset(const DatasetManifest& manifest);

/// Writes tables under `dir` with the standard relative layout and returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Builds a composite-ROI table by concatenating constituent columns, rows aligned by id.
LabeledMatrix concatenate_rois(const FmriTables& atomic, RoiId composite);

/// Table form of a record list; all records must share one length.
LabeledMatrix features_to_table(std::span<const FeatureVector> records);
LabeledMatrix fmri_to_table(std::span<const FmriRecord> records);
LabeledMatrix abm_to_table(std::span<const AbmRecord> records);

}  // namespace abmpipe
