#pragma once

// Two-stage ABM model: stage 1 maps an ROI's voxels to a layer's features,
// stage 2 maps a layer's features to ABM. Direct predictions run stage 2 on
// true features; indirect predictions chain stage 1 into stage 2.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abmpipe/core.hpp"
#include "abmpipe/dataset.hpp"
#include "abmpipe/regress.hpp"

namespace abmpipe {

struct CvConfig {
    std::vector<double> lambda_grid = default_lambda_grid();
    int folds = 5;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Skips cross-validation and fits every model at this lambda.
    std::optional<double> fixed_lambda;
};

struct FitRecord {
    std::optional<CvReport> cv;  // empty when fitted at a fixed lambda
    double lambda = 0.0;
    double train_mse = 0.0;
    std::size_t rows = 0;
};

using Stage1Key = std::pair<RoiId, LayerId>;

struct Stage1Result {
    std::map<Stage1Key, RegressionModel> models;
    std::map<Stage1Key, FitRecord> fits;
};

struct Stage2Result {
    std::map<LayerId, RegressionModel> models;
    std::map<LayerId, FitRecord> fits;
};

struct TwoStageModel {
    std::map<Stage1Key, RegressionModel> stage1;  // voxels -> features
    std::map<LayerId, RegressionModel> stage2;    // features -> ABM (one output)
    std::map<Stage1Key, FitRecord> stage1_fits;
    std::map<LayerId, FitRecord> stage2_fits;
    std::size_t n_stage1 = 0;
    std::size_t n_stage2 = 0;
    int folds = 0;
    std::uint64_t seed = 0;

    const RegressionModel& stage1_model(RoiId roi, LayerId layer) const;
    const RegressionModel& stage2_model(LayerId layer) const;
};

/// One model per (ROI, layer) present in the tables, trained on `ids`.
Stage1Result train_stage1(const FmriTables& fmri, const FeatureTables& features,
                          std::span<const std::string> ids, const CvConfig& config);

/// One model per layer, ABM as the single target.
Stage2Result train_stage2(const FeatureTables& features, const LabeledMatrix& abm,
                          std::span<const std::string> ids, const CvConfig& config);

/// Stage 1 on the stage1_train split, stage 2 on stage2_train.
TwoStageModel train_two_stage(const Dataset& dataset, const CvConfig& config);

AbmRecord predict_abm_direct(const FeatureVector& features, const TwoStageModel& model);
AbmRecord predict_abm_indirect(const FmriRecord& fmri, LayerId layer, const TwoStageModel& model);

/// Direct ABM for `ids` x stage-2 layers; columns are layer names.
LabeledMatrix predict_direct_grid(const FeatureTables& features, std::span<const std::string> ids,
                                  const TwoStageModel& model);

/// Indirect ABM from one ROI's voxels for `ids` x stage-2 layers.
LabeledMatrix predict_indirect_grid(const LabeledMatrix& fmri, RoiId roi,
                                    std::span<const std::string> ids, const TwoStageModel& model);

/// Column means of a prediction grid, in column order.
std::vector<double> column_means(const LabeledMatrix& grid);

struct EvaluationReport {
    std::map<Stage1Key, double> mse;  // direct vs indirect over test images
    std::map<RoiId, double> roi_mean;  // arithmetic mean of the per-layer values
    std::size_t test_images = 0;
    std::size_t layers = 0;
};

/// MSE between direct and indirect ABM for every stage-1 (ROI, layer) pair.
/// Test ids are sorted first, so the result does not depend on their order.
EvaluationReport evaluate_rois(const FmriTables& fmri, const FeatureTables& features,
                               std::span<const std::string> test_ids, const TwoStageModel& model);

struct CategoryRow {
    double abm_animal = 0.0;
    double abm_object = 0.0;
    double difference = 0.0;  // abm_animal - abm_object
};

struct CategoryComparison {
    std::map<LayerId, CategoryRow> rows;
};

/// Stage-2 prediction on each group's average feature vector, per layer.
CategoryComparison compare_categories(const FeatureTables& features,
                                      std::span<const std::string> animal_ids,
                                      std::span<const std::string> object_ids,
                                      const TwoStageModel& model);

// Model directory: model.json, stage1/<ROI>_<layer>.json, stage2/<layer>.json, cv_report.csv
void save_two_stage(const TwoStageModel& model, const std::filesystem::path& dir);
TwoStageModel load_two_stage(const std::filesystem::path& dir);

/// `id,selected_lambda,train_mse,rows,cv_mse@<lambda>...`, one row per model.
LabeledMatrix cv_report_table(const TwoStageModel& model);

}  // namespace abmpipe
