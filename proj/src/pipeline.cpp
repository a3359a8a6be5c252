#include "abmpipe/pipeline.hpp"

#include <algorithm>

#include "abmpipe/cnn.hpp"
#include "abmpipe/parallel.hpp"

namespace abmpipe {

namespace {

std::string key_text(RoiId roi, LayerId layer) {
    return "(" + std::string(roi_name(roi)) + ", " + std::string(layer_name(layer)) + ")";
}

std::string features_label(LayerId layer) { return "features " + std::string(layer_name(layer)); }
std::string fmri_label(RoiId roi) { return "fMRI " + std::string(roi_name(roi)); }

double matrix_mse(const Matrix& a, const Matrix& b) {
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

FitRecord fit_at(const Matrix& X, const Matrix& Y, double lambda, std::optional<CvReport> cv,
                 RegressionModel& out) {
    out = fit_ridge(X, Y, lambda);
    FitRecord rec;
    rec.cv = std::move(cv);
    rec.lambda = lambda;
    rec.train_mse = matrix_mse(predict_rows(out, X), Y);
    rec.rows = static_cast<std::size_t>(X.rows());
    return rec;
}

void check_rows(std::span<const std::string> ids, const CvConfig& config, const char* stage) {
    if (ids.empty()) throw DataError(std::string(stage) + ": no training images");
    if (!config.fixed_lambda && ids.size() < static_cast<std::size_t>(config.folds)) {
        throw DataError(std::string(stage) + ": " + std::to_string(ids.size()) +
                        " training images is fewer than " + std::to_string(config.folds) + " folds");
    }
}

std::vector<LayerId> stage2_layers(const TwoStageModel& model) {
    std::vector<LayerId> out;
    for (const auto& [layer, m] : model.stage2) out.push_back(layer);
    return out;
}

}  // namespace

const RegressionModel& TwoStageModel::stage1_model(RoiId roi, LayerId layer) const {
    auto it = stage1.find({roi, layer});
    if (it == stage1.end()) throw DataError("no stage-1 model for " + key_text(roi, layer));
    return it->second;
}

const RegressionModel& TwoStageModel::stage2_model(LayerId layer) const {
    auto it = stage2.find(layer);
    if (it == stage2.end()) {
        throw DataError("no stage-2 model for layer " + std::string(layer_name(layer)));
    }
    return it->second;
}

Stage1Result train_stage1(const FmriTables& fmri, const FeatureTables& features,
                          std::span<const std::string> ids, const CvConfig& config) {
    check_rows(ids, config, "stage 1");
    if (fmri.empty()) throw DataError("stage 1: no fMRI tables");
    if (features.empty()) throw DataError("stage 1: no feature tables");

    std::vector<RoiId> rois;
    for (const auto& [roi, t] : fmri) rois.push_back(roi);
    std::vector<LayerId> layers;
    for (const auto& [layer, t] : features) layers.push_back(layer);

    // Align everything up front so id errors surface before any fitting.
    std::vector<Matrix> X(rois.size());
    for (std::size_t r = 0; r < rois.size(); ++r) {
        X[r] = fmri.at(rois[r]).select_rows(ids, fmri_label(rois[r]));
    }
    std::vector<Matrix> Y(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Y[l] = features.at(layers[l]).select_rows(ids, features_label(layers[l]));
    }

    std::vector<std::vector<CvReport>> reports(rois.size());
    if (!config.fixed_lambda) {
        parallel_for(rois.size(), config.threads, [&](std::size_t r) {
            reports[r] = kfold_cv_blocks(X[r], Y, config.lambda_grid, config.folds, config.seed, ids);
        });
    }

    const std::size_t jobs = rois.size() * layers.size();
    std::vector<RegressionModel> models(jobs);
    std::vector<FitRecord> fits(jobs);
    parallel_for(jobs, config.threads, [&](std::size_t job) {
        const std::size_t r = job / layers.size();
        const std::size_t l = job % layers.size();
        std::optional<CvReport> cv;
        double lambda = config.fixed_lambda.value_or(0.0);
        if (!config.fixed_lambda) {
            cv = reports[r][l];
            lambda = cv->selected_lambda;
        }
        fits[job] = fit_at(X[r], Y[l], lambda, std::move(cv), models[job]);
    });

    Stage1Result result;
    for (std::size_t job = 0; job < jobs; ++job) {
        const Stage1Key key{rois[job / layers.size()], layers[job % layers.size()]};
        result.models.emplace(key, std::move(models[job]));
        result.fits.emplace(key, std::move(fits[job]));
    }
    return result;
}

Stage2Result train_stage2(const FeatureTables& features, const LabeledMatrix& abm,
                          std::span<const std::string> ids, const CvConfig& config) {
    check_rows(ids, config, "stage 2");
    if (features.empty()) throw DataError("stage 2: no feature tables");
    if (abm.cols() != 1) throw DataError("stage 2: ABM table must have one value column");

    const Matrix y = abm.select_rows(ids, "ABM labels");
    std::vector<LayerId> layers;
    std::vector<Matrix> X;
    for (const auto& [layer, table] : features) {
        layers.push_back(layer);
        X.push_back(table.select_rows(ids, features_label(layer)));
    }

    std::vector<RegressionModel> models(layers.size());
    std::vector<FitRecord> fits(layers.size());
    parallel_for(layers.size(), config.threads, [&](std::size_t l) {
        std::optional<CvReport> cv;
        double lambda = config.fixed_lambda.value_or(0.0);
        if (!config.fixed_lambda) {
            cv = kfold_cv(X[l], y, config.lambda_grid, config.folds, config.seed, ids);
            lambda = cv->selected_lambda;
        }
        fits[l] = fit_at(X[l], y, lambda, std::move(cv), models[l]);
    });

    Stage2Result result;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        result.models.emplace(layers[l], std::move(models[l]));
        result.fits.emplace(layers[l], std::move(fits[l]));
    }
    return result;
}

TwoStageModel train_two_stage(const Dataset& dataset, const CvConfig& config) {
    auto s1 = train_stage1(dataset.fmri, dataset.features, dataset.splits.stage1_train, config);
    auto s2 = train_stage2(dataset.features, dataset.abm, dataset.splits.stage2_train, config);
    TwoStageModel model;
    model.stage1 = std::move(s1.models);
    model.stage1_fits = std::move(s1.fits);
    model.stage2 = std::move(s2.models);
    model.stage2_fits = std::move(s2.fits);
    model.n_stage1 = dataset.splits.stage1_train.size();
    model.n_stage2 = dataset.splits.stage2_train.size();
    model.folds = config.fixed_lambda ? 0 : config.folds;
    model.seed = config.seed;
    return model;
}

AbmRecord predict_abm_direct(const FeatureVector& features, const TwoStageModel& model) {
    const auto& m = model.stage2_model(features.layer);
    return AbmRecord{features.image_id, predict(m, features.values)(0)};
}

AbmRecord predict_abm_indirect(const FmriRecord& fmri, LayerId layer, const TwoStageModel& model) {
    const auto& s1 = model.stage1_model(fmri.roi, layer);
    const auto& s2 = model.stage2_model(layer);
    if (static_cast<Eigen::Index>(fmri.voxels.size()) != s1.inputs()) {
        throw DataError("fMRI record '" + fmri.image_id + "' has " + std::to_string(fmri.voxels.size()) +
                        " voxels, stage-1 model " + key_text(fmri.roi, layer) + " expects " +
                        std::to_string(s1.inputs()));
    }
    const Vector predicted = predict(s1, fmri.voxels);
    return AbmRecord{fmri.image_id, predict(s2, {predicted.data(), static_cast<std::size_t>(predicted.size())})(0)};
}

LabeledMatrix predict_direct_grid(const FeatureTables& features, std::span<const std::string> ids,
                                  const TwoStageModel& model) {
    const auto layers = stage2_layers(model);
    LabeledMatrix grid;
    grid.ids.assign(ids.begin(), ids.end());
    grid.values.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(layers.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        auto it = features.find(layers[l]);
        if (it == features.end()) throw DataError("missing " + features_label(layers[l]));
        const Matrix X = it->second.select_rows(ids, features_label(layers[l]));
        grid.values.col(static_cast<Eigen::Index>(l)) = predict_rows(model.stage2_model(layers[l]), X).col(0);
        grid.columns.emplace_back(layer_name(layers[l]));
    }
    return grid;
}

LabeledMatrix predict_indirect_grid(const LabeledMatrix& fmri, RoiId roi,
                                    std::span<const std::string> ids, const TwoStageModel& model) {
    const auto layers = stage2_layers(model);
    const Matrix X = fmri.select_rows(ids, fmri_label(roi));
    LabeledMatrix grid;
    grid.ids.assign(ids.begin(), ids.end());
    grid.values.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(layers.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& s1 = model.stage1_model(roi, layers[l]);
        if (X.cols() != s1.inputs()) {
            throw DataError(fmri_label(roi) + " has " + std::to_string(X.cols()) +
                            " voxels, stage-1 model expects " + std::to_string(s1.inputs()));
        }
        const Matrix feats = predict_rows(s1, X);
        grid.values.col(static_cast<Eigen::Index>(l)) = predict_rows(model.stage2_model(layers[l]), feats).col(0);
        grid.columns.emplace_back(layer_name(layers[l]));
    }
    return grid;
}

std::vector<double> column_means(const LabeledMatrix& grid) {
    if (grid.rows() == 0) throw DataError("column_means: empty grid");
    std::vector<double> out(grid.cols());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = grid.values.col(static_cast<Eigen::Index>(j)).mean();
    }
    return out;
}

EvaluationReport evaluate_rois(const FmriTables& fmri, const FeatureTables& features,
                               std::span<const std::string> test_ids, const TwoStageModel& model) {
    if (test_ids.empty()) throw DataError("evaluate_rois: no test images");
    if (model.stage2.empty()) throw DataError("evaluate_rois: model has no stage-2 layers");
    std::vector<std::string> ids(test_ids.begin(), test_ids.end());
    std::sort(ids.begin(), ids.end());

    std::vector<RoiId> rois;
    for (const auto& [key, m] : model.stage1) {
        if (rois.empty() || rois.back() != key.first) rois.push_back(key.first);
    }
    if (rois.empty()) throw DataError("evaluate_rois: model has no stage-1 models");
    for (RoiId roi : rois) {
        if (!fmri.contains(roi)) throw DataError("evaluate_rois: no test " + fmri_label(roi));
    }

    const LabeledMatrix direct = predict_direct_grid(features, ids, model);
    const auto layers = stage2_layers(model);

    EvaluationReport report;
    report.test_images = ids.size();
    report.layers = layers.size();
    for (RoiId roi : rois) {
        const LabeledMatrix indirect = predict_indirect_grid(fmri.at(roi), roi, ids, model);
        double sum = 0.0;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto col = static_cast<Eigen::Index>(l);
            const double e = (direct.values.col(col) - indirect.values.col(col)).squaredNorm() /
                             static_cast<double>(ids.size());
            report.mse[{roi, layers[l]}] = e;
            sum += e;
        }
        report.roi_mean[roi] = sum / static_cast<double>(layers.size());
    }
    return report;
}

CategoryComparison compare_categories(const FeatureTables& features,
                                      std::span<const std::string> animal_ids,
                                      std::span<const std::string> object_ids,
                                      const TwoStageModel& model) {
    if (animal_ids.empty()) throw DataError("compare_categories: empty animal category");
    if (object_ids.empty()) throw DataError("compare_categories: empty object category");

    auto group = [&](LayerId layer, const LabeledMatrix& table, std::span<const std::string> ids,
                     const std::string& label) {
        const Matrix rows = table.select_rows(ids, features_label(layer));
        std::vector<FeatureVector> records;
        records.reserve(ids.size());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) {
            std::vector<double> v(static_cast<std::size_t>(rows.cols()));
            for (Eigen::Index j = 0; j < rows.cols(); ++j) v[static_cast<std::size_t>(j)] = rows(i, j);
            records.push_back({layer, ids[static_cast<std::size_t>(i)], std::move(v)});
        }
        return cnn::average_features(records, label);
    };

    CategoryComparison out;
    for (LayerId layer : stage2_layers(model)) {
        auto it = features.find(layer);
        if (it == features.end()) throw DataError("compare_categories: missing " + features_label(layer));
        const auto animal = group(layer, it->second, animal_ids, "animal");
        const auto object = group(layer, it->second, object_ids, "object");
        CategoryRow row;
        row.abm_animal = predict_abm_direct(animal, model).abm;
        row.abm_object = predict_abm_direct(object, model).abm;
        row.difference = row.abm_animal - row.abm_object;
        out.rows[layer] = row;
    }
    return out;
}

}  // namespace abmpipe
