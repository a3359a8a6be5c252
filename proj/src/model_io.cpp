#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "abmpipe/csv.hpp"
#include "abmpipe/pipeline.hpp"
#include "json.hpp"

namespace abmpipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "abm-two-stage/1";

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_vector(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json fit_to_json(const FitRecord& fit) {
    json j = {{"lambda", fit.lambda}, {"train_mse", fit.train_mse}, {"rows", fit.rows}};
    if (fit.cv) {
        std::vector<std::vector<double>> fold_mse;
        for (Eigen::Index g = 0; g < fit.cv->fold_mse.rows(); ++g) {
            fold_mse.push_back(to_std(fit.cv->fold_mse.row(g).transpose()));
        }
        j["cv"] = {{"lambda_grid", fit.cv->lambda_grid},
                   {"fold_mse", fold_mse},
                   {"selected_lambda", fit.cv->selected_lambda},
                   {"folds", fit.cv->folds},
                   {"seed", fit.cv->seed}};
    }
    return j;
}

FitRecord fit_from_json(const json& j) {
    FitRecord fit;
    fit.lambda = j.at("lambda").get<double>();
    fit.train_mse = j.at("train_mse").get<double>();
    fit.rows = j.at("rows").get<std::size_t>();
    if (j.contains("cv")) {
        const auto& c = j.at("cv");
        CvReport r;
        r.lambda_grid = c.at("lambda_grid").get<std::vector<double>>();
        r.folds = c.at("folds").get<int>();
        r.seed = c.at("seed").get<std::uint64_t>();
        r.selected_lambda = c.at("selected_lambda").get<double>();
        // Singular grid points (infinite error) are stored as null.
        const auto& rows = c.at("fold_mse");
        r.fold_mse.resize(static_cast<Eigen::Index>(rows.size()), r.folds);
        for (std::size_t g = 0; g < rows.size(); ++g) {
            if (rows[g].size() != static_cast<std::size_t>(r.folds)) throw DataError("cv fold_mse width mismatch");
            for (int f = 0; f < r.folds; ++f) {
                const auto& v = rows[g][static_cast<std::size_t>(f)];
                r.fold_mse(static_cast<Eigen::Index>(g), f) =
                    v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
            }
        }
        fit.cv = std::move(r);
    }
    return fit;
}

void write_model(const RegressionModel& m, const FitRecord& fit, const fs::path& path) {
    std::vector<std::vector<double>> weights;
    weights.reserve(static_cast<std::size_t>(m.weights.rows()));
    for (Eigen::Index r = 0; r < m.weights.rows(); ++r) weights.push_back(to_std(m.weights.row(r).transpose()));
    json j = {{"inputs", m.inputs()},
              {"outputs", m.outputs()},
              {"lambda", m.lambda},
              {"input_mean", to_std(m.input_mean)},
              {"input_scale", to_std(m.input_scale)},
              {"target_mean", to_std(m.target_mean)},
              {"bias", to_std(m.bias)},
              {"weights", weights},
              {"fit", fit_to_json(fit)}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump() << '\n';
}

std::pair<RegressionModel, FitRecord> read_model(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file " + path.string());
    try {
        json j;
        in >> j;
        RegressionModel m;
        m.lambda = j.at("lambda").get<double>();
        m.input_mean = to_vector(j.at("input_mean"));
        m.input_scale = to_vector(j.at("input_scale"));
        m.target_mean = to_vector(j.at("target_mean"));
        m.bias = to_vector(j.at("bias"));
        const auto d = m.input_mean.size();
        const auto k = m.target_mean.size();
        const auto& w = j.at("weights");
        if (m.input_scale.size() != d || m.bias.size() != k || static_cast<Eigen::Index>(w.size()) != k) {
            throw DataError("model file " + path.string() + ": inconsistent array lengths");
        }
        if ((m.input_scale.array() <= 0.0).any()) {
            throw DataError("model file " + path.string() + ": input_scale must be positive");
        }
        m.weights.resize(k, d);
        for (Eigen::Index r = 0; r < k; ++r) {
            const auto row = w.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != d) {
                throw DataError("model file " + path.string() + ": ragged weight matrix");
            }
            for (Eigen::Index c = 0; c < d; ++c) m.weights(r, c) = row[static_cast<std::size_t>(c)];
        }
        return {std::move(m), fit_from_json(j.at("fit"))};
    } catch (const json::exception& e) {
        throw DataError("model file " + path.string() + ": " + e.what());
    }
}

std::string stage1_file(RoiId roi, LayerId layer) {
    return "stage1/" + std::string(roi_name(roi)) + "_" + std::string(layer_name(layer)) + ".json";
}

std::string stage2_file(LayerId layer) { return "stage2/" + std::string(layer_name(layer)) + ".json"; }

std::string lambda_label(double lambda) { return "cv_mse@" + format_double(lambda); }

}  // namespace

LabeledMatrix cv_report_table(const TwoStageModel& model) {
    // Columns for the union of grids, in first-seen order.
    std::vector<double> grid;
    auto note_grid = [&](const FitRecord& fit) {
        if (!fit.cv) return;
        for (double l : fit.cv->lambda_grid) {
            if (std::find(grid.begin(), grid.end(), l) == grid.end()) grid.push_back(l);
        }
    };
    for (const auto& [k, f] : model.stage1_fits) note_grid(f);
    for (const auto& [k, f] : model.stage2_fits) note_grid(f);

    LabeledMatrix t;
    t.columns = {"selected_lambda", "train_mse", "rows"};
    for (double l : grid) t.columns.push_back(lambda_label(l));
    const auto rows = model.stage1_fits.size() + model.stage2_fits.size();
    t.values = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.columns.size()));

    Eigen::Index r = 0;
    auto add = [&](const std::string& id, const FitRecord& fit) {
        t.ids.push_back(id);
        t.values(r, 0) = fit.lambda;
        t.values(r, 1) = fit.train_mse;
        t.values(r, 2) = static_cast<double>(fit.rows);
        if (fit.cv) {
            const auto means = fit.cv->mean_mse();
            for (std::size_t g = 0; g < means.size(); ++g) {
                const auto pos = std::find(grid.begin(), grid.end(), fit.cv->lambda_grid[g]) - grid.begin();
                // Singular grid points have no finite error; the largest double marks them.
                t.values(r, 3 + pos) = std::isfinite(means[g]) ? means[g] : std::numeric_limits<double>::max();
            }
        }
        ++r;
    };
    for (const auto& [key, fit] : model.stage1_fits) {
        add("stage1/" + std::string(roi_name(key.first)) + "/" + std::string(layer_name(key.second)), fit);
    }
    for (const auto& [layer, fit] : model.stage2_fits) add("stage2/" + std::string(layer_name(layer)), fit);
    return t;
}

void save_two_stage(const TwoStageModel& model, const fs::path& dir) {
    fs::create_directories(dir / "stage1");
    fs::create_directories(dir / "stage2");

    json s1 = json::array();
    for (const auto& [key, m] : model.stage1) {
        const auto file = stage1_file(key.first, key.second);
        write_model(m, model.stage1_fits.at(key), dir / file);
        s1.push_back({{"roi", roi_name(key.first)}, {"layer", layer_name(key.second)}, {"path", file}});
    }
    json s2 = json::array();
    for (const auto& [layer, m] : model.stage2) {
        const auto file = stage2_file(layer);
        write_model(m, model.stage2_fits.at(layer), dir / file);
        s2.push_back({{"layer", layer_name(layer)}, {"path", file}});
    }
    json index = {{"format", kModelFormat},
                  {"n_stage1", model.n_stage1},
                  {"n_stage2", model.n_stage2},
                  {"folds", model.folds},
                  {"seed", model.seed},
                  {"stage1", s1},
                  {"stage2", s2}};
    std::ofstream out(dir / "model.json", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "model.json").string());
    out << index.dump(2) << '\n';
    out.close();

    write_matrix_csv(dir / "cv_report.csv", cv_report_table(model));
}

TwoStageModel load_two_stage(const fs::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw DataError("cannot open " + (dir / "model.json").string());
    TwoStageModel model;
    try {
        json index;
        in >> index;
        if (index.value("format", std::string{}) != kModelFormat) {
            throw DataError((dir / "model.json").string() + ": expected format '" + kModelFormat + "'");
        }
        model.n_stage1 = index.at("n_stage1").get<std::size_t>();
        model.n_stage2 = index.at("n_stage2").get<std::size_t>();
        model.folds = index.at("folds").get<int>();
        model.seed = index.at("seed").get<std::uint64_t>();
        for (const auto& e : index.at("stage1")) {
            const Stage1Key key{parse_roi(e.at("roi").get<std::string>()),
                                parse_layer(e.at("layer").get<std::string>())};
            auto [m, fit] = read_model(dir / e.at("path").get<std::string>());
            model.stage1.emplace(key, std::move(m));
            model.stage1_fits.emplace(key, std::move(fit));
        }
        for (const auto& e : index.at("stage2")) {
            const LayerId layer = parse_layer(e.at("layer").get<std::string>());
            auto [m, fit] = read_model(dir / e.at("path").get<std::string>());
            if (m.outputs() != 1) throw DataError("stage-2 model must have one output");
            model.stage2.emplace(layer, std::move(m));
            model.stage2_fits.emplace(layer, std::move(fit));
        }
    } catch (const json::exception& e) {
        throw DataError((dir / "model.json").string() + ": " + e.what());
    }
    return model;
}

}  // namespace abmpipe
