#include "abmpipe/synth.hpp"

#include <cmath>
#include <algorithm>
#include <fstream>
#include <random>

#include "abmpipe/csv.hpp"
#include "json.hpp"

namespace abmpipe::synth {

namespace fs = std::filesystem;
using nlohmann::json;

double compute_abm(double p_lag8, double p_lag2) {
    auto check = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw DataError(std::string(name) + " must be a probability in [0, 1]");
        }
    };
    check(p_lag8, "p_lag8");
    check(p_lag2, "p_lag2");
    return p_lag8 - p_lag2;
}

RsvpResult simulate_rsvp(const ObserverParams& params) {
    (void)compute_abm(params.p_correct_lag8, params.p_correct_lag2);
    if (params.trials_per_lag < 1) throw DataError("trials_per_lag must be at least 1");

    std::mt19937_64 rng(params.seed);
    std::bernoulli_distribution lag2(params.p_correct_lag2);
    std::bernoulli_distribution lag8(params.p_correct_lag8);
    RsvpResult r;
    r.trials_per_lag = params.trials_per_lag;
    for (int t = 0; t < params.trials_per_lag; ++t) {
        r.correct_lag2 += lag2(rng) ? 1 : 0;
        r.correct_lag8 += lag8(rng) ? 1 : 0;
    }
    const double n = params.trials_per_lag;
    r.p_hat_lag2 = r.correct_lag2 / n;
    r.p_hat_lag8 = r.correct_lag8 / n;
    r.empirical_abm = compute_abm(r.p_hat_lag8, r.p_hat_lag2);
    return r;
}

LayerId wired_layer(RoiId roi) {
    switch (roi) {
        case RoiId::V1: return LayerId::Conv1;
        case RoiId::V2: return LayerId::Conv2;
        case RoiId::V3: return LayerId::Conv3;
        case RoiId::V4: return LayerId::Conv4;
        case RoiId::LOC: return LayerId::Conv5;
        case RoiId::FFA: return LayerId::Fc6;
        case RoiId::PPA: return LayerId::Fc7;
        default: throw DataError("ROI " + std::string(roi_name(roi)) + " is composite and has no wired layer");
    }
}

SynthConfig SynthConfig::desk_defaults() {
    SynthConfig c;
    for (RoiId roi : kAtomicRois) {
        const bool higher = roi == RoiId::LOC || roi == RoiId::FFA || roi == RoiId::PPA;
        c.voxels[roi] = higher ? 180 : 120;
    }
    for (LayerId layer : kAllLayers) c.feature_lengths[layer] = 256;
    return c;
}

SynthConfig SynthConfig::paper_dims() {
    SynthConfig c = desk_defaults();
    for (LayerId layer : kAllLayers) c.feature_lengths[layer] = static_cast<int>(paper_feature_length(layer));
    return c;
}

int SynthConfig::voxel_count(RoiId roi) const {
    int total = 0;
    for (RoiId part : roi_composition(roi)) {
        auto it = voxels.find(part);
        if (it == voxels.end()) throw DataError("no voxel count for " + std::string(roi_name(part)));
        total += it->second;
    }
    return total;
}

int SynthConfig::feature_length(LayerId layer) const {
    auto it = feature_lengths.find(layer);
    if (it == feature_lengths.end()) throw DataError("no feature length for " + std::string(layer_name(layer)));
    return it->second;
}

std::size_t SynthConfig::total_images() const {
    return static_cast<std::size_t>(n_stage1) + n_stage2 + n_test;
}

void SynthConfig::validate() const {
    for (RoiId roi : kAtomicRois) {
        if (voxel_count(roi) <= 0) throw DataError("voxel count for " + std::string(roi_name(roi)) + " must be positive");
    }
    for (const auto& [roi, n] : voxels) {
        if (!is_atomic(roi)) throw DataError("voxel counts are set on atomic ROIs only");
    }
    for (LayerId layer : kAllLayers) {
        if (feature_length(layer) <= 0) throw DataError("feature length for " + std::string(layer_name(layer)) + " must be positive");
    }
    if (latent_dim <= 0) throw DataError("latent_dim must be positive");
    if (n_stage1 <= 0 || n_stage2 <= 0 || n_test <= 0) throw DataError("split sizes must be positive");
    if (category_size < 0 || 2 * category_size > n_test) {
        throw DataError("category_size must be in [0, n_test / 2]");
    }
    if (!(fmri_noise_sigma >= 0.0) || !std::isfinite(fmri_noise_sigma)) {
        throw DataError("fmri_noise_sigma must be a finite non-negative number");
    }
    if (!(abm_noise_sigma >= 0.0) || !std::isfinite(abm_noise_sigma)) {
        throw DataError("abm_noise_sigma must be a finite non-negative number");
    }
    if (!std::isfinite(category_shift)) throw DataError("category_shift must be finite");
}

namespace {

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    // Row-major draw order keeps the stream layout independent of Eigen storage.
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = sd * dist(rng);
    }
    return m;
}

std::vector<std::string> make_ids(std::size_t n) {
    const int width = std::max(5, static_cast<int>(std::to_string(n).size()));
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string digits = std::to_string(i + 1);
        digits.insert(0, static_cast<std::size_t>(width) - std::min<std::size_t>(digits.size(), width), '0');
        ids.push_back("img" + digits);
    }
    return ids;
}

LabeledMatrix labeled(std::vector<std::string> ids, Matrix values) {
    LabeledMatrix t;
    t.columns = default_columns(static_cast<std::size_t>(values.cols()));
    t.ids = std::move(ids);
    t.values = std::move(values);
    return t;
}

std::vector<std::string> index_ids(const char* prefix, Eigen::Index n) {
    std::vector<std::string> ids;
    for (Eigen::Index i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
    return ids;
}

void write_plain(const fs::path& path, const char* prefix, const Matrix& m) {
    write_matrix_csv(path, index_ids(prefix, m.rows()), m);
}

Matrix read_plain(const fs::path& path) { return read_matrix_csv(path).values; }

}  // namespace

SynthDataset generate_synthetic(const SynthConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    const auto n_images = static_cast<Eigen::Index>(config.total_images());
    const auto r = static_cast<Eigen::Index>(config.latent_dim);

    SynthDataset out;
    out.config = config;
    GroundTruth& truth = out.truth;
    truth.abm_source_layer = config.abm_source_layer;
    truth.category_shift = config.category_shift;
    truth.image_ids = make_ids(config.total_images());

    for (LayerId layer : kAllLayers) {
        truth.loadings[layer] = gaussian(rng, config.feature_length(layer), r, 1.0 / std::sqrt(static_cast<double>(r)));
    }
    for (RoiId roi : kAtomicRois) {
        const int d = config.feature_length(wired_layer(roi));
        truth.encoding[roi] = gaussian(rng, config.voxel_count(roi), d, 1.0 / std::sqrt(static_cast<double>(d)));
    }
    // w lies in the span of the source layer's loadings, so it is recoverable from features.
    const Matrix& source_loadings = truth.loadings.at(config.abm_source_layer);
    const Vector c = gaussian(rng, r, 1, 1.0);
    truth.abm_weights = (source_loadings * c).normalized();

    truth.latents = gaussian(rng, n_images, r, 1.0);
    for (RoiId roi : kAtomicRois) {
        truth.fmri_noise[roi] = gaussian(rng, n_images, config.voxel_count(roi), config.fmri_noise_sigma);
    }
    truth.abm_noise = gaussian(rng, n_images, 1, config.abm_noise_sigma);

    // Splits: stage1, stage2, test in id order; categories from the front of test.
    Splits& splits = out.data.splits;
    const auto& ids = truth.image_ids;
    const auto s1_end = static_cast<std::size_t>(config.n_stage1);
    const auto s2_end = s1_end + static_cast<std::size_t>(config.n_stage2);
    splits.stage1_train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(s1_end));
    splits.stage2_train.assign(ids.begin() + static_cast<std::ptrdiff_t>(s1_end), ids.begin() + static_cast<std::ptrdiff_t>(s2_end));
    splits.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(s2_end), ids.end());

    const auto cs = static_cast<Eigen::Index>(config.category_size);
    const auto animal_start = static_cast<Eigen::Index>(s2_end);
    const auto object_start = animal_start + cs;
    if (cs > 0) {
        const Vector animal_mean = truth.latents.middleRows(animal_start, cs).colwise().mean().transpose();
        const Vector object_mean = truth.latents.middleRows(object_start, cs).colwise().mean().transpose();
        truth.latents.middleRows(object_start, cs).rowwise() += (animal_mean - object_mean).transpose();
        out.data.categories["animal"].assign(splits.test.begin(), splits.test.begin() + cs);
        out.data.categories["object"].assign(splits.test.begin() + cs, splits.test.begin() + 2 * cs);
    }

    std::map<LayerId, Matrix> features;
    for (LayerId layer : kAllLayers) features[layer] = truth.latents * truth.loadings.at(layer).transpose();
    Matrix& source = features.at(config.abm_source_layer);
    if (cs > 0) source.middleRows(object_start, cs).rowwise() += config.category_shift * truth.abm_weights.transpose();

    for (RoiId roi : kAtomicRois) {
        Matrix voxels = features.at(wired_layer(roi)) * truth.encoding.at(roi).transpose() + truth.fmri_noise.at(roi);
        out.data.fmri[roi] = labeled(ids, std::move(voxels));
    }
    for (RoiId roi : kCompositeRois) out.data.fmri[roi] = concatenate_rois(out.data.fmri, roi);

    const Vector raw = source * truth.abm_weights + truth.abm_noise;
    const double lo = raw.minCoeff();
    const double hi = raw.maxCoeff();
    if (hi - lo > 0.0) {
        truth.abm_gain = 0.75 / (hi - lo);
        truth.abm_offset = 0.05 - truth.abm_gain * lo;
    } else {
        truth.abm_gain = 0.0;
        truth.abm_offset = 0.425;
    }
    LabeledMatrix abm;
    abm.ids = ids;
    abm.columns = {"abm"};
    abm.values = (truth.abm_gain * raw.array() + truth.abm_offset).matrix();
    out.data.abm = std::move(abm);

    if (cs > 0) {
        const Vector diff = (source.middleRows(animal_start, cs).colwise().mean() -
                             source.middleRows(object_start, cs).colwise().mean()).transpose();
        truth.expected_category_difference = truth.abm_gain * diff.dot(truth.abm_weights);
    }

    for (auto& [layer, values] : features) out.data.features[layer] = labeled(ids, std::move(values));
    return out;
}

fs::path write_synthetic_dataset(const SynthDataset& ds, const fs::path& dir) {
    const fs::path manifest = save_dataset(ds.data, dir);
    const fs::path gt = dir / "ground_truth";
    fs::create_directories(gt);
    const auto& t = ds.truth;

    LabeledMatrix latents = labeled(t.image_ids, t.latents);
    write_matrix_csv(gt / "latents.csv", latents);
    for (const auto& [layer, m] : t.loadings) write_plain(gt / ("loadings_" + std::string(layer_name(layer)) + ".csv"), "f", m);
    for (const auto& [roi, m] : t.encoding) write_plain(gt / ("encoding_" + std::string(roi_name(roi)) + ".csv"), "v", m);
    for (const auto& [roi, m] : t.fmri_noise) {
        write_matrix_csv(gt / ("fmri_noise_" + std::string(roi_name(roi)) + ".csv"), labeled(t.image_ids, m));
    }
    write_plain(gt / "abm_weights.csv", "w", t.abm_weights.transpose());
    write_matrix_csv(gt / "abm_noise.csv", t.image_ids, t.abm_noise, std::vector<std::string>{"noise"});

    json wiring = json::object();
    for (RoiId roi : kAtomicRois) wiring[std::string(roi_name(roi))] = layer_name(wired_layer(roi));
    json voxels = json::object();
    for (const auto& [roi, n] : ds.config.voxels) voxels[std::string(roi_name(roi))] = n;
    json lengths = json::object();
    for (const auto& [layer, n] : ds.config.feature_lengths) lengths[std::string(layer_name(layer))] = n;

    json j = {{"format", "abm-ground-truth/1"},
              {"seed", ds.config.seed},
              {"latent_dim", ds.config.latent_dim},
              {"voxels", voxels},
              {"feature_lengths", lengths},
              {"wiring", wiring},
              {"fmri_noise_sigma", ds.config.fmri_noise_sigma},
              {"abm_noise_sigma", ds.config.abm_noise_sigma},
              {"abm_source_layer", layer_name(t.abm_source_layer)},
              {"abm_gain", t.abm_gain},
              {"abm_offset", t.abm_offset},
              {"category_shift", t.category_shift},
              {"expected_category_difference", t.expected_category_difference},
              {"expected_category_sign", t.expected_category_difference > 0 ? 1 : (t.expected_category_difference < 0 ? -1 : 0)},
              {"formulas",
               {{"features", "latents * loadings_<layer>^T"},
                {"fmri", "features(wiring[roi]) * encoding_<roi>^T + fmri_noise_<roi>"},
                {"abm", "abm_gain * (features(abm_source_layer) . abm_weights + abm_noise) + abm_offset"}}}};
    std::ofstream out(gt / "truth.json", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (gt / "truth.json").string());
    out << j.dump(2) << '\n';
    return manifest;
}

GroundTruth read_ground_truth(const fs::path& dataset_dir) {
    const fs::path gt = dataset_dir / "ground_truth";
    std::ifstream in(gt / "truth.json");
    if (!in) throw DataError("cannot open " + (gt / "truth.json").string());
    json j;
    GroundTruth t;
    try {
        in >> j;
        t.abm_source_layer = parse_layer(j.at("abm_source_layer").get<std::string>());
        t.abm_gain = j.at("abm_gain").get<double>();
        t.abm_offset = j.at("abm_offset").get<double>();
        t.category_shift = j.at("category_shift").get<double>();
        t.expected_category_difference = j.at("expected_category_difference").get<double>();
    } catch (const json::exception& e) {
        throw DataError("truth.json: " + std::string(e.what()));
    }
    const auto latents = read_matrix_csv(gt / "latents.csv");
    t.image_ids = latents.ids;
    t.latents = latents.values;
    for (LayerId layer : kAllLayers) {
        t.loadings[layer] = read_plain(gt / ("loadings_" + std::string(layer_name(layer)) + ".csv"));
    }
    for (RoiId roi : kAtomicRois) {
        t.encoding[roi] = read_plain(gt / ("encoding_" + std::string(roi_name(roi)) + ".csv"));
        t.fmri_noise[roi] = read_matrix_csv(gt / ("fmri_noise_" + std::string(roi_name(roi)) + ".csv")).values;
    }
    t.abm_weights = read_plain(gt / "abm_weights.csv").row(0).transpose();
    t.abm_noise = read_matrix_csv(gt / "abm_noise.csv").values.col(0);
    return t;
}

}  // namespace abmpipe::synth
