#include "abmpipe/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "abmpipe/cnn.hpp"
#include "abmpipe/csv.hpp"
#include "abmpipe/dataset.hpp"
#include "abmpipe/parallel.hpp"
#include "abmpipe/pipeline.hpp"
#include "abmpipe/synth.hpp"
#include "json.hpp"

namespace abmpipe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// A flag value that parses but is out of its domain; reported with usage.
struct FlagError : DataError {
    using DataError::DataError;
};

struct CommonFlags {
    std::uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false;

    int effective_threads() const { return deterministic ? 1 : threads; }
};

void add_seed(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--seed", flags.seed, "Random seed")->envname(kSeedEnv)->capture_default_str();
}

void add_threads(CLI::App* sub, CommonFlags& flags) {
    sub->add_option("--threads", flags.threads, "Worker threads for independent work")->capture_default_str();
    sub->add_flag("--deterministic", flags.deterministic, "Force single-threaded execution");
}

void check_threads(const CommonFlags& flags) {
    if (flags.threads < 1) throw FlagError("--threads must be at least 1");
}

/// Output directory written as `<target>.partial` and renamed into place on commit.
class StagedDir {
public:
    explicit StagedDir(const std::string& target) {
        fs::path t = fs::path(target).lexically_normal();
        if (!t.empty() && t.filename().empty()) t = t.parent_path();
        if (t.empty() || t == ".") throw FlagError("--out must name a directory");
        target_ = t;
        staging_ = fs::path(t.string() + ".partial");
        if (fs::exists(target_) && !fs::is_directory(target_)) {
            throw DataError("output path " + target_.string() + " exists and is not a directory");
        }
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }
    StagedDir(const StagedDir&) = delete;
    StagedDir& operator=(const StagedDir&) = delete;
    ~StagedDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    const fs::path& path() const { return staging_; }
    const fs::path& target() const { return target_; }

    void commit() {
        fs::remove_all(target_);
        fs::rename(staging_, target_);
        committed_ = true;
    }

private:
    fs::path target_;
    fs::path staging_;
    bool committed_ = false;
};

/// Every option of `sub` with its resolved value (given, from the environment, or default).
json resolved_options(const CLI::App* sub) {
    json options = json::object();
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty()) continue;  // skips --help
        const std::string key = opt->get_lnames().front();
        if (key == "help") continue;
        if (opt->count() > 0) {
            const auto& results = opt->results();
            if (opt->get_type_size_max() == 0) {
                options[key] = true;
            } else if (results.size() == 1) {
                options[key] = results.front();
            } else {
                options[key] = results;
            }
        } else if (opt->get_type_size_max() == 0) {
            options[key] = false;
        } else {
            const std::string def = opt->get_default_str();
            options[key] = def.empty() ? json(nullptr) : json(def);
        }
    }
    return options;
}

void write_run_config(const fs::path& dir, const CLI::App* sub, const json& resolved) {
    json j = {{"command", sub->get_name()}, {"options", resolved_options(sub)}, {"resolved", resolved}};
    std::ofstream out(dir / "run_config.json", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + (dir / "run_config.json").string());
    out << j.dump(2) << '\n';
}

LayerId layer_flag(const std::string& name, const char* flag) {
    try {
        return parse_layer(name);
    } catch (const DataError& e) {
        throw FlagError(std::string(flag) + ": " + e.what());
    }
}

std::vector<LayerId> layers_flag(const std::vector<std::string>& names) {
    if (names.empty()) return {kAllLayers.begin(), kAllLayers.end()};
    std::vector<LayerId> layers;
    for (const auto& n : names) {
        const LayerId l = layer_flag(n, "--layers");
        if (std::find(layers.begin(), layers.end(), l) != layers.end()) {
            throw FlagError("--layers: " + n + " listed twice");
        }
        layers.push_back(l);
    }
    std::sort(layers.begin(), layers.end(), [](LayerId a, LayerId b) { return layer_index(a) < layer_index(b); });
    return layers;
}

/// Adds composite ROI tables the manifest does not list but whose constituents are present.
void complete_composites(FmriTables& fmri) {
    for (RoiId roi : kCompositeRois) {
        if (fmri.contains(roi)) continue;
        const auto parts = roi_composition(roi);
        if (std::all_of(parts.begin(), parts.end(), [&](RoiId p) { return fmri.contains(p); })) {
            fmri[roi] = concatenate_rois(fmri, roi);
        }
    }
}

Dataset load_from(const std::string& manifest_path) {
    Dataset ds = load_dataset(read_manifest(manifest_path));
    complete_composites(ds.fmri);
    return ds;
}

std::string text(double v) { return format_double(v); }

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

struct GenSynthFlags {
    CommonFlags common;
    std::string out;
    int n_stage1 = 1200;
    int n_stage2 = 41;
    int n_test = 50;
    double fmri_noise = 0.3;
    double abm_noise = 0.0;
    std::string source_layer = "conv3";
    double category_shift = 0.0;
    int category_size = 12;
    int latent_dim = 16;
    int feature_length = 256;
    bool paper_dims = false;
    int voxels_early = 120;
    int voxels_late = 180;
};

void setup_gen_synth(CLI::App* sub, GenSynthFlags& f) {
    sub->add_option("--out", f.out, "Dataset directory to create")->required();
    add_seed(sub, f.common);
    sub->add_option("--n-stage1", f.n_stage1, "Stage-1 training images")->capture_default_str();
    sub->add_option("--n-stage2", f.n_stage2, "Stage-2 training images")->capture_default_str();
    sub->add_option("--n-test", f.n_test, "Test images")->capture_default_str();
    sub->add_option("--fmri-noise", f.fmri_noise, "fMRI noise standard deviation")->capture_default_str();
    sub->add_option("--abm-noise", f.abm_noise, "ABM noise standard deviation")->capture_default_str();
    sub->add_option("--source-layer", f.source_layer, "Layer the ABM is generated from")->capture_default_str();
    sub->add_option("--category-shift", f.category_shift, "Object-category shift along w")->capture_default_str();
    sub->add_option("--category-size", f.category_size, "Images per category")->capture_default_str();
    sub->add_option("--latent-dim", f.latent_dim, "Shared latent dimension")->capture_default_str();
    sub->add_option("--feature-length", f.feature_length, "Features per layer")->capture_default_str();
    sub->add_flag("--paper-dims", f.paper_dims, "Use the full AlexNet feature lengths");
    sub->add_option("--voxels-early", f.voxels_early, "Voxels in each of V1-V4")->capture_default_str();
    sub->add_option("--voxels-late", f.voxels_late, "Voxels in each of LOC, FFA, PPA")->capture_default_str();
}

int cmd_gen_synth(const CLI::App* sub, const GenSynthFlags& f, std::ostream& out) {
    synth::SynthConfig cfg = f.paper_dims ? synth::SynthConfig::paper_dims() : synth::SynthConfig::desk_defaults();
    if (!f.paper_dims) {
        for (LayerId layer : kAllLayers) cfg.feature_lengths[layer] = f.feature_length;
    }
    for (RoiId roi : kAtomicRois) {
        const bool late = roi == RoiId::LOC || roi == RoiId::FFA || roi == RoiId::PPA;
        cfg.voxels[roi] = late ? f.voxels_late : f.voxels_early;
    }
    cfg.n_stage1 = f.n_stage1;
    cfg.n_stage2 = f.n_stage2;
    cfg.n_test = f.n_test;
    cfg.fmri_noise_sigma = f.fmri_noise;
    cfg.abm_noise_sigma = f.abm_noise;
    cfg.abm_source_layer = layer_flag(f.source_layer, "--source-layer");
    cfg.category_shift = f.category_shift;
    cfg.category_size = f.category_size;
    cfg.latent_dim = f.latent_dim;
    cfg.seed = f.common.seed;
    try {
        cfg.validate();
    } catch (const DataError& e) {
        throw FlagError(e.what());
    }

    const synth::SynthDataset ds = synth::generate_synthetic(cfg);
    StagedDir dir(f.out);
    synth::write_synthetic_dataset(ds, dir.path());
    write_run_config(dir.path(), sub, {{"seed", cfg.seed}});
    dir.commit();
    out << (dir.target() / "manifest.json").string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct ExtractFlags {
    CommonFlags common;
    std::string manifest;
    std::string out;
    std::string weights;
    std::optional<std::uint64_t> weight_seed;
    std::vector<std::string> layers;
};

void setup_extract(CLI::App* sub, ExtractFlags& f) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest with an images entry")->required();
    sub->add_option("--out", f.out, "Directory for features_<layer>.csv")->required();
    auto* w = sub->add_option("--weights", f.weights, "Weight directory (weights.json)");
    auto* s = sub->add_option("--weight-seed", f.weight_seed, "Initialize AlexNet weights from this seed");
    w->excludes(s);
    sub->add_option("--layers", f.layers, "Comma-separated layers (default: all)")->delimiter(',');
    add_seed(sub, f.common);
    add_threads(sub, f.common);
}

int cmd_extract(const CLI::App* sub, const ExtractFlags& f, std::ostream& out) {
    check_threads(f.common);
    const std::vector<LayerId> layers = layers_flag(f.layers);
    const DatasetManifest manifest = read_manifest(f.manifest);
    if (!manifest.images) throw DataError(f.manifest + ": manifest has no images entry");
    const ImageSource& src = *manifest.images;

    const cnn::NetworkWeights weights =
        f.weights.empty() ? cnn::init_weights(cnn::Architecture::alexnet(), f.weight_seed.value_or(f.common.seed))
                          : cnn::load_weights(f.weights);
    const cnn::Shape3 input{src.channels, src.height, src.width};
    if (!(weights.arch.input == input)) {
        throw DataError("images are " + std::to_string(src.channels) + "x" + std::to_string(src.height) + "x" +
                        std::to_string(src.width) + " but the network expects " +
                        std::to_string(weights.arch.input.channels) + "x" +
                        std::to_string(weights.arch.input.height) + "x" + std::to_string(weights.arch.input.width));
    }

    const LabeledMatrix images = read_matrix_csv(manifest.resolve(src.path));
    if (images.cols() != input.size()) {
        throw DataError("image table has " + std::to_string(images.cols()) + " values per row, expected " +
                        std::to_string(input.size()));
    }

    std::map<LayerId, Matrix> features;
    for (LayerId layer : layers) {
        features[layer].resize(static_cast<Eigen::Index>(images.rows()),
                               static_cast<Eigen::Index>(weights.arch.feature_length(layer)));
    }
    parallel_for(images.rows(), f.common.effective_threads(), [&](std::size_t i) {
        const ImageTensor image(src.channels, src.height, src.width, images.row(i));
        const auto acts = cnn::forward_layers(image, weights, layers);
        for (LayerId layer : layers) {
            const auto& a = acts.at(layer);
            features.at(layer).row(static_cast<Eigen::Index>(i)) =
                Eigen::Map<const Eigen::RowVectorXd>(a.data(), static_cast<Eigen::Index>(a.size()));
        }
    });

    StagedDir dir(f.out);
    for (LayerId layer : layers) {
        write_matrix_csv(dir.path() / ("features_" + std::string(layer_name(layer)) + ".csv"), images.ids,
                         features.at(layer));
    }
    write_run_config(dir.path(), sub, {{"weights", weights.provenance}, {"threads", f.common.effective_threads()}});
    dir.commit();
    out << "extracted " << layers.size() << " layer(s) for " << images.rows() << " image(s) into "
        << dir.target().string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainFlags {
    CommonFlags common;
    std::string manifest;
    std::string out;
    int folds = 5;
    std::vector<double> lambdas;
    std::optional<double> lambda;
};

void setup_train(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest")->required();
    sub->add_option("--out", f.out, "Model directory to create")->required();
    sub->add_option("--folds", f.folds, "Cross-validation folds")->capture_default_str();
    auto* grid = sub->add_option("--lambdas", f.lambdas, "Comma-separated ridge penalty grid")->delimiter(',');
    auto* fixed = sub->add_option("--lambda", f.lambda, "Fit every model at this penalty, skipping CV");
    grid->excludes(fixed);
    add_seed(sub, f.common);
    add_threads(sub, f.common);
}

CvConfig cv_config(const TrainFlags& f) {
    check_threads(f.common);
    CvConfig cfg;
    if (!f.lambdas.empty()) cfg.lambda_grid = f.lambdas;
    for (double l : cfg.lambda_grid) {
        if (!std::isfinite(l) || l < 0.0) throw FlagError("--lambdas: values must be finite and non-negative");
    }
    if (f.lambda && (!std::isfinite(*f.lambda) || *f.lambda < 0.0)) {
        throw FlagError("--lambda must be finite and non-negative");
    }
    if (f.folds < 2) throw FlagError("--folds must be at least 2");
    cfg.folds = f.folds;
    cfg.fixed_lambda = f.lambda;
    cfg.seed = f.common.seed;
    cfg.threads = f.common.effective_threads();
    return cfg;
}

int cmd_train(const CLI::App* sub, const TrainFlags& f, std::ostream& out) {
    const CvConfig cfg = cv_config(f);
    const Dataset ds = load_from(f.manifest);
    const TwoStageModel model = train_two_stage(ds, cfg);

    StagedDir dir(f.out);
    save_two_stage(model, dir.path());
    json grid = json::array();
    for (double l : cfg.lambda_grid) grid.push_back(l);
    write_run_config(dir.path(), sub,
                     {{"lambda_grid", grid}, {"folds", cfg.folds}, {"threads", cfg.threads}, {"seed", cfg.seed}});
    dir.commit();
    out << "trained " << model.stage1.size() << " stage-1 and " << model.stage2.size() << " stage-2 models into "
        << dir.target().string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate / compare-categories
// ---------------------------------------------------------------------------

struct EvalFlags {
    CommonFlags common;
    std::string manifest;
    std::string model;
    std::string out;
    std::string animal = "animal";
    std::string object = "object";
};

void setup_eval(CLI::App* sub, EvalFlags& f, bool categories) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest")->required();
    sub->add_option("--model", f.model, "Model directory from `train`")->required();
    sub->add_option("--out", f.out, "Report directory to create")->required();
    if (categories) {
        sub->add_option("--animal", f.animal, "Manifest category used as the animal group")->capture_default_str();
        sub->add_option("--object", f.object, "Manifest category used as the object group")->capture_default_str();
    }
}

int cmd_evaluate(const CLI::App* sub, const EvalFlags& f, std::ostream& out) {
    const Dataset ds = load_from(f.manifest);
    const TwoStageModel model = load_two_stage(f.model);
    const auto& test = ds.splits.test;

    const EvaluationReport report = evaluate_rois(ds.fmri, ds.features, test, model);
    const LabeledMatrix direct = predict_direct_grid(ds.features, test, model);
    std::map<RoiId, LabeledMatrix> indirect;
    for (const auto& [roi, mean] : report.roi_mean) {
        indirect[roi] = predict_indirect_grid(ds.fmri.at(roi), roi, test, model);
    }

    std::vector<std::vector<std::string>> mse_rows;
    for (const auto& [roi, mean] : report.roi_mean) {
        for (const auto& [key, value] : report.mse) {
            if (key.first == roi) mse_rows.push_back({std::string(roi_name(roi)), std::string(layer_name(key.second)), text(value)});
        }
        mse_rows.push_back({std::string(roi_name(roi)), "mean", text(mean)});
    }
    const auto means = column_means(direct);
    std::vector<std::vector<std::string>> mean_rows;
    for (std::size_t c = 0; c < means.size(); ++c) mean_rows.push_back({direct.columns[c], text(means[c])});

    StagedDir dir(f.out);
    const std::vector<std::string> mse_header{"roi", "layer", "mse"};
    const std::vector<std::string> mean_header{"layer", "mean_abm"};
    write_text_table(dir.path() / "mse_by_roi.csv", mse_header, mse_rows);
    write_matrix_csv(dir.path() / "abm_direct.csv", direct);
    for (const auto& [roi, grid] : indirect) {
        write_matrix_csv(dir.path() / ("abm_indirect_" + std::string(roi_name(roi)) + ".csv"), grid);
    }
    write_text_table(dir.path() / "abm_layer_means.csv", mean_header, mean_rows);
    write_run_config(dir.path(), sub, {{"test_images", test.size()}});
    dir.commit();
    out << "evaluated " << report.roi_mean.size() << " ROI(s) on " << report.test_images << " test image(s) into "
        << dir.target().string() << '\n';
    return kExitOk;
}

int cmd_compare(const CLI::App* sub, const EvalFlags& f, std::ostream& out) {
    const Dataset ds = load_from(f.manifest);
    const TwoStageModel model = load_two_stage(f.model);
    auto group = [&](const std::string& name, const char* flag) -> const std::vector<std::string>& {
        auto it = ds.categories.find(name);
        if (it == ds.categories.end()) {
            throw DataError(std::string(flag) + ": manifest has no category '" + name + "'");
        }
        return it->second;
    };
    const auto& animal = group(f.animal, "--animal");
    const auto& object = group(f.object, "--object");
    const CategoryComparison cmp = compare_categories(ds.features, animal, object, model);

    std::vector<std::vector<std::string>> rows;
    for (const auto& [layer, row] : cmp.rows) {
        rows.push_back({std::string(layer_name(layer)), text(row.abm_animal), text(row.abm_object), text(row.difference)});
    }
    StagedDir dir(f.out);
    const std::vector<std::string> header{"layer", "abm_animal", "abm_object", "difference"};
    write_text_table(dir.path() / "abm_by_category.csv", header, rows);
    write_run_config(dir.path(), sub, {{"animal_images", animal.size()}, {"object_images", object.size()}});
    dir.commit();
    out << "compared " << animal.size() << " animal and " << object.size() << " object image(s) into "
        << dir.target().string() << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate-rsvp
// ---------------------------------------------------------------------------

struct RsvpFlags {
    CommonFlags common;
    double p2 = 0.0;
    double p8 = 0.0;
    int trials = 10000;
    std::string out;
};

void setup_rsvp(CLI::App* sub, RsvpFlags& f) {
    sub->add_option("--p2", f.p2, "P(T2 correct) at lag 2")->required();
    sub->add_option("--p8", f.p8, "P(T2 correct) at lag 8")->required();
    sub->add_option("--trials", f.trials, "Trials per lag")->capture_default_str();
    sub->add_option("--out", f.out, "Optional directory for rsvp.csv");
    add_seed(sub, f.common);
}

int cmd_rsvp(const CLI::App* sub, const RsvpFlags& f, std::ostream& out) {
    synth::ObserverParams params;
    params.p_correct_lag2 = f.p2;
    params.p_correct_lag8 = f.p8;
    params.trials_per_lag = f.trials;
    params.seed = f.common.seed;
    try {
        (void)synth::compute_abm(f.p8, f.p2);
        if (f.trials < 1) throw DataError("--trials must be at least 1");
    } catch (const DataError& e) {
        throw FlagError(e.what());
    }
    const synth::RsvpResult r = synth::simulate_rsvp(params);
    const std::vector<std::string> header{"trials_per_lag", "correct_lag2", "correct_lag8",
                                          "p_hat_lag2",     "p_hat_lag8",   "abm"};
    const std::vector<std::vector<std::string>> rows{{std::to_string(r.trials_per_lag), std::to_string(r.correct_lag2),
                                                      std::to_string(r.correct_lag8), text(r.p_hat_lag2),
                                                      text(r.p_hat_lag8), text(r.empirical_abm)}};
    if (!f.out.empty()) {
        StagedDir dir(f.out);
        write_text_table(dir.path() / "rsvp.csv", header, rows);
        write_run_config(dir.path(), sub, {{"seed", params.seed}});
        dir.commit();
    }
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (std::size_t i = 0; i < rows[0].size(); ++i) out << (i ? "," : "") << rows[0][i];
    out << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Two-stage fMRI -> CNN feature -> attentional blink magnitude pipeline", "abm_pipeline"};
    app.require_subcommand(1);

    GenSynthFlags gen;
    ExtractFlags ext;
    TrainFlags train;
    EvalFlags eval;
    EvalFlags cmp;
    RsvpFlags rsvp;

    auto* s_gen = app.add_subcommand("gen-synth", "Generate a synthetic dataset with known ground truth");
    auto* s_ext = app.add_subcommand("extract", "Extract per-layer CNN features from images");
    auto* s_train = app.add_subcommand("train", "Fit stage-1 and stage-2 ridge models with cross-validation");
    auto* s_eval = app.add_subcommand("evaluate", "Direct vs indirect ABM MSE per ROI and layer");
    auto* s_cmp = app.add_subcommand("compare-categories", "Per-layer ABM of the animal and object groups");
    auto* s_rsvp = app.add_subcommand("simulate-rsvp", "Simulate RSVP trials and report the empirical ABM");
    setup_gen_synth(s_gen, gen);
    setup_extract(s_ext, ext);
    setup_train(s_train, train);
    setup_eval(s_eval, eval, false);
    setup_eval(s_cmp, cmp, true);
    setup_rsvp(s_rsvp, rsvp);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const CLI::App* active = nullptr;
    std::function<int()> action;
    if (s_gen->parsed()) {
        active = s_gen;
        action = [&] { return cmd_gen_synth(s_gen, gen, out); };
    } else if (s_ext->parsed()) {
        active = s_ext;
        action = [&] { return cmd_extract(s_ext, ext, out); };
    } else if (s_train->parsed()) {
        active = s_train;
        action = [&] { return cmd_train(s_train, train, out); };
    } else if (s_eval->parsed()) {
        active = s_eval;
        action = [&] { return cmd_evaluate(s_eval, eval, out); };
    } else if (s_cmp->parsed()) {
        active = s_cmp;
        action = [&] { return cmd_compare(s_cmp, cmp, out); };
    } else {
        active = s_rsvp;
        action = [&] { return cmd_rsvp(s_rsvp, rsvp, out); };
    }

    try {
        return action();
    } catch (const FlagError& e) {
        err << "error: " << e.what() << "\n\n" << active->help();
        return kExitData;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace abmpipe::cli
