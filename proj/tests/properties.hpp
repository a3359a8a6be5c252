#pragma once

// Randomized checks of the module invariants. Each returns a PropertyResult so
// the same checks drive the doctest suite and the acceptance report.

#include <cmath>
#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "abmpipe/cli.hpp"
#include "abmpipe/cnn.hpp"
#include "abmpipe/csv.hpp"
#include "abmpipe/pipeline.hpp"
#include "abmpipe/regress.hpp"
#include "abmpipe/synth.hpp"
#include "helpers.hpp"

namespace props {

using namespace abmpipe;

struct PropertyResult {
    bool ok = true;
    std::string detail;
};

struct Property {
    std::string name;
    std::function<PropertyResult()> check;
};

inline PropertyResult fail(const std::string& what) { return {false, what}; }

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

// -- core -------------------------------------------------------------------

inline PropertyResult layer_lengths_are_shape_products() {
    const auto arch = cnn::Architecture::alexnet();
    for (LayerId l : kAllLayers) {
        const auto s = arch.layer_shape(l);
        if (static_cast<std::size_t>(s.channels) * s.height * s.width != paper_feature_length(l)) {
            return fail(std::string(layer_name(l)) + " length differs from its shape product");
        }
    }
    if (paper_feature_length(LayerId::Conv1) != 290400) return fail("conv1 != 96*55*55");
    return {};
}

inline PropertyResult roi_composition_consistent() {
    std::vector<RoiId> joined;
    for (RoiId composite : {RoiId::LVC, RoiId::HVC}) {
        for (RoiId r : roi_composition(composite)) joined.push_back(r);
    }
    joined.push_back(RoiId::V4);
    std::vector<RoiId> vc(roi_composition(RoiId::VC).begin(), roi_composition(RoiId::VC).end());
    std::sort(joined.begin(), joined.end());
    std::sort(vc.begin(), vc.end());
    return joined == vc ? PropertyResult{} : fail("LVC u HVC u {V4} != VC");
}

inline PropertyResult csv_round_trip() {
    testing::TempDir dir("prop");
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> size(1, 9);
    std::uniform_real_distribution<double> exponent(-200.0, 200.0);
    for (int t = 0; t < 100; ++t) {
        Matrix m = testing::random_matrix(rng, size(rng), size(rng));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] *= std::pow(10.0, exponent(rng));
        std::vector<std::string> ids;
        for (Eigen::Index r = 0; r < m.rows(); ++r) ids.push_back("r" + std::to_string(r));
        write_matrix_csv(dir / "m.csv", ids, m);
        const auto back = read_matrix_csv(dir / "m.csv");
        if (back.values.rows() != m.rows() || back.values.cols() != m.cols()) return fail("shape changed");
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            if (std::fabs(back.values.data()[i] - m.data()[i]) > 1e-12 * std::fabs(m.data()[i])) {
                return fail("value changed in trial " + std::to_string(t));
            }
        }
    }
    return {};
}

// -- cnn --------------------------------------------------------------------

inline PropertyResult conv2d_linear() {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> ch(1, 3), sz(4, 9), ker(1, 3), st(1, 2), pd(0, 1);
    std::normal_distribution<double> coef(0.0, 2.0);
    for (int t = 0; t < 50; ++t) {
        const int c = ch(rng), h = sz(rng), w = sz(rng), k = ker(rng), o = ch(rng), s = st(rng), p = pd(rng);
        const cnn::Shape3 shape{c, h, w};
        cnn::ConvWeights wt{o, c, k, uniform(rng, static_cast<std::size_t>(o) * c * k * k),
                            std::vector<double>(static_cast<std::size_t>(o), 0.0)};
        const cnn::Tensor3 x(shape, uniform(rng, shape.size()));
        const cnn::Tensor3 y(shape, uniform(rng, shape.size()));
        const double a = coef(rng), b = coef(rng);
        cnn::Tensor3 mix(shape);
        for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
        const auto lhs = cnn::conv2d(mix, wt, s, p);
        const auto cx = cnn::conv2d(x, wt, s, p);
        const auto cy = cnn::conv2d(y, wt, s, p);
        for (std::size_t i = 0; i < lhs.data.size(); ++i) {
            const double rhs = a * cx.data[i] + b * cy.data[i];
            if (std::fabs(lhs.data[i] - rhs) > 1e-10 * std::max(1.0, std::fabs(rhs))) {
                return fail("linearity violated in trial " + std::to_string(t));
            }
        }
    }
    return {};
}

inline PropertyResult conv2d_matches_oracle() {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> ch(1, 4), sz(3, 10), ker(1, 4), st(1, 3), pd(0, 2);
    for (int t = 0; t < 50; ++t) {
        const int c = ch(rng), h = sz(rng), w = sz(rng), o = ch(rng), s = st(rng), p = pd(rng);
        const int k = std::min(ker(rng), std::min(h, w) + 2 * p);
        const cnn::Tensor3 x({c, h, w}, uniform(rng, static_cast<std::size_t>(c) * h * w));
        cnn::ConvWeights wt{o, c, k, uniform(rng, static_cast<std::size_t>(o) * c * k * k), uniform(rng, o)};
        int oh = 0, ow = 0;
        const auto expected = oracle::conv2d(x.data, c, h, w, wt.weight, wt.bias, o, k, s, p, oh, ow);
        const auto got = cnn::conv2d(x, wt, s, p);
        if (got.data.size() != expected.size()) return fail("output size mismatch");
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (std::fabs(got.data[i] - expected[i]) > 1e-12 * std::max(1.0, std::fabs(expected[i]))) {
                return fail("oracle mismatch in trial " + std::to_string(t));
            }
        }
    }
    return {};
}

inline PropertyResult extract_deterministic() {
    cnn::Architecture arch;
    arch.input = {3, 19, 19};
    arch.convs[0] = {{4, 5, 2, 0}, cnn::PoolSpec{2, 2}};
    arch.convs[1] = {{4, 3, 1, 1}, std::nullopt};
    arch.convs[2] = {{4, 3, 1, 1}, std::nullopt};
    arch.convs[3] = {{4, 3, 1, 1}, std::nullopt};
    arch.convs[4] = {{3, 3, 1, 1}, cnn::PoolSpec{2, 2}};
    arch.fc6_units = 10;
    arch.fc7_units = 10;
    std::mt19937_64 rng(4);
    const ImageTensor img(3, 19, 19, uniform(rng, 3 * 19 * 19, 0.0, 1.0));
    const auto w = cnn::init_weights(arch, 77);
    const auto a = cnn::forward_layers(img, w, kAllLayers);
    const auto b = cnn::forward_layers(img, cnn::init_weights(arch, 77), kAllLayers);
    return a == b ? PropertyResult{} : fail("repeated extraction differs");
}

// -- regress ----------------------------------------------------------------

inline PropertyResult ridge_primal_dual_equivalence() {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> nn(3, 12), extra(1, 10), kk(1, 4);
    std::uniform_real_distribution<double> loglam(-3.0, 2.0);
    for (int t = 0; t < 100; ++t) {
        const int n = nn(rng), d = n + extra(rng), k = kk(rng);
        const Matrix X = testing::random_matrix(rng, n, d);
        const Matrix Y = testing::random_matrix(rng, n, k);
        const double lambda = std::pow(10.0, loglam(rng));
        const auto dual = fit_ridge(X, Y, lambda, RidgeSolver::Dual);
        const auto o = oracle::ridge_predict(testing::to_grid(X), testing::to_grid(Y), lambda, testing::to_grid(X));
        const Matrix p = predict_rows(dual, X);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) {
                const double e = o[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                if (std::fabs(p(i, j) - e) > 1e-8 * std::max(1.0, std::fabs(e))) {
                    return fail("dual vs explicit primal solve differ in trial " + std::to_string(t));
                }
            }
        }
        const auto primal = fit_ridge(X, Y, lambda, RidgeSolver::Primal);
        const double scale = std::max(1.0, primal.weights.cwiseAbs().maxCoeff());
        if ((primal.weights - dual.weights).cwiseAbs().maxCoeff() > 1e-8 * scale) {
            return fail("primal and dual weights differ in trial " + std::to_string(t));
        }
    }
    return {};
}

inline PropertyResult ridge_permutation_invariant() {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        const int n = 5 + t % 20, d = 1 + t % 9;
        const Matrix X = testing::random_matrix(rng, n, d);
        const Matrix Y = testing::random_matrix(rng, n, 2);
        std::vector<int> perm(static_cast<std::size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix Xp(n, d), Yp(n, 2);
        for (int i = 0; i < n; ++i) {
            Xp.row(i) = X.row(perm[static_cast<std::size_t>(i)]);
            Yp.row(i) = Y.row(perm[static_cast<std::size_t>(i)]);
        }
        const auto a = fit_ridge(X, Y, 0.3);
        const auto b = fit_ridge(Xp, Yp, 0.3);
        if ((predict_rows(a, X) - predict_rows(b, X)).cwiseAbs().maxCoeff() > 1e-10) {
            return fail("row order changed predictions in trial " + std::to_string(t));
        }
    }
    return {};
}

inline PropertyResult ridge_shrinkage_monotone() {
    std::mt19937_64 rng(7);
    const auto grid = default_lambda_grid();
    for (int t = 0; t < 50; ++t) {
        const int n = 4 + t % 25, d = 1 + t % 12;
        const Matrix X = testing::random_matrix(rng, n, d);
        const Matrix Y = testing::random_matrix(rng, n, 3);
        double previous = INFINITY;
        for (double lambda : grid) {
            const double norm = fit_ridge(X, Y, lambda).weights.norm();
            if (norm > previous * (1.0 + 1e-12)) return fail("weight norm grew with lambda in trial " + std::to_string(t));
            previous = norm;
        }
    }
    return {};
}

inline PropertyResult ridge_lambda0_matches_least_squares() {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 50; ++t) {
        const int d = 1 + t % 8, n = d + 3 + t % 15;
        const Matrix X = testing::random_matrix(rng, n, d);
        const Matrix Y = testing::random_matrix(rng, n, 2);
        const auto m = fit_ridge(X, Y, 0.0);
        // Unregularized least squares with an intercept column.
        Matrix A(n, d + 1);
        A << Matrix::Ones(n, 1), X;
        const Matrix beta = A.colPivHouseholderQr().solve(Y);
        if ((predict_rows(m, X) - A * beta).cwiseAbs().maxCoeff() > 1e-8) {
            return fail("lambda = 0 differs from least squares in trial " + std::to_string(t));
        }
    }
    return {};
}

// -- pipeline ---------------------------------------------------------------

inline PropertyResult average_equals_mean_of_predictions() {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto s = synth::generate_synthetic(testing::small_config(seed));
        CvConfig cfg;
        cfg.fixed_lambda = 0.5;
        const auto r = train_stage2(s.data.features, s.data.abm, s.data.splits.stage2_train, cfg);
        TwoStageModel m;
        m.stage2 = r.models;
        for (LayerId layer : kAllLayers) {
            const auto& t = s.data.features.at(layer);
            std::vector<FeatureVector> group;
            double mean_pred = 0.0;
            for (const auto& id : s.data.splits.test) {
                group.push_back({layer, id, t.row(t.find(id).value())});
                mean_pred += predict_abm_direct(group.back(), m).abm;
            }
            mean_pred /= static_cast<double>(group.size());
            const double avg_pred = predict_abm_direct(cnn::average_features(group, "g"), m).abm;
            if (std::fabs(avg_pred - mean_pred) > 1e-9) return fail("affine averaging identity violated");
        }
    }
    return {};
}

inline PropertyResult nested_roi_residual_dominance() {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        auto cfg = testing::small_config(seed, 16, 10);
        cfg.n_stage1 = 150;  // n > VC voxels (70), so lambda = 0 is well-posed everywhere
        const auto s = synth::generate_synthetic(cfg);
        CvConfig cv;
        cv.fixed_lambda = 0.0;
        const auto r = train_stage1(s.data.fmri, s.data.features, s.data.splits.stage1_train, cv);
        for (RoiId composite : kCompositeRois) {
            for (LayerId layer : kAllLayers) {
                const double outer = r.fits.at({composite, layer}).train_mse;
                for (RoiId part : roi_composition(composite)) {
                    if (outer > r.fits.at({part, layer}).train_mse + 1e-9) {
                        return fail(std::string(roi_name(composite)) + " residual exceeds " + std::string(roi_name(part)));
                    }
                }
            }
        }
    }
    return {};
}

inline PropertyResult evaluation_deterministic_and_order_free() {
    const auto s = synth::generate_synthetic(testing::small_config(40));
    CvConfig cv;
    cv.folds = 3;
    const auto m1 = train_two_stage(s.data, cv);
    const auto m2 = train_two_stage(s.data, cv);
    std::vector<std::string> reversed(s.data.splits.test.rbegin(), s.data.splits.test.rend());
    const auto a = evaluate_rois(s.data.fmri, s.data.features, s.data.splits.test, m1);
    const auto b = evaluate_rois(s.data.fmri, s.data.features, s.data.splits.test, m2);
    const auto c = evaluate_rois(s.data.fmri, s.data.features, reversed, m1);
    if (a.mse != b.mse || a.roi_mean != b.roi_mean) return fail("retraining changed the report");
    if (a.mse != c.mse) return fail("test order changed the report");
    return {};
}

// -- synth ------------------------------------------------------------------

inline PropertyResult abm_antisymmetric() {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> p(0.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        const double a = p(rng), b = p(rng);
        if (synth::compute_abm(a, b) != -synth::compute_abm(b, a)) return fail("compute_abm not antisymmetric");
    }
    return {};
}

inline PropertyResult rsvp_converges() {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) sum += synth::simulate_rsvp({0.35, 0.75, 10000, seed}).empirical_abm;
    const double mean = sum / 100.0;
    return std::fabs(mean - 0.4) <= 0.01 ? PropertyResult{} : fail("mean empirical ABM " + std::to_string(mean));
}

inline PropertyResult synth_reproducible() {
    testing::TempDir dir("prop");
    const auto cfg = testing::small_config(41);
    synth::write_synthetic_dataset(synth::generate_synthetic(cfg), dir / "a");
    synth::write_synthetic_dataset(synth::generate_synthetic(cfg), dir / "b");
    return testing::same_tree(dir / "a", dir / "b") ? PropertyResult{} : fail("outputs differ");
}

inline PropertyResult sidecar_sufficient() {
    testing::TempDir dir("prop");
    auto cfg = testing::small_config(42);
    cfg.abm_noise_sigma = 0.1;
    const auto manifest = synth::write_synthetic_dataset(synth::generate_synthetic(cfg), dir.path());
    const Dataset d = load_dataset(read_manifest(manifest));
    const auto t = synth::read_ground_truth(dir.path());
    for (RoiId roi : kAtomicRois) {
        const Matrix f = d.features.at(synth::wired_layer(roi)).select_rows(t.image_ids, "features");
        const Matrix v = d.fmri.at(roi).select_rows(t.image_ids, "fmri");
        if ((f * t.encoding.at(roi).transpose() + t.fmri_noise.at(roi) - v).cwiseAbs().maxCoeff() > 1e-12) {
            return fail("fMRI not reproducible for " + std::string(roi_name(roi)));
        }
    }
    const Matrix f = d.features.at(t.abm_source_layer).select_rows(t.image_ids, "features");
    const Vector abm = (t.abm_gain * (f * t.abm_weights + t.abm_noise).array() + t.abm_offset).matrix();
    if ((abm - d.abm.select_rows(t.image_ids, "abm").col(0)).cwiseAbs().maxCoeff() > 1e-12) {
        return fail("ABM not reproducible");
    }
    return {};
}

// -- cli --------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    return cli::run(args, out, err);
}

inline PropertyResult cli_idempotent_and_atomic() {
    testing::TempDir dir("prop");
    const auto data = (dir / "data").string();
    const std::vector<std::string> gen{"gen-synth", "--out", data, "--seed", "5", "--n-stage1", "40",
                                       "--n-stage2", "15", "--n-test", "8", "--category-size", "3",
                                       "--feature-length", "12", "--voxels-early", "6", "--voxels-late", "6",
                                       "--latent-dim", "3"};
    if (run_cli(gen) != 0) return fail("gen-synth failed");
    const std::vector<std::string> train{"train", "--manifest", data + "/manifest.json", "--out",
                                         (dir / "model").string(), "--folds", "3", "--deterministic"};
    if (run_cli(train) != 0) return fail("train failed");
    std::filesystem::rename(dir / "model", dir / "model1");
    if (run_cli(train) != 0) return fail("train rerun failed");
    if (!testing::same_tree(dir / "model", dir / "model1")) return fail("train rerun differs");

    // A failing command leaves the existing output alone.
    const auto before = testing::read_file(dir / "model/cv_report.csv");
    const std::vector<std::string> bad{"train", "--manifest", (dir / "none.json").string(), "--out",
                                       (dir / "model").string()};
    if (run_cli(bad) != cli::kExitData) return fail("bad manifest did not exit 2");
    if (testing::read_file(dir / "model/cv_report.csv") != before) return fail("failed run modified the output");
    return {};
}

inline std::vector<Property> all_properties() {
    return {
        {"core: layer lengths are shape products", layer_lengths_are_shape_products},
        {"core: ROI composition consistency", roi_composition_consistent},
        {"core: CSV round trip", csv_round_trip},
        {"cnn: conv2d linearity", conv2d_linear},
        {"cnn: conv2d direct-summation oracle", conv2d_matches_oracle},
        {"cnn: extraction determinism", extract_deterministic},
        {"regress: primal/dual equivalence", ridge_primal_dual_equivalence},
        {"regress: permutation invariance", ridge_permutation_invariant},
        {"regress: monotone shrinkage", ridge_shrinkage_monotone},
        {"regress: lambda 0 equals least squares", ridge_lambda0_matches_least_squares},
        {"pipeline: average equals mean of predictions", average_equals_mean_of_predictions},
        {"pipeline: nested-ROI residual dominance", nested_roi_residual_dominance},
        {"pipeline: evaluation determinism and order invariance", evaluation_deterministic_and_order_free},
        {"synth: ABM antisymmetry", abm_antisymmetric},
        {"synth: RSVP convergence", rsvp_converges},
        {"synth: reproducible output", synth_reproducible},
        {"synth: sidecar sufficiency", sidecar_sufficient},
        {"cli: idempotent reruns, untouched output on error", cli_idempotent_and_atomic},
    };
}

}  // namespace props
