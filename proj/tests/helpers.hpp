#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "abmpipe/core.hpp"
#include "abmpipe/synth.hpp"
#include "oracles.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("abmpipe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline abmpipe::Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> dist;
    abmpipe::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
}

inline oracle::Grid to_grid(const abmpipe::Matrix& m) {
    oracle::Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    }
    return g;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// True when both trees hold the same relative file names with identical bytes.
inline bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> fa, fb;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.is_regular_file()) fa.push_back(fs::relative(e.path(), a));
    }
    for (const auto& e : fs::recursive_directory_iterator(b)) {
        if (e.is_regular_file()) fb.push_back(fs::relative(e.path(), b));
    }
    std::sort(fa.begin(), fa.end());
    std::sort(fb.begin(), fb.end());
    if (fa != fb) return false;
    for (const auto& rel : fa) {
        if (read_file(a / rel) != read_file(b / rel)) return false;
    }
    return true;
}

/// Small synthetic configuration for fast tests.
inline abmpipe::synth::SynthConfig small_config(std::uint64_t seed, int features = 24, int voxels = 12) {
    using namespace abmpipe;
    synth::SynthConfig c = synth::SynthConfig::desk_defaults();
    for (LayerId l : kAllLayers) c.feature_lengths[l] = features;
    for (RoiId r : kAtomicRois) c.voxels[r] = voxels;
    c.latent_dim = 4;
    c.n_stage1 = 60;
    c.n_stage2 = 20;
    c.n_test = 10;
    c.category_size = 4;
    c.seed = seed;
    return c;
}

}  // namespace testing
