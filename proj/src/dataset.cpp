#include "abmpipe/dataset.hpp"

#include <fstream>
#include <unordered_set>

#include "abmpipe/csv.hpp"
#include "json.hpp"

namespace abmpipe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> string_list(const json& j, const std::string& what) {
    if (!j.is_array()) throw DataError("manifest: '" + what + "' must be an array of ids");
    std::vector<std::string> out;
    for (const auto& e : j) {
        if (!e.is_string()) throw DataError("manifest: '" + what + "' must contain strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

void check_unique(const std::vector<std::string>& ids, const std::string& what) {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
        if (!seen.insert(id).second) {
            throw DataError("manifest: duplicate id '" + id + "' in " + what);
        }
    }
}

template <typename Record, typename Len>
LabeledMatrix records_to_table(std::span<const Record> records, Len length_of,
                               const std::string& what) {
    LabeledMatrix table;
    if (records.empty()) return table;
    const std::size_t d = length_of(records.front()).size();
    table.columns = default_columns(d);
    table.values.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(d));
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& values = length_of(records[i]);
        if (values.size() != d) {
            throw DataError(what + " record '" + records[i].image_id + "' has length " +
                            std::to_string(values.size()) + ", expected " + std::to_string(d));
        }
        if (!seen.insert(records[i].image_id).second) {
            throw DataError("duplicate image id '" + records[i].image_id + "' in " + what);
        }
        table.ids.push_back(records[i].image_id);
        for (std::size_t j = 0; j < d; ++j) {
            table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[j];
        }
    }
    return table;
}

}  // namespace

fs::path DatasetManifest::resolve(const fs::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }

    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        if (j.value("format", std::string{}) != kManifestFormat) {
            throw DataError("manifest " + path.string() + ": expected format '" +
                            kManifestFormat + "'");
        }
        if (j.contains("features")) {
            for (const auto& [name, p] : j.at("features").items()) {
                m.features[parse_layer(name)] = p.get<std::string>();
            }
        }
        if (j.contains("fmri")) {
            for (const auto& [name, p] : j.at("fmri").items()) {
                m.fmri[parse_roi(name)] = p.get<std::string>();
            }
        }
        if (j.contains("abm")) m.abm = j.at("abm").get<std::string>();
        if (j.contains("images")) {
            const auto& im = j.at("images");
            m.images = ImageSource{im.at("path").get<std::string>(), im.value("channels", 3),
                                   im.value("height", 227), im.value("width", 227)};
        }
        if (!j.contains("splits")) throw DataError("manifest: missing 'splits'");
        const auto& s = j.at("splits");
        if (s.contains("stage1_train")) m.splits.stage1_train = string_list(s.at("stage1_train"), "stage1_train");
        if (s.contains("stage2_train")) m.splits.stage2_train = string_list(s.at("stage2_train"), "stage2_train");
        if (s.contains("test")) m.splits.test = string_list(s.at("test"), "test");
        if (j.contains("categories")) {
            for (const auto& [name, ids] : j.at("categories").items()) {
                m.categories[name] = string_list(ids, "categories." + name);
            }
        }
    } catch (const json::exception& e) {
        throw DataError("manifest " + path.string() + ": " + e.what());
    }
    check_unique(m.splits.stage1_train, "stage1_train");
    check_unique(m.splits.stage2_train, "stage2_train");
    check_unique(m.splits.test, "test");
    return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
    json j;
    j["format"] = kManifestFormat;
    if (!m.features.empty()) {
        json f = json::object();
        for (const auto& [layer, p] : m.features) f[std::string(layer_name(layer))] = p.generic_string();
        j["features"] = f;
    }
    if (!m.fmri.empty()) {
        json f = json::object();
        for (const auto& [roi, p] : m.fmri) f[std::string(roi_name(roi))] = p.generic_string();
        j["fmri"] = f;
    }
    if (m.abm) j["abm"] = m.abm->generic_string();
    if (m.images) {
        j["images"] = {{"path", m.images->path.generic_string()},
                       {"channels", m.images->channels},
                       {"height", m.images->height},
                       {"width", m.images->width}};
    }
    j["splits"] = {{"stage1_train", m.splits.stage1_train},
                   {"stage2_train", m.splits.stage2_train},
                   {"test", m.splits.test}};
    if (!m.categories.empty()) j["categories"] = m.categories;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

Dataset load_dataset(const DatasetManifest& m) {
    Dataset ds;
    for (const auto& [layer, p] : m.features) ds.features[layer] = read_matrix_csv(m.resolve(p));
    for (const auto& [roi, p] : m.fmri) ds.fmri[roi] = read_matrix_csv(m.resolve(p));
    if (m.abm) {
        ds.abm = read_matrix_csv(m.resolve(*m.abm));
        if (ds.abm.cols() != 1) throw DataError("ABM file must have exactly one value column");
    }
    ds.splits = m.splits;
    ds.categories = m.categories;
    return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
    DatasetManifest m;
    m.base_dir = dir;
    fs::create_directories(dir);
    if (!ds.features.empty()) fs::create_directories(dir / "features");
    if (!ds.fmri.empty()) fs::create_directories(dir / "fmri");
    for (const auto& [layer, table] : ds.features) {
        const fs::path rel = fs::path("features") / (std::string(layer_name(layer)) + ".csv");
        write_matrix_csv(dir / rel, table);
        m.features[layer] = rel;
    }
    for (const auto& [roi, table] : ds.fmri) {
        const fs::path rel = fs::path("fmri") / (std::string(roi_name(roi)) + ".csv");
        write_matrix_csv(dir / rel, table);
        m.fmri[roi] = rel;
    }
    if (ds.abm.rows() > 0) {
        write_matrix_csv(dir / "abm.csv", ds.abm);
        m.abm = "abm.csv";
    }
    m.splits = ds.splits;
    m.categories = ds.categories;
    const fs::path manifest_path = dir / "manifest.json";
    write_manifest(m, manifest_path);
    return manifest_path;
}

LabeledMatrix concatenate_rois(const FmriTables& atomic, RoiId composite) {
    const auto parts = roi_composition(composite);
    const auto& first = atomic.find(parts.front());
    if (first == atomic.end()) {
        throw DataError("missing fMRI table for " + std::string(roi_name(parts.front())));
    }
    LabeledMatrix out;
    out.ids = first->second.ids;
    Eigen::Index width = 0;
    std::vector<Matrix> blocks;
    for (RoiId part : parts) {
        auto it = atomic.find(part);
        if (it == atomic.end()) {
            throw DataError("missing fMRI table for " + std::string(roi_name(part)));
        }
        blocks.push_back(it->second.select_rows(out.ids, "fMRI " + std::string(roi_name(part))));
        width += blocks.back().cols();
    }
    out.values.resize(static_cast<Eigen::Index>(out.ids.size()), width);
    Eigen::Index offset = 0;
    for (const auto& b : blocks) {
        out.values.middleCols(offset, b.cols()) = b;
        offset += b.cols();
    }
    out.columns = default_columns(static_cast<std::size_t>(width));
    return out;
}

LabeledMatrix features_to_table(std::span<const FeatureVector> records) {
    for (const auto& r : records) {
        if (r.layer != records.front().layer) throw DataError("feature records mix layers");
    }
    return records_to_table(records, [](const FeatureVector& r) -> const std::vector<double>& { return r.values; },
                            "feature");
}

LabeledMatrix fmri_to_table(std::span<const FmriRecord> records) {
    for (const auto& r : records) {
        if (r.roi != records.front().roi) throw DataError("fMRI records mix ROIs");
    }
    return records_to_table(records, [](const FmriRecord& r) -> const std::vector<double>& { return r.voxels; },
                            "fMRI " + (records.empty() ? std::string() : std::string(roi_name(records.front().roi))));
}

LabeledMatrix abm_to_table(std::span<const AbmRecord> records) {
    LabeledMatrix table;
    table.columns = {"abm"};
    table.values.resize(static_cast<Eigen::Index>(records.size()), 1);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!seen.insert(records[i].image_id).second) {
            throw DataError("duplicate image id '" + records[i].image_id + "' in ABM records");
        }
        table.ids.push_back(records[i].image_id);
        table.values(static_cast<Eigen::Index>(i), 0) = records[i].abm;
    }
    return table;
}

}  // namespace abmpipe
