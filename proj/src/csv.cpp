#include "abmpipe/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace abmpipe {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::string location(const std::filesystem::path& path, std::size_t line, std::size_t column) {
    return path.string() + ":" + std::to_string(line) + ": column " + std::to_string(column);
}

void check_field_text(std::string_view text, std::string_view what) {
    if (text.find_first_of(",\n\r") != std::string_view::npos) {
        throw DataError(std::string(what) + " '" + std::string(text) +
                        "' contains a comma or line break");
    }
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
    if (ec != std::errc{}) throw DataError("cannot format value");
    return std::string(buf, end);
}

LabeledMatrix read_matrix_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file, expected a header");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto header = split_fields(line);
    if (header.front() != "id") {
        throw DataError(location(path, 1, 1) + ": first header field must be 'id'");
    }

    LabeledMatrix table;
    for (std::size_t j = 1; j < header.size(); ++j) table.columns.emplace_back(header[j]);
    const std::size_t d = table.columns.size();

    std::vector<double> flat;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto fields = split_fields(line);
        if (fields.size() != d + 1) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(d + 1) + " fields, found " +
                            std::to_string(fields.size()));
        }
        std::string id(fields[0]);
        if (id.empty()) throw DataError(location(path, line_no, 1) + ": empty id");
        if (!seen.insert(id).second) {
            throw DataError(location(path, line_no, 1) + ": duplicate id '" + id + "'");
        }
        for (std::size_t j = 1; j <= d; ++j) {
            const auto field = fields[j];
            double value = 0.0;
            auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
            if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
                throw DataError(location(path, line_no, j + 1) + ": non-numeric cell '" +
                                std::string(field) + "'");
            }
            if (!std::isfinite(value)) {
                throw DataError(location(path, line_no, j + 1) + ": non-finite cell '" +
                                std::string(field) + "'");
            }
            flat.push_back(value);
        }
        table.ids.push_back(std::move(id));
    }

    const auto n = static_cast<Eigen::Index>(table.ids.size());
    table.values.resize(n, static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
            table.values(i, j) = flat[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
        }
    }
    return table;
}

void write_matrix_csv(const std::filesystem::path& path, std::span<const std::string> row_ids,
                      const Matrix& matrix, std::span<const std::string> columns) {
    if (row_ids.size() != static_cast<std::size_t>(matrix.rows())) {
        throw DataError("write_matrix_csv: " + std::to_string(row_ids.size()) + " ids for " +
                        std::to_string(matrix.rows()) + " rows");
    }
    if (!columns.empty() && columns.size() != static_cast<std::size_t>(matrix.cols())) {
        throw DataError("write_matrix_csv: column name count does not match matrix width");
    }
    for (const auto& c : columns) check_field_text(c, "column name");

    std::string text = "id";
    for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
        text += ',';
        text += columns.empty() ? "c" + std::to_string(j) : columns[static_cast<std::size_t>(j)];
    }
    text += '\n';

    char buf[64];
    for (Eigen::Index i = 0; i < matrix.rows(); ++i) {
        const auto& id = row_ids[static_cast<std::size_t>(i)];
        if (id.empty()) throw DataError("write_matrix_csv: empty id");
        check_field_text(id, "id");
        text += id;
        for (Eigen::Index j = 0; j < matrix.cols(); ++j) {
            const double v = matrix(i, j);
            if (!std::isfinite(v)) {
                throw DataError("write_matrix_csv: non-finite value in row '" + id + "'");
            }
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
            text += ',';
            text.append(buf, end);
        }
        text += '\n';
    }

    auto out = open_for_write(path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

void write_matrix_csv(const std::filesystem::path& path, const LabeledMatrix& table) {
    write_matrix_csv(path, table.ids, table.values, table.columns);
}

void write_text_table(const std::filesystem::path& path, std::span<const std::string> header,
                      const std::vector<std::vector<std::string>>& rows) {
    std::string text;
    auto append_row = [&](std::span<const std::string> cells) {
        if (cells.size() != header.size()) throw DataError("table row width mismatch");
        for (std::size_t j = 0; j < cells.size(); ++j) {
            check_field_text(cells[j], "table cell");
            if (j) text += ',';
            text += cells[j];
        }
        text += '\n';
    };
    append_row(header);
    for (const auto& r : rows) append_row(r);

    auto out = open_for_write(path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace abmpipe
