#pragma once

// The `id,c0,c1,...` matrix CSV format used for every dataset file.
//
// UTF-8, '\n' line endings, a header row whose first field is `id`, then one
// row per record. Values are written with 17 significant digits so a
// write/read round trip is exact.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "abmpipe/core.hpp"

namespace abmpipe {

/// Parses a matrix CSV. Throws DataError on a missing file, ragged rows,
/// non-numeric or non-finite cells and duplicate ids, naming the line and column.
LabeledMatrix read_matrix_csv(const std::filesystem::path& path);

/// Writes `matrix` with `row_ids`. An empty `columns` list means `c0..c{d-1}`.
void write_matrix_csv(const std::filesystem::path& path, std::span<const std::string> row_ids,
                      const Matrix& matrix, std::span<const std::string> columns = {});

void write_matrix_csv(const std::filesystem::path& path, const LabeledMatrix& table);

/// Shortest text that still carries 17 significant digits.
std::string format_double(double value);

/// Plain CSV table with string cells; used for reports such as `roi,layer,mse`.
void write_text_table(const std::filesystem::path& path, std::span<const std::string> header,
                      const std::vector<std::vector<std::string>>& rows);

}  // namespace abmpipe
