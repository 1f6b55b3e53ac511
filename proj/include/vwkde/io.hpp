#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "vwkde/core.hpp"

namespace vwkde {

/// Reads one point per row, plain decimal, no header. Blank lines and lines
/// starting with '#' are skipped. With `has_label` the last column is an
/// integer class tag that must be identical on every row.
Dataset read_dataset_csv(const std::filesystem::path& path, bool has_label = false);

/// Splits a labelled CSV (last column 1 or 2) into the two class samples.
std::pair<Dataset, Dataset> read_labeled_csv(const std::filesystem::path& path);

/// Writes the shortest text that reads back to the same double; appends the label column when the
/// dataset carries one.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Shortest round-trip decimal; "nan", "inf" and "-inf" otherwise.
std::string format_double(double value);

}  // namespace vwkde
