#pragma once

// File formats:
//   *.fcn       "FCN1" magic, u32 D, D*D row-major little-endian f64
//   *.ntf       "NTF1" magic, u32 count, per tensor: u32 name_len, name,
//               u32 rank, u32 dims[rank], little-endian f64 payload;
//               a  <file>.shapes.txt sidecar lists name and dims per line
//   *.csv       headered, comma separated, doubles printed with %.17g
//   *.jsonl     one JSON object per line
//
// All writers go through a temp file that is renamed into place, so an
// interrupted run never leaves a half-written artifact at the final path.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fcni/linalg.hpp"

namespace fcni::io {

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> data;
};

void atomic_write_bytes(const std::filesystem::path& path, const std::string& bytes);
std::string read_bytes(const std::filesystem::path& path);

void write_fcn(const std::filesystem::path& path, const Matrix& m);
Matrix read_fcn(const std::filesystem::path& path);

void write_named_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_named_tensors(const std::filesystem::path& path);

// Matrix CSV: header = col labels (first cell is a corner label when row
// labels are present), one row per matrix row.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& col_labels,
                      const std::vector<std::string>& row_labels = {});
// Parses a CSV written by write_matrix_csv; detects whether row labels are
// present from the header corner cell.
Matrix read_matrix_csv(const std::filesystem::path& path);

std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fcni::io
