#pragma once

// Connectivity construction: Pearson matrices from BOLD time series, sliding
// window segmentation, |r| thresholding and symmetric degree normalization of
// the resulting graph. Everything here is a pure function of its inputs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fcni/linalg.hpp"

namespace fcni {

struct WindowOrigin {
    std::string parent_subject;
    std::size_t start = 0;
};

struct BoldSeries {
    std::string subject_id;
    Matrix samples;  // T x D
    std::optional<WindowOrigin> window_origin;

    std::size_t timepoints() const { return samples.rows; }
    std::size_t regions() const { return samples.cols; }
};

struct FcnMatrix {
    Matrix values;  // D x D, symmetric, entries in [-1, 1]
    std::set<std::size_t> degenerate_rows;  // ROIs whose series had zero variance

    std::size_t dim() const { return values.rows; }
};

// subnet_of holds 1..N, or kUnassigned for ROIs outside every subnetwork.
struct AtlasPartition {
    static constexpr int kUnassigned = 0;

    std::size_t roi_count = 0;
    std::vector<std::string> roi_names;
    std::vector<int> subnet_of;
    std::size_t subnet_count = 0;

    void validate() const;
    std::vector<std::vector<std::size_t>> members() const;  // index 0..N-1 -> ROI list
    std::vector<std::size_t> unassigned() const;

    // Contiguous equal blocks of size floor(D/N); the remainder stays unassigned.
    static AtlasPartition make_default(std::size_t d, std::size_t n);
    static AtlasPartition load_csv(const std::filesystem::path& path);
    void save_csv(const std::filesystem::path& path) const;
};

struct AdjacencyMatrix {
    Matrix values;  // binary, symmetric, zero diagonal
};

struct NormalizedAdjacency {
    Matrix values;  // symmetric, non-negative
};

FcnMatrix pearson_fcn(const BoldSeries& series);

std::vector<BoldSeries> sliding_windows(const BoldSeries& series, std::size_t length,
                                        std::size_t step);

// Number of windows emitted for (T, L, P) without materializing them.
std::size_t window_count(std::size_t t, std::size_t length, std::size_t step);

AdjacencyMatrix threshold_adjacency(const FcnMatrix& fcn, double tau);

NormalizedAdjacency normalize_adjacency(const AdjacencyMatrix& adj);

void write_bold_csv(const std::filesystem::path& path, const BoldSeries& series,
                    const std::vector<std::string>& roi_names);
BoldSeries read_bold_csv(const std::filesystem::path& path, const std::string& subject_id);

}  // namespace fcni
