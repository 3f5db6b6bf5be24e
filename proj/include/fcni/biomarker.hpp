#pragma once

// Attention aggregation for biomarker readouts: normalized attention mass
// from answer tokens onto FCN tokens, FCN-token interaction maps (mean over
// layers, sum over heads, then symmetrized), and subnetwork-level block
// means. All operations are linear in the attention tensor.

#include <filesystem>
#include <string>
#include <vector>

#include "fcni/fcn.hpp"
#include "fcni/lm.hpp"

namespace fcni {

struct SaliencyVector {
    std::vector<double> scores;  // one per FCN token, sums to 1
};

struct InteractionMap {
    Matrix token_map;   // (#fcn tokens)^2, symmetric, sums to 1
    Matrix subnet_map;  // (N+2)^2 block means: subnets, unassigned ROIs, global
};

SaliencyVector aggregate_saliency(const AttentionTensor& attn,
                                  const std::vector<std::size_t>& fcn_positions,
                                  const std::vector<std::size_t>& answer_positions);

Matrix token_interaction_map(const AttentionTensor& attn,
                             const std::vector<std::size_t>& fcn_positions);

// Token layout must be ROI 1..D, subnet 1..N, global. ROI tokens group by
// their subnetwork, unassigned ROIs form their own group and the global
// token its own; the N subnetwork summary tokens are not part of any block
// (their rows would otherwise distort the ROI block means).
Matrix group_by_subnetwork(const Matrix& token_map, const AtlasPartition& partition);

std::vector<std::string> subnet_map_labels(const AtlasPartition& partition);

void emit_plot_data(const Matrix& map, const std::vector<std::string>& labels,
                    const std::filesystem::path& out_path);

}  // namespace fcni
