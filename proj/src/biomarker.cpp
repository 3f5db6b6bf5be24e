#include "fcni/biomarker.hpp"

#include <set>

#include "fcni/error.hpp"
#include "fcni/io.hpp"

namespace fcni {

namespace {

void check_positions(const AttentionTensor& attn, const std::vector<std::size_t>& positions,
                     const char* what) {
    if (positions.empty()) throw invalid_input(std::string(what) + " position set is empty");
    for (std::size_t p : positions)
        if (p >= attn.seq)
            throw invalid_input(std::string(what) + " position " + std::to_string(p) +
                                " outside sequence of length " + std::to_string(attn.seq));
}

}  // namespace

SaliencyVector aggregate_saliency(const AttentionTensor& attn,
                                  const std::vector<std::size_t>& fcn_positions,
                                  const std::vector<std::size_t>& answer_positions) {
    check_positions(attn, fcn_positions, "fcn");
    check_positions(attn, answer_positions, "answer");
    std::set<std::size_t> fcn_set(fcn_positions.begin(), fcn_positions.end());
    for (std::size_t p : answer_positions)
        if (fcn_set.count(p)) throw invalid_input("fcn and answer positions overlap");

    SaliencyVector out;
    out.scores.assign(fcn_positions.size(), 0.0);
    const double layer_weight = 1.0 / static_cast<double>(attn.layers);
    for (std::size_t l = 0; l < attn.layers; ++l)
        for (std::size_t h = 0; h < attn.heads; ++h) {
            const Matrix& map = attn.at(l, h);
            for (std::size_t q : answer_positions)
                for (std::size_t j = 0; j < fcn_positions.size(); ++j)
                    out.scores[j] += layer_weight * map(q, fcn_positions[j]);
        }

    double total = 0.0;
    for (double s : out.scores) total += s;
    if (total <= 0.0)
        throw invalid_input("answer positions carry no attention mass onto the FCN tokens");
    for (double& s : out.scores) s /= total;
    return out;
}

Matrix token_interaction_map(const AttentionTensor& attn,
                             const std::vector<std::size_t>& fcn_positions) {
    check_positions(attn, fcn_positions, "fcn");
    const std::size_t n = fcn_positions.size();
    Matrix m(n, n);
    const double layer_weight = 1.0 / static_cast<double>(attn.layers);
    for (std::size_t l = 0; l < attn.layers; ++l)
        for (std::size_t h = 0; h < attn.heads; ++h) {
            const Matrix& map = attn.at(l, h);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    m(i, j) += layer_weight * map(fcn_positions[i], fcn_positions[j]);
        }

    // Attention is directed; the reported connections are not.
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
            double v = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = v;
            m(j, i) = v;
            total += (i == j) ? v : 2.0 * v;
        }
    if (total <= 0.0) throw invalid_input("interaction map has no attention mass");
    kern::scale(1.0 / total, m.data.data(), m.size());
    return m;
}

Matrix group_by_subnetwork(const Matrix& token_map, const AtlasPartition& partition) {
    const std::size_t d = partition.roi_count;
    const std::size_t n = partition.subnet_count;
    if (token_map.rows != d + n + 1)
        throw invalid_input("token map size " + std::to_string(token_map.rows) +
                            " does not match layout D+N+1 = " + std::to_string(d + n + 1));

    std::vector<std::vector<std::size_t>> groups(n + 2);
    for (std::size_t i = 0; i < d; ++i) {
        int s = partition.subnet_of[i];
        if (s == AtlasPartition::kUnassigned)
            groups[n].push_back(i);
        else
            groups[static_cast<std::size_t>(s) - 1].push_back(i);
    }
    groups[n + 1].push_back(d + n);  // global token

    Matrix out(n + 2, n + 2);
    for (std::size_t a = 0; a < groups.size(); ++a)
        for (std::size_t b = 0; b < groups.size(); ++b) {
            if (groups[a].empty() || groups[b].empty()) continue;
            double sum = 0.0;
            for (std::size_t i : groups[a])
                for (std::size_t j : groups[b]) sum += token_map(i, j);
            out(a, b) = sum / static_cast<double>(groups[a].size() * groups[b].size());
        }
    return out;
}

std::vector<std::string> subnet_map_labels(const AtlasPartition& partition) {
    std::vector<std::string> labels;
    for (std::size_t k = 1; k <= partition.subnet_count; ++k)
        labels.push_back("subnet_" + std::to_string(k));
    labels.push_back("unassigned");
    labels.push_back("global");
    return labels;
}

void emit_plot_data(const Matrix& map, const std::vector<std::string>& labels,
                    const std::filesystem::path& out_path) {
    io::write_matrix_csv(out_path, map, labels, labels);
}

}  // namespace fcni
