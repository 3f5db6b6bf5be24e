#include "fcni/fcn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fcni/error.hpp"
#include "fcni/io.hpp"

namespace fcni {

void AtlasPartition::validate() const {
    if (roi_count == 0) throw config_error("atlas has no ROIs");
    if (roi_names.size() != roi_count) throw config_error("atlas name count mismatch");
    if (subnet_of.size() != roi_count) throw config_error("atlas assignment count mismatch");
    std::vector<std::size_t> sizes(subnet_count, 0);
    for (int s : subnet_of) {
        if (s == kUnassigned) continue;
        if (s < 1 || static_cast<std::size_t>(s) > subnet_count)
            throw config_error("ROI assigned to nonexistent subnetwork " + std::to_string(s));
        ++sizes[static_cast<std::size_t>(s) - 1];
    }
    for (std::size_t k = 0; k < subnet_count; ++k)
        if (sizes[k] == 0)
            throw config_error("subnetwork " + std::to_string(k + 1) + " has no members");
}

std::vector<std::vector<std::size_t>> AtlasPartition::members() const {
    std::vector<std::vector<std::size_t>> out(subnet_count);
    for (std::size_t i = 0; i < roi_count; ++i)
        if (subnet_of[i] != kUnassigned) out[static_cast<std::size_t>(subnet_of[i]) - 1].push_back(i);
    return out;
}

std::vector<std::size_t> AtlasPartition::unassigned() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roi_count; ++i)
        if (subnet_of[i] == kUnassigned) out.push_back(i);
    return out;
}

AtlasPartition AtlasPartition::make_default(std::size_t d, std::size_t n) {
    if (n == 0 || n > d) throw config_error("subnetwork count must be in [1, D]");
    AtlasPartition p;
    p.roi_count = d;
    p.subnet_count = n;
    p.roi_names.reserve(d);
    for (std::size_t i = 0; i < d; ++i) p.roi_names.push_back("roi_" + std::to_string(i + 1));
    p.subnet_of.assign(d, kUnassigned);
    std::size_t block = d / n;
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < block; ++j)
            p.subnet_of[k * block + j] = static_cast<int>(k + 1);
    p.validate();
    return p;
}

AtlasPartition AtlasPartition::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open partition file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("name,subnet", 0) != 0)
        throw config_error("partition file must start with 'name,subnet': " + path.string());
    AtlasPartition p;
    int max_subnet = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto comma = line.find(',');
        if (comma == std::string::npos) throw config_error("bad partition row: " + line);
        p.roi_names.push_back(line.substr(0, comma));
        int s = std::stoi(line.substr(comma + 1));
        if (s < 0) throw config_error("negative subnetwork id in partition file");
        p.subnet_of.push_back(s);
        max_subnet = std::max(max_subnet, s);
    }
    p.roi_count = p.roi_names.size();
    p.subnet_count = static_cast<std::size_t>(max_subnet);
    p.validate();
    return p;
}

void AtlasPartition::save_csv(const std::filesystem::path& path) const {
    std::string out = "name,subnet\n";
    for (std::size_t i = 0; i < roi_count; ++i)
        out += roi_names[i] + "," + std::to_string(subnet_of[i]) + "\n";
    io::atomic_write_bytes(path, out);
}

FcnMatrix pearson_fcn(const BoldSeries& series) {
    const std::size_t t = series.timepoints();
    const std::size_t d = series.regions();
    if (t < 2) throw invalid_input("pearson_fcn needs at least 2 time points, got " +
                                   std::to_string(t));
    for (double v : series.samples.data)
        if (!std::isfinite(v)) throw invalid_input("pearson_fcn: non-finite BOLD sample");

    // Center each column, track zero-variance ROIs.
    Matrix centered(t, d);
    std::vector<double> norms(d, 0.0);
    FcnMatrix out;
    out.values = Matrix(d, d);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < t; ++i) mean += series.samples(i, j);
        mean /= static_cast<double>(t);
        double ss = 0.0;
        for (std::size_t i = 0; i < t; ++i) {
            double c = series.samples(i, j) - mean;
            centered(i, j) = c;
            ss += c * c;
        }
        norms[j] = std::sqrt(ss);
        if (norms[j] == 0.0) out.degenerate_rows.insert(j);
    }

    // Column-major copy so correlations are dot products of contiguous spans.
    Matrix colmaj(d, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < d; ++j) colmaj(j, i) = centered(i, j);

    for (std::size_t a = 0; a < d; ++a) {
        out.values(a, a) = 1.0;
        for (std::size_t b = a + 1; b < d; ++b) {
            double r = 0.0;
            if (norms[a] > 0.0 && norms[b] > 0.0) {
                r = kern::dot(colmaj.row(a), colmaj.row(b), t) / (norms[a] * norms[b]);
                if (r > 1.0) r = 1.0;
                if (r < -1.0) r = -1.0;
            }
            out.values(a, b) = r;
            out.values(b, a) = r;
        }
    }
    return out;
}

std::size_t window_count(std::size_t t, std::size_t length, std::size_t step) {
    if (length > t) throw invalid_input("window length exceeds series length");
    if (length < 2) throw invalid_input("window length must be at least 2");
    if (step < 1) throw invalid_input("window step must be positive");
    return (t - length) / step + 1;
}

std::vector<BoldSeries> sliding_windows(const BoldSeries& series, std::size_t length,
                                        std::size_t step) {
    const std::size_t t = series.timepoints();
    const std::size_t n = window_count(t, length, step);
    std::vector<BoldSeries> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t start = k * step;
        BoldSeries w;
        w.subject_id = series.subject_id + "_w" + std::to_string(k);
        w.window_origin = WindowOrigin{series.subject_id, start};
        w.samples = Matrix(length, series.regions());
        for (std::size_t i = 0; i < length; ++i)
            for (std::size_t j = 0; j < series.regions(); ++j)
                w.samples(i, j) = series.samples(start + i, j);
        out.push_back(std::move(w));
    }
    return out;
}

AdjacencyMatrix threshold_adjacency(const FcnMatrix& fcn, double tau) {
    if (tau < 0.0 || tau > 1.0) throw invalid_input("threshold must be in [0, 1]");
    const std::size_t d = fcn.dim();
    AdjacencyMatrix adj;
    adj.values = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            adj.values(i, j) = (i != j && std::fabs(fcn.values(i, j)) >= tau) ? 1.0 : 0.0;
    return adj;
}

NormalizedAdjacency normalize_adjacency(const AdjacencyMatrix& adj) {
    const std::size_t d = adj.values.rows;
    // Degrees of A + I are >= 1, so the inverse square roots are always finite.
    std::vector<double> inv_sqrt_deg(d);
    for (std::size_t i = 0; i < d; ++i) {
        double deg = 1.0 + kern::sum(adj.values.row(i), d);
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    NormalizedAdjacency out;
    out.values = Matrix(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double aij = adj.values(i, j) + (i == j ? 1.0 : 0.0);
            out.values(i, j) = inv_sqrt_deg[i] * aij * inv_sqrt_deg[j];
        }
    return out;
}

void write_bold_csv(const std::filesystem::path& path, const BoldSeries& series,
                    const std::vector<std::string>& roi_names) {
    io::write_matrix_csv(path, series.samples, roi_names);
}

BoldSeries read_bold_csv(const std::filesystem::path& path, const std::string& subject_id) {
    BoldSeries s;
    s.subject_id = subject_id;
    s.samples = io::read_matrix_csv(path);
    return s;
}

}  // namespace fcni
