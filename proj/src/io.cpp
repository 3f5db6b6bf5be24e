#include "fcni/io.hpp"

#include <bit>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fcni/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace fcni::io {

namespace fs = std::filesystem;

void atomic_write_bytes(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw io_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw io_error("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

void put_f64(std::string& out, const double* p, std::size_t n) {
    out.append(reinterpret_cast<const char*>(p), n * sizeof(double));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) throw io_error(std::string("truncated file reading ") + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    void f64s(double* dst, std::size_t n, const char* what) {
        need(n * sizeof(double), what);
        std::memcpy(dst, buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void write_fcn(const fs::path& path, const Matrix& m) {
    if (m.rows != m.cols) throw invalid_input("FCN matrix must be square");
    std::string out;
    out.reserve(8 + m.size() * sizeof(double));
    out.append("FCN1", 4);
    put_u32(out, static_cast<std::uint32_t>(m.rows));
    put_f64(out, m.data.data(), m.size());
    atomic_write_bytes(path, out);
}

Matrix read_fcn(const fs::path& path) {
    std::string buf = read_bytes(path);
    Reader r{buf};
    if (r.str(4, "magic") != "FCN1") throw io_error("bad FCN magic in " + path.string());
    std::uint32_t d = r.u32("dimension");
    Matrix m(d, d);
    r.f64s(m.data.data(), m.size(), "matrix payload");
    return m;
}

void write_named_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors) {
    std::string out;
    out.append("NTF1", 4);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    std::string manifest;
    for (const auto& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.append(t.name);
        put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
        std::size_t count = 1;
        manifest += t.name;
        for (std::uint32_t d : t.dims) {
            put_u32(out, d);
            count *= d;
            manifest += " " + std::to_string(d);
        }
        manifest += "\n";
        if (count != t.data.size())
            throw invalid_input("tensor " + t.name + " dims do not match payload size");
        put_f64(out, t.data.data(), t.data.size());
    }
    atomic_write_bytes(path, out);
    fs::path sidecar = path;
    sidecar += ".shapes.txt";
    atomic_write_bytes(sidecar, manifest);
}

std::vector<NamedTensor> read_named_tensors(const fs::path& path) {
    std::string buf = read_bytes(path);
    Reader r{buf};
    if (r.str(4, "magic") != "NTF1") throw io_error("bad tensor-file magic in " + path.string());
    std::uint32_t n = r.u32("tensor count");
    std::vector<NamedTensor> out(n);
    for (auto& t : out) {
        std::uint32_t name_len = r.u32("name length");
        t.name = r.str(name_len, "name");
        std::uint32_t rank = r.u32("rank");
        std::size_t count = 1;
        t.dims.resize(rank);
        for (auto& d : t.dims) {
            d = r.u32("dim");
            count *= d;
        }
        t.data.resize(count);
        r.f64s(t.data.data(), count, t.name.c_str());
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_matrix_csv(const fs::path& path, const Matrix& m,
                      const std::vector<std::string>& col_labels,
                      const std::vector<std::string>& row_labels) {
    if (col_labels.size() != m.cols) throw invalid_input("column label count mismatch");
    if (!row_labels.empty() && row_labels.size() != m.rows)
        throw invalid_input("row label count mismatch");
    std::string out;
    if (!row_labels.empty()) out += "label,";
    for (std::size_t j = 0; j < m.cols; ++j) {
        if (j) out += ",";
        out += col_labels[j];
    }
    out += "\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
        if (!row_labels.empty()) out += row_labels[i] + ",";
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (j) out += ",";
            out += format_double(m(i, j));
        }
        out += "\n";
    }
    atomic_write_bytes(path, out);
}

Matrix read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw io_error("empty CSV: " + path.string());
    bool has_row_labels = line.rfind("label,", 0) == 0;
    std::size_t cols = 1;
    for (char c : line)
        if (c == ',') ++cols;
    if (has_row_labels) --cols;
    std::vector<double> values;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first && has_row_labels) {
                first = false;
                continue;
            }
            first = false;
            values.push_back(std::stod(cell));
            ++col;
        }
        if (col != cols) throw io_error("ragged CSV row in " + path.string());
        ++rows;
    }
    Matrix m(rows, cols);
    m.data = std::move(values);
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    atomic_write_bytes(path, text);
}

}  // namespace fcni::io
