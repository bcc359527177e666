#include "ctm/ingest.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "NPY reader/writer assumes a little-endian host");

namespace ctm {

namespace {

constexpr char kNpyMagic[] = "\x93NUMPY";
constexpr std::size_t kNpyMagicLen = 6;

enum class Dtype { f4, f8, i4, i8 };

std::size_t itemsize(Dtype d) {
    return (d == Dtype::f4 || d == Dtype::i4) ? 4 : 8;
}

struct NpyHeader {
    Dtype dtype = Dtype::f8;
    bool fortran_order = false;
    std::vector<std::int64_t> shape;
    std::size_t data_offset = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        throw IoError("read failed for " + path.string());
    }
    return std::move(buf).str();
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

/// Finds the value text following `'key':` in a Python dict literal.
std::string_view dict_value(std::string_view dict, std::string_view key,
                            const std::string& where) {
    const std::string quoted_single = "'" + std::string(key) + "'";
    const std::string quoted_double = "\"" + std::string(key) + "\"";
    auto pos = dict.find(quoted_single);
    std::size_t keylen = quoted_single.size();
    if (pos == std::string_view::npos) {
        pos = dict.find(quoted_double);
        keylen = quoted_double.size();
    }
    if (pos == std::string_view::npos) {
        throw FormatError(where + ": NPY header lacks '" + std::string(key) + "'");
    }
    auto rest = dict.substr(pos + keylen);
    rest = trim(rest);
    if (rest.empty() || rest.front() != ':') {
        throw FormatError(where + ": malformed NPY header near '" + std::string(key) + "'");
    }
    rest = trim(rest.substr(1));
    return rest;
}

NpyHeader parse_npy_header(const std::string& bytes, const std::string& where) {
    if (bytes.size() < kNpyMagicLen + 4 || std::memcmp(bytes.data(), kNpyMagic, kNpyMagicLen) != 0) {
        throw FormatError(where + ": missing NPY magic");
    }
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0) {
        throw LayoutError(where + ": NPY version " + std::to_string(major) + "." +
                          std::to_string(minor) + " is not supported (need 1.0)");
    }
    const std::size_t header_len = static_cast<unsigned char>(bytes[8]) |
                                   (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    if (bytes.size() < 10 + header_len) {
        throw FormatError(where + ": truncated NPY header");
    }
    const std::string_view dict = trim(std::string_view(bytes).substr(10, header_len));
    if (dict.empty() || dict.front() != '{' || dict.back() != '}') {
        throw FormatError(where + ": NPY header is not a dict literal");
    }

    NpyHeader h;
    h.data_offset = 10 + header_len;

    auto descr = dict_value(dict, "descr", where);
    if (descr.size() < 2 || (descr.front() != '\'' && descr.front() != '"')) {
        throw FormatError(where + ": malformed 'descr'");
    }
    const char quote = descr.front();
    const auto close = descr.find(quote, 1);
    if (close == std::string_view::npos) {
        throw FormatError(where + ": malformed 'descr'");
    }
    const std::string_view type = descr.substr(1, close - 1);
    if (type == "<f4") {
        h.dtype = Dtype::f4;
    } else if (type == "<f8") {
        h.dtype = Dtype::f8;
    } else if (type == "<i4") {
        h.dtype = Dtype::i4;
    } else if (type == "<i8") {
        h.dtype = Dtype::i8;
    } else {
        throw LayoutError(where + ": dtype '" + std::string(type) +
                          "' is not supported (need '<f4' or '<f8')");
    }

    auto fortran = dict_value(dict, "fortran_order", where);
    if (fortran.starts_with("False")) {
        h.fortran_order = false;
    } else if (fortran.starts_with("True")) {
        h.fortran_order = true;
    } else {
        throw FormatError(where + ": malformed 'fortran_order'");
    }

    auto shape = dict_value(dict, "shape", where);
    if (shape.empty() || shape.front() != '(') {
        throw FormatError(where + ": malformed 'shape'");
    }
    const auto shape_close = shape.find(')');
    if (shape_close == std::string_view::npos) {
        throw FormatError(where + ": malformed 'shape'");
    }
    std::string_view dims = shape.substr(1, shape_close - 1);
    while (!dims.empty()) {
        const auto comma = dims.find(',');
        const auto token = trim(dims.substr(0, comma));
        if (!token.empty()) {
            std::int64_t v = 0;
            const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
            if (res.ec != std::errc{} || res.ptr != token.data() + token.size() || v < 0) {
                throw FormatError(where + ": malformed 'shape' entry '" + std::string(token) + "'");
            }
            h.shape.push_back(v);
        }
        if (comma == std::string_view::npos) {
            break;
        }
        dims.remove_prefix(comma + 1);
    }
    return h;
}

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

double element_at(const std::string& bytes, std::size_t offset, Dtype dtype) {
    const char* p = bytes.data() + offset;
    switch (dtype) {
        case Dtype::f4: return static_cast<double>(load_le<float>(p));
        case Dtype::f8: return load_le<double>(p);
        case Dtype::i4: return static_cast<double>(load_le<std::int32_t>(p));
        case Dtype::i8: return static_cast<double>(load_le<std::int64_t>(p));
    }
    return 0.0;
}

/// Decodes the payload as an (rows x cols) C-order matrix.
MatrixXr decode_npy(const std::string& bytes, const NpyHeader& h, Index rows, Index cols,
                    const std::string& where) {
    const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    const std::size_t need = count * itemsize(h.dtype);
    if (bytes.size() - h.data_offset != need) {
        throw FormatError(where + ": payload has " + std::to_string(bytes.size() - h.data_offset) +
                          " bytes, expected " + std::to_string(need));
    }
    MatrixXr out(rows, cols);
    std::size_t offset = h.data_offset;
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            out(i, j) = element_at(bytes, offset, h.dtype);
            offset += itemsize(h.dtype);
        }
    }
    return out;
}

MatrixXr read_npy(const std::filesystem::path& path) {
    const std::string where = path.string();
    const std::string bytes = read_file(path);
    const NpyHeader h = parse_npy_header(bytes, where);
    if (h.dtype != Dtype::f4 && h.dtype != Dtype::f8) {
        throw LayoutError(where + ": feature arrays must be '<f4' or '<f8'");
    }
    if (h.fortran_order) {
        throw LayoutError(where + ": fortran_order arrays are not supported");
    }
    if (h.shape.size() != 2) {
        throw LayoutError(where + ": expected a 2-D array, got " + std::to_string(h.shape.size()) +
                          "-D");
    }
    return decode_npy(bytes, h, static_cast<Index>(h.shape[0]), static_cast<Index>(h.shape[1]),
                      where);
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        lines.push_back(text.substr(0, nl));
        if (nl == std::string_view::npos) {
            break;
        }
        text.remove_prefix(nl + 1);
    }
    return lines;
}

double parse_number(std::string_view token, const std::string& where, std::size_t row,
                    std::size_t col) {
    token = trim(token);
    if (!token.empty() && token.front() == '+') {
        token.remove_prefix(1);
    }
    double v = 0.0;
    const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
    if (token.empty() || res.ec != std::errc{} || res.ptr != token.data() + token.size()) {
        throw FormatError(where + ": cannot parse '" + std::string(token) + "' at row " +
                          std::to_string(row) + ", column " + std::to_string(col));
    }
    return v;
}

/// Data rows of a headered CSV as numbers; the header is skipped.
std::vector<std::vector<double>> read_csv_rows(const std::filesystem::path& path) {
    const std::string where = path.string();
    const std::string text = read_file(path);
    auto lines = split_lines(text);
    if (lines.empty() || trim(lines.front()).empty()) {
        throw FormatError(where + ": CSV needs a header line");
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto line = trim(lines[li]);
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::string_view rest = line;
        std::size_t col = 0;
        while (true) {
            const auto comma = rest.find(',');
            row.push_back(parse_number(rest.substr(0, comma), where, rows.size(), col));
            ++col;
            if (comma == std::string_view::npos) {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw FormatError(where + ": row " + std::to_string(rows.size()) + " has " +
                              std::to_string(row.size()) + " columns, expected " +
                              std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

MatrixXr read_csv(const std::filesystem::path& path) {
    const auto rows = read_csv_rows(path);
    if (rows.empty()) {
        throw ValidationError(path.string() + ": CSV has no data rows");
    }
    MatrixXr out(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string npy_header_bytes(std::string_view descr, Index rows, std::optional<Index> cols) {
    std::string dict = "{'descr': '" + std::string(descr) + "', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ",";
    if (cols) {
        dict += " " + std::to_string(*cols);
    }
    dict += "), }";
    // Pad so that magic + version + length + header is a multiple of 64.
    const std::size_t unpadded = 10 + dict.size() + 1;
    const std::size_t padded = (unpadded + 63) / 64 * 64;
    dict.append(padded - unpadded, ' ');
    dict.push_back('\n');

    std::string out(kNpyMagic, kNpyMagicLen);
    out.push_back('\x01');
    out.push_back('\x00');
    const auto len = static_cast<std::uint16_t>(dict.size());
    out.push_back(static_cast<char>(len & 0xff));
    out.push_back(static_cast<char>(len >> 8));
    out += dict;
    return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

}  // namespace

ArrayFormat parse_array_format(const std::string& name) {
    if (name == "npy") {
        return ArrayFormat::npy;
    }
    if (name == "csv") {
        return ArrayFormat::csv;
    }
    throw ValidationError("unknown array format '" + name + "' (expected npy or csv)");
}

ArrayFormat format_for_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".npy") {
        return ArrayFormat::npy;
    }
    if (ext == ".csv") {
        return ArrayFormat::csv;
    }
    throw FormatError(path.string() + ": unrecognized extension (expected .npy or .csv)");
}

MatrixXr read_array(const std::filesystem::path& path) {
    MatrixXr out = format_for_path(path) == ArrayFormat::npy ? read_npy(path) : read_csv(path);
    validate_features(out, path.string());
    return out;
}

void write_array(const Eigen::Ref<const MatrixXr>& matrix, const std::filesystem::path& path,
                 ArrayFormat format) {
    validate_features(matrix, "array for " + path.string());
    auto out = open_for_write(path);
    if (format == ArrayFormat::npy) {
        const std::string header = npy_header_bytes("<f8", matrix.rows(), matrix.cols());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (Index i = 0; i < matrix.rows(); ++i) {
            for (Index j = 0; j < matrix.cols(); ++j) {
                const double v = matrix(i, j);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
        }
    } else {
        for (Index j = 0; j < matrix.cols(); ++j) {
            out << (j ? ",c" : "c") << j;
        }
        out << '\n';
        for (Index i = 0; i < matrix.rows(); ++i) {
            for (Index j = 0; j < matrix.cols(); ++j) {
                if (j) {
                    out << ',';
                }
                out << format_double(matrix(i, j));
            }
            out << '\n';
        }
    }
    finish_write(out, path);
}

void write_scores(const Eigen::Ref<const VectorXr>& scores, const std::filesystem::path& path,
                  ArrayFormat format) {
    validate_features(scores, "scores for " + path.string());
    if (format == ArrayFormat::npy) {
        MatrixXr column = scores;
        write_array(column, path, format);
        return;
    }
    auto out = open_for_write(path);
    out << "score\n";
    for (Index i = 0; i < scores.size(); ++i) {
        out << format_double(scores(i)) << '\n';
    }
    finish_write(out, path);
}

LabelVector read_labels(const std::filesystem::path& path, std::optional<int> num_classes) {
    const std::string where = path.string();
    std::vector<double> values;
    if (format_for_path(path) == ArrayFormat::npy) {
        const std::string bytes = read_file(path);
        const NpyHeader h = parse_npy_header(bytes, where);
        if (h.fortran_order && h.shape.size() == 2 && h.shape[1] != 1) {
            throw LayoutError(where + ": fortran_order arrays are not supported");
        }
        Index n = 0;
        if (h.shape.size() == 1) {
            n = static_cast<Index>(h.shape[0]);
        } else if (h.shape.size() == 2 && h.shape[1] == 1) {
            n = static_cast<Index>(h.shape[0]);
        } else {
            throw LayoutError(where + ": labels must have shape (n,) or (n, 1)");
        }
        const MatrixXr m = decode_npy(bytes, h, n, 1, where);
        values.assign(m.data(), m.data() + m.size());
    } else {
        for (const auto& row : read_csv_rows(path)) {
            if (row.size() != 1) {
                throw FormatError(where + ": label CSV must have exactly one column");
            }
            values.push_back(row.front());
        }
    }
    if (values.empty()) {
        throw ValidationError(where + ": no labels");
    }

    LabelVector out;
    out.labels.reserve(values.size());
    int max_label = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (!std::isfinite(v) || v != std::floor(v) || v < 0 || v > 1e9) {
            throw ValidationError(where + ": label at row " + std::to_string(i) +
                                  " is not a non-negative integer");
        }
        out.labels.push_back(static_cast<int>(v));
        max_label = std::max(max_label, out.labels.back());
    }
    out.num_classes = num_classes.value_or(max_label + 1);
    validate_labels(out);
    return out;
}

void write_labels(const LabelVector& labels, const std::filesystem::path& path) {
    auto out = open_for_write(path);
    out << "label\n";
    for (const int y : labels.labels) {
        out << y << '\n';
    }
    finish_write(out, path);
}

}  // namespace ctm
