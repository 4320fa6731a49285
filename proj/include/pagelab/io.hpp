#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pagelab/core.hpp"
#include "pagelab/lindblad.hpp"

namespace pagelab {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Shortest text that round-trips: 17 significant digits, "inf"/"nan" spelled out.
inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes `content` to `path` through a temporary file and a rename, so a
/// reader never sees a half-written file.
inline void write_file_atomic(const fs::path& path, const std::string& content)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(os), ErrorCode::io, "cannot open " + tmp.string());
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        os.flush();
        require(static_cast<bool>(os), ErrorCode::io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Column-oriented table with a fixed header. Cells are doubles or short
/// strings (level pairs, flags).
class CsvTable {
public:
    using Cell = std::variant<double, std::string>;

    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    const std::vector<Cell>& row(std::size_t i) const { return rows_[i]; }

    void add(std::vector<Cell> row)
    {
        require(row.size() == header_.size(), ErrorCode::dimension_mismatch, "CSV row has the wrong width");
        rows_.push_back(std::move(row));
    }

    void add_numbers(const std::vector<double>& values)
    {
        std::vector<Cell> r(values.begin(), values.end());
        add(std::move(r));
    }

    /// Numeric column by name; string cells become NaN.
    std::vector<double> column(const std::string& name) const
    {
        const auto it = std::find(header_.begin(), header_.end(), name);
        require(it != header_.end(), ErrorCode::invalid_argument, "no CSV column named " + name);
        const std::size_t c = static_cast<std::size_t>(it - header_.begin());
        std::vector<double> out;
        out.reserve(rows_.size());
        for (const auto& r : rows_)
            out.push_back(std::holds_alternative<double>(r[c]) ? std::get<double>(r[c])
                                                               : std::numeric_limits<double>::quiet_NaN());
        return out;
    }

    std::string str() const
    {
        std::string s;
        for (std::size_t c = 0; c < header_.size(); ++c)
            s += (c ? "," : "") + header_[c];
        s += '\n';
        for (const auto& r : rows_) {
            for (std::size_t c = 0; c < r.size(); ++c) {
                if (c)
                    s += ',';
                if (std::holds_alternative<double>(r[c]))
                    s += format_double(std::get<double>(r[c]));
                else
                    s += std::get<std::string>(r[c]);
            }
            s += '\n';
        }
        return s;
    }

    void save(const fs::path& path) const { write_file_atomic(path, str()); }

    static CsvTable load(const fs::path& path)
    {
        std::istringstream is(read_file(path));
        std::string line;
        require(static_cast<bool>(std::getline(is, line)), ErrorCode::io, "empty CSV " + path.string());
        CsvTable t(split(line));
        while (std::getline(is, line)) {
            if (line.empty())
                continue;
            std::vector<Cell> r;
            for (const auto& f : split(line)) {
                char* end = nullptr;
                const double v = std::strtod(f.c_str(), &end);
                if (!f.empty() && end == f.c_str() + f.size())
                    r.emplace_back(v);
                else
                    r.emplace_back(f);
            }
            t.add(std::move(r));
        }
        return t;
    }

private:
    static std::vector<std::string> split(const std::string& line)
    {
        std::vector<std::string> out;
        std::string cur;
        for (char ch : line) {
            if (ch == ',') {
                out.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    }

    std::vector<std::string> header_;
    std::vector<std::vector<Cell>> rows_;
};

// ---------------------------------------------------------------------------
// SVG line plots

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    std::vector<double> markers; // vertical guide lines at these x values
};

namespace detail {

inline std::string svg_escape(const std::string& s)
{
    std::string o;
    for (char c : s) {
        switch (c) {
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '&': o += "&amp;"; break;
        case '"': o += "&quot;"; break;
        default: o += c;
        }
    }
    return o;
}

inline std::string svg_num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick_label(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

} // namespace detail

/// Self-contained SVG with axes, ticks, one polyline per series and a legend.
/// Non-finite points split a polyline.
inline std::string render_svg(const PlotSpec& spec)
{
    constexpr double W = 720, H = 440, L = 70, R = 150, T = 36, B = 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : spec.series)
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                xmin = std::min(xmin, s.x[i]);
                xmax = std::max(xmax, s.x[i]);
                ymin = std::min(ymin, s.y[i]);
                ymax = std::max(ymax, s.y[i]);
            }
    if (!std::isfinite(xmin)) {
        xmin = ymin = 0.0;
        xmax = ymax = 1.0;
    }
    if (xmax == xmin)
        xmax = xmin + 1.0;
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.04 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    const auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << detail::svg_escape(spec.title) << "</text>\n";
    // Axes and ticks.
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 5; ++k) {
        const double xv = xmin + (xmax - xmin) * k / 5.0, yv = ymin + (ymax - ymin) * k / 5.0;
        o << "<line x1=\"" << detail::svg_num(px(xv)) << "\" y1=\"" << H - B << "\" x2=\"" << detail::svg_num(px(xv))
          << "\" y2=\"" << H - B + 5 << "\" stroke=\"black\"/>";
        o << "<text x=\"" << detail::svg_num(px(xv)) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
          << detail::tick_label(xv) << "</text>\n";
        o << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::svg_num(py(yv)) << "\" x2=\"" << L << "\" y2=\""
          << detail::svg_num(py(yv)) << "\" stroke=\"black\"/>";
        o << "<text x=\"" << L - 8 << "\" y=\"" << detail::svg_num(py(yv) + 4) << "\" text-anchor=\"end\">"
          << detail::tick_label(yv) << "</text>\n";
    }
    o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
      << detail::svg_escape(spec.x_label) << "</text>\n";
    o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << (T + H - B) / 2 << ")\">" << detail::svg_escape(spec.y_label) << "</text>\n";
    for (double m : spec.markers)
        if (std::isfinite(m) && m >= xmin && m <= xmax)
            o << "<line x1=\"" << detail::svg_num(px(m)) << "\" y1=\"" << T << "\" x2=\"" << detail::svg_num(px(m))
              << "\" y2=\"" << H - B << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    for (std::size_t si = 0; si < spec.series.size(); ++si) {
        const auto& s = spec.series[si];
        const char* col = palette[si % 10];
        std::string pts;
        const auto flush = [&] {
            if (!pts.empty())
                o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"" << pts
                  << "\"/>\n";
            pts.clear();
        };
        for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                flush();
                continue;
            }
            pts += detail::svg_num(px(s.x[i])) + "," + detail::svg_num(py(s.y[i])) + " ";
        }
        flush();
        if (si < 24) {
            const double ly = T + 14.0 * static_cast<double>(si);
            o << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
              << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>";
            o << "<text x=\"" << W - R + 35 << "\" y=\"" << ly + 4 << "\">" << detail::svg_escape(s.label)
              << "</text>\n";
        }
    }
    o << "</svg>\n";
    return o.str();
}

/// Plot every column of `table` except `x_column` against it.
inline PlotSpec plot_columns(const CsvTable& table, const std::string& x_column, const std::string& title,
                             const std::string& y_label, std::size_t max_series = 12)
{
    PlotSpec spec{title, x_column, y_label, {}, {}};
    const auto x = table.column(x_column);
    for (const auto& name : table.header()) {
        if (name == x_column || spec.series.size() >= max_series)
            continue;
        spec.series.push_back({name, x, table.column(name)});
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Binary state files.
//
// PGS1: "PGS1", f64 time, u64 dim, then dim*dim complex entries row-major,
//       each as (f64 re, f64 im). Density matrices.
// PGV1: "PGV1", f64 time, u64 dim, then dim complex entries. State vectors.
// All numbers little-endian.

namespace detail {

template <typename T>
void put(std::string& buf, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof v);
}

template <typename T>
T get(const std::string& buf, std::size_t& pos, const std::string& what)
{
    require(pos + sizeof(T) <= buf.size(), ErrorCode::io, what + " is truncated");
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
}

} // namespace detail

inline std::string encode_snapshot(const DensityMatrix& rho, double time)
{
    const std::uint64_t d = rho.dim();
    std::string buf = "PGS1";
    buf.reserve(4 + 16 + 16 * d * d);
    detail::put(buf, time);
    detail::put(buf, d);
    for (std::uint64_t r = 0; r < d; ++r)
        for (std::uint64_t c = 0; c < d; ++c) {
            detail::put(buf, rho.matrix(r, c).real());
            detail::put(buf, rho.matrix(r, c).imag());
        }
    return buf;
}

inline DensityMatrix decode_snapshot(const std::string& buf, double* time = nullptr)
{
    require(buf.size() >= 4 && buf.compare(0, 4, "PGS1") == 0, ErrorCode::io, "not a PGS1 snapshot");
    std::size_t pos = 4;
    const double t = detail::get<double>(buf, pos, "snapshot");
    const auto d = detail::get<std::uint64_t>(buf, pos, "snapshot");
    require(d >= 1 && d <= (std::uint64_t{1} << 16), ErrorCode::io, "snapshot dimension out of range");
    require(buf.size() == pos + 16 * d * d, ErrorCode::io, "snapshot size does not match its dimension");
    ComplexMatrix m(d, d);
    for (std::uint64_t r = 0; r < d; ++r)
        for (std::uint64_t c = 0; c < d; ++c) {
            const double re = detail::get<double>(buf, pos, "snapshot");
            const double im = detail::get<double>(buf, pos, "snapshot");
            m(r, c) = cplx(re, im);
        }
    if (time)
        *time = t;
    return DensityMatrix(std::move(m));
}

inline void save_snapshot(const fs::path& path, const DensityMatrix& rho, double time)
{
    write_file_atomic(path, encode_snapshot(rho, time));
}

inline DensityMatrix load_snapshot(const fs::path& path, double* time = nullptr)
{
    return decode_snapshot(read_file(path), time);
}

inline void save_state_vector(const fs::path& path, const ComplexVector& psi, double time)
{
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(os), ErrorCode::io, "cannot open " + tmp.string());
        const std::uint64_t d = static_cast<std::uint64_t>(psi.size());
        os.write("PGV1", 4);
        os.write(reinterpret_cast<const char*>(&time), sizeof time);
        os.write(reinterpret_cast<const char*>(&d), sizeof d);
        // std::complex<double> is laid out as (re, im).
        os.write(reinterpret_cast<const char*>(psi.data()), static_cast<std::streamsize>(16 * d));
        require(static_cast<bool>(os), ErrorCode::io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline ComplexVector load_state_vector(const fs::path& path, double* time = nullptr)
{
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorCode::io, "cannot open " + path.string());
    char magic[4];
    double t = 0.0;
    std::uint64_t d = 0;
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(&t), sizeof t);
    is.read(reinterpret_cast<char*>(&d), sizeof d);
    require(static_cast<bool>(is) && std::string(magic, 4) == "PGV1", ErrorCode::io,
            "not a PGV1 state file: " + path.string());
    require(d >= 1 && d <= (std::uint64_t{1} << 34), ErrorCode::io, "state dimension out of range");
    ComplexVector psi(static_cast<Eigen::Index>(d));
    is.read(reinterpret_cast<char*>(psi.data()), static_cast<std::streamsize>(16 * d));
    require(static_cast<bool>(is) && is.peek() == std::char_traits<char>::eof(), ErrorCode::io,
            "state file has the wrong size: " + path.string());
    if (time)
        *time = t;
    return psi;
}

// ---------------------------------------------------------------------------
// Append-only record log: u64 length followed by a MessagePack document.
// A torn final record (crash mid-write) is ignored on read.

class RecordLog {
public:
    explicit RecordLog(fs::path path) : path_(std::move(path)) {}

    const fs::path& path() const { return path_; }

    std::vector<json> read_all() const
    {
        std::vector<json> out;
        if (!fs::exists(path_))
            return out;
        const std::string buf = read_file(path_);
        std::size_t pos = 0;
        while (pos + 8 <= buf.size()) {
            std::uint64_t len;
            std::memcpy(&len, buf.data() + pos, 8);
            if (pos + 8 + len > buf.size())
                break;
            out.push_back(json::from_msgpack(buf.begin() + static_cast<std::ptrdiff_t>(pos + 8),
                                             buf.begin() + static_cast<std::ptrdiff_t>(pos + 8 + len)));
            pos += 8 + len;
        }
        return out;
    }

    /// Keep the first `count` records and drop everything after them.
    void truncate(std::size_t count) const
    {
        if (!fs::exists(path_)) {
            require(count == 0, ErrorCode::io, "record log is missing");
            return;
        }
        const std::string buf = read_file(path_);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < count; ++k) {
            require(pos + 8 <= buf.size(), ErrorCode::io, "record log is shorter than the checkpoint");
            std::uint64_t len;
            std::memcpy(&len, buf.data() + pos, 8);
            require(pos + 8 + len <= buf.size(), ErrorCode::io, "record log is shorter than the checkpoint");
            pos += 8 + len;
        }
        fs::resize_file(path_, pos);
    }

    void append(const json& record) const
    {
        const std::vector<std::uint8_t> bytes = json::to_msgpack(record);
        std::ofstream os(path_, std::ios::binary | std::ios::app);
        require(static_cast<bool>(os), ErrorCode::io, "cannot open " + path_.string());
        const std::uint64_t len = bytes.size();
        os.write(reinterpret_cast<const char*>(&len), 8);
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(len));
        os.flush();
        require(static_cast<bool>(os), ErrorCode::io, "append failed for " + path_.string());
    }

private:
    fs::path path_;
};

/// Exact JSON encodings of Eigen vectors (doubles survive MessagePack bit for bit).
inline json to_json(const RealVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline RealVector real_vector_from_json(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const RealVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json(const ComplexMatrix& m)
{
    std::vector<double> flat;
    flat.reserve(2 * m.size());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            flat.push_back(m(r, c).real());
            flat.push_back(m(r, c).imag());
        }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline ComplexMatrix complex_matrix_from_json(const json& j)
{
    const Eigen::Index r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("data").get<std::vector<double>>();
    require(static_cast<Eigen::Index>(flat.size()) == 2 * r * c, ErrorCode::io, "corrupt matrix record");
    ComplexMatrix m(r, c);
    std::size_t k = 0;
    for (Eigen::Index cc = 0; cc < c; ++cc)
        for (Eigen::Index rr = 0; rr < r; ++rr, k += 2)
            m(rr, cc) = cplx(flat[k], flat[k + 1]);
    return m;
}

/// FNV-1a, used to name configs in sweeps and to detect config changes.
inline std::uint64_t fnv1a(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace pagelab
