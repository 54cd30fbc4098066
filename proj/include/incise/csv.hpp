#pragma once

// Minimal CSV reading/writing for the point tables and result files used
// throughout. Point tables are `x,y[,value]` with a mandatory header row;
// the optional third column carries a per-point mark.

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "incise/errors.hpp"
#include "incise/util.hpp"

namespace incise {

struct PointSet {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> value; // empty when the table has no value column
    bool has_values = false;

    std::size_t size() const { return x.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_csv_number(const std::string& tok, const std::string& path, std::size_t lineno) {
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv '" + path + "' line " + std::to_string(lineno) +
                        ": bad numeric field '" + tok + "'");
    }
}

} // namespace detail

inline PointSet read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open '" + path + "'");
    PointSet ps;
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    std::size_t ncol = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = detail::split_csv_line(line);
        if (!header_seen) {
            header_seen = true;
            ncol = fields.size();
            if (ncol != 2 && ncol != 3)
                throw DataError("csv '" + path + "': expected 2 or 3 columns, got " +
                                std::to_string(ncol));
            ps.has_values = (ncol == 3);
            continue;
        }
        if (fields.size() != ncol)
            throw DataError("csv '" + path + "' line " + std::to_string(lineno) +
                            ": expected " + std::to_string(ncol) + " fields, got " +
                            std::to_string(fields.size()));
        ps.x.push_back(detail::parse_csv_number(fields[0], path, lineno));
        ps.y.push_back(detail::parse_csv_number(fields[1], path, lineno));
        if (ps.has_values) ps.value.push_back(detail::parse_csv_number(fields[2], path, lineno));
    }
    return ps;
}

inline void write_points_csv(const PointSet& ps, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("csv: cannot write '" + path + "'");
    out << (ps.has_values ? "x,y,value\n" : "x,y\n");
    for (std::size_t i = 0; i < ps.size(); ++i) {
        out << format_double(ps.x[i]) << ',' << format_double(ps.y[i]);
        if (ps.has_values) out << ',' << format_double(ps.value[i]);
        out << '\n';
    }
    if (!out) throw DataError("csv: write failed for '" + path + "'");
}

// Row-oriented CSV writer for result tables: caller supplies the header
// once, then appends rows of preformatted fields.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& header) : out_(path), path_(path) {
        if (!out_) throw DataError("csv: cannot write '" + path + "'");
        out_ << header << '\n';
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

    ~CsvWriter() { out_.flush(); }

private:
    std::ofstream out_;
    std::string path_;
};

} // namespace incise
