#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "profile.hpp"

namespace kslayers {

inline constexpr const char* kVersion = "0.1.0";

/// Shortest text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

/// Writes `content` to a sibling temporary file and renames it over `path`.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// Comment block carried by every numeric table: version plus key=value config echo.
inline std::string comment_header(const std::vector<std::pair<std::string, std::string>>& config) {
    std::string s = std::string("# kslayers ") + kVersion + "\n";
    for (const auto& [k, v] : config) s += "# " + k + "=" + v + "\n";
    return s;
}

class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw DomainError("CsvTable: row width mismatch");
        rows_.push_back(cells);
    }
    void add_row(const std::vector<double>& cells) {
        std::vector<std::string> s;
        s.reserve(cells.size());
        for (double x : cells) s.push_back(format_double(x));
        add_row(s);
    }
    std::size_t rows() const { return rows_.size(); }

    std::string str(const std::string& header = {}) const {
        std::string s = header;
        s += join(columns_) + "\n";
        for (const auto& r : rows_) s += join(r) + "\n";
        return s;
    }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
        return s;
    }
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

inline CsvTable profile_table(const Profile& p) {
    CsvTable t({"r", "u", "d1", "d2", "piece"});
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d1 = i < p.d1.size() ? p.d1[i] : 0.0;
        const double d2 = i < p.d2.size() ? p.d2[i] : 0.0;
        const int pc = i < p.piece.size() ? int(p.piece[i]) : int(kNone);
        t.add_row({format_double(p.r[i]), format_double(p.u[i]), format_double(d1), format_double(d2),
                   std::to_string(pc)});
    }
    return t;
}

/// Reads a profile CSV (comment lines start with '#'; columns r and u required, d1, d2, piece optional).
inline Profile read_profile_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open profile " + path.string());
    std::string line;
    std::vector<std::string> cols;
    Profile p;
    int ir = -1, iu = -1, id1 = -1, id2 = -1, ip = -1;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cols.empty()) {
            cols = cells;
            for (int i = 0; i < int(cols.size()); ++i) {
                if (cols[i] == "r") ir = i;
                if (cols[i] == "u") iu = i;
                if (cols[i] == "d1") id1 = i;
                if (cols[i] == "d2") id2 = i;
                if (cols[i] == "piece") ip = i;
            }
            if (ir < 0 || iu < 0) throw DomainError("profile CSV needs columns r and u");
            continue;
        }
        if (cells.size() != cols.size()) throw DomainError("profile CSV: ragged row");
        p.r.push_back(std::stod(cells[ir]));
        p.u.push_back(std::stod(cells[iu]));
        p.d1.push_back(id1 >= 0 ? std::stod(cells[id1]) : 0.0);
        p.d2.push_back(id2 >= 0 ? std::stod(cells[id2]) : 0.0);
        p.piece.push_back(ip >= 0 ? Piece(std::stoi(cells[ip])) : kNone);
    }
    if (p.r.size() < 3) throw DomainError("profile CSV: need at least 3 rows");
    for (std::size_t i = 1; i < p.r.size(); ++i)
        if (!(p.r[i] > p.r[i - 1])) throw DomainError("profile CSV: radii must increase");
    return p;
}

}  // namespace kslayers
