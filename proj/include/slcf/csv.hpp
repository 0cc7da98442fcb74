#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "slcf/errors.hpp"
#include "slcf/panel.hpp"

namespace slcf {

/// Column-role mapping for panel CSV input. `id` and `time` are required
/// structural columns; the rest name the model variables.
struct CsvSchema {
    std::string id = "id";
    std::string time = "time";
    std::string y = "y";
    std::string x1 = "x1";
    std::vector<std::string> exog;
    std::vector<std::string> inst;
};

struct CsvLoadOptions {
    // First-difference semantics requires consecutive integer times within
    // each individual; the within transform tolerates gaps.
    bool require_consecutive_time = false;
    Index t_max = 10000;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_number(const std::string& s, const std::string& col, std::size_t line_no) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw data_error("line " + std::to_string(line_no) + ": column '" + col +
                         "' has non-numeric value '" + s + "'");
    }
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size())
        throw data_error("line " + std::to_string(line_no) + ": column '" + col +
                         "' has non-numeric value '" + s + "'");
    if (!std::isfinite(v))
        throw data_error("line " + std::to_string(line_no) + ": column '" + col +
                         "' is not finite");
    return v;
}

inline std::int64_t parse_time(const std::string& s, std::size_t line_no) {
    std::size_t pos = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        throw data_error("line " + std::to_string(line_no) +
                         ": time value '" + s + "' is not an integer");
    }
    if (pos != s.size())
        throw data_error("line " + std::to_string(line_no) +
                         ": time value '" + s + "' is not an integer");
    return v;
}

}  // namespace detail

/// Reads a header CSV, groups rows by id and sorts them by time. Rejects
/// missing columns, non-numeric cells, duplicate (id, time) keys, T_i < 2
/// and (optionally) time gaps, each with the offending location.
inline PanelDataset load_csv(const std::string& path, const CsvSchema& schema,
                             const CsvLoadOptions& opts = {}) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw data_error("'" + path + "' is empty");
    const auto header = detail::split_csv_line(line);

    // a header that lacks a schema column is a schema/config mismatch, not
    // a malformed data file
    auto col_of = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw config_error("'" + path + "' is missing required column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };

    const std::size_t id_c = col_of(schema.id);
    const std::size_t time_c = col_of(schema.time);
    const std::size_t y_c = col_of(schema.y);
    const std::size_t x1_c = col_of(schema.x1);
    std::vector<std::size_t> exog_c, inst_c;
    for (const auto& n : schema.exog) exog_c.push_back(col_of(n));
    for (const auto& n : schema.inst) inst_c.push_back(col_of(n));
    if (inst_c.empty()) throw data_error("schema needs at least one instrument column");

    struct Row {
        std::int64_t time;
        double y, x1;
        std::vector<double> exog, inst;
    };
    // Keyed by first appearance so output order matches the file.
    std::vector<std::string> id_order;
    std::map<std::string, std::vector<Row>> rows;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw data_error("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(header.size()) + " cells, got " +
                             std::to_string(cells.size()));
        Row r;
        const std::string id = cells[id_c];
        r.time = detail::parse_time(cells[time_c], line_no);
        r.y = detail::parse_number(cells[y_c], schema.y, line_no);
        r.x1 = detail::parse_number(cells[x1_c], schema.x1, line_no);
        for (std::size_t k = 0; k < exog_c.size(); ++k)
            r.exog.push_back(detail::parse_number(cells[exog_c[k]], schema.exog[k], line_no));
        for (std::size_t k = 0; k < inst_c.size(); ++k)
            r.inst.push_back(detail::parse_number(cells[inst_c[k]], schema.inst[k], line_no));
        auto [it, inserted] = rows.try_emplace(id);
        if (inserted) id_order.push_back(id);
        for (const auto& prev : it->second)
            if (prev.time == r.time)
                throw data_error("duplicate (id, time) key ('" + id + "', " +
                                 std::to_string(r.time) + ") at line " + std::to_string(line_no));
        it->second.push_back(std::move(r));
    }

    PanelDataset data;
    data.n_exog = static_cast<Index>(exog_c.size());
    data.n_inst = static_cast<Index>(inst_c.size());
    for (const auto& id : id_order) {
        auto& rs = rows[id];
        std::sort(rs.begin(), rs.end(),
                  [](const Row& a, const Row& b) { return a.time < b.time; });
        const Index t = static_cast<Index>(rs.size());
        if (t < 2) throw data_error("individual '" + id + "' has T_i < 2");
        if (opts.require_consecutive_time) {
            for (Index s = 1; s < t; ++s)
                if (rs[static_cast<std::size_t>(s)].time !=
                    rs[static_cast<std::size_t>(s - 1)].time + 1)
                    throw data_error("individual '" + id +
                                     "' has a time gap (first-difference input must be "
                                     "consecutive): " +
                                     std::to_string(rs[static_cast<std::size_t>(s - 1)].time) +
                                     " -> " + std::to_string(rs[static_cast<std::size_t>(s)].time));
        }
        IndividualBlock b;
        b.id = id;
        b.y.resize(t);
        b.x1.resize(t);
        b.x_exog.resize(t, data.n_exog);
        b.z.resize(t, data.n_inst);
        for (Index s = 0; s < t; ++s) {
            const auto& r = rs[static_cast<std::size_t>(s)];
            b.y(s) = r.y;
            b.x1(s) = r.x1;
            for (Index k = 0; k < data.n_exog; ++k)
                b.x_exog(s, k) = r.exog[static_cast<std::size_t>(k)];
            for (Index k = 0; k < data.n_inst; ++k)
                b.z(s, k) = r.inst[static_cast<std::size_t>(k)];
        }
        data.individuals.push_back(std::move(b));
    }
    validate_panel(data, opts.t_max);
    return data;
}

}  // namespace slcf
