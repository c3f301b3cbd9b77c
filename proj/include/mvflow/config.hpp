#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvflow/errors.hpp"
#include "mvflow/io.hpp"

namespace mvflow::config {

/// Flat configuration document: `[section]` headers followed by
/// `key = value` lines, one nesting level, `#` comments. Values are scalars,
/// space-separated lists, or matrices with `;`-separated rows.
class Config {
public:
    static Config parse(const std::string& text) {
        Config cfg;
        std::istringstream in(text);
        std::string line;
        std::string section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']')
                    throw validation_error("config line " + std::to_string(lineno) + ": bad section");
                section = trim(trimmed.substr(1, trimmed.size() - 2));
                continue;
            }
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw validation_error("config line " + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty()) throw validation_error("config line " + std::to_string(lineno) + ": empty key");
            cfg.values_[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw validation_error("config: cannot open " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) throw validation_error("config: missing key '" + key + "'");
        return it->second;
    }

    std::string get_string_or(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return to_double(get_string(key), key); }
    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) const {
        return static_cast<long long>(to_double(get_string(key), key));
    }
    long long get_int_or(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        return static_cast<std::uint64_t>(std::stoull(get_string(key)));
    }

    Eigen::VectorXd get_vector(const std::string& key) const {
        const auto rows = parse_matrix(get_string(key), key);
        if (rows.size() != 1) throw validation_error("config: '" + key + "' is not a vector");
        Eigen::VectorXd v(static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows[0].size(); ++i) v[static_cast<Eigen::Index>(i)] = rows[0][i];
        return v;
    }

    /// Scalar values broadcast to the requested length.
    Eigen::VectorXd get_vector_expanded(const std::string& key, int length) const {
        const Eigen::VectorXd v = get_vector(key);
        if (v.size() == length) return v;
        if (v.size() == 1) return Eigen::VectorXd::Constant(length, v[0]);
        throw validation_error("config: '" + key + "' has wrong length");
    }

    Eigen::MatrixXd get_matrix(const std::string& key) const {
        const auto rows = parse_matrix(get_string(key), key);
        const std::size_t cols = rows.front().size();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != cols) throw validation_error("config: ragged matrix in '" + key + "'");
            for (std::size_t j = 0; j < cols; ++j)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
        return m;
    }

    /// Canonical form: sorted `key = value` lines. The config hash embedded
    /// in every output file is the FNV-1a hash of this text.
    std::string canonical() const {
        std::string out;
        for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
        return out;
    }

    std::uint64_t hash() const { return io::fnv1a(canonical()); }

private:
    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t\r");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t\r");
        return s.substr(begin, end - begin + 1);
    }

    static double to_double(const std::string& text, const std::string& key) {
        try {
            std::size_t used = 0;
            const double v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw validation_error("config: '" + key + "' is not a number: " + text);
        }
    }

    static std::vector<std::vector<double>> parse_matrix(const std::string& text,
                                                         const std::string& key) {
        std::vector<std::vector<double>> rows;
        std::istringstream row_stream(text);
        std::string row;
        while (std::getline(row_stream, row, ';')) {
            std::istringstream cell_stream(row);
            std::vector<double> cells;
            std::string cell;
            while (cell_stream >> cell) cells.push_back(to_double(cell, key));
            if (!cells.empty()) rows.push_back(std::move(cells));
        }
        if (rows.empty()) throw validation_error("config: '" + key + "' is empty");
        return rows;
    }

    std::map<std::string, std::string> values_;
};

}  // namespace mvflow::config
