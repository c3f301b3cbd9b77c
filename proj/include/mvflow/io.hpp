#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mvflow/errors.hpp"

namespace mvflow::io {

/// Shortest decimal representation that round-trips to the same double.
/// Bit-exact reproducibility across runs of one build; not guaranteed
/// across builds.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Writes the full content through a temporary file and renames it into
/// place, so a failed run never leaves a partial output file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw error("write_file_atomic: cannot open " + tmp.string());
        out << content;
        if (!out) throw error("write_file_atomic: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

/// CSV table assembled fully in memory. Every file carries the config hash,
/// the master seed and the library version in leading comment lines.
class CsvWriter {
public:
    CsvWriter(std::vector<std::string> columns, std::uint64_t config_hash, std::uint64_t seed,
              const char* version) : columns_(std::move(columns)) {
        header_ = "# config_hash=" + std::to_string(config_hash) + "\n# seed=" +
                  std::to_string(seed) + "\n# mvflow_version=" + version + "\n";
    }

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw parameter_error("CsvWriter: column count mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            body_ += cells[i];
            body_ += (i + 1 < cells.size()) ? ',' : '\n';
        }
    }

    void write(const std::filesystem::path& path) const {
        std::string content = header_;
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            content += columns_[i];
            content += (i + 1 < columns_.size()) ? ',' : '\n';
        }
        content += body_;
        write_file_atomic(path, content);
    }

private:
    std::vector<std::string> columns_;
    std::string header_;
    std::string body_;
};

}  // namespace mvflow::io
