#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace efshap::csv {

// Minimal comma-separated tables: no quoting, no embedded commas or
// newlines in fields. Field content is validated on write.

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::string to_string(const Table& table);
Table parse(std::string_view text);

void write_file(const std::filesystem::path& path, const Table& table);
Table read_file(const std::filesystem::path& path);

}  // namespace efshap::csv
