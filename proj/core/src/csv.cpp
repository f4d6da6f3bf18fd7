#include "efshap/csv.hpp"

#include "efshap/common.hpp"

namespace efshap::csv {

namespace {

void append_row(std::string& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const std::string& f = fields[i];
        if (f.find_first_of(",\n\r") != std::string::npos) {
            throw ContractError("csv field contains separator: '" + f + "'");
        }
        if (i) out.push_back(',');
        out += f;
    }
    out.push_back('\n');
}

std::vector<std::string> split_row(std::string_view line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            fields.emplace_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return fields;
}

}  // namespace

std::string to_string(const Table& table) {
    std::string out;
    append_row(out, table.header);
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) {
            throw ContractError("csv row width " + std::to_string(row.size()) +
                                " != header width " + std::to_string(table.header.size()));
        }
        append_row(out, row);
    }
    return out;
}

Table parse(std::string_view text) {
    Table table;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        if (line.empty() && pos >= text.size()) break;
        if (first) {
            table.header = split_row(line);
            first = false;
        } else {
            auto row = split_row(line);
            if (row.size() != table.header.size()) {
                throw IoError("csv row width mismatch at byte " + std::to_string(pos));
            }
            table.rows.push_back(std::move(row));
        }
    }
    return table;
}

void write_file(const std::filesystem::path& path, const Table& table) {
    write_text_file(path, to_string(table));
}

Table read_file(const std::filesystem::path& path) {
    return parse(read_text_file(path));
}

}  // namespace efshap::csv
