#pragma once

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace parcelse {

// Shortest decimal text that round-trips to the same double ("nan"/"inf"
// for non-finite values). Locale independent.
std::string format_double(double v);

// Strict parse of a whole field; throws Error naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
std::int64_t parse_int(std::string_view text, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view line, char sep);

// A header-row CSV table held as text fields. Comment lines starting with
// '#' and blank lines are skipped.
class CsvTable {
public:
    static CsvTable read(const std::string& path);
    static CsvTable parse(std::istream& in, const std::string& source);

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    bool has_column(std::string_view name) const;
    std::size_t column(std::string_view name) const;

    const std::string& field(std::size_t row, std::size_t col) const { return rows_[row][col]; }
    double number(std::size_t row, std::size_t col) const;
    std::int64_t integer(std::size_t row, std::size_t col) const;

    const std::string& source() const { return source_; }

private:
    std::string source_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> line_numbers_;
};

// Writes LF-terminated, comma-separated rows with dot-decimal numbers.
class CsvWriter {
public:
    explicit CsvWriter(std::ostream& out) : out_(out) {}

    CsvWriter& header(const std::vector<std::string>& names);

    CsvWriter& field(std::string_view text);
    CsvWriter& field(double v);
    CsvWriter& field(std::int64_t v);
    CsvWriter& field(std::size_t v) { return field(static_cast<std::int64_t>(v)); }
    CsvWriter& field(int v) { return field(static_cast<std::int64_t>(v)); }
    CsvWriter& field(const char* text) { return field(std::string_view(text)); }
    CsvWriter& field(const std::string& text) { return field(std::string_view(text)); }
    void end_row();

private:
    std::ostream& out_;
    bool first_ = true;
};

// Opens a file for binary (LF-preserving) writing; throws Error on failure.
std::ofstream open_output(const std::string& path);

}  // namespace parcelse
