#include "parcelse/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "parcelse/error.hpp"

namespace parcelse {

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    if (v == 0.0) {
        return "0";  // also folds -0
    }
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view text, std::string_view what) {
    const auto t = trim(text);
    if (t == "nan" || t == "NaN" || t == "NA") {
        return std::nan("");
    }
    double v = 0.0;
    const char* begin = t.data();
    if (!t.empty() && t.front() == '+') {
        ++begin;
    }
    auto [ptr, ec] = std::from_chars(begin, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw Error("cannot parse number '" + std::string(t) + "' for " + std::string(what));
    }
    return v;
}

std::int64_t parse_int(std::string_view text, std::string_view what) {
    const auto t = trim(text);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw Error("cannot parse integer '" + std::string(t) + "' for " + std::string(what));
    }
    return v;
}

std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

CsvTable CsvTable::read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "'");
    }
    return parse(in, path);
}

CsvTable CsvTable::parse(std::istream& in, const std::string& source) {
    CsvTable t;
    t.source_ = source;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        auto fields = split(body, ',');
        if (!have_header) {
            if (line_no == 1 && fields[0].size() >= 3 && fields[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
                fields[0].erase(0, 3);
            }
            t.header_ = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != t.header_.size()) {
            throw Error(source + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header_.size()) + " fields, found " +
                        std::to_string(fields.size()));
        }
        t.rows_.push_back(std::move(fields));
        t.line_numbers_.push_back(line_no);
    }
    if (!have_header) {
        throw Error(source + ": missing header row");
    }
    return t;
}

bool CsvTable::has_column(std::string_view name) const {
    for (const auto& h : header_) {
        if (h == name) {
            return true;
        }
    }
    return false;
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) {
            return i;
        }
    }
    throw Error(source_ + ": missing column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
    return parse_double(rows_[row][col],
                        source_ + ":" + std::to_string(line_numbers_[row]) + " column " + header_[col]);
}

std::int64_t CsvTable::integer(std::size_t row, std::size_t col) const {
    return parse_int(rows_[row][col],
                     source_ + ":" + std::to_string(line_numbers_[row]) + " column " + header_[col]);
}

CsvWriter& CsvWriter::header(const std::vector<std::string>& names) {
    for (const auto& n : names) {
        field(n);
    }
    end_row();
    return *this;
}

CsvWriter& CsvWriter::field(std::string_view text) {
    if (!first_) {
        out_ << ',';
    }
    out_ << text;
    first_ = false;
    return *this;
}

CsvWriter& CsvWriter::field(double v) { return field(std::string_view(format_double(v))); }

CsvWriter& CsvWriter::field(std::int64_t v) { return field(std::string_view(std::to_string(v))); }

void CsvWriter::end_row() {
    out_ << '\n';
    first_ = true;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path + "'");
    }
    return out;
}

}  // namespace parcelse
