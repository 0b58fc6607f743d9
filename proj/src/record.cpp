#include "parcelse/record.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "parcelse/csv.hpp"
#include "parcelse/error.hpp"

namespace parcelse {

void Record::set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    entries_.emplace_back(std::move(key), std::move(value));
}

void Record::set(std::string key, double value) { set(std::move(key), format_double(value)); }

void Record::set_int(std::string key, long long value) { set(std::move(key), std::to_string(value)); }

bool Record::has(std::string_view key) const { return find(key).has_value(); }

std::optional<std::string> Record::find(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return v;
        }
    }
    return std::nullopt;
}

const std::string& Record::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return v;
        }
    }
    throw Error(source_ + ": missing key '" + std::string(key) + "'");
}

double Record::number(std::string_view key) const {
    return parse_double(get(key), source_ + " key " + std::string(key));
}

std::vector<double> Record::numbers(std::string_view key) const {
    std::vector<double> out;
    const auto& text = get(key);
    if (trim(text).empty()) {
        return out;
    }
    for (const auto& f : split(text, ',')) {
        out.push_back(parse_double(f, source_ + " key " + std::string(key)));
    }
    return out;
}

void Record::write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) {
        out << k << " = " << v << '\n';
    }
}

void Record::write_file(const std::string& path) const {
    auto out = open_output(path);
    write(out);
}

Record Record::parse(std::istream& in, const std::string& source) {
    Record r;
    r.source_ = source;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            throw Error(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(body.substr(0, eq));
        if (key.empty()) {
            throw Error(source + ":" + std::to_string(line_no) + ": empty key");
        }
        r.set(std::string(key), std::string(trim(body.substr(eq + 1))));
    }
    return r;
}

Record Record::read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "'");
    }
    return parse(in, path);
}

}  // namespace parcelse
