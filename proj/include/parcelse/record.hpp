#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace parcelse {

// Ordered `key = value` text record. Used for fitted-model files and the
// CLI configuration; '#' starts a comment line.
class Record {
public:
    Record() = default;

    void set(std::string key, std::string value);
    void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }
    void set(std::string key, double value);
    void set_int(std::string key, long long value);

    bool has(std::string_view key) const;
    const std::string& get(std::string_view key) const;
    std::optional<std::string> find(std::string_view key) const;
    double number(std::string_view key) const;
    std::vector<double> numbers(std::string_view key) const;  // comma separated

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    void write(std::ostream& out) const;
    void write_file(const std::string& path) const;
    static Record parse(std::istream& in, const std::string& source);
    static Record read_file(const std::string& path);

    const std::string& source() const { return source_; }

private:
    std::string source_ = "<record>";
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace parcelse
