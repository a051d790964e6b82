#pragma once

#include <map>
#include <string>
#include <vector>

namespace nodule {

// Plain-text key-value configuration: one `key = value` per line, `#`
// comments, lists as whitespace- or comma-separated numbers.
class KvConfig {
public:
    static KvConfig parse_text(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::vector<double> get_list(const std::string& key) const;  // empty if absent

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace nodule
