#include "nodule/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "nodule/errors.hpp"

namespace nodule {

namespace {
std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace

KvConfig KvConfig::parse_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = strip(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(cat("config line ", lineno, ": expected key = value"));
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty())
            throw ValidationError(cat("config line ", lineno, ": empty key"));
        cfg.values_[key] = value;
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError(cat("cannot open config file: ", path));
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_text(text);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (end == it->second.c_str() || *end != '\0')
        throw ValidationError(cat("config key ", key, ": not a number: ", it->second));
    return v;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const long v = std::strtol(it->second.c_str(), &end, 10);
    if (end == it->second.c_str() || *end != '\0')
        throw ValidationError(cat("config key ", key, ": not an integer: ", it->second));
    return static_cast<int>(v);
}

std::vector<double> KvConfig::get_list(const std::string& key) const {
    std::vector<double> out;
    auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::string s = it->second;
    for (auto& c : s)
        if (c == ',') c = ' ';
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0')
            throw ValidationError(cat("config key ", key, ": not a number: ", tok));
        out.push_back(v);
    }
    return out;
}

}  // namespace nodule
