#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodule {

// Exit-code mapping used by the CLI: IoError -> 1, ValidationError -> 2,
// NumericError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

template <class... Ts>
std::string cat(Ts&&... parts) {
    std::ostringstream os;
    (os << ... << parts);
    return os.str();
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

}  // namespace nodule
