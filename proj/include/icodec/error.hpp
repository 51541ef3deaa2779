#pragma once

#include <stdexcept>
#include <string>

namespace icodec {

/// Base error for every failure the library reports. Messages are single-line
/// and machine-parsable ("<where>: <what>").
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace icodec
