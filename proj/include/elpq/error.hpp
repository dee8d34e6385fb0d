#pragma once

#include <stdexcept>
#include <string>

namespace elpq {

// File/container parsing problems. Messages name the offending field.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid ELP_BSD codes or format specifications.
struct codec_error : std::runtime_error {
    explicit codec_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape incompatibilities.
struct shape_error : std::runtime_error {
    explicit shape_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration (bit-widths, accumulator sizing, ...).
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace elpq
