#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gap/tensor.hpp"

namespace gap {

// Named-tensor container used for checkpoints and stored demonstrations.
// Layout: "GAPC", u32 LE version, u32 tensor count, then per tensor
// u16 name length, name bytes, u8 ndim, u32 dims[ndim], f64 LE data,
// then u32 length + UTF-8 JSON blob.
struct Container {
    std::vector<std::pair<std::string, Tensor>> tensors;  // serialized in order
    std::string json;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    void put(const std::string& name, Tensor t);
};

inline constexpr uint32_t kContainerVersion = 1;

struct BadMagicError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TruncatedFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace gap
