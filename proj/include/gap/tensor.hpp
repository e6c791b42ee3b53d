#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gap {

// Dense row-major tensor of 64-bit floats. 64-bit is deliberate: the
// gradient-check tolerances (1e-6 relative) are not reachable in float32.
struct Tensor {
    std::vector<int> dims;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        data.assign(static_cast<size_t>(numel_of(dims)), 0.0);
    }
    Tensor(std::vector<int> d, std::vector<double> v) : dims(std::move(d)), data(std::move(v)) {
        if (static_cast<long long>(data.size()) != numel_of(dims))
            throw std::invalid_argument("Tensor: data length does not match dims");
    }

    static long long numel_of(const std::vector<int>& d) {
        long long n = 1;
        for (int e : d) {
            if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent " + std::to_string(e));
            n *= e;
        }
        return n;
    }

    long long numel() const { return static_cast<long long>(data.size()); }
    int dim(int i) const { return dims.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(dims.size()); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    // Convenience indexing for small/occasional access; hot loops use raw pointers.
    double& at3(int a, int b, int c) {
        return data[(static_cast<size_t>(a) * dims[1] + b) * dims[2] + c];
    }
    double at3(int a, int b, int c) const {
        return data[(static_cast<size_t>(a) * dims[1] + b) * dims[2] + c];
    }
    double& at2(int a, int b) { return data[static_cast<size_t>(a) * dims[1] + b]; }
    double at2(int a, int b) const { return data[static_cast<size_t>(a) * dims[1] + b]; }
};

std::string shape_str(const std::vector<int>& dims);

// Throws if any entry is NaN/Inf; `what` names the tensor in the message.
void check_finite(const Tensor& t, const char* what);

bool all_finite(const Tensor& t);

}  // namespace gap
