#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gap {

// Finite-difference audit of every analytic gradient in the library.
struct GradCheckReport {
    struct Row {
        std::string op;
        double max_rel = 0.0;
    };
    std::vector<Row> rows;
    double tolerance = 1e-5;

    bool all_pass() const {
        for (const auto& r : rows)
            if (!(r.max_rel < tolerance)) return false;
        return !rows.empty();
    }
};

GradCheckReport run_gradient_suite(uint64_t seed, int cases);

}  // namespace gap
