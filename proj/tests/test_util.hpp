#pragma once

#include <cmath>
#include <random>

#include "iclstm/network.hpp"

namespace testutil {

inline Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Random model respecting the convex-family constraints (non-negative weights).
inline iclstm::ModelParams random_convex_model(iclstm::Arch arch, int n_x,
                                               std::vector<int> hidden, int n_o,
                                               std::uint64_t seed, double scale = 0.3) {
    using namespace iclstm;
    ModelParams m = make_model(arch, n_x, hidden, n_o);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (auto& b : param_blocks(m)) {
        auto mp = b.map();
        for (Eigen::Index j = 0; j < mp.size(); ++j) {
            double v = nd(rng);
            mp.data()[j] = b.nonneg ? std::abs(v) : 0.1 * v;
        }
        if (b.name.find(".D") != std::string::npos && b.cols == 1)
            for (Eigen::Index j = 0; j < mp.size(); ++j) mp.data()[j] = ud(rng);
    }
    m.output_act = {ActivationKind::linear};
    m.validate();
    return m;
}

inline iclstm::ModelParams random_plain_model(iclstm::Arch arch, int n_x,
                                              std::vector<int> hidden, int n_o,
                                              std::uint64_t seed) {
    using namespace iclstm;
    ModelParams m = make_model(arch, n_x, hidden, n_o);
    std::mt19937_64 rng(seed);
    for (auto& b : param_blocks(m)) {
        double limit = std::sqrt(6.0 / double(b.rows + b.cols));
        std::uniform_real_distribution<double> ud(-limit, limit);
        auto mp = b.map();
        for (Eigen::Index j = 0; j < mp.size(); ++j) mp.data()[j] = ud(rng);
    }
    m.validate();
    return m;
}

}  // namespace testutil
