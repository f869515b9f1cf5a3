// Copyright (c) 2026 decloak contributors
// SPDX-License-Identifier: Apache-2.0

#ifndef DECLOAK_TESTS_SUPPORT_HPP
#define DECLOAK_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "decloak/dataset.hpp"
#include "decloak/image.hpp"
#include "decloak/rng.hpp"
#include "decloak/tensor.hpp"

namespace tests {

/// Scratch directory removed on scope exit.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        for (int attempt = 0; attempt < 64; ++attempt) {
            auto candidate = base / (tag + "-" + std::to_string(rd()));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
        throw std::runtime_error("could not create a scratch directory under " + base.string());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline decloak::Tensor random_tensor(const std::vector<std::size_t>& shape, decloak::Rng& rng,
                                     double lo = 0.0, double hi = 1.0) {
    decloak::Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline decloak::Image random_image(std::size_t side, decloak::Rng& rng, double lo = 0.0,
                                   double hi = 1.0) {
    return decloak::Image(random_tensor({3, side, side}, rng, lo, hi));
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

/// Max relative error between an analytic gradient and central finite
/// differences over `probes` randomly chosen coordinates of `param`.
/// `eval` must recompute the scalar objective from current parameter values.
inline double fd_probe_max_err(const std::function<double()>& eval, decloak::Tensor& param,
                               const decloak::Tensor& grad, decloak::Rng& rng, int probes,
                               double h = 1e-4) {
    if (param.size() != grad.size()) throw std::invalid_argument("grad/param size mismatch");
    double worst = 0.0;
    for (int p = 0; p < probes; ++p) {
        std::size_t i = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<long long>(param.size()) - 1));
        double keep = param[i];
        param[i] = keep + h;
        double up = eval();
        param[i] = keep - h;
        double down = eval();
        param[i] = keep;
        double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(grad[i], fd));
    }
    return worst;
}

/// Every coordinate of `param`, for exhaustive checks on tiny models.
inline double fd_full_max_err(const std::function<double()>& eval, decloak::Tensor& param,
                              const decloak::Tensor& grad, double h = 1e-4) {
    if (param.size() != grad.size()) throw std::invalid_argument("grad/param size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        double keep = param[i];
        param[i] = keep + h;
        double up = eval();
        param[i] = keep - h;
        double down = eval();
        param[i] = keep;
        double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, rel_err(grad[i], fd));
    }
    return worst;
}

struct EigenPair {
    std::vector<double> values;               // descending
    std::vector<std::vector<double>> vectors; // vectors[k] pairs with values[k]
};

/// Cyclic Jacobi eigensolver for small symmetric matrices. Independent of the
/// library's linear algebra; used as the PCA oracle.
inline EigenPair jacobi_eigen(std::vector<std::vector<double>> a) {
    std::size_t n = a.size();
    std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });

    EigenPair out;
    out.values.resize(n);
    out.vectors.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a[order[k]][order[k]];
        for (std::size_t i = 0; i < n; ++i) out.vectors[k][i] = v[i][order[k]];
    }
    return out;
}

/// Copy of ds restricted to one identity, split indices rebuilt.
inline decloak::IdentityDataset only_identity(const decloak::IdentityDataset& ds,
                                              const std::string& id) {
    decloak::IdentityDataset out;
    out.image_size = ds.image_size;
    std::vector<std::size_t> remap(ds.entries.size(), SIZE_MAX);
    for (std::size_t i = 0; i < ds.entries.size(); ++i) {
        if (ds.entries[i].identity != id) continue;
        remap[i] = out.entries.size();
        out.entries.push_back(ds.entries[i]);
    }
    for (std::size_t i : ds.train_idx) {
        if (remap[i] != SIZE_MAX) out.train_idx.push_back(remap[i]);
    }
    for (std::size_t i : ds.test_idx) {
        if (remap[i] != SIZE_MAX) out.test_idx.push_back(remap[i]);
    }
    return out;
}

/// MSE by plain accumulation, one scalar at a time.
inline double mse_oracle(const decloak::Tensor& a, const decloak::Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double mae_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

}  // namespace tests

#endif  // DECLOAK_TESTS_SUPPORT_HPP
