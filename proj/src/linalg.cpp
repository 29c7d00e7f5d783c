// SPDX-License-Identifier: Apache-2.0
#include "tensorize/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

#include "tensorize/errors.hpp"

namespace tensorize {

SvdResult truncated_svd(const Matrix& a, std::size_t max_rank, double rel_tol) {
    if (max_rank < 1) {
        throw ArgumentError("truncated_svd: max_rank must be >= 1");
    }
    if (!(rel_tol >= 0.0)) {
        throw ArgumentError("truncated_svd: rel_tol must be non-negative");
    }
    if (a.rows() == 0 || a.cols() == 0) {
        throw ArgumentError("truncated_svd: empty matrix");
    }
    if (!a.allFinite()) {
        throw NumericalError("truncated_svd: input contains non-finite values");
    }

    const Eigen::MatrixXd dense = a;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(dense, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sigma = svd.singularValues();
    if (svd.info() != Eigen::Success || !sigma.allFinite() || !svd.matrixU().allFinite() ||
        !svd.matrixV().allFinite()) {
        const double residual =
            (dense - svd.matrixU() * sigma.asDiagonal() * svd.matrixV().transpose()).norm();
        std::ostringstream os;
        os << "truncated_svd: decomposition of " << a.rows() << "x" << a.cols()
           << " matrix did not converge (residual " << residual << ")";
        throw NumericalError(os.str());
    }

    const auto full = static_cast<std::size_t>(sigma.size());
    const double floor =
        static_cast<double>(std::max(a.rows(), a.cols())) * std::numeric_limits<double>::epsilon();
    const double cutoff = std::max(rel_tol, floor) * sigma(0);
    std::size_t above = 0;
    while (above < full && sigma(static_cast<Eigen::Index>(above)) > cutoff) {
        ++above;
    }
    const std::size_t r = std::max<std::size_t>(1, std::min({max_rank, above, full}));

    SvdResult out;
    out.rank_kept = r;
    const auto ri = static_cast<Eigen::Index>(r);
    out.u = svd.matrixU().leftCols(ri);
    out.vt = svd.matrixV().leftCols(ri).transpose();
    out.singular_values.assign(sigma.data(), sigma.data() + r);
    double dropped = 0.0;
    for (std::size_t i = r; i < full; ++i) {
        const double s = sigma(static_cast<Eigen::Index>(i));
        dropped += s * s;
    }
    out.discarded_weight = dropped;

    for (Eigen::Index j = 0; j < ri; ++j) {
        Eigen::Index pivot = 0;
        out.u.col(j).cwiseAbs().maxCoeff(&pivot);
        if (out.u(pivot, j) < 0.0) {
            out.u.col(j) *= -1.0;
            out.vt.row(j) *= -1.0;
        }
    }
    return out;
}

SvdResult truncated_svd(const DenseTensor& a, std::size_t max_rank, double rel_tol) {
    return truncated_svd(a.to_matrix(), max_rank, rel_tol);
}

namespace {

struct FactorSearch {
    std::vector<std::uint64_t> divisors; // ascending
    std::vector<std::uint64_t> current;
    std::vector<std::uint64_t> best;
    std::uint64_t best_spread = std::numeric_limits<std::uint64_t>::max();

    void consider() {
        const std::uint64_t spread = current.front() - current.back();
        if (spread < best_spread || (spread == best_spread && current < best)) {
            best_spread = spread;
            best = current;
        }
    }

    // Fills slots left to right with non-increasing divisors of `remaining`.
    void search(std::uint64_t remaining, std::size_t slots, std::uint64_t cap) {
        if (slots == 1) {
            if (remaining <= cap) {
                current.push_back(remaining);
                consider();
                current.pop_back();
            }
            return;
        }
        for (auto it = divisors.rbegin(); it != divisors.rend(); ++it) {
            const std::uint64_t d = *it;
            if (d > cap || remaining % d != 0) {
                continue;
            }
            // The largest remaining factor is at least the (slots)-th root.
            if (std::pow(static_cast<double>(d), static_cast<double>(slots)) <
                static_cast<double>(remaining) * (1.0 - 1e-12)) {
                break;
            }
            current.push_back(d);
            search(remaining / d, slots - 1, d);
            current.pop_back();
        }
    }
};

} // namespace

std::vector<std::size_t> balanced_factorization(std::uint64_t n, std::size_t k) {
    if (n < 1 || k < 1) {
        throw ArgumentError("balanced_factorization: n and k must be positive");
    }
    FactorSearch fs;
    for (std::uint64_t d = 1; d * d <= n; ++d) {
        if (n % d == 0) {
            fs.divisors.push_back(d);
            if (d != n / d) {
                fs.divisors.push_back(n / d);
            }
        }
    }
    std::sort(fs.divisors.begin(), fs.divisors.end());
    fs.search(n, k, n);
    return {fs.best.begin(), fs.best.end()};
}

} // namespace tensorize
