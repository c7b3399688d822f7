#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace occlu::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C (+)= op(A) * op(B) on row-major buffers. `rows`/`cols` describe the stored
/// (untransposed) layout of A and B.
template <typename T>
void gemm(const T* a, std::size_t a_rows, std::size_t a_cols, bool trans_a, const T* b, std::size_t b_rows,
          std::size_t b_cols, bool trans_b, T* c, bool accumulate) {
    using CMap = Eigen::Map<const RowMatrix<T>>;
    using Map = Eigen::Map<RowMatrix<T>>;
    CMap A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
    CMap B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
    const auto m = static_cast<Eigen::Index>(trans_a ? a_cols : a_rows);
    const auto n = static_cast<Eigen::Index>(trans_b ? b_rows : b_cols);
    Map C(c, m, n);
    auto run = [&](const auto& lhs, const auto& rhs) {
        if (accumulate)
            C.noalias() += lhs * rhs;
        else
            C.noalias() = lhs * rhs;
    };
    if (!trans_a && !trans_b)
        run(A, B);
    else if (trans_a && !trans_b)
        run(A.transpose(), B);
    else if (!trans_a && trans_b)
        run(A, B.transpose());
    else
        run(A.transpose(), B.transpose());
}

}  // namespace occlu::detail
