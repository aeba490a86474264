#include "masktune/gemm.hpp"

#include <cstddef>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace masktune::detail {

#if defined(__AVX512F__)

namespace {

// 4xN register-tiled panel; N handled in 8-wide vectors with a mask tail.
template <int MR>
void gemm_panel(const double* a, const double* b, double* c, int m0, int n, int k) {
    int j = 0;
    for (; j + 16 <= n; j += 16) {
        __m512d acc0[MR], acc1[MR];
        for (int i = 0; i < MR; ++i) {
            acc0[i] = _mm512_setzero_pd();
            acc1[i] = _mm512_setzero_pd();
        }
        for (int p = 0; p < k; ++p) {
            const double* brow = b + static_cast<size_t>(p) * n + j;
            __m512d b0 = _mm512_loadu_pd(brow);
            __m512d b1 = _mm512_loadu_pd(brow + 8);
            for (int i = 0; i < MR; ++i) {
                __m512d av = _mm512_set1_pd(a[static_cast<size_t>(m0 + i) * k + p]);
                acc0[i] = _mm512_fmadd_pd(av, b0, acc0[i]);
                acc1[i] = _mm512_fmadd_pd(av, b1, acc1[i]);
            }
        }
        for (int i = 0; i < MR; ++i) {
            double* crow = c + static_cast<size_t>(m0 + i) * n + j;
            _mm512_storeu_pd(crow, _mm512_add_pd(_mm512_loadu_pd(crow), acc0[i]));
            _mm512_storeu_pd(crow + 8, _mm512_add_pd(_mm512_loadu_pd(crow + 8), acc1[i]));
        }
    }
    for (; j < n; j += 8) {
        int lanes = n - j < 8 ? n - j : 8;
        __mmask8 mask = static_cast<__mmask8>((1u << lanes) - 1u);
        __m512d acc[MR];
        for (int i = 0; i < MR; ++i) acc[i] = _mm512_setzero_pd();
        for (int p = 0; p < k; ++p) {
            __m512d bv = _mm512_maskz_loadu_pd(mask, b + static_cast<size_t>(p) * n + j);
            for (int i = 0; i < MR; ++i) {
                __m512d av = _mm512_set1_pd(a[static_cast<size_t>(m0 + i) * k + p]);
                acc[i] = _mm512_fmadd_pd(av, bv, acc[i]);
            }
        }
        for (int i = 0; i < MR; ++i) {
            double* crow = c + static_cast<size_t>(m0 + i) * n + j;
            __m512d cv = _mm512_maskz_loadu_pd(mask, crow);
            _mm512_mask_storeu_pd(crow, mask, _mm512_add_pd(cv, acc[i]));
        }
    }
}

}  // namespace

void gemm_accumulate(const double* a, const double* b, double* c, int m, int n, int k) {
    int i = 0;
    for (; i + 4 <= m; i += 4) gemm_panel<4>(a, b, c, i, n, k);
    switch (m - i) {
        case 3: gemm_panel<3>(a, b, c, i, n, k); break;
        case 2: gemm_panel<2>(a, b, c, i, n, k); break;
        case 1: gemm_panel<1>(a, b, c, i, n, k); break;
        default: break;
    }
}

#else

void gemm_accumulate(const double* a, const double* b, double* c, int m, int n, int k) {
    constexpr int MR = 4, NR = 8;
    int i = 0;
    for (; i + MR <= m; i += MR) {
        int j = 0;
        for (; j + NR <= n; j += NR) {
            double acc[MR][NR] = {};
            for (int p = 0; p < k; ++p) {
                const double* brow = b + static_cast<size_t>(p) * n + j;
                for (int r = 0; r < MR; ++r) {
                    double av = a[static_cast<size_t>(i + r) * k + p];
                    for (int q = 0; q < NR; ++q) acc[r][q] += av * brow[q];
                }
            }
            for (int r = 0; r < MR; ++r)
                for (int q = 0; q < NR; ++q) c[static_cast<size_t>(i + r) * n + j + q] += acc[r][q];
        }
        for (; j < n; ++j) {
            for (int r = 0; r < MR; ++r) {
                double s = 0.0;
                for (int p = 0; p < k; ++p) s += a[static_cast<size_t>(i + r) * k + p] * b[static_cast<size_t>(p) * n + j];
                c[static_cast<size_t>(i + r) * n + j] += s;
            }
        }
    }
    for (; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            c[static_cast<size_t>(i) * n + j] += s;
        }
    }
}

#endif

void transpose(const double* src, double* dst, int rows, int cols) {
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) dst[static_cast<size_t>(j) * rows + i] = src[static_cast<size_t>(i) * cols + j];
}

}  // namespace masktune::detail
