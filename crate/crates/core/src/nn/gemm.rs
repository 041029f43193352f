use super::Scalar;

const TILE_ROWS: usize = 4;
pub(crate) const TILE_COLS: usize = 16;

/// `c += a · b` for row-major `a (m×k)`, `b (k×n)`, `c (m×n)`.
///
/// Each `c[i][j]` is accumulated in ascending `k` order onto its previous
/// value; the register tiling only interleaves independent sums, so the result
/// is identical to the naive triple loop.
pub fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: out length");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let full_cols = n / TILE_COLS * TILE_COLS;
    let full_rows = m / TILE_ROWS * TILE_ROWS;
    for j0 in (0..full_cols).step_by(TILE_COLS) {
        for i0 in (0..full_rows).step_by(TILE_ROWS) {
            tile::<T, TILE_ROWS>(a, b, c, i0, j0, k, n);
        }
        for i0 in full_rows..m {
            tile::<T, 1>(a, b, c, i0, j0, k, n);
        }
    }
    if full_cols < n {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + full_cols..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n + full_cols..(kk + 1) * n];
                for (cv, &x) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * x;
                }
            }
        }
    }
}

#[inline(always)]
fn tile<T: Scalar, const R: usize>(a: &[T], b: &[T], c: &mut [T], i0: usize, j0: usize, k: usize, n: usize) {
    let mut acc = [[T::zero(); TILE_COLS]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_COLS]);
    }
    let arows: [&[T]; R] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
    for kk in 0..k {
        let brow: &[T; TILE_COLS] = b[kk * n + j0..kk * n + j0 + TILE_COLS].try_into().unwrap();
        for r in 0..R {
            let av = arows[r][kk];
            for q in 0..TILE_COLS {
                acc[r][q] = acc[r][q] + av * brow[q];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        c[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_COLS].copy_from_slice(row);
    }
}

/// `c += a · bᵀ` for row-major `a (m×k)`, `b (n×k)`, `c (m×n)`.
///
/// Same ordering guarantee as [`gemm_acc`]: every `c[i][j]` is one running
/// sum over ascending `k`. A 4×4 tile of independent sums is advanced together.
pub fn gemm_abt_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k, "gemm_abt: lhs length");
    assert_eq!(b.len(), n * k, "gemm_abt: rhs length");
    assert_eq!(c.len(), m * n, "gemm_abt: out length");
    const T4: usize = 4;
    for i0 in (0..m).step_by(T4) {
        let mi = T4.min(m - i0);
        for j0 in (0..n).step_by(T4) {
            let nj = T4.min(n - j0);
            if mi == T4 && nj == T4 {
                let ar: [&[T]; 4] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
                let br: [&[T]; 4] = std::array::from_fn(|r| &b[(j0 + r) * k..(j0 + r + 1) * k]);
                let mut acc = [[T::zero(); 4]; 4];
                for (r, row) in acc.iter_mut().enumerate() {
                    for (q, v) in row.iter_mut().enumerate() {
                        *v = c[(i0 + r) * n + j0 + q];
                    }
                }
                for p in 0..k {
                    let av = [ar[0][p], ar[1][p], ar[2][p], ar[3][p]];
                    let bv = [br[0][p], br[1][p], br[2][p], br[3][p]];
                    for r in 0..4 {
                        for q in 0..4 {
                            acc[r][q] = acc[r][q] + av[r] * bv[q];
                        }
                    }
                }
                for (r, row) in acc.iter().enumerate() {
                    c[(i0 + r) * n + j0..(i0 + r) * n + j0 + 4].copy_from_slice(row);
                }
            } else {
                for i in i0..i0 + mi {
                    for j in j0..j0 + nj {
                        let mut acc = c[i * n + j];
                        for (&x, &y) in a[i * k..(i + 1) * k].iter().zip(&b[j * k..(j + 1) * k]) {
                            acc = acc + x * y;
                        }
                        c[i * n + j] = acc;
                    }
                }
            }
        }
    }
}

/// `sums[r] += Σ_j m[r][j]` for a row-major matrix with `cols` columns,
/// each row summed left to right. Eight rows advance together.
pub(crate) fn row_sums_acc<T: Scalar>(m: &[T], cols: usize, sums: &mut [T]) {
    assert_eq!(m.len(), cols * sums.len(), "row_sums: length");
    const LANES: usize = 8;
    let full = sums.len() / LANES * LANES;
    for r0 in (0..full).step_by(LANES) {
        let rows: [&[T]; LANES] = std::array::from_fn(|l| &m[(r0 + l) * cols..(r0 + l + 1) * cols]);
        let mut acc: [T; LANES] = std::array::from_fn(|l| sums[r0 + l]);
        for j in 0..cols {
            for l in 0..LANES {
                acc[l] = acc[l] + rows[l][j];
            }
        }
        sums[r0..r0 + LANES].copy_from_slice(&acc);
    }
    for (r, s) in sums.iter_mut().enumerate().skip(full) {
        for &v in &m[r * cols..(r + 1) * cols] {
            *s = *s + v;
        }
    }
}

/// Row-major transpose of an `rows×cols` matrix.
pub(crate) fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
