//! Dense row-major kernels with a selectable execution strategy.
//!
//! Work is split across output rows only, and every output element is
//! reduced in the same order on both paths, so [`Exec::Parallel`] and
//! [`Exec::Sequential`] give bitwise-identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Below this many multiply-adds a kernel stays on the calling thread.
const PARALLEL_MIN_WORK: usize = 1 << 14;

fn for_each_row<F>(exec: Exec, out: &mut [f64], row_len: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if row_len == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel && work >= PARALLEL_MIN_WORK {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = (exec, work);
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m×n] += a[m×k] · w[n×k]ᵀ`
pub fn matmul_nt_acc(exec: Exec, a: &[f64], m: usize, k: usize, w: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    if k == 0 {
        return;
    }
    for_each_row(exec, out, n, m * n * k, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            *o += dot(ai, &w[j * k..(j + 1) * k]);
        }
    });
}

/// `out[m×n] += a[m×k] · w[k×n]`
pub fn matmul_nn_acc(exec: Exec, a: &[f64], m: usize, k: usize, w: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 {
        return;
    }
    for_each_row(exec, out, n, m * n * k, |i, row| {
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[p * n..(p + 1) * n]) {
                *o += aip * wv;
            }
        }
    });
}

/// `out[n×k] += a[m×n]ᵀ · x[m×k]`
pub fn matmul_tn_acc(exec: Exec, a: &[f64], m: usize, n: usize, x: &[f64], k: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(out.len(), n * k);
    if k == 0 {
        return;
    }
    for_each_row(exec, out, k, m * n * k, |j, row| {
        for i in 0..m {
            let aij = a[i * n + j];
            if aij == 0.0 {
                continue;
            }
            for (o, &xv) in row.iter_mut().zip(&x[i * k..(i + 1) * k]) {
                *o += aij * xv;
            }
        }
    });
}

/// Maps `f` over `0..len`, preserving index order in the output.
pub fn map_indexed<T, F>(exec: Exec, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Exec::Parallel {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_nt(a: &[f64], m: usize, k: usize, w: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * w[j * k + p];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    fn filled(len: usize, seed: u64) -> Vec<f64> {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..len)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn nt_matches_naive() {
        let (m, k, n) = (7, 5, 3);
        let a = filled(m * k, 1);
        let w = filled(n * k, 2);
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(Exec::Sequential, &a, m, k, &w, n, &mut out);
        let expect = naive_nt(&a, m, k, &w, n);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn nn_and_tn_match_transposed_nt() {
        let (m, k, n) = (6, 4, 5);
        let a = filled(m * k, 3);
        let w = filled(k * n, 4);
        // w is k×n; its transpose is n×k.
        let mut wt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                wt[j * k + p] = w[p * n + j];
            }
        }
        let mut nn = vec![0.0; m * n];
        matmul_nn_acc(Exec::Sequential, &a, m, k, &w, n, &mut nn);
        let expect = naive_nt(&a, m, k, &wt, n);
        for (x, y) in nn.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }

        // aᵀ·x with a: m×k, x: m×n gives k×n.
        let x = filled(m * n, 5);
        let mut tn = vec![0.0; k * n];
        matmul_tn_acc(Exec::Sequential, &a, m, k, &x, n, &mut tn);
        for p in 0..k {
            for j in 0..n {
                let s: f64 = (0..m).map(|i| a[i * k + p] * x[i * n + j]).sum();
                assert!((tn[p * n + j] - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn parallel_is_bitwise_sequential() {
        let (m, k, n) = (64, 96, 80);
        let a = filled(m * k, 7);
        let w = filled(n * k, 8);
        let mut seq = vec![0.0; m * n];
        let mut par = vec![0.0; m * n];
        matmul_nt_acc(Exec::Sequential, &a, m, k, &w, n, &mut seq);
        matmul_nt_acc(Exec::Parallel, &a, m, k, &w, n, &mut par);
        assert_eq!(seq, par);

        let w2 = filled(k * n, 9);
        let mut seq = vec![0.0; m * n];
        let mut par = vec![0.0; m * n];
        matmul_nn_acc(Exec::Sequential, &a, m, k, &w2, n, &mut seq);
        matmul_nn_acc(Exec::Parallel, &a, m, k, &w2, n, &mut par);
        assert_eq!(seq, par);
    }

    #[test]
    fn map_indexed_keeps_order() {
        let v = map_indexed(Exec::Parallel, 100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
