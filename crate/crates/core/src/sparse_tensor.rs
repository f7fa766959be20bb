//! Masked 2-D weight tensors.
//!
//! A [`SparseTensor`] stores a dense row-major value array next to a dense
//! binary mask. The mask is authoritative: every position with mask `false`
//! holds exactly `0.0` after any mutating operation in this module.

use std::cmp::Ordering;
use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Coordinate {
    pub row: usize,
    pub col: usize,
}

impl Coordinate {
    pub fn new(row: usize, col: usize) -> Self {
        Coordinate { row, col }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTensor {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

/// Number of nonzeros kept at sparsity `sparsity` for `size` entries,
/// rounding half up.
pub fn nnz_for_sparsity(size: usize, sparsity: f64) -> usize {
    let exact = (1.0 - sparsity) * size as f64;
    ((exact + 0.5).floor() as usize).min(size)
}

/// Uniform initializer bound `1/sqrt(fan_in)`.
pub fn fan_in_scale(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

pub(crate) fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) || sparsity.is_nan() {
        return Err(Error::InvalidSparsity(sparsity));
    }
    Ok(())
}

impl SparseTensor {
    /// A fully dense tensor of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseTensor {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            mask: vec![true; rows * cols],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || mask.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "sparse tensor parts".into(),
                expected: (rows, cols),
                found: (values.len(), mask.len()),
            });
        }
        let mut t = SparseTensor {
            rows,
            cols,
            values,
            mask,
        };
        t.apply_mask();
        Ok(t)
    }

    /// Dense values drawn from `U(-scale, scale)`, then a mask with
    /// `round((1-S)·rows·cols)` ones placed uniformly without replacement.
    pub fn init_uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        sparsity: f64,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_sparsity(sparsity)?;
        Ok(Self::init_with_nnz(
            rows,
            cols,
            nnz_for_sparsity(rows * cols, sparsity),
            scale,
            rng,
        ))
    }

    /// Like [`SparseTensor::init_uniform`] with an explicit nonzero count
    /// (clamped to the tensor size).
    pub fn init_with_nnz<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        nnz: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let size = rows * cols;
        let nnz = nnz.min(size);
        let values: Vec<f64> = (0..size)
            .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
            .collect();
        let mut mask = vec![false; size];
        if nnz == size {
            mask.iter_mut().for_each(|m| *m = true);
        } else {
            for i in index::sample(rng, size, nnz).into_iter() {
                mask[i] = true;
            }
        }
        let mut t = SparseTensor {
            rows,
            cols,
            values,
            mask,
        };
        t.apply_mask();
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw mutable access. Callers must re-establish the mask invariant
    /// with [`SparseTensor::apply_mask`] before the next forward pass.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Disjoint borrows of the values (mutable) and the mask.
    pub fn split_mut(&mut self) -> (&mut [f64], &[bool]) {
        (&mut self.values, &self.mask)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn coord(&self, flat: usize) -> Coordinate {
        Coordinate::new(flat / self.cols, flat % self.cols)
    }

    pub fn flat(&self, c: Coordinate) -> usize {
        c.row * self.cols + c.col
    }

    /// `values ← values ⊙ mask`
    pub fn apply_mask(&mut self) {
        for (v, &m) in self.values.iter_mut().zip(&self.mask) {
            if !m {
                *v = 0.0;
            }
        }
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn nnz_in_rows(&self, rows: Range<usize>) -> usize {
        self.mask[rows.start * self.cols..rows.end * self.cols]
            .iter()
            .filter(|&&m| m)
            .count()
    }

    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.len() as f64
    }

    /// Active coordinates in ascending (row, col) order.
    pub fn coordinates(&self) -> Vec<Coordinate> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| self.coord(i))
            .collect()
    }

    /// Clears the mask and zeroes the values at the given flat positions.
    pub(crate) fn deactivate(&mut self, flat: &[usize]) {
        for &i in flat {
            self.mask[i] = false;
            self.values[i] = 0.0;
        }
    }

    /// Sets the mask at the given flat positions; grown values start at 0.
    pub(crate) fn activate(&mut self, flat: &[usize]) {
        for &i in flat {
            debug_assert!(!self.mask[i]);
            self.mask[i] = true;
            self.values[i] = 0.0;
        }
    }

    fn active_in_rows(&self, rows: Range<usize>) -> Vec<usize> {
        (rows.start * self.cols..rows.end * self.cols)
            .filter(|&i| self.mask[i])
            .collect()
    }

    pub(crate) fn free_in_rows(&self, rows: Range<usize>) -> Vec<usize> {
        (rows.start * self.cols..rows.end * self.cols)
            .filter(|&i| !self.mask[i])
            .collect()
    }

    /// Removes the `k` active entries of smallest magnitude. Ties go to the
    /// lower (row, col) first. Returns the removed coordinates, sorted.
    pub fn remove_smallest(&mut self, k: usize) -> Result<Vec<Coordinate>> {
        let active = self.active_in_rows(0..self.rows);
        let picked = select_smallest_magnitude(
            &active.iter().map(|&i| self.values[i]).collect::<Vec<_>>(),
            k,
        )?;
        let mut flat: Vec<usize> = picked.into_iter().map(|p| active[p]).collect();
        flat.sort_unstable();
        self.deactivate(&flat);
        Ok(flat.into_iter().map(|i| self.coord(i)).collect())
    }

    /// Grows `k` entries at zero-mask positions chosen uniformly without
    /// replacement. Returns the grown coordinates, sorted.
    pub fn grow_random<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<Vec<Coordinate>> {
        let flat = self.grow_random_in_rows(0..self.rows, k, rng)?;
        Ok(flat.into_iter().map(|i| self.coord(i)).collect())
    }

    pub(crate) fn grow_random_in_rows<R: Rng + ?Sized>(
        &mut self,
        rows: Range<usize>,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let free = self.free_in_rows(rows);
        if k > free.len() {
            return Err(Error::CountExceeded {
                requested: k,
                available: free.len(),
                what: "zero positions to grow",
            });
        }
        let mut flat: Vec<usize> = index::sample(rng, free.len(), k)
            .into_iter()
            .map(|p| free[p])
            .collect();
        flat.sort_unstable();
        self.activate(&flat);
        Ok(flat)
    }

    /// Grows the `k` zero-mask positions with the largest `|dense_grad|`.
    /// Ties go to the lower (row, col) first.
    pub fn grow_gradient(&mut self, dense_grad: &[f64], k: usize) -> Result<Vec<Coordinate>> {
        let flat = self.grow_gradient_in_rows(0..self.rows, dense_grad, k)?;
        Ok(flat.into_iter().map(|i| self.coord(i)).collect())
    }

    pub(crate) fn grow_gradient_in_rows(
        &mut self,
        rows: Range<usize>,
        dense_grad: &[f64],
        k: usize,
    ) -> Result<Vec<usize>> {
        if dense_grad.len() != self.len() {
            return Err(Error::ShapeMismatch {
                what: "dense gradient".into(),
                expected: (self.rows, self.cols),
                found: (dense_grad.len(), 1),
            });
        }
        let free = self.free_in_rows(rows);
        let grads: Vec<f64> = free.iter().map(|&i| dense_grad[i]).collect();
        let picked = select_largest_magnitude(&grads, k).map_err(|_| Error::CountExceeded {
            requested: k,
            available: free.len(),
            what: "zero positions to grow",
        })?;
        let mut flat: Vec<usize> = picked.into_iter().map(|p| free[p]).collect();
        flat.sort_unstable();
        self.activate(&flat);
        Ok(flat)
    }
}

fn by_magnitude(values: &[f64], a: usize, b: usize) -> Ordering {
    values[a]
        .abs()
        .total_cmp(&values[b].abs())
        .then(a.cmp(&b))
}

/// Positions (into `values`) of the `k` smallest magnitudes; ties resolve
/// to the lower position. Output is in selection order.
pub fn select_smallest_magnitude(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::CountExceeded {
            requested: k,
            available: values.len(),
            what: "nonzero weights to remove",
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| by_magnitude(values, a, b));
        order.truncate(k);
    }
    order.sort_unstable_by(|&a, &b| by_magnitude(values, a, b));
    Ok(order)
}

/// Positions of the `k` largest magnitudes; ties resolve to the lower position.
pub fn select_largest_magnitude(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::CountExceeded {
            requested: k,
            available: values.len(),
            what: "candidates",
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let cmp = |a: &usize, b: &usize| {
        values[*b]
            .abs()
            .total_cmp(&values[*a].abs())
            .then(a.cmp(b))
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(order)
}

/// Two-sided selection: `ceil(k/2)` smallest non-negative values and
/// `floor(k/2)` negative values closest to zero. A side that runs short is
/// topped up from the other side. Ties resolve to the lower position.
pub fn select_set_style(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::CountExceeded {
            requested: k,
            available: values.len(),
            what: "nonzero weights to remove",
        });
    }
    // Zero counts as positive.
    let mut pos: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= 0.0).collect();
    let mut neg: Vec<usize> = (0..values.len()).filter(|&i| values[i] < 0.0).collect();
    pos.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    neg.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut take_pos = k.div_ceil(2);
    let mut take_neg = k / 2;
    if take_pos > pos.len() {
        take_neg += take_pos - pos.len();
        take_pos = pos.len();
    }
    if take_neg > neg.len() {
        take_pos += take_neg - neg.len();
        take_neg = neg.len();
    }
    let mut out: Vec<usize> = pos[..take_pos].to_vec();
    out.extend_from_slice(&neg[..take_neg]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: usize, cols: usize, values: &[f64], mask: &[u8]) -> SparseTensor {
        SparseTensor::from_parts(
            rows,
            cols,
            values.to_vec(),
            mask.iter().map(|&m| m == 1).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = SparseTensor::init_uniform(10, 10, 0.8, 0.1, &mut rng).unwrap();
        assert_eq!(t.nnz(), 20);
        let t = SparseTensor::init_uniform(2, 2, 0.0, 0.1, &mut rng).unwrap();
        assert!(t.mask().iter().all(|&m| m));
        assert_eq!(nnz_for_sparsity(1500 * 6000, 0.67), 2_970_000);
    }

    #[test]
    fn init_respects_scale_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = SparseTensor::init_uniform(30, 40, 0.5, fan_in_scale(40), &mut rng).unwrap();
        let bound = fan_in_scale(40);
        for (v, m) in t.values().iter().zip(t.mask()) {
            if *m {
                assert!(v.abs() <= bound);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn init_rejects_bad_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(SparseTensor::init_uniform(2, 2, 1.0, 0.1, &mut rng).is_err());
        assert!(SparseTensor::init_uniform(2, 2, -0.1, 0.1, &mut rng).is_err());
        assert!(SparseTensor::init_uniform(2, 2, f64::NAN, 0.1, &mut rng).is_err());
    }

    #[test]
    fn apply_mask_cases() {
        let t = tensor(2, 2, &[1.5, 2.0, 0.0, -3.0], &[1, 0, 1, 1]);
        assert_eq!(t.values(), &[1.5, 0.0, 0.0, -3.0]);
        let t = tensor(2, 2, &[1.0, 2.0, 3.0, 4.0], &[1, 1, 1, 1]);
        assert_eq!(t.values(), &[1.0, 2.0, 3.0, 4.0]);
        let t = tensor(2, 2, &[1.0, 2.0, 3.0, 4.0], &[0, 0, 0, 0]);
        assert_eq!(t.values(), &[0.0; 4]);
    }

    #[test]
    fn nnz_cases() {
        assert_eq!(tensor(2, 2, &[1.0; 4], &[1, 0, 1, 1]).nnz(), 3);
        assert_eq!(tensor(2, 2, &[1.0; 4], &[0, 0, 0, 0]).nnz(), 0);
    }

    #[test]
    fn remove_smallest_cases() {
        let mut t = tensor(1, 4, &[0.5, -0.1, 0.3, -0.7], &[1, 1, 1, 1]);
        let removed = t.remove_smallest(1).unwrap();
        assert_eq!(removed, vec![Coordinate::new(0, 1)]);
        assert_eq!(t.nnz(), 3);

        let mut t = tensor(1, 4, &[0.5, -0.1, 0.3, -0.7], &[1, 1, 1, 1]);
        let before = t.clone();
        assert!(t.remove_smallest(0).unwrap().is_empty());
        assert_eq!(t, before);

        assert!(t.remove_smallest(5).is_err());
    }

    #[test]
    fn remove_smallest_tie_rule() {
        // Enumerate every ordering consistent with (|v|, row, col): the
        // two entries of magnitude 0.2 come before 0.9, and between them
        // the lower column wins. With k = 2 the unique answer is {0, 1}.
        let values = [0.2, -0.2, 0.9];
        let mut keys: Vec<(u64, usize)> = values
            .iter()
            .enumerate()
            .map(|(i, v): (usize, &f64)| (v.abs().to_bits(), i))
            .collect();
        keys.sort();
        let oracle: Vec<usize> = keys[..2].iter().map(|k| k.1).collect();
        let mut t = tensor(1, 3, &values, &[1, 1, 1]);
        let removed: Vec<usize> = t.remove_smallest(2).unwrap().iter().map(|c| c.col).collect();
        assert_eq!(removed, oracle);
        assert_eq!(removed, vec![0, 1]);

        // With k = 1 the tie resolves to column 0.
        let mut t = tensor(1, 3, &values, &[1, 1, 1]);
        assert_eq!(t.remove_smallest(1).unwrap(), vec![Coordinate::new(0, 0)]);
    }

    #[test]
    fn grow_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = tensor(1, 3, &[1.0, 0.0, 0.0], &[1, 0, 0]);
        let before = t.clone();
        assert!(t.grow_random(0, &mut rng).unwrap().is_empty());
        assert_eq!(t, before);

        let mut dense = SparseTensor::zeros(2, 2);
        assert!(dense.grow_random(1, &mut rng).is_err());

        let mut t = SparseTensor::init_with_nnz(4, 4, 8, 1.0, &mut rng);
        let grown = t.grow_random(2, &mut rng).unwrap();
        assert_eq!(t.nnz(), 10);
        for c in grown {
            assert!(t.is_active(c.row, c.col));
            assert_eq!(t.get(c.row, c.col), 0.0);
        }
    }

    #[test]
    fn grow_gradient_cases() {
        let mut t = tensor(1, 4, &[1.0, 0.0, 0.0, 0.0], &[1, 0, 0, 0]);
        let grads = [5.0, 0.9, -0.1, 0.5];
        let grown = t.grow_gradient(&grads, 1).unwrap();
        assert_eq!(grown, vec![Coordinate::new(0, 1)]);

        let mut t = tensor(1, 4, &[1.0, 0.0, 0.0, 0.0], &[1, 0, 0, 0]);
        t.grow_gradient(&grads, 3).unwrap();
        assert_eq!(t.nnz(), 4);
        assert!(t.grow_gradient(&grads, 1).is_err());
    }

    #[test]
    fn grow_gradient_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = SparseTensor::init_with_nnz(6, 7, 20, 1.0, &mut rng);
        let grads: Vec<f64> = (0..42).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut free: Vec<(f64, usize)> = (0..42)
            .filter(|&i| !t.mask()[i])
            .map(|i| (-grads[i].abs(), i))
            .collect();
        free.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut expect: Vec<Coordinate> = free[..3].iter().map(|&(_, i)| t.coord(i)).collect();
        expect.sort();
        assert_eq!(t.grow_gradient(&grads, 3).unwrap(), expect);
    }

    #[test]
    fn set_style_selection() {
        let v = [0.1, 0.9, -0.1, -0.9];
        let mut got = select_set_style(&v, 2).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 2]);

        let v = [0.4, 0.2, 0.3, 0.9];
        let mut got = select_set_style(&v, 2).unwrap();
        got.sort();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn grow_random_is_reproducible() {
        let mut a = SparseTensor::init_with_nnz(8, 8, 10, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let mut b = a.clone();
        let ga = a.grow_random(7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let gb = b.grow_random(7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn masked_positions_stay_zero(seed in 0u64..1000, ops in proptest::collection::vec(0u8..3, 1..20)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = SparseTensor::init_uniform(6, 5, 0.5, 1.0, &mut rng).unwrap();
            let nnz0 = t.nnz();
            for op in ops {
                match op {
                    0 => t.apply_mask(),
                    1 => {
                        let k = rng.gen_range(0..=t.nnz());
                        t.remove_smallest(k).unwrap();
                        t.grow_random(k, &mut rng).unwrap();
                        prop_assert_eq!(t.nnz(), nnz0);
                    }
                    _ => {
                        let k = rng.gen_range(0..=t.nnz());
                        let grads: Vec<f64> = (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        t.remove_smallest(k).unwrap();
                        t.grow_gradient(&grads, k).unwrap();
                        prop_assert_eq!(t.nnz(), nnz0);
                    }
                }
                for (v, m) in t.values().iter().zip(t.mask()) {
                    if !*m { prop_assert_eq!(*v, 0.0); }
                }
            }
        }

        #[test]
        fn remove_smallest_is_row_permutation_equivariant(seed in 0u64..500, k in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = 5;
            let cols = 4;
            // Distinct magnitudes so the permuted problem has the same answer.
            let mut mags: Vec<f64> = (0..rows * cols).map(|i| (i + 1) as f64 / 10.0).collect();
            for i in (1..mags.len()).rev() {
                let j = rng.gen_range(0..=i);
                mags.swap(i, j);
            }
            let values: Vec<f64> = mags.iter().map(|m| if rng.gen_bool(0.5) { *m } else { -*m }).collect();
            let t = SparseTensor::from_parts(rows, cols, values.clone(), vec![true; rows * cols]).unwrap();
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..rows).collect();
                for i in (1..rows).rev() { let j = rng.gen_range(0..=i); p.swap(i, j); }
                p
            };
            // Row r of the permuted tensor is row perm[r] of the original.
            let mut pv = vec![0.0; rows * cols];
            for r in 0..rows {
                pv[r * cols..(r + 1) * cols].copy_from_slice(&values[perm[r] * cols..(perm[r] + 1) * cols]);
            }
            let pt = SparseTensor::from_parts(rows, cols, pv, vec![true; rows * cols]).unwrap();
            let mut a = t.clone();
            let mut b = pt.clone();
            let ra = a.remove_smallest(k).unwrap();
            let mut rb: Vec<Coordinate> = b.remove_smallest(k).unwrap()
                .into_iter().map(|c| Coordinate::new(perm[c.row], c.col)).collect();
            rb.sort();
            prop_assert_eq!(ra, rb);
        }
    }
}
