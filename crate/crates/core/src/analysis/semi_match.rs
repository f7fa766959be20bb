//! Correlation semi-matching of hidden units between two networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{map_indexed, Exec};
use crate::model::{BpttBatch, HiddenState, LanguageModel};

/// Activation sequences of one layer's units over a fixed probe set,
/// stored unit-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRecord {
    units: usize,
    steps: usize,
    data: Vec<f64>,
}

impl ActivationRecord {
    /// `data[u * steps + t]` is unit `u` at probe position `t`.
    pub fn new(units: usize, steps: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != units * steps {
            return Err(Error::ShapeMismatch {
                what: "activation record".into(),
                expected: (units, steps),
                found: (data.len(), 1),
            });
        }
        Ok(ActivationRecord { units, steps, data })
    }

    /// Builds a record from position-major rows of `units` values.
    pub fn from_position_major(steps: usize, units: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != units * steps {
            return Err(Error::ShapeMismatch {
                what: "activation rows".into(),
                expected: (steps, units),
                found: (rows.len(), 1),
            });
        }
        let mut data = vec![0.0; rows.len()];
        for t in 0..steps {
            for u in 0..units {
                data[u * steps + t] = rows[t * units + u];
            }
        }
        Ok(ActivationRecord { units, steps, data })
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn unit(&self, u: usize) -> &[f64] {
        &self.data[u * self.steps..(u + 1) * self.steps]
    }

    /// Centered, unit-norm copy of each unit's sequence; `None` for units
    /// with zero variance.
    fn standardized(&self) -> Vec<Option<Vec<f64>>> {
        (0..self.units)
            .map(|u| {
                let x = self.unit(u);
                let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
                let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
                let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
                (norm > 0.0).then(|| centered.into_iter().map(|v| v / norm).collect())
            })
            .collect()
    }
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Many-to-one map from units of one network to units of another.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitAlignment {
    pub map: Vec<usize>,
}

impl UnitAlignment {
    pub fn identity(n: usize) -> Self {
        UnitAlignment { map: (0..n).collect() }
    }
}

/// Maps each unit of `a` to the unit of `b` whose activations correlate
/// most strongly with it. Units of `a` without variance, or with no
/// variable partner, map to their own index. Ties go to the lowest index.
pub fn semi_match(exec: Exec, a: &ActivationRecord, b: &ActivationRecord) -> Result<UnitAlignment> {
    if a.units != b.units || a.steps != b.steps {
        return Err(Error::ShapeMismatch {
            what: "semi-matching activation records".into(),
            expected: (a.units, a.steps),
            found: (b.units, b.steps),
        });
    }
    let sa = a.standardized();
    let sb = b.standardized();
    let map = map_indexed(exec, a.units, |i| {
        let Some(x) = &sa[i] else { return i };
        let mut best: Option<(f64, usize)> = None;
        for (j, y) in sb.iter().enumerate() {
            let Some(y) = y else { continue };
            let r: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            if best.is_none_or(|(br, _)| r > br) {
                best = Some((r, j));
            }
        }
        best.map_or(i, |(_, j)| j)
    });
    Ok(UnitAlignment { map })
}

/// Hidden outputs of every layer over `probe`, one record per layer with
/// `seq_len·batch` positions per window, concatenated across windows. The
/// hidden state is carried across windows, starting from zeros, and no
/// dropout is applied.
pub fn record_activations(exec: Exec, model: &LanguageModel, probe: &[BpttBatch]) -> Result<Vec<ActivationRecord>> {
    let dims = model.dims;
    let Some(first) = probe.first() else {
        return Err(Error::InvalidConfig("empty probe set".into()));
    };
    let mut state = HiddenState::zeros(&dims, first.batch);
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); dims.layers];
    let mut positions = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for batch in probe {
        let out = model.forward_with(exec, batch, &state, 0.0, &mut rng)?;
        for (l, r) in rows.iter_mut().enumerate() {
            r.extend_from_slice(out.cache.hidden_outputs(l));
        }
        positions += batch.seq_len * batch.batch;
        state = out.state;
    }
    rows.iter()
        .map(|r| ActivationRecord::from_position_major(positions, dims.hidden, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn random_record(units: usize, steps: usize, seed: u64) -> ActivationRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActivationRecord::new(units, steps, (0..units * steps).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn permuted(a: &ActivationRecord, perm: &[usize]) -> ActivationRecord {
        // Unit u of the result is unit perm[u] of `a`.
        let data = perm.iter().flat_map(|&p| a.unit(p).to_vec()).collect();
        ActivationRecord::new(a.units(), a.steps(), data).unwrap()
    }

    #[test]
    fn self_alignment_is_identity() {
        let a = random_record(10, 40, 1);
        assert_eq!(semi_match(Exec::Sequential, &a, &a).unwrap(), UnitAlignment::identity(10));
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let b = [2.0, 1.0, 4.0, 3.0];
        // means 2.75, 2.5; deviations computed by hand
        let num = (-1.75 * -0.5) + (-0.75 * -1.5) + (0.25 * 1.5) + (2.25 * 0.5);
        let da = 1.75f64 * 1.75 + 0.75 * 0.75 + 0.25 * 0.25 + 2.25 * 2.25;
        let db = 0.25f64 + 2.25 + 2.25 + 0.25;
        assert!((pearson(&a, &b).unwrap() - num / (da * db).sqrt()).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn zero_variance_maps_by_index_and_ties_go_low() {
        let a = ActivationRecord::new(3, 3, vec![1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 0.0, 2.0, 4.0]).unwrap();
        let b = ActivationRecord::new(3, 3, vec![5.0, 6.0, 7.0, 0.0, 2.0, 4.0, 3.0, 3.0, 3.0]).unwrap();
        let m = semi_match(Exec::Sequential, &a, &b).unwrap();
        assert_eq!(m.map, vec![0, 0, 0]);
    }

    #[test]
    fn width_mismatch_is_error() {
        assert!(semi_match(Exec::Sequential, &random_record(3, 5, 0), &random_record(4, 5, 0)).is_err());
    }

    #[test]
    fn sequential_equals_parallel() {
        let a = random_record(40, 30, 4);
        let b = random_record(40, 30, 5);
        assert_eq!(
            semi_match(Exec::Sequential, &a, &b).unwrap(),
            semi_match(Exec::Parallel, &a, &b).unwrap()
        );
    }

    proptest! {
        #[test]
        fn exact_permutation_recovered(seed in 0u64..500) {
            let a = random_record(12, 25, seed);
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
            let b = permuted(&a, &perm);
            // Unit perm[u] of a is unit u of b.
            let m = semi_match(Exec::Sequential, &a, &b).unwrap();
            for u in 0..12 {
                prop_assert_eq!(m.map[perm[u]], u);
            }
        }
    }
}
