//! Topological distance between two sparse connectivities.
//!
//! With both networks' units aligned, the unit-cost edit distance between
//! two edge sets over the same node set is the size of their symmetric
//! difference. It is scaled by the combined edge count into `[0, 1]`.

use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::sparse_tensor::Coordinate;

use super::semi_match::UnitAlignment;
use super::snapshot::{TensorTopology, TopologySnapshot};

/// Integer edit counts behind a distance value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub symmetric_difference: u64,
    /// `|E1| + |E2|` after relabeling.
    pub total: u64,
}

impl EditCounts {
    pub fn distance(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.symmetric_difference as f64 / self.total as f64
        }
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;
    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            symmetric_difference: self.symmetric_difference + o.symmetric_difference,
            total: self.total + o.total,
        }
    }
}

/// Index maps applied to the rows and columns of one tensor of the second
/// snapshot. `None` leaves that axis unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Relabel {
    pub rows: Option<Vec<usize>>,
    pub cols: Option<Vec<usize>>,
}

/// Per-tensor relabelings, in snapshot tensor order. An empty alignment is
/// the identity on every tensor.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub tensors: Vec<Relabel>,
}

impl Alignment {
    pub fn identity() -> Self {
        Alignment::default()
    }

    /// Relabels a stacked-LSTM snapshot given one unit map per layer, each
    /// sending units of the second network to units of the first.
    ///
    /// Tensor order matches [`TopologySnapshot::from_model`]: embedding, then
    /// input and hidden weights of every layer, then the decoder if untied.
    pub fn for_stacked_lstm(dims: &ModelDims, unit_maps: &[UnitAlignment]) -> Result<Self> {
        if unit_maps.len() != dims.layers {
            return Err(Error::InvalidConfig(format!(
                "{} unit maps for {} layers",
                unit_maps.len(),
                dims.layers
            )));
        }
        for (l, m) in unit_maps.iter().enumerate() {
            if m.map.len() != dims.hidden || m.map.iter().any(|&u| u >= dims.hidden) {
                return Err(Error::InvalidConfig(format!(
                    "unit map of layer {l} is not a function on {} units",
                    dims.hidden
                )));
            }
        }
        let gate_rows = |m: &UnitAlignment| -> Vec<usize> {
            (0..4 * dims.hidden)
                .map(|r| (r / dims.hidden) * dims.hidden + m.map[r % dims.hidden])
                .collect()
        };
        let mut tensors = vec![Relabel::default()];
        for (l, m) in unit_maps.iter().enumerate() {
            tensors.push(Relabel {
                rows: Some(gate_rows(m)),
                cols: (l > 0).then(|| unit_maps[l - 1].map.clone()),
            });
            tensors.push(Relabel {
                rows: Some(gate_rows(m)),
                cols: Some(m.map.clone()),
            });
        }
        if !dims.tied {
            tensors.push(Relabel {
                rows: None,
                cols: unit_maps.last().map(|m| m.map.clone()),
            });
        }
        Ok(Alignment { tensors })
    }

    fn relabel(&self, index: usize) -> Option<&Relabel> {
        self.tensors.get(index)
    }
}

fn relabeled(t: &TensorTopology, r: Option<&Relabel>) -> Result<Vec<Coordinate>> {
    let Some(r) = r else {
        return Ok(t.coords.clone());
    };
    for (axis, map, n) in [("row", &r.rows, t.rows), ("col", &r.cols, t.cols)] {
        if let Some(map) = map {
            if map.len() != n || map.iter().any(|&i| i >= n) {
                return Err(Error::ShapeMismatch {
                    what: format!("{axis} relabeling of {}", t.name),
                    expected: (n, 1),
                    found: (map.len(), 1),
                });
            }
        }
    }
    let mut out: Vec<Coordinate> = t
        .coords
        .iter()
        .map(|c| {
            Coordinate::new(
                r.rows.as_ref().map_or(c.row, |m| m[c.row]),
                r.cols.as_ref().map_or(c.col, |m| m[c.col]),
            )
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn sorted_intersection(a: &[Coordinate], b: &[Coordinate]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Per-tensor edit counts after relabeling `s2` through `alignment`.
pub fn tensor_edit_counts(
    s1: &TopologySnapshot,
    s2: &TopologySnapshot,
    alignment: &Alignment,
) -> Result<Vec<EditCounts>> {
    if s1.tensors.len() != s2.tensors.len() {
        return Err(Error::ShapeMismatch {
            what: "snapshot tensor count".into(),
            expected: (s1.tensors.len(), 1),
            found: (s2.tensors.len(), 1),
        });
    }
    if !alignment.tensors.is_empty() && alignment.tensors.len() != s2.tensors.len() {
        return Err(Error::InvalidConfig(format!(
            "alignment covers {} tensors, snapshot has {}",
            alignment.tensors.len(),
            s2.tensors.len()
        )));
    }
    s1.tensors
        .iter()
        .zip(&s2.tensors)
        .enumerate()
        .map(|(i, (a, b))| {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    what: a.name.clone(),
                    expected: a.shape(),
                    found: b.shape(),
                });
            }
            let b = relabeled(b, alignment.relabel(i))?;
            let common = sorted_intersection(&a.coords, &b) as u64;
            let total = (a.coords.len() + b.len()) as u64;
            Ok(EditCounts {
                symmetric_difference: total - 2 * common,
                total,
            })
        })
        .collect()
}

pub fn edit_counts(s1: &TopologySnapshot, s2: &TopologySnapshot, alignment: &Alignment) -> Result<EditCounts> {
    Ok(tensor_edit_counts(s1, s2, alignment)?
        .into_iter()
        .fold(EditCounts::default(), |a, b| a + b))
}

/// `Σ|E1 Δ E2| / Σ(|E1| + |E2|)` over all tensors; 0 when both are empty.
pub fn topology_distance(s1: &TopologySnapshot, s2: &TopologySnapshot, alignment: &Alignment) -> Result<f64> {
    Ok(edit_counts(s1, s2, alignment)?.distance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snap(rows: usize, cols: usize, coords: &[(usize, usize)]) -> TopologySnapshot {
        let mut c: Vec<Coordinate> = coords.iter().map(|&(r, c)| Coordinate::new(r, c)).collect();
        c.sort();
        TopologySnapshot {
            epoch: 0,
            digest: String::new(),
            tensors: vec![TensorTopology {
                name: "t".into(),
                rows,
                cols,
                coords: c,
            }],
        }
    }

    #[test]
    fn identical_zero_disjoint_one() {
        let a = snap(3, 3, &[(0, 0), (1, 2), (2, 1)]);
        assert_eq!(topology_distance(&a, &a, &Alignment::identity()).unwrap(), 0.0);
        let b = snap(3, 3, &[(0, 1), (1, 1), (2, 2)]);
        assert_eq!(topology_distance(&a, &b, &Alignment::identity()).unwrap(), 1.0);
    }

    #[test]
    fn half_overlap() {
        let a = snap(2, 2, &[(0, 0), (0, 1)]);
        let b = snap(2, 2, &[(0, 1), (1, 0)]);
        let e = edit_counts(&a, &b, &Alignment::identity()).unwrap();
        assert_eq!(e, EditCounts { symmetric_difference: 2, total: 4 });
        assert_eq!(e.distance(), 0.5);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let a = snap(2, 2, &[(0, 0)]);
        let b = snap(2, 3, &[(0, 0)]);
        assert!(topology_distance(&a, &b, &Alignment::identity()).is_err());
    }

    #[test]
    fn row_permutation_is_undone_by_alignment() {
        let a = snap(3, 2, &[(0, 0), (1, 1), (2, 0)]);
        // Row r of the second network is row perm[r] of the first.
        let perm = [2, 0, 1];
        let inv: Vec<usize> = (0..3).map(|r| perm.iter().position(|&p| p == r).unwrap()).collect();
        let coords: Vec<(usize, usize)> = a.tensors[0].coords.iter().map(|c| (inv[c.row], c.col)).collect();
        let b = snap(3, 2, &coords);
        assert!(topology_distance(&a, &b, &Alignment::identity()).unwrap() > 0.0);
        let al = Alignment {
            tensors: vec![Relabel {
                rows: Some(perm.to_vec()),
                cols: None,
            }],
        };
        assert_eq!(topology_distance(&a, &b, &al).unwrap(), 0.0);
    }

    #[test]
    fn lstm_alignment_layout() {
        let dims = ModelDims {
            vocab: 5,
            emb: 2,
            hidden: 2,
            layers: 2,
            tied: false,
        };
        let maps = vec![UnitAlignment { map: vec![1, 0] }, UnitAlignment { map: vec![0, 0] }];
        let al = Alignment::for_stacked_lstm(&dims, &maps).unwrap();
        assert_eq!(al.tensors.len(), 6);
        assert_eq!(al.tensors[1].rows.as_deref(), Some(&[1, 0, 3, 2, 5, 4, 7, 6][..]));
        assert_eq!(al.tensors[1].cols, None);
        assert_eq!(al.tensors[3].cols.as_deref(), Some(&[1, 0][..]));
        assert_eq!(al.tensors[4].cols.as_deref(), Some(&[0, 0][..]));
        assert_eq!(al.tensors[5].cols.as_deref(), Some(&[0, 0][..]));
        assert!(Alignment::for_stacked_lstm(&dims, &maps[..1]).is_err());
    }

    fn coords_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::btree_set((0usize..4, 0usize..5), 0..20).prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in coords_strategy(), b in coords_strategy()) {
            let (sa, sb) = (snap(4, 5, &a), snap(4, 5, &b));
            let id = Alignment::identity();
            let ab = edit_counts(&sa, &sb, &id).unwrap();
            let ba = edit_counts(&sb, &sa, &id).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.symmetric_difference <= ab.total);
            prop_assert_eq!(ab.symmetric_difference == 0, a == b);
        }
    }
}
