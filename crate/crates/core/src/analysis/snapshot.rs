//! Mask snapshots in the line-oriented `mask-v1` text format.
//!
//! ```text
//! mask-v1
//! epoch <e>
//! digest <hex or ->
//! tensors <n>
//! tensor <name> <rows> <cols> <nnz>
//! <row> <col>        (nnz lines, strictly ascending)
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::sparse_tensor::{Coordinate, SparseTensor};

pub const MASK_FORMAT: &str = "mask-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorTopology {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Active coordinates, strictly ascending by (row, col).
    pub coords: Vec<Coordinate>,
}

impl TensorTopology {
    pub fn from_tensor(name: impl Into<String>, t: &SparseTensor) -> Self {
        TensorTopology {
            name: name.into(),
            rows: t.rows(),
            cols: t.cols(),
            coords: t.coordinates(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.coords.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, c) in self.coords.iter().enumerate() {
            if c.row >= self.rows || c.col >= self.cols {
                return Err(Error::Format(format!(
                    "{}: coordinate ({}, {}) outside {}x{}",
                    self.name, c.row, c.col, self.rows, self.cols
                )));
            }
            if i > 0 && self.coords[i - 1] >= *c {
                return Err(Error::Format(format!(
                    "{}: coordinates not strictly ascending at entry {i}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub epoch: usize,
    pub digest: String,
    pub tensors: Vec<TensorTopology>,
}

impl TopologySnapshot {
    /// Records every sparsified tensor of `model` in parameter order.
    pub fn from_model(model: &LanguageModel, epoch: usize, digest: impl Into<String>) -> Self {
        TopologySnapshot {
            epoch,
            digest: digest.into(),
            tensors: model
                .sparse_kinds()
                .into_iter()
                .map(|k| TensorTopology::from_tensor(k.name(), model.sparse(k).expect("sparse kind")))
                .collect(),
        }
    }

    pub fn total_nnz(&self) -> usize {
        self.tensors.iter().map(TensorTopology::nnz).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.tensors.iter().try_for_each(TensorTopology::validate)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MASK_FORMAT}")?;
        writeln!(w, "epoch {}", self.epoch)?;
        let digest = if self.digest.is_empty() { "-" } else { &self.digest };
        writeln!(w, "digest {digest}")?;
        writeln!(w, "tensors {}", self.tensors.len())?;
        for t in &self.tensors {
            writeln!(w, "tensor {} {} {} {}", t.name, t.rows, t.cols, t.nnz())?;
            for c in &t.coords {
                writeln!(w, "{} {}", c.row, c.col)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut line_no = 0usize;
        let mut next = |what: &str| -> Result<String> {
            line_no += 1;
            match lines.next() {
                Some(l) => Ok(l?),
                None => Err(Error::Format(format!("unexpected end of snapshot, expected {what}"))),
            }
        };
        let header = next("format tag")?;
        if header.trim() != MASK_FORMAT {
            return Err(Error::Format(format!("unsupported snapshot format {header:?}")));
        }
        let epoch = keyed(&next("epoch")?, "epoch")?.parse_usize("epoch")?;
        let digest = keyed(&next("digest")?, "digest")?.0;
        let digest = if digest == "-" { String::new() } else { digest };
        let count = keyed(&next("tensor count")?, "tensors")?.parse_usize("tensor count")?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let head = next("tensor header")?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 5 || parts[0] != "tensor" {
                return Err(Error::Format(format!("bad tensor header {head:?}")));
            }
            let num = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad {what} {s:?} in {head:?}")))
            };
            let (rows, cols, nnz) = (num(parts[2], "rows")?, num(parts[3], "cols")?, num(parts[4], "nnz")?);
            let mut coords = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let l = next("coordinate")?;
                let mut it = l.split_whitespace().map(|s| s.parse::<usize>());
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(r)), Some(Ok(c)), None) => coords.push(Coordinate::new(r, c)),
                    _ => return Err(Error::Format(format!("bad coordinate line {l:?}"))),
                }
            }
            let t = TensorTopology {
                name: parts[1].to_string(),
                rows,
                cols,
                coords,
            };
            t.validate()?;
            tensors.push(t);
        }
        Ok(TopologySnapshot { epoch, digest, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Conventional file name for the snapshot after `epoch`.
    pub fn file_name(epoch: usize) -> String {
        format!("epoch-{epoch:04}.mask")
    }
}

struct Keyed(String);

impl Keyed {
    fn parse_usize(&self, what: &str) -> Result<usize> {
        self.0
            .parse()
            .map_err(|_| Error::Format(format!("bad {what} {:?}", self.0)))
    }
}

fn keyed(line: &str, key: &str) -> Result<Keyed> {
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok(Keyed(v.trim().to_string())),
        _ => Err(Error::Format(format!("expected `{key} <value>`, found {line:?}"))),
    }
}
