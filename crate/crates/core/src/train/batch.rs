use crate::error::{Error, Result};
use crate::model::BpttBatch;

/// Splits `tokens` into `batch` parallel streams and cuts them into
/// time-major windows of at most `bptt` steps with next-token targets.
///
/// The split is truncated to a multiple of `batch`; stream `b` holds the
/// `b`-th contiguous chunk. The last window may be shorter than `bptt`.
pub fn batchify(tokens: &[u32], batch: usize, bptt: usize) -> Result<Vec<BpttBatch>> {
    if batch == 0 || bptt == 0 {
        return Err(Error::InvalidConfig("batch size and bptt length must be positive".into()));
    }
    let stream = tokens.len() / batch;
    if stream < 2 {
        return Err(Error::Corpus(format!(
            "split of {} tokens is too small for {batch} streams",
            tokens.len()
        )));
    }
    let at = |b: usize, i: usize| tokens[b * stream + i];
    let mut out = Vec::with_capacity((stream - 1).div_ceil(bptt));
    let mut start = 0;
    while start + 1 < stream {
        let len = bptt.min(stream - 1 - start);
        let mut inputs = Vec::with_capacity(len * batch);
        let mut targets = Vec::with_capacity(len * batch);
        for t in 0..len {
            for b in 0..batch {
                inputs.push(at(b, start + t));
                targets.push(at(b, start + t + 1));
            }
        }
        out.push(BpttBatch {
            seq_len: len,
            batch,
            inputs,
            targets,
        });
        start += len;
    }
    Ok(out)
}
