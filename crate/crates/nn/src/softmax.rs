//! Softmax over contiguous segments of a vector.
//!
//! A plain row-wise softmax is the special case of equal-length segments.
//! Graph models use ragged segments: one per graph in a batched union.

/// Numerically stable softmax of `logits`, segment by segment.
pub fn segment_softmax(logits: &[f64], segments: &[usize]) -> Vec<f64> {
    assert_eq!(segments.iter().sum::<usize>(), logits.len(), "segments must cover logits");
    let mut out = Vec::with_capacity(logits.len());
    let mut off = 0;
    for &len in segments {
        let seg = &logits[off..off + len];
        let m = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = seg.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / z));
        off += len;
    }
    out
}

/// Backward pass given the softmax outputs `probs` and upstream gradient.
pub fn segment_softmax_backward(probs: &[f64], grad: &[f64], segments: &[usize]) -> Vec<f64> {
    let mut dx = Vec::with_capacity(probs.len());
    let mut off = 0;
    for &len in segments {
        let p = &probs[off..off + len];
        let g = &grad[off..off + len];
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)));
        off += len;
    }
    dx
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    segment_softmax(logits, &[logits.len()])
}

/// Sums each segment.
pub fn segment_sum(values: &[f64], segments: &[usize]) -> Vec<f64> {
    let mut off = 0;
    segments
        .iter()
        .map(|&len| {
            let s = values[off..off + len].iter().sum();
            off += len;
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = softmax(&[3.0; 5]);
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn segments_are_independent() {
        let p = segment_softmax(&[0.0, 1000.0, 2.0, 2.0, 2.0], &[2, 3]);
        assert!((p[1] - 1.0).abs() < 1e-12);
        assert!((p[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[2..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
