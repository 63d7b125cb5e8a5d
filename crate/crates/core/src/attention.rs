//! Multimodal guidance primitives: scaled dot-product cross-attention and
//! channel-wise text/visual fusion.
//!
//! Attention uses the standard `1/√d` logit scaling and a single head.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Queries (`m × d`), keys (`k × d`) and values (`k × d_v`).
#[derive(Debug, Clone)]
pub struct AttentionInput {
    pub queries: DMatrix<f64>,
    pub keys: DMatrix<f64>,
    pub values: DMatrix<f64>,
}

impl AttentionInput {
    pub fn new(queries: DMatrix<f64>, keys: DMatrix<f64>, values: DMatrix<f64>) -> Result<Self> {
        if queries.ncols() != keys.ncols() {
            return Err(Error::Shape(format!(
                "query dim {} != key dim {}",
                queries.ncols(),
                keys.ncols()
            )));
        }
        if keys.nrows() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} keys but {} values",
                keys.nrows(),
                values.nrows()
            )));
        }
        if queries.ncols() == 0 || keys.nrows() == 0 {
            return Err(Error::Shape("attention needs d >= 1 and at least one key".into()));
        }
        Ok(Self { queries, keys, values })
    }
}

/// Numerically stable softmax, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Row-stochastic attention weights `softmax(QKᵀ/√d)`, `m × k`.
pub fn attention_weights(inp: &AttentionInput) -> DMatrix<f64> {
    let scale = 1.0 / (inp.queries.ncols() as f64).sqrt();
    let mut logits = &inp.queries * inp.keys.transpose() * scale;
    let mut row = vec![0.0; logits.ncols()];
    let mut buf = vec![0.0; logits.ncols()];
    for i in 0..logits.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = logits[(i, j)];
        }
        softmax_into(&row, &mut buf);
        for (j, b) in buf.iter().enumerate() {
            logits[(i, j)] = *b;
        }
    }
    logits
}

/// `softmax(QKᵀ/√d) · V`, an `m × d_v` matrix.
pub fn cross_attention(inp: &AttentionInput) -> DMatrix<f64> {
    attention_weights(inp) * &inp.values
}

/// `H × W × c` grid of feature vectors, channel-fastest layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} grid needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity("non-finite feature grid entry".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector at pixel `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Channel-wise product with a broadcast text vector:
/// `out[i, j, ch] = img[i, j, ch] · text[ch]`.
pub fn channel_fuse(img_grid: &FeatureGrid, text_vec: &[f64]) -> Result<FeatureGrid> {
    if text_vec.len() != img_grid.channels {
        return Err(Error::Shape(format!(
            "text vector has {} channels, grid has {}",
            text_vec.len(),
            img_grid.channels
        )));
    }
    let data = img_grid
        .data
        .chunks_exact(img_grid.channels)
        .flat_map(|px| px.iter().zip(text_vec).map(|(a, b)| a * b))
        .collect();
    FeatureGrid::new(img_grid.height, img_grid.width, img_grid.channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededStream;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, s: &mut SeededStream) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| s.gaussian())
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut s = SeededStream::new(1);
        let inp = AttentionInput::new(random(5, 3, &mut s), random(1, 3, &mut s), random(1, 4, &mut s)).unwrap();
        let out = cross_attention(&inp);
        for i in 0..5 {
            for j in 0..4 {
                assert!((out[(i, j)] - inp.values[(0, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn orthogonal_query_averages_values() {
        let q = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let k = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 0.0, -2.0, 0.0, 5.0]);
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        let out = cross_attention(&AttentionInput::new(q, k, v).unwrap());
        assert!((out[(0, 0)] - 3.0).abs() < 1e-14 && (out[(0, 1)] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn saturated_logit_selects_one_value() {
        // d = 1, so the logit equals q·k; a gap of 50 gives weight ratio e^-50.
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = DMatrix::from_row_slice(3, 1, &[50.0, 0.0, -3.0]);
        let v = DMatrix::from_row_slice(3, 2, &[0.3, -0.7, 1.0, 1.0, -1.0, 2.0]);
        let out = cross_attention(&AttentionInput::new(q, k, v).unwrap());
        assert!((out[(0, 0)] - 0.3).abs() < 1e-8 && (out[(0, 1)] + 0.7).abs() < 1e-8);
    }

    #[test]
    fn shape_errors() {
        let a = DMatrix::zeros(2, 3);
        assert!(AttentionInput::new(a.clone(), DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).is_err());
        assert!(AttentionInput::new(a, DMatrix::zeros(2, 3), DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn fuse_examples() {
        let mut s = SeededStream::new(2);
        let data: Vec<f64> = (0..12).map(|_| s.gaussian()).collect();
        let g = FeatureGrid::new(2, 2, 3, data).unwrap();
        assert_eq!(channel_fuse(&g, &[1.0; 3]).unwrap(), g);
        assert!(channel_fuse(&g, &[0.0; 3]).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let t = [0.5, -2.0, 3.0];
        let fused = channel_fuse(&g, &t).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for ch in 0..3 {
                    assert_eq!(fused.at(i, j)[ch], g.at(i, j)[ch] * t[ch]);
                }
            }
        }
        assert!(channel_fuse(&g, &[1.0; 2]).is_err());
    }

    #[test]
    fn fuse_is_bilinear() {
        let mut s = SeededStream::new(3);
        let mk = |s: &mut SeededStream| FeatureGrid::new(3, 2, 4, (0..24).map(|_| s.gaussian()).collect()).unwrap();
        let (g1, g2) = (mk(&mut s), mk(&mut s));
        let t: Vec<f64> = (0..4).map(|_| s.gaussian()).collect();
        let u: Vec<f64> = (0..4).map(|_| s.gaussian()).collect();
        let (a, b) = (1.7, -0.4);
        let sum_g = FeatureGrid::new(
            3,
            2,
            4,
            g1.as_slice().iter().zip(g2.as_slice()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let lhs = channel_fuse(&sum_g, &t).unwrap();
        let (f1, f2) = (channel_fuse(&g1, &t).unwrap(), channel_fuse(&g2, &t).unwrap());
        for k in 0..24 {
            assert!((lhs.as_slice()[k] - (a * f1.as_slice()[k] + b * f2.as_slice()[k])).abs() < 1e-12);
        }
        let tu: Vec<f64> = t.iter().zip(&u).map(|(x, y)| a * x + b * y).collect();
        let lhs = channel_fuse(&g1, &tu).unwrap();
        let (h1, h2) = (channel_fuse(&g1, &t).unwrap(), channel_fuse(&g1, &u).unwrap());
        for k in 0..24 {
            assert!((lhs.as_slice()[k] - (a * h1.as_slice()[k] + b * h2.as_slice()[k])).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn attention_properties(seed in any::<u64>(), m in 1usize..5, k in 1usize..6, d in 1usize..4, dv in 1usize..4) {
            let mut s = SeededStream::new(seed);
            let inp = AttentionInput::new(random(m, d, &mut s), random(k, d, &mut s), random(k, dv, &mut s)).unwrap();
            let w = attention_weights(&inp);
            for i in 0..m {
                prop_assert!((w.row(i).sum() - 1.0).abs() < 1e-10);
            }
            let out = cross_attention(&inp);
            // convex hull of value rows, coordinate-wise
            for j in 0..dv {
                let col = inp.values.column(j);
                let (lo, hi) = (col.min(), col.max());
                for i in 0..m {
                    prop_assert!(out[(i, j)] >= lo - 1e-12 && out[(i, j)] <= hi + 1e-12);
                }
            }
            // joint key/value permutation leaves output unchanged
            let mut perm: Vec<usize> = (0..k).collect();
            s.shuffle(&mut perm);
            let keys = DMatrix::from_fn(k, d, |r, c| inp.keys[(perm[r], c)]);
            let vals = DMatrix::from_fn(k, dv, |r, c| inp.values[(perm[r], c)]);
            let out2 = cross_attention(&AttentionInput::new(inp.queries.clone(), keys, vals).unwrap());
            prop_assert!((out - &out2).amax() < 1e-12);
            // query permutation permutes output rows
            let mut qp: Vec<usize> = (0..m).collect();
            s.shuffle(&mut qp);
            let qs = DMatrix::from_fn(m, d, |r, c| inp.queries[(qp[r], c)]);
            let out3 = cross_attention(&AttentionInput::new(qs, inp.keys.clone(), inp.values.clone()).unwrap());
            for r in 0..m {
                for c in 0..dv {
                    prop_assert!((out3[(r, c)] - out2[(qp[r], c)]).abs() < 1e-12);
                }
            }
        }
    }
}
