use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{softmax_into, FeatureGrid};
use crate::error::{Error, Result};
use crate::features::{decode_binary, encode_binary};
use crate::grid::Grid;
use crate::rng::SeededStream;

use super::{FlowState, VelocityField};

/// Shape of the per-pixel velocity network.
///
/// For each pixel the network reads the `(2r+1)²` stencil `s` of the
/// current mask (zero padded), projects it to a query `q = W_q s + b_q`
/// in the conditioning space, and attends over the two-row context
/// `[text_vec; img_grid[i, j]]` (keys = values). The feature vector
/// `z = [s, t, attention]` then passes through one `tanh` layer of width
/// `h` and a linear read-out:
///
/// ```text
/// v = w₂ · tanh(W₁ z + b₁) + b₂
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub radius: usize,
    pub hidden: usize,
    pub cond_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            radius: 1,
            hidden: 16,
            cond_dim: 4,
        }
    }
}

impl Architecture {
    pub fn stencil_len(&self) -> usize {
        (2 * self.radius + 1).pow(2)
    }

    /// Length of `z = [stencil, t, attention]`.
    pub fn input_len(&self) -> usize {
        self.stencil_len() + 1 + self.cond_dim
    }

    /// `c·S + c + h·(S + 1 + c) + 2h + 1` with `S = (2r+1)²`.
    pub fn param_count(&self) -> usize {
        let (s, c, h) = (self.stencil_len(), self.cond_dim, self.hidden);
        c * s + c + h * (s + 1 + c) + 2 * h + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.cond_dim == 0 {
            return Err(Error::Config(format!(
                "architecture needs hidden >= 1 and cond_dim >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    fn layout(&self) -> Layout {
        let (s, c, h, z) = (self.stencil_len(), self.cond_dim, self.hidden, self.input_len());
        let wq = 0;
        let bq = wq + c * s;
        let w1 = bq + c;
        let b1 = w1 + h * z;
        let w2 = b1 + h;
        let b2 = w2 + h;
        Layout { wq, bq, w1, b1, w2, b2 }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    wq: usize,
    bq: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Stand-ins for the text embedding and the dense image features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningFeatures {
    pub text_vec: Vec<f64>,
    pub img_grid: FeatureGrid,
}

impl ConditioningFeatures {
    pub fn new(text_vec: Vec<f64>, img_grid: FeatureGrid) -> Result<Self> {
        if text_vec.len() != img_grid.channels() {
            return Err(Error::Shape(format!(
                "text vector has {} dims, image grid {} channels",
                text_vec.len(),
                img_grid.channels()
            )));
        }
        if text_vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity("non-finite text embedding".into()));
        }
        Ok(Self { text_vec, img_grid })
    }

    pub fn dim(&self) -> usize {
        self.text_vec.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldModel {
    arch: Architecture,
    params: Vec<f64>,
}

/// Per-pixel activations kept for the backward pass.
pub(super) struct Scratch {
    stencil: Vec<f64>,
    q: Vec<f64>,
    logits: [f64; 2],
    weights: [f64; 2],
    z: Vec<f64>,
    hid: Vec<f64>,
    dpre: Vec<f64>,
    datt: Vec<f64>,
}

impl Scratch {
    pub(super) fn new(arch: &Architecture) -> Self {
        Self {
            stencil: vec![0.0; arch.stencil_len()],
            q: vec![0.0; arch.cond_dim],
            logits: [0.0; 2],
            weights: [0.0; 2],
            z: vec![0.0; arch.input_len()],
            hid: vec![0.0; arch.hidden],
            dpre: vec![0.0; arch.hidden],
            datt: vec![0.0; arch.cond_dim],
        }
    }
}

impl VectorFieldModel {
    /// All-zero parameters: predicts a zero field.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            params: vec![0.0; arch.param_count()],
            arch,
        })
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        let l = arch.layout();
        let mut s = SeededStream::new(seed);
        let sq = 1.0 / (arch.stencil_len() as f64).sqrt();
        for p in &mut m.params[l.wq..l.bq] {
            *p = sq * s.gaussian();
        }
        let s1 = 1.0 / (arch.input_len() as f64).sqrt();
        for p in &mut m.params[l.w1..l.b1] {
            *p = s1 * s.gaussian();
        }
        let s2 = 0.1 / (arch.hidden as f64).sqrt();
        for p in &mut m.params[l.w2..l.b2] {
            *p = s2 * s.gaussian();
        }
        Ok(m)
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "architecture {arch:?} needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity("non-finite model parameter".into()));
        }
        Ok(Self { arch, params })
    }

    /// A model whose output is the constant `bias` everywhere.
    pub fn constant(arch: Architecture, bias: f64) -> Result<Self> {
        let mut m = Self::init(arch, 0)?;
        let l = arch.layout();
        m.params[l.w2..l.b2].iter_mut().for_each(|p| *p = 0.0);
        m.params[l.b2] = bias;
        Ok(m)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, state: &FlowState, cond: &ConditioningFeatures) -> Result<()> {
        if cond.dim() != self.arch.cond_dim {
            return Err(Error::Shape(format!(
                "conditioning has {} dims, model expects {}",
                cond.dim(),
                self.arch.cond_dim
            )));
        }
        let (h, w) = state.mask.shape();
        if (cond.img_grid.height(), cond.img_grid.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "image features {}x{} do not match mask {h}x{w}",
                cond.img_grid.height(),
                cond.img_grid.width()
            )));
        }
        Ok(())
    }

    /// Forward pass for pixel `(i, j)`; activations are left in `sc`.
    pub(super) fn pixel_forward(
        &self,
        x: &Grid,
        i: usize,
        j: usize,
        t: f64,
        cond: &ConditioningFeatures,
        sc: &mut Scratch,
    ) -> f64 {
        let a = &self.arch;
        let l = a.layout();
        let th = &self.params;
        let (ns, c, zl) = (a.stencil_len(), a.cond_dim, a.input_len());
        let r = a.radius as isize;
        let mut k = 0;
        for di in -r..=r {
            for dj in -r..=r {
                sc.stencil[k] = x.get_padded(i as isize + di, j as isize + dj);
                k += 1;
            }
        }
        for (row, q) in sc.q.iter_mut().enumerate() {
            let w = &th[l.wq + row * ns..l.wq + (row + 1) * ns];
            *q = th[l.bq + row] + w.iter().zip(&sc.stencil).map(|(a, b)| a * b).sum::<f64>();
        }
        let text = &cond.text_vec;
        let img = cond.img_grid.at(i, j);
        let scale = 1.0 / (c as f64).sqrt();
        sc.logits[0] = scale * sc.q.iter().zip(text).map(|(a, b)| a * b).sum::<f64>();
        sc.logits[1] = scale * sc.q.iter().zip(img).map(|(a, b)| a * b).sum::<f64>();
        softmax_into(&sc.logits, &mut sc.weights);
        sc.z[..ns].copy_from_slice(&sc.stencil);
        sc.z[ns] = t;
        for ch in 0..c {
            sc.z[ns + 1 + ch] = sc.weights[0] * text[ch] + sc.weights[1] * img[ch];
        }
        let mut v = th[l.b2];
        for (u, hid) in sc.hid.iter_mut().enumerate() {
            let w = &th[l.w1 + u * zl..l.w1 + (u + 1) * zl];
            let pre = th[l.b1 + u] + w.iter().zip(&sc.z).map(|(a, b)| a * b).sum::<f64>();
            *hid = pre.tanh();
            v += th[l.w2 + u] * *hid;
        }
        v
    }

    /// Accumulates `dv · ∂v/∂θ` into `grad` using the activations from the
    /// preceding [`Self::pixel_forward`] call.
    pub(super) fn pixel_backward(
        &self,
        i: usize,
        j: usize,
        dv: f64,
        cond: &ConditioningFeatures,
        sc: &mut Scratch,
        grad: &mut [f64],
    ) {
        let a = &self.arch;
        let l = a.layout();
        let th = &self.params;
        let (ns, c, zl) = (a.stencil_len(), a.cond_dim, a.input_len());
        grad[l.b2] += dv;
        sc.datt.iter_mut().for_each(|d| *d = 0.0);
        for u in 0..a.hidden {
            let hid = sc.hid[u];
            grad[l.w2 + u] += dv * hid;
            let dpre = dv * th[l.w2 + u] * (1.0 - hid * hid);
            sc.dpre[u] = dpre;
            if dpre == 0.0 {
                continue;
            }
            grad[l.b1 + u] += dpre;
            let row = l.w1 + u * zl;
            for (g, z) in grad[row..row + zl].iter_mut().zip(&sc.z) {
                *g += dpre * z;
            }
            for ch in 0..c {
                sc.datt[ch] += th[row + ns + 1 + ch] * dpre;
            }
        }
        let text = &cond.text_vec;
        let img = cond.img_grid.at(i, j);
        let dw0: f64 = sc.datt.iter().zip(text).map(|(a, b)| a * b).sum();
        let dw1: f64 = sc.datt.iter().zip(img).map(|(a, b)| a * b).sum();
        let [w0, w1] = sc.weights;
        let mean = w0 * dw0 + w1 * dw1;
        let scale = 1.0 / (c as f64).sqrt();
        let de0 = w0 * (dw0 - mean) * scale;
        let de1 = w1 * (dw1 - mean) * scale;
        for ch in 0..c {
            let dq = de0 * text[ch] + de1 * img[ch];
            if dq == 0.0 {
                continue;
            }
            grad[l.bq + ch] += dq;
            let row = l.wq + ch * ns;
            for (g, s) in grad[row..row + ns].iter_mut().zip(&sc.stencil) {
                *g += dq * s;
            }
        }
    }

    /// Per-pixel velocity for the given state.
    pub fn predict_velocity(&self, state: &FlowState, cond: &ConditioningFeatures) -> Result<Grid> {
        self.check_inputs(state, cond)?;
        let x = state.mask.grid();
        let (h, w) = x.shape();
        let mut sc = Scratch::new(&self.arch);
        let mut out = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                out.push(self.pixel_forward(x, i, j, state.time, cond, &mut sc));
            }
        }
        Grid::new(h, w, out)
    }

    pub(super) fn validate_inputs(&self, state: &FlowState, cond: &ConditioningFeatures) -> Result<()> {
        self.check_inputs(state, cond)
    }

    /// FNV-1a over the little-endian parameter bytes; used to compare
    /// model files cheaply.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.params {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    /// Writes `<stem>.bin` (SPDX vector, `1 × P`) and `<stem>.json`
    /// (architecture sidecar).
    pub fn save(&self, bin_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(bin_path, encode_binary(1, self.params.len(), &self.params))?;
        let sidecar = ModelSidecar {
            architecture: self.arch,
            param_count: self.params.len(),
        };
        std::fs::write(json_path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(bin_path: &Path, json_path: &Path) -> Result<Self> {
        let sidecar: ModelSidecar = serde_json::from_slice(&std::fs::read(json_path)?)?;
        let (rows, cols, params) = decode_binary(&std::fs::read(bin_path)?)?;
        if rows != 1 || cols != sidecar.param_count {
            return Err(Error::Parse(format!(
                "parameter file is {rows}x{cols}, sidecar declares 1x{}",
                sidecar.param_count
            )));
        }
        Self::from_params(sidecar.architecture, params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelSidecar {
    architecture: Architecture,
    param_count: usize,
}

impl VelocityField for VectorFieldModel {
    fn velocity(&self, state: &FlowState, cond: &ConditioningFeatures) -> Result<Grid> {
        self.predict_velocity(state, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Mask;

    fn cond(h: usize, w: usize, c: usize, seed: u64) -> ConditioningFeatures {
        let mut s = SeededStream::new(seed);
        ConditioningFeatures::new(
            (0..c).map(|_| s.gaussian()).collect(),
            FeatureGrid::new(h, w, c, (0..h * w * c).map(|_| s.gaussian()).collect()).unwrap(),
        )
        .unwrap()
    }

    fn state(h: usize, w: usize, seed: u64) -> FlowState {
        let mut s = SeededStream::new(seed);
        FlowState::new(Mask::new(Grid::from_fn(h, w, |_, _| s.uniform())).unwrap(), 0.4).unwrap()
    }

    #[test]
    fn param_count_formula() {
        let a = Architecture { radius: 1, hidden: 16, cond_dim: 4 };
        // 4·9 + 4 + 16·14 + 32 + 1
        assert_eq!(a.param_count(), 297);
        let m = VectorFieldModel::init(a, 1).unwrap();
        assert_eq!(m.params().len(), 297);
        let a = Architecture { radius: 2, hidden: 3, cond_dim: 2 };
        assert_eq!(a.param_count(), 2 * 25 + 2 + 3 * 28 + 6 + 1);
    }

    #[test]
    fn zero_model_predicts_zero() {
        let m = VectorFieldModel::zeros(Architecture::default()).unwrap();
        let v = m.predict_velocity(&state(5, 6, 1), &cond(5, 6, 4, 2)).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_model_predicts_bias() {
        let m = VectorFieldModel::constant(Architecture::default(), -0.37).unwrap();
        let v = m.predict_velocity(&state(4, 4, 3), &cond(4, 4, 4, 4)).unwrap();
        assert!(v.as_slice().iter().all(|&x| x == -0.37));
    }

    #[test]
    fn rejects_mismatched_conditioning() {
        let m = VectorFieldModel::init(Architecture::default(), 1).unwrap();
        assert!(m.predict_velocity(&state(4, 4, 1), &cond(4, 4, 3, 2)).is_err());
        assert!(m.predict_velocity(&state(4, 4, 1), &cond(4, 5, 4, 2)).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = std::env::temp_dir().join(format!("spectra-dx-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let m = VectorFieldModel::init(Architecture::default(), 9).unwrap();
        let (b, j) = (dir.join("m.bin"), dir.join("m.json"));
        m.save(&b, &j).unwrap();
        let back = VectorFieldModel::load(&b, &j).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.checksum(), m.checksum());
        std::fs::remove_dir_all(&dir).ok();
    }
}
