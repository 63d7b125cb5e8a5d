//! Dense 2-D grids: images, soft masks and velocity fields.
//!
//! PGM (`P5`, maxval 255) is the on-disk format. A value `v ∈ [0, 1]` is
//! stored as the byte `round(v · 255)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major `height × width` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty grid {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Value at a signed position, zero outside the grid.
    pub fn get_padded(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i >= self.height as isize || j >= self.width as isize {
            0.0
        } else {
            self.data[i as usize * self.width + j as usize]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn ensure_same_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Grid> {
        self.ensure_same_shape(other, "elementwise operation")?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Mean over a `(2r+1)²` window with zero padding.
    pub fn box_blur(&self, radius: usize) -> Grid {
        let r = radius as isize;
        let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
        Grid::from_fn(self.height, self.width, |i, j| {
            let mut acc = 0.0;
            for di in -r..=r {
                for dj in -r..=r {
                    acc += self.get_padded(i as isize + di, j as isize + dj);
                }
            }
            acc / norm
        })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Grid> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Parse("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::Parse(format!("expected P5 magic, found `{}`", fields[0])));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad PGM {what} `{s}`")))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(Error::Parse(format!("only maxval 255 is supported, got {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != width * height {
            return Err(Error::Parse(format!(
                "PGM raster has {} bytes, expected {}",
                raster.len(),
                width * height
            )));
        }
        Grid::new(height, width, raster.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn read_pgm(path: &Path) -> Result<Grid> {
        Self::from_pgm(&fs::read(path)?)
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Soft segmentation mask: a [`Grid`] whose values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask(Grid);

impl Mask {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(grid))
    }

    /// Clamps every value into `[0, 1]`; NaN becomes 0.
    pub fn clamped(grid: Grid) -> Self {
        Self(grid.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self(Grid::filled(height, width, value.clamp(0.0, 1.0)))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_binary(&self) -> bool {
        self.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// `v ≥ threshold → 1`, else 0. Ties go to 1.
    pub fn binarize(&self, threshold: f64) -> Result<Mask> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        Ok(Mask(self.0.map(|v| if v >= threshold { 1.0 } else { 0.0 })))
    }

    pub fn read_pgm(path: &Path) -> Result<Mask> {
        Ok(Mask(Grid::read_pgm(path)?))
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        self.0.write_pgm(path)
    }
}
