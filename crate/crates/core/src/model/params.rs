use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// `x^T A` for a row vector `x` of length `rows`, written into `out`.
    pub fn left_mul_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += xr * a;
            }
        }
    }

    /// `A y` for a column vector `y` of length `cols`, written into `out`.
    pub fn mul_vec_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), y);
        }
    }

    /// `A += scale * x y^T`.
    pub fn add_outer(&mut self, scale: f64, x: &[f64], y: &[f64]) {
        for (r, &xr) in x.iter().enumerate() {
            let f = scale * xr;
            if f == 0.0 {
                continue;
            }
            for (a, yc) in self.row_mut(r).iter_mut().zip(y) {
                *a += f * yc;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Attention at every query time.
    Ithp,
    /// Attention at events, linear extrapolation in between.
    ExIthp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Size of each half of the concatenated embedding.
    pub embed_dim: usize,
    pub value_dim: usize,
    pub num_types: usize,
    pub grid_subdivision: usize,
    pub variant: Variant,
    /// MLP width, only used by [`Variant::ExIthp`].
    pub hidden_dim: usize,
    /// Adds the query embedding to the attention output before the
    /// output projection; requires `value_dim == 2 * embed_dim`.
    #[serde(default)]
    pub skip_connection: bool,
}

impl ModelConfig {
    /// `value_dim = 2 * embed_dim`, grid subdivision 10, no skip connection.
    pub fn new(embed_dim: usize, num_types: usize, variant: Variant) -> Self {
        Self {
            embed_dim,
            value_dim: 2 * embed_dim,
            num_types,
            grid_subdivision: 10,
            variant,
            hidden_dim: 2 * embed_dim,
            skip_connection: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(ModelError::OddDimension(self.embed_dim));
        }
        if self.value_dim == 0 || self.num_types == 0 || self.grid_subdivision == 0 {
            return Err(ModelError::InvalidConfig(
                "value_dim, num_types and grid_subdivision must be positive".into(),
            ));
        }
        if self.variant == Variant::ExIthp && self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be positive".into()));
        }
        if self.skip_connection && self.value_dim != 2 * self.embed_dim {
            return Err(ModelError::InvalidConfig(
                "skip connection needs value_dim == 2 * embed_dim".into(),
            ));
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        2 * self.embed_dim
    }
}

/// Parameters of the extrapolating variant's MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationParams {
    /// `value_dim x hidden_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `hidden_dim x embed_dim`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// per-type slope of the linear extrapolation
    pub alpha: Vec<f64>,
    /// `num_types x embed_dim`
    pub w_out: Matrix,
}

/// Learnable tensors. There is no query or key projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `embed_dim x num_types`; column `k` is the embedding of type `k`.
    pub type_embedding: Matrix,
    /// `2 * embed_dim x value_dim`
    pub value_proj: Matrix,
    /// `num_types x value_dim`; row `k` reduces a value vector to a type-`k` score.
    pub output: Matrix,
    pub bias: Vec<f64>,
    pub extrapolation: Option<ExtrapolationParams>,
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let m = cfg.embed_dim;
        let k = cfg.num_types;
        let extrapolation = (cfg.variant == Variant::ExIthp).then(|| ExtrapolationParams {
            w1: Matrix::zeros(cfg.value_dim, cfg.hidden_dim),
            b1: vec![0.0; cfg.hidden_dim],
            w2: Matrix::zeros(cfg.hidden_dim, m),
            b2: vec![0.0; m],
            alpha: vec![0.0; k],
            w_out: Matrix::zeros(k, m),
        });
        Self {
            type_embedding: Matrix::zeros(m, k),
            value_proj: Matrix::zeros(2 * m, cfg.value_dim),
            output: Matrix::zeros(k, cfg.value_dim),
            bias: vec![0.0; k],
            extrapolation,
        }
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let reference = Self::zeros(cfg);
        if self.shapes() != reference.shapes() {
            return Err(ModelError::ShapeMismatch(format!(
                "parameters {:?} do not match config {:?}",
                self.shapes(),
                reference.shapes()
            )));
        }
        Ok(())
    }

    /// `(name, shape)` for every tensor in flattening order.
    pub fn shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.tensors().into_iter().map(|(n, s, _)| (n, s)).collect()
    }

    /// Named tensors in a fixed order: name, shape and row-major data.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let mut out: Vec<(&'static str, Vec<usize>, &[f64])> = vec![
            ("U", vec![self.type_embedding.rows(), self.type_embedding.cols()], self.type_embedding.as_slice()),
            ("W_V", vec![self.value_proj.rows(), self.value_proj.cols()], self.value_proj.as_slice()),
            ("w", vec![self.output.rows(), self.output.cols()], self.output.as_slice()),
            ("b", vec![self.bias.len()], &self.bias),
        ];
        if let Some(ex) = &self.extrapolation {
            out.push(("W_1", vec![ex.w1.rows(), ex.w1.cols()], ex.w1.as_slice()));
            out.push(("b_1", vec![ex.b1.len()], &ex.b1));
            out.push(("W_2", vec![ex.w2.rows(), ex.w2.cols()], ex.w2.as_slice()));
            out.push(("b_2", vec![ex.b2.len()], &ex.b2));
            out.push(("alpha", vec![ex.alpha.len()], &ex.alpha));
            out.push(("w_ex", vec![ex.w_out.rows(), ex.w_out.cols()], ex.w_out.as_slice()));
        }
        out
    }

    /// Rebuilds parameters for `cfg` from named row-major tensors.
    pub fn from_tensors(cfg: &ModelConfig, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self, ModelError> {
        let mut p = Self::zeros(cfg);
        let expected = p.shapes();
        if tensors.len() != expected.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        let mut filled = vec![false; expected.len()];
        let mut slots = p.slices_mut();
        for (name, shape, data) in tensors {
            let idx = expected
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| ModelError::ShapeMismatch(format!("unknown tensor {name}")))?;
            if filled[idx] || expected[idx].1 != *shape || slots[idx].len() != data.len() {
                return Err(ModelError::ShapeMismatch(format!("tensor {name} has the wrong shape")));
            }
            slots[idx].copy_from_slice(data);
            filled[idx] = true;
        }
        Ok(p)
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.type_embedding.as_mut_slice(),
            self.value_proj.as_mut_slice(),
            self.output.as_mut_slice(),
            &mut self.bias,
        ];
        if let Some(ex) = &mut self.extrapolation {
            out.push(ex.w1.as_mut_slice());
            out.push(&mut ex.b1);
            out.push(ex.w2.as_mut_slice());
            out.push(&mut ex.b2);
            out.push(&mut ex.alpha);
            out.push(ex.w_out.as_mut_slice());
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, _, d)| d.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut offset = 0;
        for slice in self.slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    pub fn get_scalar(&self, index: usize) -> f64 {
        let mut offset = index;
        for (_, _, d) in self.tensors() {
            if offset < d.len() {
                return d[offset];
            }
            offset -= d.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_scalar(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for slice in self.slices_mut() {
            if offset < slice.len() {
                slice[offset] = value;
                return;
            }
            offset -= slice.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// `self += scale * other`, element-wise.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let src = other.to_flat();
        let mut offset = 0;
        for slice in self.slices_mut() {
            for v in slice.iter_mut() {
                *v += scale * src[offset];
                offset += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
