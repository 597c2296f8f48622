//! Reverse-mode differentiation through the unrolled encoder.
//!
//! The selected group of every layer is treated as a constant: the encoder
//! is piecewise smooth in its parameters and the selection is locally
//! constant almost everywhere.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{ensure, Result};
use crate::network::{EncoderParams, ForwardTrace};
use crate::problem::Dictionary;
use crate::prox::{soft_threshold, ZERO_NORM};

/// Gradients of one stored layer parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub inhibition: Array2<f64>,
    pub t: Array1<f64>,
    pub s: Array1<f64>,
}

/// Gradients with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub filter: Array2<f64>,
    pub layers: Vec<LayerGradients>,
    /// m×p, present only when the dictionary is a training variable.
    pub dictionary: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let p = params.p();
        let groups = params.structure.n_groups();
        Self {
            filter: Array2::zeros(params.filter.raw_dim()),
            layers: params
                .layers
                .iter()
                .map(|_| LayerGradients {
                    inhibition: Array2::zeros((p, p)),
                    t: Array1::zeros(p),
                    s: Array1::zeros(groups),
                })
                .collect(),
            dictionary: None,
        }
    }

    /// Same ordering as [`EncoderParams::to_flat`]; the dictionary block,
    /// when present, is not included.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.filter.iter());
        for l in &self.layers {
            out.extend(l.inhibition.iter());
            out.extend(l.t.iter());
            out.extend(l.s.iter());
        }
        out
    }

    pub fn from_flat(params: &EncoderParams, flat: &[f64]) -> Self {
        let mut g = Self::zeros_like(params);
        let mut it = flat.iter().copied();
        g.filter.iter_mut().for_each(|v| *v = it.next().unwrap());
        for l in &mut g.layers {
            l.inhibition.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.t.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.s.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        assert!(it.next().is_none(), "flat gradient longer than the parameters");
        g
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.filter += &other.filter;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.inhibition += &b.inhibition;
            a.t += &b.t;
            a.s += &b.s;
        }
        match (&mut self.dictionary, &other.dictionary) {
            (Some(a), Some(b)) => *a += b,
            (None, Some(b)) => self.dictionary = Some(b.clone()),
            _ => {}
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>()
            + self
                .dictionary
                .as_ref()
                .map_or(0.0, |d| d.iter().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
            && self
                .dictionary
                .as_ref()
                .is_none_or(|d| d.iter().all(|v| v.is_finite()))
    }
}

/// Backpropagates `upstream` = dL/dz (at the encoder output) through a traced
/// forward pass.
pub fn backward(
    params: &EncoderParams,
    trace: &ForwardTrace,
    upstream: ArrayView1<f64>,
) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(params);
    backward_accumulate(params, trace, upstream, &mut grads)?;
    Ok(grads)
}

/// As [`backward`], adding into an existing gradient buffer.
pub fn backward_accumulate(
    params: &EncoderParams,
    trace: &ForwardTrace,
    upstream: ArrayView1<f64>,
    grads: &mut Gradients,
) -> Result<()> {
    let p = params.p();
    let gs = &params.structure;
    ensure!(
        trace.layers.len() == params.depth,
        Invalid,
        "trace has {} layers, encoder has {}",
        trace.layers.len(),
        params.depth
    );
    ensure!(
        trace.input.len() == params.m() && trace.final_b.len() == p,
        Dimension,
        "trace does not match the encoder dimensions"
    );
    ensure!(
        upstream.len() == p,
        Dimension,
        "upstream gradient has length {}, expected {p}",
        upstream.len()
    );
    ensure!(
        grads.layers.len() == params.layers.len(),
        Dimension,
        "gradient buffer does not match the encoder layout"
    );
    for rec in &trace.layers {
        ensure!(
            rec.group < gs.n_groups() && rec.b_pre.len() == p && rec.e.len() == p,
            Invalid,
            "trace record does not match the encoder structure"
        );
    }

    let mut db = vec![0.0; p];
    let last = params.slot(params.depth - 1);
    {
        let th = &params.layers[last].thresholds;
        let lg = &mut grads.layers[last];
        prox_backward(
            trace.final_b.as_slice().expect("contiguous"),
            th.t.as_slice().expect("contiguous"),
            th.s.as_slice().expect("contiguous"),
            gs,
            upstream.as_slice().expect("contiguous upstream"),
            &mut db,
            lg.t.as_slice_mut().expect("contiguous"),
            lg.s.as_slice_mut().expect("contiguous"),
        );
    }

    let mut dz = vec![0.0; p];
    let mut dy = vec![0.0; p];
    for k in (0..params.depth).rev() {
        let rec = &trace.layers[k];
        let slot = params.slot(k);
        let layer = &params.layers[slot];
        let lg = &mut grads.layers[slot];
        let db_view = ArrayView1::from(&db[..]);
        dy.fill(0.0);
        for &j in gs.group(rec.group) {
            let de = layer.inhibition.column(j).dot(&db_view);
            lg.inhibition.column_mut(j).scaled_add(rec.e[j], &db_view);
            dy[j] = de + dz[j];
            dz[j] = -de;
        }
        prox_backward(
            rec.b_pre.as_slice().expect("contiguous"),
            layer.thresholds.t.as_slice().expect("contiguous"),
            layer.thresholds.s.as_slice().expect("contiguous"),
            gs,
            &dy,
            &mut db,
            lg.t.as_slice_mut().expect("contiguous"),
            lg.s.as_slice_mut().expect("contiguous"),
        );
    }

    for (mut row, &dbi) in grads.filter.rows_mut().into_iter().zip(&db) {
        if dbi != 0.0 {
            row.scaled_add(dbi, &trace.input);
        }
    }
    Ok(())
}

/// Vector-Jacobian product of the HiLasso prox at `b`, accumulated into
/// `db`, `dt`, `ds`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn prox_backward(
    b: &[f64],
    t: &[f64],
    s: &[f64],
    gs: &crate::problem::GroupStructure,
    dout: &[f64],
    db: &mut [f64],
    dt: &mut [f64],
    ds: &mut [f64],
) {
    let u: Vec<f64> = b.iter().zip(t).map(|(&bj, &tj)| soft_threshold(bj, tj)).collect();
    let mut du = vec![0.0; b.len()];
    for (r, group) in gs.groups().iter().enumerate() {
        let norm = group.iter().map(|&j| u[j] * u[j]).sum::<f64>().sqrt();
        let dot: f64 = group.iter().map(|&j| u[j] * dout[j]).sum();
        if s[r] == 0.0 {
            for &j in group {
                du[j] = dout[j];
            }
            if norm > 0.0 {
                ds[r] -= dot / norm;
            }
        } else if norm > s[r] && norm > ZERO_NORM {
            let c = s[r] / norm;
            let w = c * dot / (norm * norm);
            for &j in group {
                du[j] = (1.0 - c) * dout[j] + w * u[j];
            }
            ds[r] -= dot / norm;
        }
    }
    for j in 0..b.len() {
        if b[j].abs() > t[j] {
            db[j] += du[j];
            dt[j] -= b[j].signum() * du[j];
        }
    }
}

/// Chains encoder-parameter gradients into the dictionary under the tied
/// parameterization W = Dᵀ/α, S = I − DᵀD/α with α fixed. Thresholds
/// λ/α, μ/α do not depend on D.
pub fn dictionary_gradient(grads: &Gradients, d: &Dictionary, alpha: f64) -> Array2<f64> {
    let mut ds_sum: Array2<f64> = Array2::zeros((d.p(), d.p()));
    for l in &grads.layers {
        ds_sum += &l.inhibition;
    }
    let sym = &ds_sum + &ds_sum.t();
    let mut dd = grads.filter.t().mapv(|v| v / alpha);
    dd -= &d.atoms().dot(&sym).mapv(|v| v / alpha);
    dd
}
