//! Unrolled BCoFB encoders.
//!
//! An encoder with T layers runs exactly T iterations of the block-coordinate
//! forward-backward method with learnable operators:
//!
//! ```text
//! b ← W x, z ← 0
//! for k in 1..=T:
//!     y ← π_k(b)                 (HiLasso prox with thresholds t_k, s_k)
//!     e ← y − z
//!     g ← argmax_r ‖e_r‖₂
//!     b ← b + S_k[:, G_g] e_g
//!     z_g ← y_g
//! output π_T(b)
//! ```
//!
//! With the parameters produced by [`EncoderParams::init_from_dictionary`]
//! the output is bit-for-bit the result of T solver iterations.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, ShapeBuilder};
use rayon::prelude::*;

use crate::error::{ensure, Error, Result};
use crate::objective::{step_scale, StepMode};
use crate::problem::{Dictionary, GroupStructure, SparseCode};
use crate::prox::{prox_hilasso_in_place, ThresholdPair};
use crate::solvers::{select_group, SplittingOperators};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tying {
    /// One S and one threshold pair shared by all layers.
    Tied,
    /// A separate S and threshold pair per layer. W is shared either way.
    Untied,
}

impl Tying {
    pub fn name(self) -> &'static str {
        match self {
            Tying::Tied => "tied",
            Tying::Untied => "untied",
        }
    }
}

impl std::str::FromStr for Tying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tied" => Ok(Tying::Tied),
            "untied" => Ok(Tying::Untied),
            other => Err(Error::Invalid(format!("unknown tying mode '{other}'"))),
        }
    }
}

/// The per-layer learnable part: the inhibition matrix S and thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// p×p, column-major.
    pub inhibition: Array2<f64>,
    pub thresholds: ThresholdPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// W, p×m.
    pub filter: Array2<f64>,
    /// One entry when tied, `depth` entries when untied.
    pub layers: Vec<LayerParams>,
    pub depth: usize,
    pub tying: Tying,
    pub structure: GroupStructure,
    /// Step scale used at initialization; informational only.
    pub alpha_init: f64,
}

impl EncoderParams {
    /// Parameters that make the encoder reproduce `depth` BCoFB iterations,
    /// with α from the per-group Lipschitz bound.
    pub fn init_from_dictionary(
        d: &Dictionary,
        gs: &GroupStructure,
        depth: usize,
        tying: Tying,
    ) -> Result<Self> {
        let alpha = step_scale(d, gs, StepMode::PerGroupBound)?.alpha;
        Self::init_with_alpha(d, gs, alpha, depth, tying)
    }

    /// As [`init_from_dictionary`](Self::init_from_dictionary) with a given α
    /// (α = 1, μ = 0 on singletons gives the CoD network).
    pub fn init_with_alpha(
        d: &Dictionary,
        gs: &GroupStructure,
        alpha: f64,
        depth: usize,
        tying: Tying,
    ) -> Result<Self> {
        ensure!(depth >= 1, Invalid, "an encoder needs at least one layer");
        let ops = SplittingOperators::new(d, gs, alpha)?;
        let layer = LayerParams {
            inhibition: ops.inhibition,
            thresholds: ops.thresholds,
        };
        let copies = match tying {
            Tying::Tied => 1,
            Tying::Untied => depth,
        };
        Ok(Self {
            filter: ops.filter,
            layers: vec![layer; copies],
            depth,
            tying,
            structure: gs.clone(),
            alpha_init: alpha,
        })
    }

    /// Assembles parameters from parts, checking shapes.
    pub fn from_parts(
        filter: Array2<f64>,
        layers: Vec<LayerParams>,
        depth: usize,
        tying: Tying,
        structure: GroupStructure,
        alpha_init: f64,
    ) -> Result<Self> {
        ensure!(depth >= 1, Invalid, "an encoder needs at least one layer");
        let expected = match tying {
            Tying::Tied => 1,
            Tying::Untied => depth,
        };
        ensure!(
            layers.len() == expected,
            Invalid,
            "{} layer parameter sets for a {} encoder of depth {depth}",
            layers.len(),
            tying.name()
        );
        let p = structure.p();
        ensure!(
            filter.nrows() == p,
            Dimension,
            "W has {} rows, structure has p = {p}",
            filter.nrows()
        );
        for (k, layer) in layers.iter().enumerate() {
            ensure!(
                layer.inhibition.dim() == (p, p),
                Dimension,
                "S of layer {k} is {:?}, expected ({p}, {p})",
                layer.inhibition.dim()
            );
            layer.thresholds.check(&structure)?;
            ensure!(
                layer
                    .thresholds
                    .t
                    .iter()
                    .chain(layer.thresholds.s.iter())
                    .all(|v| *v >= 0.0),
                Invalid,
                "layer {k} has negative thresholds"
            );
        }
        ensure!(
            filter.iter().all(|v| v.is_finite())
                && layers.iter().all(|l| l.inhibition.iter().all(|v| v.is_finite())),
            NonFinite,
            "encoder parameters contain non-finite entries"
        );
        let mut params = Self {
            filter,
            layers,
            depth,
            tying,
            structure,
            alpha_init,
        };
        for layer in &mut params.layers {
            if !layer.inhibition.is_standard_layout() {
                continue;
            }
            let mut f = Array2::zeros((p, p).f());
            f.assign(&layer.inhibition);
            layer.inhibition = f;
        }
        Ok(params)
    }

    pub fn m(&self) -> usize {
        self.filter.ncols()
    }

    pub fn p(&self) -> usize {
        self.filter.nrows()
    }

    /// Parameters used by layer `k` (0-based).
    pub fn layer(&self, k: usize) -> &LayerParams {
        match self.tying {
            Tying::Tied => &self.layers[0],
            Tying::Untied => &self.layers[k],
        }
    }

    /// Stored index of the parameter set used by layer `k`.
    pub(crate) fn slot(&self, k: usize) -> usize {
        match self.tying {
            Tying::Tied => 0,
            Tying::Untied => k,
        }
    }

    pub fn clamp_thresholds(&mut self) {
        for layer in &mut self.layers {
            layer.thresholds.clamp_nonnegative();
        }
    }

    /// Number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.filter.len()
            + self
                .layers
                .iter()
                .map(|l| l.inhibition.len() + l.thresholds.t.len() + l.thresholds.s.len())
                .sum::<usize>()
    }

    /// All parameters in a fixed order: W (row-major), then per stored
    /// layer S (row-major), t, s.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        out.extend(self.filter.iter());
        for l in &self.layers {
            out.extend(l.inhibition.iter());
            out.extend(l.thresholds.t.iter());
            out.extend(l.thresholds.s.iter());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). Does not clamp.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut it = flat.iter().copied();
        self.filter.iter_mut().for_each(|v| *v = it.next().unwrap());
        for l in &mut self.layers {
            l.inhibition.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.thresholds.t.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.thresholds.s.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }

    fn check_input(&self, x: ArrayView1<f64>) -> Result<()> {
        ensure!(
            x.len() == self.m(),
            Dimension,
            "input has length {} but the encoder expects m = {}",
            x.len(),
            self.m()
        );
        Ok(())
    }

    /// Encodes one signal.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<SparseCode> {
        self.check_input(x)?;
        self.run(x, None)
    }

    /// Encodes one signal and keeps the per-layer state for backpropagation.
    pub fn forward_traced(&self, x: ArrayView1<f64>) -> Result<(SparseCode, ForwardTrace)> {
        self.check_input(x)?;
        let mut trace = ForwardTrace {
            input: x.to_owned(),
            layers: Vec::with_capacity(self.depth),
            final_b: Array1::zeros(0),
        };
        let code = self.run(x, Some(&mut trace))?;
        Ok((code, trace))
    }

    fn run(&self, x: ArrayView1<f64>, trace: Option<&mut ForwardTrace>) -> Result<SparseCode> {
        let b0 = apply_filter(&self.filter, x);
        let mut ws = Workspace::new(self.p());
        let mut out = vec![0.0; self.p()];
        self.run_from(b0.view(), &mut ws, trace, &mut out)?;
        SparseCode::new(Array1::from(out))
            .map_err(|_| Error::NonFinite("encoder output stage produced non-finite values".into()))
    }

    /// The layers and output stage, starting from b = Wx.
    fn run_from(
        &self,
        b0: ArrayView1<f64>,
        ws: &mut Workspace,
        mut trace: Option<&mut ForwardTrace>,
        out: &mut [f64],
    ) -> Result<()> {
        let gs = &self.structure;
        let Workspace { b, z, y, e } = ws;
        for (bi, &v) in b.iter_mut().zip(b0.iter()) {
            *bi = v;
        }
        z.fill(0.0);
        for k in 0..self.depth {
            let layer = self.layer(k);
            y.copy_from_slice(b);
            prox_hilasso_in_place(
                y,
                gs,
                layer.thresholds.t.as_slice().expect("contiguous"),
                layer.thresholds.s.as_slice().expect("contiguous"),
            );
            for ((ej, &yj), &zj) in e.iter_mut().zip(y.iter()).zip(z.iter()) {
                *ej = yj - zj;
            }
            let (g, _) = select_group(e, gs);
            if let Some(tr) = trace.as_deref_mut() {
                tr.layers.push(LayerRecord {
                    b_pre: Array1::from(b.clone()),
                    y: Array1::from(y.clone()),
                    e: Array1::from(e.clone()),
                    group: g,
                });
            }
            for &j in gs.group(g) {
                let col = layer.inhibition.column(j);
                axpy(e[j], col.as_slice().expect("column-major inhibition"), b);
                z[j] = y[j];
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "encoder state became non-finite in layer {}",
                    k + 1
                )));
            }
        }
        let last = self.layer(self.depth - 1);
        out.copy_from_slice(b);
        prox_hilasso_in_place(
            out,
            gs,
            last.thresholds.t.as_slice().expect("contiguous"),
            last.thresholds.s.as_slice().expect("contiguous"),
        );
        if let Some(tr) = trace {
            tr.final_b = Array1::from(b.clone());
        }
        Ok(())
    }

    /// Encodes every column of an m×N batch into a p×N code matrix.
    ///
    /// Columns are processed in parallel in fixed-size chunks; Wx is one
    /// matrix product per chunk.
    pub fn forward_batch(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        ensure!(
            data.nrows() == self.m(),
            Dimension,
            "batch has {} rows but the encoder expects m = {}",
            data.nrows(),
            self.m()
        );
        let p = self.p();
        let mut out = Array2::zeros((p, data.ncols()).f());
        out.axis_chunks_iter_mut(Axis(1), BATCH_CHUNK)
            .into_par_iter()
            .zip(data.axis_chunks_iter(Axis(1), BATCH_CHUNK))
            .try_for_each_init(
                || (Workspace::new(p), Array2::zeros((BATCH_CHUNK, p))),
                |(ws, b0t), (mut out_chunk, x_chunk)| {
                    // rows of b0t = (XᵀWᵀ) are the contiguous b = Wx of each column
                    let mut b0t = b0t.slice_mut(s![..x_chunk.ncols(), ..]);
                    general_mat_mul(1.0, &x_chunk.t(), &self.filter.t(), 0.0, &mut b0t);
                    for (mut col, b) in out_chunk.columns_mut().into_iter().zip(b0t.rows()) {
                        self.run_from(b, ws, None, col.as_slice_mut().expect("column-major output"))?;
                    }
                    Ok::<(), Error>(())
                },
            )?;
        ensure!(
            out.iter().all(|v| v.is_finite()),
            NonFinite,
            "encoder output stage produced non-finite values"
        );
        Ok(out)
    }
}

/// Columns per parallel work item in [`EncoderParams::forward_batch`].
const BATCH_CHUNK: usize = 64;

struct Workspace {
    b: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    e: Vec<f64>,
}

impl Workspace {
    fn new(p: usize) -> Self {
        Self {
            b: vec![0.0; p],
            z: vec![0.0; p],
            y: vec![0.0; p],
            e: vec![0.0; p],
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Wx through the same matrix-product kernel as the batched path, so single
/// and batched encodings agree bit for bit.
pub(crate) fn apply_filter(filter: &Array2<f64>, x: ArrayView1<f64>) -> Array1<f64> {
    filter.dot(&x.insert_axis(Axis(1))).index_axis_move(Axis(1), 0)
}

/// State of one layer recorded during a traced forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// b entering the layer.
    pub b_pre: Array1<f64>,
    pub y: Array1<f64>,
    pub e: Array1<f64>,
    /// Selected group.
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Array1<f64>,
    pub layers: Vec<LayerRecord>,
    /// b entering the output prox.
    pub final_b: Array1<f64>,
}

impl ForwardTrace {
    pub fn groups(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.group).collect()
    }
}
