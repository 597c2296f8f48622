//! Classification by per-class objective and by group energy.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{ensure, Result};
use crate::network::EncoderParams;
use crate::objective::eval_objective;
use crate::problem::{Dictionary, GroupStructure};
use crate::solvers::{bcofb_solve, exact_codes, SolverConfig};

/// How codes are produced.
#[derive(Debug, Clone, Copy)]
pub enum Coder<'a> {
    /// Exact minimizer of the HiLasso objective.
    Exact {
        dictionary: &'a Dictionary,
        structure: &'a GroupStructure,
    },
    Encoder(&'a EncoderParams),
}

impl Coder<'_> {
    pub fn encode(&self, x: ArrayView1<f64>) -> Result<ndarray::Array1<f64>> {
        match self {
            Coder::Exact {
                dictionary,
                structure,
            } => Ok(bcofb_solve(x, dictionary, structure, &SolverConfig::exact())?
                .code
                .into_inner()),
            Coder::Encoder(params) => Ok(params.forward(x)?.into_inner()),
        }
    }

    /// Codes of every column, p×N.
    pub fn encode_batch(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Coder::Exact {
                dictionary,
                structure,
            } => exact_codes(data, dictionary, structure),
            Coder::Encoder(params) => params.forward_batch(data),
        }
    }
}

/// One class: a coder and the objective its codes are scored with.
#[derive(Debug, Clone, Copy)]
pub struct ClassModel<'a> {
    pub coder: Coder<'a>,
    pub dictionary: &'a Dictionary,
    pub structure: &'a GroupStructure,
}

impl<'a> ClassModel<'a> {
    /// Exact coding under the model's own objective.
    pub fn exact(dictionary: &'a Dictionary, structure: &'a GroupStructure) -> Self {
        Self {
            coder: Coder::Exact {
                dictionary,
                structure,
            },
            dictionary,
            structure,
        }
    }

    pub fn encoder(params: &'a EncoderParams, dictionary: &'a Dictionary) -> Self {
        Self {
            coder: Coder::Encoder(params),
            dictionary,
            structure: &params.structure,
        }
    }
}

/// The class whose model reaches the smallest objective on `x`; ties go to
/// the lowest index.
pub fn classify_min_objective(models: &[ClassModel<'_>], x: ArrayView1<f64>) -> Result<usize> {
    ensure!(
        models.len() >= 2,
        Invalid,
        "need at least two classes, got {}",
        models.len()
    );
    let mut best = (0, f64::INFINITY);
    for (c, model) in models.iter().enumerate() {
        let z = model.coder.encode(x)?;
        let f = eval_objective(x, z.view(), model.dictionary, model.structure)?;
        if f < best.1 {
            best = (c, f);
        }
    }
    Ok(best.0)
}

/// Per-group squared ℓ2 energy of every column of a p×N code matrix,
/// |P|×N.
pub fn group_energies(codes: ArrayView2<f64>, labels: &GroupStructure) -> Array2<f64> {
    let mut out = Array2::zeros((labels.n_groups(), codes.ncols()));
    for (n, z) in codes.columns().into_iter().enumerate() {
        for (r, group) in labels.groups().iter().enumerate() {
            out[[r, n]] = group.iter().map(|&j| z[j] * z[j]).sum();
        }
    }
    out
}

/// Indices of the `k` largest entries, ties to the lowest index, sorted.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut out: Vec<usize> = idx.into_iter().take(k).collect();
    out.sort_unstable();
    out
}

/// Encodes each frame, sum-pools the group energies over consecutive spans
/// of `pool` frames and returns the `top_k` groups of every full span.
/// `labels` is the partition whose groups are the classes; it need not be
/// the structure the coder was built with.
pub fn classify_group_energy(
    coder: &Coder<'_>,
    frames: ArrayView2<f64>,
    labels: &GroupStructure,
    pool: usize,
    top: usize,
) -> Result<Vec<Vec<usize>>> {
    ensure!(pool >= 1, Invalid, "pool must be positive");
    ensure!(
        frames.ncols() >= pool,
        Invalid,
        "{} frames is fewer than one pool of {pool}",
        frames.ncols()
    );
    ensure!(
        top <= labels.n_groups(),
        Invalid,
        "top_k exceeds the number of groups"
    );
    let codes = coder.encode_batch(frames)?;
    ensure!(
        codes.nrows() == labels.p(),
        Dimension,
        "codes have {} rows but the label partition covers {}",
        codes.nrows(),
        labels.p()
    );
    let energies = group_energies(codes.view(), labels);
    let spans = frames.ncols() / pool;
    Ok((0..spans)
        .map(|s| {
            let pooled: Vec<f64> = energies
                .rows()
                .into_iter()
                .map(|row| row.iter().skip(s * pool).take(pool).sum())
                .collect();
            top_k(&pooled, top)
        })
        .collect())
}

/// Mean fraction of true labels recovered per span.
pub fn detection_accuracy(predicted: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "one prediction per span");
    if truth.is_empty() {
        return 1.0;
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            if t.is_empty() {
                return 1.0;
            }
            t.iter().filter(|l| p.contains(l)).count() as f64 / t.len() as f64
        })
        .sum();
    total / truth.len() as f64
}
