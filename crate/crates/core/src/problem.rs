//! Domain types shared by every solver and encoder.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{ensure, Error, Result};

const NORMALIZED_TOL: f64 = 1e-12;

/// An m×p dictionary whose columns are the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
    normalized: bool,
}

impl Dictionary {
    /// Wraps an atom matrix, rejecting non-finite entries and zero columns.
    ///
    /// The `normalized` flag is set when every column already has unit norm.
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        ensure!(
            atoms.nrows() > 0 && atoms.ncols() > 0,
            Invalid,
            "dictionary must be non-empty, got {}x{}",
            atoms.nrows(),
            atoms.ncols()
        );
        ensure!(
            atoms.iter().all(|v| v.is_finite()),
            NonFinite,
            "dictionary contains non-finite entries"
        );
        let mut normalized = true;
        for (j, col) in atoms.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            ensure!(norm > 0.0, Invalid, "atom {j} has zero norm");
            normalized &= (norm - 1.0).abs() <= NORMALIZED_TOL;
        }
        Ok(Self { atoms, normalized })
    }

    /// Builds a dictionary after scaling every column to unit norm.
    pub fn normalized(mut atoms: Array2<f64>) -> Result<Self> {
        for (j, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            ensure!(
                norm > 0.0 && norm.is_finite(),
                Invalid,
                "atom {j} cannot be normalized (norm {norm})"
            );
            col /= norm;
        }
        Self::new(atoms)
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> Array2<f64> {
        self.atoms
    }

    /// Signal dimension.
    pub fn m(&self) -> usize {
        self.atoms.nrows()
    }

    /// Code dimension (number of atoms).
    pub fn p(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Column submatrix D_r for the given index set.
    pub fn group_columns(&self, group: &[usize]) -> Array2<f64> {
        self.atoms.select(Axis(1), group)
    }

    /// Reconstruction D z.
    pub fn reconstruct(&self, z: ArrayView1<f64>) -> Array1<f64> {
        self.atoms.dot(&z)
    }
}

/// A partition of the code indices into groups, with per-coefficient
/// weights `lambda` and per-group weights `mu`.
///
/// The singleton level of the hierarchy is implicit: it is carried by
/// `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
    lambda: Array1<f64>,
    mu: Array1<f64>,
    group_of: Vec<usize>,
}

impl GroupStructure {
    pub fn new(groups: Vec<Vec<usize>>, lambda: Array1<f64>, mu: Array1<f64>) -> Result<Self> {
        let p = lambda.len();
        ensure!(p > 0, Invalid, "group structure needs at least one coefficient");
        ensure!(
            mu.len() == groups.len(),
            Dimension,
            "mu has {} entries but there are {} groups",
            mu.len(),
            groups.len()
        );
        let mut group_of = vec![usize::MAX; p];
        for (r, group) in groups.iter().enumerate() {
            ensure!(!group.is_empty(), Invalid, "group {r} is empty");
            for &j in group {
                ensure!(j < p, Invalid, "group {r} has index {j} outside 0..{p}");
                ensure!(
                    group_of[j] == usize::MAX,
                    Invalid,
                    "index {j} appears in groups {} and {r}",
                    group_of[j]
                );
                group_of[j] = r;
            }
        }
        if let Some(j) = group_of.iter().position(|&r| r == usize::MAX) {
            return Err(Error::Invalid(format!("index {j} is not covered by any group")));
        }
        ensure!(
            lambda.iter().all(|v| v.is_finite() && *v >= 0.0),
            Invalid,
            "lambda entries must be finite and nonnegative"
        );
        ensure!(
            mu.iter().all(|v| v.is_finite() && *v >= 0.0),
            Invalid,
            "mu entries must be finite and nonnegative"
        );
        Ok(Self {
            groups,
            lambda,
            mu,
            group_of,
        })
    }

    /// Every coefficient in its own group, uniform `lambda`, `mu = 0`: the Lasso.
    pub fn singletons(p: usize, lambda: f64) -> Result<Self> {
        Self::new(
            (0..p).map(|j| vec![j]).collect(),
            Array1::from_elem(p, lambda),
            Array1::zeros(p),
        )
    }

    /// Consecutive groups of the given sizes with uniform weights.
    pub fn contiguous(sizes: &[usize], lambda: f64, mu: f64) -> Result<Self> {
        let mut groups = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &size in sizes {
            groups.push((start..start + size).collect());
            start += size;
        }
        Self::new(
            groups,
            Array1::from_elem(start, lambda),
            Array1::from_elem(sizes.len(), mu),
        )
    }

    /// Same partition, new weights.
    pub fn with_weights(&self, lambda: Array1<f64>, mu: Array1<f64>) -> Result<Self> {
        Self::new(self.groups.clone(), lambda, mu)
    }

    /// Same partition with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.with_weights(&self.lambda * c, &self.mu * c)
    }

    pub fn p(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, r: usize) -> &[usize] {
        &self.groups[r]
    }

    pub fn lambda(&self) -> &Array1<f64> {
        &self.lambda
    }

    pub fn mu(&self) -> &Array1<f64> {
        &self.mu
    }

    /// Index of the group containing coefficient `j`.
    pub fn group_of(&self, j: usize) -> usize {
        self.group_of[j]
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_singleton(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }
}

/// A code vector z of length p.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode(Array1<f64>);

impl SparseCode {
    pub fn new(z: Array1<f64>) -> Result<Self> {
        ensure!(
            z.iter().all(|v| v.is_finite()),
            NonFinite,
            "code contains non-finite entries"
        );
        Ok(Self(z))
    }

    pub fn zeros(p: usize) -> Self {
        Self(Array1::zeros(p))
    }

    pub(crate) fn from_finite(z: Array1<f64>) -> Self {
        debug_assert!(z.iter().all(|v| v.is_finite()));
        Self(z)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// The coefficients z_r of group `r`, in the group's index order.
    pub fn group_values(&self, gs: &GroupStructure, r: usize) -> Vec<f64> {
        gs.group(r).iter().map(|&j| self.0[j]).collect()
    }

    pub fn group_norm(&self, gs: &GroupStructure, r: usize) -> f64 {
        gs.group(r)
            .iter()
            .map(|&j| self.0[j] * self.0[j])
            .sum::<f64>()
            .sqrt()
    }

    /// Indices of the groups with a nonzero coefficient.
    pub fn active_groups(&self, gs: &GroupStructure) -> Vec<usize> {
        (0..gs.n_groups())
            .filter(|&r| gs.group(r).iter().any(|&j| self.0[j] != 0.0))
            .collect()
    }
}

/// A batch of signals bound to a dictionary and a group structure.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub data: Array2<f64>,
    pub dictionary: Dictionary,
    pub structure: GroupStructure,
    pub exact_codes: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
    /// Signed per-sample group weights, |P|×N. Only the discriminative loss
    /// reads them.
    pub per_sample_mu: Option<Array2<f64>>,
}

impl ProblemInstance {
    pub fn new(data: Array2<f64>, dictionary: Dictionary, structure: GroupStructure) -> Result<Self> {
        ensure!(
            data.nrows() == dictionary.m(),
            Dimension,
            "data has {} rows but the dictionary has m = {}",
            data.nrows(),
            dictionary.m()
        );
        ensure!(
            structure.p() == dictionary.p(),
            Dimension,
            "structure covers p = {} but the dictionary has p = {}",
            structure.p(),
            dictionary.p()
        );
        ensure!(
            data.iter().all(|v| v.is_finite()),
            NonFinite,
            "data contains non-finite entries"
        );
        Ok(Self {
            data,
            dictionary,
            structure,
            exact_codes: None,
            labels: None,
            per_sample_mu: None,
        })
    }

    pub fn with_exact_codes(mut self, codes: Array2<f64>) -> Result<Self> {
        ensure!(
            codes.dim() == (self.p(), self.n_samples()),
            Dimension,
            "exact codes are {:?}, expected ({}, {})",
            codes.dim(),
            self.p(),
            self.n_samples()
        );
        self.exact_codes = Some(codes);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        ensure!(
            labels.len() == self.n_samples(),
            Dimension,
            "{} labels for {} samples",
            labels.len(),
            self.n_samples()
        );
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_per_sample_mu(mut self, mu: Array2<f64>) -> Result<Self> {
        ensure!(
            mu.dim() == (self.structure.n_groups(), self.n_samples()),
            Dimension,
            "per-sample mu is {:?}, expected ({}, {})",
            mu.dim(),
            self.structure.n_groups(),
            self.n_samples()
        );
        ensure!(
            mu.iter().all(|v| v.is_finite()),
            NonFinite,
            "per-sample mu contains non-finite entries"
        );
        self.per_sample_mu = Some(mu);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.dictionary.m()
    }

    pub fn p(&self) -> usize {
        self.dictionary.p()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample(&self, n: usize) -> ArrayView1<'_, f64> {
        self.data.column(n)
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// A new instance restricted to the given sample columns.
    pub fn subset(&self, columns: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(1), columns),
            dictionary: self.dictionary.clone(),
            structure: self.structure.clone(),
            exact_codes: self.exact_codes.as_ref().map(|c| c.select(Axis(1), columns)),
            labels: self
                .labels
                .as_ref()
                .map(|l| columns.iter().map(|&n| l[n]).collect()),
            per_sample_mu: self.per_sample_mu.as_ref().map(|mu| mu.select(Axis(1), columns)),
        }
    }
}
