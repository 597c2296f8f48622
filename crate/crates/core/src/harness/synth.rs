//! Synthetic data with a known structured sparse representation.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{ensure, Result};
use crate::problem::{Dictionary, GroupStructure, ProblemInstance};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub m: usize,
    /// Contiguous groups; p is their sum.
    pub group_sizes: Vec<usize>,
    /// Active groups per sample.
    pub active_groups: usize,
    /// Fraction of each active group's coefficients that are nonzero
    /// (at least one).
    pub active_fraction: f64,
    /// Coefficient magnitudes are uniform in this range, signs random.
    pub magnitude: (f64, f64),
    pub noise: f64,
    pub n: usize,
    /// Consecutive samples sharing one draw of active groups. 1 makes every
    /// sample independent.
    pub span: usize,
    /// Weights of the instance's regularizer.
    pub lambda: f64,
    pub mu: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m: 16,
            group_sizes: vec![8; 4],
            active_groups: 1,
            active_fraction: 0.5,
            magnitude: (0.5, 1.5),
            noise: 0.0,
            n: 200,
            span: 1,
            lambda: 0.1,
            mu: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn p(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn structure(&self) -> Result<GroupStructure> {
        GroupStructure::contiguous(&self.group_sizes, self.lambda, self.mu)
    }

    pub fn check(&self) -> Result<()> {
        ensure!(self.m >= 1, Config, "m must be positive");
        ensure!(
            !self.group_sizes.is_empty() && self.group_sizes.iter().all(|&g| g >= 1),
            Config,
            "group sizes must be positive"
        );
        ensure!(
            self.active_groups <= self.group_sizes.len(),
            Config,
            "active_groups {} exceeds the {} groups",
            self.active_groups,
            self.group_sizes.len()
        );
        ensure!(
            self.active_fraction > 0.0 && self.active_fraction <= 1.0,
            Config,
            "active_fraction must lie in (0, 1]"
        );
        let (lo, hi) = self.magnitude;
        ensure!(
            lo > 0.0 && hi >= lo && hi.is_finite(),
            Config,
            "magnitude range must satisfy 0 < low ≤ high"
        );
        ensure!(
            self.noise >= 0.0 && self.noise.is_finite(),
            Config,
            "noise must be ≥ 0"
        );
        ensure!(
            self.n >= 1 && self.span >= 1,
            Config,
            "n and span must be positive"
        );
        ensure!(
            self.lambda >= 0.0 && self.mu >= 0.0,
            Config,
            "lambda and mu must be ≥ 0"
        );
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Signals bound to the generator dictionary and the structure of the `SynthSpec`.
    pub instance: ProblemInstance,
    /// Generating codes, p×N.
    pub truth: Array2<f64>,
    /// Active groups of every sample, sorted.
    pub active: Vec<Vec<usize>>,
}

impl SynthData {
    pub fn dictionary(&self) -> &Dictionary {
        &self.instance.dictionary
    }
}

/// Random dictionary with standard normal entries and unit columns.
pub fn random_dictionary(m: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<Dictionary> {
    let atoms = Array2::from_shape_fn((m, p), |_| rng.sample::<f64, _>(StandardNormal));
    Dictionary::normalized(atoms)
}

/// Draws a generator dictionary, then samples from it.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = random_dictionary(spec.m, spec.p(), &mut rng)?;
    sample_codes(spec, d, &mut rng)
}

/// Samples from a given dictionary; the `SynthSpec` seed drives the codes and
/// noise only.
pub fn gen_with_dictionary(spec: &SynthSpec, d: &Dictionary) -> Result<SynthData> {
    spec.check()?;
    ensure!(
        d.m() == spec.m && d.p() == spec.p(),
        Dimension,
        "dictionary is {}x{}, spec needs {}x{}",
        d.m(),
        d.p(),
        spec.m,
        spec.p()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_codes(spec, d.clone(), &mut rng)
}

fn sample_codes(spec: &SynthSpec, d: Dictionary, rng: &mut ChaCha8Rng) -> Result<SynthData> {
    let gs = spec.structure()?;
    let (p, n) = (spec.p(), spec.n);
    let noise = Normal::new(0.0, spec.noise).expect("checked noise");
    let (lo, hi) = spec.magnitude;
    let mut truth = Array2::zeros((p, n));
    let mut active = Vec::with_capacity(n);
    let mut groups: Vec<usize> = Vec::new();
    for i in 0..n {
        if i % spec.span == 0 {
            groups = sample(rng, gs.n_groups(), spec.active_groups).into_vec();
            groups.sort_unstable();
        }
        for &r in &groups {
            let members = gs.group(r);
            let count =
                ((spec.active_fraction * members.len() as f64).round() as usize).clamp(1, members.len());
            for k in sample(rng, members.len(), count) {
                let mag = if hi > lo { rng.random_range(lo..hi) } else { lo };
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                truth[[members[k], i]] = sign * mag;
            }
        }
        active.push(groups.clone());
    }
    let mut data = d.atoms().dot(&truth);
    if spec.noise > 0.0 {
        data.mapv_inplace(|v| v + noise.sample(rng));
    }
    let instance = ProblemInstance::new(data, d, gs)?;
    Ok(SynthData {
        instance,
        truth,
        active,
    })
}

/// Blocks of samples from different generators, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub m: usize,
    /// Atoms of each regime's generator dictionary.
    pub atoms: usize,
    pub regimes: usize,
    pub per_regime: usize,
    /// Nonzero coefficients per sample.
    pub sparsity: usize,
    /// Coefficient magnitudes are uniform in amplitude·[0.5, 1.5].
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for RegimeSpec {
    fn default() -> Self {
        Self {
            m: 16,
            atoms: 24,
            regimes: 3,
            per_regime: 10_000,
            sparsity: 3,
            amplitude: 1.0,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl RegimeSpec {
    pub fn check(&self) -> Result<()> {
        ensure!(
            self.m >= 1 && self.atoms >= 1 && self.regimes >= 1 && self.per_regime >= 1,
            Config,
            "regime stream sizes must be positive"
        );
        ensure!(
            self.sparsity <= self.atoms,
            Config,
            "sparsity exceeds the number of atoms"
        );
        ensure!(
            self.noise >= 0.0 && self.noise.is_finite(),
            Config,
            "noise must be ≥ 0"
        );
        ensure!(
            self.amplitude > 0.0 && self.amplitude.is_finite(),
            Config,
            "amplitude must be > 0"
        );
        Ok(())
    }

    /// The generator dictionary of every regime.
    pub fn generators(&self) -> Result<Vec<Dictionary>> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.regimes)
            .map(|_| random_dictionary(self.m, self.atoms, &mut rng))
            .collect()
    }

    /// `n` samples of one generator, driven by `seed`.
    pub fn sample(&self, d: &Dictionary, n: usize, seed: u64) -> Result<Array2<f64>> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, self.noise).expect("checked noise");
        let mut out = Array2::zeros((self.m, n));
        for i in 0..n {
            let mut z = Array1::<f64>::zeros(self.atoms);
            for j in sample(&mut rng, self.atoms, self.sparsity) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                z[j] = sign * self.amplitude * rng.random_range(0.5..1.5);
            }
            let mut x = d.atoms().dot(&z);
            if self.noise > 0.0 {
                x.mapv_inplace(|v| v + normal.sample(&mut rng));
            }
            out.column_mut(i).assign(&x);
        }
        Ok(out)
    }
}

/// The ordered stream of all regimes and their generators.
pub fn gen_regimes(spec: &RegimeSpec) -> Result<(Array2<f64>, Vec<Dictionary>)> {
    let dicts = spec.generators()?;
    let mut stream = Array2::zeros((spec.m, spec.regimes * spec.per_regime));
    for (r, d) in dicts.iter().enumerate() {
        let block = spec.sample(d, spec.per_regime, spec.seed.wrapping_add(1 + r as u64))?;
        stream
            .slice_mut(ndarray::s![.., r * spec.per_regime..(r + 1) * spec.per_regime])
            .assign(&block);
    }
    Ok((stream, dicts))
}
