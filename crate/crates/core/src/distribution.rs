//! Random initial conditions and their discretization into weighted ensembles.
//!
//! Gaussians are discretized by tensor-product Gauss–Hermite quadrature; the
//! Monte Carlo path draws from a ChaCha8 stream (`rand_chacha::ChaCha8Rng`
//! seeded with `seed_from_u64`) and maps standard normals from
//! `rand_distr::StandardNormal` through the symmetric square root of the
//! covariance. Both are pure functions of their arguments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Largest tensor-product quadrature grid we are willing to build.
pub const MAX_QUADRATURE_NODES: usize = 1_000_000;
/// Largest per-dimension Gauss–Hermite order.
pub const MAX_QUADRATURE_ORDER: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Dirac { point: Vec<f64> },
    Gaussian { mean: Vec<f64>, covariance: DMatrix<f64> },
    Ensemble { points: Vec<Vec<f64>>, weights: Vec<f64> },
}

/// How an ensemble was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Point,
    Quadrature { order: usize },
    Samples { n: usize, seed: u64 },
    Supplied,
}

/// Rule for turning a distribution into an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    Quadrature { order: usize },
    MonteCarlo { samples: usize },
}

impl Default for EnsembleRule {
    fn default() -> Self {
        EnsembleRule::Quadrature { order: 5 }
    }
}

/// Finitely many states with positive probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    provenance: Provenance,
}

impl WeightedEnsemble {
    /// Builds an ensemble, dropping zero-weight points and renormalizing.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(contract("ensemble needs matching, non-empty points and weights"));
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(contract("ensemble points differ in dimension"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(contract("ensemble weights must be finite and nonnegative"));
        }
        let (points, weights): (Vec<_>, Vec<_>) =
            points.into_iter().zip(weights).filter(|(_, w)| *w > 0.0).unzip();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(contract("ensemble weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights, provenance })
    }

    /// The one-point ensemble of a deterministic initial state.
    pub fn single(point: Vec<f64>) -> Self {
        Self { points: vec![point], weights: vec![1.0], provenance: Provenance::Point }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Probability-weighted mean point.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    /// Probability-weighted covariance about the ensemble mean.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = DVector::from_vec(self.mean());
        let mut cov = DMatrix::zeros(self.dim(), self.dim());
        for (p, w) in self.points.iter().zip(&self.weights) {
            let d = DVector::from_column_slice(p) - &mean;
            cov += *w * &d * d.transpose();
        }
        cov
    }
}

impl InitialDistribution {
    pub fn dirac(point: Vec<f64>) -> Self {
        InitialDistribution::Dirac { point }
    }

    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let dist = InitialDistribution::Gaussian { mean, covariance };
        dist.validate()?;
        Ok(dist)
    }

    /// Independent coordinates with the given variances.
    pub fn independent_gaussian(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::gaussian(mean, DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn ensemble(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dist = InitialDistribution::Ensemble { points, weights };
        dist.validate()?;
        Ok(dist)
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialDistribution::Dirac { point } => point.len(),
            InitialDistribution::Gaussian { mean, .. } => mean.len(),
            InitialDistribution::Ensemble { points, .. } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialDistribution::Dirac { point } => point.clone(),
            InitialDistribution::Gaussian { mean, .. } => mean.clone(),
            InitialDistribution::Ensemble { points, weights } => {
                let mut m = vec![0.0; self.dim()];
                for (p, w) in points.iter().zip(weights) {
                    for (mi, pi) in m.iter_mut().zip(p) {
                        *mi += w * pi;
                    }
                }
                m
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialDistribution::Dirac { point } => {
                if point.is_empty() {
                    return Err(contract("Dirac point is empty"));
                }
            }
            InitialDistribution::Gaussian { mean, covariance } => {
                let n = mean.len();
                if n == 0 || covariance.shape() != (n, n) {
                    return Err(contract("covariance must be square and match the mean"));
                }
                let asym = (covariance - covariance.transpose()).abs().max();
                if asym > 1e-12 * covariance.abs().max().max(1.0) {
                    return Err(contract("covariance is not symmetric"));
                }
                symmetric_sqrt(covariance)?;
            }
            InitialDistribution::Ensemble { points, weights } => {
                if points.is_empty() || points.len() != weights.len() {
                    return Err(contract("ensemble needs matching, non-empty points and weights"));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(contract("ensemble weights must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(contract(format!("ensemble weights sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Discretizes with the given rule; `seed` is used only by Monte Carlo.
    pub fn discretize(&self, rule: EnsembleRule, seed: u64) -> Result<WeightedEnsemble> {
        match rule {
            EnsembleRule::Quadrature { order } => quadrature_nodes(self, order),
            EnsembleRule::MonteCarlo { samples } => sample(self, samples, seed),
        }
    }
}

/// Symmetric PSD square root via eigendecomposition; tiny negative
/// eigenvalues from rounding are clamped to zero.
pub fn symmetric_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = cov.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-12 * scale || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Probabilists' Gauss–Hermite rule for N(0, 1): nodes and weights summing to one.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    // Golub–Welsch on the Jacobi matrix of He_n, then Newton polishing on the
    // three-term recurrence.
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for i in 1..order {
        let b = (i as f64).sqrt();
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    // He_n(x) and He_{n-1}(x).
    let hermite = |x: f64| -> (f64, f64) {
        let (mut prev, mut cur) = (1.0, x);
        if order == 1 {
            return (cur, prev);
        }
        for k in 1..order {
            let next = x * cur - k as f64 * prev;
            prev = cur;
            cur = next;
        }
        (cur, prev)
    };
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, pm1) = hermite(*x);
            let dp = order as f64 * pm1;
            if dp != 0.0 {
                *x -= p / dp;
            }
        }
    }
    // Symmetrize so that odd moments vanish exactly.
    for i in 0..order / 2 {
        let a = 0.5 * (nodes[order - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[order - 1 - i] = a;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }

    // w_i ∝ 1 / He_{n-1}(x_i)^2
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (_, pm1) = hermite(x);
            1.0 / (pm1 * pm1)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Tensor-product Gauss–Hermite nodes for Gaussians; Dirac and supplied
/// ensembles pass through unchanged.
pub fn quadrature_nodes(dist: &InitialDistribution, order: usize) -> Result<WeightedEnsemble> {
    dist.validate()?;
    match dist {
        InitialDistribution::Dirac { point } => Ok(WeightedEnsemble::single(point.clone())),
        InitialDistribution::Ensemble { points, weights } => {
            WeightedEnsemble::new(points.clone(), weights.clone(), Provenance::Supplied)
        }
        InitialDistribution::Gaussian { mean, covariance } => {
            if order == 0 || order > MAX_QUADRATURE_ORDER {
                return Err(contract(format!(
                    "quadrature order must be in 1..={MAX_QUADRATURE_ORDER}, got {order}"
                )));
            }
            let dim = mean.len();
            let total = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(order));
            let total = match total {
                Some(t) if t <= MAX_QUADRATURE_NODES => t,
                _ => {
                    return Err(Error::BudgetExceeded {
                        nodes: total.unwrap_or(usize::MAX),
                        limit: MAX_QUADRATURE_NODES,
                    })
                }
            };
            let root = symmetric_sqrt(covariance)?;
            let (z, w) = gauss_hermite(order);
            let mut points = Vec::with_capacity(total);
            let mut weights = Vec::with_capacity(total);
            let mut index = vec![0usize; dim];
            for _ in 0..total {
                let zv = DVector::from_iterator(dim, index.iter().map(|&i| z[i]));
                let x = &root * zv;
                points.push(mean.iter().zip(x.iter()).map(|(m, d)| m + d).collect());
                weights.push(index.iter().map(|&i| w[i]).product());
                // Odometer increment, last coordinate fastest.
                for slot in index.iter_mut().rev() {
                    *slot += 1;
                    if *slot < order {
                        break;
                    }
                    *slot = 0;
                }
            }
            WeightedEnsemble::new(points, weights, Provenance::Quadrature { order })
        }
    }
}

/// `n` i.i.d. draws with uniform weights, deterministic in `seed`.
pub fn sample(dist: &InitialDistribution, n: usize, seed: u64) -> Result<WeightedEnsemble> {
    dist.validate()?;
    if n == 0 {
        return Err(contract("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = match dist {
        InitialDistribution::Dirac { point } => vec![point.clone(); n],
        InitialDistribution::Gaussian { mean, covariance } => {
            let root = symmetric_sqrt(covariance)?;
            let dim = mean.len();
            (0..n)
                .map(|_| {
                    let z = DVector::from_iterator(
                        dim,
                        (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
                    );
                    let x = &root * z;
                    mean.iter().zip(x.iter()).map(|(m, d)| m + d).collect()
                })
                .collect()
        }
        InitialDistribution::Ensemble { points, weights } => {
            let mut cumulative = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in weights {
                acc += w;
                cumulative.push(acc);
            }
            (0..n)
                .map(|_| {
                    let r: f64 = rng.random::<f64>() * acc;
                    let i = cumulative.partition_point(|c| *c <= r).min(points.len() - 1);
                    points[i].clone()
                })
                .collect()
        }
    };
    WeightedEnsemble::new(points, vec![1.0; n], Provenance::Samples { n, seed })
}

/// `Σ wᵢ vᵢ`, summed in index order.
pub fn expectation(values: &[f64], ensemble: &WeightedEnsemble) -> Result<f64> {
    if values.len() != ensemble.len() {
        return Err(contract(format!(
            "{} values for an ensemble of {}",
            values.len(),
            ensemble.len()
        )));
    }
    let mut acc = 0.0;
    for (v, w) in values.iter().zip(ensemble.weights()) {
        acc += w * v;
    }
    Ok(acc)
}
