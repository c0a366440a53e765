//! Quantile regression losses, fraction grids and distortion weights.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, precondition, Error, Result};

/// Huber loss `L_kappa(x)`: quadratic inside `|x| < kappa`, linear outside.
pub fn huber(x: f64, kappa: f64) -> f64 {
    if x.abs() < kappa {
        0.5 * x * x
    } else {
        kappa * (x.abs() - 0.5 * kappa)
    }
}

fn huber_grad(x: f64, kappa: f64) -> f64 {
    if x.abs() < kappa {
        x
    } else {
        kappa * x.signum()
    }
}

/// Asymmetric quantile Huber loss `|tau - 1{delta < 0}| * L_kappa(delta) / kappa`.
pub fn quantile_huber(delta: f64, tau: f64, kappa: f64) -> f64 {
    let indicator = if delta < 0.0 { 1.0 } else { 0.0 };
    (tau - indicator).abs() * huber(delta, kappa) / kappa
}

/// Derivative of [`quantile_huber`] with respect to `delta`.
pub fn quantile_huber_grad(delta: f64, tau: f64, kappa: f64) -> f64 {
    let indicator = if delta < 0.0 { 1.0 } else { 0.0 };
    (tau - indicator).abs() * huber_grad(delta, kappa) / kappa
}

/// Quantile fractions `tau_0 = 0 < ... < tau_K = 1` with their midpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileGrid {
    pub fractions: Vec<f64>,
    pub midpoints: Vec<f64>,
}

impl QuantileGrid {
    /// Evenly spaced fractions `tau_k = k / K`.
    pub fn even(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("number of quantiles must be >= 1"));
        }
        let fractions: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        Ok(Self::from_fractions(fractions))
    }

    /// Interior fractions drawn uniformly and sorted.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(invalid("number of quantiles must be >= 1"));
        }
        let mut fractions: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>()).collect();
        fractions.push(0.0);
        fractions.push(1.0);
        fractions.sort_by(f64::total_cmp);
        Ok(Self::from_fractions(fractions))
    }

    fn from_fractions(fractions: Vec<f64>) -> Self {
        let midpoints = fractions.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Self { fractions, midpoints }
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }

    /// Widths `tau_{i+1} - tau_i`.
    pub fn widths(&self) -> Vec<f64> {
        self.fractions.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FractionMode {
    #[default]
    Even,
    Random,
}

impl FractionMode {
    pub fn grid<R: Rng + ?Sized>(self, k: usize, rng: &mut R) -> Result<QuantileGrid> {
        match self {
            FractionMode::Even => QuantileGrid::even(k),
            FractionMode::Random => QuantileGrid::random(k, rng),
        }
    }
}

/// Quantile values together with the fractions they were evaluated at.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileSet {
    pub grid: QuantileGrid,
    pub values: Vec<f64>,
}

impl QuantileSet {
    pub fn new(grid: QuantileGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Sorts the values ascending (monotone rearrangement).
    pub fn sorted(mut self) -> Self {
        self.values.sort_by(f64::total_cmp);
        self
    }
}

/// Ascending order of `row` as a permutation: `row[perm[i]]` is the i-th smallest.
pub fn ascending_permutation(row: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..row.len()).collect();
    perm.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
    perm
}

/// Wang distortion density `g'(tau) = pdf(Phi^-1(tau) + beta) / pdf(Phi^-1(tau))`.
pub fn wang_weights(beta: f64, midpoints: &[f64]) -> Result<Vec<f64>> {
    let normal = Normal::standard();
    midpoints
        .iter()
        .map(|&t| {
            if !(t > 0.0 && t < 1.0) {
                return Err(precondition(format!("wang weight needs a midpoint in (0, 1), got {t}")));
            }
            let x = normal.inverse_cdf(t);
            // pdf(x + beta) / pdf(x) simplified; avoids underflow in the tails.
            Ok((-beta * x - 0.5 * beta * beta).exp())
        })
        .collect()
}

/// Distorted expectation `sum_i (tau_{i+1} - tau_i) w_i Z_i`.
pub fn distorted_q(values: &[f64], widths: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != widths.len() || values.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            got: widths.len().min(weights.len()),
        });
    }
    Ok(values.iter().zip(widths).zip(weights).map(|((z, d), w)| d * w * z).sum())
}

/// How the double sum over online and target fractions is weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticLossForm {
    /// Sum over online fractions of the mean over target samples of
    /// `rho_{tau_k}(delta_kk')`.
    #[default]
    QuantileHuber,
    /// Literal `(tau_k - tau'_k')` weighting of each pair. Signed, so not a
    /// proper regression loss; kept for comparison only.
    PairDifference,
}

/// Quantile TD loss for a minibatch.
///
/// `online` is `B x K` (evaluated at `taus`), `target` is `B x K'` (already
/// `r + gamma Z'`, evaluated at `taus_prime`). Rows are sorted ascending
/// before pairing with fractions. Returns the batch-mean loss and its
/// gradient with respect to `online` in the caller's (unsorted) layout.
pub fn quantile_td_loss(
    online: &Array2<f64>,
    taus: &[f64],
    target: &Array2<f64>,
    taus_prime: &[f64],
    kappa: f64,
    form: CriticLossForm,
) -> Result<(f64, Array2<f64>)> {
    let (b, k) = online.dim();
    let kp = target.ncols();
    if b == 0 {
        return Err(precondition("empty minibatch"));
    }
    if target.nrows() != b || taus.len() != k || taus_prime.len() != kp {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: target.nrows(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((b, k));
    let mut zt = vec![0.0; kp];
    for r in 0..b {
        let row: Vec<f64> = online.row(r).to_vec();
        let perm = ascending_permutation(&row);
        zt.copy_from_slice(target.row(r).as_slice().expect("contiguous"));
        zt.sort_by(f64::total_cmp);
        for (i, &src) in perm.iter().enumerate() {
            let z = row[src];
            let mut g = 0.0;
            for (j, &y) in zt.iter().enumerate() {
                let delta = y - z;
                let pair = match form {
                    CriticLossForm::QuantileHuber => 1.0 / kp as f64,
                    CriticLossForm::PairDifference => taus[i] - taus_prime[j],
                };
                loss += pair * quantile_huber(delta, taus[i], kappa);
                g -= pair * quantile_huber_grad(delta, taus[i], kappa);
            }
            grad[[r, src]] = g / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}
