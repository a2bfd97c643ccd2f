//! Zero-noise extrapolation: run a circuit at noise scales λ = 1, 3, …,
//! 1 + 2n by gate folding, fit p̂(λ) and read the fit at λ = 0.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{sample_p_hat, SamplingPolicy};
use crate::materialdb::DistanceBackend;
use crate::noisemodel::NoiseModel;
use crate::qdistance::{distance_circuit, distance_from_probability, Algorithm, DataVector, DistanceEstimate};
use crate::qsim::run_circuit;
use crate::transpile::{decompose, fold, BasisCircuit};

/// Gradient norm at which the exponential fit is considered converged.
pub const EXP_FIT_GRADIENT_TOL: f64 = 1e-10;
pub const EXP_FIT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySeries {
    lambdas: Vec<f64>,
    p_hats: Vec<f64>,
    /// `None` when the values are exact probabilities.
    n_m: Option<u64>,
}

impl ProbabilitySeries {
    pub fn new(lambdas: Vec<f64>, p_hats: Vec<f64>, n_m: Option<u64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != p_hats.len() {
            return Err(Error::contract(
                "series needs equal, non-zero numbers of λ and p̂ values",
            ));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("λ values must increase strictly"));
        }
        if p_hats.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::contract("probabilities must lie in [0, 1]"));
        }
        if n_m == Some(0) {
            return Err(Error::contract("n_m must be at least 1"));
        }
        Ok(ProbabilitySeries { lambdas, p_hats, n_m })
    }

    /// λ = 1, 3, …, 1 + 2(len − 1).
    pub fn from_folds(p_hats: Vec<f64>, n_m: Option<u64>) -> Result<Self> {
        let lambdas = (0..p_hats.len()).map(|i| (1 + 2 * i) as f64).collect();
        Self::new(lambdas, p_hats, n_m)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn p_hats(&self) -> &[f64] {
        &self.p_hats
    }

    pub fn n_m(&self) -> Option<u64> {
        self.n_m
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Keeps the first `k` points.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        let k = k.min(self.len());
        Self::new(self.lambdas[..k].to_vec(), self.p_hats[..k].to_vec(), self.n_m)
    }
}

/// Exact probabilities of reading |0⟩ on qubit 0 for 0..=n folds.
pub fn exact_series(circuit: &BasisCircuit, n: usize, noise: Option<&NoiseModel>) -> Result<Vec<f64>> {
    (0..=n)
        .map(|i| run_circuit(&fold(circuit, i), noise).map(|(_, p)| p))
        .collect()
}

/// Samples each exact probability with `policy`, in fold order.
pub fn sample_series<R: Rng + ?Sized>(
    exact: &[f64],
    policy: &SamplingPolicy,
    rng: &mut R,
) -> Result<ProbabilitySeries> {
    let p_hats = exact
        .iter()
        .map(|&p| sample_p_hat(p, policy, rng))
        .collect::<Result<Vec<_>>>()?;
    ProbabilitySeries::from_folds(p_hats, Some(policy.n_m))
}

/// Folds the circuit 0..=n times, runs each under `noise` and samples p̂.
pub fn collect_series<R: Rng + ?Sized>(
    circuit: &BasisCircuit,
    n: usize,
    policy: &SamplingPolicy,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<ProbabilitySeries> {
    sample_series(&exact_series(circuit, n, noise)?, policy, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtrapolationModel {
    Linear,
    Quadratic,
    Exponential,
    Richardson,
}

impl ExtrapolationModel {
    pub const ALL: [ExtrapolationModel; 4] = [
        ExtrapolationModel::Linear,
        ExtrapolationModel::Quadratic,
        ExtrapolationModel::Exponential,
        ExtrapolationModel::Richardson,
    ];

    /// Coefficients the model needs for a series of `points` values.
    pub fn coefficient_count(&self, points: usize) -> usize {
        match self {
            ExtrapolationModel::Linear => 2,
            ExtrapolationModel::Quadratic | ExtrapolationModel::Exponential => 3,
            ExtrapolationModel::Richardson => points.max(1),
        }
    }
}

impl fmt::Display for ExtrapolationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtrapolationModel::Linear => "linear",
            ExtrapolationModel::Quadratic => "quadratic",
            ExtrapolationModel::Exponential => "exponential",
            ExtrapolationModel::Richardson => "richardson",
        })
    }
}

impl std::str::FromStr for ExtrapolationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ExtrapolationModel::Linear),
            "quadratic" => Ok(ExtrapolationModel::Quadratic),
            "exponential" | "exp" => Ok(ExtrapolationModel::Exponential),
            "richardson" => Ok(ExtrapolationModel::Richardson),
            other => Err(Error::Config(format!("unknown extrapolation model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationFit {
    pub model: ExtrapolationModel,
    /// Polynomial models: c₀ + c₁λ + c₂λ² + …; exponential: c₀ + c₁e^(−c₂λ).
    pub coefficients: Vec<f64>,
    pub p_zero: f64,
    /// Too few points for the model; a lower-degree polynomial was fitted.
    pub degraded: bool,
    /// The exponential fit diverged and the linear fit was used instead.
    pub fallback: bool,
    pub iterations: usize,
}

impl ExtrapolationFit {
    /// Evaluates the fitted curve.
    pub fn evaluate(&self, lambda: f64) -> f64 {
        if self.is_exponential_form() {
            let c = &self.coefficients;
            c[0] + c[1] * (-c[2] * lambda).exp()
        } else {
            self.coefficients.iter().rev().fold(0.0, |acc, c| acc * lambda + c)
        }
    }

    fn is_exponential_form(&self) -> bool {
        self.model == ExtrapolationModel::Exponential && !self.degraded && !self.fallback
    }
}

/// Least-squares polynomial of `degree` in λ. Columns are built on λ/λ_max
/// for conditioning and the coefficients mapped back.
pub fn polynomial_fit(lambdas: &[f64], values: &[f64], degree: usize) -> Result<Vec<f64>> {
    let k = degree + 1;
    if lambdas.len() < k {
        return Err(Error::contract("fewer points than coefficients"));
    }
    let scale = lambdas
        .iter()
        .fold(0.0f64, |m, l| m.max(l.abs()))
        .max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(lambdas.len(), k, |i, j| (lambdas[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(values);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::DegenerateFit(format!(
            "design matrix is singular (condition {:.3e})",
            smax / smin
        )));
    }
    let c = svd.solve(&b, 0.0).map_err(|e| Error::DegenerateFit(e.to_string()))?;
    Ok(c.iter().enumerate().map(|(j, cj)| cj / scale.powi(j as i32)).collect())
}

struct ExpFit {
    c: [f64; 3],
    iterations: usize,
}

fn exp_residuals(l: &[f64], p: &[f64], c: &[f64; 3]) -> Vec<f64> {
    l.iter()
        .zip(p)
        .map(|(x, y)| c[0] + c[1] * (-c[2] * x).exp() - y)
        .collect()
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// c₀ and c₁ by linear least squares for a fixed rate c₂.
fn exp_linear_part(l: &[f64], p: &[f64], c2: f64) -> Option<(f64, f64)> {
    let n = l.len() as f64;
    let e: Vec<f64> = l.iter().map(|x| (-c2 * x).exp()).collect();
    let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|x| x * x).sum::<f64>());
    let (sp, sep) = (p.iter().sum::<f64>(), e.iter().zip(p).map(|(a, b)| a * b).sum::<f64>());
    let det = n * see - se * se;
    if det.abs() <= 1e-14 * (n * see).abs() {
        return None;
    }
    Some(((see * sp - se * sep) / det, (n * sep - se * sp) / det))
}

/// Rate from the ratio of successive differences Δᵢ₊₁/Δᵢ = e^(−c₂ h).
fn initial_rate(l: &[f64], p: &[f64]) -> f64 {
    let ratios: Vec<f64> = (0..l.len().saturating_sub(2))
        .filter_map(|i| {
            let d0 = p[i + 1] - p[i];
            let d1 = p[i + 2] - p[i + 1];
            let r = d1 / d0;
            (d0 != 0.0 && r.is_finite() && r > 0.0).then(|| -r.ln() / (l[i + 2] - l[i + 1]))
        })
        .collect();
    if ratios.is_empty() {
        // featureless data: a slow decay over the sampled range
        return 0.1 / (l[l.len() - 1] - l[0]).max(1.0);
    }
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

/// Levenberg-Marquardt on the three exponential parameters.
fn exponential_fit(l: &[f64], p: &[f64]) -> Option<ExpFit> {
    let mut c2 = initial_rate(l, p);
    if c2.abs() < 1e-8 {
        c2 = 1e-8_f64.copysign(c2);
    }
    let (c0, c1) = exp_linear_part(l, p, c2)?;
    let mut c = [c0, c1, c2];
    let mut r = exp_residuals(l, p, &c);
    let mut cost = sum_sq(&r);
    let mut mu = 1e-3;
    let mut iterations = 0;
    while iterations < EXP_FIT_MAX_ITER {
        iterations += 1;
        let j = DMatrix::from_fn(l.len(), 3, |i, k| {
            let e = (-c[2] * l[i]).exp();
            match k {
                0 => 1.0,
                1 => e,
                _ => -c[1] * l[i] * e,
            }
        });
        let rv = DVector::from_column_slice(&r);
        let g = j.transpose() * &rv;
        if g.norm() < EXP_FIT_GRADIENT_TOL {
            break;
        }
        let jtj = j.transpose() * &j;
        let mut stepped = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..3 {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let trial = [c[0] + step[0], c[1] + step[1], c[2] + step[2]];
            let tr = exp_residuals(l, p, &trial);
            let tc = sum_sq(&tr);
            if tc.is_finite() && tc <= cost {
                c = trial;
                r = tr;
                cost = tc;
                mu = (mu / 3.0).max(1e-12);
                stepped = true;
                break;
            }
            mu *= 10.0;
        }
        if !stepped {
            // no descent direction left at machine precision
            break;
        }
    }
    c.iter().all(|x| x.is_finite()).then_some(ExpFit { c, iterations })
}

/// Fits `model` to the series. With fewer points than coefficients the fit
/// degrades to the interpolating polynomial and is flagged.
pub fn fit_extrapolation(series: &ProbabilitySeries, model: ExtrapolationModel) -> Result<ExtrapolationFit> {
    fit_points(series.lambdas(), series.p_hats(), model)
}

pub fn fit_points(lambdas: &[f64], values: &[f64], model: ExtrapolationModel) -> Result<ExtrapolationFit> {
    if lambdas.is_empty() || lambdas.len() != values.len() {
        return Err(Error::contract("fit needs equal, non-zero numbers of λ and values"));
    }
    let points = lambdas.len();
    let needed = model.coefficient_count(points);
    let poly = |degree: usize, degraded: bool, fallback: bool| -> Result<ExtrapolationFit> {
        let coefficients = polynomial_fit(lambdas, values, degree)?;
        Ok(ExtrapolationFit {
            model,
            p_zero: coefficients[0],
            coefficients,
            degraded,
            fallback,
            iterations: 0,
        })
    };
    if points < needed {
        return poly(points - 1, true, false);
    }
    let fit = match model {
        ExtrapolationModel::Linear => poly(1, false, false)?,
        ExtrapolationModel::Quadratic => poly(2, false, false)?,
        ExtrapolationModel::Richardson => poly(points - 1, false, false)?,
        ExtrapolationModel::Exponential => match exponential_fit(lambdas, values) {
            Some(ExpFit { c, iterations }) if (c[0] + c[1]).is_finite() && (c[0] + c[1]).abs() < 1e6 => {
                ExtrapolationFit {
                    model,
                    coefficients: c.to_vec(),
                    p_zero: c[0] + c[1],
                    degraded: false,
                    fallback: false,
                    iterations,
                }
            }
            _ => poly(1, false, true)?,
        },
    };
    if !fit.p_zero.is_finite() {
        return Err(Error::DegenerateFit("extrapolated value is not finite".into()));
    }
    Ok(fit)
}

/// p_zero clamped into the algorithm's valid range, converted to a distance
/// and clamped at zero.
pub fn distance_from_extrapolation(
    algorithm: Algorithm,
    p_zero: f64,
    v: &DataVector,
    w: &DataVector,
) -> (f64, f64, bool) {
    let (lo, hi) = algorithm.valid_probability_range();
    let p = p_zero.clamp(lo, hi);
    let d = distance_from_probability(algorithm, p, v, w);
    let clamped = p != p_zero || d < 0.0;
    (d.max(0.0), p, clamped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigatedDistance {
    pub estimate: DistanceEstimate,
    pub fit: ExtrapolationFit,
    /// The unmitigated estimate from the λ = 1 point of the same series.
    pub raw: DistanceEstimate,
}

/// Transpiled distance circuit for a pair.
pub fn distance_basis_circuit(algorithm: Algorithm, v: &DataVector, w: &DataVector) -> Result<BasisCircuit> {
    decompose(&distance_circuit(algorithm, v, w)?)
}

/// Unmitigated estimate from a sampled λ = 1 probability. No clamping.
pub fn raw_estimate(algorithm: Algorithm, p_hat: f64, n_m: u64, v: &DataVector, w: &DataVector) -> DistanceEstimate {
    DistanceEstimate {
        d_hat: distance_from_probability(algorithm, p_hat, v, w),
        p_hat,
        n_m,
        algorithm,
        lambda: 1.0,
        clamped: false,
    }
}

/// Mitigated estimate from an already sampled series.
pub fn mitigate_series(
    algorithm: Algorithm,
    model: ExtrapolationModel,
    series: &ProbabilitySeries,
    v: &DataVector,
    w: &DataVector,
) -> Result<MitigatedDistance> {
    let fit = fit_extrapolation(series, model)?;
    let (d_hat, p, clamped) = distance_from_extrapolation(algorithm, fit.p_zero, v, w);
    let n_m = series.n_m().unwrap_or(0);
    Ok(MitigatedDistance {
        estimate: DistanceEstimate {
            d_hat,
            p_hat: p,
            n_m,
            algorithm,
            lambda: 0.0,
            clamped,
        },
        raw: raw_estimate(algorithm, series.p_hats()[0], n_m, v, w),
        fit,
    })
}

/// Builds the pair's circuit, collects the folded series, fits and converts.
#[allow(clippy::too_many_arguments)]
pub fn mitigated_distance<R: Rng + ?Sized>(
    v: &DataVector,
    w: &DataVector,
    algorithm: Algorithm,
    model: ExtrapolationModel,
    n: usize,
    policy: &SamplingPolicy,
    noise: Option<&NoiseModel>,
    rng: &mut R,
) -> Result<MitigatedDistance> {
    let circuit = distance_basis_circuit(algorithm, v, w)?;
    let series = collect_series(&circuit, n, policy, noise, rng)?;
    mitigate_series(algorithm, model, &series, v, w)
}

/// √(Σ(d̂ − d)² / (count · d_max²))
pub fn nrmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::contract("NRMSE needs equal, non-zero numbers of values"));
    }
    let d_max = truths.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if d_max == 0.0 {
        return Err(Error::DegenerateInput("all true distances are zero".into()));
    }
    let sq: f64 = estimates.iter().zip(truths).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / (estimates.len() as f64 * d_max * d_max)).sqrt())
}

/// How a quantum backend turns circuit runs into a distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mitigation {
    /// Single run at λ = 1.
    None,
    /// Folded series up to `folds` and the given model.
    Zne { model: ExtrapolationModel, folds: usize },
}

/// Distance backend that simulates the quantum circuit for every call.
pub struct QuantumBackend<R> {
    pub algorithm: Algorithm,
    pub mitigation: Mitigation,
    pub policy: SamplingPolicy,
    noise: Option<NoiseModel>,
    rng: R,
}

impl<R: Rng> QuantumBackend<R> {
    pub fn new(
        algorithm: Algorithm,
        mitigation: Mitigation,
        policy: SamplingPolicy,
        noise: Option<NoiseModel>,
        rng: R,
    ) -> Self {
        QuantumBackend {
            algorithm,
            mitigation,
            policy,
            noise,
            rng,
        }
    }

    pub fn into_rng(self) -> R {
        self.rng
    }
}

impl<R: Rng> DistanceBackend for QuantumBackend<R> {
    fn distance(&mut self, query: &DataVector, point: &DataVector) -> Result<f64> {
        // A zero vector cannot be amplitude encoded; its distance to the
        // other vector is that vector's squared norm.
        if query.norm_sqr() == 0.0 {
            return Ok(point.norm_sqr());
        }
        if point.norm_sqr() == 0.0 {
            return Ok(query.norm_sqr());
        }
        let circuit = distance_basis_circuit(self.algorithm, query, point)?;
        let folds = match self.mitigation {
            Mitigation::None => 0,
            Mitigation::Zne { folds, .. } => folds,
        };
        let series = collect_series(&circuit, folds, &self.policy, self.noise.as_ref(), &mut self.rng)?;
        Ok(match self.mitigation {
            Mitigation::None => raw_estimate(self.algorithm, series.p_hats()[0], self.policy.n_m, query, point).d_hat,
            Mitigation::Zne { model, .. } => {
                mitigate_series(self.algorithm, model, &series, query, point)?
                    .estimate
                    .d_hat
            }
        })
    }
}
