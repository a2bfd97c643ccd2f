//! Distance circuits: state preparation, the Swap-based and H-based
//! estimators, probability ↔ distance conversion and their sampling error.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Circuit, GateKind};

/// A real data vector in scaled units.
#[derive(Debug, Clone, PartialEq)]
pub struct DataVector(Vec<f64>);

impl DataVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::contract("data vector needs at least one component"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::contract("data vector has non-finite components"));
        }
        Ok(DataVector(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn dot(&self, other: &DataVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl From<DataVector> for Vec<f64> {
    fn from(v: DataVector) -> Self {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    SwapBased,
    HBased,
}

impl Algorithm {
    /// Range the measured probability must lie in for a non-negative distance.
    pub fn valid_probability_range(&self) -> (f64, f64) {
        match self {
            Algorithm::SwapBased => (0.5, 1.0),
            Algorithm::HBased => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::SwapBased => "swap",
            Algorithm::HBased => "h",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swap" | "swap-based" | "swapbased" => Ok(Algorithm::SwapBased),
            "h" | "h-based" | "hbased" | "hadamard" => Ok(Algorithm::HBased),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// One distance evaluation: the estimate, the probability it came from and
/// the noise scale it was measured at (0 for extrapolated values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub d_hat: f64,
    pub p_hat: f64,
    pub n_m: u64,
    pub algorithm: Algorithm,
    pub lambda: f64,
    /// Set when the probability or the distance had to be clamped.
    pub clamped: bool,
}

/// Squared Euclidean distance |V − V'|².
pub fn squared_distance(v: &DataVector, w: &DataVector) -> f64 {
    v.0.iter().zip(&w.0).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// ⌈log₂ D⌉
pub fn register_qubits(dim: usize) -> usize {
    dim.next_power_of_two().trailing_zeros() as usize
}

fn check_pair(v: &DataVector, w: &DataVector) -> Result<()> {
    if v.dim() != w.dim() {
        return Err(Error::contract(format!(
            "vector dimensions differ: {} vs {}",
            v.dim(),
            w.dim()
        )));
    }
    if v.norm_sqr() == 0.0 || w.norm_sqr() == 0.0 {
        return Err(Error::DegenerateInput(
            "zero-norm vector cannot be amplitude encoded".into(),
        ));
    }
    Ok(())
}

/// Rotation tree preparing a real amplitude vector (length 2ⁿ, any norm) on
/// qubits 0..n. Level `l` is a uniformly controlled RY on qubit `l`
/// controlled by qubits 0..l; signs are carried by the last level.
pub fn amplitude_preparation(amplitudes: &[f64]) -> Result<Circuit> {
    let len = amplitudes.len();
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::contract("amplitude vector length must be 2^n with n ≥ 1"));
    }
    let n = len.trailing_zeros() as usize;
    let mut circuit = Circuit::new(n);
    for level in 0..n {
        let block = len >> level;
        let half = block / 2;
        let angles: Vec<f64> = (0..1usize << level)
            .map(|prefix| {
                let chunk = &amplitudes[prefix * block..(prefix + 1) * block];
                if level == n - 1 {
                    2.0 * chunk[1].atan2(chunk[0])
                } else {
                    let n0 = chunk[..half].iter().map(|a| a * a).sum::<f64>().sqrt();
                    let n1 = chunk[half..].iter().map(|a| a * a).sum::<f64>().sqrt();
                    2.0 * n1.atan2(n0)
                }
            })
            .collect();
        let qubits: Vec<usize> = (0..=level).collect();
        circuit.push(GateKind::UcRy(angles), &qubits)?;
    }
    Ok(circuit)
}

fn padded_unit(v: &DataVector, len: usize) -> Vec<f64> {
    let norm = v.norm();
    let mut out: Vec<f64> = v.0.iter().map(|x| x / norm).collect();
    out.resize(len, 0.0);
    out
}

/// Target amplitudes of |ψ⟩ = (|0⟩|V̂⟩ + |1⟩|V̂'⟩)/√2 with zero padding.
pub fn psi_amplitudes(v: &DataVector, w: &DataVector) -> Result<Vec<f64>> {
    check_pair(v, w)?;
    let len = 1usize << register_qubits(v.dim());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps: Vec<f64> = padded_unit(v, len).into_iter().map(|a| a * s).collect();
    amps.extend(padded_unit(w, len).into_iter().map(|a| a * s));
    Ok(amps)
}

/// Prepares |ψ⟩ on 1 + ⌈log₂ D⌉ qubits; qubit 0 is the index qubit.
pub fn prepare_psi(v: &DataVector, w: &DataVector) -> Result<Circuit> {
    amplitude_preparation(&psi_amplitudes(v, w)?)
}

/// Prepares |φ⟩ = (|V||0⟩ − |V'||1⟩)/√Z on one qubit.
pub fn prepare_phi(v: &DataVector, w: &DataVector) -> Result<Circuit> {
    let z = v.norm_sqr() + w.norm_sqr();
    if z == 0.0 {
        return Err(Error::DegenerateInput("Z = |V|² + |V'|² is zero".into()));
    }
    if v.norm_sqr() == 0.0 || w.norm_sqr() == 0.0 {
        return Err(Error::DegenerateInput("zero-norm vector".into()));
    }
    amplitude_preparation(&[v.norm(), -w.norm()])
}

/// Swap test between |φ⟩ and the index qubit of |ψ⟩.
///
/// Layout: qubit 0 ancilla, qubit 1 holds φ, qubits 2.. hold ψ.
pub fn swap_test_circuit(v: &DataVector, w: &DataVector) -> Result<Circuit> {
    let psi = prepare_psi(v, w)?;
    let phi = prepare_phi(v, w)?;
    let mut c = Circuit::new(2 + psi.n_qubits);
    c.append_mapped(&phi, &[1])?;
    let map: Vec<usize> = (0..psi.n_qubits).map(|q| q + 2).collect();
    c.append_mapped(&psi, &map)?;
    c.push(GateKind::H, &[0])?;
    c.push(GateKind::Cswap, &[0, 1, 2])?;
    c.push(GateKind::H, &[0])?;
    Ok(c)
}

/// |ψ⟩ followed by a Hadamard on its index qubit.
pub fn h_test_circuit(v: &DataVector, w: &DataVector) -> Result<Circuit> {
    let mut c = prepare_psi(v, w)?;
    c.push(GateKind::H, &[0])?;
    Ok(c)
}

pub fn distance_circuit(algorithm: Algorithm, v: &DataVector, w: &DataVector) -> Result<Circuit> {
    match algorithm {
        Algorithm::SwapBased => swap_test_circuit(v, w),
        Algorithm::HBased => h_test_circuit(v, w),
    }
}

/// d = 4Z(p_s − ½)
pub fn distance_from_ps(p_s: f64, z: f64) -> f64 {
    4.0 * z * (p_s - 0.5)
}

/// d = Z − 2|V||V'|(2p_h − 1)
pub fn distance_from_ph(p_h: f64, norm_v: f64, norm_w: f64) -> f64 {
    norm_v * norm_v + norm_w * norm_w - 2.0 * norm_v * norm_w * (2.0 * p_h - 1.0)
}

pub fn distance_from_probability(algorithm: Algorithm, p: f64, v: &DataVector, w: &DataVector) -> f64 {
    match algorithm {
        Algorithm::SwapBased => distance_from_ps(p, v.norm_sqr() + w.norm_sqr()),
        Algorithm::HBased => distance_from_ph(p, v.norm(), w.norm()),
    }
}

/// Noiseless measurement probability in closed form:
/// p_s = ½ + d/(4Z), p_h = ½ + ⟨V̂|V̂'⟩/2.
pub fn ideal_probability(algorithm: Algorithm, v: &DataVector, w: &DataVector) -> f64 {
    match algorithm {
        Algorithm::SwapBased => 0.5 + squared_distance(v, w) / (4.0 * (v.norm_sqr() + w.norm_sqr())),
        Algorithm::HBased => 0.5 + v.dot(w) / (2.0 * v.norm() * w.norm()),
    }
}

/// Root-mean-square error of the sampled distance for `n_m` shots.
pub fn theoretical_rmse(algorithm: Algorithm, v: &DataVector, w: &DataVector, n_m: u64) -> f64 {
    let p = ideal_probability(algorithm, v, w).clamp(0.0, 1.0);
    let scale = match algorithm {
        Algorithm::SwapBased => {
            let z = v.norm_sqr() + w.norm_sqr();
            16.0 * z * z
        }
        Algorithm::HBased => 16.0 * v.norm_sqr() * w.norm_sqr(),
    };
    (scale * p * (1.0 - p) / n_m as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::simulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DataVector {
        DataVector::new(x.to_vec()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> DataVector {
        dv(&(0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())
    }

    fn diagonal(c: &Circuit) -> Vec<f64> {
        let rho = simulate(c).unwrap();
        (0..rho.dim()).map(|i| rho.get(i, i).re).collect()
    }

    #[test]
    fn bell_state_from_orthogonal_units() {
        let c = prepare_psi(&dv(&[1.0, 0.0]), &dv(&[0.0, 1.0])).unwrap();
        let rho = simulate(&c).unwrap();
        assert!((rho.get(0, 0).re - 0.5).abs() < 1e-12);
        assert!((rho.get(3, 3).re - 0.5).abs() < 1e-12);
        assert!((rho.get(0, 3).re - 0.5).abs() < 1e-12);
    }

    #[test]
    fn product_state_for_equal_vectors() {
        let v = dv(&[1.0, 0.0, 0.0, 0.0]);
        let c = prepare_psi(&v, &v).unwrap();
        assert_eq!(c.n_qubits, 3);
        let d = diagonal(&c);
        assert!((d[0] - 0.5).abs() < 1e-12);
        assert!((d[4] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_match_target_amplitudes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2, 3, 5, 6, 8, 12] {
            let (v, w) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
            let target = psi_amplitudes(&v, &w).unwrap();
            let u = prepare_psi(&v, &w).unwrap().unitary();
            // real amplitudes are reproduced up to a global phase
            let col: Vec<_> = (0..target.len()).map(|i| u[(i, 0)]).collect();
            let overlap: num_complex::Complex64 = col.iter().zip(&target).map(|(a, t)| a.conj() * t).sum();
            let phase = overlap / overlap.norm();
            for (a, t) in col.iter().zip(&target) {
                assert!((a * phase - t).norm() < 1e-10, "D={d}");
            }
        }
    }

    #[test]
    fn phi_amplitudes() {
        let c = prepare_phi(&dv(&[1.0]), &dv(&[2.0])).unwrap();
        let u = c.unitary();
        assert!((u[(0, 0)].re - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((u[(1, 0)].re + 2.0 / 5f64.sqrt()).abs() < 1e-12);
        let eq = prepare_phi(&dv(&[3.0, 4.0]), &dv(&[5.0, 0.0])).unwrap().unitary();
        assert!((eq[(0, 0)].re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((eq[(1, 0)].re + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            prepare_phi(&dv(&[1.0]), &dv(&[0.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn zero_norm_rejected() {
        assert!(prepare_psi(&dv(&[0.0, 0.0]), &dv(&[1.0, 0.0])).is_err());
        assert!(prepare_psi(&dv(&[1.0, 0.0]), &dv(&[1.0])).is_err());
    }

    #[test]
    fn qubit_counts() {
        let v6 = dv(&[1.0; 6]);
        assert_eq!(swap_test_circuit(&v6, &v6).unwrap().n_qubits, 6);
        assert_eq!(h_test_circuit(&v6, &v6).unwrap().n_qubits, 4);
        let v2 = dv(&[1.0, 2.0]);
        assert_eq!(h_test_circuit(&v2, &v2).unwrap().n_qubits, 2);
    }

    fn p0(c: &Circuit) -> f64 {
        simulate(c).unwrap().prob_first_qubit_zero().unwrap()
    }

    #[test]
    fn swap_test_probabilities() {
        let v = dv(&[0.3, -1.2, 0.5]);
        assert!((p0(&swap_test_circuit(&v, &v).unwrap()) - 0.5).abs() < 1e-12);

        // d = 8, Z = 8 → p_s = ½ + d/(4Z) = 0.75
        let (a, b) = (dv(&[0.0, 2.0]), dv(&[2.0, 0.0]));
        let p = p0(&swap_test_circuit(&a, &b).unwrap());
        assert!((p - 0.75).abs() < 1e-12);
        assert!((distance_from_ps(p, 8.0) - 8.0).abs() < 1e-10);

        // statevector oracle: ½ + ⟨φ|ρ_index|φ⟩/2
        let (a, b) = (dv(&[1.0, 0.0, 0.0]), dv(&[0.0, 0.0, 1.0]));
        let z: f64 = 2.0;
        let phi = [1.0 / z.sqrt(), -1.0 / z.sqrt()];
        let rho_index = [[0.5, a.dot(&b) / 2.0], [a.dot(&b) / 2.0, 0.5]];
        let mut overlap = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                overlap += phi[i] * rho_index[i][j] * phi[j];
            }
        }
        let p = p0(&swap_test_circuit(&a, &b).unwrap());
        assert!((p - (0.5 + overlap / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn h_test_probabilities() {
        let v = dv(&[0.3, -1.2, 0.5]);
        assert!((p0(&h_test_circuit(&v, &v).unwrap()) - 1.0).abs() < 1e-12);
        let p = p0(&h_test_circuit(&dv(&[1.0, 0.0]), &dv(&[0.0, 3.0])).unwrap());
        assert!((p - 0.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (a, b) = (random_vec(&mut rng, 5), random_vec(&mut rng, 5));
            let cos = a.dot(&b) / (a.norm() * b.norm());
            let p = p0(&h_test_circuit(&a, &b).unwrap());
            assert!((p - (0.5 + cos / 2.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn conversion_formulas() {
        assert_eq!(distance_from_ps(0.5, 3.0), 0.0);
        assert_eq!(distance_from_ps(0.75, 8.0), 8.0);
        assert!(distance_from_ph(1.0, 1.0, 1.0).abs() < 1e-15);
        assert!((distance_from_ph(0.5, 2.0, 2.0) - 8.0).abs() < 1e-15);
    }

    #[test]
    fn conversions_round_trip_classical_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (a, b) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4));
            let d = squared_distance(&a, &b);
            for alg in [Algorithm::SwapBased, Algorithm::HBased] {
                let p = ideal_probability(alg, &a, &b);
                let back = distance_from_probability(alg, p, &a, &b);
                assert!((back - d).abs() <= 1e-9 * d.max(1.0));
            }
        }
    }

    #[test]
    fn rmse_edge_cases() {
        let v = dv(&[1.0, 2.0]);
        // p_h = 1 for identical vectors
        assert!(theoretical_rmse(Algorithm::HBased, &v, &v, 100) < 1e-6);
        let w = dv(&[-0.5, 1.0]);
        for alg in [Algorithm::SwapBased, Algorithm::HBased] {
            let a = theoretical_rmse(alg, &v, &w, 1000);
            let b = theoretical_rmse(alg, &v, &w, 4000);
            assert!((a / b - 2.0).abs() < 1e-12);
        }
    }
}
