use nalgebra::DMatrix;
use num_complex::Complex64;

use super::channel::{KrausChannel, Superoperator};
use super::gate::{CMatrix, Gate};
use crate::error::{Error, Result};

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 10;

/// Diagonal entries more negative than this are reported instead of clamped.
pub const NEGATIVITY_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Mixed state of `n` qubits as a dense `2^n × 2^n` matrix.
///
/// Qubit 0 is the most significant bit of the computational-basis index.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    /// Row-major.
    data: Vec<Complex64>,
}

/// Index bookkeeping for an operation on a subset of qubits.
struct Layout {
    /// Global index offset for every local basis state.
    offsets: Vec<usize>,
    /// Global indices with all target bits cleared.
    bases: Vec<usize>,
}

impl Layout {
    fn new(n: usize, qubits: &[usize]) -> Self {
        let k = qubits.len();
        let offsets = (0..1usize << k)
            .map(|a| {
                qubits
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| (a >> (k - 1 - j)) & 1 == 1)
                    .map(|(_, &q)| 1usize << (n - 1 - q))
                    .sum()
            })
            .collect();
        let mask: usize = qubits.iter().map(|&q| 1usize << (n - 1 - q)).sum();
        let bases = (0..1usize << n).filter(|i| i & mask == 0).collect();
        Layout { offsets, bases }
    }
}

impl DensityMatrix {
    /// |0…0⟩⟨0…0|
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: n_qubits,
                limit: MAX_QUBITS,
            });
        }
        let dim = 1usize << n_qubits;
        let mut data = vec![ZERO; dim * dim];
        data[0] = Complex64::new(1.0, 0.0);
        Ok(DensityMatrix { n_qubits, data })
    }

    /// Pure state |ψ⟩⟨ψ|; the vector is normalised first.
    pub fn from_statevector(amplitudes: &[Complex64]) -> Result<Self> {
        let dim = amplitudes.len();
        if !dim.is_power_of_two() {
            return Err(Error::contract("statevector length is not a power of two"));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: n_qubits,
                limit: MAX_QUBITS,
            });
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateInput("zero statevector".into()));
        }
        let mut data = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = amplitudes[r] * amplitudes[c].conj() / (norm * norm);
            }
        }
        Ok(DensityMatrix { n_qubits, data })
    }

    pub fn from_matrix(m: &CMatrix) -> Result<Self> {
        let dim = m.nrows();
        if dim != m.ncols() || !dim.is_power_of_two() {
            return Err(Error::contract("density matrix must be square with 2^n rows"));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                requested: n_qubits,
                limit: MAX_QUBITS,
            });
        }
        let mut data = vec![ZERO; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                data[r * dim + c] = m[(r, c)];
            }
        }
        Ok(DensityMatrix { n_qubits, data })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim() + col]
    }

    pub fn to_matrix(&self) -> CMatrix {
        let dim = self.dim();
        CMatrix::from_row_slice(dim, dim, &self.data)
    }

    pub fn trace(&self) -> Complex64 {
        let dim = self.dim();
        (0..dim).map(|i| self.data[i * dim + i]).sum()
    }

    fn check_targets(&self, qubits: &[usize], local_dim: usize) -> Result<()> {
        if local_dim != 1 << qubits.len() {
            return Err(Error::contract(format!(
                "operator of dimension {local_dim} on {} qubits",
                qubits.len()
            )));
        }
        for (i, &q) in qubits.iter().enumerate() {
            if q >= self.n_qubits {
                return Err(Error::contract(format!(
                    "qubit {q} out of range for {} qubits",
                    self.n_qubits
                )));
            }
            if qubits[..i].contains(&q) {
                return Err(Error::contract(format!("repeated target qubit {q}")));
            }
        }
        Ok(())
    }

    /// ρ → UρU† with `u` acting on `qubits` (first listed most significant).
    pub fn apply_local_unitary(&mut self, u: &CMatrix, qubits: &[usize]) -> Result<()> {
        self.check_targets(qubits, u.nrows())?;
        let dim = self.dim();
        let layout = Layout::new(self.n_qubits, qubits);
        let k = layout.offsets.len();
        let um: Vec<Complex64> = (0..k * k).map(|i| u[(i / k, i % k)]).collect();
        let mut v = vec![ZERO; k];

        // rows: U ρ
        for col in 0..dim {
            for &base in &layout.bases {
                for a in 0..k {
                    v[a] = self.data[(base + layout.offsets[a]) * dim + col];
                }
                for a in 0..k {
                    let mut acc = ZERO;
                    for b in 0..k {
                        acc += um[a * k + b] * v[b];
                    }
                    self.data[(base + layout.offsets[a]) * dim + col] = acc;
                }
            }
        }
        // columns: (Uρ) U†
        for row in 0..dim {
            let r = row * dim;
            for &base in &layout.bases {
                for b in 0..k {
                    v[b] = self.data[r + base + layout.offsets[b]];
                }
                for a in 0..k {
                    let mut acc = ZERO;
                    for b in 0..k {
                        acc += v[b] * um[a * k + b].conj();
                    }
                    self.data[r + base + layout.offsets[a]] = acc;
                }
            }
        }
        Ok(())
    }

    pub fn apply_unitary(&mut self, gate: &Gate) -> Result<()> {
        self.apply_local_unitary(&gate.matrix(), &gate.qubits)
    }

    /// Applies a superoperator on the local block of `qubits`.
    pub fn apply_superop(&mut self, s: &Superoperator, qubits: &[usize]) -> Result<()> {
        self.check_targets(qubits, 1 << s.arity())?;
        let dim = self.dim();
        let layout = Layout::new(self.n_qubits, qubits);
        let k = layout.offsets.len();
        let n = k * k;
        let mut block = vec![ZERO; n];
        for &rb in &layout.bases {
            for &cb in &layout.bases {
                for a in 0..k {
                    let row = (rb + layout.offsets[a]) * dim + cb;
                    for b in 0..k {
                        block[a * k + b] = self.data[row + layout.offsets[b]];
                    }
                }
                for a in 0..k {
                    let row = (rb + layout.offsets[a]) * dim + cb;
                    for b in 0..k {
                        let i = a * k + b;
                        let srow = &s.data[i * n..(i + 1) * n];
                        let mut acc = ZERO;
                        for (sv, bv) in srow.iter().zip(&block) {
                            acc += sv * bv;
                        }
                        self.data[row + layout.offsets[b]] = acc;
                    }
                }
            }
        }
        Ok(())
    }

    /// ρ → Σ K ρ K† with the channel acting on `qubits`.
    pub fn apply_channel(&mut self, channel: &KrausChannel, qubits: &[usize]) -> Result<()> {
        self.apply_superop(&channel.superoperator(), qubits)
    }

    /// Probability that a measurement of qubit 0 yields |0⟩: the sum of the
    /// first half of the diagonal. Round-off negativity below
    /// [`NEGATIVITY_TOL`] is clamped to zero.
    pub fn prob_first_qubit_zero(&self) -> Result<f64> {
        let dim = self.dim();
        let mut p = 0.0;
        for i in 0..dim / 2 {
            let d = self.data[i * dim + i].re;
            if d < -NEGATIVITY_TOL {
                return Err(Error::InvalidState(format!("diagonal entry {i} is {d:.3e}")));
            }
            p += d.max(0.0);
        }
        if dim == 1 {
            p = 1.0;
        }
        Ok(p.clamp(0.0, 1.0))
    }

    /// Checks unit trace and Hermiticity within `tol`, and eigenvalues ≥ −1e-10.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let tr = self.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::InvalidState(format!("trace {tr}")));
        }
        let dim = self.dim();
        for r in 0..dim {
            for c in r..dim {
                let dev = (self.data[r * dim + c] - self.data[c * dim + r].conj()).norm();
                if dev > tol {
                    return Err(Error::InvalidState(format!("not Hermitian at ({r},{c}): {dev:.3e}")));
                }
            }
        }
        let m: DMatrix<Complex64> = self.to_matrix();
        let hermitian = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        let min_eig = hermitian
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -NEGATIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::gate::GateKind;

    #[test]
    fn capacity_limit() {
        assert!(matches!(
            DensityMatrix::zero_state(MAX_QUBITS + 1),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn x_flips_zero_to_one() {
        let mut rho = DensityMatrix::zero_state(1).unwrap();
        rho.apply_unitary(&Gate::new(GateKind::X, vec![0]).unwrap()).unwrap();
        assert!((rho.get(1, 1).re - 1.0).abs() < 1e-15);
        assert!(rho.get(0, 0).norm() < 1e-15);
    }

    #[test]
    fn hadamard_gives_uniform_entries() {
        let mut rho = DensityMatrix::zero_state(1).unwrap();
        rho.apply_unitary(&Gate::new(GateKind::H, vec![0]).unwrap()).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((rho.get(r, c) - Complex64::new(0.5, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn wrong_dimension_is_contract_error() {
        let mut rho = DensityMatrix::zero_state(2).unwrap();
        let err = rho.apply_local_unitary(&GateKind::Cx.matrix(), &[0]);
        assert!(matches!(err, Err(Error::Contract(_))));
        let err = rho.apply_local_unitary(&GateKind::X.matrix(), &[2]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn first_qubit_probabilities() {
        let rho = DensityMatrix::zero_state(1).unwrap();
        assert_eq!(rho.prob_first_qubit_zero().unwrap(), 1.0);

        let mixed = DensityMatrix::from_matrix(&(CMatrix::identity(4, 4) * Complex64::new(0.25, 0.0))).unwrap();
        assert!((mixed.prob_first_qubit_zero().unwrap() - 0.5).abs() < 1e-15);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell =
            DensityMatrix::from_statevector(&[Complex64::new(h, 0.0), ZERO, ZERO, Complex64::new(h, 0.0)]).unwrap();
        assert!((bell.prob_first_qubit_zero().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn large_negative_diagonal_is_error() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex64::new(-1e-6, 0.0);
        m[(1, 1)] = Complex64::new(1.0 + 1e-6, 0.0);
        let rho = DensityMatrix::from_matrix(&m).unwrap();
        assert!(rho.prob_first_qubit_zero().is_err());

        m[(0, 0)] = Complex64::new(-1e-12, 0.0);
        let rho = DensityMatrix::from_matrix(&m).unwrap();
        assert_eq!(rho.prob_first_qubit_zero().unwrap(), 0.0);
    }

    #[test]
    fn validate_catches_non_hermitian() {
        let mut m = CMatrix::identity(2, 2) * Complex64::new(0.5, 0.0);
        m[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(DensityMatrix::from_matrix(&m).unwrap().validate(1e-12).is_err());
    }
}
