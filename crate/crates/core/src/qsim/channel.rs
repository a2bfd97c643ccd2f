use num_complex::Complex64;

use super::gate::CMatrix;
use crate::error::{Error, Result};

/// Completeness tolerance for Σ K†K = I.
pub const COMPLETENESS_TOL: f64 = 1e-10;

/// A completely positive trace-preserving map given by its Kraus operators.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    operators: Vec<CMatrix>,
    arity: usize,
}

impl KrausChannel {
    pub fn new(operators: Vec<CMatrix>) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| Error::contract("channel needs at least one Kraus operator"))?;
        let dim = first.nrows();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::contract(format!("Kraus dimension {dim} is not 2^k")));
        }
        if operators.iter().any(|k| k.nrows() != dim || k.ncols() != dim) {
            return Err(Error::contract("Kraus operators differ in shape"));
        }
        let ch = KrausChannel {
            arity: dim.trailing_zeros() as usize,
            operators,
        };
        let deviation = ch.completeness_deviation();
        if deviation > COMPLETENESS_TOL {
            return Err(Error::NotTracePreserving { deviation });
        }
        Ok(ch)
    }

    pub fn identity(arity: usize) -> Self {
        let dim = 1 << arity;
        KrausChannel {
            operators: vec![CMatrix::identity(dim, dim)],
            arity,
        }
    }

    /// Unitary channel ρ → UρU†.
    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Max-abs entry of Σ K†K − I.
    pub fn completeness_deviation(&self) -> f64 {
        let dim = 1 << self.arity;
        let mut sum = CMatrix::zeros(dim, dim);
        for k in &self.operators {
            sum += k.adjoint() * k;
        }
        (sum - CMatrix::identity(dim, dim))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// `self` applied after `first`.
    pub fn compose_after(&self, first: &KrausChannel) -> Result<KrausChannel> {
        if self.arity != first.arity {
            return Err(Error::contract("composing channels of different arity"));
        }
        let mut ops = Vec::with_capacity(self.operators.len() * first.operators.len());
        for a in &self.operators {
            for b in &first.operators {
                ops.push(a * b);
            }
        }
        Ok(KrausChannel {
            operators: prune(ops),
            arity: self.arity,
        })
    }

    /// Independent channels on disjoint qubit groups, `self` on the leading qubits.
    pub fn tensor(&self, other: &KrausChannel) -> KrausChannel {
        let mut ops = Vec::with_capacity(self.operators.len() * other.operators.len());
        for a in &self.operators {
            for b in &other.operators {
                ops.push(a.kronecker(b));
            }
        }
        KrausChannel {
            operators: prune(ops),
            arity: self.arity + other.arity,
        }
    }

    /// Applies the channel to a local `2^k × 2^k` matrix.
    pub fn apply_local(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
        for k in &self.operators {
            out += k * rho * k.adjoint();
        }
        out
    }

    pub fn superoperator(&self) -> Superoperator {
        let dim = 1 << self.arity;
        let n = dim * dim;
        let mut s = vec![Complex64::new(0.0, 0.0); n * n];
        for k in &self.operators {
            accumulate_kron_conj(&mut s, k, k, dim);
        }
        Superoperator {
            data: s,
            arity: self.arity,
        }
    }
}

/// Drops Kraus operators that vanish (zero-weight mixture terms).
fn prune(ops: Vec<CMatrix>) -> Vec<CMatrix> {
    let kept: Vec<CMatrix> = ops.iter().filter(|k| k.norm() > 1e-15).cloned().collect();
    if kept.is_empty() {
        ops
    } else {
        kept
    }
}

/// s[(a,b),(c,e)] += A[a][c] · conj(B[b][e])
fn accumulate_kron_conj(s: &mut [Complex64], a: &CMatrix, b: &CMatrix, dim: usize) {
    let n = dim * dim;
    for ai in 0..dim {
        for bi in 0..dim {
            let row = (ai * dim + bi) * n;
            for ci in 0..dim {
                let av = a[(ai, ci)];
                if av == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for ei in 0..dim {
                    s[row + ci * dim + ei] += av * b[(bi, ei)].conj();
                }
            }
        }
    }
}

/// Linear map on row-major vectorised local density blocks:
/// `vec(X)[a·d + b] = X[a][b]`, `vec(K X K†) = (K ⊗ K*) vec(X)`.
#[derive(Debug, Clone)]
pub struct Superoperator {
    /// Row-major `4^k × 4^k`.
    pub(crate) data: Vec<Complex64>,
    arity: usize,
}

impl Superoperator {
    pub fn from_unitary(u: &CMatrix) -> Self {
        let dim = u.nrows();
        let n = dim * dim;
        let mut s = vec![Complex64::new(0.0, 0.0); n * n];
        accumulate_kron_conj(&mut s, u, u, dim);
        Superoperator {
            data: s,
            arity: dim.trailing_zeros() as usize,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Superoperator) -> Superoperator {
        assert_eq!(self.arity, first.arity, "superoperator arity mismatch");
        let n = 1 << (2 * self.arity);
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * first.data[k * n + j];
                }
            }
        }
        Superoperator {
            data: out,
            arity: self.arity,
        }
    }
}
