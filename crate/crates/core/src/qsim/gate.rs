use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I_UNIT: Complex64 = Complex64::new(0.0, 1.0);

/// Gate vocabulary. The first six kinds form the hardware basis; the rest
/// only appear in circuits before transpilation.
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    I,
    X,
    Sx,
    /// Inverse of `Sx`. Only produced by folding; shares the 1q noise class.
    Sxdg,
    Rz(f64),
    Ecr,
    H,
    Ry(f64),
    Cx,
    Ccx,
    /// Controlled swap: qubits are `[control, a, b]`.
    Cswap,
    /// Uniformly controlled RY. Angle `j` is applied when the controls read
    /// `j` (first control is the most significant bit); the last qubit is the
    /// target. An empty control set is a plain RY.
    UcRy(Vec<f64>),
}

/// Which noise channel a physical gate triggers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseClass {
    OneQubit,
    TwoQubit,
    Noiseless,
}

impl GateKind {
    pub fn arity(&self) -> usize {
        match self {
            GateKind::I
            | GateKind::X
            | GateKind::Sx
            | GateKind::Sxdg
            | GateKind::Rz(_)
            | GateKind::H
            | GateKind::Ry(_) => 1,
            GateKind::Ecr | GateKind::Cx => 2,
            GateKind::Ccx | GateKind::Cswap => 3,
            GateKind::UcRy(angles) => angles.len().trailing_zeros() as usize + 1,
        }
    }

    pub fn is_basis(&self) -> bool {
        matches!(
            self,
            GateKind::I | GateKind::X | GateKind::Sx | GateKind::Sxdg | GateKind::Rz(_) | GateKind::Ecr
        )
    }

    /// Noise class of a basis gate, `None` for high-level gates.
    pub fn noise_class(&self) -> Option<NoiseClass> {
        match self {
            GateKind::I | GateKind::X | GateKind::Sx | GateKind::Sxdg => Some(NoiseClass::OneQubit),
            GateKind::Ecr => Some(NoiseClass::TwoQubit),
            GateKind::Rz(_) => Some(NoiseClass::Noiseless),
            _ => None,
        }
    }

    pub fn inverse(&self) -> GateKind {
        match self {
            GateKind::Sx => GateKind::Sxdg,
            GateKind::Sxdg => GateKind::Sx,
            GateKind::Rz(t) => GateKind::Rz(-t),
            GateKind::Ry(t) => GateKind::Ry(-t),
            GateKind::UcRy(a) => GateKind::UcRy(a.iter().map(|t| -t).collect()),
            other => other.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::I => "I",
            GateKind::X => "X",
            GateKind::Sx => "SX",
            GateKind::Sxdg => "SXDG",
            GateKind::Rz(_) => "RZ",
            GateKind::Ecr => "ECR",
            GateKind::H => "H",
            GateKind::Ry(_) => "RY",
            GateKind::Cx => "CX",
            GateKind::Ccx => "CCX",
            GateKind::Cswap => "CSWAP",
            GateKind::UcRy(_) => "UCRY",
        }
    }

    /// Unitary on the gate's own qubits, first listed qubit most significant.
    pub fn matrix(&self) -> CMatrix {
        let c = |re: f64, im: f64| Complex64::new(re, im);
        match self {
            GateKind::I => CMatrix::identity(2, 2),
            GateKind::X => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
            GateKind::Sx => CMatrix::from_row_slice(2, 2, &[c(0.5, 0.5), c(0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5)]),
            GateKind::Sxdg => CMatrix::from_row_slice(2, 2, &[c(0.5, -0.5), c(0.5, 0.5), c(0.5, 0.5), c(0.5, -0.5)]),
            GateKind::Rz(t) => {
                let mut m = CMatrix::zeros(2, 2);
                m[(0, 0)] = Complex64::from_polar(1.0, -t / 2.0);
                m[(1, 1)] = Complex64::from_polar(1.0, t / 2.0);
                m
            }
            GateKind::Ry(t) => ry_matrix(*t),
            GateKind::H => {
                let h = FRAC_1_SQRT_2;
                CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)])
            }
            GateKind::Ecr => {
                // (X⊗I − Y⊗X)/√2, first factor on the first listed qubit.
                let x = GateKind::X.matrix();
                let y = CMatrix::from_row_slice(2, 2, &[ZERO, -I_UNIT, I_UNIT, ZERO]);
                let id = CMatrix::identity(2, 2);
                (x.kronecker(&id) - y.kronecker(&x)) * Complex64::from(FRAC_1_SQRT_2)
            }
            GateKind::Cx => permutation(4, |i| if i >= 2 { i ^ 1 } else { i }),
            GateKind::Ccx => permutation(8, |i| if i >= 6 { i ^ 1 } else { i }),
            GateKind::Cswap => permutation(8, |i| match i {
                5 => 6,
                6 => 5,
                other => other,
            }),
            GateKind::UcRy(angles) => {
                let dim = 2 * angles.len();
                let mut m = CMatrix::zeros(dim, dim);
                for (j, &t) in angles.iter().enumerate() {
                    let block = ry_matrix(t);
                    for r in 0..2 {
                        for col in 0..2 {
                            m[(2 * j + r, 2 * j + col)] = block[(r, col)];
                        }
                    }
                }
                m
            }
        }
    }
}

fn ry_matrix(t: f64) -> CMatrix {
    let (s, co) = (t / 2.0).sin_cos();
    CMatrix::from_row_slice(2, 2, &[co.into(), (-s).into(), s.into(), co.into()])
}

fn permutation(dim: usize, map: impl Fn(usize) -> usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(map(i), i)] = ONE;
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
}

impl Gate {
    pub fn new(kind: GateKind, qubits: Vec<usize>) -> Result<Self> {
        if let GateKind::UcRy(angles) = &kind {
            if angles.is_empty() || !angles.len().is_power_of_two() {
                return Err(Error::contract(format!(
                    "UCRY needs a power-of-two angle count, got {}",
                    angles.len()
                )));
            }
        }
        if qubits.len() != kind.arity() {
            return Err(Error::contract(format!(
                "{} acts on {} qubits, got {:?}",
                kind.name(),
                kind.arity(),
                qubits
            )));
        }
        for (i, q) in qubits.iter().enumerate() {
            if qubits[..i].contains(q) {
                return Err(Error::contract(format!("repeated qubit {q} in {}", kind.name())));
            }
        }
        Ok(Gate { kind, qubits })
    }

    pub fn inverse(&self) -> Gate {
        Gate {
            kind: self.kind.inverse(),
            qubits: self.qubits.clone(),
        }
    }

    pub fn matrix(&self) -> CMatrix {
        self.kind.matrix()
    }
}

impl fmt::Display for Gate {
    /// `KIND q0 [q1 q2] [theta...]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.name())?;
        for q in &self.qubits {
            write!(f, " {q}")?;
        }
        match &self.kind {
            GateKind::Rz(t) | GateKind::Ry(t) => write!(f, " {t:.17e}")?,
            GateKind::UcRy(a) => {
                for t in a {
                    write!(f, " {t:.17e}")?;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// An ordered gate sequence on `n_qubits` qubits, before transpilation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn push(&mut self, kind: GateKind, qubits: &[usize]) -> Result<&mut Self> {
        if let Some(&q) = qubits.iter().find(|&&q| q >= self.n_qubits) {
            return Err(Error::contract(format!(
                "qubit {q} out of range for {}-qubit circuit",
                self.n_qubits
            )));
        }
        self.gates.push(Gate::new(kind, qubits.to_vec())?);
        Ok(self)
    }

    /// Appends `other` with its qubit `j` mapped onto `map[j]`.
    pub fn append_mapped(&mut self, other: &Circuit, map: &[usize]) -> Result<()> {
        if map.len() != other.n_qubits {
            return Err(Error::contract("qubit map length differs from appended circuit"));
        }
        for g in &other.gates {
            let qubits: Vec<usize> = g.qubits.iter().map(|&q| map[q]).collect();
            self.push(g.kind.clone(), &qubits)?;
        }
        Ok(())
    }

    /// Dense unitary of the whole circuit, qubit 0 most significant.
    pub fn unitary(&self) -> CMatrix {
        let dim = 1usize << self.n_qubits;
        let mut u = CMatrix::identity(dim, dim);
        for g in &self.gates {
            u = embed(&g.matrix(), &g.qubits, self.n_qubits) * u;
        }
        u
    }
}

/// Embeds a local operator acting on `qubits` into the full `n`-qubit space.
pub fn embed(local: &CMatrix, qubits: &[usize], n: usize) -> CMatrix {
    let dim = 1usize << n;
    let k = qubits.len();
    let mask: usize = qubits.iter().map(|&q| 1usize << (n - 1 - q)).sum();
    let local_index = |i: usize| -> usize {
        qubits
            .iter()
            .enumerate()
            .map(|(j, &q)| ((i >> (n - 1 - q)) & 1) << (k - 1 - j))
            .sum()
    };
    let mut out = CMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            if r & !mask == c & !mask {
                out[(r, c)] = local[(local_index(r), local_index(c))];
            }
        }
    }
    out
}
