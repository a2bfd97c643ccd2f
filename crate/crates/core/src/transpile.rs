//! Lowering to the hardware basis {I, X, SX, RZ, ECR} and unitary folding.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::qsim::{Circuit, Gate, GateKind, NoiseClass};

/// A circuit made only of basis gates.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisCircuit {
    n_qubits: usize,
    gates: Vec<Gate>,
    /// For every basis gate, the index of the source gate it came from.
    provenance: Vec<usize>,
}

impl BasisCircuit {
    /// Wraps a basis-only gate list; every gate is its own provenance.
    pub fn from_gates(n_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        let provenance = (0..gates.len()).collect();
        Self::with_provenance(n_qubits, gates, provenance)
    }

    fn with_provenance(n_qubits: usize, gates: Vec<Gate>, provenance: Vec<usize>) -> Result<Self> {
        for g in &gates {
            if !g.kind.is_basis() {
                return Err(Error::contract(format!("{} is not a basis gate", g.kind.name())));
            }
            if let Some(&q) = g.qubits.iter().find(|&&q| q >= n_qubits) {
                return Err(Error::contract(format!("qubit {q} out of range")));
            }
        }
        Ok(BasisCircuit {
            n_qubits,
            gates,
            provenance,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn provenance(&self) -> &[usize] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn to_circuit(&self) -> Circuit {
        Circuit {
            n_qubits: self.n_qubits,
            gates: self.gates.clone(),
        }
    }

    /// Longest dependency chain over qubits, counting every gate.
    pub fn depth(&self) -> usize {
        let mut level = vec![0usize; self.n_qubits];
        for g in &self.gates {
            let d = g.qubits.iter().map(|&q| level[q]).max().unwrap_or(0) + 1;
            for &q in &g.qubits {
                level[q] = d;
            }
        }
        level.into_iter().max().unwrap_or(0)
    }

    /// Text dump: a `# qubits N` header, then one `KIND q0 [q1 q2] [theta]`
    /// line per gate.
    pub fn to_dump(&self) -> String {
        let mut s = format!("# qubits {}\n", self.n_qubits);
        for g in &self.gates {
            let _ = writeln!(s, "{g}");
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut n_qubits = None;
        let mut gates = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("qubits") {
                    let n = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| Error::parse(lineno + 1, "bad qubit count"))?;
                    n_qubits = Some(n);
                }
                continue;
            }
            let mut tok = line.split_whitespace();
            let name = tok.next().unwrap_or_default();
            let rest: Vec<&str> = tok.collect();
            let nums = |s: &[&str]| -> Result<Vec<usize>> {
                s.iter()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| Error::parse(lineno + 1, format!("bad qubit `{t}`")))
                    })
                    .collect()
            };
            let angle = |t: Option<&&str>| -> Result<f64> {
                t.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::parse(lineno + 1, "missing or bad angle"))
            };
            let (kind, qubits) = match name {
                "I" => (GateKind::I, nums(&rest)?),
                "X" => (GateKind::X, nums(&rest)?),
                "SX" => (GateKind::Sx, nums(&rest)?),
                "SXDG" => (GateKind::Sxdg, nums(&rest)?),
                "ECR" => (GateKind::Ecr, nums(&rest)?),
                "RZ" => (GateKind::Rz(angle(rest.get(1))?), nums(rest.get(..1).unwrap_or(&[]))?),
                other => return Err(Error::parse(lineno + 1, format!("unknown basis gate `{other}`"))),
            };
            if matches!(kind, GateKind::Rz(_)) && rest.len() != 2 {
                return Err(Error::parse(lineno + 1, "RZ takes one qubit and one angle"));
            }
            gates.push(Gate::new(kind, qubits).map_err(|e| Error::parse(lineno + 1, e.to_string()))?);
        }
        let n = n_qubits.unwrap_or_else(|| {
            gates
                .iter()
                .flat_map(|g| g.qubits.iter().copied())
                .max()
                .map_or(0, |q| q + 1)
        });
        Self::from_gates(n, gates)
    }
}

/// Number of folds per gate and the resulting noise scale λ = 1 + 2i.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldingPlan {
    pub folds: usize,
}

impl FoldingPlan {
    pub fn new(folds: usize) -> Self {
        FoldingPlan { folds }
    }

    pub fn lambda(&self) -> usize {
        1 + 2 * self.folds
    }
}

struct Lowering {
    out: Vec<Gate>,
    provenance: Vec<usize>,
    source: usize,
}

impl Lowering {
    fn emit(&mut self, kind: GateKind, qubits: &[usize]) {
        self.out.push(Gate {
            kind,
            qubits: qubits.to_vec(),
        });
        self.provenance.push(self.source);
    }

    fn lower(&mut self, kind: &GateKind, q: &[usize]) -> Result<()> {
        match kind {
            k if k.is_basis() => self.emit(k.clone(), q),
            GateKind::H => {
                self.emit(GateKind::Rz(FRAC_PI_2), q);
                self.emit(GateKind::Sx, q);
                self.emit(GateKind::Rz(FRAC_PI_2), q);
            }
            GateKind::Ry(t) => {
                self.emit(GateKind::Sx, q);
                self.emit(GateKind::Rz(t - PI), q);
                self.emit(GateKind::Sx, q);
                self.emit(GateKind::Rz(PI), q);
            }
            GateKind::Cx => {
                let (c, t) = (q[0], q[1]);
                self.emit(GateKind::X, &[c]);
                self.emit(GateKind::Ecr, &[c, t]);
                self.emit(GateKind::Rz(FRAC_PI_2), &[c]);
                self.emit(GateKind::Sx, &[t]);
            }
            GateKind::Ccx => {
                let (a, b, t) = (q[0], q[1], q[2]);
                let t_gate = GateKind::Rz(FRAC_PI_4);
                let tdg = GateKind::Rz(-FRAC_PI_4);
                self.lower(&GateKind::H, &[t])?;
                self.lower(&GateKind::Cx, &[b, t])?;
                self.emit(tdg.clone(), &[t]);
                self.lower(&GateKind::Cx, &[a, t])?;
                self.emit(t_gate.clone(), &[t]);
                self.lower(&GateKind::Cx, &[b, t])?;
                self.emit(tdg.clone(), &[t]);
                self.lower(&GateKind::Cx, &[a, t])?;
                self.emit(t_gate.clone(), &[b]);
                self.emit(t_gate.clone(), &[t]);
                self.lower(&GateKind::H, &[t])?;
                self.lower(&GateKind::Cx, &[a, b])?;
                self.emit(t_gate, &[a]);
                self.emit(tdg, &[b]);
                self.lower(&GateKind::Cx, &[a, b])?;
            }
            GateKind::Cswap => {
                let (c, a, b) = (q[0], q[1], q[2]);
                self.lower(&GateKind::Cx, &[b, a])?;
                self.lower(&GateKind::Ccx, &[c, a, b])?;
                self.lower(&GateKind::Cx, &[b, a])?;
            }
            GateKind::UcRy(angles) => {
                for (kind, qubits) in multiplexed_ry(angles, q) {
                    self.lower(&kind, &qubits)?;
                }
            }
            other => return Err(Error::UnsupportedGate(other.name().to_string())),
        }
        Ok(())
    }
}

/// Gray-code lowering of a uniformly controlled RY into alternating RY and
/// CX gates: 2^k rotations and 2^k CNOTs for k controls.
fn multiplexed_ry(angles: &[f64], qubits: &[usize]) -> Vec<(GateKind, Vec<usize>)> {
    let k = qubits.len() - 1;
    let target = qubits[k];
    let n = angles.len();
    if k == 0 {
        return vec![(GateKind::Ry(angles[0]), vec![target])];
    }
    let gray = |i: usize| i ^ (i >> 1);
    let mut seq = Vec::with_capacity(2 * n);
    for i in 0..n {
        let g = gray(i);
        let theta = angles
            .iter()
            .enumerate()
            .map(|(j, a)| if (j & g).count_ones() % 2 == 0 { *a } else { -*a })
            .sum::<f64>()
            / n as f64;
        seq.push((GateKind::Ry(theta), vec![target]));
        let flip = (g ^ gray((i + 1) % n)).trailing_zeros() as usize;
        seq.push((GateKind::Cx, vec![qubits[k - 1 - flip], target]));
    }
    seq
}

/// Lowers a circuit to the basis gate set, preserving its unitary up to a
/// global phase.
pub fn decompose(circuit: &Circuit) -> Result<BasisCircuit> {
    let mut lowering = Lowering {
        out: Vec::new(),
        provenance: Vec::new(),
        source: 0,
    };
    for (idx, g) in circuit.gates.iter().enumerate() {
        lowering.source = idx;
        lowering.lower(&g.kind, &g.qubits)?;
    }
    BasisCircuit::with_provenance(circuit.n_qubits, lowering.out, lowering.provenance)
}

/// Replaces every gate G by G (G† G)^folds.
pub fn fold(circuit: &BasisCircuit, folds: usize) -> BasisCircuit {
    let factor = 1 + 2 * folds;
    let mut gates = Vec::with_capacity(circuit.gates.len() * factor);
    let mut provenance = Vec::with_capacity(circuit.gates.len() * factor);
    for (g, &src) in circuit.gates.iter().zip(&circuit.provenance) {
        gates.push(g.clone());
        let inv = g.inverse();
        for _ in 0..folds {
            gates.push(inv.clone());
            gates.push(g.clone());
        }
        provenance.extend(std::iter::repeat_n(src, factor));
    }
    BasisCircuit {
        n_qubits: circuit.n_qubits,
        gates,
        provenance,
    }
}

/// Noisy gate counts: `m_s` one-qubit (RZ excluded), `m_t` ECR and
/// `m_d = m_s + 2 m_t` single-qubit depolarizing events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateCensus {
    pub m_s: usize,
    pub m_t: usize,
    pub m_d: usize,
}

pub fn gate_census(circuit: &BasisCircuit) -> GateCensus {
    let mut m_s = 0;
    let mut m_t = 0;
    for g in &circuit.gates {
        match g.kind.noise_class() {
            Some(NoiseClass::OneQubit) => m_s += 1,
            Some(NoiseClass::TwoQubit) => m_t += 1,
            _ => {}
        }
    }
    GateCensus {
        m_s,
        m_t,
        m_d: m_s + 2 * m_t,
    }
}
