//! Device noise: depolarizing plus thermal-relaxation channels built from
//! calibration medians and attached to the basis gate classes.
//!
//! One-qubit gates (I, X, SX and the internal SX†) get 1q depolarizing
//! followed by thermal relaxation. ECR gets 2q depolarizing followed by
//! thermal relaxation on each of its qubits. RZ is virtual and noiseless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qsim::{CMatrix, GateKind, KrausChannel, NoiseClass, Superoperator};

/// Tolerance for discarding zero eigenvalues of a Choi matrix.
pub const CHOI_EIGEN_TOL: f64 = 1e-10;

/// How far an unclamped depolarizing parameter may leave [0, 1].
pub const DEPOLARIZING_SLACK: f64 = 1e-6;

/// Median device parameters. Times in µs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCalibration {
    pub t1: f64,
    pub t2: f64,
    pub tg_1q: f64,
    pub tg_2q: f64,
    pub eps_g_1q: f64,
    pub eps_g_2q: f64,
    /// Excited-state population after reset; close to zero at cryogenic temperature.
    pub q_e: f64,
}

impl Default for DeviceCalibration {
    /// Median values of a 127-qubit Eagle-class device.
    fn default() -> Self {
        DeviceCalibration {
            t1: 280.0,
            t2: 127.0,
            tg_1q: 0.06,
            tg_2q: 0.66,
            eps_g_1q: 2.77e-4,
            eps_g_2q: 8.56e-3,
            q_e: 0.0,
        }
    }
}

const CALIBRATION_KEYS: [&str; 7] = ["t1", "t2", "tg_1q", "tg_2q", "eps_g_1q", "eps_g_2q", "q_e"];

impl DeviceCalibration {
    /// A calibration whose channels are all identities.
    pub fn noiseless() -> Self {
        DeviceCalibration {
            t1: 1.0,
            t2: 1.0,
            tg_1q: 0.0,
            tg_2q: 0.0,
            eps_g_1q: 0.0,
            eps_g_2q: 0.0,
            q_e: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.t1,
            self.t2,
            self.tg_1q,
            self.tg_2q,
            self.eps_g_1q,
            self.eps_g_2q,
            self.q_e,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Calibration("non-finite value".into()));
        }
        if self.t1 <= 0.0 {
            return Err(Error::Calibration(format!("T1 must be positive, got {}", self.t1)));
        }
        if self.t2 <= 0.0 || self.t2 >= 2.0 * self.t1 {
            return Err(Error::InvalidRegime {
                t1: self.t1,
                t2: self.t2,
            });
        }
        if self.tg_1q < 0.0 || self.tg_2q < 0.0 {
            return Err(Error::Calibration("gate times must be non-negative".into()));
        }
        for (name, v) in [
            ("eps_g_1q", self.eps_g_1q),
            ("eps_g_2q", self.eps_g_2q),
            ("q_e", self.q_e),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Calibration(format!("{name} = {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. `q_e` is optional
    /// and defaults to 0, every other key is required; unknown keys are
    /// rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<&str, f64> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno + 1, "expected `key = value`"))?;
            let key = key.trim();
            let canonical = CALIBRATION_KEYS
                .iter()
                .find(|k| k.eq_ignore_ascii_case(key))
                .ok_or_else(|| Error::parse(lineno + 1, format!("unknown key `{key}`")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno + 1, format!("bad number `{}`", value.trim())))?;
            if values.insert(canonical, v).is_some() {
                return Err(Error::parse(lineno + 1, format!("duplicate key `{key}`")));
            }
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::Calibration(format!("missing key `{k}`")))
        };
        let cal = DeviceCalibration {
            t1: get("t1")?,
            t2: get("t2")?,
            tg_1q: get("tg_1q")?,
            tg_2q: get("tg_2q")?,
            eps_g_1q: get("eps_g_1q")?,
            eps_g_2q: get("eps_g_2q")?,
            q_e: values.get("q_e").copied().unwrap_or(0.0),
        };
        cal.validate()?;
        Ok(cal)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::from("# times in microseconds, error rates as probabilities\n");
        for (k, v) in [
            ("t1", self.t1),
            ("t2", self.t2),
            ("tg_1q", self.tg_1q),
            ("tg_2q", self.tg_2q),
            ("eps_g_1q", self.eps_g_1q),
            ("eps_g_2q", self.eps_g_2q),
            ("q_e", self.q_e),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// `(e^{−Tg/T1}, e^{−Tg/T2})`
pub fn relax_dephase_probs(t1: f64, t2: f64, tg: f64) -> (f64, f64) {
    ((-tg / t1).exp(), (-tg / t2).exp())
}

/// Weights of the I / Z / reset-0 / reset-1 mixture (valid for T2 ≤ T1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalWeights {
    pub id: f64,
    pub z: f64,
    pub reset0: f64,
    pub reset1: f64,
}

pub fn thermal_mixture_weights(eps_t1: f64, eps_t2: f64, q_e: f64) -> ThermalWeights {
    let reset0 = (1.0 - q_e) * (1.0 - eps_t1);
    let reset1 = q_e * (1.0 - eps_t1);
    let z = eps_t1 * (1.0 - eps_t2 / eps_t1) / 2.0;
    ThermalWeights {
        id: 1.0 - z - reset0 - reset1,
        z,
        reset0,
        reset1,
    }
}

/// Choi matrix Λ = Σ_ij |i⟩⟨j| ⊗ E(|i⟩⟨j|) of thermal relaxation, so that
/// E(ρ) = tr₁[Λ(ρᵀ ⊗ I)].
pub fn thermal_choi(eps_t1: f64, eps_t2: f64, q_e: f64) -> CMatrix {
    let pr = 1.0 - eps_t1;
    let mut m = DMatrix::<f64>::zeros(4, 4);
    m[(0, 0)] = 1.0 - q_e * pr;
    m[(1, 1)] = q_e * pr;
    m[(2, 2)] = (1.0 - q_e) * pr;
    m[(3, 3)] = 1.0 - (1.0 - q_e) * pr;
    m[(0, 3)] = eps_t2;
    m[(3, 0)] = eps_t2;
    m.map(Complex64::from)
}

/// Kraus set of the single-qubit channel with the given Choi matrix.
///
/// Each eigenpair (λ, v) of Λ contributes K[a][i] = √λ · v[2i + a];
/// eigenvalues below [`CHOI_EIGEN_TOL`] are dropped.
pub fn kraus_from_choi(choi: &CMatrix) -> Result<KrausChannel> {
    if choi.nrows() != 4 || choi.ncols() != 4 {
        return Err(Error::contract("single-qubit Choi matrix must be 4x4"));
    }
    let eig = choi.clone().symmetric_eigen();
    let mut ops = Vec::new();
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -CHOI_EIGEN_TOL {
            return Err(Error::Calibration(format!(
                "Choi matrix not positive (eigenvalue {lambda:.3e})"
            )));
        }
        if lambda <= CHOI_EIGEN_TOL {
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let scale = Complex64::from(lambda.sqrt());
        let mut k = CMatrix::zeros(2, 2);
        for i in 0..2 {
            for a in 0..2 {
                k[(a, i)] = scale * v[2 * i + a];
            }
        }
        ops.push(k);
    }
    KrausChannel::new(ops)
}

fn scaled(m: CMatrix, w: f64) -> CMatrix {
    m * Complex64::from(w.sqrt())
}

/// Single-qubit thermal relaxation over a gate of duration `tg`.
///
/// T2 ≤ T1 uses the I/Z/reset mixture; T1 < T2 < 2·T1 goes through the Choi
/// representation.
pub fn thermal_relaxation_channel(t1: f64, t2: f64, tg: f64, q_e: f64) -> Result<KrausChannel> {
    if t1 <= 0.0 || t2 <= 0.0 || t2 >= 2.0 * t1 {
        return Err(Error::InvalidRegime { t1, t2 });
    }
    if tg == 0.0 {
        return Ok(KrausChannel::identity(1));
    }
    let (eps_t1, eps_t2) = relax_dephase_probs(t1, t2, tg);
    if t2 > t1 {
        return kraus_from_choi(&thermal_choi(eps_t1, eps_t2, q_e));
    }
    let w = thermal_mixture_weights(eps_t1, eps_t2, q_e);
    let one = Complex64::new(1.0, 0.0);
    let ket = |r: usize, c: usize| {
        let mut m = CMatrix::zeros(2, 2);
        m[(r, c)] = one;
        m
    };
    let mut ops = vec![
        scaled(CMatrix::identity(2, 2), w.id),
        scaled(
            GateKind::Rz(std::f64::consts::PI).matrix() * Complex64::new(0.0, 1.0),
            w.z,
        ),
    ];
    if w.reset0 > 0.0 {
        ops.push(scaled(ket(0, 0), w.reset0));
        ops.push(scaled(ket(0, 1), w.reset0));
    }
    if w.reset1 > 0.0 {
        ops.push(scaled(ket(1, 0), w.reset1));
        ops.push(scaled(ket(1, 1), w.reset1));
    }
    KrausChannel::new(ops)
}

fn checked_depolarizing(q: f64, what: &str) -> Result<f64> {
    if !q.is_finite() || q < -DEPOLARIZING_SLACK || q > 1.0 + DEPOLARIZING_SLACK {
        return Err(Error::Calibration(format!(
            "{what} = {q:.6e} lies outside [0, 1]; gate error inconsistent with relaxation"
        )));
    }
    Ok(q.clamp(0.0, 1.0))
}

/// 1q depolarizing parameter matching the gate error after accounting for relaxation.
pub fn depolarizing_q1(eps_g: f64, eps_t1: f64, eps_t2: f64) -> Result<f64> {
    let d1 = eps_t1 + 2.0 * eps_t2;
    if d1 <= 0.0 {
        return Err(Error::Calibration("d1 = eps_T1 + 2 eps_T2 must be positive".into()));
    }
    checked_depolarizing(1.0 + 3.0 * (2.0 * eps_g - 1.0) / d1, "q1")
}

/// 2q depolarizing parameter, with the relaxation terms of both qubits.
pub fn depolarizing_q2(eps_g: f64, eps_t1: f64, eps_t2: f64) -> Result<f64> {
    let d2 = 2.0 * eps_t1 + eps_t1 * eps_t1 + 4.0 * eps_t2 + 4.0 * eps_t2 * eps_t2 + 4.0 * eps_t1 * eps_t2;
    if d2 <= 0.0 {
        return Err(Error::Calibration("d2 must be positive".into()));
    }
    checked_depolarizing(1.0 + 5.0 * (4.0 * eps_g - 3.0) / d2, "q2")
}

fn pauli(i: usize) -> CMatrix {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    let im = Complex64::new(0.0, 1.0);
    match i {
        0 => CMatrix::identity(2, 2),
        1 => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        2 => CMatrix::from_row_slice(2, 2, &[z, -im, im, z]),
        _ => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
    }
}

/// ρ → (1 − q)ρ + q/4ⁿ Σ_P PρP† over all n-qubit Paulis (n ∈ {1, 2}).
pub fn depolarizing_channel(n_qubits: usize, q: f64) -> Result<KrausChannel> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::contract(format!("depolarizing q = {q} outside [0, 1]")));
    }
    let paulis: Vec<CMatrix> = match n_qubits {
        1 => (0..4).map(pauli).collect(),
        2 => (0..16).map(|k| pauli(k / 4).kronecker(&pauli(k % 4))).collect(),
        _ => return Err(Error::contract("depolarizing channel supports 1 or 2 qubits")),
    };
    let count = paulis.len() as f64;
    let ops = paulis
        .into_iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let w = if k == 0 { 1.0 - q + q / count } else { q / count };
            (w > 0.0).then(|| scaled(p, w))
        })
        .collect();
    KrausChannel::new(ops)
}

/// Composed channels per gate class, immutable after construction.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    one_qubit: KrausChannel,
    two_qubit: KrausChannel,
    one_qubit_superop: Superoperator,
    two_qubit_superop: Superoperator,
    q1: f64,
    q2: f64,
}

impl NoiseModel {
    fn from_channels(one_qubit: KrausChannel, two_qubit: KrausChannel, q1: f64, q2: f64) -> Self {
        NoiseModel {
            one_qubit_superop: one_qubit.superoperator(),
            two_qubit_superop: two_qubit.superoperator(),
            one_qubit,
            two_qubit,
            q1,
            q2,
        }
    }

    /// Depolarizing channels only, no relaxation.
    pub fn depolarizing_only(q1: f64, q2: f64) -> Result<Self> {
        Ok(Self::from_channels(
            depolarizing_channel(1, q1)?,
            depolarizing_channel(2, q2)?,
            q1,
            q2,
        ))
    }

    /// Channel applied after a gate of the given class. The noiseless class
    /// maps to the single-qubit identity.
    pub fn channel(&self, class: NoiseClass) -> KrausChannel {
        match class {
            NoiseClass::OneQubit => self.one_qubit.clone(),
            NoiseClass::TwoQubit => self.two_qubit.clone(),
            NoiseClass::Noiseless => KrausChannel::identity(1),
        }
    }

    pub(crate) fn superoperator(&self, class: NoiseClass) -> &Superoperator {
        match class {
            NoiseClass::TwoQubit => &self.two_qubit_superop,
            _ => &self.one_qubit_superop,
        }
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }
}

pub fn build_noise_model(cal: &DeviceCalibration) -> Result<NoiseModel> {
    cal.validate()?;
    let (e1, e2) = relax_dephase_probs(cal.t1, cal.t2, cal.tg_1q);
    let q1 = depolarizing_q1(cal.eps_g_1q, e1, e2)?;
    let thermal_1q = thermal_relaxation_channel(cal.t1, cal.t2, cal.tg_1q, cal.q_e)?;
    let one = thermal_1q.compose_after(&depolarizing_channel(1, q1)?)?;

    let (e1, e2) = relax_dephase_probs(cal.t1, cal.t2, cal.tg_2q);
    let q2 = depolarizing_q2(cal.eps_g_2q, e1, e2)?;
    let thermal_2q = thermal_relaxation_channel(cal.t1, cal.t2, cal.tg_2q, cal.q_e)?;
    let two = thermal_2q
        .tensor(&thermal_2q)
        .compose_after(&depolarizing_channel(2, q2)?)?;

    Ok(NoiseModel::from_channels(one, two, q1, q2))
}
