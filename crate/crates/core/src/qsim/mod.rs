//! Dense density-matrix simulation with Kraus-channel noise.
//!
//! Circuits are evolved exactly; the probability of reading |0⟩ on qubit 0
//! is extracted from the diagonal instead of sampling shots. Noisy runs fuse
//! each basis gate with the channel of its noise class into one
//! superoperator so every gate costs a single local update.

mod channel;
mod density;
mod gate;

pub use channel::{KrausChannel, Superoperator, COMPLETENESS_TOL};
pub use density::{DensityMatrix, MAX_QUBITS, NEGATIVITY_TOL};
pub use gate::{embed, CMatrix, Circuit, Gate, GateKind, NoiseClass};

use crate::error::{Error, Result};
use crate::noisemodel::NoiseModel;
use crate::transpile::BasisCircuit;

/// Per-step validation tolerance used by [`run_gates_checked`].
pub const STATE_TOL: f64 = 1e-12;

struct FusedBasis {
    i: Superoperator,
    x: Superoperator,
    sx: Superoperator,
    sxdg: Superoperator,
    ecr: Superoperator,
}

impl FusedBasis {
    fn new(noise: &NoiseModel) -> Self {
        let one = noise.superoperator(NoiseClass::OneQubit);
        let two = noise.superoperator(NoiseClass::TwoQubit);
        let fuse = |kind: GateKind, s: &Superoperator| s.after(&Superoperator::from_unitary(&kind.matrix()));
        FusedBasis {
            i: one.clone(),
            x: fuse(GateKind::X, one),
            sx: fuse(GateKind::Sx, one),
            sxdg: fuse(GateKind::Sxdg, one),
            ecr: fuse(GateKind::Ecr, two),
        }
    }

    fn get(&self, kind: &GateKind) -> Option<&Superoperator> {
        match kind {
            GateKind::I => Some(&self.i),
            GateKind::X => Some(&self.x),
            GateKind::Sx => Some(&self.sx),
            GateKind::Sxdg => Some(&self.sxdg),
            GateKind::Ecr => Some(&self.ecr),
            _ => None,
        }
    }
}

fn evolve(n_qubits: usize, gates: &[Gate], noise: Option<&NoiseModel>, check: Option<f64>) -> Result<DensityMatrix> {
    let mut rho = DensityMatrix::zero_state(n_qubits)?;
    let fused = noise.map(FusedBasis::new);
    for gate in gates {
        match (&fused, gate.kind.noise_class()) {
            (None, _) | (Some(_), Some(NoiseClass::Noiseless)) => rho.apply_unitary(gate)?,
            (Some(f), Some(_)) => {
                let s = f.get(&gate.kind).expect("basis gate with a noise class");
                rho.apply_superop(s, &gate.qubits)?;
            }
            (Some(_), None) => {
                return Err(Error::contract(format!(
                    "noisy simulation needs basis gates, found {}",
                    gate.kind.name()
                )))
            }
        }
        if let Some(tol) = check {
            rho.validate(tol)?;
        }
    }
    Ok(rho)
}

/// Evolves |0…0⟩ through `gates`. Noise, when given, follows every basis
/// gate according to its class; high-level gates are only allowed without
/// noise.
pub fn run_gates(n_qubits: usize, gates: &[Gate], noise: Option<&NoiseModel>) -> Result<DensityMatrix> {
    evolve(n_qubits, gates, noise, None)
}

/// Like [`run_gates`] but validates trace, Hermiticity and positivity after
/// every gate.
pub fn run_gates_checked(n_qubits: usize, gates: &[Gate], noise: Option<&NoiseModel>) -> Result<DensityMatrix> {
    evolve(n_qubits, gates, noise, Some(STATE_TOL))
}

/// Runs a transpiled circuit and returns the final state together with the
/// exact probability of measuring qubit 0 in |0⟩.
pub fn run_circuit(circuit: &BasisCircuit, noise: Option<&NoiseModel>) -> Result<(DensityMatrix, f64)> {
    let rho = run_gates(circuit.n_qubits(), circuit.gates(), noise)?;
    let p = rho.prob_first_qubit_zero()?;
    Ok((rho, p))
}

/// Noiseless simulation of a high-level circuit.
pub fn simulate(circuit: &Circuit) -> Result<DensityMatrix> {
    run_gates(circuit.n_qubits, &circuit.gates, None)
}
