//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qmitdd_core::ddsolver::{reference_solution, rms_stress_error, Search, TrussModel, DEFAULT_MAX_ITER};
use qmitdd_core::estimation::{
    ks_critical_value, ks_statistic, sample_p_hat, task_stream, SamplingMode, SamplingPolicy,
};
use qmitdd_core::experiments::{benchmark_pair, time_normal_draws, truss_run, BackendKind};
use qmitdd_core::materialdb::{
    brute_force_nearest, generate_db, scale_point, ExactBackend, KdTree, MaterialPoint, RambergOsgoodParams,
    DEFAULT_LEAF_SIZE,
};
use qmitdd_core::noisemodel::{build_noise_model, DeviceCalibration, NoiseModel};
use qmitdd_core::qdistance::{theoretical_rmse, Algorithm, DataVector};
use qmitdd_core::qsim::{run_gates_checked, Circuit, GateKind, NoiseClass};
use qmitdd_core::transpile::{decompose, fold, gate_census};
use qmitdd_core::zne::{
    distance_basis_circuit, exact_series, mitigate_series, raw_estimate, sample_series, ExtrapolationModel,
};

type Outcome = Result<String, String>;

const ALGS: [Algorithm; 2] = [Algorithm::SwapBased, Algorithm::HBased];

fn classical(v: &DataVector, w: &DataVector) -> f64 {
    v.components()
        .iter()
        .zip(w.components())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn nrmse(est: &[f64], truth: &[f64]) -> f64 {
    let d_max = truth.iter().cloned().fold(0.0, f64::max);
    let sq: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (sq / (est.len() as f64 * d_max * d_max)).sqrt()
}

fn pairs(seed: u64, n: usize) -> Vec<(DataVector, DataVector)> {
    (0..n).map(|i| benchmark_pair(seed, i, 6, 4.0).unwrap()).collect()
}

fn within_runtime(start: Instant, limit: Duration) -> std::result::Result<String, String> {
    let t = start.elapsed();
    if t <= limit {
        Ok(format!("{:.1}s", t.as_secs_f64()))
    } else {
        Err(format!(
            "took {:.1}s, limit {:.0}s",
            t.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let ps = pairs(101, 1000);
    let mut worst = 0.0f64;
    for alg in ALGS {
        let errs: Vec<f64> = ps
            .par_iter()
            .map(|(v, w)| {
                let c = distance_basis_circuit(alg, v, w).unwrap();
                let p = exact_series(&c, 0, None).unwrap()[0];
                let d_hat = raw_estimate(alg, p, 1, v, w).d_hat;
                let d = classical(v, w);
                (d_hat - d).abs() / d
            })
            .collect();
        worst = errs.into_iter().fold(worst, f64::max);
    }
    let t = within_runtime(start, Duration::from_secs(60))?;
    if worst <= 1e-9 {
        Ok(format!("max relative error {worst:.2e} over 1000 pairs, {t}"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

/// Standard-error formulas written out from p(1 − p)/n_m and the
/// probability-to-distance maps.
fn rmse_oracle(alg: Algorithm, v: &DataVector, w: &DataVector, n_m: f64) -> f64 {
    let (a2, b2) = (v.norm_sqr(), w.norm_sqr());
    let dot: f64 = v.components().iter().zip(w.components()).map(|(x, y)| x * y).sum();
    match alg {
        Algorithm::SwapBased => {
            let z = a2 + b2;
            let p = 0.5 + classical(v, w) / (4.0 * z);
            4.0 * z * (p * (1.0 - p) / n_m).sqrt()
        }
        Algorithm::HBased => {
            let p = 0.5 + dot / (2.0 * (a2 * b2).sqrt());
            4.0 * (a2 * b2).sqrt() * (p * (1.0 - p) / n_m).sqrt()
        }
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n_m = 10_000u64;
    let policy = SamplingPolicy::new(n_m, SamplingMode::ExactBinomial).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (k, (v, w)) in pairs(202, 12).iter().enumerate() {
        for alg in ALGS {
            let c = distance_basis_circuit(alg, v, w).unwrap();
            let p = exact_series(&c, 0, None).unwrap()[0];
            let d = classical(v, w);
            let mut rng = task_stream(2, (k * 2 + alg as usize) as u64);
            let sq: f64 = (0..1000)
                .map(|_| {
                    let p_hat = sample_p_hat(p, &policy, &mut rng).unwrap();
                    (raw_estimate(alg, p_hat, n_m, v, w).d_hat - d).powi(2)
                })
                .sum();
            let empirical = (sq / 1000.0).sqrt();
            let oracle = rmse_oracle(alg, v, w, n_m as f64);
            let lib = theoretical_rmse(alg, v, w, n_m);
            if (lib - oracle).abs() > 1e-9 * oracle {
                return Err(format!("library formula {lib} differs from oracle {oracle}"));
            }
            worst = worst.max((empirical - oracle).abs() / oracle);
        }
    }
    let mut rng = task_stream(2, 9999);
    let mut violations = 0;
    for _ in 0..10_000 {
        let dim = rng.random_range(2..=8);
        let v = DataVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = DataVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (es, eh) = (
            theoretical_rmse(Algorithm::SwapBased, &v, &w, n_m),
            theoretical_rmse(Algorithm::HBased, &v, &w, n_m),
        );
        if eh > es * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    let t = within_runtime(start, Duration::from_secs(300))?;
    if worst <= 0.2 && violations == 0 {
        Ok(format!(
            "worst RMSE deviation {:.1}%, eps_h <= eps_s on 10^4 pairs, {t}",
            worst * 100.0
        ))
    } else {
        Err(format!(
            "worst RMSE deviation {:.1}%, {violations} eps_h > eps_s",
            worst * 100.0
        ))
    }
}

fn raw_nrmse(ps: &[(DataVector, DataVector)], alg: Algorithm, noise: Option<&NoiseModel>, n_m: u64, seed: u64) -> f64 {
    let policy = SamplingPolicy::auto(n_m).unwrap();
    let est: Vec<f64> = ps
        .par_iter()
        .enumerate()
        .map(|(i, (v, w))| {
            let c = distance_basis_circuit(alg, v, w).unwrap();
            let p = exact_series(&c, 0, noise).unwrap()[0];
            let p_hat = sample_p_hat(p, &policy, &mut task_stream(seed, i as u64)).unwrap();
            raw_estimate(alg, p_hat, n_m, v, w).d_hat
        })
        .collect();
    let truth: Vec<f64> = ps.iter().map(|(v, w)| classical(v, w)).collect();
    nrmse(&est, &truth)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let noise = build_noise_model(&DeviceCalibration::default()).map_err(|e| e.to_string())?;
    let ps = pairs(303, 1000);
    let mut lines = Vec::new();
    let mut ok = true;
    for alg in ALGS {
        let clean = raw_nrmse(&ps, alg, None, 10_000, 3);
        let noisy = raw_nrmse(&ps, alg, Some(&noise), 10_000, 3);
        ok &= (0.05..=0.30).contains(&noisy) && clean < 0.05;
        lines.push(format!("{alg}: {:.2}% -> {:.2}%", clean * 100.0, noisy * 100.0));
    }
    let t = within_runtime(start, Duration::from_secs(1800))?;
    let msg = format!("noiseless -> noisy NRMSE {}, {t}", lines.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

struct SeriesSet {
    alg: Algorithm,
    pairs: Vec<(DataVector, DataVector)>,
    exact: Vec<Vec<f64>>,
}

fn series_sets(noise: &NoiseModel, n_pairs: usize, folds: usize) -> Vec<SeriesSet> {
    let ps = pairs(404, n_pairs);
    ALGS.iter()
        .map(|&alg| SeriesSet {
            alg,
            exact: ps
                .par_iter()
                .map(|(v, w)| exact_series(&distance_basis_circuit(alg, v, w).unwrap(), folds, Some(noise)).unwrap())
                .collect(),
            pairs: ps.clone(),
        })
        .collect()
}

/// NRMSE of (unmitigated, model) at the given measurement count.
fn series_nrmse(set: &SeriesSet, model: ExtrapolationModel, n_m: u64, seed: u64) -> (f64, f64) {
    let policy = SamplingPolicy::auto(n_m).unwrap();
    let (mut raw, mut mit, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for (i, ((v, w), exact)) in set.pairs.iter().zip(&set.exact).enumerate() {
        let mut rng = task_stream(seed, i as u64);
        let s = sample_series(exact, &policy, &mut rng).unwrap();
        let m = mitigate_series(set.alg, model, &s, v, w).unwrap();
        raw.push(m.raw.d_hat);
        mit.push(m.estimate.d_hat);
        truth.push(classical(v, w));
    }
    (nrmse(&raw, &truth), nrmse(&mit, &truth))
}

fn criterion_4(sets: &[SeriesSet], elapsed: Duration) -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for set in sets {
        let (raw, mit) = series_nrmse(set, ExtrapolationModel::Richardson, 100_000_000, 4);
        ok &= mit < 0.03 && raw / mit >= 5.0;
        lines.push(format!(
            "{}: {:.2}% -> {:.2}% ({:.1}x)",
            set.alg,
            raw * 100.0,
            mit * 100.0,
            raw / mit
        ));
    }
    let t = within_runtime(start - elapsed, Duration::from_secs(7200))?;
    let msg = format!("200 pairs, Richardson n=6: {}, {t}", lines.join(", "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_5(sets: &[SeriesSet]) -> Outcome {
    let sweep = [1_000_000u64, 10_000_000, 100_000_000, 1_000_000_000, 10_000_000_000];
    let mut ok = true;
    let mut lines = Vec::new();
    for set in sets {
        let rich: Vec<f64> = sweep
            .iter()
            .map(|&n| series_nrmse(set, ExtrapolationModel::Richardson, n, 5).1)
            .collect();
        ok &= rich[4] < rich[0];
        lines.push(format!(
            "{} richardson {:.2}% -> {:.2}%",
            set.alg,
            rich[0] * 100.0,
            rich[4] * 100.0
        ));
        for model in [
            ExtrapolationModel::Linear,
            ExtrapolationModel::Quadratic,
            ExtrapolationModel::Exponential,
        ] {
            let v: Vec<f64> = sweep.iter().map(|&n| series_nrmse(set, model, n, 5).1).collect();
            let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
            ok &= spread < 0.02;
            lines.push(format!("{model} spread {:.2}pp", spread * 100.0));
        }
    }
    let msg = lines.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_6() -> Outcome {
    let truss = TrussModel::roof_truss();
    let ro = RambergOsgoodParams::default();
    let metric = qmitdd_core::ddsolver::default_scaling(&ro).map_err(|e| e.to_string())?;
    let db = generate_db(&ro, -6.0, 6.0, 161)
        .and_then(|db| db.with_metric(metric))
        .map_err(|e| e.to_string())?;
    let tree = KdTree::from_database(&db, DEFAULT_LEAF_SIZE).map_err(|e| e.to_string())?;
    let reference = reference_solution(&truss, &ro).map_err(|e| e.to_string())?;
    let weights = truss.weights();
    let noise = build_noise_model(&DeviceCalibration::default()).map_err(|e| e.to_string())?;
    let policy = SamplingPolicy::auto(10_000_000_000).unwrap();
    let mean = |backend: BackendKind| -> Result<f64, String> {
        let mut acc = 0.0;
        for run in 0..3 {
            let rep = truss_run(
                &truss,
                &db,
                Search::Tree(&tree),
                backend,
                Algorithm::HBased,
                ExtrapolationModel::Richardson,
                5,
                policy,
                Some(&noise),
                606,
                run,
                DEFAULT_MAX_ITER,
            )
            .map_err(|e| e.to_string())?;
            acc += rms_stress_error(&rep.data_stress, &reference, &weights).map_err(|e| e.to_string())?;
        }
        Ok(acc / 3.0)
    };
    let cl = mean(BackendKind::Classical)?;
    let un = mean(BackendKind::Unmitigated)?;
    let mi = mean(BackendKind::Mitigated)?;
    let msg = format!(
        "sigma_rms classical {:.2}%, mitigated {:.2}%, unmitigated {:.2}% (3 seeds)",
        cl * 100.0,
        mi * 100.0,
        un * 100.0
    );
    if cl <= 0.02 && mi <= 0.02 && mi < un && (0.03..=0.08).contains(&un) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_7() -> Outcome {
    let ro = RambergOsgoodParams::default();
    let db = generate_db(&ro, -6.0, 6.0, 161).map_err(|e| e.to_string())?;
    let tree = KdTree::from_database(&db, DEFAULT_LEAF_SIZE).map_err(|e| e.to_string())?;
    let mut rng: ChaCha8Rng = task_stream(7, 0);
    let (mut calls, mut mismatches) = (0usize, 0usize);
    for _ in 0..1000 {
        let sigma = rng.random_range(-7.0..7.0);
        let eps = ro.strain(sigma) * rng.random_range(0.5..1.5) + rng.random_range(-2e-4..2e-4);
        let q = scale_point(&MaterialPoint::uniaxial(eps, sigma), db.metric()).unwrap();
        let t = tree.nearest(&q, &mut ExactBackend).unwrap();
        let b = brute_force_nearest(db.scaled(), &q, &mut ExactBackend).unwrap();
        mismatches += usize::from(t.index != b.index);
        calls += t.calls;
    }
    let mean = calls as f64 / 1000.0;
    let msg = format!("{mismatches} mismatches on 1000 queries, mean backend calls {mean:.1} of 161");
    if mismatches == 0 && mean < 161.0 / 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_8() -> Outcome {
    let draw = |mode, seed| -> Vec<f64> {
        let policy = SamplingPolicy::new(100_000, mode).unwrap();
        let mut rng = task_stream(8, seed);
        (0..20_000)
            .map(|_| sample_p_hat(0.3, &policy, &mut rng).unwrap())
            .collect()
    };
    let exact = draw(SamplingMode::ExactBinomial, 0);
    let normal = draw(SamplingMode::NormalApprox, 1);
    let ks = ks_statistic(&exact, &normal);
    let crit = ks_critical_value(0.01, exact.len(), normal.len());
    let times: Vec<f64> = [10_000u64, 100_000_000, 1_000_000_000_000]
        .iter()
        .map(|&n| {
            let mut rng = task_stream(8, 2);
            (0..5)
                .map(|_| time_normal_draws(0.3, n, 200_000, &mut rng).unwrap())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let ratio = times.iter().cloned().fold(0.0, f64::max) / times.iter().cloned().fold(f64::INFINITY, f64::min);
    let msg = format!("KS {ks:.4} vs critical {crit:.4}, draw time max/min {ratio:.2} over n_m 1e4..1e12");
    if ks < crit && ratio < 2.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn phase_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let inner: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
    let phase = if inner.norm() > 0.0 {
        inner / inner.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    (a * phase - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn random_circuit(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Circuit {
    let mut c = Circuit::new(n);
    for _ in 0..len {
        let mut qs: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            qs.swap(i, rng.random_range(0..=i));
        }
        let angle = rng.random_range(-3.2..3.2);
        let (kind, arity) = match rng.random_range(0..9) {
            0 => (GateKind::X, 1),
            1 => (GateKind::Sx, 1),
            2 => (GateKind::Rz(angle), 1),
            3 => (GateKind::H, 1),
            4 => (GateKind::Ry(angle), 1),
            5 => (GateKind::Cx, 2),
            6 => (GateKind::Ecr, 2),
            7 => (GateKind::Ccx, 3),
            _ => (GateKind::Cswap, 3),
        };
        c.push(kind, &qs[..arity]).unwrap();
    }
    let angles: Vec<f64> = (0..4).map(|_| rng.random_range(-3.2..3.2)).collect();
    c.push(GateKind::UcRy(angles), &[0, 1, 2]).unwrap();
    c
}

fn criterion_9() -> Outcome {
    let cal_noise = build_noise_model(&DeviceCalibration::default()).map_err(|e| e.to_string())?;
    let mut completeness = 0.0f64;
    for class in [NoiseClass::OneQubit, NoiseClass::TwoQubit, NoiseClass::Noiseless] {
        completeness = completeness.max(cal_noise.channel(class).completeness_deviation());
    }
    // every state along noisy, folded distance circuits stays physical
    let mut states = 0usize;
    for (v, w) in pairs(909, 3) {
        for alg in ALGS {
            let c = distance_basis_circuit(alg, &v, &w).unwrap();
            for folds in [0, 2] {
                let f = fold(&c, folds);
                run_gates_checked(f.n_qubits(), f.gates(), Some(&cal_noise)).map_err(|e| e.to_string())?;
                states += f.len();
            }
        }
    }
    let mut rng = task_stream(9, 0);
    let mut unitary_dev = 0.0f64;
    for _ in 0..20 {
        let c = random_circuit(&mut rng, 3, 12);
        let u = c.unitary();
        let basis = decompose(&c).map_err(|e| e.to_string())?;
        unitary_dev = unitary_dev.max(phase_distance(&u, &basis.to_circuit().unitary()));
        unitary_dev = unitary_dev.max(phase_distance(&u, &fold(&basis, 2).to_circuit().unitary()));
    }
    let q = 0.013;
    let dep = NoiseModel::depolarizing_only(q, 0.0).map_err(|e| e.to_string())?;
    let mut c = Circuit::new(1);
    c.push(GateKind::Ry(0.9), &[0]).unwrap();
    c.push(GateKind::Rz(0.4), &[0]).unwrap();
    c.push(GateKind::Ry(-0.3), &[0]).unwrap();
    let basis = decompose(&c).map_err(|e| e.to_string())?;
    let m = gate_census(&basis).m_s as i32;
    let series = exact_series(&basis, 6, Some(&dep)).map_err(|e| e.to_string())?;
    let p0 = exact_series(&basis, 0, None).map_err(|e| e.to_string())?[0];
    let closed = series
        .iter()
        .enumerate()
        .map(|(k, p)| (p - (0.5 + (1.0 - q).powi(m * (2 * k as i32 + 1)) * (p0 - 0.5))).abs())
        .fold(0.0, f64::max);
    let msg = format!(
        "{states} checked states, completeness {completeness:.1e}, unitary deviation {unitary_dev:.1e}, closed-form deviation {closed:.1e}"
    );
    if completeness <= 1e-10 && unitary_dev <= 1e-10 && closed <= 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_10() -> Outcome {
    let v6 = DataVector::new(vec![0.3, -0.7, 0.2, 0.9, -0.1, 0.5]).unwrap();
    let w6 = DataVector::new(vec![-0.4, 0.6, 0.8, 0.1, 0.3, -0.9]).unwrap();
    let v2 = DataVector::new(vec![0.6, -0.2]).unwrap();
    let w2 = DataVector::new(vec![-0.3, 0.8]).unwrap();
    let cases = [
        ("swap D=6", Algorithm::SwapBased, &v6, &w6, 6, 100.0),
        ("h D=6", Algorithm::HBased, &v6, &w6, 4, 70.0),
        ("h D=2", Algorithm::HBased, &v2, &w2, 2, 15.0),
    ];
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, alg, v, w, qubits, depth_ref) in cases {
        let c = distance_basis_circuit(alg, v, w).map_err(|e| e.to_string())?;
        let depth = c.depth() as f64;
        ok &= c.n_qubits() == qubits && depth >= 0.5 * depth_ref && depth <= 2.0 * depth_ref;
        lines.push(format!("{name}: {} qubits, depth {depth}", c.n_qubits()));
    }
    let msg = lines.join(", ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn report(id: usize, outcome: Outcome) -> bool {
    match outcome {
        Ok(msg) => {
            println!("criterion {id:>2}: PASS  {msg}");
            true
        }
        Err(msg) => {
            println!("criterion {id:>2}: FAIL  {msg}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut passed = Vec::new();
    passed.push(report(1, criterion_1()));
    passed.push(report(2, criterion_2()));
    passed.push(report(3, criterion_3()));
    let start = Instant::now();
    let noise = build_noise_model(&DeviceCalibration::default()).expect("default calibration");
    let sets = series_sets(&noise, 200, 6);
    let prep = start.elapsed();
    passed.push(report(4, criterion_4(&sets, prep)));
    passed.push(report(5, criterion_5(&sets)));
    passed.push(report(6, criterion_6()));
    passed.push(report(7, criterion_7()));
    passed.push(report(8, criterion_8()));
    passed.push(report(9, criterion_9()));
    passed.push(report(10, criterion_10()));
    let n = passed.iter().filter(|p| **p).count();
    println!("{n}/{} criteria passed", passed.len());
    if n == passed.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
