use qmitdd_core::estimation::{task_stream, SamplingPolicy};
use qmitdd_core::experiments::benchmark_pair;
use qmitdd_core::noisemodel::{build_noise_model, DeviceCalibration};
use qmitdd_core::qdistance::{squared_distance, Algorithm};
use qmitdd_core::zne::{
    distance_basis_circuit, exact_series, mitigate_series, nrmse, sample_series, ExtrapolationModel,
};

#[test]
fn richardson_beats_raw_in_repeated_runs() {
    let noise = build_noise_model(&DeviceCalibration::default()).unwrap();
    let pairs: Vec<_> = (0..60).map(|i| benchmark_pair(77, i, 6, 4.0).unwrap()).collect();
    let exact: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(v, w)| {
            exact_series(
                &distance_basis_circuit(Algorithm::HBased, v, w).unwrap(),
                6,
                Some(&noise),
            )
            .unwrap()
        })
        .collect();
    let truth: Vec<f64> = pairs.iter().map(|(v, w)| squared_distance(v, w)).collect();
    let policy = SamplingPolicy::auto(10_000_000_000).unwrap();
    let repeats = 20;
    let mut wins = 0;
    for r in 0..repeats {
        let (mut raw, mut mit) = (Vec::new(), Vec::new());
        for (i, ((v, w), e)) in pairs.iter().zip(&exact).enumerate() {
            let s = sample_series(e, &policy, &mut task_stream(r, i as u64)).unwrap();
            let m = mitigate_series(Algorithm::HBased, ExtrapolationModel::Richardson, &s, v, w).unwrap();
            raw.push(m.raw.d_hat);
            mit.push(m.estimate.d_hat);
        }
        wins += usize::from(nrmse(&mit, &truth).unwrap() <= nrmse(&raw, &truth).unwrap());
    }
    assert!(wins as f64 >= 0.95 * repeats as f64, "{wins}/{repeats}");
}
