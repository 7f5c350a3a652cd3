//! Sweep-level behaviour on desk-scale runs.

use kising_core::harness::{
    root_fraction_sweep, scatter_experiment, sweep_data_length, ExperimentConfig, ScatterRow, SweepOutput,
    SweepVariable,
};
use kising_core::inference::{Method, TapIterationOptions};
use kising_core::moments::DEstimator;
use kising_core::sk_model::ModelParams;

fn config(temperature: f64, field: f64, variable: SweepVariable, values: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        base_params: ModelParams::uniform(20, temperature, 1.0, 1.0, field, 0).unwrap(),
        sweep_variable: variable,
        sweep_values: values,
        realizations: 5,
        methods: vec![Method::Nmf, Method::TapIterative, Method::TapCubic],
        d_estimator: DEstimator::Tanh,
        data_length: 20_000_000,
        burn_in_sweeps: 1000,
        lag_attempts: 1,
        tap_options: TapIterationOptions::default(),
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        output_path: None,
    }
}

fn delta(out: &SweepOutput, value: f64, method: Method) -> f64 {
    out.records.iter().find(|r| r.sweep_value == value && r.method == method).unwrap().delta_mean
}

#[test]
fn more_data_helps_every_method_at_t_3_7() {
    let mut c = config(3.7, 0.0, SweepVariable::DataLength, vec![2e6, 2e7]);
    c.realizations = 3;
    let out = sweep_data_length(&c).unwrap();
    for method in [Method::Nmf, Method::TapCubic, Method::TapIterative] {
        let (short, long) = (delta(&out, 2e6, method), delta(&out, 2e7, method));
        assert!(long < short, "{method:?}: {long} !< {short}");
    }
}

#[test]
fn short_data_makes_nmf_and_tap_alike_at_t_8() {
    let out = sweep_data_length(&config(8.0, 0.0, SweepVariable::DataLength, vec![2e6, 2e7])).unwrap();
    for l in [2e6, 2e7] {
        let nmf = delta(&out, l, Method::Nmf);
        let tap = delta(&out, l, Method::TapCubic);
        assert!((nmf - tap).abs() / nmf < 0.2, "L = {l}: nMF {nmf}, TAP {tap}");
    }
}

fn rms_deviation(rows: &[ScatterRow], length: u64, pick: fn(&ScatterRow) -> f64) -> f64 {
    let sel: Vec<f64> = rows.iter().filter(|r| r.data_length == length).map(|r| (pick(r) - r.j_true).powi(2)).collect();
    (sel.iter().sum::<f64>() / sel.len() as f64).sqrt()
}

#[test]
fn scatter_tightens_with_data_and_tap_schemes_coincide() {
    let rows = scatter_experiment(&config(3.7, 0.0, SweepVariable::DataLength, vec![2e6, 2e7])).unwrap();
    for pick in [|r: &ScatterRow| r.j_nmf, |r: &ScatterRow| r.j_tap_cubic] {
        let (short, long) = (rms_deviation(&rows, 2_000_000, pick), rms_deviation(&rows, 20_000_000, pick));
        assert!(long < short, "{long} !< {short}");
    }
    let gap = rows
        .iter()
        .filter(|r| r.data_length == 20_000_000)
        .map(|r| (r.j_tap_iter - r.j_tap_cubic).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-4, "max |J_iter - J_cubic| = {gap}");
}

#[test]
fn root_fraction_is_near_half_at_transition() {
    let out = root_fraction_sweep(&config(2.1, 0.5, SweepVariable::Temperature, vec![2.1])).unwrap();
    let fraction = out.records[0].fraction_three_real;
    assert!((fraction - 0.5).abs() <= 0.25, "fraction {fraction}");
}
