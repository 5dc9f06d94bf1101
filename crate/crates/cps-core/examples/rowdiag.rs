use cps_core::bench;
use cps_core::inference::{grid_coeffs, lowest_loss_boundary, lowest_loss_interpolated};
use cps_core::shift::enumerate_task_grid;
use cps_core::subspace::train_cps;

fn main() {
    let bench = bench::standard_three_task().unwrap();
    let b1 = train_cps(&bench.model, &bench.train, 1.0, &bench.cfg).unwrap();
    let b0 = train_cps(&bench.model, &bench.train, 0.0, &bench.cfg).unwrap();
    let input_grid = enumerate_task_grid(&bench.test, 5).unwrap();
    let params_excl = grid_coeffs(10, 3, true).unwrap();
    // Bucket rows by how mixed the input coefficients are.
    let mut buckets: Vec<(String, Vec<(f64, f64, f64)>)> = vec![
        ("pure (one-hot)".into(), vec![]),
        ("dominant (max>=0.75 of sum)".into(), vec![]),
        ("mixed".into(), vec![]),
    ];
    for (c, task) in &input_grid {
        let norm = task.normalized();
        let i1 = lowest_loss_interpolated(&b1, &norm, &params_excl).unwrap().accuracy;
        let bd = lowest_loss_boundary(&b1, &norm).unwrap().accuracy;
        let i0 = lowest_loss_interpolated(&b0, &norm, &params_excl).unwrap().accuracy;
        let sum: f32 = c.alpha().iter().sum();
        let max = c.alpha().iter().cloned().fold(0.0f32, f32::max);
        let idx = if c.is_one_hot() { 0 } else if max / sum >= 0.75 { 1 } else { 2 };
        buckets[idx].1.push((i1, bd, i0));
    }
    for (name, rows) in &buckets {
        let k = rows.len() as f64;
        let s: (f64, f64, f64) = rows.iter().fold((0.0, 0.0, 0.0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2));
        println!("{name}: n={} intp1={:.4} bnd1={:.4} intp0={:.4}", rows.len(), s.0 / k, s.1 / k, s.2 / k);
    }
}
