use cps_core::bench;
use cps_core::inference::{grid_coeffs, lowest_loss_boundary, lowest_loss_interpolated};
use cps_core::shift::enumerate_task_grid;
use cps_core::subspace::train_cps;

fn main() {
    let bench = bench::standard_three_task().unwrap();
    let beta1 = train_cps(&bench.model, &bench.train, 1.0, &bench.cfg).unwrap();
    let beta0 = train_cps(&bench.model, &bench.train, 0.0, &bench.cfg).unwrap();
    let input_grid = enumerate_task_grid(&bench.test, 5).unwrap();
    for segments in [5usize, 6, 8, 10] {
        let params_excl = grid_coeffs(segments, 3, true).unwrap();
        let mut acc_intp1 = 0.0;
        let mut acc_bnd1 = 0.0;
        let mut acc_intp0 = 0.0;
        for (_, task) in &input_grid {
            let norm = task.normalized();
            acc_intp1 += lowest_loss_interpolated(&beta1, &norm, &params_excl).unwrap().accuracy;
            acc_bnd1 += lowest_loss_boundary(&beta1, &norm).unwrap().accuracy;
            acc_intp0 += lowest_loss_interpolated(&beta0, &norm, &params_excl).unwrap().accuracy;
        }
        let k = input_grid.len() as f64;
        println!(
            "segments={segments} (grid {}): intp(b1)={:.4} bnd(b1)={:.4} intp(b0)={:.4} | need intp1>=bnd1>intp0: {}",
            params_excl.len(),
            acc_intp1 / k,
            acc_bnd1 / k,
            acc_intp0 / k,
            acc_intp1 >= acc_bnd1 && acc_bnd1 > acc_intp0 && acc_intp1 > acc_intp0
        );
    }
}
