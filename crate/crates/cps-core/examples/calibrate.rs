// Scratch calibration probe for the comparative benchmark checks.

use cps_core::bench;
use cps_core::inference::{grid_coeffs, lowest_loss_boundary, lowest_loss_interpolated};
use cps_core::probes::{theorem2_probe, theorem3_probe};
use cps_core::shift::{enumerate_task_grid, interpolate_tasks};
use cps_core::subspace::train_cps;
use cps_core::task::Coeffs;

fn main() {
    let t0 = std::time::Instant::now();
    let bench = bench::standard_three_task().unwrap();
    let beta1 = train_cps(&bench.model, &bench.train, 1.0, &bench.cfg).unwrap();
    let beta0 = train_cps(&bench.model, &bench.train, 0.0, &bench.cfg).unwrap();
    println!(
        "trained: beta1 epochs={} beta0 epochs={} ({:?})",
        beta1.logs.len(),
        beta0.logs.len(),
        t0.elapsed()
    );

    // Criterion 3: compression ratio.
    let final_dist = |s: &cps_core::subspace::Subspace| {
        let log = s.logs.last().unwrap();
        log.mean_dist_to_others.iter().sum::<f32>() / log.mean_dist_to_others.len() as f32
    };
    let d1 = final_dist(&beta1);
    let d0 = final_dist(&beta0);
    println!("compression: dist(beta1)={d1:.6} dist(beta0)={d0:.6} ratio={:.4}", d1 / d0);

    // Criterion 4: theorem-2 quartiles.
    let q1 = theorem2_probe(&beta1.logs).unwrap();
    let q0 = theorem2_probe(&beta0.logs).unwrap();
    println!(
        "theorem2: beta1 quartiles={:?}\n          beta0 quartiles={:?}",
        q1.quartile_mean_similarity, q0.quartile_mean_similarity
    );

    // Criterion 5: theorem-3 nearest point for a 50/50 interpolated task.
    let half = interpolate_tasks(
        &bench.train,
        &Coeffs::new(vec![0.5, 0.5, 0.0]).unwrap(),
    )
    .unwrap();
    let t3 = theorem3_probe(&beta1, &beta0, &half, &bench.cfg, 10).unwrap();
    println!(
        "theorem3: beta1 cos={:.6} eucl={:.4} | beta0 cos={:.6} eucl={:.4} (gt epochs {})",
        t3.regularized.cosine,
        t3.regularized.euclidean,
        t3.baseline.cosine,
        t3.baseline.euclidean,
        t3.ground_truth_epochs
    );

    // Criterion 6: table-2 ordering over the 124-task grid.
    let t1 = std::time::Instant::now();
    let input_grid = enumerate_task_grid(&bench.test, 5).unwrap();
    let params_excl = grid_coeffs(10, 3, true).unwrap();
    println!("grid sizes: tasks={} params={}", input_grid.len(), params_excl.len());
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
        "table2: intp(b1)={:.4} boundary(b1)={:.4} intp(b0)={:.4}  ({:?})",
        acc_intp1 / k,
        acc_bnd1 / k,
        acc_intp0 / k,
        t1.elapsed()
    );

    // Criterion 7: hypernet ordering.
    let t2 = std::time::Instant::now();
    let (hspec, htasks, hcfg) = bench::hypernet_three_task().unwrap();
    let (_, rep1) = cps_core::hypernet::train_continual(&hspec, &htasks, 0.01, 1.0, &hcfg).unwrap();
    let (_, rep0) = cps_core::hypernet::train_continual(&hspec, &htasks, 0.01, 0.0, &hcfg).unwrap();
    println!(
        "hypernet: beta1 after_each={:?} after_final={:?} mean={:.4}",
        rep1.after_each, rep1.after_final, rep1.mean_after_final()
    );
    println!(
        "          beta0 after_each={:?} after_final={:?} mean={:.4} ({:?})",
        rep0.after_each, rep0.after_final, rep0.mean_after_final(),
        t2.elapsed()
    );
    println!("total {:?}", t0.elapsed());
}
