use cps_core::bench::BENCH_TASK_SLOTS;
use cps_core::inference::{grid_coeffs, lowest_loss_boundary, lowest_loss_interpolated};
use cps_core::model::{InputShape, ModelSpec};
use cps_core::probes::{theorem2_probe, theorem3_probe};
use cps_core::shift::{enumerate_task_grid, interpolate_tasks};
use cps_core::subspace::train_cps;
use cps_core::task::{filter_task, make_synthetic_tasks, train_test_split, Coeffs, SyntheticMode, SYNTH_IMG_SIDE};
use cps_core::trainer::TrainConfig;

fn main() {
    for (hidden, thr, max_ep) in [
        (12usize, 0.05f32, 250usize),
        (16, 0.05, 250),
        (24, 0.05, 250),
        (12, 0.02, 400),
        (16, 0.02, 400),
        (12, 0.1, 250),
    ] {
        let model = ModelSpec::dense(vec![hidden], InputShape::Flat { features: SYNTH_IMG_SIDE * SYNTH_IMG_SIDE }, 5).unwrap();
        let cfg = TrainConfig { max_epochs: max_ep, early_stop_loss: thr, ..TrainConfig::default() };
        let source = make_synthetic_tasks(1, 1, 15, 24, SyntheticMode::RotatedGaussians).unwrap().remove(0);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for slots in BENCH_TASK_SLOTS.iter() {
            let mut t = filter_task(&source, slots).unwrap();
            t.coarse = t.fine.clone();
            let (tr, te) = train_test_split(&t, 0.8, cfg.train_seed).unwrap();
            train.push(tr);
            test.push(te);
        }
        let b1 = train_cps(&model, &train, 1.0, &cfg).unwrap();
        let b0 = train_cps(&model, &train, 0.0, &cfg).unwrap();
        let fd = |s: &cps_core::subspace::Subspace| {
            let l = s.logs.last().unwrap();
            l.mean_dist_to_others.iter().sum::<f32>() / l.mean_dist_to_others.len() as f32
        };
        let q1 = theorem2_probe(&b1.logs).unwrap().final_quartile();
        let q0 = theorem2_probe(&b0.logs).unwrap().final_quartile();
        let half = interpolate_tasks(&train, &Coeffs::new(vec![0.5, 0.5, 0.0]).unwrap()).unwrap();
        let t3 = theorem3_probe(&b1, &b0, &half, &cfg, 10).unwrap();
        let input_grid = enumerate_task_grid(&test, 5).unwrap();
        let params_excl = grid_coeffs(10, 3, true).unwrap();
        let (mut i1, mut bd1, mut i0) = (0.0, 0.0, 0.0);
        for (_, task) in &input_grid {
            let norm = task.normalized();
            i1 += lowest_loss_interpolated(&b1, &norm, &params_excl).unwrap().accuracy;
            bd1 += lowest_loss_boundary(&b1, &norm).unwrap().accuracy;
            i0 += lowest_loss_interpolated(&b0, &norm, &params_excl).unwrap().accuracy;
        }
        let k = input_grid.len() as f64;
        println!(
            "hidden={hidden} thr={thr} ep={max_ep}: ratio={:.3} q=({q1:.3},{q0:.3}) t3=({:.4},{:.4}) intp1={:.4} bnd1={:.4} intp0={:.4} C6={}",
            fd(&b1) / fd(&b0),
            t3.regularized.cosine, t3.baseline.cosine,
            i1 / k, bd1 / k, i0 / k,
            (i1 / k >= bd1 / k) && (bd1 / k > i0 / k),
        );
    }
}
