use cps_core::hypernet::{train_continual, HyperSpec};
use cps_core::model::{InputShape, ModelSpec};
use cps_core::shift::apply_rotation;
use cps_core::task::{make_synthetic_tasks, SyntheticMode, SYNTH_IMG_SIDE};
use cps_core::trainer::TrainConfig;

fn run(seed: u64, spc: usize, epochs: usize, angles: &[f32]) -> (f64, f64) {
    let base = make_synthetic_tasks(seed, 1, 5, spc, SyntheticMode::RotatedGaussians)
        .unwrap()
        .remove(0);
    let tasks: Vec<_> = angles
        .iter()
        .map(|&a| if a == 0.0 { base.clone() } else { apply_rotation(&base, a).unwrap() })
        .collect();
    let spec = HyperSpec {
        meta_widths: vec![],
        base: ModelSpec::dense(vec![], InputShape::Flat { features: SYNTH_IMG_SIDE * SYNTH_IMG_SIDE }, 5).unwrap(),
    };
    let cfg = TrainConfig { max_epochs: epochs, early_stop_loss: 0.05, ..TrainConfig::default() };
    let (_, r1) = train_continual(&spec, &tasks, 0.01, 1.0, &cfg).unwrap();
    let (_, r0) = train_continual(&spec, &tasks, 0.01, 0.0, &cfg).unwrap();
    (r1.mean_after_final(), r0.mean_after_final())
}

fn main() {
    for ep in [80usize, 90, 100, 110, 120] {
        let mut line = format!("ep={ep}:");
        for seed in [1u64, 2, 3] {
            let (b1, b0) = run(seed, 100, ep, &[0.0, 20.0, 40.0]);
            line.push_str(&format!(" s{seed}:{:+.4}", b1 - b0));
        }
        println!("{line}");
    }
}
