use cps_core::bench;
use cps_core::hypernet::train_continual;

fn main() {
    let (hspec, htasks, hcfg) = bench::hypernet_three_task().unwrap();
    let (s1, _) = train_continual(&hspec, &htasks, 0.01, 1.0, &hcfg).unwrap();
    let (s0, _) = train_continual(&hspec, &htasks, 0.01, 0.0, &hcfg).unwrap();
    let diff: f64 = s1.theta.values().iter().zip(s0.theta.values())
        .map(|(a, b)| ((a - b).abs()) as f64).sum();
    println!("theta L1 diff between beta runs: {diff}");
    let d_snap: f64 = s1.snapshots[0].values().iter().zip(s0.snapshots[0].values())
        .map(|(a, b)| ((a - b).abs()) as f64).sum();
    println!("snapshot0 L1 diff: {d_snap}");
    // Mean cosine distance from final theta to snapshots per run.
    for (name, s) in [("beta1", &s1), ("beta0", &s0)] {
        let mut acc = 0.0f32;
        for snap in &s.snapshots[..2] {
            acc += cps_core::params::cosine_distance(&s.theta, snap).unwrap();
        }
        println!("{name}: mean cos dist to first-2 snapshots = {}", acc / 2.0);
    }
}
