// print reference states for the golden-run regression test
use gpssm::sim::{collect_run, UnicycleTruth, UnicycleWorld};
use std::f64::consts::PI;

fn main() {
    let world = UnicycleWorld {
        actuation_lag: 0.0,
        position_noise_std: 0.0,
        heading_noise_std: 0.0,
        ..UnicycleWorld::default()
    };
    let run = collect_run(&world, &[], UnicycleTruth::at(1.5, 0.0, PI / 2.0), 120.0, 10.0, 0).unwrap();
    let mut max_err: f64 = 0.0;
    for t in 200..run.dataset.len() {
        let x = run.dataset.input(t)[0];
        let y = run.dataset.input(t)[1];
        max_err = max_err.max(((x * x + y * y).sqrt() - 1.5).abs());
    }
    println!("max radial error after transient: {}", max_err);
    for t in [300usize, 600, 900] {
        println!("({}, {:?}, {:?}),", t, run.dataset.input(t)[0], run.dataset.input(t)[1]);
    }
}
