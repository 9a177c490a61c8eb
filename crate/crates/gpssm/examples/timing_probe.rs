// quick probe of rollout timing behavior
use gpssm::data::{ControlInput, SystemState, Dims, TrajectoryDataset};
use gpssm::gp::{GpssmPrior, WeightPosterior};
use gpssm::rollout::{draw_models, rollout, NoiseMode, RolloutDynamics};
use gpssm::spectral::SpectralFeatureSet;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let m = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let freq = DMatrix::from_fn(m, 2, |_, _| rng.random_range(-1.5..1.5));
    let amp = DVector::from_fn(m, |_, _| rng.random_range(0.1..1.0));
    let phase = DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
    let features = SpectralFeatureSet::new(freq, amp, phase).unwrap();
    let prior = GpssmPrior::from_features(&features, 1.0, 0.05, 0.02).unwrap();
    let inputs: Vec<DVector<f64>> = (0..12).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
    let targets: Vec<DVector<f64>> = (0..12).map(|_| DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0))).collect();
    let data = TrajectoryDataset::new(Dims { d: 1, d_u: 1 }, inputs, targets, "t", 1.0).unwrap();
    let post = WeightPosterior::condition(&prior, &features, &data, 0).unwrap();
    let dynamics = RolloutDynamics::new(vec![features], &[0.05], 0.02, vec![]).unwrap();
    let posts = vec![post];
    let start = SystemState::from_slice(&[0.1]).unwrap();

    for (r, h) in [(64usize, 128usize), (128, 128), (64, 256), (256, 128), (64, 512)] {
        let models = draw_models(&posts, r, 1).unwrap();
        let controls: Vec<ControlInput> = (0..h).map(|_| ControlInput::from_slice(&[0.3]).unwrap()).collect();
        rollout(&dynamics, &models, &start, &controls, NoiseMode::Off, 1).unwrap();
        let t0 = std::time::Instant::now();
        for _ in 0..5 {
            rollout(&dynamics, &models, &start, &controls, NoiseMode::Off, 1).unwrap();
        }
        println!("R={:3} H={:3}: {:.3} ms", r, h, t0.elapsed().as_secs_f64() * 200.0);
    }
}
