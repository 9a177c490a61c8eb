// scan seeds/config for the M=1 pure-cosine fit
use gpssm::data::{Dims, TrajectoryDataset};
use gpssm::spectral::{reconstruction_loss, train, AutoencoderConfig};
use nalgebra::DVector;

fn main() {
    let points: Vec<(f64, f64)> = (0..40)
        .map(|i| {
            let z = i as f64 * 0.25 - 5.0;
            (z, 1.3 * (0.8 * z + 0.4).cos())
        })
        .collect();
    let inputs = points.iter().map(|(z, _)| DVector::from_row_slice(&[*z])).collect();
    let targets = points.iter().map(|(_, x)| DVector::from_row_slice(&[*x])).collect();
    let data = TrajectoryDataset::new(Dims::new(1, 0).unwrap(), inputs, targets, "t", 1.0).unwrap();

    for halfwidth in [1.0, 3.0] {
        for seed in 0..10u64 {
            let mut config = AutoencoderConfig::new(1);
            config.freq_penalty = 0.0;
            config.epochs = 4000;
            config.learning_rate = 0.05;
            config.freq_init_halfwidth = halfwidth;
            config.seed = seed;
            let out = train(&data, 0, &config).unwrap();
            let fl = reconstruction_loss(&out.features, &data, 0, 0.0).unwrap();
            println!("hw={} seed={} final={:.3e}", halfwidth, seed, fl);
        }
    }
}
