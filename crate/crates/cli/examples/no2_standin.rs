//! Writes the synthetic NO2 stand-in to data/no2_{train,test}.csv.
//!
//! 219 sites uniform over a 0.04° × 0.07° box around York. On the
//! preprocessed scale 100·(x − mean) the field is a CH(v = 2.5, α = 2,
//! β = 1.5, σ² = 1) draw; the response is 0.018 + 0.005·field + N(0, 1e-6)
//! ppm, rounded to 1e-6. The first 154 sites are training data.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rescaled_gp::covariance::CovarianceModel;
use rescaled_gp::experiments::{gen_gp_truth, uniform_design};
use rescaled_gp::Points;

const SITES: usize = 219;
const TRAIN: usize = 154;
const SEED: u64 = 202_212;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let u = uniform_design(SITES, 2, SEED)?;
    let coords: Vec<[f64; 2]> = u
        .iter()
        .map(|p| {
            let lat = 53.94 + 0.04 * p[0];
            let lon = -1.12 + 0.07 * p[1];
            [(lat * 1e5).round() / 1e5, (lon * 1e5).round() / 1e5]
        })
        .collect();
    let mean = [0, 1].map(|k| coords.iter().map(|c| c[k]).sum::<f64>() / SITES as f64);
    let scaled = Points::new(
        2,
        coords
            .iter()
            .flat_map(|c| [100.0 * (c[0] - mean[0]), 100.0 * (c[1] - mean[1])])
            .collect(),
    )?;
    let model = CovarianceModel::ch(2.5, 2.0, 1.5, 1.0)?;
    let field = gen_gp_truth(&scaled, &model, SEED + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let y: Vec<f64> = field
        .iter()
        .map(|f| {
            let z: f64 = StandardNormal.sample(&mut rng);
            ((0.018 + 0.005 * f + 1e-3 * z) * 1e6).round() / 1e6
        })
        .collect();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for (name, range) in [("no2_train.csv", 0..TRAIN), ("no2_test.csv", TRAIN..SITES)] {
        let mut s = String::from("x1,x2,y\n");
        for i in range {
            writeln!(s, "{},{},{}", coords[i][0], coords[i][1], y[i])?;
        }
        std::fs::write(dir.join(name), s)?;
    }
    Ok(())
}
