//! Dense CRF refinement of a noisy sphere prediction, brute force and filtered.

use evcseg::crf::{refine, CrfBackend, CrfConfig};
use evcseg::metrics::dice;
use evcseg::{Affine, LabelMask, ProbMap, Volume};
use ndarray::Array3;
use rand::{Rng, SeedableRng};

fn main() -> evcseg::Result<()> {
    let n = 12;
    let c = (n as f64 - 1.0) / 2.0;
    let truth = LabelMask::from_fn([n; 3], Affine::identity(), |p| {
        p.iter().map(|&v| (v as f64 - c).powi(2)).sum::<f64>() <= 16.0
    });
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let fg = Array3::from_shape_fn((n, n, n), |(x, y, z)| {
        let inside = truth.data()[[x, y, z]] == 1;
        let flip = rng.random_bool(0.05);
        if inside != flip { 0.8 } else { 0.2 }
    });
    let image = Volume::from_data(truth.data().mapv(|v| if v == 1 { 0.7 } else { 0.1 }));
    let probs = ProbMap::from_foreground(&fg)?;
    let raw = probs.argmax_mask(Affine::identity());
    println!("argmax of the unary: dice {:.4}", dice(&truth, &raw)?);

    for backend in [CrfBackend::Brute, CrfBackend::Filtered] {
        let cfg = CrfConfig { backend, ..CrfConfig::default() };
        let (mask, state) = refine(&probs, &image, &cfg)?;
        println!(
            "{backend:?}: dice {:.4}, free energy {:?}",
            dice(&truth, &mask)?,
            state.free_energy_trace.iter().map(|e| format!("{e:.1}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
