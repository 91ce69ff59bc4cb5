//! Compare the analytic gradient of a small network with central finite
//! differences on a handful of parameters.

use evcseg::evnet::{backward, forward_train, init_params, masks_to_target, soft_dice_grad, soft_dice_loss, EvNetConfig, Tensor5};
use evcseg::{Affine, LabelMask};
use rand::{Rng, SeedableRng};

fn main() -> evcseg::Result<()> {
    let cfg = EvNetConfig::toy();
    let mut params = init_params(&cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let x = Tensor5::from_fn([1, 1, 4, 4, 4], |_| rng.random_range(-1.0..1.0));
    let mask = LabelMask::from_fn([4; 3], Affine::identity(), |p| p[0] + p[1] > 3);
    let target = masks_to_target(&[mask])?;

    let loss = |p: &evcseg::evnet::Params| -> evcseg::Result<f64> {
        let c = forward_train(&x, p, &cfg)?;
        Ok(soft_dice_loss(c.output(), &target)?.value)
    };
    let cache = forward_train(&x, &params, &cfg)?;
    let g = soft_dice_grad(cache.output(), &target)?;
    let grads = backward(&cache, &params, &cfg, &g)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.named().into_iter().map(|(n, _, v)| (n, v.to_vec())).collect();

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, (name, ga)) in analytic.iter().enumerate() {
        let i = ga.len() / 2;
        let bump = |params: &mut evcseg::evnet::Params, d: f64| {
            params.named_mut()[k].1[i] += d;
        };
        bump(&mut params, eps);
        let up = loss(&params)?;
        bump(&mut params, -2.0 * eps);
        let down = loss(&params)?;
        bump(&mut params, eps);
        let numeric = (up - down) / (2.0 * eps);
        let rel = (ga[i] - numeric).abs() / ga[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        println!("{name:<22} analytic {:+.6e}  numeric {numeric:+.6e}  rel {rel:.1e}", ga[i]);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
