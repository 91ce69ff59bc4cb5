//! Random intensity and rigid augmentation applied to an image/mask pair.

use evcseg::augment::{augment_pair, AugmentConfig, RigidTransform, apply_rigid};
use evcseg::metrics::dice;
use evcseg::{Affine, LabelMask, Volume};

fn main() -> evcseg::Result<()> {
    let n = 24;
    let mask = LabelMask::from_fn([n; 3], Affine::identity(), |p| {
        (4..20).contains(&p[0]) && (10..14).contains(&p[1]) && (10..14).contains(&p[2])
    });
    let image = Volume::from_data(mask.data().mapv(|v| 0.2 + 0.6 * f64::from(v)));

    let quarter = RigidTransform::from_euler_deg([0.0, 0.0, 90.0], [0.0; 3]);
    let (_, turned) = apply_rigid(&image, &mask, &quarter)?;
    let expected = LabelMask::from_fn([n; 3], Affine::identity(), |p| {
        (4..20).contains(&p[1]) && (10..14).contains(&p[0]) && (10..14).contains(&p[2])
    });
    println!("90° about z: dice vs analytic {:.4}", dice(&expected, &turned)?);

    let cfg = AugmentConfig { seed: 11, ..AugmentConfig::default() };
    for i in 0..4 {
        let (img, m) = augment_pair(&image, &mask, &cfg, i)?;
        let (lo, hi) = img.min_max();
        println!("item {i}: {} mask voxels (was {}), intensity [{lo:.3}, {hi:.3}], dice vs original {:.3}", m.count(), mask.count(), dice(&mask, &m)?);
    }
    Ok(())
}
