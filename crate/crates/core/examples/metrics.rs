//! Overlap and surface-distance metrics on small hand-made masks.

use evcseg::metrics::{balanced_ahd, dice, edt, jaccard};
use evcseg::{Affine, LabelMask};

fn main() -> evcseg::Result<()> {
    // |A| = 4, |B| = 6, |A ∩ B| = 3
    let a = LabelMask::from_fn([10, 1, 1], Affine::identity(), |p| p[0] < 4);
    let b = LabelMask::from_fn([10, 1, 1], Affine::identity(), |p| (1..7).contains(&p[0]));
    println!("dice {} jaccard {}", dice(&a, &b)?, jaccard(&a, &b)?);

    let ball = |r: f64| {
        LabelMask::from_fn([21; 3], Affine::identity(), move |p| {
            p.iter().map(|&v| (v as f64 - 10.0).powi(2)).sum::<f64>() <= r * r
        })
    };
    let truth = ball(6.0);
    for r in [6.0, 5.0, 7.0] {
        println!("ball r=6 vs r={r}: balanced AHD {:.3} voxels", balanced_ahd(&truth, &ball(r), None)?);
    }
    let empty = LabelMask::zeros([21; 3], Affine::identity());
    println!("empty prediction: {}", balanced_ahd(&truth, &empty, None)?);

    let d = edt(&truth, Some([1.0, 1.0, 2.0]))?;
    println!("distance to the ball from a corner with 1×1×2 mm voxels: {:.3} mm", d[[0, 0, 0]]);
    Ok(())
}
