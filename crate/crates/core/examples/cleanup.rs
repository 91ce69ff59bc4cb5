//! Hole filling and largest-component selection.

use evcseg::postproc::{cleanup, label_components, Connectivity};
use evcseg::{Affine, LabelMask};

fn main() {
    let n = 16;
    let c = 7.5;
    let d2 = |p: [usize; 3]| p.iter().map(|&v| (v as f64 - c).powi(2)).sum::<f64>();
    // hollow shell, a stray blob in a corner
    let m = LabelMask::from_fn([n; 3], Affine::identity(), |p| {
        let r = d2(p);
        (r <= 36.0 && r > 9.0) || (p[0] < 2 && p[1] < 2 && p[2] < 2)
    });
    let before = label_components(&m, 1, Connectivity::TwentySix);
    let holes = label_components(&m, 0, Connectivity::Six);
    println!("before: {} voxels, {} foreground components, {} background components", m.count(), before.sizes.len(), holes.sizes.len());

    let out = cleanup(&m);
    let after = label_components(&out.mask, 1, Connectivity::TwentySix);
    let solid = LabelMask::from_fn([n; 3], Affine::identity(), |p| d2(p) <= 36.0);
    println!("after: {} voxels, {} component(s), equals the solid ball: {}", out.mask.count(), after.sizes.len(), out.mask == solid);
    println!("cleanup twice changes nothing: {}", cleanup(&out.mask).mask == out.mask);
}
