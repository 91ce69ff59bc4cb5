//! Reorient, resample, pad and halve an oblique anisotropic volume, then map a
//! network-grid mask back to the native grid.

use evcseg::volume::{mask_to_native, preprocess, GridTarget};
use evcseg::{Affine, LabelMask, Volume};
use ndarray::Array3;

fn main() -> evcseg::Result<()> {
    // 40×36×20 voxels of 1.2×1.2×2.5 mm, axes stored as (−x, z, y)
    let shape = (40, 36, 20);
    #[rustfmt::skip]
    let affine = Affine::new(
        -1.2, 0.0, 0.0,  24.0,
         0.0, 0.0, 2.5, -25.0,
         0.0, 1.2, 0.0, -21.0,
         0.0, 0.0, 0.0,   1.0,
    );
    let c = [19.5, 17.5, 9.5];
    let ball = |x: usize, y: usize, z: usize| {
        let d = [
            (x as f64 - c[0]) * 1.2,
            (y as f64 - c[1]) * 1.2,
            (z as f64 - c[2]) * 2.5,
        ];
        d.iter().map(|v| v * v).sum::<f64>() <= 14.0f64.powi(2)
    };
    let image = Volume::new(Array3::from_shape_fn(shape, |(x, y, z)| ball(x, y, z) as u8 as f64), affine)?;

    let (grid, prov) = preprocess(&image, &GridTarget::DESK)?;
    println!("native {:?} -> network grid {:?}", image.shape(), grid.shape());
    println!("resampled {:?}, pad offsets {:?}", prov.resampled_shape, prov.pad_offsets);

    let grid_mask = LabelMask::new(grid.data().mapv(|v| (v >= 0.5) as u8), *grid.affine())?;
    let native = mask_to_native(&grid_mask, &image, &prov)?;
    let truth = LabelMask::from_fn(image.shape(), affine, |[x, y, z]| ball(x, y, z));
    println!(
        "ball: {} native voxels, {} after the round trip, dice {:.4}",
        truth.count(),
        native.count(),
        evcseg::metrics::dice(&truth, &native)?
    );
    println!("{}", serde_json::to_string_pretty(&prov)?);
    Ok(())
}
