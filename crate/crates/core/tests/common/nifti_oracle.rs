//! Independent NIfTI-1 fixtures: files assembled byte by byte from the format layout.

use evcseg::nifti::{read_nifti, read_nifti_image, write_nifti_image, DataType, Endian, WriteOptions};
use evcseg::volume::diagonal_affine;
use evcseg::Affine;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALL_TYPES: [DataType; 5] = [DataType::U8, DataType::I16, DataType::I32, DataType::F32, DataType::F64];

pub fn random_values(dt: DataType, shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || match dt {
        DataType::U8 => f64::from(rng.random::<u8>()),
        DataType::I16 => f64::from(rng.random::<i16>()),
        DataType::I32 => f64::from(rng.random::<i32>()),
        DataType::F32 => f64::from(rng.random_range(-1e6f32..1e6)),
        DataType::F64 => rng.random_range(-1e12..1e12),
    })
}

pub fn oblique_affine() -> Affine {
    #[rustfmt::skip]
    let a = Affine::new(
        0.0, -0.9, 0.0,  40.5,
        1.1,  0.0, 0.0, -60.25,
        0.0,  0.0, 2.0, -12.0,
        0.0,  0.0, 0.0,   1.0,
    );
    a
}

/// Every datatype, both byte orders, plain and gzip: values come back bit-exact.
pub fn round_trip_all_types() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dt in ALL_TYPES {
        for endian in [Endian::Little, Endian::Big] {
            for ext in ["nii", "nii.gz"] {
                let data = random_values(dt, &[5, 4, 3], &mut rng);
                let affine = oblique_affine();
                let path = dir.path().join(format!("{dt:?}_{endian:?}.{ext}"));
                write_nifti_image(&data, &affine, &path, WriteOptions { datatype: dt, endian })
                    .map_err(|e| e.to_string())?;
                let back = read_nifti_image(&path).map_err(|e| e.to_string())?;
                let bits_equal = back.data.shape() == data.shape()
                    && back.data.iter().zip(data.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
                if !bits_equal {
                    return Err(format!("{dt:?} {endian:?} {ext}: values differ"));
                }
                if back.header.datatype != dt.code() {
                    return Err(format!("{dt:?}: datatype code {} on read", back.header.datatype));
                }
                let gap = (back.affine() - affine).abs().max();
                if gap > 1e-5 {
                    return Err(format!("{dt:?} {endian:?} {ext}: affine off by {gap}"));
                }
            }
        }
    }
    Ok(())
}

pub fn put<const N: usize>(buf: &mut [u8], at: usize, bytes: [u8; N]) {
    buf[at..at + N].copy_from_slice(&bytes);
}

/// A big-endian file assembled field by field from the NIfTI-1 layout.
pub fn hand_built_big_endian(dims: [usize; 3], values: &[i16], slope: f32, inter: f32) -> Vec<u8> {
    let mut h = vec![0u8; 352];
    put(&mut h, 0, 348i32.to_be_bytes());
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (k, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * k, d.to_be_bytes());
    }
    put(&mut h, 70, 4i16.to_be_bytes()); // int16
    put(&mut h, 72, 16i16.to_be_bytes());
    let pixdim: [f32; 8] = [1.0, 2.0, 3.0, 4.0, 1.0, 1.0, 1.0, 1.0];
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * k, p.to_be_bytes());
    }
    put(&mut h, 108, 352f32.to_be_bytes());
    put(&mut h, 112, slope.to_be_bytes());
    put(&mut h, 116, inter.to_be_bytes());
    h[123] = 2;
    put(&mut h, 254, 1i16.to_be_bytes()); // sform_code
    let srow: [[f32; 4]; 3] = [[2.0, 0.0, 0.0, -5.0], [0.0, 3.0, 0.0, 6.0], [0.0, 0.0, 4.0, 7.0]];
    for (r, row) in srow.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            put(&mut h, 280 + 16 * r + 4 * c, v.to_be_bytes());
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    for v in values {
        h.extend_from_slice(&v.to_be_bytes());
    }
    h
}

/// Byte-swapped header and payload, with slope/intercept scaling.
pub fn byte_swapped_header() -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let dims = [3, 2, 2];
    let values: Vec<i16> = (0..12).map(|i| (i * 7 - 30) as i16).collect();
    let path = dir.path().join("swapped.nii");
    std::fs::write(&path, hand_built_big_endian(dims, &values, 0.5, 10.0)).unwrap();
    let v = read_nifti(&path).map_err(|e| e.to_string())?;
    if v.shape() != dims {
        return Err(format!("shape {:?}", v.shape()));
    }
    // file order is x fastest
    for (i, raw) in values.iter().enumerate() {
        let (x, y, z) = (i % 3, (i / 3) % 2, i / 6);
        let want = 0.5 * f64::from(*raw) + 10.0;
        if v.data()[[x, y, z]] != want {
            return Err(format!("voxel {:?}: {} != {want}", (x, y, z), v.data()[[x, y, z]]));
        }
    }
    let want = diagonal_affine([2.0, 3.0, 4.0]);
    let mut want = want;
    want[(0, 3)] = -5.0;
    want[(1, 3)] = 6.0;
    want[(2, 3)] = 7.0;
    if (v.affine() - want).abs().max() > 1e-9 {
        return Err(format!("affine {}", v.affine()));
    }
    Ok(())
}

