mod common;

use common::nifti_oracle::*;
use evcseg::nifti::{read_mask, read_nifti, read_probmap, write_nifti, write_nifti_image, write_probmap, DataType, Endian, WriteOptions};
use evcseg::{Affine, Error, LabelMask, ProbMap, Volume};
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn all_datatypes_round_trip_bit_exact() {
    round_trip_all_types().unwrap();
}

#[test]
fn byte_swapped_file_reads_with_scaling() {
    byte_swapped_header().unwrap();
}

#[test]
fn zero_slope_means_unscaled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("noscale.nii");
    std::fs::write(&path, hand_built_big_endian([2, 1, 1], &[3, -4], 0.0, 5.0)).unwrap();
    let v = read_nifti(&path).unwrap();
    assert_eq!(v.data().iter().copied().collect::<Vec<_>>(), vec![3.0, -4.0]);
}

#[test]
fn typed_helpers_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let affine = oblique_affine();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vol = Volume::new(Array3::from_shape_fn((4, 5, 6), |_| f64::from(rng.random::<f32>())), affine).unwrap();
    write_nifti(&vol, dir.path().join("v.nii.gz")).unwrap();
    assert_eq!(read_nifti(dir.path().join("v.nii.gz")).unwrap().data(), vol.data());

    let mask = LabelMask::from_fn([4, 5, 6], affine, |p| (p[0] + p[2]) % 3 == 0);
    write_nifti(&mask, dir.path().join("m.nii")).unwrap();
    assert_eq!(read_mask(dir.path().join("m.nii")).unwrap().data(), mask.data());

    let fg = Array3::from_shape_fn((4, 5, 6), |_| rng.random_range(0.0..1.0));
    let p = ProbMap::from_foreground(&fg).unwrap();
    write_probmap(&p, &affine, dir.path().join("p.nii.gz")).unwrap();
    let (q, a) = read_probmap(dir.path().join("p.nii.gz")).unwrap();
    assert_eq!(q.data(), p.data());
    assert!((a - affine).abs().max() < 1e-5);
}

#[test]
fn truncated_and_unsupported_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = hand_built_big_endian([3, 2, 2], &[1; 12], 1.0, 0.0);
    bytes.truncate(bytes.len() - 4);
    let p = dir.path().join("short.nii");
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(read_nifti(&p), Err(Error::Truncated { .. })));

    let mut bytes = hand_built_big_endian([3, 2, 2], &[1; 12], 1.0, 0.0);
    put(&mut bytes, 70, 128i16.to_be_bytes()); // RGB
    let p = dir.path().join("rgb.nii");
    std::fs::write(&p, &bytes).unwrap();
    let err = read_nifti(&p).unwrap_err();
    assert!(matches!(err, Error::UnsupportedDatatype(128)));
    assert_eq!(err.exit_code(), 3);

    let p = dir.path().join("junk.nii");
    std::fs::write(&p, vec![7u8; 400]).unwrap();
    assert!(matches!(read_nifti(&p), Err(Error::Format { .. })));
}

#[test]
fn non_binary_mask_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("labels.nii");
    let data = ArrayD::from_shape_vec(IxDyn(&[2, 1, 1]), vec![0.0, 2.0]).unwrap();
    write_nifti_image(&data, &Affine::identity(), &p, WriteOptions { datatype: DataType::U8, endian: Endian::Little }).unwrap();
    assert!(read_mask(&p).is_err());
}
