//! Write and read NIfTI-1 files in every supported datatype, gzip and
//! big-endian included.

use evcseg::nifti::{read_nifti_image, write_nifti_image, DataType, Endian, WriteOptions};
use evcseg::volume::diagonal_affine;
use ndarray::{ArrayD, IxDyn};

fn main() -> evcseg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = ArrayD::from_shape_fn(IxDyn(&[4, 3, 2]), |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64);
    let affine = diagonal_affine([0.9, 0.9, 1.5]);
    for dt in [DataType::U8, DataType::I16, DataType::I32, DataType::F32, DataType::F64] {
        for (endian, ext) in [(Endian::Little, "nii"), (Endian::Big, "nii.gz")] {
            let path = dir.path().join(format!("{dt:?}_{endian:?}.{ext}"));
            write_nifti_image(&data, &affine, &path, WriteOptions { datatype: dt, endian })?;
            let back = read_nifti_image(&path)?;
            let same = back.data == data;
            println!(
                "{:<28} {:>4} bytes  datatype {:>2}  round trip {}",
                path.file_name().unwrap().to_string_lossy(),
                std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
                dt.code(),
                if same { "exact" } else { "DIFFERS" }
            );
        }
    }
    Ok(())
}
