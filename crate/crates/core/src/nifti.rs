//! NIfTI-1 single-file (`.nii`, `.nii.gz`) and header/image pair reader and
//! writer, plus a minimal raw format used by tests:
//! three little-endian `u32` dimensions followed by `f32` voxels, x fastest.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::Matrix3;
use ndarray::{Array3, Array4, ArrayD, IxDyn, ShapeBuilder};

use crate::volume::{linear_part, Affine, LabelMask, ProbMap, Volume};
use crate::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::I32 => 8,
            DataType::F32 => 16,
            DataType::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => DataType::U8,
            4 => DataType::I16,
            8 => DataType::I32,
            16 => DataType::F32,
            64 => DataType::F64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 | DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }
}

/// The fields of the 348-byte header this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub descrip: [u8; 80],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: DataType::F32.code(),
            bitpix: 32,
            pixdim: [1.0; 8],
            vox_offset: SINGLE_FILE_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            descrip: [0; 80],
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]],
            magic: *MAGIC_SINGLE,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Cursor<'_> {
    fn take<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[at..at + N]);
        if self.endian == Endian::Big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.take(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.take(at))
    }
}

struct Sink {
    bytes: Vec<u8>,
    endian: Endian,
}

impl Sink {
    fn put<const N: usize>(&mut self, at: usize, mut le: [u8; N]) {
        if self.endian == Endian::Big {
            le.reverse();
        }
        self.bytes[at..at + N].copy_from_slice(&le);
    }
    fn i16(&mut self, at: usize, v: i16) {
        self.put(at, v.to_le_bytes());
    }
    fn i32(&mut self, at: usize, v: i32) {
        self.put(at, v.to_le_bytes());
    }
    fn f32(&mut self, at: usize, v: f32) {
        self.put(at, v.to_le_bytes());
    }
}

impl NiftiHeader {
    /// Parse a header, detecting byte order from `sizeof_hdr`.
    pub fn parse(bytes: &[u8], path: &Path) -> Result<(Self, Endian)> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::format(
                path,
                format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
            ));
        }
        let raw = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let endian = if raw == HEADER_SIZE as i32 {
            Endian::Little
        } else if raw.swap_bytes() == HEADER_SIZE as i32 {
            Endian::Big
        } else {
            return Err(Error::format(path, format!("sizeof_hdr is {raw}, expected 348")));
        };
        let c = Cursor { bytes, endian };
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[344..348]);
        if &magic != MAGIC_SINGLE && &magic != MAGIC_PAIR {
            return Err(Error::format(path, format!("bad magic {magic:?}")));
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = c.i16(40 + 2 * i);
        }
        if !(1..=7).contains(&dim[0]) || dim[1..=dim[0] as usize].iter().any(|&d| d < 1) {
            return Err(Error::format(path, format!("invalid dim {dim:?}")));
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = c.f32(76 + 4 * i);
        }
        let mut descrip = [0u8; 80];
        descrip.copy_from_slice(&bytes[148..228]);
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = c.f32(280 + 16 * r + 4 * k);
            }
        }
        let header = NiftiHeader {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype: c.i16(70),
            bitpix: c.i16(72),
            pixdim,
            vox_offset: c.f32(108),
            scl_slope: c.f32(112),
            scl_inter: c.f32(116),
            xyzt_units: bytes[123],
            descrip,
            qform_code: c.i16(252),
            sform_code: c.i16(254),
            quatern: [c.f32(256), c.f32(260), c.f32(264)],
            qoffset: [c.f32(268), c.f32(272), c.f32(276)],
            srow,
            magic,
        };
        Ok((header, endian))
    }

    pub fn to_bytes(&self, endian: Endian) -> Vec<u8> {
        let mut s = Sink {
            bytes: vec![0u8; HEADER_SIZE],
            endian,
        };
        s.i32(0, self.sizeof_hdr);
        for (i, &d) in self.dim.iter().enumerate() {
            s.i16(40 + 2 * i, d);
        }
        s.i16(70, self.datatype);
        s.i16(72, self.bitpix);
        for (i, &p) in self.pixdim.iter().enumerate() {
            s.f32(76 + 4 * i, p);
        }
        s.f32(108, self.vox_offset);
        s.f32(112, self.scl_slope);
        s.f32(116, self.scl_inter);
        s.bytes[123] = self.xyzt_units;
        s.bytes[148..228].copy_from_slice(&self.descrip);
        s.i16(252, self.qform_code);
        s.i16(254, self.sform_code);
        for k in 0..3 {
            s.f32(256 + 4 * k, self.quatern[k]);
            s.f32(268 + 4 * k, self.qoffset[k]);
        }
        for (r, row) in self.srow.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                s.f32(280 + 16 * r + 4 * k, v);
            }
        }
        s.bytes[344..348].copy_from_slice(&self.magic);
        s.bytes
    }

    pub fn ndim(&self) -> usize {
        self.dim[0] as usize
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dim[1..=self.ndim()].iter().map(|&d| d as usize).collect()
    }

    /// Voxel-to-world affine: sform when present, else qform, else a
    /// diagonal built from `pixdim`.
    pub fn affine(&self) -> Affine {
        if self.sform_code > 0 {
            let mut a = Affine::identity();
            for r in 0..3 {
                for k in 0..4 {
                    a[(r, k)] = self.srow[r][k] as f64;
                }
            }
            return a;
        }
        let spacing = [1, 2, 3].map(|i| {
            let p = self.pixdim[i] as f64;
            if p > 0.0 {
                p
            } else {
                1.0
            }
        });
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|q| q as f64);
            let a2 = 1.0 - (b * b + c * c + d * d);
            let (a, b, c, d) = if a2 < 1e-7 {
                let n = (b * b + c * c + d * d).sqrt();
                (0.0, b / n, c / n, d / n)
            } else {
                (a2.sqrt(), b, c, d)
            };
            let qfac = if self.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let r = Matrix3::new(
                a * a + b * b - c * c - d * d,
                2.0 * (b * c - a * d),
                2.0 * (b * d + a * c),
                2.0 * (b * c + a * d),
                a * a + c * c - b * b - d * d,
                2.0 * (c * d - a * b),
                2.0 * (b * d - a * c),
                2.0 * (c * d + a * b),
                a * a + d * d - c * c - b * b,
            );
            let mut m = Affine::identity();
            for row in 0..3 {
                m[(row, 0)] = r[(row, 0)] * spacing[0];
                m[(row, 1)] = r[(row, 1)] * spacing[1];
                m[(row, 2)] = r[(row, 2)] * spacing[2] * qfac;
                m[(row, 3)] = self.qoffset[row] as f64;
            }
            return m;
        }
        crate::volume::diagonal_affine(spacing)
    }

    /// Fill sform, qform and pixdim from an affine.
    pub fn set_affine(&mut self, affine: &Affine) {
        for r in 0..3 {
            for k in 0..4 {
                self.srow[r][k] = affine[(r, k)] as f32;
            }
        }
        self.sform_code = 2;
        let lin = linear_part(affine);
        let spacing = [0, 1, 2].map(|k| lin.column(k).norm());
        let mut rot = lin;
        for k in 0..3 {
            let n = spacing[k];
            for r in 0..3 {
                rot[(r, k)] /= n;
            }
        }
        let qfac = if rot.determinant() < 0.0 {
            for r in 0..3 {
                rot[(r, 2)] = -rot[(r, 2)];
            }
            -1.0
        } else {
            1.0
        };
        let (b, c, d) = quaternion_bcd(&rot);
        self.quatern = [b as f32, c as f32, d as f32];
        self.qoffset = [affine[(0, 3)] as f32, affine[(1, 3)] as f32, affine[(2, 3)] as f32];
        self.qform_code = 2;
        self.pixdim[0] = qfac;
        for k in 0..3 {
            self.pixdim[k + 1] = spacing[k] as f32;
        }
    }
}

/// `(b, c, d)` of the unit quaternion for a proper rotation, with `a ≥ 0`.
fn quaternion_bcd(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let (r11, r12, r13) = (r[(0, 0)], r[(0, 1)], r[(0, 2)]);
    let (r21, r22, r23) = (r[(1, 0)], r[(1, 1)], r[(1, 2)]);
    let (r31, r32, r33) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    let trace = r11 + r22 + r33 + 1.0;
    let (a, b, c, d) = if trace > 0.5 {
        let a = 0.5 * trace.sqrt();
        (a, 0.25 * (r32 - r23) / a, 0.25 * (r13 - r31) / a, 0.25 * (r21 - r12) / a)
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            let b = 0.5 * xd.sqrt();
            (0.25 * (r32 - r23) / b, b, 0.25 * (r12 + r21) / b, 0.25 * (r13 + r31) / b)
        } else if yd > 1.0 {
            let c = 0.5 * yd.sqrt();
            (0.25 * (r13 - r31) / c, 0.25 * (r12 + r21) / c, c, 0.25 * (r23 + r32) / c)
        } else {
            let d = 0.5 * zd.sqrt();
            (0.25 * (r21 - r12) / d, 0.25 * (r13 + r31) / d, 0.25 * (r23 + r32) / d, d)
        }
    };
    if a < 0.0 {
        (-b, -c, -d)
    } else {
        (b, c, d)
    }
}

/// Header plus voxel values (scaling applied), indexed `[x, y, z, ...]`.
#[derive(Debug, Clone)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub data: ArrayD<f64>,
}

impl NiftiImage {
    pub fn affine(&self) -> Affine {
        self.header.affine()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn decode(bytes: &[u8], dt: DataType, endian: Endian) -> Vec<f64> {
    let n = dt.bytes();
    bytes
        .chunks_exact(n)
        .map(|ch| {
            let mut b = [0u8; 8];
            b[..n].copy_from_slice(ch);
            if endian == Endian::Big {
                b[..n].reverse();
            }
            match dt {
                DataType::U8 => b[0] as f64,
                DataType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
                DataType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                DataType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
                DataType::F64 => f64::from_le_bytes(b),
            }
        })
        .collect()
}

fn pair_image_path(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    if let Some(stem) = s.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else if let Some(stem) = s.strip_suffix(".hdr") {
        PathBuf::from(format!("{stem}.img"))
    } else {
        path.with_extension("img")
    }
}

/// Read any NIfTI-1 image with up to 7 dimensions.
pub fn read_nifti_image(path: impl AsRef<Path>) -> Result<NiftiImage> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let (header, endian) = NiftiHeader::parse(&bytes, path)?;
    let dt = DataType::from_code(header.datatype)?;
    let shape = header.shape();
    let count: usize = shape.iter().product();
    let need = count * dt.bytes();
    let (payload, payload_path) = if &header.magic == MAGIC_PAIR {
        let img = pair_image_path(path);
        let b = read_maybe_gz(&img)?;
        (b, img)
    } else {
        (bytes, path.to_path_buf())
    };
    let start = if &header.magic == MAGIC_PAIR {
        header.vox_offset.max(0.0) as usize
    } else {
        (header.vox_offset as usize).max(HEADER_SIZE)
    };
    let available = payload.len().saturating_sub(start);
    if available < need {
        return Err(Error::Truncated {
            path: payload_path,
            expected: need,
            found: available,
        });
    }
    let mut values = decode(&payload[start..start + need], dt, endian);
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }
    let data = ArrayD::from_shape_vec(IxDyn(&shape).f(), values)
        .map_err(|e| Error::format(path, e.to_string()))?
        .as_standard_layout()
        .into_owned();
    Ok(NiftiImage { header, data })
}

/// Read a 3D scalar volume (a 4D file with a single frame is accepted).
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let img = read_nifti_image(path)?;
    let affine = img.affine();
    let shape = img.data.shape().to_vec();
    if shape.len() > 3 && shape[3..].iter().any(|&d| d != 1) {
        return Err(Error::format(path, format!("expected a 3D volume, got shape {shape:?}")));
    }
    let mut s3 = [1usize; 3];
    for (k, &d) in shape.iter().take(3).enumerate() {
        s3[k] = d;
    }
    let data = img
        .data
        .into_shape_with_order(s3)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Volume::new(data, affine)
}

/// Read a binary mask; every voxel must be exactly 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let v = read_nifti(path)?;
    let affine = *v.affine();
    if v.data().iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::format(path, "mask contains values other than 0 and 1"));
    }
    LabelMask::new(v.into_data().mapv(|x| x as u8), affine)
}

/// Read a 4D label-probability map written by [`write_probmap`].
pub fn read_probmap(path: impl AsRef<Path>) -> Result<(ProbMap, Affine)> {
    let path = path.as_ref();
    let img = read_nifti_image(path)?;
    let affine = img.affine();
    let s = img.data.shape().to_vec();
    if s.len() != 4 {
        return Err(Error::format(path, format!("expected 4D map, got shape {s:?}")));
    }
    let arr: Array4<f64> = img
        .data
        .into_dimensionality()
        .map_err(|e| Error::format(path, e.to_string()))?;
    // on disk: (x, y, z, label)
    let data = arr.permuted_axes([3, 0, 1, 2]).as_standard_layout().into_owned();
    Ok((ProbMap::new(data)?, affine))
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub datatype: DataType,
    pub endian: Endian,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            datatype: DataType::F32,
            endian: Endian::Little,
        }
    }
}

fn encode(data: &ArrayD<f64>, opts: WriteOptions) -> Result<Vec<u8>> {
    let dt = opts.datatype;
    let mut out = Vec::with_capacity(data.len() * dt.bytes());
    let integral = |v: f64, lo: f64, hi: f64| -> Result<f64> {
        if v.fract() != 0.0 || v < lo || v > hi {
            return Err(Error::Domain(format!(
                "value {v} is not representable as {dt:?}"
            )));
        }
        Ok(v)
    };
    // Fortran order: x fastest
    for &v in data.t().iter() {
        let mut le: Vec<u8> = match dt {
            DataType::U8 => vec![integral(v, 0.0, 255.0)? as u8],
            DataType::I16 => (integral(v, i16::MIN as f64, i16::MAX as f64)? as i16)
                .to_le_bytes()
                .to_vec(),
            DataType::I32 => (integral(v, i32::MIN as f64, i32::MAX as f64)? as i32)
                .to_le_bytes()
                .to_vec(),
            DataType::F32 => (v as f32).to_le_bytes().to_vec(),
            DataType::F64 => v.to_le_bytes().to_vec(),
        };
        if opts.endian == Endian::Big {
            le.reverse();
        }
        out.extend_from_slice(&le);
    }
    Ok(out)
}

/// Write an image as a single `.nii` file, gzip-compressed when the path
/// ends in `.gz`.
pub fn write_nifti_image(
    data: &ArrayD<f64>,
    affine: &Affine,
    path: impl AsRef<Path>,
    opts: WriteOptions,
) -> Result<()> {
    let path = path.as_ref();
    if data.ndim() == 0 || data.ndim() > 7 {
        return Err(Error::Shape(format!("cannot store {} dimensions", data.ndim())));
    }
    if affine.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry("affine has non-finite entries".into()));
    }
    let mut header = NiftiHeader::default();
    header.dim = [1; 8];
    header.dim[0] = data.ndim() as i16;
    for (k, &d) in data.shape().iter().enumerate() {
        header.dim[k + 1] = i16::try_from(d)
            .map_err(|_| Error::Shape(format!("dimension {d} exceeds NIfTI-1 limits")))?;
    }
    header.datatype = opts.datatype.code();
    header.bitpix = (opts.datatype.bytes() * 8) as i16;
    header.set_affine(affine);
    let mut bytes = header.to_bytes(opts.endian);
    bytes.extend_from_slice(&[0u8; SINGLE_FILE_OFFSET - HEADER_SIZE]);
    bytes.extend(encode(data, opts)?);
    let gz = path.extension().is_some_and(|e| e == "gz");
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut f = file;
        f.write_all(&bytes)
    };
    result.map_err(|e| Error::io(path, e))
}

/// Anything that can be stored as a NIfTI file.
pub trait ToNifti {
    fn nifti_data(&self) -> ArrayD<f64>;
    fn nifti_affine(&self) -> Affine;
    fn nifti_datatype(&self) -> DataType;
}

impl ToNifti for Volume {
    fn nifti_data(&self) -> ArrayD<f64> {
        self.data().clone().into_dyn()
    }
    fn nifti_affine(&self) -> Affine {
        *self.affine()
    }
    fn nifti_datatype(&self) -> DataType {
        DataType::F32
    }
}

impl ToNifti for LabelMask {
    fn nifti_data(&self) -> ArrayD<f64> {
        self.data().mapv(f64::from).into_dyn()
    }
    fn nifti_affine(&self) -> Affine {
        *self.affine()
    }
    fn nifti_datatype(&self) -> DataType {
        DataType::U8
    }
}

/// Probability maps carry no geometry of their own; stored with an
/// identity affine and `f64` values. Use [`write_probmap`] to attach one.
impl ToNifti for ProbMap {
    fn nifti_data(&self) -> ArrayD<f64> {
        self.data()
            .view()
            .permuted_axes([1, 2, 3, 0])
            .as_standard_layout()
            .into_owned()
            .into_dyn()
    }
    fn nifti_affine(&self) -> Affine {
        Affine::identity()
    }
    fn nifti_datatype(&self) -> DataType {
        DataType::F64
    }
}

/// Write a volume (float32), mask (uint8) or probability map (float64, 4D).
pub fn write_nifti<T: ToNifti + ?Sized>(item: &T, path: impl AsRef<Path>) -> Result<()> {
    write_nifti_image(
        &item.nifti_data(),
        &item.nifti_affine(),
        path,
        WriteOptions {
            datatype: item.nifti_datatype(),
            endian: Endian::Little,
        },
    )
}

pub fn write_probmap(p: &ProbMap, affine: &Affine, path: impl AsRef<Path>) -> Result<()> {
    write_nifti_image(
        &p.nifti_data(),
        affine,
        path,
        WriteOptions {
            datatype: DataType::F64,
            endian: Endian::Little,
        },
    )
}

/// Read the raw test format.
pub fn read_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "raw file shorter than its 12-byte header"));
    }
    let dims: Vec<usize> = bytes[..12]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if n == 0 {
        return Err(Error::format(path, format!("zero dimension in {dims:?}")));
    }
    let found = bytes.len() - 12;
    if found < n * 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: n * 4,
            found,
        });
    }
    let values = decode(&bytes[12..12 + n * 4], DataType::F32, Endian::Little);
    let data = Array3::from_shape_vec((dims[0], dims[1], dims[2]).f(), values)
        .map_err(|e| Error::format(path, e.to_string()))?
        .as_standard_layout()
        .into_owned();
    Ok(Volume::from_data(data))
}

pub fn write_raw(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(12 + v.data().len() * 4);
    for d in v.shape() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in v.data().t().iter() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_round_trip_for_rotation() {
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let mut a = Affine::identity();
        a[(0, 0)] = c * 1.5;
        a[(0, 1)] = -s * 2.0;
        a[(1, 0)] = s * 1.5;
        a[(1, 1)] = c * 2.0;
        a[(2, 2)] = -0.8;
        a[(0, 3)] = 12.0;
        a[(2, 3)] = -4.0;
        let mut h = NiftiHeader::default();
        h.set_affine(&a);
        h.sform_code = 0;
        let back = h.affine();
        assert!((back - a).abs().max() < 1e-5, "{back}");
    }

    #[test]
    fn header_bytes_round_trip_both_endians() {
        let mut h = NiftiHeader::default();
        h.dim = [4, 5, 6, 7, 2, 1, 1, 1];
        h.set_affine(&crate::volume::diagonal_affine([1.0, 2.0, 3.0]));
        for e in [Endian::Little, Endian::Big] {
            let bytes = h.to_bytes(e);
            let (back, found) = NiftiHeader::parse(&bytes, Path::new("mem")).unwrap();
            assert_eq!(found, e);
            assert_eq!(back, h);
        }
    }

    #[test]
    fn datatype_codes() {
        for dt in [DataType::U8, DataType::I16, DataType::I32, DataType::F32, DataType::F64] {
            assert_eq!(DataType::from_code(dt.code()).unwrap(), dt);
        }
        assert!(matches!(DataType::from_code(128), Err(Error::UnsupportedDatatype(128))));
    }
}
