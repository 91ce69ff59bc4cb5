use crate::{Error, Result};

/// Dense `(batch, channels, d, h, w)` buffer, row-major with `w` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5 {
    shape: [usize; 5],
    data: Vec<f64>,
}

impl Tensor5 {
    pub fn new(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 5], v: f64) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 5], mut f: impl FnMut([usize; 5]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for z in 0..shape[2] {
                    for y in 0..shape[3] {
                        for x in 0..shape[4] {
                            data.push(f([b, c, z, y, x]));
                        }
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn offset(&self, i: [usize; 5]) -> usize {
        let s = self.shape;
        (((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]) * s[4] + i[4]
    }

    pub fn get(&self, i: [usize; 5]) -> f64 {
        self.data[self.offset(i)]
    }

    pub fn set(&mut self, i: [usize; 5], v: f64) {
        let o = self.offset(i);
        self.data[o] = v;
    }

    /// Contiguous spatial block of one `(batch, channel)` pair.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.spatial_len();
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        let start = (b * self.shape[1] + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn dot(&self, other: &Tensor5) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &Tensor5) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Select one batch item.
    pub fn item(&self, b: usize) -> Tensor5 {
        let per = self.len() / self.shape[0];
        let mut shape = self.shape;
        shape[0] = 1;
        Tensor5 {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack(items: &[Tensor5]) -> Result<Tensor5> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut shape = first.shape;
        shape[0] = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            shape[0] += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor5 { shape, data })
    }
}

impl Tensor5 {
    /// Wrap a single `[x, y, z]` array as a `(1, 1, x, y, z)` tensor.
    pub fn from_array3(a: &ndarray::Array3<f64>) -> Self {
        let s = a.shape();
        Self {
            shape: [1, 1, s[0], s[1], s[2]],
            data: a.iter().copied().collect(),
        }
    }

    /// One `(batch, channel)` plane as an `[x, y, z]` array.
    pub fn to_array3(&self, b: usize, c: usize) -> ndarray::Array3<f64> {
        let [_, _, d, h, w] = self.shape;
        ndarray::Array3::from_shape_vec((d, h, w), self.plane(b, c).to_vec())
            .expect("plane length matches spatial shape")
    }
}
