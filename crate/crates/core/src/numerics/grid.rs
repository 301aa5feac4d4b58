use std::fmt;

use crate::error::{Error, Result};

/// Shape of a [`Grid`]: `[batch, channel, height, width]`.
pub type Shape = [usize; 4];

/// Dense rank-4 array in NCHW layout, row-major with width innermost.
#[derive(Clone, PartialEq)]
pub struct Grid {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Grid{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Grid {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Grid {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Grid {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// Per-channel vector stored as shape `(1, n, 1, 1)`.
    pub fn vector(values: &[f64]) -> Self {
        Grid {
            shape: [1, values.len(), 1, 1],
            data: values.to_vec(),
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "Grid::from_vec",
                format!(
                    "shape {shape:?} needs {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Grid { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f([bi, ci, hi, wi]));
                    }
                }
            }
        }
        Grid { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((b * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(b, c, h, w);
        self.data[i] = v;
    }

    /// Contiguous `h * w` plane for one `(batch, channel)` pair.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// All channels of one batch item, `c * h * w` values.
    #[inline]
    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn item_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn zip_map(&self, other: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        debug_assert_eq!(self.shape, other.shape);
        Grid {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Grid) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn add_assign(&mut self, other: &Grid) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite {
                op,
                detail: format!("element {i} = {}", self.data[i]),
            }),
        }
    }

    /// Select one batch item as a `(1, c, h, w)` grid.
    pub fn batch_item(&self, b: usize) -> Grid {
        let [_, c, h, w] = self.shape;
        Grid {
            shape: [1, c, h, w],
            data: self.item(b).to_vec(),
        }
    }

    /// Stack single-item grids of identical shape along the batch axis.
    pub fn stack(items: &[Grid]) -> Result<Grid> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("Grid::stack", "no items"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Grid::len).sum());
        let mut batch = 0;
        for g in items {
            if g.shape[1..] != first.shape[1..] {
                return Err(Error::shape(
                    "Grid::stack",
                    format!("{:?} vs {:?}", g.shape, first.shape),
                ));
            }
            batch += g.shape[0];
            data.extend_from_slice(&g.data);
        }
        Ok(Grid {
            shape: [batch, c, h, w],
            data,
        })
    }

    /// Round every element to the nearest 32-bit float (ties to even).
    pub fn round_to_f32(&mut self) {
        self.map_inplace(|v| v as f32 as f64);
    }
}

pub(crate) fn check_same_shape(op: &'static str, a: &Grid, b: &Grid) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
