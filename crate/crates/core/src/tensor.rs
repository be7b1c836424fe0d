use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Image tensors are ordered (batch, channel, height, width).
///
/// The element buffer is shared: cloning a tensor or reshaping it never copies data.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape("Tensor::new", &shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                "data",
                format!("{numel} elements for shape {shape:?}"),
                data.len(),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::from_parts(shape, (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Takes the buffer without copying when this is the only reference to it.
    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| shared.as_ref().clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.len() != 1 {
            return Err(Error::dim("item", "numel", 1, self.len()));
        }
        Ok(self.data[0])
    }

    /// (batch, channels, height, width) of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[b, c, h, w] => Ok((b, c, h, w)),
            other => Err(Error::dim("dims4", "rank", 4, other.len())),
        }
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        check_shape("reshape", &shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.len() {
            return Err(Error::dim(
                "reshape",
                "numel",
                self.len(),
                format!("{numel} ({shape:?})"),
            ));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(shape_mismatch("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects one batch element of a BCHW tensor, keeping a batch axis of 1.
    pub fn batch_item(&self, index: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if index >= b {
            return Err(Error::dim("batch_item", "batch", format!("< {b}"), index));
        }
        let plane = c * h * w;
        Ok(Self::from_parts(
            vec![1, c, h, w],
            self.data[index * plane..(index + 1) * plane].to_vec(),
        ))
    }

    /// Concatenates tensors with identical trailing shape along axis 0.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Usage("stack_batch of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut batch = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return Err(shape_mismatch("stack_batch", &first.shape, &t.shape));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Self::from_parts(shape, data))
    }

    /// Reflect-pads the two spatial axes of a BCHW tensor at the bottom/right so both
    /// become multiples of `multiple`. Returns the tensor unchanged when already aligned.
    pub fn reflect_pad_to_multiple(&self, multiple: usize) -> Result<Self> {
        let (_, _, h, w) = self.dims4()?;
        let th = h.div_ceil(multiple) * multiple;
        let tw = w.div_ceil(multiple) * multiple;
        self.reflect_pad_to(th, tw)
    }

    /// Reflect-pads (bottom/right, without repeating the edge sample) up to `th` x `tw`.
    pub fn reflect_pad_to(&self, th: usize, tw: usize) -> Result<Self> {
        let (b, c, h, w) = self.dims4()?;
        if th < h || tw < w {
            return Err(Error::dim(
                "reflect_pad_to",
                "H,W",
                format!(">= {h}x{w}"),
                format!("{th}x{tw}"),
            ));
        }
        if th == h && tw == w {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(b * c * th * tw);
        for plane in self.data.chunks_exact(h * w) {
            for y in 0..th {
                let sy = reflect_index(y, h);
                let row = &plane[sy * w..(sy + 1) * w];
                for x in 0..tw {
                    out.push(row[reflect_index(x, w)]);
                }
            }
        }
        Ok(Self::from_parts(vec![b, c, th, tw], out))
    }

    /// Crops a BCHW tensor at an offset to `h` x `w`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let (b, c, sh, sw) = self.dims4()?;
        if top + h > sh || left + w > sw || h == 0 || w == 0 {
            return Err(Error::dim(
                "crop",
                "H,W",
                format!("window within {sh}x{sw}"),
                format!("{h}x{w} at ({top},{left})"),
            ));
        }
        let mut out = Vec::with_capacity(b * c * h * w);
        for plane in self.data.chunks_exact(sh * sw) {
            for y in top..top + h {
                out.extend_from_slice(&plane[y * sw + left..y * sw + left + w]);
            }
        }
        Ok(Self::from_parts(vec![b, c, h, w], out))
    }

    /// Mirrors the width axis of a rank >= 2 tensor.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.shape[self.shape.len() - 1];
        let mut out = Vec::with_capacity(self.len());
        for row in self.data.chunks_exact(w) {
            out.extend(row.iter().rev());
        }
        Self::from_parts(self.shape.clone(), out)
    }

    /// Mirrors the height axis of a rank >= 2 tensor.
    pub fn flip_vertical(&self) -> Self {
        let r = self.shape.len();
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        let mut out = Vec::with_capacity(self.len());
        for plane in self.data.chunks_exact(h * w) {
            for y in (0..h).rev() {
                out.extend_from_slice(&plane[y * w..(y + 1) * w]);
            }
        }
        Self::from_parts(self.shape.clone(), out)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::dim(op, "rank", ">= 1", 0));
    }
    if let Some(i) = shape.iter().position(|&d| d == 0) {
        return Err(Error::dim(op, format!("{i}"), ">= 1", 0));
    }
    Ok(())
}

pub(crate) fn shape_mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    let axes: Vec<String> = if a.len() != b.len() {
        vec!["rank".into()]
    } else {
        a.iter()
            .zip(b)
            .enumerate()
            .filter(|(_, (x, y))| x != y)
            .map(|(i, _)| i.to_string())
            .collect()
    };
    Error::dim(op, axes.join(","), format!("{a:?}"), format!("{b:?}"))
}
