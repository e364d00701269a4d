use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::hsi::HsiCube;

/// Parameter array: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape.clone())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }
}

/// Channels × height × width activations, channel-sequential like [`HsiCube`].
///
/// Viewed as a matrix this is `channels` rows by `height * width` pixel
/// columns, which is the token layout both attention variants work on.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "{channels}x{height}x{width} feature map needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_cube(cube: &HsiCube) -> Self {
        Self {
            channels: cube.bands(),
            height: cube.height(),
            width: cube.width(),
            data: cube.data().to_vec(),
        }
    }

    pub fn to_cube(&self) -> Result<HsiCube> {
        HsiCube::new(self.height, self.width, self.channels, self.data.clone())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn add(&self, other: &FeatureMap) -> FeatureMap {
        debug_assert!(self.same_shape(other));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        FeatureMap { data, ..*self }
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert!(self.same_shape(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// Channel concatenation.
    pub fn concat(&self, other: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(self.pixels(), other.pixels());
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        FeatureMap {
            channels: self.channels + other.channels,
            data,
            ..*self
        }
    }

    /// Splits off the first `channels` channels; inverse of [`FeatureMap::concat`].
    pub fn split_at(&self, channels: usize) -> (FeatureMap, FeatureMap) {
        let n = channels * self.pixels();
        (
            FeatureMap {
                channels,
                data: self.data[..n].to_vec(),
                ..*self
            },
            FeatureMap {
                channels: self.channels - channels,
                data: self.data[n..].to_vec(),
                ..*self
            },
        )
    }

    pub fn check_finite(&self, layer: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numeric(
                layer,
                format!("non-finite activation {} at element {i}", self.data[i]),
            )),
        }
    }

    pub(crate) fn view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.channels, self.pixels()), &self.data).expect("consistent shape")
    }
}

/// `c = alpha * a · b + beta * c` for row-major `c` of shape `(a.rows, b.cols)`.
pub(crate) fn gemm(alpha: f64, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, beta: f64, c: &mut [f64]) {
    let (m, n) = (a.nrows(), b.ncols());
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("output buffer matches product shape");
    general_mat_mul(alpha, &a, &b, beta, &mut cv);
}

pub(crate) fn mat(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape matches buffer")
}
