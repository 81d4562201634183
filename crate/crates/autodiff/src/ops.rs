use crate::conv::ConvParams;
use crate::error::{AutodiffError, Result};
use crate::tensor::{check_shape, Tensor};

/// Recorded operation kinds. Shapes needed by backward rules are read from
/// the recorded input tensors.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    Powf(f64),
    Relu,
    LeakyRelu(f64),
    Tanh,
    SumAxes,
    BroadcastTo,
    Reshape,
    Conv2d(ConvParams),
    ConvTranspose2d(ConvParams),
    /// Gradient of `conv2d` with respect to its kernel, as a function of
    /// (input, output-gradient).
    ConvKernelGrad(ConvParams),
}

/// Pointwise nonlinearities used by the generator and critic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Tensor {
    fn binary(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(AutodiffError::Dimension(format!(
                "{op:?} needs equal shapes, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), op, &[self, other]))
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&a| f(a)).collect();
        Tensor::from_op(data, self.shape().to_vec(), op, &[self])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor {
        self.unary(Op::Neg, |a| -a)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.unary(Op::Scale(factor), |a| a * factor)
    }

    pub fn add_scalar(&self, value: f64) -> Tensor {
        self.unary(Op::AddScalar, |a| a + value)
    }

    pub fn powf(&self, exponent: f64) -> Tensor {
        self.unary(Op::Powf(exponent), |a| a.powf(exponent))
    }

    pub fn sqrt(&self) -> Tensor {
        self.powf(0.5)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("a tensor always matches its own shape")
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(Op::LeakyRelu(slope), |a| if a > 0.0 { a } else { slope * a })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn activation(&self, kind: Activation) -> Result<Tensor> {
        match kind {
            Activation::Relu => Ok(self.relu()),
            Activation::Tanh => Ok(self.tanh()),
            Activation::LeakyRelu(slope) => {
                if !(slope > 0.0 && slope < 1.0) {
                    return Err(AutodiffError::InvalidArgument(format!(
                        "leaky_relu slope must lie in (0,1), got {slope}"
                    )));
                }
                Ok(self.leaky_relu(slope))
            }
        }
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        if let Some(&bad) = axes.iter().find(|&&a| a >= nd) {
            return Err(AutodiffError::Dimension(format!(
                "axis {bad} out of range for rank {nd}"
            )));
        }
        let mut out_shape = self.shape().to_vec();
        for &a in axes {
            out_shape[a] = 1;
        }
        let data = reduce_sum(self.data(), self.shape(), &out_shape);
        Ok(Tensor::from_op(data, out_shape, Op::SumAxes, &[self]))
    }

    /// Sum of all elements as a shape-`[1]` tensor.
    pub fn sum(&self) -> Tensor {
        let axes: Vec<usize> = (0..self.ndim()).collect();
        self.sum_axes(&axes)
            .and_then(|s| s.reshape(&[1]))
            .expect("full reduction is always valid")
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count as f64))
    }

    /// Expands extent-1 dimensions to `shape`; ranks must match.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        if shape.len() != self.ndim()
            || self
                .shape()
                .iter()
                .zip(shape)
                .any(|(&s, &t)| s != t && s != 1)
        {
            return Err(AutodiffError::Dimension(format!(
                "cannot broadcast {:?} to {shape:?}",
                self.shape()
            )));
        }
        if shape == self.shape() {
            return Ok(self.clone());
        }
        let data = expand(self.data(), self.shape(), shape);
        Ok(Tensor::from_op(data, shape.to_vec(), Op::BroadcastTo, &[self]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(AutodiffError::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            Op::Reshape,
            &[self],
        ))
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Strides of `small` viewed inside `big`, with 0 on broadcast axes.
fn broadcast_strides(small: &[usize], big: &[usize]) -> Vec<usize> {
    strides(small)
        .into_iter()
        .zip(small.iter().zip(big))
        .map(|(st, (&s, &b))| if s == 1 && b != 1 { 0 } else { st })
        .collect()
}

/// Accumulates `data` (laid out as `shape`) into `out_shape`, visiting
/// input elements in row-major order so the summation order is fixed.
fn reduce_sum(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let ostr = broadcast_strides(out_shape, shape);
    let mut out = vec![0.0; out_shape.iter().product()];
    let nd = shape.len();
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for &v in data {
        out[off] += v;
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += ostr[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= ostr[d] * shape[d];
            idx[d] = 0;
        }
    }
    out
}

fn expand(data: &[f64], shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let istr = broadcast_strides(shape, out_shape);
    let total: usize = out_shape.iter().product();
    let nd = out_shape.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    for _ in 0..total {
        out.push(data[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            off += istr[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= istr[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
