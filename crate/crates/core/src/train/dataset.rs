use pano_autodiff::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Square training images already mapped to [−1, 1], stored contiguously.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    channels: usize,
    size: usize,
    data: Vec<f64>,
}

impl TrainingSet {
    /// Builds a set from `[C, S, S]` tensors of identical shape.
    pub fn from_tensors(images: &[Tensor]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Data("training set is empty".into()))?;
        let shape = first.shape().to_vec();
        if shape.len() != 3 || shape[1] != shape[2] {
            return Err(Error::Shape(format!("training images must be [C,S,S], got {shape:?}")));
        }
        let mut data = Vec::with_capacity(first.numel() * images.len());
        for (i, t) in images.iter().enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "image {i} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            data.extend_from_slice(t.data());
        }
        Ok(Self {
            channels: shape[0],
            size: shape[1],
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn image_len(&self) -> usize {
        self.channels * self.size * self.size
    }

    /// Stacks the selected images into `[len, C, S, S]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let m = self.image_len();
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dimension(format!("image index {i} out of {}", self.len())));
            }
            out.extend_from_slice(&self.data[i * m..(i + 1) * m]);
        }
        Ok(Tensor::new(out, &[indices.len(), self.channels, self.size, self.size])?)
    }
}

/// Serves minibatches from a freshly shuffled order each epoch. A partial
/// tail that cannot fill a batch is skipped.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    completed: u64,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self {
            order,
            pos: 0,
            completed: 0,
            rng,
        }
    }

    /// Number of full passes finished so far.
    pub fn completed_epochs(&self) -> u64 {
        self.completed
    }

    /// Next batch of indices and the 1-based epoch it belongs to.
    pub fn next_batch(&mut self, batch: usize) -> Result<(Vec<usize>, u64)> {
        if batch == 0 || batch > self.order.len() {
            return Err(Error::Config(format!(
                "batch size {batch} does not fit a dataset of {}",
                self.order.len()
            )));
        }
        let idx = self.order[self.pos..self.pos + batch].to_vec();
        let epoch = self.completed + 1;
        self.pos += batch;
        if self.pos + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.completed += 1;
        }
        Ok((idx, epoch))
    }
}
