use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::window::{DatasetPair, SampleWindow};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::models::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Windows drawn uniformly with replacement; one epoch draws as many
    /// windows as there are valid ones.
    #[default]
    Random,
    /// Every valid window once, in time order.
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub mode: BatchMode,
    pub seed: u64,
}

/// Windows stacked into tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub t0s: Vec<DateTime<Utc>>,
    /// `[n, 4, H, W]` upsampled conditioning.
    pub cond: Tensor<f32>,
    /// `[n, 1, H, W]` targets.
    pub target: Tensor<f32>,
    /// `[n, 4, h, w]` native low-resolution frames.
    pub lr: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t0s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t0s.is_empty()
    }

    pub fn from_windows(windows: &[SampleWindow]) -> Result<Batch> {
        let first = windows
            .first()
            .ok_or_else(|| Error::EmptyDataset("batch of zero windows".into()))?;
        let hg = *first.target.grid();
        let lg = *first.lr[0].grid();
        let n = windows.len();
        let mut cond = Vec::with_capacity(n * 4 * hg.len());
        let mut target = Vec::with_capacity(n * hg.len());
        let mut lr = Vec::with_capacity(n * 4 * lg.len());
        for w in windows {
            for f in &w.conditioning {
                cond.extend_from_slice(f.as_slice());
            }
            target.extend_from_slice(w.target.as_slice());
            for f in &w.lr {
                lr.extend_from_slice(f.as_slice());
            }
        }
        Ok(Batch {
            t0s: windows.iter().map(|w| w.t0).collect(),
            cond: Tensor::from_vec([n, 4, hg.rows(), hg.cols()], cond)?,
            target: Tensor::from_vec([n, 1, hg.rows(), hg.cols()], target)?,
            lr: Tensor::from_vec([n, 4, lg.rows(), lg.cols()], lr)?,
        })
    }
}

/// Streams batches of windows from a [`DatasetPair`]; only the current
/// batch is held in memory.
#[derive(Clone, Debug)]
pub struct BatchGenerator {
    pair: Arc<DatasetPair>,
    spec: BatchSpec,
    t0s: Arc<Vec<DateTime<Utc>>>,
}

impl BatchGenerator {
    pub fn new(pair: DatasetPair, spec: BatchSpec) -> Result<Self> {
        if spec.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        let t0s = pair.valid_t0s();
        if t0s.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no window has all four context frames ({} low-res, {} high-res frames)",
                pair.lr.len(),
                pair.hr.len()
            )));
        }
        Ok(BatchGenerator {
            pair: Arc::new(pair),
            spec,
            t0s: Arc::new(t0s),
        })
    }

    pub fn pair(&self) -> &DatasetPair {
        &self.pair
    }

    pub fn valid_t0s(&self) -> &[DateTime<Utc>] {
        &self.t0s
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.t0s.len().div_ceil(self.spec.batch_size)
    }

    /// Window order of `epoch`. Random epochs use an independent stream of
    /// the seeded generator per epoch.
    pub fn order(&self, epoch: u64) -> Vec<DateTime<Utc>> {
        match self.spec.mode {
            BatchMode::Sequential => self.t0s.to_vec(),
            BatchMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
                rng.set_stream(epoch);
                let n = self.t0s.len();
                (0..n).map(|_| self.t0s[rng.random_range(0..n)]).collect()
            }
        }
    }

    pub fn epoch(&self, epoch: u64) -> BatchIter {
        BatchIter {
            pair: Arc::clone(&self.pair),
            order: self.order(epoch),
            batch_size: self.spec.batch_size,
            pos: 0,
        }
    }
}

pub struct BatchIter {
    pair: Arc<DatasetPair>,
    order: Vec<DateTime<Utc>>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for BatchIter {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let t0s = &self.order[self.pos..end];
        self.pos = end;
        let pair = &self.pair;
        let windows = Exec::current()
            .map(t0s, |&t| pair.window(t))
            .into_iter()
            .collect::<Result<Vec<_>>>();
        Some(windows.and_then(|w| Batch::from_windows(&w)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (n, Some(n))
    }
}

/// Runs an iterator on a background thread, keeping up to `depth` items
/// ready. Items arrive in the original order.
pub struct Prefetch<T> {
    rx: Option<Receiver<T>>,
    worker: Option<JoinHandle<()>>,
}

pub fn prefetch<I>(iter: I, depth: usize) -> Prefetch<I::Item>
where
    I: Iterator + Send + 'static,
    I::Item: Send + 'static,
{
    let (tx, rx) = sync_channel(depth.max(1));
    let worker = std::thread::spawn(move || {
        for item in iter {
            if tx.send(item).is_err() {
                break;
            }
        }
    });
    Prefetch {
        rx: Some(rx),
        worker: Some(worker),
    }
}

impl<T> Iterator for Prefetch<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl<T> Drop for Prefetch<T> {
    fn drop(&mut self) {
        // Closing the channel makes the worker's next send fail.
        self.rx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
