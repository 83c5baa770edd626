//! Shared helpers for model checkpoints and minibatch training.

use std::path::Path;

use dummynet_nn::checkpoint;
use dummynet_nn::{Array, ParamStore, Scalar};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes a tagged checkpoint whose metadata is the serialized model config.
pub fn save_model<T: Scalar, C: Serialize>(path: &Path, tag: &str, config: &C, store: &ParamStore<T>) -> Result<()> {
    let meta = serde_json::to_value(config)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    checkpoint::write_checkpoint(std::io::BufWriter::new(file), tag, &meta, store)?;
    Ok(())
}

pub fn load_model<T: Scalar, C: DeserializeOwned>(path: &Path, tag: &str) -> Result<(C, ParamStore<T>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (meta, store) = checkpoint::read_checkpoint(std::io::BufReader::new(file), tag)?;
    Ok((serde_json::from_value(meta)?, store))
}

/// Copies parameter values from `loaded` into a freshly built `store`.
pub fn restore<T: Scalar>(store: &mut ParamStore<T>, loaded: &ParamStore<T>) -> Result<()> {
    store.load_from(loaded).map_err(|e| Error::InvalidInput(format!("checkpoint does not match architecture: {e}")))
}

/// Shuffled index batches covering `0..n`.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Deterministic train/validation split. With fewer than two samples the
/// validation set reuses the training set.
pub fn split_indices<R: Rng + ?Sized>(n: usize, val_fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64) * val_fraction).round() as usize;
    if n < 2 || n_val == 0 {
        return (idx.clone(), idx);
    }
    let n_val = n_val.min(n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Stacks `[C, H, W]` (or any equal-shaped) arrays selected by `idx` into a batch.
pub fn gather_batch<T: Scalar>(items: &[Array<T>], idx: &[usize]) -> Array<T> {
    let parts: Vec<Array<T>> = idx.iter().map(|&i| items[i].clone()).collect();
    Array::stack(&parts)
}

/// Per-epoch losses plus which epoch's weights were kept.
#[derive(Clone, Debug, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainReport {
    /// Validation loss of the kept checkpoint after each epoch.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.val_loss.iter().map(|&v| {
            best = best.min(v);
            best
        }).collect()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss.get(self.best_epoch).copied().unwrap_or(f64::INFINITY)
    }
}
