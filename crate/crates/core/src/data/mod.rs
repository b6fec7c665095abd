//! Dataset files, normalisation, chronological splits, sliding windows and
//! the synthetic generator.

pub mod format;
pub mod normalize;
pub mod synthetic;
pub mod windows;

pub use format::{load_dataset, save_dataset, TrafficTensorFile, CHANNELS, CHANNEL_NAMES};
pub use normalize::Normalizer;
pub use synthetic::synthetic_generate;
pub use windows::{split_chronological, window_starts, Calendar, Split, Splits, WindowBatch, Windows};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A validated file with its splits and the normaliser fitted on the
/// training range.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub file: TrafficTensorFile,
    pub splits: Splits,
    pub normalizer: Normalizer,
    /// `[T, n, 3]` in z-score units.
    pub normalized: Tensor,
    pub calendar: Calendar,
}

impl Dataset {
    pub fn prepare(file: TrafficTensorFile) -> Result<Self> {
        file.validate()?;
        let splits = split_chronological(file.steps())?;
        let normalizer = Normalizer::fit(&file.raw, splits.train.clone())?;
        let normalized = normalizer.apply(&file.raw)?;
        let calendar = Calendar {
            start_slot: file.start_slot as usize,
            start_dow: file.start_dow as usize,
            slots: file.tod_slots()?,
        };
        Ok(Dataset {
            file,
            splits,
            normalizer,
            normalized,
            calendar,
        })
    }

    pub fn nodes(&self) -> usize {
        self.file.nodes()
    }

    /// Model input for the forecast starting at step `at`: the `t_in` steps
    /// before it, as a batch of one.
    pub fn input_at(&self, at: usize, t_in: usize) -> Result<(Tensor, Vec<usize>, Vec<usize>)> {
        let t = self.file.steps();
        if at < t_in || at > t {
            return Err(Error::Config(format!(
                "forecast index {at} needs {t_in} steps of history inside a {t}-step series (valid: {t_in}..={t})"
            )));
        }
        let [_, n, c] = *self.normalized.shape() else { unreachable!() };
        let row = n * c;
        let x = Tensor::new([1, t_in, n, c], self.normalized.data()[(at - t_in) * row..at * row].to_vec())?;
        let (tod, dow) = (at - t_in..at).map(|k| self.calendar.at(k)).unzip();
        Ok((x, tod, dow))
    }

    pub fn windows(&self, split: Split, t_in: usize, t_out: usize) -> Result<Windows<'_>> {
        Windows::new(&self.normalized, self.calendar, self.splits.get(split), t_in, t_out)
    }
}
