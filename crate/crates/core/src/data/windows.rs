use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::substream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }
}

/// Contiguous 70% / 10% / remainder ranges over `[0, t_total)`.
pub fn split_chronological(t_total: usize) -> Result<Splits> {
    if t_total < 10 {
        return Err(Error::Config(format!("series of {t_total} steps is too short to split")));
    }
    let train = t_total * 7 / 10;
    let val = t_total / 10;
    Ok(Splits {
        train: 0..train,
        val: train..train + val,
        test: train + val..t_total,
    })
}

/// Position of a series in calendar time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Calendar {
    pub start_slot: usize,
    pub start_dow: usize,
    pub slots: usize,
}

impl Calendar {
    /// `(tod, dow)` of absolute step `k`.
    pub fn at(&self, k: usize) -> (usize, usize) {
        let abs = self.start_slot + k;
        (abs % self.slots, (self.start_dow + abs / self.slots) % 7)
    }
}

#[derive(Clone, Debug)]
pub struct WindowBatch {
    /// `[m, t_in, n, c]`
    pub x: Tensor,
    /// `[m, t_out, n, c]`
    pub y: Tensor,
    /// `m·t_in`, row-major `[m, t_in]`
    pub tod_idx: Vec<usize>,
    pub dow_idx: Vec<usize>,
    /// First source step of each window.
    pub starts: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Start steps of every stride-1 window lying entirely inside `range`.
pub fn window_starts(range: Range<usize>, t_in: usize, t_out: usize) -> Result<Vec<usize>> {
    let span = t_in + t_out;
    if range.len() < span {
        return Err(Error::Config(format!(
            "range {range:?} of {} steps cannot hold a {span}-step window",
            range.len()
        )));
    }
    Ok((range.start..=range.end - span).collect())
}

/// Windowed view of a `[T, n, c]` series.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    series: &'a Tensor,
    calendar: Calendar,
    pub t_in: usize,
    pub t_out: usize,
    pub starts: Vec<usize>,
}

impl<'a> Windows<'a> {
    pub fn new(series: &'a Tensor, calendar: Calendar, range: Range<usize>, t_in: usize, t_out: usize) -> Result<Self> {
        if series.rank() != 3 || range.end > series.shape()[0] {
            return Err(Error::dim(
                "make_windows",
                format!("range {range:?} over series {:?}", series.shape()),
            ));
        }
        Ok(Windows {
            series,
            calendar,
            t_in,
            t_out,
            starts: window_starts(range, t_in, t_out)?,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Gathers the windows beginning at `starts` into one batch.
    pub fn batch(&self, starts: &[usize]) -> WindowBatch {
        let [_, n, c] = *self.series.shape() else { unreachable!() };
        let row = n * c;
        let src = self.series.data();
        let mut x = Vec::with_capacity(starts.len() * self.t_in * row);
        let mut y = Vec::with_capacity(starts.len() * self.t_out * row);
        let mut tod_idx = Vec::with_capacity(starts.len() * self.t_in);
        let mut dow_idx = Vec::with_capacity(starts.len() * self.t_in);
        for &s in starts {
            let mid = s + self.t_in;
            x.extend_from_slice(&src[s * row..mid * row]);
            y.extend_from_slice(&src[mid * row..(mid + self.t_out) * row]);
            for k in s..mid {
                let (tod, dow) = self.calendar.at(k);
                tod_idx.push(tod);
                dow_idx.push(dow);
            }
        }
        let m = starts.len();
        WindowBatch {
            x: Tensor::new([m, self.t_in, n, c], x).expect("window extents"),
            y: Tensor::new([m, self.t_out, n, c], y).expect("window extents"),
            tod_idx,
            dow_idx,
            starts: starts.to_vec(),
        }
    }

    /// Batches of `batch_size` windows (last one partial). With `shuffle =
    /// Some((seed, epoch))` the window order is a seeded permutation,
    /// otherwise chronological.
    pub fn batches(&self, batch_size: usize, shuffle: Option<(u64, u64)>) -> Result<impl Iterator<Item = WindowBatch> + '_> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut order = self.starts.clone();
        if let Some((seed, epoch)) = shuffle {
            order.shuffle(&mut substream(seed, &format!("shuffle.{epoch}")));
        }
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        Ok(chunks.into_iter().map(move |c| self.batch(&c)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = split_chronological(100).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..70, 70..80, 80..100));
        let s = split_chronological(10).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert!(split_chronological(9).is_err());
    }

    #[test]
    fn splits_partition_every_length() {
        for t in 10..=1000 {
            let s = split_chronological(t).unwrap();
            assert_eq!(s.train.start, 0);
            assert_eq!(s.train.end, s.val.start);
            assert_eq!(s.val.end, s.test.start);
            assert_eq!(s.test.end, t);
            assert_eq!(s.train.len(), t * 7 / 10);
            assert_eq!(s.val.len(), t / 10);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(0..24, 12, 12).unwrap().len(), 1);
        assert_eq!(window_starts(5..35, 12, 12).unwrap().len(), 7);
        assert!(window_starts(0..23, 12, 12).is_err());
    }

    #[test]
    fn windows_are_source_slices() {
        let series = Tensor::from_fn([60, 2, 3], |i| i as f64);
        let cal = Calendar { start_slot: 280, start_dow: 6, slots: 288 };
        let w = Windows::new(&series, cal, 10..50, 12, 12).unwrap();
        assert_eq!(w.len(), 17);
        let b = w.batch(&w.starts);
        for (j, &s) in w.starts.iter().enumerate() {
            let row = 6;
            let xs = &b.x.data()[j * 12 * row..(j + 1) * 12 * row];
            let ys = &b.y.data()[j * 12 * row..(j + 1) * 12 * row];
            let joined: Vec<f64> = xs.iter().chain(ys).copied().collect();
            assert_eq!(&joined[..], &series.data()[s * row..(s + 24) * row]);
            for k in 1..12 {
                let (a, b2) = (b.tod_idx[j * 12 + k - 1], b.tod_idx[j * 12 + k]);
                assert_eq!((a + 1) % 288, b2);
            }
        }
        // step 8 is slot 288 → midnight, Sunday wraps to Monday
        assert_eq!(cal.at(8), (0, 0));
        assert_eq!(cal.at(7), (287, 6));
    }

    #[test]
    fn shuffled_batches_cover_each_window_once() {
        let series = Tensor::zeros([200, 1, 3]);
        let cal = Calendar { start_slot: 0, start_dow: 0, slots: 288 };
        let w = Windows::new(&series, cal, 0..200, 12, 12).unwrap();
        let sizes: Vec<usize> = w.batches(64, None).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![64, 64, 49]);
        let mut seen: Vec<usize> = w.batches(64, Some((3, 1))).unwrap().flat_map(|b| b.starts).collect();
        let again: Vec<usize> = w.batches(64, Some((3, 1))).unwrap().flat_map(|b| b.starts).collect();
        assert_eq!(seen, again);
        assert_ne!(seen, w.starts);
        seen.sort_unstable();
        assert_eq!(seen, w.starts);
    }
}
