use std::ops::Range;

use rand::Rng;

use super::DatasetRecord;
use crate::augment::VideoClip;
use crate::error::{Result, SspdError};

/// A contiguous clip of `seconds * fs + 1` frames at a uniformly random offset.
pub fn sample_training_clip<R: Rng + ?Sized>(record: &DatasetRecord, seconds: f64, rng: &mut R) -> Result<VideoClip> {
    let needed = (seconds * record.fs()).round() as usize + 1;
    let available = record.n_frames();
    if available < needed {
        return Err(SspdError::ClipTooShort { needed, available });
    }
    let offset = rng.random_range(0..=available - needed);
    record.source.load(offset, needed)
}

/// Frame ranges of the non-overlapping evaluation clips, from the start of the record.
pub fn eval_windows(record: &DatasetRecord, seconds: f64) -> Vec<Range<usize>> {
    let len = (seconds * record.fs()).round() as usize;
    let count = if len == 0 { 0 } else { record.n_frames() / len };
    if count == 0 {
        log::warn!(
            "record {} is {:.1} s long, shorter than one {seconds} s evaluation clip",
            record.clip_id,
            record.duration_s()
        );
    }
    (0..count).map(|k| k * len..(k + 1) * len).collect()
}

pub fn eval_clips(record: &DatasetRecord, seconds: f64) -> Result<Vec<VideoClip>> {
    eval_windows(record, seconds)
        .into_iter()
        .map(|r| record.source.load(r.start, r.len()))
        .collect()
}
