use serde::{Deserialize, Serialize};

use crate::bark::{BandPsd, BarkBands, NUM_BANDS};
use crate::masking::ThresholdMatrix;
use crate::signal_io::{frame_power_dba, frame_power_dba_masked, Calibration, Spectrogram};

/// Frequency ranges for reporting. The thirds split the 24 gain bands;
/// broadband covers all 26 analysis bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Range {
    Broadband,
    Low,
    Mid,
    High,
}

impl Range {
    pub const ALL: [Range; 4] = [Range::Broadband, Range::Low, Range::Mid, Range::High];

    /// 0-based band indices.
    pub fn bands(self) -> std::ops::Range<usize> {
        match self {
            Range::Broadband => 0..NUM_BANDS,
            Range::Low => 0..8,
            Range::Mid => 8..16,
            Range::High => 16..24,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Range::Broadband => "broadband",
            Range::Low => "low",
            Range::Mid => "mid",
            Range::High => "high",
        }
    }
}

/// Mean `|noise_dB − T̂_dB|` over the entries of `range` where the initial
/// threshold lies below the noise, with the number of such entries.
/// `None` when there are none.
pub fn nmr_with_count(
    noise: &BandPsd,
    processed: &ThresholdMatrix,
    initial: &ThresholdMatrix,
    range: Range,
) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for n in 0..noise.n_frames() {
        let (nd, td, t0) = (noise.db(n), processed.db(n), initial.db(n));
        for b in range.bands() {
            if t0[b] < nd[b] {
                sum += (nd[b] - td[b]).abs();
                count += 1;
            }
        }
    }
    ((count > 0).then(|| sum / count as f64), count)
}

pub fn nmr(noise: &BandPsd, processed: &ThresholdMatrix, initial: &ThresholdMatrix, range: Range) -> Option<f64> {
    nmr_with_count(noise, processed, initial, range).0
}

/// Mean absolute per-frame dBA change; ranges sum only their bands' bins.
pub fn gld(original: &Spectrogram, processed: &Spectrogram, range: Range) -> f64 {
    let cal = Calibration::default();
    let (a, b) = match range {
        Range::Broadband => (frame_power_dba(original, &cal), frame_power_dba(processed, &cal)),
        r => {
            let bins = BarkBands::standard().bin_mask(r.bands());
            (
                frame_power_dba_masked(original, &cal, &bins),
                frame_power_dba_masked(processed, &cal, &bins),
            )
        }
    };
    if a.is_empty() {
        return 0.0;
    }
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (y - x).abs())
        .sum::<f64>()
        / a.len() as f64
}
