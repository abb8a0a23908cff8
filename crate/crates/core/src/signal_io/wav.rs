use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Sample encoding used when writing WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    #[default]
    Float32,
}

/// Metadata returned by [`write_wav`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteReport {
    /// Number of samples whose magnitude exceeded full scale. For PCM
    /// targets these were clipped; float32 stores them unchanged.
    pub clipped_samples: usize,
}

impl WriteReport {
    pub fn has_clipping(&self) -> bool {
        self.clipped_samples > 0
    }
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads a PCM16, PCM24 or float32 WAV file, averaging channels down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| parse_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedRate {
            found: spec.sample_rate,
            expected: SAMPLE_RATE,
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, e))?,
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, e))?
        }
        (fmt, bits) => {
            return Err(parse_err(
                path,
                format!("unsupported sample format {fmt:?} with {bits} bits"),
            ))
        }
    };
    let channels = spec.channels.max(1) as usize;
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|c| c.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    Signal::new(mono, spec.sample_rate)
}

/// Writes a mono WAV file.
pub fn write_wav(signal: &Signal, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<WriteReport> {
    let path = path.as_ref();
    let (bits, format) = match bit_depth {
        BitDepth::Pcm16 => (16, SampleFormat::Int),
        BitDepth::Pcm24 => (24, SampleFormat::Int),
        BitDepth::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => parse_err(path, other),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    let mut report = WriteReport::default();
    for &s in signal.samples() {
        if s.abs() > 1.0 {
            report.clipped_samples += 1;
        }
        match bit_depth {
            BitDepth::Float32 => writer.write_sample(s as f32).map_err(to_err)?,
            BitDepth::Pcm16 | BitDepth::Pcm24 => {
                let scale = (1i64 << (bits - 1)) as f64;
                let q = (s * scale).round().clamp(-scale, scale - 1.0) as i32;
                writer.write_sample(q).map_err(to_err)?
            }
        }
    }
    writer.finalize().map_err(to_err)?;
    if report.has_clipping() {
        log::warn!(
            "{}: {} samples exceeded full scale",
            path.display(),
            report.clipped_samples
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize) -> Signal {
        let s = (0..len)
            .map(|i| ((i as f64 * 0.37).sin() * 0.9) as f32 as f64)
            .collect();
        Signal::new(s, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x = ramp(1000);
        write_wav(&x, &p, BitDepth::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), x);
    }

    #[test]
    fn pcm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let x = ramp(1000);
        for (depth, bound) in [(BitDepth::Pcm16, 2f64.powi(-15)), (BitDepth::Pcm24, 2f64.powi(-23))] {
            let p = dir.path().join(format!("{depth:?}.wav"));
            write_wav(&x, &p, depth).unwrap();
            let y = read_wav(&p).unwrap();
            let err = x
                .samples()
                .iter()
                .zip(y.samples())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= bound, "{depth:?}: {err}");
        }
    }

    #[test]
    fn pcm16_clips_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let x = Signal::new(vec![1.5, -0.25, 0.0], SAMPLE_RATE).unwrap();
        let report = write_wav(&x, &p, BitDepth::Pcm16).unwrap();
        assert_eq!(report.clipped_samples, 1);
        let y = read_wav(&p).unwrap();
        assert!((y.samples()[0] - 32767.0 / 32768.0).abs() < 1e-12);
    }

    #[test]
    fn stereo_downmix_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [0.5f32, 0.5, -0.25, -0.25, 0.125, 0.125] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples(), &[0.5, -0.25, 0.125]);

        let p48 = dir.path().join("r.wav");
        let spec48 = WavSpec {
            channels: 1,
            sample_rate: 48_000,
            ..spec
        };
        let mut w = WavWriter::create(&p48, spec48).unwrap();
        w.write_sample(0.0f32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&p48),
            Err(Error::UnsupportedRate { found: 48_000, .. })
        ));
    }

    #[test]
    fn malformed_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn ten_second_file_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let x = Signal::new(vec![0.0; 441_000], SAMPLE_RATE).unwrap();
        write_wav(&x, &p, BitDepth::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap().len(), 441_000);
    }
}
