use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

/// Decoded audio: one `Vec` per channel, samples scaled to `[-1, 1)`.
pub struct Audio {
    pub spec: WavSpec,
    pub channels: Vec<Vec<f32>>,
}

pub fn read(path: &Path) -> Result<Audio> {
    let mut reader = WavReader::open(path).with_context(|| format!("opening {}", path.display()))?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            reader.samples::<i16>().map(|s| s.map(|v| v as f32 / 32768.0)).collect::<Result<_, _>>()?
        }
        (SampleFormat::Float, 32) => reader.samples::<f32>().collect::<Result<_, _>>()?,
        (fmt, bits) => bail!("unsupported WAV sample format {fmt:?} with {bits} bits (use 16-bit PCM or 32-bit float)"),
    };
    let n = spec.channels as usize;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n.max(1)); n];
    for frame in interleaved.chunks_exact(n) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Ok(Audio { spec, channels })
}

/// Writes mono audio in the sample format of `like`.
pub fn write_mono(path: &Path, like: &WavSpec, samples: &[f32]) -> Result<()> {
    let spec = WavSpec { channels: 1, ..*like };
    let mut w = WavWriter::create(path, spec).with_context(|| format!("creating {}", path.display()))?;
    match spec.sample_format {
        SampleFormat::Int => {
            for &s in samples {
                w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
            }
        }
        SampleFormat::Float => {
            for &s in samples {
                w.write_sample(s)?;
            }
        }
    }
    w.finalize()?;
    Ok(())
}
