use std::f64::consts::PI;
use std::io::Cursor;

use super::pipeline::DiarizeConfig;
use super::{DiarizeError, EmbeddingWindow};
use crate::plugins::CancelProbe;

pub const SPECTRAL_DIM: usize = 16;

const FRAME_S: f64 = 0.025;
const FRAME_HOP_S: f64 = 0.010;
const MIN_FFT: usize = 512;
const LOG_FLOOR: f64 = 1e-10;

/// Mono audio as samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Pcm {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Pcm {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a RIFF/WAVE blob holding 16-bit PCM mono audio at 8-48 kHz.
pub fn decode_wav(bytes: &[u8]) -> Result<Pcm, DiarizeError> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| DiarizeError::Audio(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(DiarizeError::Audio(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DiarizeError::Audio(format!(
            "{}-bit {:?} samples, expected PCM16",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    if !(8_000..=48_000).contains(&spec.sample_rate) {
        return Err(DiarizeError::Audio(format!(
            "sample rate {} Hz outside 8000-48000",
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| DiarizeError::Audio(e.to_string()))?;
    if samples.is_empty() {
        return Err(DiarizeError::EmptyAudio);
    }
    Ok(Pcm {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Turns audio into one embedding per analysis window.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(
        &self,
        pcm: &Pcm,
        config: &DiarizeConfig,
        cancel: &dyn CancelProbe,
    ) -> Result<Vec<EmbeddingWindow>, DiarizeError>;
}

/// Deterministic log mel-band energy embedder. 25 ms Hann frames every
/// 10 ms, direct DFT, 16 triangular mel bands; window vectors are the
/// L2-normalized mean of their frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpectralEmbedder;

struct FrameAnalyzer {
    frame_len: usize,
    n_fft: usize,
    hann: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
    /// per band: (first bin, weights)
    bands: Vec<(usize, Vec<f64>)>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl FrameAnalyzer {
    fn new(sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let frame_len = ((FRAME_S * sr).round() as usize).max(1);
        // frames longer than 512 samples (above ~20 kHz) use the next power of two
        let n_fft = frame_len.next_power_of_two().max(MIN_FFT);
        let hann = (0..frame_len)
            .map(|n| {
                if frame_len == 1 {
                    1.0
                } else {
                    0.5 - 0.5 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos()
                }
            })
            .collect();
        let cos = (0..n_fft).map(|i| (2.0 * PI * i as f64 / n_fft as f64).cos()).collect();
        let sin = (0..n_fft).map(|i| (2.0 * PI * i as f64 / n_fft as f64).sin()).collect();

        let n_bins = n_fft / 2 + 1;
        let max_mel = hz_to_mel(sr / 2.0);
        let edges: Vec<f64> = (0..SPECTRAL_DIM + 2)
            .map(|i| mel_to_hz(max_mel * i as f64 / (SPECTRAL_DIM + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * sr / n_fft as f64;
        let bands = (0..SPECTRAL_DIM)
            .map(|b| {
                let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = bin_hz(k);
                        let w = if f >= lo && f <= mid && mid > lo {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f <= hi && hi > mid {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |(k, _)| *k);
                let last = weights.last().map_or(0, |(k, _)| *k);
                let mut dense = vec![0.0; if weights.is_empty() { 0 } else { last - first + 1 }];
                for (k, w) in weights {
                    dense[k - first] = w;
                }
                (first, dense)
            })
            .collect();
        Self {
            frame_len,
            n_fft,
            hann,
            cos,
            sin,
            bands,
        }
    }

    /// Log band energies; all-zero input yields the zero vector.
    fn analyze(&self, frame: &[f64], out: &mut [f64]) {
        if frame.iter().all(|&s| s == 0.0) {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let windowed: Vec<f64> = frame.iter().zip(&self.hann).map(|(s, w)| s * w).collect();
        let n_bins = self.n_fft / 2 + 1;
        let mut power = vec![0.0; n_bins];
        for (k, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            let mut idx = 0usize;
            for &x in &windowed {
                re += x * self.cos[idx];
                im -= x * self.sin[idx];
                idx += k;
                if idx >= self.n_fft {
                    idx -= self.n_fft;
                }
            }
            *p = re * re + im * im;
        }
        for (v, (first, weights)) in out.iter_mut().zip(&self.bands) {
            let e: f64 = weights.iter().enumerate().map(|(i, w)| w * power[first + i]).sum();
            *v = (e + LOG_FLOOR).ln();
        }
    }
}

pub(crate) fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl Embedder for SpectralEmbedder {
    fn dim(&self) -> usize {
        SPECTRAL_DIM
    }

    fn embed(
        &self,
        pcm: &Pcm,
        config: &DiarizeConfig,
        cancel: &dyn CancelProbe,
    ) -> Result<Vec<EmbeddingWindow>, DiarizeError> {
        config.validate()?;
        if pcm.samples.is_empty() {
            return Err(DiarizeError::EmptyAudio);
        }
        let sr = pcm.sample_rate as f64;
        let an = FrameAnalyzer::new(pcm.sample_rate);
        let hop = ((FRAME_HOP_S * sr).round() as usize).max(1);

        let mut centers = Vec::new();
        let mut frames: Vec<[f64; SPECTRAL_DIM]> = Vec::new();
        let mut buf = vec![0.0; an.frame_len];
        let mut start = 0usize;
        loop {
            let end = (start + an.frame_len).min(pcm.samples.len());
            buf.iter_mut().for_each(|v| *v = 0.0);
            buf[..end - start].copy_from_slice(&pcm.samples[start..end]);
            let mut v = [0.0; SPECTRAL_DIM];
            an.analyze(&buf, &mut v);
            frames.push(v);
            centers.push((start as f64 + an.frame_len as f64 / 2.0) / sr);
            if frames.len() % 50 == 0 && cancel.is_cancelled() {
                return Err(DiarizeError::Cancelled);
            }
            start += hop;
            if start + an.frame_len > pcm.samples.len() {
                break;
            }
        }

        let duration = pcm.duration_s();
        let mut windows = Vec::new();
        for k in 0.. {
            let t = k as f64 * config.hop_s;
            if duration - t <= config.window_s / 2.0 {
                break;
            }
            let end = (t + config.window_s).min(duration);
            let members: Vec<&[f64; SPECTRAL_DIM]> = centers
                .iter()
                .zip(&frames)
                .filter(|(c, _)| **c >= t && **c < t + config.window_s)
                .map(|(_, f)| f)
                .collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; SPECTRAL_DIM];
            for f in &members {
                for (m, x) in mean.iter_mut().zip(f.iter()) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= members.len() as f64);
            l2_normalize(&mut mean);
            windows.push(EmbeddingWindow {
                start_s: t,
                end_s: end,
                vec: mean,
            });
        }
        Ok(windows)
    }
}
