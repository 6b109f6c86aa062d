//! MFCC front-end, deltas, global mean/variance normalization and context
//! windows for network inputs.
//!
//! Pipeline per frame: pre-emphasis (whole signal), Hamming window, power
//! spectrum, triangular mel filterbank spanning `low_freq..high_freq`, log
//! energies floored at `energy_floor`, orthonormal DCT-II, coefficients
//! `0..num_ceps`. Deltas use the regression formula with window `K` and edge
//! replication; context windows also replicate the edge frames.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::binio::{self, BinReader, BinWriter};
use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::kv::KvConfig;

const FEATURE_MAGIC: &str = "DTEF";
const FEATURE_VERSION: u32 = 1;

/// Row-major `frames x dim` matrix of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    pub frame_shift_ms: f32,
    pub frame_length_ms: f32,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: usize,
        dim: usize,
        data: Vec<f32>,
        frame_shift_ms: f32,
        frame_length_ms: f32,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if frames == 0 || dim == 0 {
            return Err(Error::Empty("feature matrix"));
        }
        if data.len() != frames * dim {
            return Err(Error::Dimension {
                what: "feature data length",
                expected: frames * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of `{utterance_id}`")));
        }
        Ok(Self {
            utterance_id,
            frame_shift_ms,
            frame_length_ms,
            frames,
            dim,
            data,
        })
    }

    /// Builds from rows, taking frame timing from `like`.
    fn from_rows_like(like: &FeatureMatrix, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(
            like.utterance_id.clone(),
            frames,
            dim,
            data,
            like.frame_shift_ms,
            like.frame_length_ms,
        )
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f32] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, path);
        w.header(b"DTEF", FEATURE_VERSION)?;
        w.u32(self.frames as u32)?;
        w.u32(self.dim as u32)?;
        w.f32(self.frame_shift_ms)?;
        w.f32(self.frame_length_ms)?;
        w.f32s(&self.data)?;
        w.finish()
    }

    /// Loads a `DTEF` file; the utterance id is the file stem.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, path);
        r.header(FEATURE_MAGIC, FEATURE_VERSION)?;
        let frames = r.count(1 << 26, "frame")?;
        let dim = r.count(1 << 20, "dimension")?;
        let shift = r.f32()?;
        let length = r.f32()?;
        let data = r.f32s(frames * dim)?;
        r.expect_eof()?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Self::new(id, frames, dim, data, shift, length)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f32,
    pub frame_shift_ms: f32,
    pub pre_emphasis: f32,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub low_freq: f32,
    /// `None` means Nyquist.
    pub high_freq: Option<f32>,
    pub energy_floor: f64,
    /// Replace c0 with the log frame energy.
    pub use_energy: bool,
    pub delta_window: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            pre_emphasis: 0.97,
            num_filters: 24,
            num_ceps: 13,
            low_freq: 0.0,
            high_freq: None,
            energy_floor: 1e-10,
            use_energy: false,
            delta_window: 2,
        }
    }
}

impl FrontEndConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            sample_rate: kv.get_or("sample_rate", d.sample_rate)?,
            frame_length_ms: kv.get_or("frame_length_ms", d.frame_length_ms)?,
            frame_shift_ms: kv.get_or("frame_shift_ms", d.frame_shift_ms)?,
            pre_emphasis: kv.get_or("pre_emphasis", d.pre_emphasis)?,
            num_filters: kv.get_or("num_filters", d.num_filters)?,
            num_ceps: kv.get_or("num_ceps", d.num_ceps)?,
            low_freq: kv.get_or("low_freq", d.low_freq)?,
            high_freq: kv.get("high_freq")?,
            energy_floor: kv.get_or("energy_floor", d.energy_floor)?,
            use_energy: kv.get_or("use_energy", d.use_energy)?,
            delta_window: kv.get_or("delta_window", d.delta_window)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("frontend: {m}")));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.frame_len() == 0 || self.shift() == 0 || self.shift() > self.frame_len() {
            return bad("need 0 < frame shift <= frame length".into());
        }
        if self.num_filters == 0 || self.num_ceps == 0 || self.num_ceps > self.num_filters {
            return bad("need 0 < num_ceps <= num_filters".into());
        }
        let nyq = self.sample_rate as f32 / 2.0;
        let hi = self.high_freq.unwrap_or(nyq);
        if !(self.low_freq >= 0.0 && self.low_freq < hi && hi <= nyq) {
            return bad(format!("need 0 <= low_freq < high_freq <= {nyq}"));
        }
        if !(self.energy_floor > 0.0) || !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad("energy_floor must be > 0 and pre_emphasis in [0, 1)".into());
        }
        if self.delta_window == 0 {
            return bad("delta_window must be >= 1".into());
        }
        Ok(())
    }

    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f32 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift(&self) -> usize {
        (self.sample_rate as f32 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn fft_size(&self) -> usize {
        self.frame_len().next_power_of_two()
    }

    /// Static frames produced for `n` samples (0 if shorter than one frame).
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.frame_len() {
            0
        } else {
            (n - self.frame_len()) / self.shift() + 1
        }
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Precomputed window, filterbank, DCT and FFT plan for one configuration.
pub struct MfccExtractor {
    cfg: FrontEndConfig,
    window: Vec<f64>,
    /// Per filter: first bin and weights.
    filters: Vec<(usize, Vec<f64>)>,
    dct: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(cfg: FrontEndConfig) -> Result<Self> {
        cfg.validate()?;
        let len = cfg.frame_len();
        let nfft = cfg.fft_size();
        let window = (0..len)
            .map(|i| {
                if len == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / (len - 1) as f64).cos()
                }
            })
            .collect();

        let rate = cfg.sample_rate as f64;
        let hi = cfg.high_freq.map(f64::from).unwrap_or(rate / 2.0);
        let (mlo, mhi) = (hz_to_mel(cfg.low_freq as f64), hz_to_mel(hi));
        let m = cfg.num_filters;
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (m + 1) as f64))
            .collect();
        let bins = nfft / 2 + 1;
        let filters = (0..m)
            .map(|j| {
                let (l, c, r) = (edges[j], edges[j + 1], edges[j + 2]);
                let w: Vec<f64> = (0..bins)
                    .map(|k| {
                        let f = k as f64 * rate / nfft as f64;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect();
                let first = w.iter().position(|&x| x > 0.0).unwrap_or(0);
                let last = w.iter().rposition(|&x| x > 0.0).map_or(first, |p| p + 1);
                (first, w[first..last.max(first)].to_vec())
            })
            .collect();

        let n = cfg.num_ceps;
        let mut dct = vec![0.0; n * m];
        for i in 0..n {
            let s = if i == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
            for j in 0..m {
                dct[i * m + j] =
                    s * (std::f64::consts::PI * i as f64 * (j as f64 + 0.5) / m as f64).cos();
            }
        }
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            cfg,
            window,
            filters,
            dct,
            fft,
        })
    }

    pub fn config(&self) -> &FrontEndConfig {
        &self.cfg
    }

    /// Log mel energies, one row of `num_filters` per frame.
    pub fn log_mel(&self, samples: &[f32]) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let (len, shift, nfft) = (cfg.frame_len(), cfg.shift(), cfg.fft_size());
        let a = cfg.pre_emphasis as f64;
        let emph: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| x as f64 - if i > 0 { a * samples[i - 1] as f64 } else { 0.0 })
            .collect();
        let mut buf = vec![Complex::new(0.0, 0.0); nfft];
        let mut power = vec![0.0; nfft / 2 + 1];
        (0..cfg.num_frames(samples.len()))
            .map(|t| {
                let frame = &emph[t * shift..t * shift + len];
                for (b, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                    *b = Complex::new(x * w, 0.0);
                }
                for b in buf[len..].iter_mut() {
                    *b = Complex::new(0.0, 0.0);
                }
                self.fft.process(&mut buf);
                for (p, b) in power.iter_mut().zip(&buf) {
                    *p = b.norm_sqr();
                }
                self.filters
                    .iter()
                    .map(|(first, w)| {
                        let e: f64 = w.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                        e.max(cfg.energy_floor).ln()
                    })
                    .collect()
            })
            .collect()
    }

    /// Static cepstra (`num_ceps` per frame).
    pub fn compute(&self, utt: &Utterance) -> Result<FeatureMatrix> {
        let cfg = &self.cfg;
        if utt.sample_rate != cfg.sample_rate {
            return Err(Error::Invalid(format!(
                "utterance `{}` has sample rate {}, front-end expects {}",
                utt.id, utt.sample_rate, cfg.sample_rate
            )));
        }
        let frames = cfg.num_frames(utt.samples.len());
        if frames == 0 {
            return Err(Error::TooShort {
                utterance: utt.id.clone(),
                frames: utt.samples.len(),
                needed: cfg.frame_len(),
            });
        }
        let logmel = self.log_mel(&utt.samples);
        let (n, m) = (cfg.num_ceps, cfg.num_filters);
        let mut data = Vec::with_capacity(frames * n);
        for (t, lm) in logmel.iter().enumerate() {
            for i in 0..n {
                let c: f64 = self.dct[i * m..(i + 1) * m]
                    .iter()
                    .zip(lm)
                    .map(|(d, e)| d * e)
                    .sum();
                data.push(c as f32);
            }
            if cfg.use_energy {
                let a = cfg.pre_emphasis as f64;
                let start = t * cfg.shift();
                let energy: f64 = (start..start + cfg.frame_len())
                    .map(|i| {
                        let prev = if i > 0 { utt.samples[i - 1] as f64 } else { 0.0 };
                        let x = (utt.samples[i] as f64 - a * prev) * self.window[i - start];
                        x * x
                    })
                    .sum();
                data[t * n] = energy.max(cfg.energy_floor).ln() as f32;
            }
        }
        FeatureMatrix::new(
            utt.id.clone(),
            frames,
            n,
            data,
            cfg.frame_shift_ms,
            cfg.frame_length_ms,
        )
    }
}

pub fn compute_mfcc(utt: &Utterance, cfg: &FrontEndConfig) -> Result<FeatureMatrix> {
    MfccExtractor::new(cfg.clone())?.compute(utt)
}

/// Appends Δ and ΔΔ with regression window 2.
pub fn append_deltas(stat: &FeatureMatrix) -> FeatureMatrix {
    append_deltas_with(stat, 2)
}

pub fn append_deltas_with(stat: &FeatureMatrix, window: usize) -> FeatureMatrix {
    let d = stat.dim();
    let t_len = stat.num_frames();
    let delta = regression(stat.as_slice(), t_len, d, window);
    let delta2 = regression(&delta, t_len, d, window);
    let mut data = Vec::with_capacity(t_len * d * 3);
    for t in 0..t_len {
        data.extend_from_slice(stat.row(t));
        data.extend_from_slice(&delta[t * d..(t + 1) * d]);
        data.extend_from_slice(&delta2[t * d..(t + 1) * d]);
    }
    FeatureMatrix::from_rows_like(stat, t_len, d * 3, data).expect("finite deltas of finite input")
}

fn regression(x: &[f32], frames: usize, dim: usize, k_max: usize) -> Vec<f32> {
    let denom: f64 = 2.0 * (1..=k_max).map(|k| (k * k) as f64).sum::<f64>();
    let last = frames as isize - 1;
    let at = |t: isize| t.clamp(0, last) as usize;
    let mut out = vec![0f32; frames * dim];
    for t in 0..frames as isize {
        for j in 0..dim {
            let mut acc = 0f64;
            for k in 1..=k_max as isize {
                acc += k as f64 * (x[at(t + k) * dim + j] as f64 - x[at(t - k) * dim + j] as f64);
            }
            out[t as usize * dim + j] = (acc / denom) as f32;
        }
    }
    out
}

/// Per-dimension mean and standard deviation (std floored at `1e-6`).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn fit<'a>(feats: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for f in feats {
            if sum.is_empty() {
                sum = vec![0.0; f.dim()];
                sq = vec![0.0; f.dim()];
            } else if f.dim() != sum.len() {
                return Err(Error::Dimension {
                    what: "normalization input",
                    expected: sum.len(),
                    found: f.dim(),
                });
            }
            for row in f.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
            }
            n += f.num_frames();
        }
        if n == 0 {
            return Err(Error::Empty("normalization set"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR)) as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        if f.dim() != self.dim() {
            return Err(Error::Dimension {
                what: "normalization stats",
                expected: f.dim(),
                found: self.dim(),
            });
        }
        let data = f
            .rows()
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &s))| ((v as f64 - m as f64) / s as f64) as f32)
            })
            .collect();
        FeatureMatrix::from_rows_like(f, f.num_frames(), f.dim(), data)
    }

    /// Stored as a two-row feature file: mean then std.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = self.mean.clone();
        data.extend_from_slice(&self.std);
        FeatureMatrix::new("norm", 2, self.dim(), data, 0.0, 0.0)?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = FeatureMatrix::load(path)?;
        if f.num_frames() != 2 {
            return Err(Error::Invalid(format!(
                "{}: normalization file must have 2 rows",
                path.display()
            )));
        }
        Ok(Self {
            mean: f.row(0).to_vec(),
            std: f.row(1).to_vec(),
        })
    }
}

pub fn fit_norm<'a>(feats: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<NormStats> {
    NormStats::fit(feats)
}

pub fn apply_norm(f: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix> {
    stats.apply(f)
}

/// Stacked frames `t-P ..= t+P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub center_index: usize,
    pub vector: Vec<f32>,
}

pub fn make_window(f: &FeatureMatrix, t: usize, radius: usize) -> Result<ContextWindow> {
    if t >= f.num_frames() {
        return Err(Error::Invalid(format!(
            "frame {t} out of range for {} frames",
            f.num_frames()
        )));
    }
    let mut vector = vec![0f32; f.dim() * (2 * radius + 1)];
    fill_window(f, t, radius, &mut vector);
    Ok(ContextWindow {
        center_index: t,
        vector,
    })
}

/// Writes the window for frame `t` into `out` (length `dim * (2 * radius + 1)`).
pub fn fill_window(f: &FeatureMatrix, t: usize, radius: usize, out: &mut [f32]) {
    let d = f.dim();
    let last = f.num_frames() as isize - 1;
    debug_assert_eq!(out.len(), d * (2 * radius + 1));
    for (slot, chunk) in out.chunks_exact_mut(d).enumerate() {
        let src = (t as isize + slot as isize - radius as isize).clamp(0, last) as usize;
        chunk.copy_from_slice(f.row(src));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> FeatureMatrix {
        let d = rows[0].len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureMatrix::new("u", rows.len(), d, data, 10.0, 25.0).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        let cfg = FrontEndConfig::default();
        assert_eq!(cfg.frame_len(), 400);
        assert_eq!(cfg.shift(), 160);
        assert_eq!(cfg.num_frames(399), 0);
        assert_eq!(cfg.num_frames(400), 1);
        assert_eq!(cfg.num_frames(16000), (16000 - 400) / 160 + 1);
    }

    #[test]
    fn too_short_audio_is_rejected() {
        let utt = Utterance::new("x", vec![0.0; 100], 16000, vec![]).unwrap();
        assert!(matches!(
            compute_mfcc(&utt, &FrontEndConfig::default()),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FrontEndConfig::default();
        let utt = Utterance::new("z", vec![0.0; 4000], 16000, vec![]).unwrap();
        let ex = MfccExtractor::new(cfg.clone()).unwrap();
        for row in ex.log_mel(&utt.samples) {
            for e in row {
                assert_eq!(e, cfg.energy_floor.ln());
            }
        }
        let f = ex.compute(&utt).unwrap();
        for t in 1..f.num_frames() {
            assert_eq!(f.row(t), f.row(0));
        }
    }

    #[test]
    fn constant_features_have_zero_deltas() {
        let f = matrix(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let d = append_deltas(&f);
        assert_eq!(d.dim(), 6);
        for row in d.rows() {
            assert_eq!(&row[2..], &[0.0; 4]);
        }
    }

    #[test]
    fn single_frame_deltas_are_zero() {
        let d = append_deltas(&matrix(&[&[3.0, -1.0, 7.0]]));
        assert_eq!(d.row(0), &[3.0, -1.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ramp_delta_is_one_in_the_interior() {
        // Δ_t = Σ_k k (c_{t+k} - c_{t-k}) / (2 Σ k²) = (1*2 + 2*4) / 10 = 1 for c_t = t.
        let rows: Vec<[f32; 1]> = (0..9).map(|t| [t as f32]).collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let d = append_deltas(&matrix(&refs));
        for t in 2..7 {
            assert_eq!(d.row(t)[1], 1.0);
        }
        for t in 4..5 {
            assert_eq!(d.row(t)[2], 0.0);
        }
        // Edge: t = 0 sees c = [0, 0, 0, 1, 2] -> (1*1 + 2*2) / 10.
        assert!((d.row(0)[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn norm_zero_mean_and_floor() {
        let f = matrix(&[&[1.0, 5.0], &[2.0, 5.0], &[4.0, 5.0]]);
        let stats = fit_norm([&f]).unwrap();
        assert_eq!(stats.std[1], 1e-6);
        let n = apply_norm(&f, &stats).unwrap();
        let mean0: f32 = n.rows().map(|r| r[0]).sum::<f32>() / 3.0;
        assert!(mean0.abs() < 1e-4);
        assert!(n.rows().all(|r| r[1] == 0.0));
        let wrong = NormStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        assert!(matches!(apply_norm(&f, &wrong), Err(Error::Dimension { .. })));
    }

    #[test]
    fn windows_replicate_edges() {
        let f = matrix(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        assert_eq!(make_window(&f, 2, 0).unwrap().vector, vec![2.0]);
        assert_eq!(make_window(&f, 0, 2).unwrap().vector, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(make_window(&f, 3, 2).unwrap().vector, vec![1.0, 2.0, 3.0, 3.0, 3.0]);
        assert!(make_window(&f, 4, 1).is_err());
    }

    #[test]
    fn paper_scale_window_length() {
        let data = vec![0.5; 39 * 30];
        let f = FeatureMatrix::new("u", 30, 39, data, 10.0, 25.0).unwrap();
        for t in [0, 7, 29] {
            assert_eq!(make_window(&f, t, 10).unwrap().vector.len(), 819);
        }
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureMatrix::new("utt7", 2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-9, -7.25], 10.0, 25.0)
            .unwrap();
        let path = dir.path().join("utt7.feat");
        f.save(&path).unwrap();
        assert_eq!(FeatureMatrix::load(&path).unwrap(), f);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DTEF");
        assert_eq!(bytes.len(), 4 + 4 * 5 + 6 * 4);
    }

    #[test]
    fn nan_rejected() {
        assert!(FeatureMatrix::new("u", 1, 2, vec![0.0, f32::NAN], 10.0, 25.0).is_err());
    }
}
