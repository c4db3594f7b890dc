//! Numerical kernel shared by the model, the losses and the evaluation code.
//!
//! Everything here works on plain `f64` buffers and has no learned state:
//! stride-1 tokenization, cosine self-similarity maps and their per-lag
//! waves, normalized power spectra, band SNR, Pearson distance, peak-based
//! heart rate and the usual HR error metrics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, SspdError};

/// Lower edge of the heart-rate band, Hz.
pub const HR_BAND_LO: f64 = 0.65;
/// Upper edge of the heart-rate band, Hz.
pub const HR_BAND_HI: f64 = 3.0;
/// Added to the SNR denominator so a fully in-band spectrum stays finite.
pub const SNR_GUARD: f64 = 1e-8;
/// Physiological heart-rate prior, bpm.
pub const HR_MIN_BPM: f64 = 40.0;
pub const HR_MAX_BPM: f64 = 250.0;

/// A uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSignal {
    samples: Vec<f64>,
    fs: f64,
}

impl RealSignal {
    pub fn new(samples: Vec<f64>, fs: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(SspdError::InvalidSignal(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(SspdError::InvalidSignal(format!("sampling rate {fs} must be > 0")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SspdError::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, fs })
    }

    pub fn from_f32(samples: &[f32], fs: f64) -> Result<Self> {
        Self::new(samples.iter().map(|&v| v as f64).collect(), fs)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// A `len x dim` sequence of temporal tokens, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    values: Vec<f64>,
    len: usize,
    dim: usize,
    scale_index: usize,
}

impl TokenSequence {
    pub fn new(values: Vec<f64>, len: usize, dim: usize, scale_index: usize) -> Result<Self> {
        if len < 2 || dim < 1 {
            return Err(SspdError::Shape(format!(
                "token sequence needs len >= 2 and dim >= 1, got {len}x{dim}"
            )));
        }
        if values.len() != len * dim {
            return Err(SspdError::Shape(format!(
                "expected {} values for {len}x{dim} tokens, got {}",
                len * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SspdError::Shape("token values must be finite".into()));
        }
        Ok(Self {
            values,
            len,
            dim,
            scale_index,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], scale_index: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(SspdError::Shape("ragged token rows".into()));
        }
        Self::new(rows.concat(), rows.len(), dim, scale_index)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale_index(&self) -> usize {
        self.scale_index
    }

    pub fn token(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Stride-1 sliding windows of length `window` over a scalar signal.
pub fn tokenize(signal: &RealSignal, window: usize) -> Result<TokenSequence> {
    let n = signal.len();
    if window < 1 || window > n {
        return Err(SspdError::InvalidWindow { window, len: n });
    }
    let count = n - window + 1;
    let mut values = Vec::with_capacity(count * window);
    for i in 0..count {
        values.extend_from_slice(&signal.samples[i..i + window]);
    }
    // A single token is a valid result for window == len; bypass the len >= 2 check.
    Ok(TokenSequence {
        values,
        len: count,
        dim: window,
        scale_index: 0,
    })
}

/// Symmetric matrix of pairwise token cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarityMap {
    n: usize,
    values: Vec<f64>,
}

impl SelfSimilarityMap {
    /// Builds a map from the upper triangle (including the diagonal) of `values`,
    /// mirroring it so the result is exactly symmetric.
    pub fn from_upper(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n || n == 0 {
            return Err(SspdError::Shape(format!(
                "expected {n}x{n} map, got {} values",
                values.len()
            )));
        }
        let mut out = values.to_vec();
        for j in 0..n {
            for k in 0..j {
                out[j * n + k] = out[k * n + j];
            }
        }
        Ok(Self { n, values: out })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Upper-triangle diagonal at the given lag (0 = main diagonal).
    pub fn diagonal(&self, lag: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n.saturating_sub(lag)).map(move |j| self.get(j, j + lag))
    }
}

pub fn self_similarity_map(tokens: &TokenSequence) -> Result<SelfSimilarityMap> {
    let n = tokens.len();
    let norms = (0..n)
        .map(|i| {
            let norm = tokens.token(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                Ok(norm)
            } else {
                Err(SspdError::DegenerateToken { index: i })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![0.0; n * n];
    for j in 0..n {
        let uj = tokens.token(j);
        for k in j..n {
            let dot: f64 = uj.iter().zip(tokens.token(k)).map(|(a, b)| a * b).sum();
            let sim = dot / (norms[j] * norms[k]);
            values[j * n + k] = sim;
            values[k * n + j] = sim;
        }
    }
    Ok(SelfSimilarityMap { n, values })
}

/// Per-lag means of a self-similarity map's upper diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarityWave(pub Vec<f64>);

impl SelfSimilarityWave {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn self_similarity_wave(map: &SelfSimilarityMap) -> SelfSimilarityWave {
    let n = map.size();
    SelfSimilarityWave(
        (0..n)
            .map(|lag| map.diagonal(lag).sum::<f64>() / (n - lag) as f64)
            .collect(),
    )
}

/// Unit-sum one-sided power spectrum, DC excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub freqs: Vec<f64>,
    pub density: Vec<f64>,
}

impl PowerSpectrum {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Frequency of the bin holding the most power.
    pub fn dominant_freq(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        self.freqs[i]
    }
}

/// Frequencies of the one-sided bins `1..=len/2` for a length-`len` signal.
pub fn psd_freqs(len: usize, fs: f64) -> Vec<f64> {
    (1..=len / 2).map(|k| k as f64 * fs / len as f64).collect()
}

pub fn normalized_psd(signal: &RealSignal) -> Result<PowerSpectrum> {
    let n = signal.len();
    if n < 4 {
        return Err(SspdError::InvalidSignal(format!(
            "PSD needs at least 4 samples, got {n}"
        )));
    }
    let mean = signal.samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = signal
        .samples
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    // Rounding in the mean leaves ~1e-30 of power in a constant signal.
    let scale = signal.samples.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(total > 1e-20 * scale * n as f64) {
        return Err(SspdError::ZeroPower);
    }
    Ok(PowerSpectrum {
        freqs: psd_freqs(n, signal.fs),
        density: power.into_iter().map(|p| p / total).collect(),
    })
}

/// In-band over out-of-band spectral mass, with [`SNR_GUARD`] in the denominator.
pub fn band_snr(spec: &PowerSpectrum, band_lo: f64, band_hi: f64) -> Result<f64> {
    let mut inside = 0.0;
    let mut count = 0usize;
    for (f, d) in spec.freqs.iter().zip(&spec.density) {
        if *f >= band_lo && *f <= band_hi {
            inside += d;
            count += 1;
        }
    }
    if count == 0 || band_lo >= band_hi {
        return Err(SspdError::EmptyBand {
            lo: band_lo,
            hi: band_hi,
        });
    }
    let total: f64 = spec.density.iter().sum();
    Ok(inside / ((total - inside).max(0.0) + SNR_GUARD))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(SspdError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(SspdError::DegenerateCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `1 - r`, in `[0, 2]`.
pub fn negative_pearson(x: &RealSignal, y: &RealSignal) -> Result<f64> {
    Ok(1.0 - pearson(&x.samples, &y.samples)?)
}

/// Options for [`estimate_hr_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PeakOptions {
    /// Restrict the waveform to the heart-rate band before peak picking.
    pub bandpass: bool,
}

/// Indices of local maxima at least `min_distance` samples apart.
///
/// When two maxima are closer than `min_distance`, the taller one wins
/// (ties go to the earlier index).
pub fn find_peaks(samples: &[f64], min_distance: usize) -> Vec<usize> {
    let n = samples.len();
    let mut candidates = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if samples[i] > samples[i - 1] {
            // Walk across plateaus and keep their left edge.
            let mut j = i;
            while j + 1 < n && samples[j + 1] == samples[i] {
                j += 1;
            }
            if j + 1 < n && samples[j + 1] < samples[i] {
                candidates.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    if min_distance <= 1 || candidates.len() < 2 {
        return candidates;
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        samples[candidates[b]]
            .partial_cmp(&samples[candidates[a]])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; candidates.len()];
    for &idx in &order {
        if !keep[idx] {
            continue;
        }
        let pos = candidates[idx];
        for (other, k) in keep.iter_mut().enumerate() {
            if other != idx && *k && candidates[other].abs_diff(pos) < min_distance {
                *k = false;
            }
        }
    }
    candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

/// Zeroes every Fourier bin outside `[lo, hi]` Hz.
pub fn bandpass(signal: &RealSignal, lo: f64, hi: f64) -> Result<RealSignal> {
    let n = signal.len();
    let mut buf: Vec<Complex<f64>> = signal
        .samples
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * signal.fs / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    RealSignal::new(buf.iter().map(|c| c.re / n as f64).collect(), signal.fs)
}

/// Minimum peak spacing in samples implied by the upper HR prior.
pub fn min_peak_distance(fs: f64) -> usize {
    (fs * 60.0 / HR_MAX_BPM).floor() as usize
}

pub fn estimate_hr_from_peaks(rppg: &RealSignal) -> Result<f64> {
    estimate_hr_with(rppg, PeakOptions::default())
}

/// Heart rate from the mean inter-peak interval.
pub fn estimate_hr_with(rppg: &RealSignal, opts: PeakOptions) -> Result<f64> {
    let filtered;
    let signal = if opts.bandpass {
        filtered = bandpass(rppg, HR_BAND_LO, HR_BAND_HI)?;
        &filtered
    } else {
        rppg
    };
    let peaks = find_peaks(&signal.samples, min_peak_distance(signal.fs));
    if peaks.len() < 2 {
        return Err(SspdError::InsufficientPeaks { found: peaks.len() });
    }
    let span = (peaks[peaks.len() - 1] - peaks[0]) as f64 / signal.fs;
    let mean_interval = span / (peaks.len() - 1) as f64;
    Ok(60.0 / mean_interval)
}

/// HR error summary. `r` is `None` when either list has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HrMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Population standard deviation of the signed errors.
    pub sd: f64,
    pub r: Option<f64>,
}

pub fn hr_metrics(pred: &[f64], gt: &[f64]) -> Result<HrMetrics> {
    if pred.len() != gt.len() {
        return Err(SspdError::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(SspdError::InvalidSignal("no HR pairs to score".into()));
    }
    let n = pred.len() as f64;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p - g).collect();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean_err = errors.iter().sum::<f64>() / n;
    let sd = (errors.iter().map(|e| (e - mean_err).powi(2)).sum::<f64>() / n).sqrt();
    let r = match pearson(pred, gt) {
        Ok(r) => Some(r),
        Err(SspdError::DegenerateCorrelation) => None,
        Err(e) => return Err(e),
    };
    Ok(HrMetrics { mae, rmse, sd, r })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> RealSignal {
        RealSignal::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect(),
            fs,
        )
        .unwrap()
    }

    /// Direct O(n^2) DFT, independent of rustfft.
    fn dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        (1..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ang = 2.0 * PI * (k * t) as f64 / n as f64;
                    re += (v - mean) * ang.cos();
                    im -= (v - mean) * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn tokenize_windows() {
        let s = RealSignal::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 1.0).unwrap();
        let t = tokenize(&s, 2).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.token(0), &[1.0, 2.0]);
        assert_eq!(t.token(3), &[4.0, 5.0]);

        let whole = tokenize(&s, 5).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole.token(0), s.samples());

        let long = RealSignal::new(vec![0.5; 300], 30.0).unwrap();
        assert_eq!(tokenize(&long, 9).unwrap().len(), 292);

        assert!(matches!(tokenize(&s, 6), Err(SspdError::InvalidWindow { .. })));
        assert!(matches!(tokenize(&s, 0), Err(SspdError::InvalidWindow { .. })));
    }

    #[test]
    fn ssm_basic_cases() {
        let same = TokenSequence::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], 0)
            .unwrap();
        let m = self_similarity_map(&same).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-12));

        let ortho = TokenSequence::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0).unwrap();
        let m = self_similarity_map(&ortho).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.get(1, 0), 0.0);

        let zero = TokenSequence::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        assert!(matches!(
            self_similarity_map(&zero),
            Err(SspdError::DegenerateToken { index: 1 })
        ));
    }

    #[test]
    fn ssm_of_sinusoid_is_shifted_cosine() {
        let fs = 30.0;
        let f = 1.5;
        let period = (fs / f) as usize;
        let s = sine(f, fs, 200);
        let m = self_similarity_map(&tokenize(&s, period).unwrap()).unwrap();
        for j in 0..m.size() {
            for k in 0..m.size() {
                let expected = (2.0 * PI * f * (j as f64 - k as f64) / fs).cos();
                assert!((m.get(j, k) - expected).abs() < 0.05, "({j},{k})");
            }
        }
    }

    #[test]
    fn ssw_diagonal_means() {
        let ones = SelfSimilarityMap::from_upper(3, &[1.0; 9]).unwrap();
        assert_eq!(self_similarity_wave(&ones).values(), &[1.0, 1.0, 1.0]);

        #[rustfmt::skip]
        let upper = [
            1.0, 0.5, -0.2, 0.9,
            0.0, 1.0, 0.5, -0.2,
            0.0, 0.0, 1.0, 0.5,
            0.0, 0.0, 0.0, 1.0,
        ];
        let m = SelfSimilarityMap::from_upper(4, &upper).unwrap();
        assert_eq!(m.get(3, 0), 0.9);
        let w = self_similarity_wave(&m);
        let expected = [1.0, 0.5, -0.2, 0.9];
        for (a, b) in w.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_matches_direct_dft() {
        let x: Vec<f64> = (0..97).map(|i| ((i * 37 % 11) as f64).sin() + 0.1 * i as f64).collect();
        let s = RealSignal::new(x.clone(), 25.0).unwrap();
        let psd = normalized_psd(&s).unwrap();
        let p = dft_power(&x);
        let total: f64 = p.iter().sum();
        assert_eq!(psd.len(), p.len());
        for (a, b) in psd.density.iter().zip(&p) {
            assert!((a - b / total).abs() < 1e-12);
        }
        assert!((psd.density.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(psd.freqs.windows(2).all(|w| w[1] > w[0]));
        assert!((psd.freqs.last().unwrap() - 25.0 * 48.0 / 97.0).abs() < 1e-12);
    }

    #[test]
    fn psd_sinusoid_concentrates() {
        let psd = normalized_psd(&sine(1.2, 30.0, 300)).unwrap();
        let mass: f64 = psd
            .freqs
            .iter()
            .zip(&psd.density)
            .filter(|(f, _)| (**f - 1.2).abs() <= 0.1 + 1e-9)
            .map(|(_, d)| d)
            .sum();
        assert!(mass >= 0.9, "mass {mass}");
        assert!((psd.dominant_freq() - 1.2).abs() < 1e-9);
    }

    #[test]
    fn psd_amplitude_invariant_and_constant_rejected() {
        let s = sine(0.9, 30.0, 128);
        let scaled = RealSignal::new(s.samples().iter().map(|v| 3.5 * v).collect(), 30.0).unwrap();
        let a = normalized_psd(&s).unwrap();
        let b = normalized_psd(&scaled).unwrap();
        for (x, y) in a.density.iter().zip(&b.density) {
            assert!((x - y).abs() < 1e-12);
        }
        let flat = RealSignal::new(vec![0.3; 64], 30.0).unwrap();
        assert!(matches!(normalized_psd(&flat), Err(SspdError::ZeroPower)));
    }

    #[test]
    fn snr_cases() {
        let half = PowerSpectrum {
            freqs: vec![0.5, 1.0, 2.0, 4.0],
            density: vec![0.25, 0.25, 0.25, 0.25],
        };
        assert!((band_snr(&half, 0.65, 3.0).unwrap() - 1.0).abs() < 1e-6);

        let all_in = PowerSpectrum {
            freqs: vec![0.5, 1.0, 2.0, 4.0],
            density: vec![0.0, 0.5, 0.5, 0.0],
        };
        assert!(band_snr(&all_in, 0.65, 3.0).unwrap() >= 1e7);

        let psd = normalized_psd(&sine(1.2, 30.0, 300)).unwrap();
        assert!(band_snr(&psd, HR_BAND_LO, HR_BAND_HI).unwrap() > 10.0);

        assert!(matches!(
            band_snr(&half, 1.1, 1.9),
            Err(SspdError::EmptyBand { .. })
        ));
    }

    #[test]
    fn negative_pearson_cases() {
        let x = sine(1.0, 30.0, 90);
        let neg = RealSignal::new(x.samples().iter().map(|v| -v).collect(), 30.0).unwrap();
        let aff = RealSignal::new(x.samples().iter().map(|v| 2.5 * v + 7.0).collect(), 30.0)
            .unwrap();
        assert!(negative_pearson(&x, &x).unwrap().abs() < 1e-12);
        assert!((negative_pearson(&x, &neg).unwrap() - 2.0).abs() < 1e-12);
        assert!(negative_pearson(&x, &aff).unwrap().abs() < 1e-9);
        let flat = RealSignal::new(vec![1.0; 90], 30.0).unwrap();
        assert!(matches!(
            negative_pearson(&x, &flat),
            Err(SspdError::DegenerateCorrelation)
        ));
    }

    #[test]
    fn hr_from_sinusoid_peaks() {
        let hr = estimate_hr_from_peaks(&sine(1.0, 30.0, 300)).unwrap();
        assert!((hr - 60.0).abs() <= 1.0, "{hr}");
        let hr = estimate_hr_from_peaks(&sine(2.0, 30.0, 300)).unwrap();
        assert!((hr - 120.0).abs() <= 1.0, "{hr}");
        let flat = RealSignal::new(vec![0.0; 300], 30.0).unwrap();
        assert!(matches!(
            estimate_hr_from_peaks(&flat),
            Err(SspdError::InsufficientPeaks { found: 0 })
        ));
    }

    #[test]
    fn bandpass_removes_out_of_band_tone() {
        let n = 300;
        let fs = 30.0;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 1.2 * t).sin() + 0.8 * (2.0 * PI * 6.0 * t).sin()
            })
            .collect();
        let filtered = bandpass(&RealSignal::new(x, fs).unwrap(), 0.65, 3.0).unwrap();
        let clean = sine(1.2, fs, n);
        for (a, b) in filtered.samples().iter().zip(clean.samples()) {
            assert!((a - b).abs() < 1e-9);
        }
        let noisy_hr = estimate_hr_with(&filtered, PeakOptions { bandpass: true }).unwrap();
        assert!((noisy_hr - 72.0).abs() <= 1.0);
    }

    #[test]
    fn peaks_respect_min_distance() {
        let x = [0.0, 1.0, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0];
        assert_eq!(find_peaks(&x, 1), vec![1, 3, 8]);
        assert_eq!(find_peaks(&x, 3), vec![1, 8]);
        // plateau keeps its left edge
        assert_eq!(find_peaks(&[0.0, 1.0, 1.0, 0.0], 1), vec![1]);
        assert_eq!(min_peak_distance(30.0), 7);
    }

    #[test]
    fn metrics_two_point_example() {
        let m = hr_metrics(&[62.0, 68.0], &[60.0, 70.0]).unwrap();
        assert!((m.mae - 2.0).abs() < 1e-12);
        assert!((m.rmse - 2.0).abs() < 1e-12);
        assert!((m.sd - 2.0).abs() < 1e-12);

        let gt = [60.0, 75.0, 90.0];
        let m = hr_metrics(&gt, &gt).unwrap();
        assert_eq!((m.mae, m.rmse, m.sd), (0.0, 0.0, 0.0));
        assert!((m.r.unwrap() - 1.0).abs() < 1e-12);

        let flat = hr_metrics(&[70.0, 70.0], &[60.0, 80.0]).unwrap();
        assert!(flat.r.is_none());
        assert!(hr_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }
}
