//! Duration-preserving reverberation and the Gaussian input prior.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{AudioError, Result};
use crate::features::FeatureSequence;
use crate::wav::Waveform;

/// Kernels at most this long are convolved directly.
const DIRECT_MAX_TAPS: usize = 64;

/// `out[n] = sum_k h[k] x[n-k]` for `n < len(x)`, which is the valid
/// convolution of `x` left-padded with `len(h) - 1` zeros. O(N K).
pub fn convolve_direct(x: &[f32], h: &[f32]) -> Vec<f32> {
    (0..x.len())
        .map(|n| {
            let kmax = h.len().min(n + 1);
            (0..kmax).map(|k| h[k] as f64 * x[n - k] as f64).sum::<f64>() as f32
        })
        .collect()
}

thread_local! {
    // plans are cached per size inside the planner
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn convolve_fft(x: &[f32], h: &[f32]) -> Vec<f32> {
    let n = x.len();
    let size = (n + h.len() - 1).next_power_of_two();
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(size), p.plan_fft_inverse(size))
    });
    let pad = |s: &[f32]| {
        let mut v: Vec<Complex64> = s.iter().map(|&a| Complex64::new(a as f64, 0.0)).collect();
        v.resize(size, Complex64::new(0.0, 0.0));
        v
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a[..n].iter().map(|c| (c.re * scale) as f32).collect()
}

/// Causal convolution truncated to the input length, before any level
/// normalization. Linear in `x`.
pub fn convolve_same_length(x: &[f32], h: &[f32]) -> Result<Vec<f32>> {
    if h.is_empty() {
        return Err(AudioError::EmptyRir);
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    Ok(if h.len() <= DIRECT_MAX_TAPS {
        convolve_direct(x, h)
    } else {
        convolve_fft(x, h)
    })
}

/// Reverberate `clean` with `taps`, keep its length, and rescale so the
/// output peak equals the clean peak.
pub fn apply_rir(clean: &Waveform, taps: &[f32], sample_rate: u32) -> Result<Waveform> {
    if sample_rate != clean.sample_rate {
        return Err(AudioError::SampleRateMismatch(clean.sample_rate, sample_rate));
    }
    let mut out = convolve_same_length(&clean.samples, taps)?;
    let peak_in = clean.peak();
    let peak_out = out.iter().fold(0f32, |m, s| m.max(s.abs()));
    if peak_out > 0.0 && peak_in > 0.0 && peak_out != peak_in {
        let g = peak_in as f64 / peak_out as f64;
        for s in &mut out {
            *s = (*s as f64 * g) as f32;
        }
    }
    Waveform::new(out, clean.sample_rate)
}

/// Add i.i.d. `N(0, sigma^2)` to every value. `sigma == 0` draws nothing.
pub fn add_gaussian_noise<R: Rng + ?Sized>(values: &mut [f32], sigma: f32, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, sigma).expect("finite positive sigma");
    for v in values {
        *v += normal.sample(rng);
    }
}

pub fn add_noise_prior<R: Rng + ?Sized>(features: &FeatureSequence, sigma: f32, rng: &mut R) -> FeatureSequence {
    let mut out = features.clone();
    add_gaussian_noise(out.data_mut(), sigma, rng);
    out
}
