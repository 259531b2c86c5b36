//! Image-source impulse responses for shoebox rooms.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::Result;
use crate::room::{RoomSpec, SPEED_OF_SOUND};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "eval" | "test" => Ok(Split::Eval),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoomImpulseResponse {
    pub id: String,
    pub taps: Vec<f32>,
    pub sample_rate: u32,
    pub spec: RoomSpec,
    pub split: Split,
}

impl RoomImpulseResponse {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn first_nonzero(&self) -> Option<usize> {
        self.taps.iter().position(|&t| t != 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.taps.iter().map(|&t| (t as f64) * (t as f64)).sum::<f64>().sqrt()
    }
}

/// Integer sample delay of a path of `length` meters.
pub fn delay_samples(length: f64, sample_rate: u32) -> usize {
    (length / SPEED_OF_SOUND * sample_rate as f64).round() as usize
}

/// Allen-Berkley image-source synthesis. Each image contributes
/// `prod(beta^hits) / (4 pi r)` at sample `round(r / c * fs)`; images whose
/// reflection product is exactly zero are skipped.
pub fn generate_taps(spec: &RoomSpec, sample_rate: u32) -> Result<Vec<f32>> {
    spec.validate()?;
    let n = spec.max_order as i64;
    let [lx, ly, lz] = spec.dims;
    let b = spec.reflection;
    let mut hits: Vec<(usize, f64)> = Vec::new();
    for u in 0..2i64 {
        for v in 0..2i64 {
            for w in 0..2i64 {
                for mx in -n..=n {
                    // wall hits along x: |mx - u| on the x=0 wall, |mx| on x=L
                    let ax = pow_hits(b[0], (mx - u).abs()) * pow_hits(b[1], mx.abs());
                    if ax == 0.0 {
                        continue;
                    }
                    let px = (1 - 2 * u) as f64 * spec.source[0] + 2.0 * mx as f64 * lx - spec.mic[0];
                    for my in -n..=n {
                        let ay = pow_hits(b[2], (my - v).abs()) * pow_hits(b[3], my.abs());
                        if ay == 0.0 {
                            continue;
                        }
                        let py = (1 - 2 * v) as f64 * spec.source[1] + 2.0 * my as f64 * ly - spec.mic[1];
                        for mz in -n..=n {
                            let az = pow_hits(b[4], (mz - w).abs()) * pow_hits(b[5], mz.abs());
                            if az == 0.0 {
                                continue;
                            }
                            let pz =
                                (1 - 2 * w) as f64 * spec.source[2] + 2.0 * mz as f64 * lz - spec.mic[2];
                            let r = (px * px + py * py + pz * pz).sqrt();
                            hits.push((delay_samples(r, sample_rate), ax * ay * az / (4.0 * PI * r)));
                        }
                    }
                }
            }
        }
    }
    let len = hits.iter().map(|h| h.0).max().unwrap_or(0) + 1;
    let mut taps = vec![0f64; len];
    for (d, a) in hits {
        taps[d] += a;
    }
    Ok(taps.into_iter().map(|t| t as f32).collect())
}

fn pow_hits(beta: f64, k: i64) -> f64 {
    if k == 0 {
        1.0
    } else {
        beta.powi(k as i32)
    }
}

pub fn generate_rir(spec: &RoomSpec, sample_rate: u32, id: &str, split: Split) -> Result<RoomImpulseResponse> {
    Ok(RoomImpulseResponse {
        id: id.to_string(),
        taps: generate_taps(spec, sample_rate)?,
        sample_rate,
        spec: spec.clone(),
        split,
    })
}

/// Schroeder backward-integrated energy decay in dB, normalized to 0 dB at t=0.
pub fn energy_decay_curve(taps: &[f32]) -> Vec<f64> {
    let mut edc = vec![0f64; taps.len()];
    let mut acc = 0f64;
    for i in (0..taps.len()).rev() {
        acc += (taps[i] as f64).powi(2);
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|&e| 10.0 * (e / total).max(1e-300).log10()).collect()
}

/// RT60 extrapolated from a least-squares fit of the decay curve between
/// -5 dB and -25 dB. `None` if the curve never falls to -25 dB.
pub fn schroeder_rt60(taps: &[f32], sample_rate: u32) -> Option<f64> {
    let edc = energy_decay_curve(taps);
    let start = edc.iter().position(|&d| d <= -5.0)?;
    let end = edc.iter().position(|&d| d <= -25.0)?;
    if end <= start + 1 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (start..=end).map(|i| (i as f64 / sample_rate as f64, edc[i])).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(beta: f64, source: [f64; 3]) -> RoomSpec {
        RoomSpec {
            dims: [6.0, 5.0, 3.0],
            source,
            mic: [1.0, 2.5, 1.5],
            reflection: [beta; 6],
            max_order: 6,
            room_index: None,
            angle_deg: 0.0,
        }
    }

    #[test]
    fn anechoic_room_has_one_tap() {
        let taps = generate_taps(&spec(0.0, [3.0, 2.5, 1.5]), 16000).unwrap();
        assert_eq!(taps.iter().filter(|&&t| t != 0.0).count(), 1);
        let d = delay_samples(2.0, 16000);
        assert_eq!(d, 93);
        assert!((taps[d] as f64 - 1.0 / (4.0 * PI * 2.0)).abs() < 1e-7);
    }

    #[test]
    fn direct_path_is_first_tap() {
        let s = spec(0.7, [3.5, 3.1, 1.2]);
        let rir = generate_rir(&s, 16000, "r", Split::Train).unwrap();
        assert_eq!(rir.first_nonzero(), Some(delay_samples(s.distance(), 16000)));
        assert!(rir.l2_norm() > 0.0);
        assert!(rir.taps.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn split_parses_its_display() {
        for s in Split::ALL {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
    }
}
