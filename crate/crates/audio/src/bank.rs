//! On-disk collection of impulse responses split into train/dev/eval.
//!
//! Layout: `<id>.wav` (32-bit float), `manifest.txt` with
//! `id split room_index distance_m angle_deg` lines, and `geometry.txt`
//! with the full placement for each id.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{AudioError, Result};
use crate::rir::{generate_rir, RoomImpulseResponse, Split};
use crate::room::{sample_room_spec_in, RoomSpec};
use crate::wav::{load_any_mono, save_float_wav};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BankSizes {
    pub train: usize,
    pub dev: usize,
    pub eval: usize,
}

impl Default for BankSizes {
    fn default() -> Self {
        Self {
            train: 64,
            dev: 8,
            eval: 12,
        }
    }
}

impl BankSizes {
    /// Divide `total` in the default 64:8:12 proportion, at least one each.
    pub fn proportional(total: usize) -> Self {
        let total = total.max(3);
        let dev = ((total * 8) / 84).max(1);
        let eval = ((total * 12) / 84).max(1);
        Self {
            train: total - dev - eval,
            dev,
            eval,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.eval
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RirBank {
    pub entries: Vec<RoomImpulseResponse>,
}

impl RirBank {
    /// Sample `sizes.total()` placements from the first `n_rooms` rooms.
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, n_rooms: usize, sizes: BankSizes, sample_rate: u32) -> Result<Self> {
        let mut entries = Vec::with_capacity(sizes.total());
        let plan = [(Split::Train, sizes.train), (Split::Dev, sizes.dev), (Split::Eval, sizes.eval)];
        let mut i = 0;
        for (split, count) in plan {
            for _ in 0..count {
                let spec = sample_room_spec_in(rng, n_rooms);
                entries.push(generate_rir(&spec, sample_rate, &format!("rir{i:04}"), split)?);
                i += 1;
            }
        }
        let bank = Self { entries };
        bank.check_disjoint()?;
        Ok(bank)
    }

    pub fn split(&self, split: Split) -> Vec<&RoomImpulseResponse> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    /// Ids are unique and no placement appears in two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(AudioError::Bank(format!("duplicate id {}", e.id)));
            }
        }
        for a in &self.entries {
            for b in &self.entries {
                if a.split < b.split && a.spec.source == b.spec.source && a.spec.mic == b.spec.mic && a.spec.dims == b.spec.dims {
                    return Err(AudioError::Bank(format!("{} ({}) and {} ({}) share a placement", a.id, a.split, b.id, b.split)));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        let mut geometry = String::new();
        for e in &self.entries {
            save_float_wav(&dir.join(format!("{}.wav", e.id)), &e.taps, e.sample_rate)?;
            let s = &e.spec;
            let room = s.room_index.map(|r| r as i64).unwrap_or(-1);
            writeln!(manifest, "{} {} {} {:.4} {:.2}", e.id, e.split, room, s.distance(), s.angle_deg).unwrap();
            let nums: Vec<String> = s
                .dims
                .iter()
                .chain(&s.source)
                .chain(&s.mic)
                .chain(&s.reflection)
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(geometry, "{} {} {} {:e}", e.id, s.max_order, nums.join(" "), s.angle_deg).unwrap();
        }
        std::fs::write(dir.join("manifest.txt"), manifest)?;
        std::fs::write(dir.join("geometry.txt"), geometry)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
        let geometry = std::fs::read_to_string(dir.join("geometry.txt"))?;
        let mut specs = std::collections::HashMap::new();
        for (ln, line) in geometry.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 18 {
                return Err(AudioError::Bank(format!("geometry.txt line {}: expected 18 fields", ln + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| AudioError::Bank(format!("geometry.txt line {}: bad number {s:?}", ln + 1)));
            let v: Vec<f64> = f[2..17].iter().map(|s| num(s)).collect::<Result<_>>()?;
            let max_order = f[1].parse().map_err(|_| AudioError::Bank(format!("geometry.txt line {}: bad order", ln + 1)))?;
            specs.insert(
                f[0].to_string(),
                RoomSpec {
                    dims: [v[0], v[1], v[2]],
                    source: [v[3], v[4], v[5]],
                    mic: [v[6], v[7], v[8]],
                    reflection: [v[9], v[10], v[11], v[12], v[13], v[14]],
                    max_order,
                    room_index: None,
                    angle_deg: num(f[17])?,
                },
            );
        }
        let mut entries = Vec::new();
        for (ln, line) in manifest.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(AudioError::Bank(format!("manifest.txt line {}: expected 5 fields", ln + 1)));
            }
            let split: Split = f[1].parse().map_err(AudioError::Bank)?;
            let room: i64 = f[2].parse().map_err(|_| AudioError::Bank(format!("manifest.txt line {}: bad room index", ln + 1)))?;
            let mut spec = specs
                .remove(f[0])
                .ok_or_else(|| AudioError::Bank(format!("{} missing from geometry.txt", f[0])))?;
            spec.room_index = usize::try_from(room).ok();
            let (taps, sample_rate) = load_any_mono(&dir.join(format!("{}.wav", f[0])))?;
            entries.push(RoomImpulseResponse {
                id: f[0].to_string(),
                taps,
                sample_rate,
                spec,
                split,
            });
        }
        let bank = Self { entries };
        bank.check_disjoint()?;
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn proportional_sizes() {
        assert_eq!(BankSizes::proportional(84), BankSizes::default());
        let s = BankSizes::proportional(10);
        assert_eq!(s.total(), 10);
        assert!(s.dev >= 1 && s.eval >= 1);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sizes = BankSizes { train: 3, dev: 1, eval: 1 };
        let bank = RirBank::generate(&mut rng, 20, sizes, 16000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let back = RirBank::load(dir.path()).unwrap();
        assert_eq!(back.entries.len(), 5);
        for (a, b) in bank.entries.iter().zip(&back.entries) {
            assert_eq!(a.taps, b.taps);
            assert_eq!(a.split, b.split);
            assert_eq!(a.spec.room_index, b.spec.room_index);
            assert!((a.spec.distance() - b.spec.distance()).abs() < 1e-9);
        }
        let first = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        let fields: Vec<&str> = first.lines().next().unwrap().split(' ').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[1], "train");
    }

    #[test]
    fn shared_placement_across_splits_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sizes = BankSizes { train: 1, dev: 1, eval: 0 };
        let mut bank = RirBank::generate(&mut rng, 20, sizes, 16000).unwrap();
        bank.entries[1].spec = bank.entries[0].spec.clone();
        assert!(bank.check_disjoint().is_err());
    }
}
