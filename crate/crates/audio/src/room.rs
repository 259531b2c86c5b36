//! Shoebox room geometry and the far-field placement sampler.

use rand::Rng;

use crate::error::{AudioError, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MIN_DISTANCE_M: f64 = 1.0;
pub const MAX_DISTANCE_M: f64 = 3.0;
pub const MIN_ANGLE_DEG: f64 = 60.0;
pub const MAX_ANGLE_DEG: f64 = 120.0;
pub const DEFAULT_MAX_ORDER: u32 = 16;

/// Clearance kept between the microphone and any wall.
const MIC_MARGIN_M: f64 = 0.5;
/// Clearance kept between the talker and any wall.
const SOURCE_MARGIN_M: f64 = 0.3;
const MIC_HEIGHT_M: (f64, f64) = (1.0, 1.6);

/// One entry of the fixed room table: dimensions and a uniform wall
/// reflection coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoomGeometry {
    pub dims: [f64; 3],
    pub reflection: f64,
}

const fn room(x: f64, y: f64, z: f64, reflection: f64) -> RoomGeometry {
    RoomGeometry {
        dims: [x, y, z],
        reflection,
    }
}

/// The 20 rooms. Every room is deep enough (y >= 4.5 m) to hold a 3 m
/// talker distance at 60 degrees with both wall margins.
pub const ROOMS: [RoomGeometry; 20] = [
    room(5.0, 4.5, 2.5, 0.55),
    room(5.5, 4.6, 2.6, 0.70),
    room(6.0, 4.8, 2.7, 0.62),
    room(6.2, 5.0, 2.8, 0.80),
    room(6.5, 4.5, 3.0, 0.58),
    room(6.8, 5.4, 2.7, 0.74),
    room(7.0, 5.0, 3.0, 0.66),
    room(7.2, 5.8, 2.9, 0.84),
    room(7.5, 6.0, 3.0, 0.60),
    room(7.8, 5.2, 3.2, 0.78),
    room(8.0, 6.2, 2.8, 0.68),
    room(8.2, 4.7, 3.1, 0.86),
    room(8.5, 6.5, 3.2, 0.64),
    room(8.8, 5.6, 3.0, 0.72),
    room(9.0, 7.0, 3.3, 0.82),
    room(9.2, 6.0, 3.4, 0.57),
    room(9.5, 7.2, 3.0, 0.76),
    room(9.7, 5.5, 3.5, 0.88),
    room(10.0, 7.5, 3.2, 0.70),
    room(10.0, 8.0, 3.5, 0.80),
];

/// Full description of one source/microphone placement in a shoebox room.
#[derive(Clone, Debug, PartialEq)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub mic: [f64; 3],
    /// Pressure reflection coefficient of walls x=0, x=L, y=0, y=W, z=0, z=H.
    pub reflection: [f64; 6],
    pub max_order: u32,
    /// Index into [`ROOMS`] when produced by the sampler.
    pub room_index: Option<usize>,
    /// Horizontal angle between the array axis (x) and the talker direction.
    pub angle_deg: f64,
}

impl RoomSpec {
    pub fn distance(&self) -> f64 {
        dist(&self.source, &self.mic)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(AudioError::Geometry(format!("room dimensions {:?}", self.dims)));
        }
        for (name, p) in [("source", &self.source), ("microphone", &self.mic)] {
            let inside = p.iter().zip(&self.dims).all(|(&c, &d)| c > 0.0 && c < d);
            if !inside {
                return Err(AudioError::Geometry(format!("{name} {p:?} outside room {:?}", self.dims)));
            }
        }
        if self.reflection.iter().any(|&b| !(0.0..1.0).contains(&b)) {
            return Err(AudioError::Geometry(format!("reflection coefficients {:?}", self.reflection)));
        }
        if self.distance() < 1e-6 {
            return Err(AudioError::Geometry("source and microphone coincide".into()));
        }
        Ok(())
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draw a placement in one of the first `n_rooms` table rooms.
///
/// Room, distance and angle are drawn first and never redrawn; only the
/// microphone position (and the side of the array the talker stands on)
/// is resampled until both points respect the wall margins.
pub fn sample_room_spec_in<R: Rng + ?Sized>(rng: &mut R, n_rooms: usize) -> RoomSpec {
    let n_rooms = n_rooms.clamp(1, ROOMS.len());
    let room_index = rng.random_range(0..n_rooms);
    let geo = ROOMS[room_index];
    let distance = rng.random_range(MIN_DISTANCE_M..=MAX_DISTANCE_M);
    let angle_deg = rng.random_range(MIN_ANGLE_DEG..=MAX_ANGLE_DEG);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let [lx, ly, lz] = geo.dims;
    loop {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mic = [
            rng.random_range(MIC_MARGIN_M..lx - MIC_MARGIN_M),
            rng.random_range(MIC_MARGIN_M..ly - MIC_MARGIN_M),
            rng.random_range(MIC_HEIGHT_M.0..MIC_HEIGHT_M.1.min(lz - MIC_MARGIN_M)),
        ];
        let source = [mic[0] + distance * c, mic[1] + side * distance * s, mic[2]];
        let ok = source
            .iter()
            .zip(&geo.dims)
            .all(|(&p, &d)| p >= SOURCE_MARGIN_M && p <= d - SOURCE_MARGIN_M);
        if ok {
            return RoomSpec {
                dims: geo.dims,
                source,
                mic,
                reflection: [geo.reflection; 6],
                max_order: DEFAULT_MAX_ORDER,
                room_index: Some(room_index),
                angle_deg,
            };
        }
    }
}

/// [`sample_room_spec_in`] over all 20 rooms.
pub fn sample_room_spec<R: Rng + ?Sized>(rng: &mut R) -> RoomSpec {
    sample_room_spec_in(rng, ROOMS.len())
}
