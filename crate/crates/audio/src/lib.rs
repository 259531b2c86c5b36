//! Audio front end and far-field simulation: WAV I/O, log-mel features,
//! image-source room impulse responses, and reverberant augmentation.

mod augment;
mod bank;
mod error;
mod features;
mod rir;
mod room;
mod wav;

pub use augment::{add_gaussian_noise, add_noise_prior, apply_rir, convolve_direct, convolve_same_length};
pub use bank::{BankSizes, RirBank};
pub use error::{AudioError, Result};
pub use features::{
    denormalize_features, frame_geometry, hann, hz_to_mel, mel_spectrogram, mel_to_hz, normalize_features, num_frames, stft,
    FeatureSequence, FeatureStats, MelFilterbank, MelFrontend, Spectrogram, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE,
    STD_FLOOR,
};
pub use rir::{delay_samples, energy_decay_curve, generate_rir, generate_taps, schroeder_rt60, RoomImpulseResponse, Split};
pub use room::{
    sample_room_spec, sample_room_spec_in, RoomGeometry, RoomSpec, DEFAULT_MAX_ORDER, MAX_ANGLE_DEG, MAX_DISTANCE_M,
    MIN_ANGLE_DEG, MIN_DISTANCE_M, ROOMS, SPEED_OF_SOUND,
};
pub use wav::{load_wav, save_wav, Waveform};
