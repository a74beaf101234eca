use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::delay::{add_delayed, DEFAULT_HALF_WIDTH};
use super::rir::{image_sources, Room};
use super::{distance, ArrayGeometry, Point};
use crate::error::{Error, Result};

/// Distances below this are clamped in the spherical attenuation.
const NEAR_FIELD_CLAMP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEvent {
    pub position: Point,
    pub waveform: Vec<f64>,
    /// Emission start, in samples from the beginning of the rendering.
    pub onset: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticScene {
    pub geometry: ArrayGeometry,
    pub events: Vec<SourceEvent>,
    /// Noise level relative to the mean clean-signal power; `None` renders
    /// noise-free. With no clean signal the noise RMS is `10^(-snr/20)`.
    pub noise_snr_db: Option<f64>,
    pub room: Option<Room>,
    pub sample_rate: f64,
    pub speed_of_sound: f64,
}

impl AcousticScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !(self.speed_of_sound > 0.0) {
            return Err(Error::config("scene", "sample rate and speed of sound must be positive"));
        }
        for (p, e) in self.events.iter().enumerate() {
            if !(e.gain > 0.0) {
                return Err(Error::config(format!("events[{p}].gain"), "must be positive"));
            }
            if e.waveform.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("events[{p}].waveform"), "must be finite"));
            }
        }
        if let Some(room) = &self.room {
            room.validate()?;
            let outside = self
                .geometry
                .positions()
                .iter()
                .chain(self.events.iter().map(|e| &e.position))
                .any(|p| !room.contains(p));
            if outside {
                return Err(Error::config("room", "sources and microphones must be inside the room"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    /// `[mic][sample]`
    pub channels: Vec<Vec<f64>>,
    /// Events whose onset fell beyond the rendered length.
    pub skipped_events: usize,
}

/// Renders every microphone signal of the scene.
///
/// Each event reaches microphone `i` through either the direct path with
/// gain `1 / max(d, 0.1 m)` or, when a room is present, all of its image
/// sources. Noise is drawn from a generator seeded with `seed`.
pub fn render_scene(scene: &AcousticScene, length: usize, seed: u64) -> Result<Rendered> {
    if length == 0 {
        return Err(Error::InvalidInput("render length must be positive".into()));
    }
    scene.validate()?;
    let fs = scene.sample_rate;
    let c = scene.speed_of_sound;
    let mut channels = vec![vec![0.0; length]; scene.geometry.len()];
    let mut skipped = 0;
    for event in &scene.events {
        if event.onset >= length {
            skipped += 1;
            continue;
        }
        for (mic, out) in scene.geometry.positions().iter().zip(channels.iter_mut()) {
            match &scene.room {
                None => {
                    let d = distance(&event.position, mic);
                    let amp = event.gain / d.max(NEAR_FIELD_CLAMP);
                    add_delayed(out, &event.waveform, event.onset as f64 + d * fs / c, amp, DEFAULT_HALF_WIDTH);
                }
                Some(room) => {
                    for image in image_sources(room, &event.position, mic, room.max_order)? {
                        let amp = event.gain * image.amplitude * image.distance / image.distance.max(NEAR_FIELD_CLAMP);
                        let offset = event.onset as f64 + image.distance * fs / c;
                        add_delayed(out, &event.waveform, offset, amp, DEFAULT_HALF_WIDTH);
                    }
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} event(s) start beyond the rendered length and were skipped");
    }

    if let Some(snr_db) = scene.noise_snr_db {
        add_noise(&mut channels, snr_db, seed)?;
    }
    Ok(Rendered {
        channels,
        skipped_events: skipped,
    })
}

/// Adds white Gaussian noise `snr_db` below the mean per-channel power of
/// `channels` (or at RMS `10^(-snr/20)` when they are silent).
pub(crate) fn add_noise(channels: &mut [Vec<f64>], snr_db: f64, seed: u64) -> Result<()> {
    let count: usize = channels.iter().map(Vec::len).sum();
    if count == 0 {
        return Ok(());
    }
    let total: f64 = channels.iter().flatten().map(|v| v * v).sum();
    let clean_power = total / count as f64;
    let reference = if clean_power > 0.0 { clean_power.sqrt() } else { 1.0 };
    let sigma = reference * 10f64.powf(-snr_db / 20.0);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config("noise_snr_db", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in channels.iter_mut().flatten() {
        *v += normal.sample(&mut rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{max_tdoa, tetrahedral_array, true_tdoas, SPEED_OF_SOUND};
    use crate::signal::{frame_signal, gcc_phat, PHAT_EPSILON};
    use rand::Rng;

    fn burst(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn scene(events: Vec<SourceEvent>, snr: Option<f64>) -> AcousticScene {
        AcousticScene {
            geometry: tetrahedral_array(0.084).unwrap(),
            events,
            noise_snr_db: snr,
            room: None,
            sample_rate: 24_000.0,
            speed_of_sound: SPEED_OF_SOUND,
        }
    }

    #[test]
    fn silence_plus_noise_has_configured_level() {
        let r = render_scene(&scene(vec![], Some(20.0)), 48_000, 3).unwrap();
        for ch in &r.channels {
            let rms = (ch.iter().map(|v| v * v).sum::<f64>() / ch.len() as f64).sqrt();
            assert!((rms - 0.1).abs() < 0.002, "rms {rms}");
        }
    }

    #[test]
    fn single_source_gcc_matches_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut agree = 0;
        let mut total = 0;
        // many independent directions; only sources whose continuous TDOA sits
        // within about 0.02 lag of a rounding boundary can disagree
        for trial in 0..1000 {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let z: f64 = rng.gen_range(-1.0..1.0);
            let rxy = (1.0 - z * z).sqrt();
            let d = rng.gen_range(1.0..3.0);
            let pos = [d * rxy * theta.cos(), d * rxy * theta.sin(), d * z];
            let s = scene(
                vec![SourceEvent {
                    position: pos,
                    waveform: burst(2400, trial),
                    onset: 0,
                    gain: 1.0,
                }],
                None,
            );
            let labels = true_tdoas(&s);
            let rendered = render_scene(&s, 2400, 0).unwrap();
            let frames = frame_signal(&rendered.channels, 24_000.0, 480, 480).unwrap();
            let tau = max_tdoa(&s.geometry, 24_000.0, SPEED_OF_SOUND);
            // skip the edges where the burst has not reached every mic
            for f in &frames[1..frames.len() - 1] {
                for (p, &(i, j)) in labels.pairs.iter().enumerate() {
                    let r = gcc_phat(&f[i], &f[j], tau, PHAT_EPSILON).unwrap();
                    total += 1;
                    if r.argmax() == labels.lags[p][0] {
                        agree += 1;
                    }
                }
            }
        }
        let ratio = agree as f64 / total as f64;
        assert!(ratio >= 0.99, "agreement {ratio}");
    }

    #[test]
    fn deterministic_under_seed() {
        let s = scene(
            vec![SourceEvent {
                position: [1.0, 0.5, 0.2],
                waveform: burst(500, 1),
                onset: 10,
                gain: 0.5,
            }],
            Some(10.0),
        );
        let a = render_scene(&s, 1000, 42).unwrap();
        let b = render_scene(&s, 1000, 42).unwrap();
        let c = render_scene(&s, 1000, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn late_events_are_skipped() {
        let s = scene(
            vec![SourceEvent {
                position: [1.0, 0.0, 0.0],
                waveform: vec![1.0; 10],
                onset: 2000,
                gain: 1.0,
            }],
            None,
        );
        let r = render_scene(&s, 1000, 0).unwrap();
        assert_eq!(r.skipped_events, 1);
        assert!(r.channels.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn room_rendering_adds_reflections() {
        let mut s = scene(
            vec![SourceEvent {
                position: [3.0, 2.0, 1.5],
                waveform: vec![1.0],
                onset: 0,
                gain: 1.0,
            }],
            None,
        );
        s.geometry = s.geometry.centered_at([1.5, 2.5, 1.2]);
        s.room = Some(Room {
            dims: [5.0, 4.0, 3.0],
            beta: 0.6,
            max_order: 1,
        });
        let r = render_scene(&s, 2000, 0).unwrap();
        let nonzero = r.channels[0].iter().filter(|v| v.abs() > 1e-3).count();
        assert!(nonzero > 7);

        s.room.as_mut().unwrap().dims = [2.0, 2.0, 2.0];
        assert!(render_scene(&s, 2000, 0).is_err());
    }

    #[test]
    fn rejects_bad_gain() {
        let s = scene(
            vec![SourceEvent {
                position: [1.0, 0.0, 0.0],
                waveform: vec![1.0],
                onset: 0,
                gain: 0.0,
            }],
            None,
        );
        assert!(render_scene(&s, 10, 0).is_err());
    }
}
