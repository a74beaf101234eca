//! Labeled multichannel frames drawn from randomized scenes.

use std::path::PathBuf;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::geometry::labels_for;
use super::render::add_noise;
use super::rir::Room;
use super::{
    distance, render_scene, tetrahedral_array, AcousticScene, ArrayGeometry, Point, SourceEvent,
    TdoaLabelSet, DEFAULT_HALF_WIDTH, SPEED_OF_SOUND,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Tetrahedral { diameter: f64 },
    Positions { positions: Vec<Point> },
}

impl GeometrySpec {
    pub fn build(&self) -> Result<ArrayGeometry> {
        match self {
            GeometrySpec::Tetrahedral { diameter } => tetrahedral_array(*diameter),
            GeometrySpec::Positions { positions } => ArrayGeometry::new(positions.clone()),
        }
    }
}

/// Source signal family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSpec {
    WhiteNoise,
    /// Gaussian noise restricted to a random band inside `[min_hz, max_hz]`
    /// at least `min_bandwidth_hz` wide.
    BandLimited {
        min_hz: f64,
        max_hz: f64,
        min_bandwidth_hz: f64,
    },
    /// Random excerpts of raw little-endian `f32` mono files recorded at the
    /// dataset sample rate.
    Snippets { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub dims_min: Point,
    pub dims_max: Point,
    pub beta: [f64; 2],
    #[serde(default = "default_max_order")]
    pub max_order: u32,
}

fn default_max_order() -> u32 {
    2
}

/// Dataset description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_geometry")]
    pub geometry: GeometrySpec,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    pub frames: usize,
    /// Relative mass of each polyphony `P = 0, 1, ..., P_max`.
    pub polyphony: Vec<f64>,
    #[serde(default = "default_waveform")]
    pub waveform: WaveformSpec,
    #[serde(default = "default_burst_ms")]
    pub burst_ms: f64,
    /// Uniform SNR range in dB; `None` renders noise-free frames.
    #[serde(default)]
    pub snr_db: Option<[f64; 2]>,
    /// Uniform per-event gain range in dB.
    #[serde(default)]
    pub gain_db: [f64; 2],
    #[serde(default = "default_source_distance")]
    pub source_distance: [f64; 2],
    /// Minimum angle between simultaneous sources seen from the array center.
    #[serde(default)]
    pub min_separation_deg: f64,
    #[serde(default)]
    pub room: Option<RoomSpec>,
}

fn default_geometry() -> GeometrySpec {
    GeometrySpec::Tetrahedral { diameter: 0.084 }
}
fn default_sample_rate() -> f64 {
    24_000.0
}
fn default_speed_of_sound() -> f64 {
    SPEED_OF_SOUND
}
fn default_window() -> usize {
    480
}
fn default_waveform() -> WaveformSpec {
    WaveformSpec::WhiteNoise
}
fn default_burst_ms() -> f64 {
    100.0
}
fn default_source_distance() -> [f64; 2] {
    [1.0, 3.0]
}

impl DatasetSpec {
    /// Minimal spec with defaults for everything but size and polyphony.
    pub fn new(frames: usize, polyphony: Vec<f64>) -> Self {
        Self {
            geometry: default_geometry(),
            sample_rate: default_sample_rate(),
            speed_of_sound: default_speed_of_sound(),
            window: default_window(),
            frames,
            polyphony,
            waveform: default_waveform(),
            burst_ms: default_burst_ms(),
            snr_db: None,
            gain_db: [0.0, 0.0],
            source_distance: default_source_distance(),
            min_separation_deg: 0.0,
            room: None,
        }
    }

    fn burst_len(&self) -> usize {
        (self.burst_ms * self.sample_rate / 1000.0).round() as usize
    }

    /// First sample of the analysis window inside the rendered burst.
    fn crop_start(&self) -> usize {
        self.burst_len().saturating_sub(self.window) / 2
    }

    pub fn validate(&self) -> Result<ArrayGeometry> {
        let geometry = self.geometry.build()?;
        if !(self.sample_rate > 0.0) {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::config("speed_of_sound", "must be positive"));
        }
        if self.window == 0 {
            return Err(Error::config("window", "must be positive"));
        }
        if self.polyphony.is_empty() {
            return Err(Error::config("polyphony", "needs at least one entry"));
        }
        if self.polyphony.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("polyphony", "masses must be finite and non-negative"));
        }
        if self.polyphony.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("polyphony", "total mass must be positive"));
        }
        check_range("gain_db", self.gain_db)?;
        check_range("source_distance", self.source_distance)?;
        if !(self.source_distance[0] > 0.0) {
            return Err(Error::config("source_distance", "must be positive"));
        }
        if let Some(snr) = self.snr_db {
            check_range("snr_db", snr)?;
        }
        if !(0.0..180.0).contains(&self.min_separation_deg) {
            return Err(Error::config("min_separation_deg", "must be in [0, 180)"));
        }
        // The window must sit inside the burst after the longest direct path.
        let longest = self.source_distance[1] + max_radius(&geometry);
        let latest_arrival = (longest * self.sample_rate / self.speed_of_sound).ceil() as usize + DEFAULT_HALF_WIDTH;
        if self.crop_start() < latest_arrival || self.crop_start() + self.window > self.burst_len() {
            return Err(Error::config(
                "burst_ms",
                format!(
                    "bursts of {} samples are too short for a {}-sample window with arrivals up to {} samples",
                    self.burst_len(),
                    self.window,
                    latest_arrival
                ),
            ));
        }
        match &self.waveform {
            WaveformSpec::WhiteNoise => {}
            WaveformSpec::BandLimited {
                min_hz,
                max_hz,
                min_bandwidth_hz,
            } => {
                let nyquist = self.sample_rate / 2.0;
                if !(*min_hz >= 0.0 && min_hz + min_bandwidth_hz <= *max_hz && *max_hz <= nyquist && *min_bandwidth_hz > 0.0) {
                    return Err(Error::config(
                        "waveform",
                        "band limits must satisfy 0 <= min_hz, min_hz + min_bandwidth_hz <= max_hz <= Nyquist",
                    ));
                }
            }
            WaveformSpec::Snippets { paths } => {
                if paths.is_empty() {
                    return Err(Error::config("waveform.paths", "no snippet files given"));
                }
            }
        }
        if let Some(room) = &self.room {
            check_range("room.beta", room.beta)?;
            for axis in 0..3 {
                check_range("room.dims", [room.dims_min[axis], room.dims_max[axis]])?;
            }
            if room.dims_min.iter().any(|&d| d <= 2.0 * ROOM_MARGIN + 0.2) {
                return Err(Error::config("room.dims_min", "room is too small to hold the array"));
            }
            if !(room.beta[0] >= 0.0 && room.beta[1] < 1.0) {
                return Err(Error::config("room.beta", "reflection coefficients must lie in [0, 1)"));
            }
            if room.max_order > 4 {
                return Err(Error::config("room.max_order", "at most 4 is supported"));
            }
        }
        Ok(geometry)
    }

    /// Hash of everything a trained model depends on: array, rates, window.
    pub fn compat_hash(&self) -> Result<String> {
        let geometry = self.geometry.build()?;
        Ok(compat_hash(&geometry, self.sample_rate, self.speed_of_sound, self.window))
    }
}

/// Hash identifying array geometry, sample rate, speed of sound and window.
pub fn compat_hash(geometry: &ArrayGeometry, fs: f64, c: f64, window: usize) -> String {
    crate::hash::json_hash(&(geometry, fs, c, window))
}

fn check_range(field: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::config(field, "range must be finite with min <= max"));
    }
    Ok(())
}

fn max_radius(g: &ArrayGeometry) -> f64 {
    let c = g.centroid();
    g.positions().iter().map(|p| distance(p, &c)).fold(0.0, f64::max)
}

/// Distance kept between the array or sources and any wall (m).
const ROOM_MARGIN: f64 = 0.5;

/// One labeled analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub index: usize,
    /// `[mic][sample]`, `window` samples each.
    pub channels: Vec<Vec<f64>>,
    /// Labels of every active event; not truncated to any track count.
    pub labels: TdoaLabelSet,
    pub polyphony: usize,
}

/// Draws frames from a validated [`DatasetSpec`].
///
/// Frame `index` under `seed` uses its own ChaCha stream, so frames can be
/// produced in any order or in parallel with identical results.
#[derive(Debug, Clone)]
pub struct DatasetGenerator {
    spec: DatasetSpec,
    geometry: ArrayGeometry,
    polyphony: WeightedIndex<f64>,
    snippets: Vec<Vec<f64>>,
}

impl DatasetGenerator {
    pub fn new(spec: DatasetSpec) -> Result<Self> {
        let geometry = spec.validate()?;
        let polyphony = WeightedIndex::new(&spec.polyphony)
            .map_err(|e| Error::config("polyphony", e.to_string()))?;
        let snippets = match &spec.waveform {
            WaveformSpec::Snippets { paths } => paths
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p)?;
                    let samples: Vec<f64> = bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                        .collect();
                    if samples.len() < spec.burst_len() {
                        return Err(Error::config(
                            "waveform.paths",
                            format!("{} is shorter than one burst", p.display()),
                        ));
                    }
                    Ok(samples)
                })
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Self {
            spec,
            geometry,
            polyphony,
            snippets,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geometry
    }

    pub fn frame(&self, seed: u64, index: usize) -> Result<DatasetFrame> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);

        let polyphony = self.polyphony.sample(&mut rng);
        let room = spec.room.as_ref().map(|r| Room {
            dims: [0, 1, 2].map(|a| uniform(&mut rng, [r.dims_min[a], r.dims_max[a]])),
            beta: uniform(&mut rng, r.beta),
            max_order: r.max_order,
        });
        let center = match &room {
            Some(room) => [0, 1, 2].map(|a| rng.gen_range(ROOM_MARGIN..room.dims[a] - ROOM_MARGIN)),
            None => [0.0; 3],
        };
        let geometry = self.geometry.centered_at(center);

        let mut directions: Vec<Point> = Vec::with_capacity(polyphony);
        let min_cos = spec.min_separation_deg.to_radians().cos();
        for _ in 0..polyphony {
            let mut tries = 0;
            let dir = loop {
                let d = unit_vector(&mut rng);
                if directions.iter().all(|o| dot(o, &d) <= min_cos) || spec.min_separation_deg == 0.0 {
                    break d;
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::config(
                        "min_separation_deg",
                        "could not place sources with the requested separation",
                    ));
                }
            };
            directions.push(dir);
        }

        let burst_len = spec.burst_len();
        let mut events = Vec::with_capacity(polyphony);
        for dir in &directions {
            let mut dist = uniform(&mut rng, spec.source_distance);
            if let Some(room) = &room {
                let exit = ray_exit(&center, dir, &room.dims);
                dist = dist.min(exit - ROOM_MARGIN).max(0.2);
            }
            let position = [0, 1, 2].map(|a| center[a] + dist * dir[a]);
            let gain = 10f64.powf(uniform(&mut rng, spec.gain_db) / 20.0);
            let waveform = self.waveform(&mut rng, burst_len)?;
            events.push(SourceEvent {
                position,
                waveform,
                onset: 0,
                gain,
            });
        }
        let snr = spec.snr_db.map(|r| uniform(&mut rng, r));
        let noise_seed: u64 = rng.gen();

        let labels = labels_for(
            &geometry,
            events.iter().map(|e| e.position),
            spec.sample_rate,
            spec.speed_of_sound,
        );
        let scene = AcousticScene {
            geometry,
            events,
            noise_snr_db: None,
            room,
            sample_rate: spec.sample_rate,
            speed_of_sound: spec.speed_of_sound,
        };
        let start = spec.crop_start();
        let rendered = render_scene(&scene, start + spec.window, 0)?;
        let mut channels: Vec<Vec<f64>> = rendered
            .channels
            .into_iter()
            .map(|c| c[start..start + spec.window].to_vec())
            .collect();
        if let Some(snr) = snr {
            add_noise(&mut channels, snr, noise_seed)?;
        }
        Ok(DatasetFrame {
            index,
            channels,
            labels,
            polyphony,
        })
    }

    fn waveform(&self, rng: &mut ChaCha8Rng, len: usize) -> Result<Vec<f64>> {
        Ok(match &self.spec.waveform {
            WaveformSpec::WhiteNoise => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
            WaveformSpec::BandLimited {
                min_hz,
                max_hz,
                min_bandwidth_hz,
            } => {
                let lo = rng.gen_range(*min_hz..=max_hz - min_bandwidth_hz);
                let hi = rng.gen_range(lo + min_bandwidth_hz..=*max_hz);
                let noise: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
                band_pass(&noise, lo / self.spec.sample_rate, hi / self.spec.sample_rate)
            }
            WaveformSpec::Snippets { .. } => {
                let file = &self.snippets[rng.gen_range(0..self.snippets.len())];
                let offset = rng.gen_range(0..=file.len() - len);
                file[offset..offset + len].to_vec()
            }
        })
    }
}

/// Zeroes DFT bins outside `[lo, hi]` (normalized frequency) and rescales to
/// unit variance.
fn band_pass(x: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 / n as f64;
        if f < lo || f > hi {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter().map(|v| v / rms).collect()
    } else {
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Distance from `origin` along `dir` to the first wall of `[0, dims]`.
fn ray_exit(origin: &Point, dir: &Point, dims: &Point) -> f64 {
    (0..3)
        .filter(|&a| dir[a] != 0.0)
        .map(|a| {
            let wall = if dir[a] > 0.0 { dims[a] } else { 0.0 };
            (wall - origin[a]) / dir[a]
        })
        .fold(f64::INFINITY, f64::min)
}

/// Iterator over `spec.frames` frames under `seed`.
pub fn sample_dataset(spec: &DatasetSpec, seed: u64) -> Result<impl Iterator<Item = Result<DatasetFrame>>> {
    let generator = DatasetGenerator::new(spec.clone())?;
    Ok((0..spec.frames).map(move |i| generator.frame(seed, i)))
}

/// Generates a single frame; see [`DatasetGenerator::frame`].
pub fn generate_frame(spec: &DatasetSpec, seed: u64, index: usize) -> Result<DatasetFrame> {
    DatasetGenerator::new(spec.clone())?.frame(seed, index)
}

/// Picks `k` of the frame's events at random when more than `k` are active.
pub fn select_events<R: Rng>(labels: &TdoaLabelSet, k: usize, rng: &mut R) -> TdoaLabelSet {
    let p = labels.events();
    if p <= k {
        return labels.clone();
    }
    let mut chosen = rand::seq::index::sample(rng, p, k).into_vec();
    chosen.sort_unstable();
    labels.subset(&chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::max_tdoa;

    #[test]
    fn fixed_polyphony_gives_one_label_per_pair() {
        let spec = DatasetSpec::new(200, vec![0.0, 1.0]);
        for frame in sample_dataset(&spec, 5).unwrap() {
            let frame = frame.unwrap();
            assert_eq!(frame.polyphony, 1);
            assert_eq!(frame.labels.lags.len(), 6);
            assert!(frame.labels.lags.iter().all(|l| l.len() == 1));
            assert_eq!(frame.channels.len(), 4);
            assert!(frame.channels.iter().all(|c| c.len() == 480));
        }
    }

    #[test]
    fn uniform_polyphony_frequencies() {
        let spec = DatasetSpec::new(3000, vec![0.0, 1.0, 1.0, 1.0]);
        let generator = DatasetGenerator::new(spec).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..3000 {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            rng.set_stream(i as u64);
            counts[generator.polyphony.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let f = c as f64 / 3000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
        // chi-square with 2 degrees of freedom, 0.1% critical value 13.8
        let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
        assert!(chi2 < 13.8, "chi2 {chi2}");
    }

    #[test]
    fn silent_frames_have_empty_labels() {
        let mut spec = DatasetSpec::new(20, vec![1.0]);
        spec.snr_db = Some([10.0, 10.0]);
        for frame in sample_dataset(&spec, 1).unwrap() {
            let frame = frame.unwrap();
            assert_eq!(frame.polyphony, 0);
            assert!(frame.labels.lags.iter().all(Vec::is_empty));
            assert!(frame.channels[0].iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn labels_within_tau_max_and_deterministic() {
        let mut spec = DatasetSpec::new(100, vec![0.2, 0.3, 0.3, 0.1, 0.05, 0.05]);
        spec.snr_db = Some([0.0, 30.0]);
        spec.gain_db = [-6.0, 0.0];
        let tau = max_tdoa(&spec.geometry.build().unwrap(), 24_000.0, 343.0) as i64;
        let a: Vec<_> = sample_dataset(&spec, 3).unwrap().map(Result::unwrap).collect();
        let b: Vec<_> = sample_dataset(&spec, 3).unwrap().map(Result::unwrap).collect();
        assert_eq!(a, b);
        for f in &a {
            assert!(f.labels.lags.iter().flatten().all(|l| l.abs() <= tau));
            assert_eq!(f.labels.events(), f.polyphony);
        }
    }

    #[test]
    fn frames_are_independent_of_order() {
        let spec = DatasetSpec::new(10, vec![0.0, 1.0, 1.0]);
        let g = DatasetGenerator::new(spec).unwrap();
        let late = g.frame(4, 7).unwrap();
        let all: Vec<_> = (0..10).map(|i| g.frame(4, i).unwrap()).collect();
        assert_eq!(all[7], late);
    }

    #[test]
    fn invalid_configurations() {
        let spec = DatasetSpec::new(10, vec![0.5, -0.1]);
        match DatasetGenerator::new(spec) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "polyphony"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(DatasetGenerator::new(DatasetSpec::new(10, vec![0.0, 0.0])).is_err());
        let mut spec = DatasetSpec::new(10, vec![1.0]);
        spec.burst_ms = 20.0;
        assert!(DatasetGenerator::new(spec).is_err());
    }

    #[test]
    fn band_limited_and_room_frames() {
        let mut spec = DatasetSpec::new(5, vec![0.0, 0.0, 1.0]);
        spec.waveform = WaveformSpec::BandLimited {
            min_hz: 100.0,
            max_hz: 8000.0,
            min_bandwidth_hz: 500.0,
        };
        spec.room = Some(RoomSpec {
            dims_min: [4.0, 4.0, 2.5],
            dims_max: [6.0, 5.0, 3.0],
            beta: [0.3, 0.7],
            max_order: 1,
        });
        for f in sample_dataset(&spec, 2).unwrap() {
            let f = f.unwrap();
            assert_eq!(f.labels.events(), 2);
            assert!(f.channels.iter().flatten().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn separation_is_respected() {
        let mut spec = DatasetSpec::new(30, vec![0.0, 0.0, 1.0]);
        spec.min_separation_deg = 60.0;
        assert!(sample_dataset(&spec, 1).unwrap().all(|f| f.is_ok()));
    }

    #[test]
    fn random_event_selection() {
        let labels = TdoaLabelSet {
            pairs: vec![(0, 1), (0, 2)],
            lags: vec![vec![1, 2, 3, 4, 5], vec![-1, -2, -3, -4, -5]],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let picked = select_events(&labels, 3, &mut rng);
        assert_eq!(picked.events(), 3);
        // the same events are kept on every pair
        for (a, b) in picked.lags[0].iter().zip(&picked.lags[1]) {
            assert_eq!(*a, -*b);
        }
        let two = labels.subset(&[0, 1]);
        assert_eq!(select_events(&two, 3, &mut rng), two);
    }
}
