use serde::{Deserialize, Serialize};

use super::{distance, AcousticScene, Point};
use crate::error::{Error, Result};

/// Microphone positions in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mic_positions: Vec<Point>,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Point>) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(Error::config("geometry", "at least two microphones are required"));
        }
        if mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("geometry", "non-finite microphone coordinate"));
        }
        for (i, j) in mic_pairs(mic_positions.len()) {
            if distance(&mic_positions[i], &mic_positions[j]) == 0.0 {
                return Err(Error::config(
                    "geometry",
                    format!("microphones {i} and {j} coincide"),
                ));
            }
        }
        Ok(Self { mic_positions })
    }

    pub fn positions(&self) -> &[Point] {
        &self.mic_positions
    }

    pub fn len(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mic_positions.is_empty()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        mic_pairs(self.len())
    }

    pub fn centroid(&self) -> Point {
        let m = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.mic_positions {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / m;
            }
        }
        c
    }

    /// The same array moved so its centroid sits at `center`.
    pub fn centered_at(&self, center: Point) -> Self {
        let c = self.centroid();
        let mic_positions = self
            .mic_positions
            .iter()
            .map(|p| [p[0] - c[0] + center[0], p[1] - c[1] + center[1], p[2] - c[2] + center[2]])
            .collect();
        Self { mic_positions }
    }

    pub fn hash(&self) -> String {
        crate::hash::json_hash(self)
    }
}

/// Microphone pairs `(i, j)` with `i < j` in lexicographic order.
pub fn mic_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect()
}

/// Regular tetrahedron centered at the origin whose microphones are all
/// `diameter` meters apart.
///
/// The array diameter is taken as its aperture, the largest distance
/// between any two capsules; with 8.4 cm at 24 kHz this bounds the TDOA at
/// 6 samples.
pub fn tetrahedral_array(diameter: f64) -> Result<ArrayGeometry> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::config("diameter", "must be positive"));
    }
    // Alternate cube corners are 2*sqrt(2) apart for unit half-edge.
    let s = diameter / (2.0 * std::f64::consts::SQRT_2);
    ArrayGeometry::new(vec![
        [s, s, s],
        [s, -s, -s],
        [-s, s, -s],
        [-s, -s, s],
    ])
}

/// Largest rounded inter-microphone delay in samples.
pub fn max_tdoa(geometry: &ArrayGeometry, fs: f64, c: f64) -> usize {
    let p = geometry.positions();
    geometry
        .pairs()
        .into_iter()
        .map(|(i, j)| (distance(&p[i], &p[j]) * fs / c).round() as usize)
        .max()
        .unwrap_or(0)
}

/// Integer TDOA labels per microphone pair, one entry per event in event order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdoaLabelSet {
    pub pairs: Vec<(usize, usize)>,
    pub lags: Vec<Vec<i64>>,
}

impl TdoaLabelSet {
    pub fn empty(pairs: Vec<(usize, usize)>) -> Self {
        let lags = vec![Vec::new(); pairs.len()];
        Self { pairs, lags }
    }

    pub fn events(&self) -> usize {
        self.lags.first().map_or(0, Vec::len)
    }

    /// Keeps only the listed events, in the given order.
    pub fn subset(&self, events: &[usize]) -> Self {
        Self {
            pairs: self.pairs.clone(),
            lags: self
                .lags
                .iter()
                .map(|l| events.iter().map(|&e| l[e]).collect())
                .collect(),
        }
    }
}

/// Rounded TDOA of a point source for the pair `(i, j)` (half away from zero).
pub(crate) fn pair_tdoa(source: &Point, mic_i: &Point, mic_j: &Point, fs: f64, c: f64) -> i64 {
    ((fs / c) * (distance(source, mic_i) - distance(source, mic_j))).round() as i64
}

pub fn true_tdoas(scene: &AcousticScene) -> TdoaLabelSet {
    labels_for(
        &scene.geometry,
        scene.events.iter().map(|e| e.position),
        scene.sample_rate,
        scene.speed_of_sound,
    )
}

pub(crate) fn labels_for(
    geometry: &ArrayGeometry,
    sources: impl Iterator<Item = Point> + Clone,
    fs: f64,
    c: f64,
) -> TdoaLabelSet {
    let pairs = geometry.pairs();
    let p = geometry.positions();
    let lags = pairs
        .iter()
        .map(|&(i, j)| {
            sources
                .clone()
                .map(|s| pair_tdoa(&s, &p[i], &p[j], fs, c))
                .collect()
        })
        .collect();
    TdoaLabelSet { pairs, lags }
}
