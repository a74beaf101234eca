//! Shoebox image-source room impulse responses.

use serde::{Deserialize, Serialize};

use super::delay::add_delayed;
use super::{distance, Point};
use crate::error::{Error, Result};

const MAX_ORDER: u32 = 4;

/// Axis-aligned room spanning `[0, dims]` with one frequency-independent
/// reflection coefficient for every wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub dims: Point,
    pub beta: f64,
    pub max_order: u32,
}

impl Room {
    pub fn contains(&self, p: &Point) -> bool {
        p.iter().zip(&self.dims).all(|(&x, &d)| x > 0.0 && x < d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::config("room.dims", "dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::config("room.beta", "reflection coefficient must be in [0, 1)"));
        }
        if self.max_order > MAX_ORDER {
            return Err(Error::config(
                "room.max_order",
                format!("at most {MAX_ORDER} is supported"),
            ));
        }
        Ok(())
    }
}

/// A virtual source mirrored `reflections` times across the walls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Point,
    pub reflections: u32,
    pub distance: f64,
    pub amplitude: f64,
}

/// All image sources with at most `max_order` reflections and nonzero
/// amplitude, ordered by reflection count.
pub fn image_sources(room: &Room, source: &Point, mic: &Point, max_order: u32) -> Result<Vec<ImageSource>> {
    room.validate()?;
    if max_order > MAX_ORDER {
        return Err(Error::config("max_order", format!("at most {MAX_ORDER} is supported")));
    }
    if !room.contains(source) || !room.contains(mic) {
        return Err(Error::InvalidInput("source and microphone must lie strictly inside the room".into()));
    }
    let q = max_order as i64;
    // Per axis: coordinate (1 - 2u) * x + 2 n L reflects |2n - u| times.
    let axis_images = |axis: usize| -> Vec<(f64, u32)> {
        let mut out = Vec::new();
        for n in -q..=q {
            for u in 0..2i64 {
                let refl = (2 * n - u).unsigned_abs() as u32;
                if refl <= max_order {
                    let x = (1 - 2 * u) as f64 * source[axis] + 2.0 * n as f64 * room.dims[axis];
                    out.push((x, refl));
                }
            }
        }
        out
    };
    let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));
    let mut images = Vec::new();
    for &(x, rx) in &xs {
        for &(y, ry) in &ys {
            for &(z, rz) in &zs {
                let reflections = rx + ry + rz;
                if reflections > max_order {
                    continue;
                }
                let amplitude_scale = room.beta.powi(reflections as i32);
                if amplitude_scale == 0.0 {
                    continue;
                }
                let position = [x, y, z];
                let d = distance(&position, mic);
                images.push(ImageSource {
                    position,
                    reflections,
                    distance: d,
                    amplitude: amplitude_scale / d,
                });
            }
        }
    }
    images.sort_by(|a, b| {
        a.reflections
            .cmp(&b.reflections)
            .then(a.distance.total_cmp(&b.distance))
    });
    Ok(images)
}

/// Number of image sources of exactly `order` reflections in a shoebox.
pub fn image_source_count(order: u32) -> usize {
    if order == 0 {
        1
    } else {
        4 * (order as usize).pow(2) + 2
    }
}

/// Impulse response from `source` to `mic`, each image rendered as a
/// windowed-sinc tap at `distance * fs / c` samples.
pub fn image_source_rir(
    room: &Room,
    source: &Point,
    mic: &Point,
    max_order: u32,
    fs: f64,
    c: f64,
    half_width: usize,
) -> Result<Vec<f64>> {
    let images = image_sources(room, source, mic, max_order)?;
    let longest = images.iter().map(|i| i.distance).fold(0.0, f64::max);
    let len = (longest * fs / c).ceil() as usize + half_width + 1;
    let mut rir = vec![0.0; len];
    for image in &images {
        add_delayed(&mut rir, &[1.0], image.distance * fs / c, image.amplitude, half_width);
    }
    Ok(rir)
}
