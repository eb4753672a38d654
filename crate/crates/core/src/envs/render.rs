//! Synthetic 32x32 grayscale renderer for the toy visuomotor task and the
//! pose-regression pretraining dataset.
//!
//! World coordinates in `[-0.5, 0.5]^2` map linearly onto the image. Objects
//! are drawn as isotropic Gaussian blobs; intensities add and saturate at 1.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMG_SIDE: usize = 32;
pub const IMG_PIXELS: usize = IMG_SIDE * IMG_SIDE;
/// World half-extent covered by the image.
const WORLD_HALF: f64 = 0.5;
const BLOB_SIGMA_PX: f64 = 1.4;

/// World position of the center of pixel `(row, col)`, with `y` up.
pub fn pixel_center(row: usize, col: usize) -> Vector2<f64> {
    let scale = 2.0 * WORLD_HALF / IMG_SIDE as f64;
    Vector2::new(
        -WORLD_HALF + (col as f64 + 0.5) * scale,
        WORLD_HALF - (row as f64 + 0.5) * scale,
    )
}

fn world_to_pixel(p: &Vector2<f64>) -> (f64, f64) {
    let scale = IMG_SIDE as f64 / (2.0 * WORLD_HALF);
    let col = (p.x + WORLD_HALF) * scale - 0.5;
    let row = (WORLD_HALF - p.y) * scale - 0.5;
    (row, col)
}

fn draw_blob(image: &mut DVector<f64>, center: &Vector2<f64>, intensity: f64) {
    let (crow, ccol) = world_to_pixel(center);
    for row in 0..IMG_SIDE {
        for col in 0..IMG_SIDE {
            let d2 = (row as f64 - crow).powi(2) + (col as f64 - ccol).powi(2);
            let v = intensity * (-d2 / (2.0 * BLOB_SIGMA_PX * BLOB_SIGMA_PX)).exp();
            let px = &mut image[row * IMG_SIDE + col];
            *px = (*px + v).min(1.0);
        }
    }
}

/// Render the point mass (bright blob) and, when given, the slot-mouth
/// marker (dimmer blob). Deterministic in its inputs.
pub fn render_scene(mass: &Vector2<f64>, slot_mouth: Option<&Vector2<f64>>) -> DVector<f64> {
    let mut image = DVector::zeros(IMG_PIXELS);
    if let Some(m) = slot_mouth {
        draw_blob(&mut image, m, 0.6);
    }
    draw_blob(&mut image, mass, 1.0);
    image
}

/// One pose-regression example: an image showing a single target blob and
/// the blob's world position as the label.
#[derive(Debug, Clone)]
pub struct PoseSample {
    pub image: DVector<f64>,
    pub position: Vector2<f64>,
}

/// Deterministic dataset of rendered targets at seeded positions within the
/// central region of the image.
pub fn pose_dataset(count: usize, seed: u64) -> Vec<PoseSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let position = Vector2::new(
                rng.gen_range(-0.35..0.35),
                rng.gen_range(-0.35..0.35),
            );
            PoseSample { image: render_scene(&position, None), position }
        })
        .collect()
}

/// Centroid of image intensity in world coordinates, for renderer checks.
pub fn intensity_centroid(image: &DVector<f64>) -> Vector2<f64> {
    let mut total = 0.0;
    let mut acc = Vector2::zeros();
    for row in 0..IMG_SIDE {
        for col in 0..IMG_SIDE {
            let v = image[row * IMG_SIDE + col];
            acc += pixel_center(row, col) * v;
            total += v;
        }
    }
    acc / total
}
