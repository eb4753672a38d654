//! Spatial softmax and expected-position layer: per-channel softmax over
//! pixels followed by the expectation of pixel coordinates on a grid
//! spanning [-1, 1]^2. A fixed transformation with no parameters.

use nalgebra::{DMatrix, DVector};

/// Per-channel feature points from response maps.
///
/// `maps[c]` is an H x W activation map. Output is `[fx_0, fy_0, fx_1,
/// fy_1, ...]` with x spanning columns and y spanning rows, both on
/// [-1, 1]. Adding a constant to every activation of a channel leaves the
/// output unchanged.
pub fn spatial_softmax_points(maps: &[DMatrix<f64>]) -> DVector<f64> {
    let (points, _) = forward(maps);
    points
}

/// Forward pass retaining the softmax distributions for backprop.
pub fn forward(maps: &[DMatrix<f64>]) -> (DVector<f64>, Vec<DMatrix<f64>>) {
    let channels = maps.len();
    let mut points = DVector::zeros(2 * channels);
    let mut softmaxes = Vec::with_capacity(channels);
    for (c, map) in maps.iter().enumerate() {
        let (h, w) = map.shape();
        let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut soft = map.map(|v| (v - max).exp());
        let total: f64 = soft.iter().sum();
        soft /= total;
        let mut fx = 0.0;
        let mut fy = 0.0;
        for r in 0..h {
            for col in 0..w {
                fx += soft[(r, col)] * grid_coord(col, w);
                fy += soft[(r, col)] * grid_coord(r, h);
            }
        }
        points[2 * c] = fx;
        points[2 * c + 1] = fy;
        softmaxes.push(soft);
    }
    (points, softmaxes)
}

/// Backpropagate output gradients to activation-map gradients.
pub fn backward(
    softmaxes: &[DMatrix<f64>],
    points: &DVector<f64>,
    dpoints: &DVector<f64>,
) -> Vec<DMatrix<f64>> {
    let mut grads = Vec::with_capacity(softmaxes.len());
    for (c, soft) in softmaxes.iter().enumerate() {
        let (h, w) = soft.shape();
        let fx = points[2 * c];
        let fy = points[2 * c + 1];
        let dfx = dpoints[2 * c];
        let dfy = dpoints[2 * c + 1];
        let mut grad = DMatrix::zeros(h, w);
        for r in 0..h {
            for col in 0..w {
                grad[(r, col)] = soft[(r, col)]
                    * (dfx * (grid_coord(col, w) - fx) + dfy * (grid_coord(r, h) - fy));
            }
        }
        grads.push(grad);
    }
    grads
}

/// Coordinate of index `i` on a grid of `n` points spanning [-1, 1].
pub fn grid_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}
