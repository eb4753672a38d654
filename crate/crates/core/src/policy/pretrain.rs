//! Pose-regression pretraining for the vision front-end: the network learns
//! to output the rendered target's position from the image alone. After
//! training, the convolutional weights transfer to the policy network and
//! the regression head is discarded.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{FrontendHead, Network, NetworkSpec, Nonlinearity, SgdMomentum, VisionSpec};
use crate::envs::render::{PoseSample, IMG_SIDE};
use crate::error::GpsError;
use crate::Result;

/// Front-end used by the toy visuomotor tasks: two convolutions, no pooling,
/// reduced by spatial-softmax feature points.
pub fn toy_vision_spec() -> VisionSpec {
    VisionSpec {
        in_side: IMG_SIDE,
        channels: vec![8, 6],
        kernel: 5,
        head: FrontendHead::SpatialSoftmax,
    }
}

/// Baseline front-end at a matched parameter budget: the feature-point head
/// is replaced by a learned fully connected layer reading the flattened
/// response maps. Fewer response channels keep the totals comparable (the
/// baseline ends up with slightly more parameters).
pub fn flat_vision_spec() -> VisionSpec {
    VisionSpec {
        in_side: IMG_SIDE,
        channels: vec![8, 1],
        kernel: 5,
        head: FrontendHead::Flatten,
    }
}

fn pose_net_spec(vision: VisionSpec) -> NetworkSpec {
    NetworkSpec {
        obs_dim: vision.image_pixels(),
        action_dim: 2,
        hidden: vec![],
        nonlin: Nonlinearity::Relu,
        vision: Some(vision),
    }
}

#[derive(Debug, Clone)]
pub struct PoseTrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PoseTrainOptions {
    fn default() -> Self {
        Self {
            steps: 400,
            batch: 16,
            learning_rate: 2e-2,
            momentum: 0.9,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct PoseTrainResult {
    pub net: Network,
    /// Mean Euclidean position error on the held-out split, in world units
    /// (the image spans one world unit).
    pub test_error: f64,
    pub train_error: f64,
}

/// Train a pose-regression network on rendered images by minibatch SGD on
/// the squared position error.
pub fn pretrain_pose(
    dataset: &[PoseSample],
    vision: VisionSpec,
    options: &PoseTrainOptions,
) -> Result<PoseTrainResult> {
    if dataset.len() < 8 {
        return Err(GpsError::InvalidConfig(format!(
            "pose dataset too small: {} samples",
            dataset.len()
        )));
    }
    let n_test = ((dataset.len() as f64) * options.test_fraction).round() as usize;
    let n_train = dataset.len() - n_test.max(1);
    let (train, test) = dataset.split_at(n_train);

    let mut net = Network::init(pose_net_spec(vision), options.seed);
    let mut opt = SgdMomentum::new(options.learning_rate, options.momentum, net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(1));
    let mut grad = DVector::zeros(net.param_count());

    for _ in 0..options.steps {
        grad.fill(0.0);
        for _ in 0..options.batch {
            let sample = &train[rng.gen_range(0..train.len())];
            let (out, cache) = net.forward(&sample.image)?;
            let diff = DVector::from_row_slice(&[
                out[0] - sample.position.x,
                out[1] - sample.position.y,
            ]);
            net.backward(&cache, &diff, &mut grad);
        }
        grad /= options.batch as f64;
        opt.step(&mut net, &grad);
    }

    let eval = |set: &[PoseSample]| -> Result<f64> {
        let mut total = 0.0;
        for s in set {
            let (out, _) = net.forward(&s.image)?;
            total += ((out[0] - s.position.x).powi(2) + (out[1] - s.position.y).powi(2)).sqrt();
        }
        Ok(total / set.len() as f64)
    };
    let train_error = eval(train)?;
    let test_error = eval(test)?;
    Ok(PoseTrainResult { net, test_error, train_error })
}
