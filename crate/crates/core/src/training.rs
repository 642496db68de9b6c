//! Seeded single-example training of the head on a synthetic scene.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{synth_scene_with, SynthConfig};
use crate::error::Result;
use crate::gradcheck::{check_gradient, GradCheckReport};
use crate::head::{
    adam_step, head_forward, loss_and_gradient, total_loss_with, AdamConfig, AdamState,
    BadCountTarget, HeadParams, LossBreakdown, LossTargets,
};
use crate::mask::{binarize_scores, Connectivity, LabelMap, ScoreMapPair};
use crate::splitter::{split_binary, SplitResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub height: usize,
    pub width: usize,
    pub n_instances: usize,
    pub occlusion: f64,
    pub seed: u64,
    pub connectivity: Connectivity,
    pub overlap_threshold: f64,
    pub bad_target: BadCountTarget,
}

impl ToyConfig {
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            n_instances: 3,
            occlusion: 0.3,
            seed,
            connectivity: Connectivity::Eight,
            overlap_threshold: 0.0,
            bad_target: BadCountTarget::SplitterCounts,
        }
    }
}

/// A synthetic scene, its split and a freshly initialised head.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub scores: ScoreMapPair,
    pub gt: LabelMap,
    pub split: SplitResult,
    pub targets: LossTargets,
    pub params: HeadParams,
}

impl ToyProblem {
    pub fn new(cfg: &ToyConfig) -> Result<Self> {
        let scene = synth_scene_with(&SynthConfig::new(
            cfg.width,
            cfg.height,
            cfg.n_instances,
            cfg.occlusion,
            cfg.seed,
        ))?;
        let prediction = binarize_scores(&scene.scores);
        let split = split_binary(
            &prediction,
            &scene.labels,
            cfg.connectivity,
            cfg.overlap_threshold,
        )?;
        let targets = LossTargets::new(&scene.labels, &split, cfg.bad_target);
        // separate stream so parameter init does not shift with scene content
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x005e_ed0f_4ead));
        let params = HeadParams::random(cfg.height, cfg.width, &mut rng);
        Ok(Self {
            scores: scene.scores,
            gt: scene.labels,
            split,
            targets,
            params,
        })
    }

    pub fn loss(&self) -> Result<LossBreakdown> {
        let cache = head_forward(&self.scores, &self.split, &self.params)?;
        total_loss_with(&cache, &self.targets)
    }

    pub fn unit_outputs(&self) -> Result<[f64; 3]> {
        Ok(head_forward(&self.scores, &self.split, &self.params)?.unit_outputs)
    }

    /// Runs `iters` Adam steps. The returned curve has `iters + 1` entries:
    /// entry `i` is the loss after `i` updates.
    pub fn train(&mut self, iters: usize, adam: AdamConfig) -> Result<Vec<LossBreakdown>> {
        let mut state = AdamState::new(adam, &self.params);
        let mut curve = Vec::with_capacity(iters + 1);
        for _ in 0..iters {
            let (loss, grad) =
                loss_and_gradient(&self.scores, &self.split, &self.targets, &self.params)?;
            curve.push(loss);
            adam_step(&mut self.params, &grad, &mut state)?;
        }
        curve.push(self.loss()?);
        Ok(curve)
    }

    pub fn grad_check(&self, step: f64) -> Result<GradCheckReport> {
        check_gradient(&self.scores, &self.split, &self.targets, &self.params, step)
    }
}
