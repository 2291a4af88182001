//! Paired ablation runs: a reference configuration against variants that
//! each flip exactly one switch, under shared data and seeds.

use serde::{Deserialize, Serialize};

use crate::config::{AblationSwitch, RunConfig};
use crate::data::SceneSample;
use crate::error::Result;
use crate::gaussian::{PositionMode, ScaleActivation};
use crate::network::{UpsamplerKind, Weights};

use super::trainer::{evaluate, outside_opacity_mass, reconstruct_scene, train_loop, Trainer};

/// Margin around the ground-truth bounding box for the outside-mass metric.
pub const OUTSIDE_PAD: f64 = 0.05;

/// The configuration with `switch` flipped away from the reference.
pub fn variant_config(base: &RunConfig, switch: AblationSwitch) -> RunConfig {
    let mut c = base.clone();
    match switch {
        AblationSwitch::ScaleActivation => c.network.activation.scale = ScaleActivation::Exp,
        AblationSwitch::UpBlocks => c.network.up_blocks = 0,
        AblationSwitch::MaskLoss => c.train.loss.mask = 0.0,
        AblationSwitch::ConvUpsampler => c.network.upsampler = UpsamplerKind::Conv,
        AblationSwitch::XyzHead => c.network.activation.position = PositionMode::Xyz,
    }
    c
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    /// `"reference"` or the switch name
    pub arm: String,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
    /// mean over held-out scenes of opacity outside the padded GT box
    pub outside_mass: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

/// Trains one arm from `seed` and evaluates it on `held_out`.
pub fn run_arm(
    cfg: &RunConfig,
    arm: &str,
    seed: u64,
    train: &[SceneSample],
    held_out: &[SceneSample],
) -> Result<ArmResult> {
    let mut tc = cfg.train;
    tc.seed = seed;
    tc.eval_every = 0;
    let mut trainer = Trainer::new(Weights::init(&cfg.network, seed)?, tc)?;
    let summary = train_loop(&mut trainer, train, &[], None, |_| {})?;
    let e = evaluate(&trainer.weights, held_out, &tc.render)?;
    let mut mass = 0.0;
    for s in held_out {
        mass += outside_opacity_mass(&reconstruct_scene(&trainer.weights, s)?, &s.gaussians, OUTSIDE_PAD);
    }
    Ok(ArmResult {
        arm: arm.to_string(),
        seed,
        psnr: e.psnr,
        ssim: e.ssim,
        outside_mass: mass / held_out.len().max(1) as f64,
        final_loss: summary.final_loss,
        seconds: summary.seconds,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<ArmResult>,
}

/// Per-arm means over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMean {
    pub psnr: f64,
    pub ssim: f64,
    pub outside_mass: f64,
}

impl AblationReport {
    pub fn mean(&self, arm: &str) -> Option<ArmMean> {
        let rs: Vec<_> = self.runs.iter().filter(|r| r.arm == arm).collect();
        if rs.is_empty() {
            return None;
        }
        let n = rs.len() as f64;
        Some(ArmMean {
            psnr: rs.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rs.iter().map(|r| r.ssim).sum::<f64>() / n,
            outside_mass: rs.iter().map(|r| r.outside_mass).sum::<f64>() / n,
        })
    }

    /// Whether the reference beats `switch`'s variant in the expected
    /// direction: PSNR for most axes, outside mass reduced by at least 30%
    /// for the mask loss.
    pub fn direction_holds(&self, switch: AblationSwitch) -> Option<bool> {
        let r = self.mean("reference")?;
        let v = self.mean(switch.name())?;
        Some(match switch {
            AblationSwitch::MaskLoss => r.outside_mass <= 0.7 * v.outside_mass,
            _ => r.psnr >= v.psnr,
        })
    }

    /// Text table, one row per arm, reference first.
    pub fn table(&self) -> String {
        let mut arms: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !arms.contains(&r.arm.as_str()) {
                arms.push(&r.arm);
            }
        }
        let mut s = format!(
            "{:<18} {:>8} {:>8} {:>12} {:>6}\n",
            "setting", "PSNR", "SSIM", "outside_mass", "seeds"
        );
        for a in arms {
            let m = self.mean(a).unwrap();
            let n = self.runs.iter().filter(|r| r.arm == a).count();
            s.push_str(&format!(
                "{:<18} {:>8.3} {:>8.4} {:>12.4} {:>6}\n",
                a, m.psnr, m.ssim, m.outside_mass, n
            ));
        }
        s
    }
}

/// Runs the reference and every configured switch's variant for every
/// configured seed. `on_run` sees each arm as it finishes.
pub fn ablate(
    base: &RunConfig,
    train: &[SceneSample],
    held_out: &[SceneSample],
    mut on_run: impl FnMut(&ArmResult),
) -> Result<AblationReport> {
    let mut runs = Vec::new();
    for &seed in &base.ablate.seeds {
        let r = run_arm(base, "reference", seed, train, held_out)?;
        on_run(&r);
        runs.push(r);
        for &sw in &base.ablate.switches {
            let r = run_arm(&variant_config(base, sw), sw.name(), seed, train, held_out)?;
            on_run(&r);
            runs.push(r);
        }
    }
    Ok(AblationReport { runs })
}
