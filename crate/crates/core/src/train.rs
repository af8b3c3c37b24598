//! Two-stage training.
//!
//! Stage 1 trains LREN and SIRN with latents extracted from the ground
//! truth. Stage 2 freezes LREN, starts the reverse chain from the ground
//! truth latent diffused to `t = T`, runs all `T` steps and trains the
//! denoiser, CEN and SIRN jointly on the estimated latent.
//!
//! Every random draw of step `n` comes from a generator keyed by
//! `(seed, "step", n)` and the sample order of epoch `e` from
//! `(seed, "epoch", e)`, so the position `(epoch, step_in_epoch)` is the
//! complete random state and a resumed run replays the same sequence.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datapipe::{augment_flip, DegradationSpec, PatchSpec, Sample, Task};
use crate::diffusion::{self, NoiseSchedule};
use crate::error::{bail, Error, Result};
use crate::losses::{self, LossWeights, Stage};
use crate::lren::{self, LatentKind};
use crate::model::{self, ModelConfig, Profile};
use crate::optim::{clip_global_norm, Adam, AdamConfig, LrSchedule};
use crate::params::{ModelParams, Session};
use crate::rng;
use crate::sirn;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    /// Defaults to 90 for stage 1 and 300 for stage 2.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub adam: AdamConfig,
    /// Global gradient norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub profile: Profile,
    pub task: Task,
    /// Replaces the profile's networks when set (ablations).
    pub model: Option<ModelConfig>,
    pub loss: LossWeights,
    pub augment: bool,
    pub degradation: DegradationSpec,
    pub patch: PatchSpec,
    /// Dataset manifest (JSON lines of `{"id", "hq_left", "hq_right"}`).
    pub manifest: String,
    /// Directory for checkpoints and the training log.
    pub out_dir: String,
    /// Stage-1 checkpoint to start stage 2 from.
    pub init_checkpoint: Option<String>,
    /// Checkpoint to resume from.
    pub resume: Option<String>,
    /// Save a checkpoint every this many epochs (the last epoch is always
    /// saved).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            epochs: None,
            batch_size: 48,
            lr: LrSchedule::default(),
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            seed: 0,
            profile: Profile::Desk,
            task: Task::Sr4,
            model: None,
            loss: LossWeights::default(),
            augment: true,
            degradation: DegradationSpec::default(),
            patch: PatchSpec::default(),
            manifest: String::new(),
            out_dir: String::from("runs"),
            init_checkpoint: None,
            resume: None,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn stage(&self) -> Result<Stage> {
        Stage::from_number(self.stage)
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(if self.stage == 2 { 300 } else { 90 })
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model
            .clone()
            .unwrap_or_else(|| ModelConfig::new(self.profile, self.task))
    }

    pub fn degradation_spec(&self) -> DegradationSpec {
        DegradationSpec {
            task: self.task,
            seed: self.seed,
            ..self.degradation.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stage = self.stage()?;
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if self.checkpoint_every == 0 {
            bail!(Config, "checkpoint_every must be at least 1");
        }
        if !(self.lr.base >= 0.0) || !(self.lr.decay > 0.0) {
            bail!(Config, "learning rate must be non-negative with a positive decay");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                bail!(Config, "grad_clip must be positive");
            }
        }
        self.loss.validate()?;
        self.degradation_spec().validate()?;
        let model = self.model_config();
        model.validate()?;
        if model.task != self.task {
            bail!(Config, "model task {} differs from training task {}", model.task.name(), self.task.name());
        }
        if stage == Stage::Two {
            if !model.sirn.use_lhfr || model.lren.latent != LatentKind::Spatial {
                bail!(Config, "stage 2 needs a model guided by spatial latents");
            }
            if self.init_checkpoint.is_none() && self.resume.is_none() {
                bail!(Config, "stage 2 needs `init_checkpoint` pointing at a stage-1 checkpoint");
            }
        }
        Ok(())
    }
}

/// Position of a run; together with the seed this is the whole random
/// state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: u8,
    pub epoch: usize,
    pub step_in_epoch: usize,
    pub global_step: u64,
    pub adam_t: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: u8,
    pub epoch: usize,
    /// 1-based index of the step within the run.
    pub step: u64,
    pub loss: f64,
    pub rec: f64,
    pub para: f64,
    /// Logged in stage 2 even when its weight is zero.
    pub diff: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

pub trait Observer {
    fn on_step(&mut self, _trainer: &Trainer, _log: &StepLog) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Keeps every step log in memory.
#[derive(Debug, Default)]
pub struct Recorder {
    pub logs: Vec<StepLog>,
}

impl Observer for Recorder {
    fn on_step(&mut self, _trainer: &Trainer, log: &StepLog) -> Result<()> {
        self.logs.push(*log);
        Ok(())
    }
}

fn stage1_trainable(name: &str) -> bool {
    name.starts_with("lren.") || name.starts_with("sirn.")
}

fn stage2_trainable(name: &str) -> bool {
    !name.starts_with("lren.")
}

pub struct Trainer {
    cfg: TrainConfig,
    model: ModelConfig,
    stage: Stage,
    params: ModelParams,
    adam: Adam,
    state: TrainState,
    sched: NoiseSchedule,
}

struct SampleResult {
    grads: BTreeMap<String, Tensor>,
    loss: f64,
    rec: f64,
    para: f64,
    diff: Option<f64>,
}

impl Trainer {
    /// Start a run. Stage 1 takes fresh or given LREN + SIRN weights;
    /// stage 2 takes stage-1 weights and adds a fresh diffusion model if
    /// they have none.
    pub fn new(cfg: TrainConfig, mut params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.model_config();
        let stage = cfg.stage()?;
        if params.names().any(|n| n.starts_with("adam.")) {
            bail!(Checkpoint, "optimiser state found; use `Trainer::resume`");
        }
        let fresh = model::init_stage1(&model, cfg.seed)?;
        if stage == Stage::Two || !params.is_empty() {
            for (name, want) in fresh.iter() {
                let got = params.get(name).map_err(|_| {
                    Error::Checkpoint(format!("weights lack `{name}`; were they trained with the same profile and task?"))
                })?;
                if got.shape() != want.shape() {
                    bail!(Checkpoint, "`{name}` has shape {:?}, the model needs {:?}", got.shape(), want.shape());
                }
            }
        }
        if params.is_empty() {
            params = fresh;
        }
        if stage == Stage::Two && !model::has_diffusion(&params) {
            model::add_diffusion(&model, &mut params, cfg.seed)?;
        }
        let sched = model.diffusion.schedule()?;
        Ok(Self {
            adam: Adam::new(cfg.adam),
            state: TrainState {
                stage: stage.number(),
                ..TrainState::default()
            },
            cfg,
            model,
            stage,
            params,
            sched,
        })
    }

    /// Continue a run from checkpoint tensors (weights and optimiser
    /// moments) and its saved position.
    pub fn resume(cfg: TrainConfig, tensors: &ModelParams, state: TrainState) -> Result<Self> {
        if state.stage != cfg.stage {
            bail!(Checkpoint, "checkpoint is from stage {}, config asks for stage {}", state.stage, cfg.stage);
        }
        let mut weights = tensors.clone();
        weights.remove_prefix("adam.");
        let mut t = Self::new(cfg, weights)?;
        t.adam = Adam::from_state(t.cfg.adam, state.adam_t, tensors);
        t.state = state;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            adam_t: self.adam.t,
            ..self.state
        }
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.cfg.epochs()
    }

    /// Weights plus optimiser moments.
    pub fn checkpoint_tensors(&self) -> ModelParams {
        let mut out = self.params.clone();
        out.merge_prefix(&self.adam.state_tensors(), "adam.");
        out
    }

    pub fn steps_per_epoch(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.cfg.batch_size)
    }

    /// Sample order of `epoch`.
    pub fn epoch_order(&self, num_samples: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..num_samples).collect();
        order.shuffle(&mut rng::labeled(self.cfg.seed, "epoch", epoch as u64));
        order
    }

    /// Train until the configured number of epochs is reached.
    pub fn run(&mut self, data: &[Sample], observer: &mut dyn Observer) -> Result<()> {
        if data.is_empty() {
            bail!(Config, "no training samples");
        }
        let spe = self.steps_per_epoch(data.len());
        let epochs = self.cfg.epochs();
        while self.state.epoch < epochs {
            let order = self.epoch_order(data.len(), self.state.epoch);
            let lr = self.cfg.lr.lr_at(self.state.epoch, epochs);
            while self.state.step_in_epoch < spe {
                let start = self.state.step_in_epoch * self.cfg.batch_size;
                let end = (start + self.cfg.batch_size).min(data.len());
                let batch: Vec<&Sample> = order[start..end].iter().map(|&i| &data[i]).collect();
                let log = self.step(&batch, lr)?;
                self.state.step_in_epoch += 1;
                observer.on_step(self, &log)?;
            }
            self.state.epoch += 1;
            self.state.step_in_epoch = 0;
            observer.on_epoch_end(self)?;
        }
        Ok(())
    }

    /// One optimiser step on `batch` (gradients averaged over samples).
    pub fn step(&mut self, batch: &[&Sample], lr: f64) -> Result<StepLog> {
        if batch.is_empty() {
            bail!(Parameter, "empty batch");
        }
        let step = self.state.global_step + 1;
        let mut rng = rng::labeled(self.cfg.seed, "step", self.state.global_step);
        let mut total: Option<SampleResult> = None;
        for &sample in batch {
            let sample = if self.cfg.augment {
                augment_flip(sample, &mut rng)
            } else {
                sample.clone()
            };
            let r = match self.stage {
                Stage::One => self.stage1_sample(&sample)?,
                Stage::Two => self.stage2_sample(&sample, &mut rng)?,
            };
            total = Some(match total {
                None => r,
                Some(mut acc) => {
                    for (k, g) in r.grads {
                        match acc.grads.get_mut(&k) {
                            Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y),
                            None => {
                                acc.grads.insert(k, g);
                            }
                        }
                    }
                    acc.loss += r.loss;
                    acc.rec += r.rec;
                    acc.para += r.para;
                    acc.diff = acc.diff.zip(r.diff).map(|(a, b)| a + b);
                    acc
                }
            });
        }
        let mut acc = total.expect("non-empty batch");
        let n = batch.len() as f64;
        for g in acc.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        let (loss, rec, para, diff) = (acc.loss / n, acc.rec / n, acc.para / n, acc.diff.map(|d| d / n));
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss {loss} (rec {rec}, para {para}, diff {diff:?})"),
            });
        }
        let grad_norm = match self.cfg.grad_clip {
            Some(c) => clip_global_norm(&mut acc.grads, c),
            None => crate::optim::global_norm(&acc.grads),
        };
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient norm {grad_norm} at loss {loss}"),
            });
        }
        self.adam.step(&mut self.params, &acc.grads, lr)?;
        self.state.global_step = step;
        self.state.adam_t = self.adam.t;
        Ok(StepLog {
            stage: self.stage.number(),
            epoch: self.state.epoch,
            step,
            loss,
            rec,
            para,
            diff,
            lr,
            grad_norm,
        })
    }

    fn stage1_sample(&self, sample: &Sample) -> Result<SampleResult> {
        let mut s = Session::with_trainable(&self.params, stage1_trainable);
        let hl = s.input(sample.hq.left.clone());
        let hr = s.input(sample.hq.right.clone());
        let ll = s.input(sample.lq.left.clone());
        let lr = s.input(sample.lq.right.clone());
        let guidance = if self.model.sirn.use_lhfr {
            let zl = lren::forward_view(&mut s, &self.model.lren, hl)?;
            let zr = lren::forward_view(&mut s, &self.model.lren, hr)?;
            Some((zl, zr))
        } else {
            None
        };
        self.finish(s, ll, lr, hl, hr, guidance, None)
    }

    fn stage2_sample(&self, sample: &Sample, rng: &mut rng::Rng) -> Result<SampleResult> {
        let mut s = Session::with_trainable(&self.params, stage2_trainable);
        let hl = s.input(sample.hq.left.clone());
        let hr = s.input(sample.hq.right.clone());
        let ll = s.input(sample.lq.left.clone());
        let lr = s.input(sample.lq.right.clone());
        let zl = lren::forward_view(&mut s, &self.model.lren, hl)?;
        let zr = lren::forward_view(&mut s, &self.model.lren, hr)?;
        debug_assert!(!s.needs_grad(zl));
        let t = self.sched.steps;
        let (_, h, w) = s.value(zl).dims3();
        let mut start = |z: Tensor, s: &mut Session<'_>| -> Result<_> {
            let eps = diffusion::normal_map(h, w, rng).reshape(&[1, h, w])?;
            Ok(s.input(diffusion::forward_diffuse(&z, t, &self.sched, &eps)?))
        };
        let zl_val = s.value(zl).clone();
        let zr_val = s.value(zr).clone();
        let tl = start(zl_val, &mut s)?;
        let tr = start(zr_val, &mut s)?;
        let chain = diffusion::sample_chain(&mut s, &self.sched, ll, lr, tl, tr)?;
        let (el, er) = chain.z0();
        let diff = losses::l1_pair(&mut s, el, er, zl, zr)?;
        self.finish(s, ll, lr, hl, hr, Some((el, er)), Some(diff))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        mut s: Session<'_>,
        ll: crate::autograd::Var,
        lr: crate::autograd::Var,
        hl: crate::autograd::Var,
        hr: crate::autograd::Var,
        guidance: Option<(crate::autograd::Var, crate::autograd::Var)>,
        diff: Option<crate::autograd::Var>,
    ) -> Result<SampleResult> {
        let out = sirn::forward(&mut s, &self.model.sirn, ll, lr, guidance)?;
        let rec = losses::l1_pair(&mut s, out.left, out.right, hl, hr)?;
        let w = &self.cfg.loss;
        let para = if w.lambda1 != 0.0 {
            let maps = losses::compute_pam_var(&mut s, out.shallow_left, out.shallow_right, w.mask_threshold)?;
            Some(losses::parallax_loss_var(&mut s, ll, lr, &maps, &w.parallax)?.0)
        } else {
            None
        };
        let total = losses::stage_objective_var(&mut s, self.stage, rec, para, diff, w)?;
        let value = |s: &Session<'_>, v: crate::autograd::Var| s.value(v).data()[0];
        Ok(SampleResult {
            loss: value(&s, total),
            rec: value(&s, rec),
            para: para.map_or(0.0, |p| value(&s, p)),
            diff: diff.map(|d| value(&s, d)),
            grads: s.param_grads(total),
        })
    }
}
