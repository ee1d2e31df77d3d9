//! The two-stage training loop, its checkpoints and loss log.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tetrad_core::checkpoint::{load_store, read_manifest, read_tensors, save_store, write_tensors, Entry};
use tetrad_core::{AssemblyMode, Model, ModelConfig, ParamId, ParamStore, Scalar, Tape, Tensor};

use crate::adam::{Adam, AdamConfig};
use crate::config::StageConfig;
use crate::error::{Result, TrainError};
use crate::prep::Example;

type Grads<T> = Vec<(ParamId, Tensor<T>)>;

pub const MODEL_DIR: &str = "model";
pub const OPTIMIZER_DIR: &str = "optimizer";
pub const STATE_FILE: &str = "state.json";
pub const LOSS_FILE: &str = "losses.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Supervised target positions in the batch.
    pub tokens: usize,
}

/// Where in the schedule the trainer is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub step: u64,
    pub epoch: usize,
    /// Next batch within the epoch.
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SavedState {
    stage: StageConfig,
    mode: AssemblyMode,
    seed: u64,
    position: Position,
    adam_step: u64,
    log: Vec<StepLog>,
}

/// Example order of one epoch; a pure function of the seed and epoch, so
/// a resumed run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub struct Trainer<'m, T> {
    model: &'m Model,
    pub stage: StageConfig,
    pub mode: AssemblyMode,
    pub seed: u64,
    pub adam: Adam<T>,
    pub position: Position,
    pub log: Vec<StepLog>,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    /// Marks exactly the stage's parameter set trainable. Stage 2 needs the
    /// LoRA factors attached first.
    pub fn new(
        model: &'m Model,
        store: &mut ParamStore<T>,
        stage: StageConfig,
        mode: AssemblyMode,
        seed: u64,
    ) -> Result<Self> {
        stage.validate()?;
        if stage.stage == 2 && !model.has_lora() {
            return Err(TrainError::Stage { stage: 2, msg: "LoRA adapters are not attached".into() });
        }
        store.set_trainable(|n| stage.trains(n));
        if store.trainable_count() == 0 {
            return Err(TrainError::Stage { stage: stage.stage, msg: "no trainable parameters".into() });
        }
        let adam = Adam::new(AdamConfig { lr: stage.lr, beta1: stage.beta1, beta2: stage.beta2, eps: stage.eps });
        Ok(Self { model, stage, mode, seed, adam, position: Position::default(), log: Vec::new() })
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.stage.batch_size)
    }

    pub fn finished(&self, n: usize) -> bool {
        let capped = self.stage.max_steps.is_some_and(|m| self.position.step >= m);
        capped || self.position.epoch >= self.stage.epochs || n == 0
    }

    /// Mean masked cross-entropy of one example on a fresh tape; returns
    /// the loss value, its gradients and the number of target positions.
    fn example_grads(&self, store: &ParamStore<T>, ex: &Example, dropout_seed: u64) -> Result<(f64, Grads<T>, usize)> {
        let mut rng = (self.model.config.lm.dropout > 0.0).then(|| ChaCha8Rng::seed_from_u64(dropout_seed));
        let mut tape = Tape::new(store);
        let (loss, _, seq) = self.model.loss(&mut tape, &ex.inputs, &ex.query, &ex.target, self.mode, rng.as_mut())?;
        let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
        let tokens = seq.mask.iter().filter(|&&m| m).count();
        if !value.is_finite() {
            return Ok((value, Vec::new(), tokens));
        }
        Ok((value, tape.backward(loss)?.into_params(), tokens))
    }

    fn non_finite(&self, what: String, ids: &[&str]) -> TrainError {
        TrainError::NonFinite {
            what,
            step: self.position.step + 1,
            epoch: self.position.epoch,
            lr: self.stage.lr,
            examples: ids.join(", "),
        }
    }

    /// One optimizer step over `batch`: per-example losses averaged.
    pub fn step(&mut self, store: &mut ParamStore<T>, batch: &[&Example]) -> Result<StepLog> {
        let ids: Vec<&str> = batch.iter().map(|e| e.id.as_str()).collect();
        let scale = T::lit(1.0 / batch.len() as f64);
        store.zero_grad();
        let mut total = 0.0;
        let mut tokens = 0;
        for (i, ex) in batch.iter().enumerate() {
            let dseed = self.seed ^ (self.position.step << 16) ^ i as u64;
            let (loss, grads, n) = self.example_grads(store, ex, dseed)?;
            if !loss.is_finite() {
                return Err(self.non_finite(format!("loss ({loss}) on `{}`", ex.id), &ids));
            }
            total += loss;
            tokens += n;
            store.accumulate(&grads)?;
        }
        let mut grads = Vec::new();
        for id in store.trainable_ids() {
            let p = store.get_mut(id);
            if let Some(mut g) = p.grad.take() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
                if !g.all_finite() {
                    let name = p.name.clone();
                    return Err(self.non_finite(format!("gradient of `{name}`"), &ids));
                }
                grads.push((id, g));
            }
        }
        store.zero_grad();
        self.adam.update(store, &grads)?;
        let entry = StepLog {
            step: self.position.step + 1,
            epoch: self.position.epoch,
            loss: total / batch.len() as f64,
            lr: self.stage.lr,
            tokens,
        };
        self.log.push(entry.clone());
        Ok(entry)
    }

    /// Trains until the schedule ends, `max_steps` is reached, or `pause`
    /// more steps have run. Returns the steps taken in this call.
    pub fn run(&mut self, store: &mut ParamStore<T>, data: &[Example], pause: Option<u64>) -> Result<u64> {
        let per_epoch = self.batches_per_epoch(data.len());
        let start = self.position.step;
        while !self.finished(data.len()) {
            if pause.is_some_and(|p| self.position.step - start >= p) {
                break;
            }
            let order = epoch_order(data.len(), self.seed, self.position.epoch);
            let b = self.stage.batch_size;
            let lo = self.position.batch * b;
            let batch: Vec<&Example> = order[lo..(lo + b).min(data.len())].iter().map(|&i| &data[i]).collect();
            let s = self.step(store, &batch)?;
            if s.step % 50 == 0 || s.step == 1 {
                info!("stage {} step {} epoch {} loss {:.4}", self.stage.stage, s.step, s.epoch, s.loss);
            }
            self.position.step += 1;
            self.position.batch += 1;
            if self.position.batch >= per_epoch {
                self.position.batch = 0;
                self.position.epoch += 1;
            }
        }
        Ok(self.position.step - start)
    }

    /// Writes the model, the optimizer moments, the schedule position and
    /// the loss log under `dir`.
    pub fn save(&self, dir: &Path, store: &ParamStore<T>) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_model(&dir.join(MODEL_DIR), store, &self.model.config)?;
        let mut entries = Vec::new();
        for (name, t) in &self.adam.m {
            entries.push(Entry { name: format!("m.{name}"), tensor: t, trainable: None });
        }
        for (name, t) in &self.adam.v {
            entries.push(Entry { name: format!("v.{name}"), tensor: t, trainable: None });
        }
        write_tensors(&dir.join(OPTIMIZER_DIR), &entries, serde_json::json!({ "step": self.adam.step }))?;
        let state = SavedState {
            stage: self.stage.clone(),
            mode: self.mode,
            seed: self.seed,
            position: self.position,
            adam_step: self.adam.step,
            log: self.log.clone(),
        };
        fs::write(dir.join(STATE_FILE), serde_json::to_string_pretty(&state)?)?;
        write_loss_csv(&dir.join(LOSS_FILE), &self.log)?;
        Ok(())
    }

    /// Restores a trainer saved by [`Trainer::save`]; `store` must belong to
    /// `model` (see [`load_model`]) and receives the saved weights.
    pub fn resume(dir: &Path, model: &'m Model, store: &mut ParamStore<T>) -> Result<Self> {
        let state: SavedState = serde_json::from_str(&fs::read_to_string(dir.join(STATE_FILE))?)?;
        load_store(&dir.join(MODEL_DIR), store)?;
        let mut t = Trainer::new(model, store, state.stage, state.mode, state.seed)?;
        let (_, tensors) = read_tensors::<T>(&dir.join(OPTIMIZER_DIR))?;
        for (name, tensor) in tensors {
            let (kind, pname) = name
                .split_once('.')
                .ok_or_else(|| TrainError::Config(format!("bad optimizer tensor name `{name}`")))?;
            let id = store.id(pname)?;
            if !store.get(id).trainable {
                return Err(TrainError::Config(format!("optimizer state for frozen parameter `{pname}`")));
            }
            match kind {
                "m" => t.adam.m.insert(pname.to_string(), tensor),
                "v" => t.adam.v.insert(pname.to_string(), tensor),
                _ => return Err(TrainError::Config(format!("bad optimizer tensor name `{name}`"))),
            };
        }
        t.adam.step = state.adam_step;
        t.position = state.position;
        t.log = state.log;
        Ok(t)
    }
}

pub fn write_loss_csv(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in log {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<StepLog>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Weights plus the model config, enough to rebuild with [`load_model`].
pub fn save_model<T: Scalar>(dir: &Path, store: &ParamStore<T>, config: &ModelConfig) -> Result<()> {
    save_store(dir, store, serde_json::json!({ "model": config }))?;
    Ok(())
}

/// Rebuilds the model described by a saved checkpoint, attaching LoRA
/// factors when the checkpoint has them, and loads its weights.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<(Model, ParamStore<T>)> {
    let manifest = read_manifest(dir)?;
    let config: ModelConfig = serde_json::from_value(
        manifest
            .metadata
            .get("model")
            .cloned()
            .ok_or_else(|| TrainError::Config(format!("{}: checkpoint has no model config", dir.display())))?,
    )?;
    let mut store = ParamStore::new();
    let mut model = Model::new(&mut store, config, 0)?;
    if manifest.entries.iter().any(|e| e.name.starts_with("lora.")) {
        model.attach_lora(&mut store, 0)?;
    }
    load_store(dir, &mut store)?;
    Ok((model, store))
}

/// Stage-2 starting point: the stage-1 weights with fresh LoRA factors.
pub fn begin_stage2<T: Scalar>(model: &mut Model, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
    if model.has_lora() {
        warn!("LoRA factors already attached; keeping them");
        return Ok(());
    }
    let n = model.attach_lora(store, seed)?;
    info!("attached {n} LoRA parameters");
    Ok(())
}
