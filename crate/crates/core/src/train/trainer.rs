use std::io::Write;
use std::path::{Path, PathBuf};

use pano_autodiff::{grad, no_grad, BatchNormMode, Tensor};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use super::config::TrainConfig;
use super::dataset::{EpochSampler, TrainingSet};
use super::loss::{critic_loss, generator_loss};
use crate::error::{Error, Result};
use crate::nets::{
    build_critic, build_generator, Checkpoint, Critic, CriticConfig, CriticModel, Generator, GeneratorConfig,
};
use crate::rng::{stream, Stream};

pub const LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    pub epoch: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub gp: f64,
    pub wasserstein_estimate: f64,
}

/// Per-generator-step records with strictly increasing step numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn push(&mut self, record: TrainRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::Validation(format!(
                    "log step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.records {
            wr.serialize(r)?;
        }
        if self.records.is_empty() {
            wr.write_record(["step", "epoch", "d_loss", "g_loss", "gp", "wasserstein_estimate"])?;
        }
        wr.flush().map_err(|e| Error::io("<log>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let mut log = Self::default();
        for r in rd.deserialize() {
            log.push(r?)?;
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub dataset_len: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub generator: Generator,
    pub critic: Critic,
    pub log: TrainLog,
    pub checkpoints: Vec<PathBuf>,
}

fn check_finite(v: f64, step: u64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            what: what.to_string(),
        })
    }
}

/// Alternates `critic_iters` critic updates with one generator update until
/// the configured epochs (or `max_steps`) are used up.
///
/// With a `run_dir`, the directory receives the config snapshot, the log and
/// checkpoints. A non-finite loss aborts the run; the log up to the failing
/// step and every checkpoint written before it are kept.
pub fn run_training(
    cfg: &TrainConfig,
    dataset: &TrainingSet,
    gen_cfg: &GeneratorConfig,
    critic_cfg: &CriticConfig,
    run_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    gen_cfg.validate()?;
    critic_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let sizes = [gen_cfg.target_size, critic_cfg.input_size, dataset.size()];
    if sizes.iter().any(|&s| s != cfg.image_size) {
        return Err(Error::Config(format!(
            "image size {} disagrees with generator/critic/dataset sizes {sizes:?}",
            cfg.image_size
        )));
    }
    if gen_cfg.img_channels != dataset.channels() || critic_cfg.img_channels != dataset.channels() {
        return Err(Error::Config("channel counts of networks and dataset differ".into()));
    }
    if dataset.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "dataset of {} images is smaller than batch size {}",
            dataset.len(),
            cfg.batch_size
        )));
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let snap = RunSnapshot {
            train: cfg.clone(),
            generator: gen_cfg.clone(),
            critic: critic_cfg.clone(),
            dataset_len: dataset.len(),
        };
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&snap)?).map_err(|e| Error::io(&path, e))?;
    }

    let mut state = LoopState {
        generator: build_generator(gen_cfg, cfg.seed)?,
        critic: build_critic(critic_cfg, cfg.seed)?,
        log: TrainLog::default(),
        checkpoints: Vec::new(),
        epoch: 0,
    };
    let result = train_loop(cfg, dataset, run_dir, &mut state);
    if let Some(dir) = run_dir {
        state.log.save(&dir.join(LOG_FILE))?;
    }
    result?;
    if let Some(dir) = run_dir {
        let path = dir.join(FINAL_CHECKPOINT);
        let step = state.log.records().last().map_or(0, |r| r.step);
        Checkpoint::capture(&state.generator, &state.critic, step, state.epoch).save(&path)?;
        state.checkpoints.push(path);
    }
    Ok(TrainOutcome {
        generator: state.generator,
        critic: state.critic,
        log: state.log,
        checkpoints: state.checkpoints,
    })
}

struct LoopState {
    generator: Generator,
    critic: Critic,
    log: TrainLog,
    checkpoints: Vec<PathBuf>,
    epoch: u64,
}

fn train_loop(cfg: &TrainConfig, dataset: &TrainingSet, run_dir: Option<&Path>, st: &mut LoopState) -> Result<()> {
    let mut sampler = EpochSampler::new(dataset.len(), stream(cfg.seed, Stream::Shuffle));
    let mut latent_rng = stream(cfg.seed, Stream::Latent);
    let mut interp_rng = stream(cfg.seed, Stream::Interpolation);
    let mut d_opt = OptimizerState::new(st.critic.params());
    let mut g_opt = OptimizerState::new(st.generator.params());
    let bs = cfg.batch_size;
    let mut step = 0u64;

    loop {
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        if cfg.epochs > 0 && sampler.completed_epochs() >= cfg.epochs {
            break;
        }
        step += 1;

        let mut last = None;
        for _ in 0..cfg.critic_iters {
            let (idx, epoch) = sampler.next_batch(bs)?;
            st.epoch = epoch;
            let real = dataset.batch(&idx)?;
            let z = st.generator.sample_latent(bs, &mut latent_rng)?;
            let fake = {
                let _off = no_grad();
                st.generator.forward(&z, BatchNormMode::Train)?
            };
            let cl = critic_loss(&st.critic, &real, &fake, cfg.lambda_gp, &mut interp_rng)?;
            let d_loss = cl.loss.item()?;
            check_finite(d_loss, step, "critic loss")?;
            let grads = grad(&cl.loss, &st.critic.params().tensors(), false)?;
            adam_step(st.critic.params_mut(), &grads, &mut d_opt, &cfg.adam)?;
            last = Some((d_loss, cl.gp, cl.wasserstein_estimate));
        }
        let (d_loss, gp, w) = last.expect("critic_iters >= 1");

        let z = st.generator.sample_latent(bs, &mut latent_rng)?;
        let fake = st.generator.forward(&z, BatchNormMode::Train)?;
        let g_loss_t = generator_loss(&st.critic.score(&fake)?)?;
        let g_loss = g_loss_t.item()?;
        check_finite(g_loss, step, "generator loss")?;
        let g_params: Vec<Tensor> = st.generator.params().tensors().into_iter().cloned().collect();
        let refs: Vec<&Tensor> = g_params.iter().collect();
        let grads = grad(&g_loss_t, &refs, false)?;
        adam_step(st.generator.params_mut(), &grads, &mut g_opt, &cfg.adam)?;

        st.log.push(TrainRecord {
            step,
            epoch: st.epoch,
            d_loss,
            g_loss,
            gp,
            wasserstein_estimate: w,
        })?;
        if step % 50 == 0 {
            log::info!("step {step} epoch {} d_loss {d_loss:.4} g_loss {g_loss:.4} W {w:.4}", st.epoch);
        }
        if let Some(dir) = run_dir {
            if cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 {
                let path = dir.join(format!("step_{step:08}.ckpt"));
                Checkpoint::capture(&st.generator, &st.critic, step, st.epoch).save(&path)?;
                st.checkpoints.push(path);
            }
        }
    }
    Ok(())
}
