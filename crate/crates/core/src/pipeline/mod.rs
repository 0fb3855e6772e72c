//! Experiment methodology: train the bare classifier (NN), the agent (RL),
//! and the fine-tuned classifier on RL-preprocessed data (CL); evaluate
//! accuracy and robustness; export episode traces.

mod classifier;
mod experiment;
mod rl;
mod trace;

pub use classifier::{
    classifier_from_qnet, classifier_loss, evaluate, train_cl, train_nn, EvalOutcome, EvalPolicy,
    Model, TrainedClassifier,
};
pub use experiment::{
    distorted_within_slack, parse_run_records, render_run_records, run_experiment, run_seed,
    Condition, ExperimentOutcome, MetricsReport, ModelKind, ReportCell, RunRecord,
};
pub use rl::{
    preprocess_dataset, run_testtime_episode, trace_episodes, train_rl, EpisodeRun, TrainedAgent,
};
pub use trace::{parse_traces, render_traces, EpisodeTrace};

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KvConfig;
use crate::data::{gen_glyphs_with, load_idx, Dataset, DistortionConfig, GlyphConfig, SplitDataset};
use crate::env::RewardMode;
use crate::error::{Error, Result};
use crate::nn::ArchPreset;
use crate::scalar::Scalar;
use crate::transforms::TransformSetKind;

/// Where images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Procedural glyph dataset; train/val/test are drawn with distinct
    /// seeds derived from the experiment seed.
    Glyphs,
    /// MNIST-format IDX file pairs; validation is carved off the training
    /// pair with a seeded shuffle.
    Idx,
}

/// Fully-resolved experiment configuration. Defaults reproduce the standard
/// setup: 11 transformations, max_len 10, Adam with learning rate 1e-4 and
/// L2 coefficient 1e-3, 5 runs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub arch: ArchPreset,

    pub source: DataSource,
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub glyph_size: usize,
    pub glyph_jitter: usize,
    pub glyph_thickness: usize,
    pub glyph_noise: f64,
    pub idx_train_images: PathBuf,
    pub idx_train_labels: PathBuf,
    pub idx_test_images: PathBuf,
    pub idx_test_labels: PathBuf,
    pub val_fraction: f64,
    /// 0 keeps every class / sample of an IDX source.
    pub limit_classes: usize,
    pub limit_per_class: usize,

    pub max_len: usize,
    pub reward_mode: RewardMode,

    pub agent_set: TransformSetKind,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// 0 = anneal over half of the environment step budget.
    pub anneal_steps_cfg: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub sync_interval: usize,
    pub train_every: usize,
    pub learn_start: usize,
    pub use_replay: bool,
    pub use_target: bool,
    pub episode_budget_factor: usize,

    pub nn_epochs: usize,
    pub nn_batch_size: usize,
    pub nn_learning_rate: f64,
    pub nn_l2: f64,

    pub rl_env_steps: usize,
    pub rl_learning_rate: f64,
    pub rl_l2: f64,

    pub cl_epochs: usize,
    pub cl_batch_size: usize,
    pub cl_learning_rate: f64,
    pub cl_l2: f64,

    pub distort_probability: f64,
    pub distort_set: TransformSetKind,
    pub distort_min_len: usize,
    pub distort_max_len: usize,

    pub runs: usize,
    pub seed: u64,
    pub trace_count: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            arch: ArchPreset::Arch1,
            source: DataSource::Glyphs,
            classes: 2,
            train_per_class: 300,
            val_per_class: 100,
            test_per_class: 200,
            glyph_size: 16,
            glyph_jitter: 1,
            glyph_thickness: 2,
            glyph_noise: 0.0,
            idx_train_images: PathBuf::from("train-images-idx3-ubyte"),
            idx_train_labels: PathBuf::from("train-labels-idx1-ubyte"),
            idx_test_images: PathBuf::from("t10k-images-idx3-ubyte"),
            idx_test_labels: PathBuf::from("t10k-labels-idx1-ubyte"),
            val_fraction: 1.0 / 12.0,
            limit_classes: 0,
            limit_per_class: 0,
            max_len: 10,
            reward_mode: RewardMode::Balanced,
            agent_set: TransformSetKind::Standard,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.1,
            anneal_steps_cfg: 0,
            buffer_capacity: 50_000,
            batch_size: 32,
            sync_interval: 500,
            train_every: 1,
            learn_start: 500,
            use_replay: true,
            use_target: true,
            episode_budget_factor: 3,
            nn_epochs: 10,
            nn_batch_size: 32,
            nn_learning_rate: 1e-4,
            nn_l2: 1e-3,
            rl_env_steps: 20_000,
            rl_learning_rate: 1e-4,
            rl_l2: 1e-3,
            cl_epochs: 5,
            cl_batch_size: 32,
            cl_learning_rate: 1e-4,
            cl_l2: 1e-3,
            distort_probability: 0.5,
            distort_set: TransformSetKind::Standard,
            distort_min_len: 1,
            distort_max_len: 5,
            runs: 5,
            seed: 1,
            trace_count: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn anneal_steps(&self) -> usize {
        if self.anneal_steps_cfg == 0 {
            (self.rl_env_steps / 2).max(1)
        } else {
            self.anneal_steps_cfg
        }
    }

    pub fn dataset_name(&self) -> String {
        match self.source {
            DataSource::Glyphs => format!("glyphs-k{}", self.classes),
            DataSource::Idx => "idx".into(),
        }
    }

    pub fn distortion_with_seed(&self, seed: u64) -> DistortionConfig {
        DistortionConfig {
            probability: self.distort_probability,
            kind: self.distort_set,
            min_len: self.distort_min_len,
            max_len: self.distort_max_len,
            seed,
        }
    }

    /// Build from a key/value config; unknown keys are rejected.
    pub fn from_kv(kv: &KvConfig) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let mut r = kv.reader();

        let arch = ArchPreset::parse(&r.str_or("arch.preset", d.arch.name()))?;

        let source = match r.str_or("data.source", "glyphs").as_str() {
            "glyphs" => DataSource::Glyphs,
            "idx" => DataSource::Idx,
            other => {
                return Err(Error::Config(format!(
                    "unknown data source {other:?} (expected glyphs|idx)"
                )))
            }
        };
        let cfg = ExperimentConfig {
            arch,
            source,
            classes: r.usize_or("data.classes", d.classes)?,
            train_per_class: r.usize_or("data.train_per_class", d.train_per_class)?,
            val_per_class: r.usize_or("data.val_per_class", d.val_per_class)?,
            test_per_class: r.usize_or("data.test_per_class", d.test_per_class)?,
            glyph_size: r.usize_or("data.size", d.glyph_size)?,
            glyph_jitter: r.usize_or("data.jitter", d.glyph_jitter)?,
            glyph_thickness: r.usize_or("data.thickness", d.glyph_thickness)?,
            glyph_noise: r.f64_or("data.noise", d.glyph_noise)?,
            idx_train_images: PathBuf::from(r.str_or(
                "data.idx_train_images",
                &d.idx_train_images.display().to_string(),
            )),
            idx_train_labels: PathBuf::from(r.str_or(
                "data.idx_train_labels",
                &d.idx_train_labels.display().to_string(),
            )),
            idx_test_images: PathBuf::from(r.str_or(
                "data.idx_test_images",
                &d.idx_test_images.display().to_string(),
            )),
            idx_test_labels: PathBuf::from(r.str_or(
                "data.idx_test_labels",
                &d.idx_test_labels.display().to_string(),
            )),
            val_fraction: r.f64_or("data.val_fraction", d.val_fraction)?,
            limit_classes: r.usize_or("data.limit_classes", d.limit_classes)?,
            limit_per_class: r.usize_or("data.limit_per_class", d.limit_per_class)?,
            max_len: r.usize_or("env.max_len", d.max_len)?,
            reward_mode: RewardMode::parse(&r.str_or("env.reward_mode", d.reward_mode.name()))?,
            agent_set: TransformSetKind::parse(
                &r.str_or("agent.transform_set", d.agent_set.name()),
            )?,
            gamma: r.f64_or("agent.gamma", d.gamma)?,
            eps_start: r.f64_or("agent.eps_start", d.eps_start)?,
            eps_end: r.f64_or("agent.eps_end", d.eps_end)?,
            anneal_steps_cfg: r.usize_or("agent.anneal_steps", d.anneal_steps_cfg)?,
            buffer_capacity: r.usize_or("agent.buffer_capacity", d.buffer_capacity)?,
            batch_size: r.usize_or("agent.batch_size", d.batch_size)?,
            sync_interval: r.usize_or("agent.sync_interval", d.sync_interval)?,
            train_every: r.usize_or("agent.train_every", d.train_every)?,
            learn_start: r.usize_or("agent.learn_start", d.learn_start)?,
            use_replay: r.bool_or("agent.use_replay", d.use_replay)?,
            use_target: r.bool_or("agent.use_target", d.use_target)?,
            episode_budget_factor: r
                .usize_or("agent.episode_budget_factor", d.episode_budget_factor)?,
            nn_epochs: r.usize_or("nn.epochs", d.nn_epochs)?,
            nn_batch_size: r.usize_or("nn.batch_size", d.nn_batch_size)?,
            nn_learning_rate: r.f64_or("nn.learning_rate", d.nn_learning_rate)?,
            nn_l2: r.f64_or("nn.l2", d.nn_l2)?,
            rl_env_steps: r.usize_or("rl.env_steps", d.rl_env_steps)?,
            rl_learning_rate: r.f64_or("rl.learning_rate", d.rl_learning_rate)?,
            rl_l2: r.f64_or("rl.l2", d.rl_l2)?,
            cl_epochs: r.usize_or("cl.epochs", d.cl_epochs)?,
            cl_batch_size: r.usize_or("cl.batch_size", d.cl_batch_size)?,
            cl_learning_rate: r.f64_or("cl.learning_rate", d.cl_learning_rate)?,
            cl_l2: r.f64_or("cl.l2", d.cl_l2)?,
            distort_probability: r.f64_or("distort.probability", d.distort_probability)?,
            distort_set: TransformSetKind::parse(
                &r.str_or("distort.set", d.distort_set.name()),
            )?,
            distort_min_len: r.usize_or("distort.min_len", d.distort_min_len)?,
            distort_max_len: r.usize_or("distort.max_len", d.distort_max_len)?,
            runs: r.usize_or("experiment.runs", d.runs)?,
            seed: r.u64_or("experiment.seed", d.seed)?,
            trace_count: r.usize_or("experiment.traces", d.trace_count)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("experiment.runs must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("env.max_len must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("data.classes must be at least 2".into()));
        }
        if self.batch_size == 0 || self.nn_batch_size == 0 || self.cl_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.train_every == 0 {
            return Err(Error::Config("agent.train_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.distort_probability) {
            return Err(Error::Config(
                "distort.probability must lie in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("agent.gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The fully-resolved configuration as key/value lines (the effective
    /// config echoed next to run outputs).
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("arch.preset", self.arch.name());
        kv.set(
            "data.source",
            match self.source {
                DataSource::Glyphs => "glyphs",
                DataSource::Idx => "idx",
            },
        );
        kv.set("data.classes", self.classes);
        kv.set("data.train_per_class", self.train_per_class);
        kv.set("data.val_per_class", self.val_per_class);
        kv.set("data.test_per_class", self.test_per_class);
        kv.set("data.size", self.glyph_size);
        kv.set("data.jitter", self.glyph_jitter);
        kv.set("data.thickness", self.glyph_thickness);
        kv.set("data.noise", self.glyph_noise);
        kv.set("data.idx_train_images", self.idx_train_images.display());
        kv.set("data.idx_train_labels", self.idx_train_labels.display());
        kv.set("data.idx_test_images", self.idx_test_images.display());
        kv.set("data.idx_test_labels", self.idx_test_labels.display());
        kv.set("data.val_fraction", self.val_fraction);
        kv.set("data.limit_classes", self.limit_classes);
        kv.set("data.limit_per_class", self.limit_per_class);
        kv.set("env.max_len", self.max_len);
        kv.set("env.reward_mode", self.reward_mode.name());
        kv.set("agent.transform_set", self.agent_set.name());
        kv.set("agent.gamma", self.gamma);
        kv.set("agent.eps_start", self.eps_start);
        kv.set("agent.eps_end", self.eps_end);
        kv.set("agent.anneal_steps", self.anneal_steps_cfg);
        kv.set("agent.buffer_capacity", self.buffer_capacity);
        kv.set("agent.batch_size", self.batch_size);
        kv.set("agent.sync_interval", self.sync_interval);
        kv.set("agent.train_every", self.train_every);
        kv.set("agent.learn_start", self.learn_start);
        kv.set("agent.use_replay", self.use_replay);
        kv.set("agent.use_target", self.use_target);
        kv.set("agent.episode_budget_factor", self.episode_budget_factor);
        kv.set("nn.epochs", self.nn_epochs);
        kv.set("nn.batch_size", self.nn_batch_size);
        kv.set("nn.learning_rate", self.nn_learning_rate);
        kv.set("nn.l2", self.nn_l2);
        kv.set("rl.env_steps", self.rl_env_steps);
        kv.set("rl.learning_rate", self.rl_learning_rate);
        kv.set("rl.l2", self.rl_l2);
        kv.set("cl.epochs", self.cl_epochs);
        kv.set("cl.batch_size", self.cl_batch_size);
        kv.set("cl.learning_rate", self.cl_learning_rate);
        kv.set("cl.l2", self.cl_l2);
        kv.set("distort.probability", self.distort_probability);
        kv.set("distort.set", self.distort_set.name());
        kv.set("distort.min_len", self.distort_min_len);
        kv.set("distort.max_len", self.distort_max_len);
        kv.set("experiment.runs", self.runs);
        kv.set("experiment.seed", self.seed);
        kv.set("experiment.traces", self.trace_count);
        kv
    }
}

/// Assemble train/val/test splits from the configured source. Deterministic
/// given `cfg.seed`; runs share the data and differ only in initialization.
pub fn build_data<S: Scalar>(cfg: &ExperimentConfig) -> Result<SplitDataset<S>> {
    match cfg.source {
        DataSource::Glyphs => {
            let glyphs = |per_class: usize, seed_offset: u64| -> Result<Dataset<S>> {
                gen_glyphs_with(&GlyphConfig {
                    classes: cfg.classes,
                    per_class,
                    size: cfg.glyph_size,
                    jitter: cfg.glyph_jitter,
                    thickness: cfg.glyph_thickness,
                    noise: cfg.glyph_noise,
                    seed: cfg.seed.wrapping_add(seed_offset),
                })
            };
            Ok(SplitDataset {
                train: glyphs(cfg.train_per_class, 1_000_001)?,
                val: glyphs(cfg.val_per_class, 1_000_002)?,
                test: glyphs(cfg.test_per_class, 1_000_003)?,
            })
        }
        DataSource::Idx => {
            let mut train_full: Dataset<S> =
                load_idx(&cfg.idx_train_images, &cfg.idx_train_labels)?;
            let mut test: Dataset<S> = load_idx(&cfg.idx_test_images, &cfg.idx_test_labels)?;
            if cfg.limit_classes > 0 {
                let limit = if cfg.limit_per_class > 0 {
                    cfg.limit_per_class
                } else {
                    usize::MAX
                };
                train_full = train_full.restrict_classes(cfg.limit_classes, limit)?;
                test = test.restrict_classes(cfg.limit_classes, limit)?;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2_000_001));
            let (val, train) = train_full.split_fraction(cfg.val_fraction, &mut rng)?;
            Ok(SplitDataset { train, val, test })
        }
    }
}
