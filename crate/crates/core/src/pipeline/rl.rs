//! Agent training (the "RL" model), the greedy test-time policy, and the
//! dataset preprocessor that feeds the CL model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{
    select_action, sync_target, train_on_batch, train_step, EpsilonSchedule, PolicyMode,
    QNetwork, ReplayBuffer, Transition,
};
use crate::data::Dataset;
use crate::env::{Action, EnvConfig, Environment};
use crate::error::Result;
use crate::nn::{feature_spec, AdamConfig, OptimizerState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{apply_chain, Transform, TransformChain, TransformSet};

use super::classifier::{evaluate, EvalPolicy, Model};
use super::trace::EpisodeTrace;
use super::ExperimentConfig;

/// A trained agent with its best validation accuracy (under the test-time
/// policy) and the number of environment steps consumed.
#[derive(Debug, Clone)]
pub struct TrainedAgent<S: Scalar> {
    pub qnet: QNetwork<S>,
    pub val_accuracy: f64,
    pub env_steps: usize,
}

/// One finished test-time episode.
#[derive(Debug, Clone)]
pub struct EpisodeRun<S: Scalar> {
    pub predicted: usize,
    /// The current image at the moment of the stop action.
    pub final_image: Tensor<S>,
    /// Transformations taken, in order.
    pub transforms: Vec<Transform>,
    /// Chosen-action Q-value per step, the terminal stop included.
    pub q_values: Vec<f64>,
}

/// Run the greedy test-time policy on one image: no exploration, no
/// recovery; at the chain cap the prediction is the best stop action.
pub fn run_testtime_episode<S: Scalar>(
    qnet: &QNetwork<S>,
    set: &TransformSet,
    max_len: usize,
    image: &Tensor<S>,
) -> Result<EpisodeRun<S>> {
    let mut chain = TransformChain::new(max_len);
    let mut current = image.clone();
    let mut transforms = Vec::new();
    let mut q_values = Vec::new();
    // Test mode ignores epsilon and never draws from the rng; the signature
    // still wants one.
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    // The chain grows by one per transformation step, so the loop runs at
    // most max_len + 1 times.
    loop {
        let q = qnet.q_forward(&current)?;
        let action = select_action(
            &q,
            0.0,
            &mut dummy,
            PolicyMode::Test,
            chain.len(),
            max_len,
        );
        q_values.push(q.q(action).to_f64_lossy());
        match action {
            Action::Stop(i) => {
                return Ok(EpisodeRun {
                    predicted: i,
                    final_image: current,
                    transforms,
                    q_values,
                });
            }
            Action::Transform(j) => {
                let t = set.get(j)?;
                chain.push(t)?;
                transforms.push(t);
                current = apply_chain(image, &chain)?;
            }
        }
    }
}

/// Preprocess a dataset with the trained agent: each image is run through
/// the test-time policy and the image at the moment of the stop action is
/// emitted with the original label. Output cardinality equals input
/// cardinality.
pub fn preprocess_dataset<S: Scalar>(
    qnet: &QNetwork<S>,
    set: &TransformSet,
    max_len: usize,
    ds: &Dataset<S>,
) -> Result<Dataset<S>> {
    let images: Vec<Tensor<S>> = ds
        .images()
        .par_iter()
        .map(|img| Ok(run_testtime_episode(qnet, set, max_len, img)?.final_image))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, ds.labels().to_vec(), ds.classes())
}

/// Trace the agent over the first `count` images of a dataset.
pub fn trace_episodes<S: Scalar>(
    qnet: &QNetwork<S>,
    set: &TransformSet,
    max_len: usize,
    ds: &Dataset<S>,
    count: usize,
) -> Result<Vec<EpisodeTrace>> {
    let count = count.min(ds.len());
    (0..count)
        .into_par_iter()
        .map(|i| {
            let run = run_testtime_episode(qnet, set, max_len, ds.image(i))?;
            Ok(EpisodeTrace {
                image_id: i,
                true_label: ds.label(i),
                steps: run.transforms.iter().map(|t| t.label()).collect(),
                predicted: run.predicted,
                q_values: run.q_values,
            })
        })
        .collect()
}

/// Train the agent: episodes draw training images uniformly with epoch
/// reshuffling; epsilon anneals over environment steps; replay and periodic
/// target sync stabilize learning (both config-toggleable). The
/// best-validation checkpoint under the test-time policy is retained.
pub fn train_rl<S: Scalar>(
    cfg: &ExperimentConfig,
    train: &Dataset<S>,
    val: &Dataset<S>,
    seed: u64,
) -> Result<TrainedAgent<S>> {
    let set = TransformSet::of_kind(cfg.agent_set);
    let env = Environment::new(
        EnvConfig::new(train.classes(), cfg.max_len, cfg.reward_mode)?,
        set.clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut online: QNetwork<S> = QNetwork::new(
        feature_spec(cfg.arch, train.shape()),
        train.classes(),
        set.len(),
        &mut rng,
    )?;
    let mut target = online.clone();
    let mut buffer: ReplayBuffer<S> = ReplayBuffer::new(cfg.buffer_capacity);
    let mut opt = OptimizerState::new(
        AdamConfig::new(cfg.rl_learning_rate, cfg.rl_l2),
        &online.param_shapes(),
    );
    let sched = EpsilonSchedule::with_range(cfg.eps_start, cfg.eps_end, cfg.anneal_steps())?;
    let episode_budget = cfg.episode_budget_factor * cfg.max_len;

    let mut env_step = 0usize;
    let mut train_steps = 0usize;
    let mut best_acc = -1.0f64;
    let mut best_net = online.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();

    'training: loop {
        order.shuffle(&mut rng);
        for &idx in &order {
            if env_step >= cfg.rl_env_steps {
                break 'training;
            }
            let mut state = env.reset(train.image(idx), train.label(idx))?;
            let mut episode_steps = 0usize;
            loop {
                let q = online.q_forward(state.current())?;
                let action = if episode_steps >= episode_budget {
                    // Forced termination: pick the best stop action.
                    q.greedy_stop()
                } else {
                    select_action(
                        &q,
                        sched.epsilon_at(env_step),
                        &mut rng,
                        PolicyMode::Train,
                        state.chain().len(),
                        cfg.max_len,
                    )
                };
                let outcome = env.step(&state, action)?;
                let transition = Transition {
                    state: state.current().clone(),
                    action,
                    reward: outcome.reward,
                    next_state: outcome.next_state.current().clone(),
                    terminal: outcome.terminal,
                };
                env_step += 1;
                episode_steps += 1;

                let learn = env_step >= cfg.learn_start && env_step % cfg.train_every == 0;
                if cfg.use_replay {
                    buffer.push(transition);
                    if learn && buffer.len() >= cfg.batch_size {
                        if !cfg.use_target {
                            sync_target(&online, &mut target)?;
                        }
                        train_step(
                            &mut online,
                            &target,
                            &buffer,
                            cfg.batch_size,
                            cfg.gamma,
                            &mut opt,
                            &mut rng,
                        )
                        .map_err(|e| e.in_stage("rl train_step"))?;
                        train_steps += 1;
                        if cfg.use_target && train_steps % cfg.sync_interval == 0 {
                            sync_target(&online, &mut target)?;
                        }
                    }
                } else if learn {
                    // Paper-literal online variant: learn from the latest
                    // transition alone.
                    if !cfg.use_target {
                        sync_target(&online, &mut target)?;
                    }
                    train_on_batch(&mut online, &target, &[&transition], cfg.gamma, &mut opt)
                        .map_err(|e| e.in_stage("rl train_step"))?;
                    train_steps += 1;
                    if cfg.use_target && train_steps % cfg.sync_interval == 0 {
                        sync_target(&online, &mut target)?;
                    }
                }

                let terminal = outcome.terminal;
                state = outcome.next_state;
                if terminal {
                    break;
                }
            }
        }
        let acc = validation_accuracy(&online, &set, cfg.max_len, val)?;
        if acc > best_acc {
            best_acc = acc;
            best_net = online.clone();
        }
    }
    // Evaluate whatever the final pass left, in case the step budget ended
    // mid-pass.
    let acc = validation_accuracy(&online, &set, cfg.max_len, val)?;
    if acc > best_acc {
        best_acc = acc;
        best_net = online.clone();
    }
    Ok(TrainedAgent {
        qnet: best_net,
        val_accuracy: best_acc,
        env_steps: env_step,
    })
}

fn validation_accuracy<S: Scalar>(
    qnet: &QNetwork<S>,
    set: &TransformSet,
    max_len: usize,
    val: &Dataset<S>,
) -> Result<f64> {
    Ok(evaluate(
        &Model::Agent {
            qnet,
            set,
            max_len,
        },
        val,
        EvalPolicy::RlTestTime,
    )?
    .accuracy())
}
