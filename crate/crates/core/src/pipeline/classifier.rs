//! Plain classifier training (the NN model) and evaluation, shared by the
//! fine-tuned CL model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::QNetwork;
use crate::data::Dataset;
use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{
    classifier_spec, softmax_cross_entropy_batch, AdamConfig, Network, OptimizerState,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::TransformSet;

use super::rl::run_testtime_episode;
use super::ExperimentConfig;

/// A trained classifier with its best validation accuracy.
#[derive(Debug, Clone)]
pub struct TrainedClassifier<S: Scalar> {
    pub network: Network<S>,
    pub val_accuracy: f64,
}

/// What `evaluate` runs.
pub enum Model<'a, S: Scalar> {
    Classifier(&'a Network<S>),
    Agent {
        qnet: &'a QNetwork<S>,
        set: &'a TransformSet,
        max_len: usize,
    },
}

/// How predictions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// One forward pass, argmax over class outputs.
    Plain,
    /// Greedy multi-step episodes with a forced stop at the chain cap.
    RlTestTime,
}

/// Per-sample predictions plus the derived accuracy.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub predictions: Vec<usize>,
    pub correct: usize,
}

impl EvalOutcome {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.predictions.len() as f64
    }
}

/// Fraction of correct predictions of a model over a dataset.
pub fn evaluate<S: Scalar>(
    model: &Model<'_, S>,
    ds: &Dataset<S>,
    policy: EvalPolicy,
) -> Result<EvalOutcome> {
    let predictions: Vec<usize> = match (model, policy) {
        (Model::Classifier(net), EvalPolicy::Plain) => classify_batched(net, ds)?,
        (Model::Classifier(_), EvalPolicy::RlTestTime) => {
            return Err(Error::InvalidArgument(
                "the test-time policy needs an agent, not a plain classifier".into(),
            ))
        }
        (Model::Agent { qnet, .. }, EvalPolicy::Plain) => ds
            .images()
            .par_iter()
            .map(|img| {
                let q = qnet.q_forward(img)?;
                match q.greedy_stop() {
                    Action::Stop(i) => Ok(i),
                    Action::Transform(_) => unreachable!("greedy_stop returns stops"),
                }
            })
            .collect::<Result<Vec<usize>>>()?,
        (
            Model::Agent {
                qnet,
                set,
                max_len,
            },
            EvalPolicy::RlTestTime,
        ) => ds
            .images()
            .par_iter()
            .map(|img| Ok(run_testtime_episode(qnet, set, *max_len, img)?.predicted))
            .collect::<Result<Vec<usize>>>()?,
    };
    let correct = predictions
        .iter()
        .zip(ds.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(EvalOutcome {
        predictions,
        correct,
    })
}

fn classify_batched<S: Scalar>(net: &Network<S>, ds: &Dataset<S>) -> Result<Vec<usize>> {
    let chunk = 64;
    let mut predictions = Vec::with_capacity(ds.len());
    for batch in ds.images().chunks(chunk) {
        let refs: Vec<&Tensor<S>> = batch.iter().collect();
        let logits = net.infer(&Tensor::stack(&refs)?)?;
        for i in 0..batch.len() {
            predictions.push(argmax(logits.row(i)));
        }
    }
    Ok(predictions)
}

pub(super) fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = (0usize, S::neg_infinity());
    for (i, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Train the bare classifier (figure "NN" model): softmax cross-entropy with
/// L2 via Adam, retaining the best-validation-accuracy parameters.
pub fn train_nn<S: Scalar>(
    cfg: &ExperimentConfig,
    train: &Dataset<S>,
    val: &Dataset<S>,
    seed: u64,
) -> Result<TrainedClassifier<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = classifier_spec(cfg.arch, train.shape(), train.classes());
    let mut net: Network<S> = Network::new(spec, &mut rng)?;
    let adam = AdamConfig::new(cfg.nn_learning_rate, cfg.nn_l2);
    fit_classifier(
        &mut net,
        adam,
        train,
        val,
        cfg.nn_epochs,
        cfg.nn_batch_size,
        &mut rng,
    )
}

/// Shared minibatch fitting loop; returns the best-validation checkpoint.
pub(super) fn fit_classifier<S: Scalar, R: Rng>(
    net: &mut Network<S>,
    adam: AdamConfig,
    train: &Dataset<S>,
    val: &Dataset<S>,
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<TrainedClassifier<S>> {
    let mut opt = OptimizerState::new(adam, &net.param_shapes());
    let mut best_net = net.clone();
    let mut best_acc = evaluate(&Model::Classifier(net), val, EvalPolicy::Plain)?.accuracy();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..epochs {
        order.shuffle(rng);
        for batch_idx in order.chunks(batch_size) {
            let images: Vec<&Tensor<S>> = batch_idx.iter().map(|&i| train.image(i)).collect();
            let labels: Vec<usize> = batch_idx.iter().map(|&i| train.label(i)).collect();
            let logits = net.forward(&Tensor::stack(&images)?)?;
            let (loss, dlogits) = softmax_cross_entropy_batch(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("classifier training loss".into()));
            }
            let (grads, _) = net.backward(&dlogits)?;
            opt.adam_step(&mut net.params_mut(), &grads)?;
        }
        let acc = evaluate(&Model::Classifier(net), val, EvalPolicy::Plain)?.accuracy();
        if acc > best_acc {
            best_acc = acc;
            best_net = net.clone();
        }
    }
    Ok(TrainedClassifier {
        network: best_net,
        val_accuracy: best_acc,
    })
}

/// Mean cross-entropy loss of a classifier over a dataset (no training).
pub fn classifier_loss<S: Scalar>(net: &Network<S>, ds: &Dataset<S>) -> Result<f64> {
    let chunk = 64;
    let mut total = 0.0;
    for start in (0..ds.len()).step_by(chunk) {
        let end = (start + chunk).min(ds.len());
        let images: Vec<&Tensor<S>> = (start..end).map(|i| ds.image(i)).collect();
        let labels: Vec<usize> = (start..end).map(|i| ds.label(i)).collect();
        let logits = net.infer(&Tensor::stack(&images)?)?;
        let (loss, _) = softmax_cross_entropy_batch(&logits, &labels)?;
        total += loss.to_f64_lossy() * (end - start) as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Build the CL classifier from a trained Q-network: the body parameters are
/// copied as-is and the final dense layer takes the stop-action slice of the
/// advantage branch, so that with zero fine-tuning the CL argmax equals the
/// agent's stop-action argmax.
pub fn classifier_from_qnet<S: Scalar, R: Rng>(
    cfg: &ExperimentConfig,
    qnet: &QNetwork<S>,
    rng: &mut R,
) -> Result<Network<S>> {
    let classes = qnet.classes();
    let spec = classifier_spec(cfg.arch, qnet.input_shape(), classes);
    let mut net: Network<S> = Network::new(spec, rng)?;

    let body_tensors: std::collections::HashMap<String, Tensor<S>> = qnet
        .body()
        .state_tensors()
        .into_iter()
        .map(|(name, t)| (name, t.clone()))
        .collect();
    let adv_params = qnet.advantage_head().state_tensors();
    let (adv_weight, adv_bias) = (&adv_params[0].1, &adv_params[1].1);
    let total_actions = qnet.action_count();

    for (name, tensor) in net.state_tensors_mut() {
        if let Some(src) = body_tensors.get(&name) {
            *tensor = src.clone();
        } else if name.ends_with("dense.weight") {
            // Stop-action columns of the advantage weight matrix.
            let features = tensor.shape()[0];
            for f in 0..features {
                for i in 0..classes {
                    tensor.data_mut()[f * classes + i] =
                        adv_weight.data()[f * total_actions + i];
                }
            }
        } else if name.ends_with("dense.bias") {
            tensor
                .data_mut()
                .copy_from_slice(&adv_bias.data()[..classes]);
        } else {
            return Err(Error::Checkpoint(format!(
                "classifier tensor {name} has no counterpart in the Q-network"
            )));
        }
    }
    Ok(net)
}

/// Fine-tune a classifier initialized from the Q-network on RL-preprocessed
/// training images (figure "CL" model). Model selection uses clean-validation
/// accuracy; with zero epochs the initialization is returned unchanged.
pub fn train_cl<S: Scalar>(
    cfg: &ExperimentConfig,
    qnet: &QNetwork<S>,
    preprocessed_train: &Dataset<S>,
    val: &Dataset<S>,
    seed: u64,
) -> Result<TrainedClassifier<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1);
    let mut net = classifier_from_qnet(cfg, qnet, &mut rng)?;
    let adam = AdamConfig::new(cfg.cl_learning_rate, cfg.cl_l2);
    fit_classifier(
        &mut net,
        adam,
        preprocessed_train,
        val,
        cfg.cl_epochs,
        cfg.cl_batch_size,
        &mut rng,
    )
}
