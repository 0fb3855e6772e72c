//! The dueling Q-network over the hybrid action space, the epsilon-greedy
//! decision maker, and the Bellman-target learning step.

mod replay;
mod schedule;

pub use replay::{ReplayBuffer, Transition};
pub use schedule::EpsilonSchedule;

use std::path::Path;

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};
use crate::nn::{Gradients, HeadSpec, LayerSpec, Network, NetworkSpec, OptimizerState, ParamMut};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-action Q-values: k stop actions followed by n transformation actions.
#[derive(Debug, Clone)]
pub struct QOutput<S: Scalar> {
    pub stop_q: Vec<S>,
    pub transform_q: Vec<S>,
}

impl<S: Scalar> QOutput<S> {
    pub fn action_count(&self) -> usize {
        self.stop_q.len() + self.transform_q.len()
    }

    pub fn q(&self, action: Action) -> S {
        match action {
            Action::Stop(i) => self.stop_q[i],
            Action::Transform(j) => self.transform_q[j],
        }
    }

    fn flat(&self) -> impl Iterator<Item = S> + '_ {
        self.stop_q
            .iter()
            .chain(self.transform_q.iter())
            .copied()
    }

    pub fn max_q(&self) -> S {
        self.flat()
            .fold(S::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    /// Argmax over all k + n actions; ties resolve to the lowest flat index.
    pub fn greedy(&self) -> Action {
        let (mut best_idx, mut best) = (0usize, S::neg_infinity());
        for (idx, q) in self.flat().enumerate() {
            if q > best {
                best = q;
                best_idx = idx;
            }
        }
        Action::from_flat_index(best_idx, self.stop_q.len(), self.transform_q.len())
            .expect("index within bounds by construction")
    }

    /// Argmax restricted to the stop actions.
    pub fn greedy_stop(&self) -> Action {
        let (mut best_idx, mut best) = (0usize, S::neg_infinity());
        for (i, &q) in self.stop_q.iter().enumerate() {
            if q > best {
                best = q;
                best_idx = i;
            }
        }
        Action::Stop(best_idx)
    }
}

/// Dueling Q-network: a shared convolutional body feeding a scalar value
/// branch and a (k + n)-way advantage branch, combined as
/// `Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')`.
#[derive(Debug, Clone)]
pub struct QNetwork<S: Scalar> {
    body: Network<S>,
    value_head: Network<S>,
    advantage_head: Network<S>,
    classes: usize,
    transform_count: usize,
}

impl<S: Scalar> QNetwork<S> {
    pub fn new<R: Rng>(
        body_spec: NetworkSpec,
        classes: usize,
        transform_count: usize,
        rng: &mut R,
    ) -> Result<QNetwork<S>> {
        let feature_shape = body_spec.output_shape()?;
        if feature_shape.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "dueling body must produce a flat feature vector, got {feature_shape:?}"
            )));
        }
        let features = feature_shape[0];
        let body = Network::new(body_spec, rng)?;
        let value_head = Network::new(head_spec("value-head", features, 1), rng)?;
        let advantage_head = Network::new(
            head_spec("advantage-head", features, classes + transform_count),
            rng,
        )?;
        Ok(QNetwork {
            body,
            value_head,
            advantage_head,
            classes,
            transform_count,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn transform_count(&self) -> usize {
        self.transform_count
    }

    pub fn action_count(&self) -> usize {
        self.classes + self.transform_count
    }

    pub fn body(&self) -> &Network<S> {
        &self.body
    }

    pub fn advantage_head(&self) -> &Network<S> {
        &self.advantage_head
    }

    pub fn value_head(&self) -> &Network<S> {
        &self.value_head
    }

    pub fn input_shape(&self) -> &[usize] {
        self.body.input_shape()
    }

    /// Q-values for a single image (inference mode, deterministic).
    pub fn q_forward(&self, image: &Tensor<S>) -> Result<QOutput<S>> {
        let batched = Tensor::stack(&[image])?;
        let q = self.infer_batch(&batched)?;
        self.split_row(q.row(0))
    }

    /// Q-values for a batch of images (inference mode): `[N, k + n]`.
    pub fn infer_batch(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        let features = self.body.infer(images)?;
        let value = self.value_head.infer(&features)?;
        let advantage = self.advantage_head.infer(&features)?;
        Ok(combine_dueling(&value, &advantage))
    }

    /// Training-mode forward over a batch, caching for `backward_batch`.
    pub fn forward_batch(&mut self, images: &Tensor<S>) -> Result<Tensor<S>> {
        let features = self.body.forward(images)?;
        let value = self.value_head.forward(&features)?;
        let advantage = self.advantage_head.forward(&features)?;
        Ok(combine_dueling(&value, &advantage))
    }

    /// Backpropagate a gradient w.r.t. the combined Q output `[N, k + n]`.
    /// Returns gradients aligned with `params_mut()` order.
    pub fn backward_batch(&mut self, grad_q: &Tensor<S>) -> Result<Gradients<S>> {
        let n = grad_q.shape()[0];
        let actions = self.action_count();
        let inv_actions = S::one() / S::from_f64(actions as f64);

        // Q[a] = V + A[a] - mean(A) gives dV = sum_a dQ[a] and
        // dA[b] = dQ[b] - sum_a dQ[a] / (k + n).
        let mut grad_value = Tensor::zeros(&[n, 1]);
        let mut grad_adv = Tensor::zeros(&[n, actions]);
        for i in 0..n {
            let row = grad_q.row(i);
            let total: S = row.iter().copied().sum();
            grad_value.data_mut()[i] = total;
            let adv_row = &mut grad_adv.data_mut()[i * actions..(i + 1) * actions];
            for (dst, &g) in adv_row.iter_mut().zip(row.iter()) {
                *dst = g - total * inv_actions;
            }
        }

        let (value_grads, dfeat_value) = self.value_head.backward(&grad_value)?;
        let (adv_grads, dfeat_adv) = self.advantage_head.backward(&grad_adv)?;
        let mut dfeat = dfeat_value;
        for (a, &b) in dfeat.data_mut().iter_mut().zip(dfeat_adv.data().iter()) {
            *a += b;
        }
        let (body_grads, _) = self.body.backward(&dfeat)?;

        let mut tensors = body_grads.tensors;
        tensors.extend(value_grads.tensors);
        tensors.extend(adv_grads.tensors);
        Ok(Gradients { tensors })
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        let mut out: Vec<ParamMut<'_, S>> = Vec::new();
        for (prefix, net) in [
            ("body", &mut self.body),
            ("value", &mut self.value_head),
            ("advantage", &mut self.advantage_head),
        ] {
            for mut p in net.params_mut() {
                p.name = format!("{prefix}.{}", p.name);
                out.push(p);
            }
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = self.body.param_shapes();
        shapes.extend(self.value_head.param_shapes());
        shapes.extend(self.advantage_head.param_shapes());
        shapes
    }

    /// Copy all parameters and state bit-exactly from a matching network.
    pub fn assign_from(&mut self, other: &QNetwork<S>) -> Result<()> {
        if self.classes != other.classes || self.transform_count != other.transform_count {
            return Err(Error::InvalidArgument(format!(
                "cannot sync dueling networks with different action spaces \
                 ({}+{} vs {}+{})",
                other.classes, other.transform_count, self.classes, self.transform_count
            )));
        }
        self.body.assign_from(&other.body)?;
        self.value_head.assign_from(&other.value_head)?;
        self.advantage_head.assign_from(&other.advantage_head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, &Tensor<S>)> = Vec::new();
        for (prefix, net) in [
            ("body", &self.body),
            ("value", &self.value_head),
            ("advantage", &self.advantage_head),
        ] {
            for (name, tensor) in net.state_tensors() {
                entries.push((format!("{prefix}.{name}"), tensor));
            }
        }
        crate::nn::save_tensors(path, &entries)
    }

    pub fn load<R: Rng>(
        body_spec: NetworkSpec,
        classes: usize,
        transform_count: usize,
        path: &Path,
        rng: &mut R,
    ) -> Result<QNetwork<S>> {
        let mut net = QNetwork::new(body_spec, classes, transform_count, rng)?;
        let loaded = crate::nn::load_tensors::<S>(path)?;
        let mut by_name: std::collections::HashMap<String, Tensor<S>> =
            loaded.into_iter().collect();
        for (prefix, subnet) in [
            ("body", &mut net.body),
            ("value", &mut net.value_head),
            ("advantage", &mut net.advantage_head),
        ] {
            for (name, tensor) in subnet.state_tensors_mut() {
                let key = format!("{prefix}.{name}");
                let found = by_name.remove(&key).ok_or_else(|| {
                    Error::Checkpoint(format!("missing tensor {key} in {}", path.display()))
                })?;
                if found.shape() != tensor.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {key} has shape {:?}, expected {:?}",
                        found.shape(),
                        tensor.shape()
                    )));
                }
                *tensor = found;
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor {extra} in {}",
                path.display()
            )));
        }
        Ok(net)
    }
}

fn head_spec(name: &str, features: usize, units: usize) -> NetworkSpec {
    NetworkSpec {
        name: name.into(),
        input_shape: vec![features],
        layers: vec![LayerSpec::Dense { units }],
        head: HeadSpec::Features,
    }
}

/// Dueling aggregation over a `[N, 1]` value batch and `[N, A]` advantage
/// batch.
fn combine_dueling<S: Scalar>(value: &Tensor<S>, advantage: &Tensor<S>) -> Tensor<S> {
    let n = advantage.shape()[0];
    let actions = advantage.shape()[1];
    let inv = S::one() / S::from_f64(actions as f64);
    let mut q = Tensor::zeros(&[n, actions]);
    for i in 0..n {
        let adv_row = advantage.row(i);
        let mean: S = adv_row.iter().copied().sum::<S>() * inv;
        let v = value.data()[i];
        let out = &mut q.data_mut()[i * actions..(i + 1) * actions];
        for (dst, &a) in out.iter_mut().zip(adv_row.iter()) {
            *dst = v + a - mean;
        }
    }
    q
}

impl<S: Scalar> QNetwork<S> {
    fn split_row(&self, row: &[S]) -> Result<QOutput<S>> {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q-network output".into()));
        }
        Ok(QOutput {
            stop_q: row[..self.classes].to_vec(),
            transform_q: row[self.classes..].to_vec(),
        })
    }
}

/// How the decision maker selects actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyMode {
    /// Epsilon-greedy exploration over all k + n actions.
    Train,
    /// Greedy; at the chain cap the choice is restricted to stop actions.
    Test,
}

/// The decision maker: max policy with epsilon-greedy exploration during
/// training, pure greedy at test time with a forced stop at the chain cap.
pub fn select_action<S: Scalar, R: Rng>(
    q: &QOutput<S>,
    eps: f64,
    rng: &mut R,
    mode: PolicyMode,
    chain_len: usize,
    max_len: usize,
) -> Action {
    debug_assert!((0.0..=1.0).contains(&eps));
    match mode {
        PolicyMode::Train => {
            if rng.gen::<f64>() < eps {
                let idx = rng.gen_range(0..q.action_count());
                Action::from_flat_index(idx, q.stop_q.len(), q.transform_q.len())
                    .expect("index within bounds")
            } else {
                q.greedy()
            }
        }
        PolicyMode::Test => {
            if chain_len >= max_len {
                q.greedy_stop()
            } else {
                q.greedy()
            }
        }
    }
}

/// Bellman target for one transition: `r` when terminal, otherwise
/// `r + gamma * max_a' Q(s', a')` under the target network.
pub fn bellman_target<S: Scalar>(
    transition: &Transition<S>,
    target_net: &QNetwork<S>,
    gamma: f64,
) -> Result<S> {
    if transition.terminal {
        return Ok(transition.reward);
    }
    let q = target_net.q_forward(&transition.next_state)?;
    let target = transition.reward + S::from_f64(gamma) * q.max_q();
    if !target.is_finite() {
        return Err(Error::NonFinite("Bellman target".into()));
    }
    Ok(target)
}

/// Bellman targets for a batch, evaluated with one batched forward pass over
/// the non-terminal next states.
pub fn bellman_targets<S: Scalar>(
    transitions: &[&Transition<S>],
    target_net: &QNetwork<S>,
    gamma: f64,
) -> Result<Vec<S>> {
    let gamma_s = S::from_f64(gamma);
    let live: Vec<&Tensor<S>> = transitions
        .iter()
        .filter(|t| !t.terminal)
        .map(|t| &t.next_state)
        .collect();
    let mut live_max = Vec::with_capacity(live.len());
    if !live.is_empty() {
        let q = target_net.infer_batch(&Tensor::stack(&live)?)?;
        for i in 0..live.len() {
            let max = q
                .row(i)
                .iter()
                .copied()
                .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
            live_max.push(max);
        }
    }
    let mut next_live = live_max.into_iter();
    transitions
        .iter()
        .map(|t| {
            let target = if t.terminal {
                t.reward
            } else {
                t.reward + gamma_s * next_live.next().expect("one max per live transition")
            };
            if !target.is_finite() {
                return Err(Error::NonFinite("Bellman target".into()));
            }
            Ok(target)
        })
        .collect()
}

/// One learning step: sample a batch, regress the taken action's Q-value
/// towards its Bellman target with squared error, and apply one Adam update.
/// Gradients flow only through the taken action's Q-value.
pub fn train_step<S: Scalar, R: Rng>(
    online: &mut QNetwork<S>,
    target_net: &QNetwork<S>,
    buffer: &ReplayBuffer<S>,
    batch_size: usize,
    gamma: f64,
    opt: &mut OptimizerState<S>,
    rng: &mut R,
) -> Result<S> {
    let batch = buffer.sample(rng, batch_size)?;
    train_on_batch(online, target_net, &batch, gamma, opt)
}

/// Learning step over an explicit batch of transitions.
pub fn train_on_batch<S: Scalar>(
    online: &mut QNetwork<S>,
    target_net: &QNetwork<S>,
    batch: &[&Transition<S>],
    gamma: f64,
    opt: &mut OptimizerState<S>,
) -> Result<S> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let targets = bellman_targets(batch, target_net, gamma)?;

    let states: Vec<&Tensor<S>> = batch.iter().map(|t| &t.state).collect();
    let q = online.forward_batch(&Tensor::stack(&states)?)?;

    let actions = online.action_count();
    let classes = online.classes();
    let inv_n = S::one() / S::from_f64(n as f64);
    let two = S::from_f64(2.0);
    let mut loss = S::zero();
    let mut grad_q = Tensor::zeros(&[n, actions]);
    for (i, (transition, &y)) in batch.iter().zip(targets.iter()).enumerate() {
        let a = transition.action.flat_index(classes);
        let diff = q.at2(i, a) - y;
        loss += diff * diff;
        grad_q.data_mut()[i * actions + a] = two * diff * inv_n;
    }
    loss = loss * inv_n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }

    let grads = online.backward_batch(&grad_q)?;
    opt.adam_step(&mut online.params_mut(), &grads)?;
    Ok(loss)
}

/// Make the target network a bit-exact copy of the online network.
pub fn sync_target<S: Scalar>(online: &QNetwork<S>, target_net: &mut QNetwork<S>) -> Result<()> {
    target_net.assign_from(online)
}
