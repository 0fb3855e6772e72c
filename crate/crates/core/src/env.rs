//! The preprocessing MDP: transformation actions mutate the image state and
//! pay zero reward; stop actions terminate the episode with a terminal reward
//! that depends on whether the predicted class matches the label. A
//! transformation requested at the chain cap recovers the original image
//! instead (training only; the test-time policy forces a stop there).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transforms::{apply_chain, TransformChain, TransformSet};

/// Terminal reward scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardMode {
    /// k-1 for a correct stop, -1 otherwise; random guessing is
    /// reward-neutral for every class count.
    Balanced,
    /// +1 for a correct stop, -1 otherwise.
    Simple,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Balanced => "balanced",
            RewardMode::Simple => "simple",
        }
    }

    pub fn parse(s: &str) -> Result<RewardMode> {
        match s {
            "balanced" => Ok(RewardMode::Balanced),
            "simple" => Ok(RewardMode::Simple),
            _ => Err(Error::Config(format!(
                "unknown reward mode {s:?} (expected balanced|simple)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    /// Class count k.
    pub classes: usize,
    /// Hard cap on chain length.
    pub max_len: usize,
    pub reward_mode: RewardMode,
}

impl EnvConfig {
    pub fn new(classes: usize, max_len: usize, reward_mode: RewardMode) -> Result<EnvConfig> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "environment needs at least 2 classes, got {classes}"
            )));
        }
        if max_len < 1 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(EnvConfig {
            classes,
            max_len,
            reward_mode,
        })
    }

    /// Terminal reward for stopping with `predicted` on a `label` state.
    pub fn stop_reward<S: Scalar>(&self, predicted: usize, label: usize) -> S {
        let correct = predicted == label;
        match self.reward_mode {
            RewardMode::Balanced => {
                if correct {
                    S::from_f64((self.classes - 1) as f64)
                } else {
                    -S::one()
                }
            }
            RewardMode::Simple => {
                if correct {
                    S::one()
                } else {
                    -S::one()
                }
            }
        }
    }
}

/// An episode state: the original image, the chain applied so far, and the
/// current image (always `apply_chain(original, chain)`).
#[derive(Debug, Clone)]
pub struct State<S: Scalar> {
    original: Tensor<S>,
    chain: TransformChain,
    current: Tensor<S>,
    label: usize,
}

impl<S: Scalar> State<S> {
    pub fn original(&self) -> &Tensor<S> {
        &self.original
    }

    pub fn chain(&self) -> &TransformChain {
        &self.chain
    }

    pub fn current(&self) -> &Tensor<S> {
        &self.current
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

/// An action in the hybrid space of k stop actions and n transform actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    /// Terminate and predict class `i`.
    Stop(usize),
    /// Apply transform `j` of the active set and continue.
    Transform(usize),
}

impl Action {
    /// Flat index in `[0, k + n)`: stop actions first, then transforms.
    pub fn flat_index(self, classes: usize) -> usize {
        match self {
            Action::Stop(i) => i,
            Action::Transform(j) => classes + j,
        }
    }

    pub fn from_flat_index(idx: usize, classes: usize, transforms: usize) -> Result<Action> {
        if idx < classes {
            Ok(Action::Stop(idx))
        } else if idx < classes + transforms {
            Ok(Action::Transform(idx - classes))
        } else {
            Err(Error::InvalidAction(format!(
                "flat index {idx} out of range for {classes} stop + {transforms} transform actions"
            )))
        }
    }

    pub fn label(self, set: &TransformSet) -> String {
        match self {
            Action::Stop(i) => format!("stop({i})"),
            Action::Transform(j) => set
                .get(j)
                .map(|t| t.label())
                .unwrap_or_else(|_| format!("transform({j})")),
        }
    }
}

/// One environment step outcome.
#[derive(Debug, Clone)]
pub struct StepResult<S: Scalar> {
    pub next_state: State<S>,
    pub reward: S,
    pub terminal: bool,
    /// True when the chain cap recovery fired.
    pub recovered: bool,
    /// Set on stop actions.
    pub predicted_class: Option<usize>,
}

/// The environment: applies transformations and computes rewards.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    set: TransformSet,
}

impl Environment {
    pub fn new(cfg: EnvConfig, set: TransformSet) -> Environment {
        Environment { cfg, set }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn transform_set(&self) -> &TransformSet {
        &self.set
    }

    /// Total action count k + n.
    pub fn action_count(&self) -> usize {
        self.cfg.classes + self.set.len()
    }

    /// Start an episode: empty chain, current image equals the original.
    pub fn reset<S: Scalar>(&self, image: &Tensor<S>, label: usize) -> Result<State<S>> {
        if image.rank() != 3 {
            return Err(Error::ShapeMismatch {
                context: "environment reset image (expected H x W x C)".into(),
                expected: vec![0, 0, 0],
                got: image.shape().to_vec(),
            });
        }
        if label >= self.cfg.classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.cfg.classes
            )));
        }
        Ok(State {
            original: image.clone(),
            chain: TransformChain::new(self.cfg.max_len),
            current: image.clone(),
            label,
        })
    }

    /// Apply one action to a state.
    ///
    /// Transform actions extend the chain and pay zero reward; at the chain
    /// cap they instead recover the original image (still zero reward,
    /// non-terminal). Stop actions terminate with the configured terminal
    /// reward.
    pub fn step<S: Scalar>(&self, state: &State<S>, action: Action) -> Result<StepResult<S>> {
        match action {
            Action::Stop(i) => {
                if i >= self.cfg.classes {
                    return Err(Error::InvalidAction(format!(
                        "stop class {i} out of range for {} classes",
                        self.cfg.classes
                    )));
                }
                Ok(StepResult {
                    next_state: state.clone(),
                    reward: self.cfg.stop_reward(i, state.label),
                    terminal: true,
                    recovered: false,
                    predicted_class: Some(i),
                })
            }
            Action::Transform(j) => {
                let transform = self.set.get(j)?;
                if state.chain.len() < self.cfg.max_len {
                    let mut chain = state.chain.clone();
                    chain.push(transform)?;
                    let current = apply_chain(&state.original, &chain)?;
                    Ok(StepResult {
                        next_state: State {
                            original: state.original.clone(),
                            chain,
                            current,
                            label: state.label,
                        },
                        reward: S::zero(),
                        terminal: false,
                        recovered: false,
                        predicted_class: None,
                    })
                } else {
                    // Chain cap reached: recover the original image and let
                    // the agent seek another chain.
                    Ok(StepResult {
                        next_state: State {
                            original: state.original.clone(),
                            chain: TransformChain::new(self.cfg.max_len),
                            current: state.original.clone(),
                            label: state.label,
                        },
                        reward: S::zero(),
                        terminal: false,
                        recovered: true,
                        predicted_class: None,
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Transform;

    fn env(classes: usize, max_len: usize, mode: RewardMode) -> Environment {
        Environment::new(
            EnvConfig::new(classes, max_len, mode).unwrap(),
            TransformSet::standard(),
        )
    }

    fn image() -> Tensor<f32> {
        Tensor::from_vec(&[4, 4, 1], (0..16).map(|i| i as f32 / 16.0).collect()).unwrap()
    }

    #[test]
    fn reset_produces_empty_chain_and_copies_image() {
        let env = env(10, 10, RewardMode::Balanced);
        let img = image();
        let state = env.reset(&img, 3).unwrap();
        assert_eq!(state.chain().len(), 0);
        assert!(state.current().bit_eq(&img));
        let again = env.reset(&img, 3).unwrap();
        assert!(again.current().bit_eq(state.current()));
        assert_eq!(again.label(), state.label());
    }

    #[test]
    fn transform_steps_extend_chain_with_zero_reward() {
        let env = env(10, 10, RewardMode::Balanced);
        let mut state = env.reset(&image(), 1).unwrap();
        let j = env.transform_set().index_of(Transform::FlipH).unwrap();
        for expected_len in 1..=3 {
            let result = env.step(&state, Action::Transform(j)).unwrap();
            assert_eq!(result.reward, 0.0);
            assert!(!result.terminal);
            assert!(!result.recovered);
            assert_eq!(result.next_state.chain().len(), expected_len);
            state = result.next_state;
        }
    }

    #[test]
    fn recovery_at_cap_restores_the_original_bit_exactly() {
        let env = env(4, 3, RewardMode::Balanced);
        let img = image();
        let mut state = env.reset(&img, 0).unwrap();
        for _ in 0..3 {
            state = env.step(&state, Action::Transform(5)).unwrap().next_state;
        }
        assert_eq!(state.chain().len(), 3);
        let result = env.step(&state, Action::Transform(0)).unwrap();
        assert!(result.recovered);
        assert!(!result.terminal);
        assert_eq!(result.reward, 0.0);
        assert_eq!(result.next_state.chain().len(), 0);
        assert!(result.next_state.current().bit_eq(&img));
        // Recovered state equals a fresh reset.
        let fresh = env.reset(&img, 0).unwrap();
        assert!(result.next_state.current().bit_eq(fresh.current()));
    }

    #[test]
    fn balanced_stop_rewards_are_k_minus_one_and_minus_one() {
        let env = env(10, 10, RewardMode::Balanced);
        let state = env.reset(&image(), 7).unwrap();
        let correct = env.step(&state, Action::Stop(7)).unwrap();
        assert_eq!(correct.reward, 9.0);
        assert!(correct.terminal);
        assert_eq!(correct.predicted_class, Some(7));
        let wrong = env.step(&state, Action::Stop(2)).unwrap();
        assert_eq!(wrong.reward, -1.0);
        assert!(wrong.terminal);
    }

    #[test]
    fn simple_stop_rewards_are_plus_minus_one() {
        let env = env(10, 10, RewardMode::Simple);
        let state = env.reset(&image(), 7).unwrap();
        assert_eq!(env.step(&state, Action::Stop(7)).unwrap().reward, 1.0);
        assert_eq!(env.step(&state, Action::Stop(0)).unwrap().reward, -1.0);
    }

    #[test]
    fn invalid_actions_rejected() {
        let env = env(4, 10, RewardMode::Balanced);
        let state = env.reset(&image(), 0).unwrap();
        assert!(env.step(&state, Action::Stop(4)).is_err());
        assert!(env.step(&state, Action::Transform(11)).is_err());
    }

    #[test]
    fn config_bounds_validated() {
        assert!(EnvConfig::new(1, 10, RewardMode::Balanced).is_err());
        assert!(EnvConfig::new(2, 0, RewardMode::Balanced).is_err());
        assert!(EnvConfig::new(2, 1, RewardMode::Balanced).is_ok());
    }

    #[test]
    fn action_flat_index_round_trips() {
        let k = 4;
        let n = 11;
        for idx in 0..k + n {
            let action = Action::from_flat_index(idx, k, n).unwrap();
            assert_eq!(action.flat_index(k), idx);
        }
        assert!(Action::from_flat_index(k + n, k, n).is_err());
    }
}
