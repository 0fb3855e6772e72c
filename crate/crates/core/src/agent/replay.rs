use std::collections::VecDeque;

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One learning record. The stored images are the *current* images of the
/// originating states, which is exactly what the Q-network consumes.
#[derive(Debug, Clone)]
pub struct Transition<S: Scalar> {
    pub state: Tensor<S>,
    pub action: Action,
    pub reward: S,
    pub next_state: Tensor<S>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer of transitions with uniform sampling. The
/// oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S: Scalar> {
    items: VecDeque<Transition<S>>,
    capacity: usize,
}

impl<S: Scalar> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> ReplayBuffer<S> {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, transition: Transition<S>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(transition);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        &self.items[i]
    }

    /// Uniform sample (with replacement) of `batch_size` transitions.
    pub fn sample<R: Rng>(&self, rng: &mut R, batch_size: usize) -> Result<Vec<&Transition<S>>> {
        if self.items.len() < batch_size {
            return Err(Error::InvalidArgument(format!(
                "replay buffer holds {} transitions, need {batch_size}",
                self.items.len()
            )));
        }
        Ok((0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: f32) -> Transition<f32> {
        Transition {
            state: Tensor::filled(&[2, 2, 1], tag),
            action: Action::Stop(0),
            reward: tag,
            next_state: Tensor::filled(&[2, 2, 1], tag),
            terminal: true,
        }
    }

    #[test]
    fn capacity_is_never_exceeded_and_oldest_evicted() {
        let capacity = 8;
        let extra = 5;
        let mut buffer: ReplayBuffer<f32> = ReplayBuffer::new(capacity);
        for i in 0..capacity + extra {
            buffer.push(transition(i as f32));
            assert!(buffer.len() <= capacity);
        }
        assert_eq!(buffer.len(), capacity);
        let rewards: Vec<f32> = (0..buffer.len()).map(|i| buffer.get(i).reward).collect();
        // The first `extra` transitions are gone.
        assert_eq!(rewards[0], extra as f32);
        assert_eq!(*rewards.last().unwrap(), (capacity + extra - 1) as f32);
    }

    #[test]
    fn sampling_requires_enough_transitions() {
        let mut buffer: ReplayBuffer<f32> = ReplayBuffer::new(8);
        buffer.push(transition(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buffer.sample(&mut rng, 2).is_err());
        buffer.push(transition(1.0));
        assert_eq!(buffer.sample(&mut rng, 2).unwrap().len(), 2);
    }

    #[test]
    fn sampling_is_roughly_uniform() {
        let mut buffer: ReplayBuffer<f32> = ReplayBuffer::new(16);
        for i in 0..16 {
            buffer.push(transition(i as f32));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 16_000;
        let mut counts = [0usize; 16];
        for _ in 0..draws / 16 {
            for t in buffer.sample(&mut rng, 16).unwrap() {
                counts[t.reward as usize] += 1;
            }
        }
        let p = 1.0 / 16.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &c in &counts {
            assert!((c as f64 - draws as f64 * p).abs() < 4.0 * sigma);
        }
    }
}
