use crate::error::{Error, Result};

/// Linear epsilon annealing for the epsilon-greedy decision maker: from
/// `start` down to `end` over `anneal_steps`, clamped at `end` afterwards.
#[derive(Debug, Clone)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: usize,
    /// Current training step, advanced by the training loop.
    pub step: usize,
}

impl EpsilonSchedule {
    /// The default exploration schedule: 1.0 annealed down to 0.1.
    pub fn new(anneal_steps: usize) -> Result<EpsilonSchedule> {
        EpsilonSchedule::with_range(1.0, 0.1, anneal_steps)
    }

    pub fn with_range(start: f64, end: f64, anneal_steps: usize) -> Result<EpsilonSchedule> {
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || end > start {
            return Err(Error::Config(format!(
                "epsilon schedule needs 0 <= end <= start <= 1, got start={start} end={end}"
            )));
        }
        if anneal_steps == 0 {
            return Err(Error::Config("anneal_steps must be positive".into()));
        }
        Ok(EpsilonSchedule {
            start,
            end,
            anneal_steps,
            step: 0,
        })
    }

    /// Epsilon at an arbitrary step.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        if step >= self.anneal_steps {
            self.end
        } else {
            self.start + (self.end - self.start) * step as f64 / self.anneal_steps as f64
        }
    }

    /// Epsilon at the internal step counter.
    pub fn current(&self) -> f64 {
        self.epsilon_at(self.step)
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let sched = EpsilonSchedule::new(1000).unwrap();
        assert_eq!(sched.epsilon_at(0), 1.0);
        assert_eq!(sched.epsilon_at(1000), 0.1);
        assert_eq!(sched.epsilon_at(5000), 0.1);
        assert!((sched.epsilon_at(500) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn monotone_non_increasing() {
        let sched = EpsilonSchedule::new(137).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..300 {
            let eps = sched.epsilon_at(step);
            assert!(eps <= prev);
            prev = eps;
        }
    }

    #[test]
    fn advance_tracks_steps() {
        let mut sched = EpsilonSchedule::new(10).unwrap();
        for _ in 0..5 {
            sched.advance();
        }
        assert_eq!(sched.step, 5);
        assert!((sched.current() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(EpsilonSchedule::with_range(0.1, 1.0, 10).is_err());
        assert!(EpsilonSchedule::with_range(1.5, 0.1, 10).is_err());
        assert!(EpsilonSchedule::with_range(1.0, 0.1, 0).is_err());
    }
}
