//! Equidistant time grid.

/// Partition of [0, T] into `n_steps` equal steps of width h = T / N.
///
/// The grid is stored as (T, N); grid times are derived as n * h, so the
/// stored representation is equidistant by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Self {
        assert!(horizon > 0.0, "horizon must be positive");
        assert!(n_steps >= 1, "need at least one step");
        TimeGrid { horizon, n_steps }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn h(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// t_n = n * h, with t_N pinned to T exactly.
    pub fn t(&self, n: usize) -> f64 {
        debug_assert!(n <= self.n_steps);
        if n == self.n_steps {
            self.horizon
        } else {
            n as f64 * self.h()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_times_are_equidistant_multiples() {
        let g = TimeGrid::new(1.0, 20);
        assert_eq!(g.h(), 0.05);
        for n in 0..=20 {
            assert_eq!(g.t(n), n as f64 * 0.05);
        }
        assert_eq!(g.t(20), 1.0);
    }

    #[test]
    #[should_panic(expected = "at least one step")]
    fn zero_steps_rejected() {
        TimeGrid::new(1.0, 0);
    }
}
