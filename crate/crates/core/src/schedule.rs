//! Cubic remaining-fraction schedule with warm-up and final fine-tuning.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneSchedule {
    total_steps: usize,
    warmup_steps: usize,
    final_steps: usize,
    final_fraction: f64,
    literal: bool,
}

impl PruneSchedule {
    /// `final_fraction` may be 0, which prunes everything by the final phase.
    pub fn new(total_steps: usize, warmup_steps: usize, final_steps: usize, final_fraction: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if warmup_steps + final_steps >= total_steps {
            return Err(Error::Config(format!(
                "warmup_steps + final_steps = {} must be below total_steps = {total_steps}",
                warmup_steps + final_steps
            )));
        }
        if !(0.0..=1.0).contains(&final_fraction) {
            return Err(Error::Range {
                what: "final_fraction",
                value: final_fraction,
                range: "[0, 1]".into(),
            });
        }
        Ok(Self {
            total_steps,
            warmup_steps,
            final_steps,
            final_fraction,
            literal: false,
        })
    }

    /// Switches the middle branch to the `(t − t_i − t_f)` numerator. That
    /// form overshoots 1 right after warm-up and jumps at `T − t_f`; it exists
    /// only for side-by-side comparison.
    pub fn with_literal_formula(mut self, literal: bool) -> Self {
        self.literal = literal;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps
    }

    pub fn final_steps(&self) -> usize {
        self.final_steps
    }

    pub fn final_fraction(&self) -> f64 {
        self.final_fraction
    }

    pub fn is_literal(&self) -> bool {
        self.literal
    }

    /// Fraction of neurons kept at step `t`, for `0 ≤ t ≤ T`.
    pub fn remaining_fraction(&self, t: usize) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::Range {
                what: "step",
                value: t as f64,
                range: format!("[0, {}]", self.total_steps),
            });
        }
        let (ti, tf, total) = (self.warmup_steps, self.final_steps, self.total_steps);
        let p_final = self.final_fraction;
        if t < ti {
            return Ok(1.0);
        }
        if t >= total - tf {
            return Ok(p_final);
        }
        let span = (total - ti - tf) as f64;
        if self.literal {
            let progress = (t as f64 - ti as f64 - tf as f64) / span;
            return Ok(p_final + (1.0 - p_final) * (1.0 - progress).powi(3));
        }
        if t == ti {
            return Ok(1.0);
        }
        let progress = (t - ti) as f64 / span;
        let p = p_final + (1.0 - p_final) * (1.0 - progress).powi(3);
        Ok(p.clamp(p_final, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> PruneSchedule {
        PruneSchedule::new(100, 10, 10, 0.1).unwrap()
    }

    #[test]
    fn phase_values() {
        let s = example();
        assert_eq!(s.remaining_fraction(5).unwrap(), 1.0);
        assert_eq!(s.remaining_fraction(95).unwrap(), 0.1);
        assert!((s.remaining_fraction(50).unwrap() - 0.2125).abs() < 1e-15);
    }

    #[test]
    fn boundaries_are_exact() {
        let s = example();
        assert_eq!(s.remaining_fraction(10).unwrap(), 1.0);
        assert_eq!(s.remaining_fraction(90).unwrap(), 0.1);
        assert_eq!(s.remaining_fraction(100).unwrap(), 0.1);
    }

    #[test]
    fn out_of_range_step() {
        assert!(matches!(example().remaining_fraction(101), Err(Error::Range { .. })));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PruneSchedule::new(10, 5, 5, 0.5).is_err());
        assert!(PruneSchedule::new(0, 0, 0, 0.5).is_err());
        assert!(PruneSchedule::new(10, 1, 1, 1.5).is_err());
    }

    #[test]
    fn literal_formula_overshoots_after_warmup() {
        let s = example().with_literal_formula(true);
        assert!(s.remaining_fraction(10).unwrap() > 1.0);
        assert!(s.remaining_fraction(89).unwrap() > 0.1 + 1e-3);
        assert_eq!(s.remaining_fraction(90).unwrap(), 0.1);
    }

    #[test]
    fn monotone_and_bounded() {
        for p in [0.0, 0.05, 0.1, 0.3333, 0.9, 1.0] {
            let s = PruneSchedule::new(137, 13, 29, p).unwrap();
            let mut prev = f64::INFINITY;
            for t in 0..=137 {
                let v = s.remaining_fraction(t).unwrap();
                assert!(v <= prev && v >= p && v <= 1.0);
                prev = v;
            }
        }
    }
}
