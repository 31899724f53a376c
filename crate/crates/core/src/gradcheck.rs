//! Central finite-difference checks of the full training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, SteMode, Tensor};
use crate::error::Result;
use crate::nn::{Arch, Group, ModelBundle};
use crate::objectives::{total_objective_on, Batch, Lambdas, ObjectiveOptions, StepNoise};

/// Entries where both gradients are below this in magnitude are compared
/// absolutely; at step 1e-5 the central-difference rounding noise on an
/// objective of order 10 is around 1e-10.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry, with its analytic
    /// and numeric values.
    pub worst: (String, usize),
    pub worst_values: (f64, f64),
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub bundle: ModelBundle,
    pub batch: Batch,
    pub noise: StepNoise,
    pub lambdas: Lambdas,
    pub opts: ObjectiveOptions,
}

impl ToyProblem {
    /// `b` paired rows of `d`-dimensional inputs, `l`-bit codes, small widths.
    pub fn new(seed: u64, b: usize, d: usize, l: usize, opts: ObjectiveOptions) -> Result<Self> {
        let arch = Arch::new(d, d, l).with_widths(12, 10);
        let mut bundle = ModelBundle::new(arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // Zero biases put every all-zero code row exactly on a ReLU kink.
        for idx in 0..bundle.params.len() {
            if bundle.params.get(idx).name.ends_with(".bias") {
                for v in bundle.params.get_mut(idx).value.data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
        }
        let mut rand_t =
            |r: usize, c: usize| Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect());
        let batch = Batch {
            x_i: rand_t(b, d)?,
            x_t: rand_t(b, d)?,
        };
        let mut n1 = ChaCha8Rng::seed_from_u64(seed ^ 0xa11ce);
        let mut n2 = ChaCha8Rng::seed_from_u64(seed ^ 0xb0b);
        let noise = StepNoise::draw(&mut n1, &mut n2, b, l, opts.critic_input.samples_needed())?;
        Ok(ToyProblem {
            bundle,
            batch,
            noise,
            lambdas: Lambdas::default(),
            opts,
        })
    }

    fn eval(&self, bundle: &ModelBundle, ste: SteMode) -> Result<f64> {
        let mut g = Graph::with_ste_mode(ste);
        let (b, _) = total_objective_on(&mut g, bundle, &self.batch, &self.lambdas, &self.noise, &self.opts, &[])?;
        Ok(b.total)
    }

    /// Compares the analytic gradient of the total objective for every
    /// parameter scalar against central differences with step `h`.
    ///
    /// Straight-through thresholds are frozen at their base-point offsets,
    /// so the function being differenced has exactly the STE derivative.
    pub fn check(&self, h: f64) -> Result<GradCheckReport> {
        let mut g = Graph::with_ste_mode(SteMode::Record(Vec::new()));
        let (_, grads) = total_objective_on(
            &mut g,
            &self.bundle,
            &self.batch,
            &self.lambdas,
            &self.noise,
            &self.opts,
            &Group::ALL,
        )?;
        let offsets = g.take_ste_offsets();
        let replay = || SteMode::Replay {
            offsets: offsets.clone(),
            next: 0,
        };

        let mut work = self.bundle.clone();
        let mut report = GradCheckReport {
            checked: 0,
            max_rel_err: 0.0,
            worst: (String::new(), 0),
            worst_values: (0.0, 0.0),
        };
        for (idx, grad) in &grads {
            for k in 0..grad.len() {
                let orig = work.params.get(*idx).value.data()[k];
                work.params.get_mut(*idx).value.data_mut()[k] = orig + h;
                let up = self.eval(&work, replay())?;
                work.params.get_mut(*idx).value.data_mut()[k] = orig - h;
                let down = self.eval(&work, replay())?;
                work.params.get_mut(*idx).value.data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let e = rel_err(grad.data()[k], numeric);
                report.checked += 1;
                if e > report.max_rel_err {
                    report.max_rel_err = e;
                    report.worst = (work.params.get(*idx).name.clone(), k);
                    report.worst_values = (grad.data()[k], numeric);
                }
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{CriticInput, NegativeMode};

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        let toy = ToyProblem::new(7, 5, 8, 4, ObjectiveOptions::default()).unwrap();
        let r = toy.check(1e-5).unwrap();
        assert_eq!(r.checked, toy.bundle.params.scalar_count());
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn sampled_critic_and_cyclic_negatives_gradient() {
        let opts = ObjectiveOptions {
            critic_input: CriticInput::Samples(2),
            negative_mode: NegativeMode::CyclicShift,
        };
        let toy = ToyProblem::new(11, 5, 8, 4, opts).unwrap();
        let r = toy.check(1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
