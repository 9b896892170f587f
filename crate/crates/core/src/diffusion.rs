//! Noise schedule, forward noising, ε-prediction loss and DDPM ancestral
//! sampling. Step indices are 1-based: `t ∈ 1..=T`, with `ᾱ_0 = 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::rng::{self, purpose};
use crate::{Error, Latent, Result};

pub const DEFAULT_STEPS: usize = 200;
/// Linear β endpoints for [`DEFAULT_STEPS`]; `ᾱ_T ≈ 3e-5`.
pub const DEFAULT_BETA_MIN: f64 = 5e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit `β_1..β_T` (nondecreasing, in `(0, 1)`).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("no steps".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidSchedule("betas must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidSchedule("betas must be nondecreasing".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    /// Posterior standard deviation `σ_t` of the ancestral step.
    pub fn sigma(&self, t: usize) -> f64 {
        let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        libm::sqrt(var)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default schedule is valid")
    }
}

/// Linear β from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 steps, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let span = (steps - 1) as f64;
    let betas = (0..steps)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / span)
        .collect();
    NoiseSchedule::from_betas(betas)
}

fn check_same(a: &Latent, b: &Latent) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(a.dims(), b.dims()));
    }
    Ok(())
}

/// `x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · ε`.
pub fn q_sample(x0: &Latent, t: usize, eps: &Latent, sched: &NoiseSchedule) -> Result<Latent> {
    sched.check_step(t)?;
    check_same(x0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    let mut out = x0.clone();
    for (o, &e) in out.data.iter_mut().zip(&eps.data) {
        *o = a * *o + b * e;
    }
    Ok(out)
}

/// Mean squared error between true and predicted noise.
pub fn diffusion_loss(eps: &Latent, eps_hat: &Latent) -> Result<f64> {
    check_same(eps, eps_hat)?;
    Ok(mse(&eps.data, &eps_hat.data))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.len() as f64
}

/// One ancestral step `x_t → x_{t−1}`; `z` is ignored (treated as zero) at `t = 1`.
pub fn ddpm_step(
    x_t: &Latent,
    eps_hat: &Latent,
    t: usize,
    sched: &NoiseSchedule,
    z: Option<&Latent>,
) -> Result<Latent> {
    sched.check_step(t)?;
    check_same(x_t, eps_hat)?;
    let beta = sched.beta(t);
    let inv_sqrt_alpha = 1.0 / libm::sqrt(1.0 - beta);
    let coef = beta / libm::sqrt(1.0 - sched.alpha_bar(t));
    let mut out = x_t.clone();
    for (o, &e) in out.data.iter_mut().zip(&eps_hat.data) {
        *o = inv_sqrt_alpha * (*o - coef * e);
    }
    if t > 1 {
        if let Some(z) = z {
            check_same(x_t, z)?;
            let sigma = sched.sigma(t);
            for (o, &n) in out.data.iter_mut().zip(&z.data) {
                *o += sigma * n;
            }
        }
    }
    Ok(out)
}

/// Anything that predicts noise for a latent at step `t`.
pub trait NoisePredictor {
    fn predict(&mut self, x_t: &Latent, t: usize) -> Result<Latent>;
}

impl<F> NoisePredictor for F
where
    F: FnMut(&Latent, usize) -> Result<Latent>,
{
    fn predict(&mut self, x_t: &Latent, t: usize) -> Result<Latent> {
        self(x_t, t)
    }
}

/// Runs the full reverse chain from `x_T ~ N(0, I)`. Deterministic in `seed`.
pub fn sample<P: NoisePredictor + ?Sized>(
    predictor: &mut P,
    shape: (usize, usize, usize, usize),
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Latent> {
    let mut r = rng::stream(rng::derive(seed, purpose::SAMPLE, 0));
    let (f, h, w, c) = shape;
    let mut x = Latent::zeros(f, h, w, c);
    rng::fill_normal(&mut r, &mut x.data, 1.0);
    let mut z = Latent::zeros(f, h, w, c);
    for t in (1..=sched.steps()).rev() {
        let eps = predictor.predict(&x, t)?;
        if t > 1 {
            rng::fill_normal(&mut r, &mut z.data, 1.0);
            x = ddpm_step(&x, &eps, t, sched, Some(&z))?;
        } else {
            x = ddpm_step(&x, &eps, t, sched, None)?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn latent_from(data: Vec<f64>) -> Latent {
        Latent {
            frames: 1,
            height: 1,
            width: data.len(),
            channels: 1,
            data,
        }
    }

    fn random_latent(seed: u64, n: usize) -> Latent {
        latent_from(rng::normal_vec(&mut rng::stream(seed), n))
    }

    #[test]
    fn hand_arithmetic_two_steps() {
        let s = make_schedule(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.25]);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.0, 0.02).is_err());
        assert!(make_schedule(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn cumulative_product_oracle() {
        // Oracle: product of (1 - beta_i) in log space with the betas
        // regenerated independently from the closed-form endpoints.
        for (steps, lo, hi) in [(200, 1e-4, 0.02), (200, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)] {
            let s = make_schedule(steps, lo, hi).unwrap();
            let log_sum: f64 = (1..=steps)
                .map(|i| {
                    let b = lo + (hi - lo) * (i - 1) as f64 / (steps - 1) as f64;
                    (1.0 - b).ln()
                })
                .sum();
            let want = log_sum.exp();
            assert!((s.alpha_bar(steps) - want).abs() <= 1e-10 * want);
        }
        // The classic [1e-4, 0.02] range stops short of pure noise at T = 200.
        let classic = make_schedule(200, 1e-4, 0.02).unwrap();
        assert!((classic.alpha_bar(200) - 0.1322).abs() < 1e-3);
        let d = NoiseSchedule::default();
        assert!(d.alpha_bar(200) < 0.01);
        assert!(d.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn q_sample_limits() {
        let s = NoiseSchedule::default();
        let x0 = random_latent(1, 32);
        let eps = random_latent(2, 32);
        let zero = Latent::zeros_like(&x0);
        let t = 57;
        let a = q_sample(&x0, t, &zero, &s).unwrap();
        let b = q_sample(&zero, t, &eps, &s).unwrap();
        for i in 0..32 {
            assert_eq!(a.data[i], s.alpha_bar(t).sqrt() * x0.data[i]);
            assert_eq!(b.data[i], (1.0 - s.alpha_bar(t)).sqrt() * eps.data[i]);
        }
        assert!(q_sample(&x0, 0, &eps, &s).is_err());
        assert!(q_sample(&x0, 201, &eps, &s).is_err());
    }

    #[test]
    fn q_sample_variance_is_preserved() {
        let s = NoiseSchedule::default();
        let n = 10_000;
        for t in [1, 50, 120, 200] {
            let x0 = random_latent(10 + t as u64, n);
            let eps = random_latent(1000 + t as u64, n);
            let xt = q_sample(&x0, t, &eps, &s).unwrap();
            let mean = xt.data.iter().sum::<f64>() / n as f64;
            let var = xt.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            // Standard error of the sample variance of a unit Gaussian.
            let se = (2.0 / (n - 1) as f64).sqrt();
            assert!((var - 1.0).abs() < 3.0 * se, "t={t} var={var}");
        }
    }

    #[test]
    fn loss_values() {
        let eps = random_latent(3, 50);
        assert_eq!(diffusion_loss(&eps, &eps).unwrap(), 0.0);
        let mut plus = eps.clone();
        plus.data.iter_mut().for_each(|v| *v += 1.0);
        assert!((diffusion_loss(&eps, &plus).unwrap() - 1.0).abs() < 1e-12);

        let other = random_latent(4, 50);
        let mut naive = 0.0;
        for i in 0..50 {
            let d = eps.data[i] - other.data[i];
            naive += d * d;
        }
        naive /= 50.0;
        let got = diffusion_loss(&eps, &other).unwrap();
        assert!((got - naive).abs() <= 1e-12 * naive);
        assert!(diffusion_loss(&eps, &random_latent(5, 49)).is_err());
    }

    #[test]
    fn single_step_inversion() {
        let s = NoiseSchedule::from_betas(vec![0.3]).unwrap();
        let x0 = random_latent(6, 40);
        let eps = random_latent(7, 40);
        let x1 = q_sample(&x0, 1, &eps, &s).unwrap();
        let junk = random_latent(8, 40);
        let back = ddpm_step(&x1, &eps, 1, &s, Some(&junk)).unwrap();
        for i in 0..40 {
            assert!((back.data[i] - x0.data[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_beta_step_is_near_identity() {
        let s = NoiseSchedule::from_betas(vec![1e-8, 1e-8]).unwrap();
        let x = random_latent(9, 20);
        let z = random_latent(10, 20);
        let zero = Latent::zeros_like(&x);
        let next = ddpm_step(&x, &zero, 2, &s, Some(&z)).unwrap();
        let sigma = s.sigma(2);
        assert!(sigma < 1e-4);
        for i in 0..20 {
            assert!((next.data[i] - x.data[i]).abs() <= sigma * z.data[i].abs() + 1e-7);
        }
    }

    #[test]
    fn planted_noise_inversion_and_determinism() {
        let s = make_schedule(50, 1e-3, 0.2).unwrap();
        let x0 = random_latent(11, 24);
        let mut oracle = |x: &Latent, t: usize| -> Result<Latent> {
            let ab = s.alpha_bar(t);
            let mut e = x.clone();
            for (o, &v) in e.data.iter_mut().zip(&x0.data) {
                *o = (*o - ab.sqrt() * v) / (1.0 - ab).sqrt();
            }
            Ok(e)
        };
        let out = sample(&mut oracle, (1, 1, 24, 1), &s, 5).unwrap();
        for i in 0..24 {
            assert!((out.data[i] - x0.data[i]).abs() < 1e-6);
        }
        let mut dumb = |x: &Latent, _t: usize| -> Result<Latent> {
            let mut e = x.clone();
            e.data.iter_mut().for_each(|v| *v *= 0.5);
            Ok(e)
        };
        let a = sample(&mut dumb, (1, 2, 3, 4), &s, 9).unwrap();
        let b = sample(&mut dumb, (1, 2, 3, 4), &s, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), (1, 2, 3, 4));
    }
}
