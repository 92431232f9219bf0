//! Forward diffusion of phoneme-distribution sequences and the adaptive
//! horizon controller.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input_err, Error, Result};
use crate::numerics::Array2;

/// Schedule and controller constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub beta_0: f64,
    pub beta_t: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub d_target: f64,
    /// Controller step `C = B * a_i / a_k`.
    pub c_step: f64,
}

impl DiffusionConfig {
    /// Controller step size derived from batch size and the two intervals.
    pub fn c_step_from(batch: usize, a_i: usize, a_k: usize) -> f64 {
        batch as f64 * a_i as f64 / a_k as f64
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            beta_0: 1e-4,
            beta_t: 1e-2,
            t_min: 5,
            t_max: 100,
            d_target: 0.6,
            c_step: Self::c_step_from(64, 4, 100),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    /// `beta[t]` for `t in 1..=t_max`; index 0 is unused and holds 0.
    beta: Vec<f64>,
    /// `alpha_bar[t]` for `t in 0..=t_max`, `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
    t_live: f64,
    t_min: usize,
    t_max: usize,
    d_target: f64,
    c_step: f64,
}

/// Linear betas from `beta_0` at `t = 1` to `beta_T` at `t = T_max`; the
/// live horizon starts at `T_min`.
pub fn make_schedule(cfg: &DiffusionConfig) -> Result<DiffusionSchedule> {
    if !(cfg.beta_0 > 0.0 && cfg.beta_0 < cfg.beta_t && cfg.beta_t < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_0 ({}) < beta_T ({}) < 1",
            cfg.beta_0, cfg.beta_t
        )));
    }
    if cfg.t_max == 0 || cfg.t_min > cfg.t_max {
        return Err(Error::Config(format!(
            "need T_min ({}) <= T_max ({}) and T_max >= 1",
            cfg.t_min, cfg.t_max
        )));
    }
    if !cfg.c_step.is_finite() || cfg.c_step < 0.0 {
        return Err(Error::Config(format!(
            "controller step {} must be >= 0",
            cfg.c_step
        )));
    }
    let mut beta = vec![0.0; cfg.t_max + 1];
    let mut alpha_bar = vec![1.0; cfg.t_max + 1];
    for t in 1..=cfg.t_max {
        beta[t] = if cfg.t_max == 1 {
            cfg.beta_0
        } else {
            cfg.beta_0 + (cfg.beta_t - cfg.beta_0) * (t - 1) as f64 / (cfg.t_max - 1) as f64
        };
        alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
    }
    Ok(DiffusionSchedule {
        beta,
        alpha_bar,
        t_live: cfg.t_min as f64,
        t_min: cfg.t_min,
        t_max: cfg.t_max,
        d_target: cfg.d_target,
        c_step: cfg.c_step,
    })
}

impl DiffusionSchedule {
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn t_live(&self) -> f64 {
        self.t_live
    }

    /// Usable horizon `floor(T_live)`.
    pub fn horizon(&self) -> usize {
        self.t_live.floor() as usize
    }

    pub fn t_min(&self) -> usize {
        self.t_min
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn set_t_live(&mut self, t: f64) {
        self.t_live = t.clamp(self.t_min as f64, self.t_max as f64);
    }

    /// `T_live += sign(r_d - d_target) * C`, clamped to `[T_min, T_max]`.
    pub fn update_t(&mut self, r_d: f64) {
        let s = sign(r_d - self.d_target);
        self.set_t_live(self.t_live + s * self.c_step);
    }

    /// `y = sqrt(abar_t) x + sqrt(1 - abar_t) eps`. `t = 0` returns `x`
    /// unchanged without touching `rng`.
    pub fn diffuse<R: Rng>(&self, x: &Array2, t: usize, rng: &mut R) -> Result<Array2> {
        if t > self.horizon() {
            return input_err(format!(
                "timestep {t} beyond live horizon {}",
                self.horizon()
            ));
        }
        Ok(self.diffuse_with_noise(x, t, rng)?.0)
    }

    /// Same as [`DiffusionSchedule::diffuse`], also returning the coefficients
    /// `(sqrt(abar_t), noise)` so the map can be replayed on a tape.
    pub fn diffuse_with_noise<R: Rng>(
        &self,
        x: &Array2,
        t: usize,
        rng: &mut R,
    ) -> Result<(Array2, f64, Array2)> {
        if t > self.t_max {
            return input_err(format!("timestep {t} beyond T_max {}", self.t_max));
        }
        let (r, c) = x.shape();
        if t == 0 {
            return Ok((x.clone(), 1.0, Array2::zeros(r, c)));
        }
        let a = self.alpha_bar[t];
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let noise: Vec<f64> = (0..r * c)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                sn * e
            })
            .collect();
        let noise = Array2::from_vec(r, c, noise)?;
        let y = x.zip_map(&noise, |xv, nv| sa * xv + nv);
        Ok((y, sa, noise))
    }

    /// `n` i.i.d. uniform draws from `{0, ..., floor(T_live)}`.
    pub fn sample_t<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let h = self.horizon();
        (0..n)
            .map(|_| if h == 0 { 0 } else { rng.random_range(0..=h) })
            .collect()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean(sign(output - 0.5))` over discriminator outputs on diffused real samples.
pub fn estimate_rd(outputs: &[f64]) -> Result<f64> {
    if outputs.is_empty() {
        return input_err("r_d needs at least one discriminator output");
    }
    Ok(outputs.iter().map(|&o| sign(o - 0.5)).sum::<f64>() / outputs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn paper_endpoints_and_empty_product() {
        let s = make_schedule(&DiffusionConfig::default()).unwrap();
        assert!((s.beta(1) - 1e-4).abs() < 1e-18);
        assert!((s.beta(100) - 1e-2).abs() < 1e-16);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert_eq!(s.t_live(), 5.0);
        for w in s.betas().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn five_step_schedule_matches_product_oracle() {
        let cfg = DiffusionConfig {
            t_max: 5,
            t_min: 1,
            ..Default::default()
        };
        let s = make_schedule(&cfg).unwrap();
        let want = [0.0001, 0.002575, 0.00505, 0.007525, 0.01];
        for (t, w) in want.iter().enumerate() {
            assert!((s.beta(t + 1) - w).abs() < 1e-15);
        }
        let mut prod = 1.0;
        for w in want {
            prod *= 1.0 - w;
        }
        assert!((s.alpha_bar(5) - prod).abs() < 1e-12);
    }

    #[test]
    fn invalid_bounds_are_config_errors() {
        let bad = [
            DiffusionConfig {
                beta_0: 0.0,
                ..Default::default()
            },
            DiffusionConfig {
                beta_0: 0.02,
                ..Default::default()
            },
            DiffusionConfig {
                beta_t: 1.0,
                ..Default::default()
            },
            DiffusionConfig {
                t_min: 101,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(make_schedule(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn t_zero_is_identity_and_out_of_range_rejected() {
        let s = make_schedule(&DiffusionConfig::default()).unwrap();
        let x = Array2::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut rng = stream(1, "d");
        assert_eq!(s.diffuse(&x, 0, &mut rng).unwrap(), x);
        assert!(s.diffuse(&x, 6, &mut rng).is_err());
        let y = s.diffuse(&x, 5, &mut rng).unwrap();
        assert_eq!(y.shape(), x.shape());
        let again = s.diffuse(&x, 5, &mut stream(1, "d")).unwrap();
        assert_ne!(again, x);
    }

    #[test]
    fn sample_t_support() {
        let mut s = make_schedule(&DiffusionConfig::default()).unwrap();
        let mut rng = stream(2, "t");
        assert!(s.sample_t(500, &mut rng).iter().all(|&t| t <= 5));
        let cfg0 = DiffusionConfig {
            t_min: 0,
            ..Default::default()
        };
        let z = make_schedule(&cfg0).unwrap();
        assert!(z.sample_t(100, &mut rng).iter().all(|&t| t == 0));
        s.set_t_live(5.9);
        assert_eq!(s.horizon(), 5);
    }

    #[test]
    fn sample_t_is_uniform() {
        let s = make_schedule(&DiffusionConfig::default()).unwrap();
        let draws = s.sample_t(60_000, &mut stream(3, "t"));
        let mut counts = [0usize; 6];
        for t in draws {
            counts[t] += 1;
        }
        let p = 1.0 / 6.0;
        let sigma = (60_000.0f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - 60_000.0 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn rd_examples() {
        assert_eq!(estimate_rd(&[0.7, 0.3]).unwrap(), 0.0);
        assert_eq!(estimate_rd(&[0.9, 0.51, 0.6]).unwrap(), 1.0);
        assert_eq!(estimate_rd(&[0.6, 0.6, 0.4, 0.5]).unwrap(), 0.25);
        assert!(estimate_rd(&[]).is_err());
    }

    #[test]
    fn controller_steps() {
        let mut s = make_schedule(&DiffusionConfig::default()).unwrap();
        s.update_t(0.8);
        assert!((s.t_live() - 7.56).abs() < 1e-12);
        s.update_t(0.6);
        assert!((s.t_live() - 7.56).abs() < 1e-12);
        s.update_t(-1.0);
        s.update_t(-1.0);
        assert_eq!(s.t_live(), 5.0);
    }

    #[test]
    fn controller_reaches_t_max_in_38_updates() {
        let mut s = make_schedule(&DiffusionConfig::default()).unwrap();
        let mut events = 0;
        while s.t_live() < 100.0 {
            s.update_t(1.0);
            events += 1;
        }
        assert_eq!(events, 38);
    }
}
