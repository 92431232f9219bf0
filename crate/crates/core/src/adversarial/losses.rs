use rand::Rng;

use super::nets::{GanNets, NetBindings};
use crate::diffusion::DiffusionSchedule;
use crate::error::{input_err, Error, Result};
use crate::numerics::{bce_node, entropy, Array2, Tape, Var};

const LOG_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;

/// Loss weights: `eta` (diversity), `gamma` (smoothness), `lambda` (gradient penalty).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 1.0,
            gamma: 1.5,
            lambda: 1.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} = {v} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// Scalar values of every loss term from one sub-step; terms that the
/// sub-step does not compute stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GanLossTerms {
    pub g_bce: f64,
    pub l_pd: f64,
    pub l_sp: f64,
    pub d_real_bce: f64,
    pub d_fake_bce: f64,
    pub l_gp: f64,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl GanLossTerms {
    pub fn generator_total(&self) -> f64 {
        self.g_bce + self.eta * self.l_pd + self.gamma * self.l_sp
    }

    pub fn discriminator_total(&self) -> f64 {
        self.d_fake_bce + self.d_real_bce + self.lambda * self.l_gp
    }

    pub fn all_finite(&self) -> bool {
        [
            self.g_bce,
            self.l_pd,
            self.l_sp,
            self.d_real_bce,
            self.d_fake_bce,
            self.l_gp,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A loss node together with its recorded terms and the discriminator's
/// outputs on each branch.
pub struct LossGraph {
    pub loss: Var,
    pub terms: GanLossTerms,
    pub fake_outputs: Vec<f64>,
    pub real_outputs: Vec<f64>,
}

/// Generator-turn input.
#[derive(Clone, Copy, Debug)]
pub struct GenSample<'a> {
    pub segments: &'a Array2,
    pub t: usize,
}

/// Discriminator-turn input: segments, a dense pseudo reference, and `t`.
#[derive(Clone, Copy, Debug)]
pub struct DiscSample<'a> {
    pub segments: &'a Array2,
    pub reference: &'a Array2,
    pub t: usize,
}

/// Replays `y = sqrt(abar_t) x + noise` on the tape. `t = 0` is the identity
/// and draws nothing.
pub fn diffuse_node<R: Rng>(
    tape: &mut Tape,
    x: Var,
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Var> {
    if t == 0 {
        return Ok(x);
    }
    let (_, sa, noise) = schedule.diffuse_with_noise(tape.value(x), t, rng)?;
    let scaled = tape.scale(x, sa);
    let n = tape.leaf(noise);
    tape.add(scaled, n)
}

/// `-H(mean of rows)` as a `1x1` node.
pub fn neg_entropy_node(tape: &mut Tape, p: Var) -> Result<Var> {
    let rows = tape.shape(p).0;
    let s = tape.sum_rows(p);
    let q = tape.scale(s, 1.0 / rows as f64);
    let qc = tape.clamp(q, LOG_FLOOR, 1.0);
    let lq = tape.log(qc);
    let t = tape.mul(q, lq)?;
    Ok(tape.sum_all(t))
}

/// `sum_t ||p_t - p_{t+1}||^2` as a `1x1` node.
pub fn smoothness_node(tape: &mut Tape, p: Var) -> Result<Var> {
    let rows = tape.shape(p).0;
    if rows < 2 {
        return Ok(tape.constant_scalar(0.0));
    }
    let a = tape.slice_rows(p, 0, rows - 1)?;
    let b = tape.slice_rows(p, 1, rows - 1)?;
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.sum_all(sq))
}

/// Mean over the batch of `-H(average row)`.
pub fn phoneme_diversity(outputs: &[Array2]) -> Result<f64> {
    if outputs.is_empty() {
        return input_err("phoneme diversity of an empty batch");
    }
    let mut total = 0.0;
    for o in outputs {
        if o.rows() == 0 {
            return input_err("empty output sequence");
        }
        total -= entropy(&o.mean_rows());
    }
    Ok(total / outputs.len() as f64)
}

/// Summed squared distance between adjacent rows.
pub fn smoothness_penalty(output: &Array2) -> f64 {
    (1..output.rows())
        .map(|r| {
            output
                .row(r - 1)
                .iter()
                .zip(output.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

fn mean_of(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / vars.len() as f64))
}

/// Generator objective: `BCE(C(diffuse(proj(G(S)), t)), 0) + eta L_pd + gamma L_sp`,
/// with the diversity and smoothness terms on the undiffused outputs.
pub fn loss_generator<R: Rng>(
    tape: &mut Tape,
    nets: &GanNets,
    b: &NetBindings,
    batch: &[GenSample<'_>],
    schedule: &DiffusionSchedule,
    w: &LossWeights,
    rng: &mut R,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return input_err("empty generator batch");
    }
    let (mut bces, mut pds, mut sps, mut outs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in batch {
        let x = tape.leaf(s.segments.clone());
        let p = nets.gen.forward(tape, &b.gen, x)?;
        let proj = nets.project(tape, b, p)?;
        let y = diffuse_node(tape, proj, s.t, schedule, rng)?;
        let c = nets.disc.prob(tape, &b.disc, y, s.t)?;
        outs.push(tape.scalar(c));
        bces.push(bce_node(tape, c, 0.0)?);
        pds.push(neg_entropy_node(tape, p)?);
        sps.push(smoothness_node(tape, p)?);
    }
    let g_bce = mean_of(tape, &bces)?;
    let l_pd = mean_of(tape, &pds)?;
    let l_sp = mean_of(tape, &sps)?;
    let pd = tape.scale(l_pd, w.eta);
    let sp = tape.scale(l_sp, w.gamma);
    let loss = tape.add(g_bce, pd)?;
    let loss = tape.add(loss, sp)?;
    let terms = GanLossTerms {
        g_bce: tape.scalar(g_bce),
        l_pd: tape.scalar(l_pd),
        l_sp: tape.scalar(l_sp),
        eta: w.eta,
        gamma: w.gamma,
        lambda: w.lambda,
        ..GanLossTerms::default()
    };
    Ok(LossGraph {
        loss,
        terms,
        fake_outputs: outs,
        real_outputs: Vec::new(),
    })
}

/// `(||grad_y score(y, t)|| - 1)^2` at `y = alpha real + (1 - alpha) fake`,
/// both cut to the shorter length. The interpolate is a fresh leaf.
pub fn gradient_penalty_node(
    tape: &mut Tape,
    nets: &GanNets,
    b: &NetBindings,
    real: &Array2,
    fake: &Array2,
    t: usize,
    alpha: f64,
) -> Result<Var> {
    let n = real.rows().min(fake.rows());
    if n == 0 {
        return input_err("gradient penalty on a zero-length overlap");
    }
    let (r, f) = (real.slice_rows(0, n), fake.slice_rows(0, n));
    let mix = r.zip_map(&f, |a, c| alpha * a + (1.0 - alpha) * c);
    let y = tape.leaf(mix);
    let s = nets.disc.score(tape, &b.disc, y, t)?;
    let g = tape.grad(s, &[y])?[0];
    let sq = tape.mul(g, g)?;
    let ss = tape.sum_all(sq);
    let ss = tape.add_scalar(ss, NORM_EPS);
    let norm = tape.sqrt(ss);
    let d = tape.add_scalar(norm, -1.0);
    tape.mul(d, d)
}

/// Penalty value for one pair with a fresh `alpha ~ U(0, 1)`.
pub fn gradient_penalty<R: Rng>(
    nets: &GanNets,
    real: &Array2,
    fake: &Array2,
    t: usize,
    rng: &mut R,
) -> Result<f64> {
    let alpha = rng.random::<f64>();
    let mut tape = Tape::new();
    let b = nets.bind(&mut tape, false, false);
    let v = gradient_penalty_node(&mut tape, nets, &b, real, fake, t, alpha)?;
    Ok(tape.scalar(v))
}

/// Critic objective with the printed label convention (generated -> 1,
/// reference -> 0): `BCE(C(fake), 1) + BCE(C(real), 0) + lambda L_gp`.
pub fn loss_discriminator<R: Rng>(
    tape: &mut Tape,
    nets: &GanNets,
    b: &NetBindings,
    batch: &[DiscSample<'_>],
    schedule: &DiffusionSchedule,
    w: &LossWeights,
    rng: &mut R,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return input_err("empty discriminator batch");
    }
    let (mut fakes, mut reals, mut gps) = (Vec::new(), Vec::new(), Vec::new());
    let (mut fake_out, mut real_out) = (Vec::new(), Vec::new());
    for s in batch {
        if s.reference.cols() != nets.gen.v_out {
            return input_err(format!(
                "reference width {} != output width {}",
                s.reference.cols(),
                nets.gen.v_out
            ));
        }
        let x = tape.leaf(s.segments.clone());
        let p = nets.gen.forward(tape, &b.gen, x)?;
        let pf = nets.project(tape, b, p)?;
        let real = tape.leaf(s.reference.clone());
        let pr = nets.project(tape, b, real)?;
        let yf = diffuse_node(tape, pf, s.t, schedule, rng)?;
        let yr = diffuse_node(tape, pr, s.t, schedule, rng)?;
        let cf = nets.disc.prob(tape, &b.disc, yf, s.t)?;
        let cr = nets.disc.prob(tape, &b.disc, yr, s.t)?;
        fake_out.push(tape.scalar(cf));
        real_out.push(tape.scalar(cr));
        fakes.push(bce_node(tape, cf, 1.0)?);
        reals.push(bce_node(tape, cr, 0.0)?);
        let alpha = rng.random::<f64>();
        let (rv, fv) = (tape.value(yr).clone(), tape.value(yf).clone());
        gps.push(gradient_penalty_node(tape, nets, b, &rv, &fv, s.t, alpha)?);
    }
    let d_fake = mean_of(tape, &fakes)?;
    let d_real = mean_of(tape, &reals)?;
    let l_gp = mean_of(tape, &gps)?;
    let bce = tape.add(d_fake, d_real)?;
    let gp = tape.scale(l_gp, w.lambda);
    let loss = tape.add(bce, gp)?;
    let terms = GanLossTerms {
        d_fake_bce: tape.scalar(d_fake),
        d_real_bce: tape.scalar(d_real),
        l_gp: tape.scalar(l_gp),
        eta: w.eta,
        gamma: w.gamma,
        lambda: w.lambda,
        ..GanLossTerms::default()
    };
    Ok(LossGraph {
        loss,
        terms,
        fake_outputs: fake_out,
        real_outputs: real_out,
    })
}
