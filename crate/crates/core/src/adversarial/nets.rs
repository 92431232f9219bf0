use rand::Rng;

use crate::error::{input_err, Error, Result};
use crate::features::SegmentSequence;
use crate::numerics::tape::sigmoid;
use crate::numerics::{
    conv1d, softmax_rows, Array2, Array3, Binding, ParamStore, Tape, Var, BCE_EPS,
};

/// Negative slope of the leaky ReLU used in the U-Net and discriminator.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Generator kernel width (a width-4 kernel rounded up to the nearest odd size).
pub const GEN_KERNEL: usize = 5;
const KERNEL: usize = 3;
/// Largest horizon allowed for a bank of independent per-timestep discriminators.
pub const MAX_BANK_T: usize = 16;

/// Single non-causal convolution from segment features to phoneme logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub d_in: usize,
    pub v_out: usize,
    pub params: ParamStore,
}

impl Generator {
    pub fn init<R: Rng>(d_in: usize, v_out: usize, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let std = 1.0 / ((GEN_KERNEL * d_in) as f64).sqrt();
        params.insert_normal("gen.w", GEN_KERNEL * d_in, v_out, std, rng)?;
        params.insert("gen.b", Array2::zeros(1, v_out))?;
        Ok(Self {
            d_in,
            v_out,
            params,
        })
    }

    /// `softmax(conv(x))`, `[L x d_in] -> [L x v_out]`.
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let z = tape.conv1d(x, bind.get("gen.w")?, bind.get("gen.b")?, GEN_KERNEL)?;
        Ok(tape.softmax_rows(z))
    }
}

/// Phoneme distributions for one segment sequence.
pub fn generate(gen: &Generator, s: &SegmentSequence) -> Result<Array2> {
    if s.is_empty() {
        return input_err(format!("segment sequence '{}' is empty", s.source_id));
    }
    if s.segments.cols() != gen.d_in {
        return input_err(format!(
            "segments have {} features, generator expects {}",
            s.segments.cols(),
            gen.d_in
        ));
    }
    let kernel = Array3::from_matrix(GEN_KERNEL, gen.params.value("gen.w")?)?;
    let logits = conv1d(&s.segments, &kernel, gen.params.value("gen.b")?.data())?;
    Ok(softmax_rows(&logits))
}

/// Stride-1 U-Net: an input map to `w0`, three down convolutions
/// `w0 -> w1 -> w2 -> w3`, then two up convolutions back to `w3` and `w2`
/// with additive skips from the matching down stages.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetProjector {
    pub v_in: usize,
    pub widths: [usize; 4],
    pub params: ParamStore,
}

impl UNetProjector {
    pub fn init<R: Rng>(v_in: usize, widths: [usize; 4], rng: &mut R) -> Result<Self> {
        if widths.contains(&0) {
            return Err(Error::Config("U-Net widths must be positive".into()));
        }
        let [w0, w1, w2, w3] = widths;
        let mut p = ParamStore::new();
        p.insert_normal("unet.in.w", v_in, w0, 1.0 / (v_in as f64).sqrt(), rng)?;
        p.insert("unet.in.b", Array2::zeros(1, w0))?;
        for (name, cin, cout) in [
            ("d1", w0, w1),
            ("d2", w1, w2),
            ("d3", w2, w3),
            ("u1", w3, w3),
            ("u2", w3, w2),
        ] {
            let std = 1.0 / ((KERNEL * cin) as f64).sqrt();
            p.insert_normal(&format!("unet.{name}.w"), KERNEL * cin, cout, std, rng)?;
            p.insert(&format!("unet.{name}.b"), Array2::zeros(1, cout))?;
        }
        Ok(Self {
            v_in,
            widths,
            params: p,
        })
    }

    pub fn out_width(&self) -> usize {
        self.widths[2]
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let conv = |tape: &mut Tape, x: Var, name: &str| -> Result<Var> {
            let w = bind.get(&format!("unet.{name}.w"))?;
            let b = bind.get(&format!("unet.{name}.b"))?;
            tape.conv1d(x, w, b, KERNEL)
        };
        let h0 = tape.linear(x, bind.get("unet.in.w")?, bind.get("unet.in.b")?)?;
        let d1 = conv(tape, h0, "d1")?;
        let d1 = tape.leaky_relu(d1, LEAKY_SLOPE);
        let d2 = conv(tape, d1, "d2")?;
        let d2 = tape.leaky_relu(d2, LEAKY_SLOPE);
        let d3 = conv(tape, d2, "d3")?;
        let d3 = tape.leaky_relu(d3, LEAKY_SLOPE);
        let u1 = conv(tape, d3, "u1")?;
        let u1 = tape.leaky_relu(u1, LEAKY_SLOPE);
        let u1 = tape.add(u1, d3)?;
        let u2 = conv(tape, u1, "u2")?;
        tape.add(u2, d2)
    }
}

pub fn unet_project(u: &UNetProjector, x: &Array2) -> Result<Array2> {
    if x.cols() != u.v_in {
        return input_err(format!("U-Net expects width {}, got {}", u.v_in, x.cols()));
    }
    let mut tape = Tape::new();
    let bind = tape.bind(&u.params, false);
    let xv = tape.leaf(x.clone());
    let out = u.forward(&mut tape, &bind, xv)?;
    Ok(tape.value(out).clone())
}

/// Three-layer convolutional critic conditioned on the diffusion timestep.
///
/// The shared variant adds a learned per-timestep embedding to the first
/// layer; the bank variant keeps separate weights for every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub w_in: usize,
    pub hidden: [usize; 2],
    pub t_max: usize,
    pub independent: bool,
    pub params: ParamStore,
}

impl Discriminator {
    pub fn init<R: Rng>(
        w_in: usize,
        hidden: [usize; 2],
        t_max: usize,
        independent: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if independent && t_max > MAX_BANK_T {
            return Err(Error::Config(format!(
                "independent discriminators need T_max <= {MAX_BANK_T}, got {t_max}"
            )));
        }
        let [h1, h2] = hidden;
        let mut p = ParamStore::new();
        let prefixes: Vec<String> = if independent {
            (0..=t_max).map(|t| format!("disc.t{t}.")).collect()
        } else {
            // a lone undiffused discriminator needs no timestep conditioning
            if t_max > 0 {
                p.insert("disc.emb", Array2::zeros(t_max + 1, h1))?;
            }
            vec!["disc.".to_string()]
        };
        for pre in &prefixes {
            for (name, cin, cout) in [("c1", w_in, h1), ("c2", h1, h2), ("c3", h2, 1)] {
                let std = 1.0 / ((KERNEL * cin) as f64).sqrt();
                p.insert_normal(&format!("{pre}{name}.w"), KERNEL * cin, cout, std, rng)?;
                p.insert(&format!("{pre}{name}.b"), Array2::zeros(1, cout))?;
            }
        }
        Ok(Self {
            w_in,
            hidden,
            t_max,
            independent,
            params: p,
        })
    }

    fn prefix(&self, t: usize) -> String {
        if self.independent {
            format!("disc.t{t}.")
        } else {
            "disc.".to_string()
        }
    }

    /// Zeroes the scalar head so every output is exactly 0.5.
    pub fn zero_head(&mut self) -> Result<()> {
        let ts: Vec<usize> = if self.independent {
            (0..=self.t_max).collect()
        } else {
            vec![0]
        };
        for t in ts {
            let pre = self.prefix(t);
            self.params.set_value(
                &format!("{pre}c3.w"),
                Array2::zeros(KERNEL * self.hidden[1], 1),
            )?;
            self.params
                .set_value(&format!("{pre}c3.b"), Array2::zeros(1, 1))?;
        }
        Ok(())
    }

    /// Pre-sigmoid score: the mean over positions of the final layer.
    pub fn score(&self, tape: &mut Tape, bind: &Binding, y: Var, t: usize) -> Result<Var> {
        if t > self.t_max {
            return input_err(format!("timestep {t} outside the table 0..={}", self.t_max));
        }
        if tape.shape(y).1 != self.w_in {
            return input_err(format!(
                "discriminator expects width {}, got {}",
                self.w_in,
                tape.shape(y).1
            ));
        }
        let pre = self.prefix(t);
        let g = |n: &str| bind.get(&format!("{pre}{n}"));
        let len = tape.shape(y).0;
        let mut h = tape.conv1d(y, g("c1.w")?, g("c1.b")?, KERNEL)?;
        if !self.independent && self.t_max > 0 {
            let e = tape.gather_rows(bind.get("disc.emb")?, &[t])?;
            let e = tape.broadcast_rows(e, len)?;
            h = tape.add(h, e)?;
        }
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.conv1d(h, g("c2.w")?, g("c2.b")?, KERNEL)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE);
        let h = tape.conv1d(h, g("c3.w")?, g("c3.b")?, KERNEL)?;
        Ok(tape.mean_all(h))
    }

    /// Clamped sigmoid of [`Discriminator::score`].
    pub fn prob(&self, tape: &mut Tape, bind: &Binding, y: Var, t: usize) -> Result<Var> {
        let s = self.score(tape, bind, y, t)?;
        let p = tape.sigmoid(s);
        Ok(tape.clamp(p, BCE_EPS, 1.0 - BCE_EPS))
    }
}

/// `C(y, t)` in `[eps, 1 - eps]`.
pub fn discriminate(d: &Discriminator, y: &Array2, t: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let bind = tape.bind(&d.params, false);
    let yv = tape.leaf(y.clone());
    let s = d.score(&mut tape, &bind, yv, t)?;
    Ok(sigmoid(tape.scalar(s)).clamp(BCE_EPS, 1.0 - BCE_EPS))
}

/// Network shapes for one GAN run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    pub d_in: usize,
    pub v_out: usize,
    pub use_unet: bool,
    pub unet_widths: [usize; 4],
    pub disc_hidden: [usize; 2],
    pub t_max: usize,
    pub independent_disc: bool,
}

/// Generator, optional U-Net and discriminator of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct GanNets {
    pub gen: Generator,
    pub unet: Option<UNetProjector>,
    pub disc: Discriminator,
}

/// Tape bindings for all three networks.
pub struct NetBindings {
    pub gen: Binding,
    pub unet: Option<Binding>,
    pub disc: Binding,
}

impl GanNets {
    pub fn init<R: Rng>(cfg: &NetConfig, rng: &mut R) -> Result<Self> {
        let gen = Generator::init(cfg.d_in, cfg.v_out, rng)?;
        let unet = if cfg.use_unet {
            Some(UNetProjector::init(cfg.v_out, cfg.unet_widths, rng)?)
        } else {
            None
        };
        let w_in = unet.as_ref().map_or(cfg.v_out, UNetProjector::out_width);
        let disc =
            Discriminator::init(w_in, cfg.disc_hidden, cfg.t_max, cfg.independent_disc, rng)?;
        Ok(Self { gen, unet, disc })
    }

    /// Binds the generator and the critic side (U-Net plus discriminator).
    pub fn bind(&self, tape: &mut Tape, train_gen: bool, train_critic: bool) -> NetBindings {
        NetBindings {
            gen: tape.bind(&self.gen.params, train_gen),
            unet: self
                .unet
                .as_ref()
                .map(|u| tape.bind(&u.params, train_critic)),
            disc: tape.bind(&self.disc.params, train_critic),
        }
    }

    /// Projects phoneme distributions into the discriminator's input space.
    pub fn project(&self, tape: &mut Tape, b: &NetBindings, x: Var) -> Result<Var> {
        match (&self.unet, &b.unet) {
            (Some(u), Some(ub)) => u.forward(tape, ub, x),
            (None, _) => Ok(x),
            (Some(_), None) => Err(Error::Contract("U-Net present but not bound".into())),
        }
    }

    /// Order-stable fingerprint of the critic-side parameters.
    pub fn critic_fingerprint(&self) -> u64 {
        let u = self.unet.as_ref().map_or(0, |u| u.params.fingerprint());
        self.disc.params.fingerprint() ^ u.rotate_left(1)
    }
}
