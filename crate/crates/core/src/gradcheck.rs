//! Central finite-difference checks of every objective's analytic gradient.
//!
//! Each randomized configuration builds small projection heads and a batch,
//! then compares every parameter's analytic derivative with
//! `(L(p + h) − L(p − h)) / 2h`. Configurations with a ReLU pre-activation or
//! a hinge argument within `kink_margin` of zero are redrawn, since the
//! difference quotient straddles a kink there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{cosine_distance, Activation, Matrix, NetSpec, ProjectionNet};
use crate::objectives::{triplet_loss, LossConfig, Objective, UniqueMask};
use crate::trainer::{batch_objective, BatchInputs, Nets};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub configs: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    pub kink_margin: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            configs: 100,
            seed: 0,
            step: 1e-6,
            tolerance: 1e-6,
            floor: 1e-3,
            kink_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckResult {
    pub name: &'static str,
    pub configs: usize,
    /// Individual derivatives compared.
    pub checked: usize,
    /// Draws rejected for lying near a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Runs the bare triplet hinge and the three training objectives.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<Vec<GradcheckResult>> {
    if options.configs == 0 || !(options.step > 0.0) {
        return Err(Error::Config("gradcheck needs at least one configuration and a positive step".into()));
    }
    let mut out = vec![check_triplet(options)?];
    for (i, objective) in Objective::ALL.into_iter().enumerate() {
        out.push(check_objective(objective, options, i as u64 + 1)?);
    }
    Ok(out)
}

struct Tally {
    checked: usize,
    redrawn: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            checked: 0,
            redrawn: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric, floor);
        // NaN must not hide behind max()
        self.worst = if e.is_nan() { f64::INFINITY } else { self.worst.max(e) };
    }

    fn finish(self, name: &'static str, options: &GradcheckOptions) -> GradcheckResult {
        GradcheckResult {
            name,
            configs: options.configs,
            checked: self.checked,
            redrawn: self.redrawn,
            max_rel_error: self.worst,
            passed: self.worst < options.tolerance,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

const MAX_REDRAWS: usize = 10_000;

fn check_triplet(options: &GradcheckOptions) -> Result<GradcheckResult> {
    let mut rng = stream(options.seed, 0);
    let mut tally = Tally::new();
    let margin = LossConfig::default().margin;
    for _ in 0..options.configs {
        let (z, p, n) = loop {
            let dim = rng.random_range(2..=6);
            let (z, p, n) = (gaussian(&mut rng, dim), gaussian(&mut rng, dim), gaussian(&mut rng, dim));
            let arg = cosine_distance(&z, &p) - cosine_distance(&z, &n) + margin;
            // inactive hinges have all-zero gradients; keep only active ones
            if arg > options.kink_margin {
                break (z, p, n);
            }
            tally.redrawn += 1;
            if tally.redrawn > MAX_REDRAWS {
                return Err(Error::Config("gradcheck could not draw a kink-free triplet".into()));
            }
        };
        let term = triplet_loss(&z, &p, &n, margin)?;
        let mut vecs = [z, p, n];
        let analytic = [term.grad_anchor, term.grad_positive, term.grad_negative];
        for which in 0..3 {
            for k in 0..vecs[which].len() {
                let orig = vecs[which][k];
                vecs[which][k] = orig + options.step;
                let up = triplet_loss(&vecs[0], &vecs[1], &vecs[2], margin)?.loss;
                vecs[which][k] = orig - options.step;
                let down = triplet_loss(&vecs[0], &vecs[1], &vecs[2], margin)?.loss;
                vecs[which][k] = orig;
                tally.record(analytic[which][k], (up - down) / (2.0 * options.step), options.floor);
            }
        }
    }
    Ok(tally.finish("hinge", options))
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_net(rng: &mut ChaCha8Rng, input_dim: usize, output_dim: usize) -> Result<ProjectionNet> {
    let spec = NetSpec {
        input_dim,
        hidden: vec![rng.random_range(2..=5)],
        output_dim,
        hidden_activation: Activation::Relu,
    };
    ProjectionNet::init(&spec, rng)
}

fn random_config(rng: &mut ChaCha8Rng, objective: Objective) -> Result<(Nets, BatchInputs)> {
    let n = rng.random_range(2..=4);
    let out = rng.random_range(2..=4);
    let (ds, dm, dt) = (rng.random_range(2..=5), rng.random_range(2..=5), rng.random_range(2..=5));
    let mut nets = Nets {
        speech: random_net(rng, ds, out)?,
        music: random_net(rng, dm, out)?,
        tag: None,
    };
    let sp = objective == Objective::TripletSp;
    if sp {
        nets.tag = Some(random_net(rng, dt, out)?);
    }
    // non-zero biases so the check covers them too
    for net in [Some(&mut nets.speech), Some(&mut nets.music), nets.tag.as_mut()].into_iter().flatten() {
        for layer in net.layers_mut() {
            for b in &mut layer.bias {
                *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let speech_rows = if sp { 2 * n } else { n };
    let matrix = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
        Matrix::from_vec(rows, cols, gaussian(rng, rows * cols)).expect("sized")
    };
    // repeated S_y values exercise the unique mask
    let pool: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    let s_y = Matrix::from_vec(n, n, (0..n * n).map(|_| pool[rng.random_range(0..3)]).collect()).expect("sized");
    let unique_mask = UniqueMask::from_similarities(&s_y);
    let inputs = BatchInputs {
        speech: matrix(rng, speech_rows, ds),
        music: matrix(rng, 2 * n, dm),
        tags: sp.then(|| matrix(rng, 2 * n, dt)),
        s_y,
        unique_mask,
    };
    Ok((nets, inputs))
}

/// Smallest distance to a non-differentiable point: ReLU pre-activations and
/// hinge arguments near zero, and embedding norms near zero (where cosine
/// switches to its zero-vector convention).
fn kink_distance(nets: &Nets, inputs: &BatchInputs, loss: &LossConfig) -> Result<f64> {
    let mut nearest = f64::INFINITY;
    let mut embed = |net: &ProjectionNet, x: &Matrix| -> Result<Matrix> {
        let (z, tape) = net.forward(x)?;
        for (layer, pre) in net.layers().iter().zip(tape.pre_activations()) {
            if layer.activation == Activation::Relu {
                nearest = pre.data().iter().fold(nearest, |m, v| m.min(v.abs()));
            }
        }
        nearest = z.iter_rows().fold(nearest, |m, r| m.min(crate::numerics::norm(r)));
        Ok(z)
    };
    let zs = embed(&nets.speech, &inputs.speech)?;
    let zm = embed(&nets.music, &inputs.music)?;
    let zt = match (&nets.tag, &inputs.tags) {
        (Some(net), Some(t)) => Some(embed(net, t)?),
        _ => None,
    };
    let n = inputs.s_y.rows();
    let hinge = |a: &[f64], p: &[f64], q: &[f64]| (cosine_distance(a, p) - cosine_distance(a, q) + loss.margin).abs();
    for i in 0..n {
        nearest = nearest.min(hinge(zs.row(i), zm.row(i), zm.row(n + i)));
        if let Some(zt) = &zt {
            nearest = nearest.min(hinge(zt.row(i), zs.row(i), zs.row(n + i)));
            nearest = nearest.min(hinge(zt.row(n + i), zm.row(i), zm.row(n + i)));
        }
    }
    Ok(nearest)
}

fn check_objective(objective: Objective, options: &GradcheckOptions, stream_id: u64) -> Result<GradcheckResult> {
    let mut rng = stream(options.seed, stream_id);
    let loss = LossConfig {
        objective,
        ..LossConfig::default()
    };
    let mut tally = Tally::new();
    for _ in 0..options.configs {
        let (mut nets, inputs) = loop {
            let (nets, inputs) = random_config(&mut rng, objective)?;
            if kink_distance(&nets, &inputs, &loss)? > options.kink_margin {
                break (nets, inputs);
            }
            tally.redrawn += 1;
            if tally.redrawn > MAX_REDRAWS {
                return Err(Error::Config("gradcheck could not draw a kink-free configuration".into()));
            }
        };
        let (_, grads) = batch_objective(&nets, &inputs, &loss)?;
        let analytic: Vec<Vec<f64>> = std::iter::once(&grads.speech)
            .chain(std::iter::once(&grads.music))
            .chain(grads.tag.iter())
            .flat_map(|g| g.blocks())
            .map(<[f64]>::to_vec)
            .collect();
        for (b, block) in analytic.iter().enumerate() {
            for (k, &g) in block.iter().enumerate() {
                let orig = param(&mut nets, b)[k];
                param(&mut nets, b)[k] = orig + options.step;
                let up = batch_objective(&nets, &inputs, &loss)?.0.total;
                param(&mut nets, b)[k] = orig - options.step;
                let down = batch_objective(&nets, &inputs, &loss)?.0.total;
                param(&mut nets, b)[k] = orig;
                tally.record(g, (up - down) / (2.0 * options.step), options.floor);
            }
        }
    }
    Ok(tally.finish(objective.name(), options))
}

/// Parameter block `b` in the order speech, music, tag; weight then bias per layer.
fn param(nets: &mut Nets, mut b: usize) -> &mut [f64] {
    let mut all: Vec<&mut ProjectionNet> = vec![&mut nets.speech, &mut nets.music];
    if let Some(t) = nets.tag.as_mut() {
        all.push(t);
    }
    for net in all {
        let blocks = 2 * net.layers().len();
        if b < blocks {
            let layer = &mut net.layers_mut()[b / 2];
            return if b.is_multiple_of(2) { layer.weight.data_mut() } else { &mut layer.bias };
        }
        b -= blocks;
    }
    panic!("parameter block index out of range")
}
