//! Epoch loop: sampling, forward and backward passes through the projection
//! heads, AdamW updates, validation-MRR model selection and checkpointing.
//!
//! The checkpoint holds the selected nets under `speech`, `music` and (for the
//! structure-preserving objective) `tag`. Its extension blob carries what a
//! resumed run needs to continue bit-identically:
//!
//! ```text
//! u32 extension version (= 1)
//! str objective
//! u64 completed epochs, u64 selected epoch, f64 selected MRR, u64 epochs without improvement
//! u8  stopped early
//! 32 bytes sampler seed, u64 stream, u128 word position
//! nets block (as in the checkpoint header) with the current, not selected, nets
//! f64 lr, beta1, beta2, eps, weight decay; u64 step; u64 blocks; per block u64 len, first moments, second moments
//! u64 epoch records; per record: u64 epoch, u8 has train losses, f64 total, cross, sp speech, sp music, emosim, f64 valid MRR
//! ```

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::{ByteReader, ByteWriter};
use crate::data_io::{DatasetBundle, Split};
use crate::emotion_space::EmotionSpace;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_split, EvalOptions};
use crate::numerics::{
    read_nets, write_nets, Activation, AdamWConfig, AdamWState, Checkpoint, Matrix, NetGrads, NetSpec, ParamBlock,
    ProjectionNet,
};
use crate::objectives::{
    combined_sp_loss, cross_loss, emosim_loss, feature_similarity_backward, feature_similarity_matrix, sp_losses,
    LossConfig, Objective, Triplet, UniqueMask,
};
use crate::sampling::{TripletBatch, TripletSampler};

const EXTENSION_VERSION: u32 = 1;
const SAMPLER_STREAM: u64 = 16;

pub const SPEECH_NET: &str = "speech";
pub const MUSIC_NET: &str = "music";
pub const TAG_NET: &str = "tag";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Validation retrieval settings.
    pub eval: EvalOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            loss: LossConfig::default(),
            lr: adam.lr,
            batch_size: 64,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            checkpoint: None,
            hidden: vec![256],
            output_dim: 128,
            hidden_activation: Activation::Relu,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            eval: EvalOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("AdamW betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("AdamW eps must be positive and weight decay non-negative".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("evaluation cutoff k must be positive".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn net_spec(&self, input_dim: usize) -> NetSpec {
        NetSpec {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim: self.output_dim,
            hidden_activation: self.hidden_activation,
        }
    }
}

/// The trainable heads. `tag` exists only for the structure-preserving objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Nets {
    pub speech: ProjectionNet,
    pub music: ProjectionNet,
    pub tag: Option<ProjectionNet>,
}

impl Nets {
    /// Freshly initialized heads; each net draws from its own stream of `seed`.
    pub fn init(config: &TrainConfig, speech_dim: usize, music_dim: usize, tag_dim: Option<usize>) -> Result<Self> {
        Ok(Self {
            speech: ProjectionNet::init_seeded(&config.net_spec(speech_dim), config.seed, 0)?,
            music: ProjectionNet::init_seeded(&config.net_spec(music_dim), config.seed, 1)?,
            tag: tag_dim
                .map(|d| ProjectionNet::init_seeded(&config.net_spec(d), config.seed, 2))
                .transpose()?,
        })
    }

    pub fn named(&self) -> Vec<(String, ProjectionNet)> {
        let mut v = vec![
            (SPEECH_NET.to_string(), self.speech.clone()),
            (MUSIC_NET.to_string(), self.music.clone()),
        ];
        if let Some(t) = &self.tag {
            v.push((TAG_NET.to_string(), t.clone()));
        }
        v
    }

    pub fn from_named(nets: Vec<(String, ProjectionNet)>) -> Result<Self> {
        let mut speech = None;
        let mut music = None;
        let mut tag = None;
        for (name, net) in nets {
            let slot = match name.as_str() {
                SPEECH_NET => &mut speech,
                MUSIC_NET => &mut music,
                TAG_NET => &mut tag,
                other => return Err(Error::Incompatible(format!("unexpected net `{other}`"))),
            };
            if slot.replace(net).is_some() {
                return Err(Error::Incompatible(format!("net `{name}` stored twice")));
            }
        }
        Ok(Self {
            speech: speech.ok_or_else(|| Error::Incompatible("no `speech` net".into()))?,
            music: music.ok_or_else(|| Error::Incompatible("no `music` net".into()))?,
            tag,
        })
    }

    pub fn param_count(&self) -> usize {
        self.speech.param_count() + self.music.param_count() + self.tag.as_ref().map_or(0, ProjectionNet::param_count)
    }

    fn block_sizes(&self) -> Vec<usize> {
        self.all().flat_map(|(p, n)| n.params(p)).map(|(_, v)| v.len()).collect()
    }

    fn all(&self) -> impl Iterator<Item = (&'static str, &ProjectionNet)> {
        [(SPEECH_NET, Some(&self.speech)), (MUSIC_NET, Some(&self.music)), (TAG_NET, self.tag.as_ref())]
            .into_iter()
            .filter_map(|(p, n)| n.map(|n| (p, n)))
    }

    /// Applies one AdamW update with the given gradients.
    pub fn step(&mut self, optimizer: &mut AdamWState, grads: &BatchGrads) -> Result<()> {
        let grad_blocks: Vec<&[f64]> = std::iter::once(&grads.speech)
            .chain(std::iter::once(&grads.music))
            .chain(grads.tag.iter())
            .flat_map(NetGrads::blocks)
            .collect();
        let mut params: Vec<(String, &mut [f64])> = self.speech.params_mut(SPEECH_NET);
        params.extend(self.music.params_mut(MUSIC_NET));
        if let Some(t) = self.tag.as_mut() {
            params.extend(t.params_mut(TAG_NET));
        }
        if params.len() != grad_blocks.len() {
            return Err(Error::shape(
                "Nets::step",
                format!("{} gradient blocks", params.len()),
                format!("{}", grad_blocks.len()),
            ));
        }
        let mut blocks: Vec<ParamBlock<'_>> = params
            .into_iter()
            .zip(grad_blocks)
            .map(|((name, value), grad)| ParamBlock { name, value, grad })
            .collect();
        optimizer.step(&mut blocks)
    }
}

/// Feature rows for one batch.
///
/// With `N` triplets: `speech` holds the anchors (rows `0..N`) followed, for
/// the structure-preserving objective, by speech negatives (rows `N..2N`);
/// `music` holds positives then negatives; `tags` holds the word vectors of
/// the anchor labels then those of the positive labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub speech: Matrix,
    pub music: Matrix,
    pub tags: Option<Matrix>,
    pub s_y: Matrix,
    pub unique_mask: UniqueMask,
}

/// Loss value and its components for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub cross: f64,
    pub sp_speech: f64,
    pub sp_music: f64,
    pub emosim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub speech: NetGrads,
    pub music: NetGrads,
    pub tag: Option<NetGrads>,
}

/// Objective value and exact parameter gradients for one batch.
pub fn batch_objective(nets: &Nets, inputs: &BatchInputs, loss: &LossConfig) -> Result<(LossParts, BatchGrads)> {
    let n = inputs.s_y.rows();
    let sp = loss.objective == Objective::TripletSp;
    let want_speech_rows = if sp { 2 * n } else { n };
    if inputs.speech.rows() != want_speech_rows || inputs.music.rows() != 2 * n {
        return Err(Error::shape(
            "batch_objective",
            format!("{want_speech_rows} speech and {} music rows", 2 * n),
            format!("{} and {}", inputs.speech.rows(), inputs.music.rows()),
        ));
    }
    let (zs, speech_tape) = nets.speech.forward(&inputs.speech)?;
    let (zm, music_tape) = nets.music.forward(&inputs.music)?;
    let triplets: Vec<Triplet> = (0..n).map(|i| Triplet::new(i, i, n + i)).collect();
    let cross = cross_loss(&zs, &zm, &triplets, loss.margin)?;
    let mut parts = LossParts {
        cross: cross.loss,
        ..LossParts::default()
    };

    let (grad_zs, grad_zm, tag_grads) = match loss.objective {
        Objective::Triplet => {
            parts.total = cross.loss;
            (cross.grad_anchor, cross.grad_candidates, None)
        }
        Objective::TripletEmoSim => {
            let mut gs = cross.grad_anchor;
            let mut gm = cross.grad_candidates;
            parts.total = cross.loss;
            // λ = 0 skips the term entirely so the run matches plain Triplet bit for bit
            if loss.emosim_lambda != 0.0 {
                let (zp, _) = zm.split_rows(n);
                let s_z = feature_similarity_matrix(&zs, &zp)?;
                let (e, g) = emosim_loss(&inputs.s_y, &s_z, &inputs.unique_mask)?;
                let (gs_e, gp_e) = feature_similarity_backward(&zs, &zp, &g)?;
                parts.emosim = e;
                parts.total += loss.emosim_lambda * e;
                gs.add_scaled(loss.emosim_lambda, &gs_e)?;
                for i in 0..n {
                    for (a, b) in gm.row_mut(i).iter_mut().zip(gp_e.row(i)) {
                        *a += loss.emosim_lambda * b;
                    }
                }
            }
            (gs, gm, None)
        }
        Objective::TripletSp => {
            let tag_net = nets
                .tag
                .as_ref()
                .ok_or_else(|| Error::Config("structure-preserving objective needs a tag net".into()))?;
            let tags = inputs
                .tags
                .as_ref()
                .ok_or_else(|| Error::Config("structure-preserving objective needs tag vectors".into()))?;
            if tags.rows() != 2 * n {
                return Err(Error::shape("batch_objective", format!("{} tag rows", 2 * n), format!("{}", tags.rows())));
            }
            let (zt, tag_tape) = tag_net.forward(tags)?;
            let speech_triplets: Vec<Triplet> = (0..n).map(|i| Triplet::new(i, i, n + i)).collect();
            let music_triplets: Vec<Triplet> = (0..n).map(|i| Triplet::new(n + i, i, n + i)).collect();
            let sp = sp_losses(&zt, &zs, &zm, &speech_triplets, &music_triplets, loss.margin)?;
            let [w1, w2, w3] = loss.sp_weights;
            parts.sp_speech = sp.speech.loss;
            parts.sp_music = sp.music.loss;
            parts.total = combined_sp_loss(cross.loss, sp.speech.loss, sp.music.loss, loss.sp_weights);

            let mut gs = Matrix::zeros(zs.rows(), zs.cols());
            gs.add_scaled(w1, &cross.grad_anchor)?;
            gs.add_scaled(w2, &sp.speech.grad_candidates)?;
            let mut gm = Matrix::zeros(zm.rows(), zm.cols());
            gm.add_scaled(w1, &cross.grad_candidates)?;
            gm.add_scaled(w3, &sp.music.grad_candidates)?;
            let mut gt = Matrix::zeros(zt.rows(), zt.cols());
            gt.add_scaled(w2, &sp.speech.grad_anchor)?;
            gt.add_scaled(w3, &sp.music.grad_anchor)?;
            (gs, gm, Some(tag_net.backward(&tag_tape, &gt)?))
        }
    };
    let grads = BatchGrads {
        speech: nets.speech.backward(&speech_tape, &grad_zs)?,
        music: nets.music.backward(&music_tape, &grad_zm)?,
        tag: tag_grads,
    };
    Ok((parts, grads))
}

/// One row of the training history. Epoch 0 is the initialization baseline
/// and has no training losses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<LossParts>,
    pub valid_mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub objective: Objective,
    pub seed: u64,
    pub epochs_completed: usize,
    pub selected_epoch: usize,
    pub selected_valid_mrr: f64,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
    pub history: Vec<EpochRecord>,
    /// Elapsed time of this process's share of the run. Not serialized, so
    /// reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock: Duration,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
struct RunState {
    current: Nets,
    selected: Nets,
    optimizer: AdamWState,
    rng: ChaCha8Rng,
    epoch: usize,
    selected_epoch: usize,
    selected_mrr: f64,
    stale: usize,
    stopped_early: bool,
    history: Vec<EpochRecord>,
}

struct Trainer<'a> {
    bundle: &'a DatasetBundle,
    space: EmotionSpace,
    sampler: TripletSampler<'a>,
    config: &'a TrainConfig,
}

impl<'a> Trainer<'a> {
    fn new(bundle: &'a DatasetBundle, config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        bundle.validate()?;
        let space = bundle.emotion_space()?;
        if config.loss.objective == Objective::TripletSp {
            if bundle.tags.is_empty() {
                return Err(Error::Config("objective triplet-sp needs tag word vectors".into()));
            }
            for label in space.speech.labels().iter().chain(space.music.labels()) {
                bundle.tag_vector(label)?;
            }
        }
        let speech_pool = bundle.speech_indices(Split::Train);
        let music_pool = bundle.music_indices(Split::Train);
        if speech_pool.is_empty() {
            return Err(Error::Config("no speech items in the train split".into()));
        }
        let sampler = TripletSampler::new(&space, &bundle.speech, &speech_pool, &bundle.music, &music_pool)?;
        Ok(Self {
            bundle,
            space,
            sampler,
            config,
        })
    }

    fn needs_tags(&self) -> bool {
        self.config.loss.objective == Objective::TripletSp
    }

    fn fresh_state(&self) -> Result<RunState> {
        let tag_dim = self.needs_tags().then(|| self.bundle.tag_dim());
        let nets = Nets::init(self.config, self.bundle.speech_dim(), self.bundle.music_dim(), tag_dim)?;
        let optimizer = AdamWState::new(self.config.adamw(), &nets.block_sizes());
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SAMPLER_STREAM);
        let mrr = self.validate(&nets)?;
        Ok(RunState {
            current: nets.clone(),
            selected: nets,
            optimizer,
            rng,
            epoch: 0,
            selected_epoch: 0,
            selected_mrr: mrr,
            stale: 0,
            stopped_early: false,
            history: vec![EpochRecord {
                epoch: 0,
                train: None,
                valid_mrr: mrr,
            }],
        })
    }

    fn validate(&self, nets: &Nets) -> Result<f64> {
        Ok(evaluate_split(self.bundle, &self.space, &nets.speech, &nets.music, Split::Valid, self.config.eval)?.mrr)
    }

    fn inputs(&self, batch: &TripletBatch) -> Result<BatchInputs> {
        let mut speech = self.bundle.speech_matrix(&batch.anchors);
        if let Some(neg) = &batch.speech_negatives {
            speech = speech.vstack(&self.bundle.speech_matrix(neg))?;
        }
        let music_rows: Vec<usize> = batch.positives.iter().chain(&batch.negatives).copied().collect();
        let music = self.bundle.music_matrix(&music_rows);
        let tags = if self.needs_tags() {
            let labels = batch
                .anchors
                .iter()
                .map(|&a| &self.bundle.speech[a].label)
                .chain(batch.positives.iter().map(|&p| &self.bundle.music[p].label));
            let rows = labels.map(|l| self.bundle.tag_vector(l)).collect::<Result<Vec<_>>>()?;
            Some(Matrix::from_rows(&rows)?)
        } else {
            None
        };
        Ok(BatchInputs {
            speech,
            music,
            tags,
            s_y: batch.s_y.clone(),
            unique_mask: batch.unique_mask.clone(),
        })
    }

    fn run(&self, state: &mut RunState) -> Result<()> {
        self.save(state)?;
        while state.epoch < self.config.max_epochs && !state.stopped_early {
            let epoch = state.epoch + 1;
            let batches = self.sampler.epoch_batches(self.config.batch_size, self.needs_tags(), &mut state.rng)?;
            let mut sum = LossParts::default();
            for (b, batch) in batches.iter().enumerate() {
                let inputs = self.inputs(batch)?;
                let (parts, grads) = batch_objective(&state.current, &inputs, &self.config.loss)?;
                if !parts.total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                state.current.step(&mut state.optimizer, &grads)?;
                sum.total += parts.total;
                sum.cross += parts.cross;
                sum.sp_speech += parts.sp_speech;
                sum.sp_music += parts.sp_music;
                sum.emosim += parts.emosim;
            }
            let k = batches.len() as f64;
            let mean = LossParts {
                total: sum.total / k,
                cross: sum.cross / k,
                sp_speech: sum.sp_speech / k,
                sp_music: sum.sp_music / k,
                emosim: sum.emosim / k,
            };
            let mrr = self.validate(&state.current)?;
            state.epoch = epoch;
            state.history.push(EpochRecord {
                epoch,
                train: Some(mean),
                valid_mrr: mrr,
            });
            if mrr > state.selected_mrr {
                state.selected = state.current.clone();
                state.selected_epoch = epoch;
                state.selected_mrr = mrr;
                state.stale = 0;
            } else {
                state.stale += 1;
                if self.config.patience > 0 && state.stale >= self.config.patience {
                    state.stopped_early = true;
                }
            }
            log::info!(
                "epoch {epoch}: loss {:.6}, valid MRR {mrr:.4} (selected epoch {})",
                mean.total,
                state.selected_epoch
            );
            self.save(state)?;
        }
        Ok(())
    }

    fn save(&self, state: &RunState) -> Result<()> {
        match &self.config.checkpoint {
            Some(path) => checkpoint_of(state, self.config.loss.objective).save(path),
            None => Ok(()),
        }
    }

    fn report(&self, state: &RunState, started: Instant) -> TrainReport {
        TrainReport {
            objective: self.config.loss.objective,
            seed: self.config.seed,
            epochs_completed: state.epoch,
            selected_epoch: state.selected_epoch,
            selected_valid_mrr: state.selected_mrr,
            stopped_early: state.stopped_early,
            optimizer_steps: state.optimizer.step_count(),
            history: state.history.clone(),
            wall_clock: started.elapsed(),
        }
    }
}

/// Trains from scratch. Returns the nets of the selected epoch.
pub fn train(bundle: &DatasetBundle, config: &TrainConfig) -> Result<(Nets, TrainReport)> {
    let started = Instant::now();
    let trainer = Trainer::new(bundle, config)?;
    let mut state = trainer.fresh_state()?;
    trainer.run(&mut state)?;
    Ok((state.selected.clone(), trainer.report(&state, started)))
}

/// Continues a run from its checkpoint until `config.max_epochs` epochs are
/// complete in total.
pub fn resume(checkpoint: &Checkpoint, bundle: &DatasetBundle, config: &TrainConfig) -> Result<(Nets, TrainReport)> {
    let started = Instant::now();
    let trainer = Trainer::new(bundle, config)?;
    let mut state = decode_state(checkpoint, config)?;
    let fresh_shape = {
        let tag_dim = trainer.needs_tags().then(|| bundle.tag_dim());
        Nets::init(config, bundle.speech_dim(), bundle.music_dim(), tag_dim)?
    };
    for ((name, want), (_, got)) in fresh_shape.named().iter().zip(state.current.named().iter()) {
        if layer_dims(want) != layer_dims(got) {
            return Err(Error::Incompatible(format!(
                "net `{name}` has layers {:?}, configuration expects {:?}",
                layer_dims(got),
                layer_dims(want)
            )));
        }
    }
    if fresh_shape.tag.is_some() != state.current.tag.is_some() {
        return Err(Error::Incompatible("tag net presence does not match the objective".into()));
    }
    trainer.run(&mut state)?;
    Ok((state.selected.clone(), trainer.report(&state, started)))
}

fn layer_dims(net: &ProjectionNet) -> Vec<(usize, usize, Activation)> {
    net.layers().iter().map(|l| (l.input_dim(), l.output_dim(), l.activation)).collect()
}

fn checkpoint_of(state: &RunState, objective: Objective) -> Checkpoint {
    let mut w = ByteWriter::new();
    w.u32(EXTENSION_VERSION);
    w.str(objective.name());
    w.u64(state.epoch as u64);
    w.u64(state.selected_epoch as u64);
    w.f64(state.selected_mrr);
    w.u64(state.stale as u64);
    w.u8(state.stopped_early as u8);
    w.bytes(&state.rng.get_seed());
    w.u64(state.rng.get_stream());
    w.u128(state.rng.get_word_pos());
    write_nets(&mut w, &state.current.named());
    let c = state.optimizer.config;
    for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
        w.f64(v);
    }
    w.u64(state.optimizer.step_count());
    w.u64(state.optimizer.first_moments().len() as u64);
    for (m, v) in state.optimizer.first_moments().iter().zip(state.optimizer.second_moments()) {
        w.u64(m.len() as u64);
        w.f64s(m);
        w.f64s(v);
    }
    w.u64(state.history.len() as u64);
    for r in &state.history {
        w.u64(r.epoch as u64);
        w.u8(r.train.is_some() as u8);
        let t = r.train.unwrap_or_default();
        for v in [t.total, t.cross, t.sp_speech, t.sp_music, t.emosim] {
            w.f64(v);
        }
        w.f64(r.valid_mrr);
    }
    Checkpoint {
        nets: state.selected.named(),
        extension: w.into_bytes(),
    }
}

fn decode_state(checkpoint: &Checkpoint, config: &TrainConfig) -> Result<RunState> {
    let selected = Nets::from_named(checkpoint.nets.clone())?;
    let mut r = ByteReader::new(&checkpoint.extension, "checkpoint training state");
    let version = r.u32()?;
    if version != EXTENSION_VERSION {
        return Err(Error::Incompatible(format!(
            "training state version {version}, expected {EXTENSION_VERSION}"
        )));
    }
    let objective: Objective = r.str()?.parse()?;
    if objective != config.loss.objective {
        return Err(Error::Incompatible(format!(
            "checkpoint was trained with objective {objective}, configuration asks for {}",
            config.loss.objective
        )));
    }
    let to_usize = |v: u64| usize::try_from(v).map_err(|_| Error::format("checkpoint training state", "count overflows"));
    let epoch = to_usize(r.u64()?)?;
    let selected_epoch = to_usize(r.u64()?)?;
    let selected_mrr = r.f64()?;
    let stale = to_usize(r.u64()?)?;
    let stopped_early = r.u8()? != 0;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(r.u128()?);
    let current = Nets::from_named(read_nets(&mut r)?)?;
    let mut adam = [0.0; 5];
    for v in &mut adam {
        *v = r.f64()?;
    }
    let adam_config = AdamWConfig {
        lr: adam[0],
        beta1: adam[1],
        beta2: adam[2],
        eps: adam[3],
        weight_decay: adam[4],
    };
    if adam_config != config.adamw() {
        log::warn!("optimizer settings differ from the checkpoint; continuing with the configured ones");
    }
    let step = r.u64()?;
    let blocks = to_usize(r.u64()?)?;
    let mut first = Vec::with_capacity(blocks.min(1 << 16));
    let mut second = Vec::with_capacity(blocks.min(1 << 16));
    for _ in 0..blocks {
        let n = to_usize(r.u64()?)?;
        first.push(r.f64s(n)?);
        second.push(r.f64s(n)?);
    }
    let optimizer = AdamWState::from_parts(config.adamw(), step, first, second)?;
    if optimizer.block_sizes() != current.block_sizes() {
        return Err(Error::Incompatible("optimizer state does not match the stored nets".into()));
    }
    let records = to_usize(r.u64()?)?;
    let mut history = Vec::with_capacity(records.min(1 << 16));
    for _ in 0..records {
        let epoch = to_usize(r.u64()?)?;
        let has_train = r.u8()? != 0;
        let mut v = [0.0; 5];
        for x in &mut v {
            *x = r.f64()?;
        }
        let valid_mrr = r.f64()?;
        history.push(EpochRecord {
            epoch,
            train: has_train.then_some(LossParts {
                total: v[0],
                cross: v[1],
                sp_speech: v[2],
                sp_music: v[3],
                emosim: v[4],
            }),
            valid_mrr,
        });
    }
    r.finish()?;
    Ok(RunState {
        current,
        selected,
        optimizer,
        rng,
        epoch,
        selected_epoch,
        selected_mrr,
        stale,
        stopped_early,
        history,
    })
}

/// Nets stored in a checkpoint (the selected epoch's).
pub fn load_nets(checkpoint: &Checkpoint) -> Result<Nets> {
    Nets::from_named(checkpoint.nets.clone())
}
