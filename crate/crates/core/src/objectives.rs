//! Training objectives: the cosine triplet hinge, its cross-domain and
//! structure-preserving uses, and the emotion-similarity regularizer that
//! aligns batch feature similarities with label VA similarities.
//!
//! Every loss returns its exact gradient with respect to the embeddings (or
//! similarity entries) it consumes; chaining into the projection nets is the
//! trainer's job.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity_grad, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Triplet,
    TripletSp,
    TripletEmoSim,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Triplet => "triplet",
            Objective::TripletSp => "triplet-sp",
            Objective::TripletEmoSim => "triplet-emosim",
        }
    }

    pub const ALL: [Objective; 3] = [Objective::Triplet, Objective::TripletSp, Objective::TripletEmoSim];
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for Objective {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}` (expected triplet, triplet-sp or triplet-emosim)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub sp_weights: [f64; 3],
    pub emosim_lambda: f64,
    pub objective: Objective,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.4,
            sp_weights: [0.4, 0.3, 0.3],
            emosim_lambda: 0.5,
            objective: Objective::Triplet,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !(self.emosim_lambda >= 0.0) {
            return Err(Error::Config(format!(
                "emosim lambda must be >= 0, got {}",
                self.emosim_lambda
            )));
        }
        if self.sp_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(format!(
                "structure-preserving weights must be non-negative, got {:?}",
                self.sp_weights
            )));
        }
        Ok(())
    }
}

/// `(anchor, positive, negative)` row indices. The anchor indexes one
/// embedding matrix, positive and negative index another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Self {
            anchor,
            positive,
            negative,
        }
    }
}

/// Value and gradients of a single triplet hinge.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletTerm {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, D(z, z⁺) − D(z, z⁻) + margin)` with `D` the cosine distance.
/// The hinge is inactive (zero gradient) unless its argument is strictly positive.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<TripletTerm> {
    let dim = anchor.len();
    if positive.len() != dim || negative.len() != dim {
        return Err(Error::shape(
            "triplet_loss",
            format!("three embeddings of dim {dim}"),
            format!("dims {}, {}, {}", dim, positive.len(), negative.len()),
        ));
    }
    let (cos_ap, ga_p, gp) = cosine_similarity_grad(anchor, positive);
    let (cos_an, ga_n, gn) = cosine_similarity_grad(anchor, negative);
    let d_ap = 1.0 - cos_ap;
    let d_an = 1.0 - cos_an;
    let arg = d_ap - d_an + margin;
    if arg > 0.0 {
        Ok(TripletTerm {
            loss: arg,
            // d/dz of (−cos_ap + cos_an)
            grad_anchor: ga_n.iter().zip(&ga_p).map(|(n, p)| n - p).collect(),
            grad_positive: gp.iter().map(|g| -g).collect(),
            grad_negative: gn,
        })
    } else if arg.is_nan() {
        // propagate so callers can detect the blow-up
        Ok(TripletTerm {
            loss: f64::NAN,
            grad_anchor: vec![f64::NAN; dim],
            grad_positive: vec![f64::NAN; dim],
            grad_negative: vec![f64::NAN; dim],
        })
    } else {
        Ok(TripletTerm {
            loss: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        })
    }
}

/// Mean loss over a triplet set plus gradients for both embedding matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLoss {
    pub loss: f64,
    pub grad_anchor: Matrix,
    pub grad_candidates: Matrix,
}

/// Mean triplet hinge where anchors index `anchors` and positives/negatives
/// index `candidates`.
pub fn triplet_set_loss(anchors: &Matrix, candidates: &Matrix, triplets: &[Triplet], margin: f64) -> Result<SetLoss> {
    if anchors.cols() != candidates.cols() {
        return Err(Error::shape(
            "triplet_set_loss",
            format!("candidate dim {}", anchors.cols()),
            format!("{}", candidates.cols()),
        ));
    }
    let mut grad_anchor = Matrix::zeros(anchors.rows(), anchors.cols());
    let mut grad_candidates = Matrix::zeros(candidates.rows(), candidates.cols());
    if triplets.is_empty() {
        return Ok(SetLoss {
            loss: 0.0,
            grad_anchor,
            grad_candidates,
        });
    }
    for t in triplets {
        check_index("anchor rows", t.anchor, anchors.rows())?;
        check_index("candidate rows", t.positive, candidates.rows())?;
        check_index("candidate rows", t.negative, candidates.rows())?;
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in triplets {
        let term = triplet_loss(
            anchors.row(t.anchor),
            candidates.row(t.positive),
            candidates.row(t.negative),
            margin,
        )?;
        if term.loss == 0.0 {
            continue;
        }
        total += term.loss;
        axpy(grad_anchor.row_mut(t.anchor), scale, &term.grad_anchor);
        axpy(grad_candidates.row_mut(t.positive), scale, &term.grad_positive);
        axpy(grad_candidates.row_mut(t.negative), scale, &term.grad_negative);
    }
    Ok(SetLoss {
        loss: total * scale,
        grad_anchor,
        grad_candidates,
    })
}

/// Cross-domain loss: speech anchors against music positives/negatives.
pub fn cross_loss(speech_emb: &Matrix, music_emb: &Matrix, triplets: &[Triplet], margin: f64) -> Result<SetLoss> {
    triplet_set_loss(speech_emb, music_emb, triplets, margin)
}

/// Structure-preserving pair of losses anchored at emotion-tag embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SpLosses {
    pub speech: SetLoss,
    pub music: SetLoss,
}

/// `speech_triplets` and `music_triplets` index `tag_emb` for anchors and the
/// respective domain matrix for positives and negatives. The tag gradients
/// live in `speech.grad_anchor` and `music.grad_anchor`.
pub fn sp_losses(
    tag_emb: &Matrix,
    speech_emb: &Matrix,
    music_emb: &Matrix,
    speech_triplets: &[Triplet],
    music_triplets: &[Triplet],
    margin: f64,
) -> Result<SpLosses> {
    Ok(SpLosses {
        speech: triplet_set_loss(tag_emb, speech_emb, speech_triplets, margin)?,
        music: triplet_set_loss(tag_emb, music_emb, music_triplets, margin)?,
    })
}

/// `w1·cross + w2·sp_speech + w3·sp_music`
pub fn combined_sp_loss(cross: f64, sp_speech: f64, sp_music: f64, weights: [f64; 3]) -> f64 {
    weights[0] * cross + weights[1] * sp_speech + weights[2] * sp_music
}

/// Per-row selection of the `S_y` entries that enter the regularizer: for
/// every distinct value in a row only its first column survives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniqueMask {
    rows: Vec<Vec<bool>>,
}

impl UniqueMask {
    pub fn from_similarities(s_y: &Matrix) -> Self {
        let rows = s_y
            .iter_rows()
            .map(|row| {
                (0..row.len())
                    .map(|j| !row[..j].contains(&row[j]))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    /// Every entry retained.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows: vec![vec![true; cols]; rows],
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.rows[i][j]
    }

    pub fn retained_in_row(&self, i: usize) -> usize {
        self.rows[i].iter().filter(|&&b| b).count()
    }
}

/// `S_y`, `S_z` and the mask for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSimilarities {
    pub s_y: Matrix,
    pub s_z: Matrix,
    pub unique_mask: UniqueMask,
}

impl BatchSimilarities {
    pub fn new(s_y: Matrix, s_z: Matrix, unique_mask: UniqueMask) -> Result<Self> {
        let n = s_y.rows();
        if s_y.shape() != (n, n) || s_z.shape() != (n, n) {
            return Err(Error::shape(
                "BatchSimilarities",
                format!("two {n}x{n} matrices"),
                format!("{:?} and {:?}", s_y.shape(), s_z.shape()),
            ));
        }
        if unique_mask.rows.len() != n || unique_mask.rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("BatchSimilarities", format!("{n}x{n} mask"), "mask of other shape"));
        }
        for (name, m) in [("S_y", &s_y), ("S_z", &s_z)] {
            if m.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("{name} entries must lie in [0, 1]")));
            }
        }
        if (0..n).any(|i| unique_mask.retained_in_row(i) == 0) {
            return Err(Error::Config("unique mask leaves an empty row".into()));
        }
        Ok(Self {
            s_y,
            s_z,
            unique_mask,
        })
    }

    pub fn emosim_loss(&self) -> Result<(f64, Matrix)> {
        emosim_loss(&self.s_y, &self.s_z, &self.unique_mask)
    }
}

/// Mean over rows of the mean squared error between retained `S_z` and `S_y`
/// entries. Returns the loss and `dL/dS_z` (zero outside the mask).
pub fn emosim_loss(s_y: &Matrix, s_z: &Matrix, mask: &UniqueMask) -> Result<(f64, Matrix)> {
    if s_y.shape() != s_z.shape() || mask.rows.len() != s_y.rows() {
        return Err(Error::shape(
            "emosim_loss",
            format!("S_y {:?} matching S_z and mask", s_y.shape()),
            format!("S_z {:?}, mask rows {}", s_z.shape(), mask.rows.len()),
        ));
    }
    let n = s_y.rows();
    let mut grad = Matrix::zeros(n, s_y.cols());
    if n == 0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for i in 0..n {
        let keep = &mask.rows[i];
        if keep.len() != s_y.cols() {
            return Err(Error::shape("emosim_loss", format!("mask row of {}", s_y.cols()), format!("{}", keep.len())));
        }
        let count = keep.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::Config(format!("unique mask row {i} is empty")));
        }
        let mut row_sum = 0.0;
        let scale = 2.0 / (n as f64 * count as f64);
        for j in (0..keep.len()).filter(|&j| keep[j]) {
            let diff = s_z[(i, j)] - s_y[(i, j)];
            row_sum += diff * diff;
            grad[(i, j)] = scale * diff;
        }
        total += row_sum / count as f64;
    }
    Ok((total / n as f64, grad))
}

/// `(1 + cos(z_s_i, z_m_j)) / 2` for every speech/music row pair.
pub fn feature_similarity_matrix(speech_emb: &Matrix, music_emb: &Matrix) -> Result<Matrix> {
    check_same_dim("feature_similarity_matrix", speech_emb, music_emb)?;
    let mut out = Matrix::zeros(speech_emb.rows(), music_emb.rows());
    for i in 0..speech_emb.rows() {
        for j in 0..music_emb.rows() {
            let (cos, _, _) = cosine_similarity_grad(speech_emb.row(i), music_emb.row(j));
            out[(i, j)] = 0.5 * (1.0 + cos);
        }
    }
    Ok(out)
}

/// Chains `dL/dS_z` back onto both embedding matrices.
pub fn feature_similarity_backward(
    speech_emb: &Matrix,
    music_emb: &Matrix,
    grad_s_z: &Matrix,
) -> Result<(Matrix, Matrix)> {
    check_same_dim("feature_similarity_backward", speech_emb, music_emb)?;
    if grad_s_z.shape() != (speech_emb.rows(), music_emb.rows()) {
        return Err(Error::shape(
            "feature_similarity_backward",
            format!("{}x{} gradient", speech_emb.rows(), music_emb.rows()),
            format!("{:?}", grad_s_z.shape()),
        ));
    }
    let mut gs = Matrix::zeros(speech_emb.rows(), speech_emb.cols());
    let mut gm = Matrix::zeros(music_emb.rows(), music_emb.cols());
    for i in 0..speech_emb.rows() {
        for j in 0..music_emb.rows() {
            let g = grad_s_z[(i, j)];
            if g == 0.0 {
                continue;
            }
            let (_, ga, gb) = cosine_similarity_grad(speech_emb.row(i), music_emb.row(j));
            axpy(gs.row_mut(i), 0.5 * g, &ga);
            axpy(gm.row_mut(j), 0.5 * g, &gb);
        }
    }
    Ok((gs, gm))
}

fn check_same_dim(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::shape(op, format!("embedding dim {}", a.cols()), format!("{}", b.cols())));
    }
    Ok(())
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::IndexOutOfRange { what, index, len });
    }
    Ok(())
}

#[inline]
fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
