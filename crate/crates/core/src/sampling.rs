//! Triplet construction across mismatched speech and music taxonomies.
//!
//! A speech anchor's positive is a music item carrying the anchor label's
//! most-similar music label; its negative is any music item with another
//! label, drawn uniformly.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_io::FeatureRecord;
use crate::emotion_space::EmotionSpace;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objectives::{Triplet, UniqueMask};

/// One batch of cross-domain triplets. Indices refer to the speech and music
/// record slices the sampler was built over.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Speech items labelled differently from each anchor, drawn only when
    /// structure-preserving terms need them.
    pub speech_negatives: Option<Vec<usize>>,
    /// `S_y[i][j]`: VA similarity of anchor i's label and positive j's label.
    pub s_y: Matrix,
    pub unique_mask: UniqueMask,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Triplets over the batch-local embedding layout used by the trainer:
    /// anchors are rows `0..N` of the speech embeddings, positives rows `0..N`
    /// and negatives rows `N..2N` of the stacked music embeddings.
    pub fn local_triplets(&self) -> Vec<Triplet> {
        let n = self.len();
        (0..n).map(|i| Triplet::new(i, i, n + i)).collect()
    }
}

/// Pre-indexed pools for repeated sampling over fixed item subsets.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    speech: &'a [FeatureRecord],
    speech_pool: Vec<usize>,
    /// Per speech item: its label's index in the speech taxonomy.
    speech_label: Vec<usize>,
    /// Per music item: its label's index in the music taxonomy.
    music_label: Vec<usize>,
    /// Per speech label: music items under the mapped label, and all others.
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    /// Per speech label: speech pool items with a different label.
    speech_negatives: Vec<Vec<usize>>,
    /// Per speech label: name of its mapped music label.
    targets: Vec<String>,
    /// Speech-label × music-label VA similarities.
    label_sim: Matrix,
}

impl<'a> TripletSampler<'a> {
    /// `speech_pool` and `music_pool` select the usable items (typically one
    /// split); anchors, positives and negatives are drawn from them only.
    pub fn new(
        space: &EmotionSpace,
        speech: &'a [FeatureRecord],
        speech_pool: &[usize],
        music: &[FeatureRecord],
        music_pool: &[usize],
    ) -> Result<Self> {
        let label_index = |records: &[FeatureRecord], taxonomy: &crate::emotion_space::Taxonomy| {
            records
                .iter()
                .map(|r| {
                    taxonomy.index_of(&r.label).ok_or_else(|| Error::UnknownLabel {
                        label: r.label.clone(),
                        taxonomy: taxonomy.name().to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        };
        let speech_label = label_index(speech, &space.speech)?;
        let music_label = label_index(music, &space.music)?;
        for &i in speech_pool {
            check_index("speech items", i, speech.len())?;
        }
        for &j in music_pool {
            check_index("music items", j, music.len())?;
        }
        let mut distinct: Vec<usize> = music_pool.iter().map(|&j| music_label[j]).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::Config(format!(
                "triplet sampling needs music items under at least 2 labels, found {}",
                distinct.len()
            )));
        }

        let n_speech_labels = space.speech.len();
        let mut positives = vec![Vec::new(); n_speech_labels];
        let mut negatives = vec![Vec::new(); n_speech_labels];
        let mut speech_negatives = vec![Vec::new(); n_speech_labels];
        let mut targets = Vec::with_capacity(n_speech_labels);
        let mut used = vec![false; n_speech_labels];
        for &i in speech_pool {
            used[speech_label[i]] = true;
        }
        for (s, label) in space.speech.labels().iter().enumerate() {
            let target_label = space.mapped(label)?;
            let target = space.music.index_of(target_label).expect("mapping targets the music taxonomy");
            targets.push(target_label.to_string());
            for &j in music_pool {
                if music_label[j] == target {
                    positives[s].push(j);
                } else {
                    negatives[s].push(j);
                }
            }
            if used[s] && positives[s].is_empty() {
                return Err(Error::NoItemsForLabel(space.music.labels()[target].clone()));
            }
            speech_negatives[s] = speech_pool.iter().copied().filter(|&i| speech_label[i] != s).collect();
        }

        Ok(Self {
            speech,
            speech_pool: speech_pool.to_vec(),
            speech_label,
            music_label,
            positives,
            negatives,
            speech_negatives,
            targets,
            label_sim: space.similarity_matrix().values,
        })
    }

    pub fn speech_pool(&self) -> &[usize] {
        &self.speech_pool
    }

    /// One triplet per given anchor. Per anchor the draws are: positive,
    /// negative, then (if requested) a speech negative.
    pub fn sample_for_anchors<R: Rng + ?Sized>(
        &self,
        anchors: &[usize],
        with_speech_negatives: bool,
        rng: &mut R,
    ) -> Result<TripletBatch> {
        let n = anchors.len();
        let mut positives = Vec::with_capacity(n);
        let mut negatives = Vec::with_capacity(n);
        let mut speech_negatives = Vec::with_capacity(if with_speech_negatives { n } else { 0 });
        for &a in anchors {
            check_index("speech items", a, self.speech.len())?;
            let s = self.speech_label[a];
            let pos_pool = &self.positives[s];
            if pos_pool.is_empty() {
                return Err(Error::NoItemsForLabel(self.targets[s].clone()));
            }
            positives.push(pos_pool[rng.random_range(0..pos_pool.len())]);
            let neg_pool = &self.negatives[s];
            negatives.push(neg_pool[rng.random_range(0..neg_pool.len())]);
            if with_speech_negatives {
                let pool = &self.speech_negatives[s];
                if pool.is_empty() {
                    return Err(Error::Config(format!(
                        "no speech item with a label other than `{}` for structure-preserving negatives",
                        self.speech[a].label
                    )));
                }
                speech_negatives.push(pool[rng.random_range(0..pool.len())]);
            }
        }
        let mut s_y = Matrix::zeros(n, n);
        for (i, &a) in anchors.iter().enumerate() {
            for (j, &p) in positives.iter().enumerate() {
                s_y[(i, j)] = self.label_sim[(self.speech_label[a], self.music_label[p])];
            }
        }
        let unique_mask = UniqueMask::from_similarities(&s_y);
        Ok(TripletBatch {
            anchors: anchors.to_vec(),
            positives,
            negatives,
            speech_negatives: with_speech_negatives.then_some(speech_negatives),
            s_y,
            unique_mask,
        })
    }

    /// `n` anchors drawn uniformly with replacement from the speech pool.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, with_speech_negatives: bool, rng: &mut R) -> Result<TripletBatch> {
        if self.speech_pool.is_empty() {
            return Err(Error::Config("no speech items to sample anchors from".into()));
        }
        let anchors: Vec<usize> = (0..n)
            .map(|_| self.speech_pool[rng.random_range(0..self.speech_pool.len())])
            .collect();
        self.sample_for_anchors(&anchors, with_speech_negatives, rng)
    }

    /// Anchor order for one epoch: the speech pool shuffled once.
    pub fn epoch_order<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut order = self.speech_pool.clone();
        order.shuffle(rng);
        order
    }

    /// Every pool anchor once, in shuffled order, cut into batches of
    /// `batch_size`; the final short batch is kept.
    pub fn epoch_batches<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        with_speech_negatives: bool,
        rng: &mut R,
    ) -> Result<Vec<TripletBatch>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.speech_pool.is_empty() {
            return Err(Error::Config("no speech items to build batches from".into()));
        }
        let order = self.epoch_order(rng);
        order
            .chunks(batch_size)
            .map(|chunk| self.sample_for_anchors(chunk, with_speech_negatives, rng))
            .collect()
    }
}

/// `n` triplets over all given items.
pub fn sample_triplets<R: Rng + ?Sized>(
    space: &EmotionSpace,
    speech_items: &[FeatureRecord],
    music_items: &[FeatureRecord],
    rng: &mut R,
    n: usize,
) -> Result<TripletBatch> {
    let speech_pool: Vec<usize> = (0..speech_items.len()).collect();
    let music_pool: Vec<usize> = (0..music_items.len()).collect();
    TripletSampler::new(space, speech_items, &speech_pool, music_items, &music_pool)?.sample(n, false, rng)
}

/// One epoch of batches over all given items.
pub fn epoch_batches<R: Rng + ?Sized>(
    space: &EmotionSpace,
    speech_items: &[FeatureRecord],
    music_items: &[FeatureRecord],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<TripletBatch>> {
    let speech_pool: Vec<usize> = (0..speech_items.len()).collect();
    let music_pool: Vec<usize> = (0..music_items.len()).collect();
    TripletSampler::new(space, speech_items, &speech_pool, music_items, &music_pool)?
        .epoch_batches(batch_size, false, rng)
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::IndexOutOfRange { what, index, len });
    }
    Ok(())
}
