//! Desk-scale synthetic bundles.
//!
//! Each emotion label gets a class anchor obtained by classical MDS of the
//! label-to-label VA distances, so labels close in VA space sit close in
//! feature space. Anchors are scaled by `separation`, rotated by a random
//! orthogonal matrix per domain (speech and music encoders do not share a
//! basis), and items are drawn from isotropic Gaussians around them.
//!
//! When the speech taxonomy contains `neutral`, music gains a `noise` class
//! whose VA coordinate equals neutral's, so neutral speech pairs with noise
//! through the ordinary most-similar mapping.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::bundle::{DatasetBundle, Split, SplitManifest};
use super::features::{write_file, Domain, FeatureFile, FeatureRecord, Modality};
use crate::emotion_space::{Lexicon, Taxonomy, VAPoint, NEUTRAL_LABEL};
use crate::error::{Error, Result};

pub const NOISE_LABEL: &str = "noise";

/// Fixture lexicon bundled with the crate.
pub const DEFAULT_LEXICON: &str = include_str!("../../fixtures/lexicon.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub speech_labels: Vec<String>,
    pub music_labels: Vec<String>,
    /// Coordinates for every label (and `neutral`, when used).
    pub lexicon: Lexicon,
    /// Items per class in each domain.
    pub per_class: usize,
    pub dim: usize,
    /// Multiplier on the MDS anchor coordinates.
    pub separation: f64,
    /// Per-coordinate standard deviation around each anchor.
    pub noise_std: f64,
    pub tag_dim: usize,
    /// Width of an additional text-modality view of the speech items; 0 disables it.
    pub text_dim: usize,
    /// Add a music `noise` class paired with neutral speech.
    pub noise_class: bool,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Apply an independent random rotation to each domain's feature space.
    pub rotate_domains: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let words = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect();
        Self {
            speech_labels: words(&["angry", "happy", "sad", "neutral"]),
            music_labels: words(&["happy", "funny", "sad", "tender", "exciting", "angry", "scary"]),
            lexicon: Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon parses"),
            per_class: 100,
            dim: 32,
            separation: 1000.0,
            noise_std: 1.0,
            tag_dim: 16,
            text_dim: 0,
            noise_class: true,
            valid_fraction: 0.15,
            test_fraction: 0.15,
            rotate_domains: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.speech_labels.is_empty() || self.music_labels.is_empty() {
            return Err(Error::Config("synthetic spec needs at least one speech and one music class".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("synthetic feature dim must be positive".into()));
        }
        if self.per_class == 0 {
            return Err(Error::Config("synthetic per-class count must be positive".into()));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) || !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("separation and noise std must be finite and non-negative".into()));
        }
        let f = self.valid_fraction + self.test_fraction;
        if !(0.0..1.0).contains(&f) || self.valid_fraction < 0.0 || self.test_fraction < 0.0 {
            return Err(Error::Config("valid + test fractions must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn with_noise(&self) -> bool {
        self.noise_class && self.speech_labels.iter().any(|l| l == NEUTRAL_LABEL)
    }

    /// Lexicon restricted to the labels in use, with `noise` placed on neutral.
    pub fn effective_lexicon(&self) -> Result<Lexicon> {
        let mut words: Vec<String> = self.speech_labels.clone();
        words.extend(self.music_labels.iter().cloned());
        let mut coords = self.lexicon.resolve(&words)?;
        if self.with_noise() {
            let neutral = coords[NEUTRAL_LABEL];
            coords.insert(NOISE_LABEL.to_string(), neutral);
        }
        let text: String = coords
            .iter()
            .map(|(w, p)| format!("{w} {} {}\n", p.valence, p.arousal))
            .collect();
        Lexicon::parse(&text)
    }
}

/// Output of [`gen_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub bundle: DatasetBundle,
    pub lexicon: Lexicon,
    /// Text-modality view of the speech items, when requested.
    pub speech_text: Vec<FeatureRecord>,
    /// Class anchors per domain, keyed by label.
    pub speech_anchors: BTreeMap<String, Vec<f64>>,
    pub music_anchors: BTreeMap<String, Vec<f64>>,
}

pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticBundle> {
    spec.validate()?;
    let lexicon = spec.effective_lexicon()?;
    let speech_taxonomy = Taxonomy::new("speech", spec.speech_labels.clone(), &lexicon)?;
    let mut music_labels = spec.music_labels.clone();
    if spec.with_noise() && !music_labels.iter().any(|l| l == NOISE_LABEL) {
        music_labels.push(NOISE_LABEL.to_string());
    }
    let music_taxonomy = Taxonomy::new("music", music_labels, &lexicon)?;

    // anchors for the union of labels, in a fixed (sorted) order
    let union: BTreeMap<String, VAPoint> = speech_taxonomy
        .entries()
        .chain(music_taxonomy.entries())
        .map(|(l, p)| (l.to_string(), p))
        .collect();
    let points: Vec<VAPoint> = union.values().copied().collect();
    let base = classical_mds(&points, spec.dim);

    let rng_for = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    let mut rot_rng = rng_for(0);
    let speech_rot = random_rotation(spec.dim, spec.rotate_domains, &mut rot_rng);
    let music_rot = random_rotation(spec.dim, spec.rotate_domains, &mut rot_rng);
    let text_rot = random_rotation(spec.text_dim.max(1), true, &mut rot_rng);

    let anchors_in = |rot: &[Vec<f64>], dim: usize| -> BTreeMap<String, Vec<f64>> {
        union
            .keys()
            .zip(&base)
            .map(|(label, coords)| {
                let mut padded = vec![0.0; dim];
                for (p, c) in padded.iter_mut().zip(coords) {
                    *p = spec.separation * c;
                }
                (label.clone(), apply_rotation(rot, &padded))
            })
            .collect()
    };
    let speech_anchors = anchors_in(&speech_rot, spec.dim);
    let music_anchors = anchors_in(&music_rot, spec.dim);

    let mut speech_rng = rng_for(1);
    let speech = draw_items(
        "s",
        Domain::Speech,
        Modality::Audio,
        speech_taxonomy.labels(),
        &speech_anchors,
        spec.per_class,
        spec.noise_std,
        &mut speech_rng,
    );
    let mut music_rng = rng_for(2);
    let music = draw_items(
        "m",
        Domain::Music,
        Modality::Audio,
        music_taxonomy.labels(),
        &music_anchors,
        spec.per_class,
        spec.noise_std,
        &mut music_rng,
    );

    let mut tag_rng = rng_for(3);
    let tags = if spec.tag_dim > 0 {
        union
            .keys()
            .map(|label| FeatureRecord {
                id: format!("t_{label}"),
                domain: Domain::Tag,
                modality: Modality::Tag,
                vector: (0..spec.tag_dim).map(|_| tag_rng.sample(StandardNormal)).collect(),
                label: label.clone(),
            })
            .collect()
    } else {
        Vec::new()
    };

    let speech_text = if spec.text_dim > 0 {
        let text_anchors: BTreeMap<String, Vec<f64>> = union
            .keys()
            .zip(&classical_mds(&points, spec.text_dim))
            .map(|(label, coords)| {
                let mut padded = vec![0.0; spec.text_dim];
                for (p, c) in padded.iter_mut().zip(coords) {
                    *p = spec.separation * c;
                }
                (label.clone(), apply_rotation(&text_rot, &padded))
            })
            .collect();
        let mut text_rng = rng_for(4);
        speech
            .iter()
            .map(|r| {
                let anchor = &text_anchors[&r.label];
                FeatureRecord {
                    id: r.id.clone(),
                    domain: Domain::Speech,
                    modality: Modality::Text,
                    vector: anchor
                        .iter()
                        .map(|a| a + 2.0 * spec.noise_std * text_rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    label: r.label.clone(),
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut split_rng = rng_for(5);
    let mut splits = SplitManifest::default();
    for records in [&speech, &music] {
        assign_splits(records, spec, &mut split_rng, &mut splits)?;
    }

    let bundle = DatasetBundle {
        speech,
        music,
        tags,
        speech_taxonomy,
        music_taxonomy,
        splits,
    };
    bundle.validate()?;
    // every speech label must have music under its mapped label
    let space = bundle.emotion_space()?;
    for label in bundle.speech_taxonomy.labels() {
        let target = space.mapped(label)?;
        if !bundle.music.iter().any(|r| r.label == target) {
            return Err(Error::NoItemsForLabel(target.to_string()));
        }
    }
    Ok(SyntheticBundle {
        bundle,
        lexicon,
        speech_text,
        speech_anchors,
        music_anchors,
    })
}

#[allow(clippy::too_many_arguments)]
fn draw_items(
    prefix: &str,
    domain: Domain,
    modality: Modality,
    labels: &[String],
    anchors: &BTreeMap<String, Vec<f64>>,
    per_class: usize,
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<FeatureRecord> {
    let mut out = Vec::with_capacity(labels.len() * per_class);
    for label in labels {
        let anchor = &anchors[label];
        for _ in 0..per_class {
            let vector = anchor
                .iter()
                .map(|a| a + noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            out.push(FeatureRecord {
                id: format!("{prefix}{:05}", out.len()),
                domain,
                modality,
                vector,
                label: label.clone(),
            });
        }
    }
    out
}

/// Stratified split: per label, shuffled items go to test, then valid, then train.
fn assign_splits(
    records: &[FeatureRecord],
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
    splits: &mut SplitManifest,
) -> Result<()> {
    let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        by_label.entry(r.label.as_str()).or_default().push(r.id.as_str());
    }
    for ids in by_label.values_mut() {
        ids.shuffle(rng);
        let n = ids.len();
        let n_test = (n as f64 * spec.test_fraction).round() as usize;
        let n_valid = (n as f64 * spec.valid_fraction).round() as usize;
        for (k, id) in ids.iter().enumerate() {
            let split = if k < n_test {
                Split::Test
            } else if k < n_test + n_valid {
                Split::Valid
            } else {
                Split::Train
            };
            splits.insert(*id, split)?;
        }
    }
    Ok(())
}

/// Classical MDS of VA points from their pairwise dissimilarities
/// `1 − va_similarity = d / √2`. Returns up to `max_dims` coordinates per point.
pub fn classical_mds(points: &[VAPoint], max_dims: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d2 = DMatrix::from_fn(n, n, |i, j| {
        let d = points[i].distance(&points[j]) / std::f64::consts::SQRT_2;
        d * d
    });
    let centering = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let gram = -0.5 * &centering * d2 * &centering;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] > 1e-12 * top.max(1e-300))
        .take(max_dims)
        .collect();
    (0..n)
        .map(|i| {
            kept.iter()
                .map(|&k| {
                    // fix the eigenvector sign so the output does not depend on the solver
                    let col = eig.eigenvectors.column(k);
                    let pivot = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                    let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                    sign * col[i] * eig.eigenvalues[k].sqrt()
                })
                .collect()
        })
        .collect()
}

/// Haar-ish random orthogonal matrix via Gram-Schmidt on Gaussian columns.
fn random_rotation(dim: usize, enabled: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    // always consume the same draws so toggling rotation leaves other streams intact
    let draws: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    if !enabled {
        return (0..dim)
            .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
    }
    for mut v in draws {
        for c in &cols {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= proj * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|x| x / n).collect());
    }
    cols
}

/// `Σ_k x_k · col_k`
fn apply_rotation(cols: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let dim = x.len();
    let mut out = vec![0.0; dim];
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(&cols[k]) {
            *o += xk * c;
        }
    }
    out
}

/// Writes the bundle in the conventional directory layout, plus a ready-to-use
/// run configuration (`config.toml`).
pub fn write_bundle(dir: &Path, synth: &SyntheticBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = &synth.bundle;
    let lexicon_text: String = std::iter::once("# word valence arousal\n".to_string())
        .chain(synth.lexicon.iter().map(|(w, p)| format!("{w} {} {}\n", p.valence, p.arousal)))
        .collect();
    write_file(&dir.join("lexicon.txt"), lexicon_text.as_bytes())?;
    write_file(&dir.join("speech_taxonomy.txt"), b.speech_taxonomy.to_text().as_bytes())?;
    write_file(&dir.join("music_taxonomy.txt"), b.music_taxonomy.to_text().as_bytes())?;
    write_file(&dir.join("splits.tsv"), b.splits.to_text().as_bytes())?;
    FeatureFile::new(b.speech_dim(), "speech", Domain::Speech, Modality::Audio, b.speech.clone())?
        .write_binary(&dir.join("speech_audio.emf"))?;
    if !synth.speech_text.is_empty() {
        let dim = synth.speech_text[0].vector.len();
        FeatureFile::new(dim, "speech", Domain::Speech, Modality::Text, synth.speech_text.clone())?
            .write_binary(&dir.join("speech_text.emf"))?;
    }
    FeatureFile::new(b.music_dim(), "music", Domain::Music, Modality::Audio, b.music.clone())?
        .write_binary(&dir.join("music.emf"))?;
    if !b.tags.is_empty() {
        FeatureFile::new(b.tag_dim(), "tags", Domain::Tag, Modality::Tag, b.tags.clone())?
            .write_binary(&dir.join("tags.emf"))?;
    }
    let mut config = String::from(
        "# Run configuration for this synthetic bundle; paths are relative to this file.\n\
         [data]\n\
         speech_features = [\"speech_audio.emf\"]\n\
         music_features = \"music.emf\"\n\
         speech_taxonomy = \"speech_taxonomy.txt\"\n\
         music_taxonomy = \"music_taxonomy.txt\"\n\
         lexicon = \"lexicon.txt\"\n\
         splits = \"splits.tsv\"\n",
    );
    if !b.tags.is_empty() {
        config.push_str("tag_features = \"tags.emf\"\n");
    }
    write_file(&dir.join("config.toml"), config.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;

    #[test]
    fn degenerate_specs_are_rejected() {
        let spec = SyntheticSpec {
            music_labels: vec![],
            ..Default::default()
        };
        assert!(gen_synthetic(&spec, 0).is_err());
        let spec = SyntheticSpec {
            dim: 0,
            ..Default::default()
        };
        assert!(gen_synthetic(&spec, 0).is_err());
    }

    #[test]
    fn class_counts() {
        let spec = SyntheticSpec {
            speech_labels: vec!["happy".into(), "sad".into()],
            per_class: 10,
            ..Default::default()
        };
        let s = gen_synthetic(&spec, 3).unwrap();
        assert_eq!(s.bundle.music.len(), 70);
        assert_eq!(s.bundle.speech.len(), 20);

        let with_noise = gen_synthetic(&SyntheticSpec { per_class: 10, ..Default::default() }, 3).unwrap();
        assert_eq!(with_noise.bundle.music.len(), 80);
        assert!(with_noise.bundle.music_taxonomy.contains(NOISE_LABEL));
    }

    fn nearest_anchor(x: &[f64], anchors: &BTreeMap<String, Vec<f64>>, labels: &[String]) -> String {
        let dist = |a: &[f64]| x.iter().zip(a).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        labels
            .iter()
            .min_by(|a, b| dist(&anchors[*a]).total_cmp(&dist(&anchors[*b])))
            .unwrap()
            .clone()
    }

    #[test]
    fn near_noiseless_classes_are_separable() {
        let spec = SyntheticSpec {
            per_class: 50,
            separation: 100.0,
            noise_std: 0.01,
            ..Default::default()
        };
        let s = gen_synthetic(&spec, 11).unwrap();
        let b = &s.bundle;
        assert_eq!(b.speech.len(), 200);
        for r in &b.speech {
            assert_eq!(nearest_anchor(&r.vector, &s.speech_anchors, b.speech_taxonomy.labels()), r.label);
        }
        let music_draw: Vec<_> = b.music.iter().step_by(2).collect();
        assert_eq!(music_draw.len(), 200);
        for r in music_draw {
            assert_eq!(nearest_anchor(&r.vector, &s.music_anchors, b.music_taxonomy.labels()), r.label);
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let spec = SyntheticSpec {
            per_class: 5,
            text_dim: 4,
            ..Default::default()
        };
        let a = gen_synthetic(&spec, 42).unwrap();
        let b = gen_synthetic(&spec, 42).unwrap();
        assert_eq!(a.bundle.speech, b.bundle.speech);
        assert_eq!(a.bundle.music, b.bundle.music);
        assert_eq!(a.bundle.tags, b.bundle.tags);
        assert_eq!(a.speech_text, b.speech_text);
        assert_eq!(a.bundle.splits, b.bundle.splits);
        let c = gen_synthetic(&spec, 43).unwrap();
        assert_ne!(a.bundle.speech, c.bundle.speech);
    }

    #[test]
    fn neutral_pairs_with_noise() {
        let s = gen_synthetic(&SyntheticSpec { per_class: 3, ..Default::default() }, 1).unwrap();
        let space = s.bundle.emotion_space().unwrap();
        assert_eq!(space.mapped("neutral").unwrap(), NOISE_LABEL);
        assert_eq!(
            s.lexicon.get(NOISE_LABEL),
            s.lexicon.get(NEUTRAL_LABEL)
        );
    }

    #[test]
    fn mds_preserves_va_distances() {
        let lex = Lexicon::parse(DEFAULT_LEXICON).unwrap();
        let points: Vec<VAPoint> = lex.iter().map(|(_, p)| p).collect();
        let coords = classical_mds(&points, 32);
        assert!(coords[0].len() <= 2);
        for i in 0..points.len() {
            for j in 0..points.len() {
                let want = points[i].distance(&points[j]) / std::f64::consts::SQRT_2;
                let diff: Vec<f64> = coords[i].iter().zip(&coords[j]).map(|(a, b)| a - b).collect();
                assert!((norm(&diff) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random_rotation(6, true, &mut rng);
        for i in 0..6 {
            for j in 0..6 {
                let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn splits_are_stratified() {
        let s = gen_synthetic(&SyntheticSpec { per_class: 20, ..Default::default() }, 9).unwrap();
        let b = &s.bundle;
        for label in b.music_taxonomy.labels() {
            let count = |split| {
                b.music_indices(split)
                    .into_iter()
                    .filter(|&i| &b.music[i].label == label)
                    .count()
            };
            assert_eq!(count(Split::Test), 3);
            assert_eq!(count(Split::Valid), 3);
            assert_eq!(count(Split::Train), 14);
        }
    }
}
