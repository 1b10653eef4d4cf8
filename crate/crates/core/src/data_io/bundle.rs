use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::features::{FeatureFile, FeatureRecord, Modality};
use crate::emotion_space::{EmotionSpace, Lexicon, Taxonomy};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::format("split", format!("unknown split `{s}`"))),
        }
    }
}

/// `id<TAB>split` assignments. An id appears at most once, so splits are disjoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitManifest {
    assignments: BTreeMap<String, Split>,
}

impl SplitManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut assignments = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, split) = line.split_once('\t').ok_or_else(|| {
                Error::format("split manifest", format!("line {}: expected `id<TAB>split`", lineno + 1))
            })?;
            let split: Split = split.trim().parse()?;
            if assignments.insert(id.to_string(), split).is_some() {
                return Err(Error::Record {
                    id: id.to_string(),
                    reason: "assigned to more than one split".into(),
                });
            }
        }
        Ok(Self { assignments })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, id: impl Into<String>, split: Split) -> Result<()> {
        let id = id.into();
        if self.assignments.contains_key(&id) {
            return Err(Error::Record {
                id,
                reason: "assigned to more than one split".into(),
            });
        }
        self.assignments.insert(id, split);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignments.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.assignments.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, split) in &self.assignments {
            s.push_str(id);
            s.push('\t');
            s.push_str(split.name());
            s.push('\n');
        }
        s
    }
}

/// Concatenates one item's vectors across modalities, in the order given.
/// A single listed modality passes the record through unchanged.
pub fn fuse_modalities(records_by_modality: &[(Modality, &[FeatureRecord])], id: &str) -> Result<FeatureRecord> {
    let mut parts = Vec::with_capacity(records_by_modality.len());
    for (modality, records) in records_by_modality {
        let rec = records.iter().find(|r| r.id == id).ok_or_else(|| Error::Record {
            id: id.to_string(),
            reason: format!("missing from the {modality} features"),
        })?;
        parts.push(rec);
    }
    let first = *parts.first().ok_or_else(|| Error::Config("no modalities to fuse".into()))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    let mut vector = Vec::with_capacity(parts.iter().map(|r| r.vector.len()).sum());
    for rec in &parts {
        if rec.label != first.label {
            return Err(Error::Record {
                id: id.to_string(),
                reason: format!(
                    "label disagreement across modalities (`{}` vs `{}`)",
                    first.label, rec.label
                ),
            });
        }
        vector.extend_from_slice(&rec.vector);
    }
    Ok(FeatureRecord {
        id: id.to_string(),
        domain: first.domain,
        modality: Modality::Fusion,
        vector,
        label: first.label.clone(),
    })
}

/// Fuses every record of the first file with its counterparts in the others.
pub fn fuse_files(files: &[FeatureFile]) -> Result<Vec<FeatureRecord>> {
    let first = files.first().ok_or_else(|| Error::Config("no speech feature files".into()))?;
    if files.len() == 1 {
        return Ok(first.records.clone());
    }
    if let Some(extra) = files[1..]
        .iter()
        .find(|f| f.records.len() != first.records.len())
    {
        return Err(Error::Config(format!(
            "modality files disagree on record count ({} vs {})",
            first.records.len(),
            extra.records.len()
        )));
    }
    let lookup: Vec<(Modality, &[FeatureRecord])> =
        files.iter().map(|f| (f.modality, f.records.as_slice())).collect();
    first
        .records
        .iter()
        .map(|r| fuse_modalities(&lookup, &r.id))
        .collect()
}

/// Locations of every input a training or evaluation run reads.
#[derive(Debug, Clone, PartialEq)]
pub struct BundlePaths {
    /// One file per speech modality; several files are late-fused in order.
    pub speech_features: Vec<PathBuf>,
    pub music_features: PathBuf,
    pub tag_features: Option<PathBuf>,
    pub speech_taxonomy: PathBuf,
    pub music_taxonomy: PathBuf,
    pub lexicon: PathBuf,
    pub splits: PathBuf,
}

impl BundlePaths {
    /// Conventional file names inside a generated bundle directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            speech_features: vec![dir.join("speech_audio.emf")],
            music_features: dir.join("music.emf"),
            tag_features: Some(dir.join("tags.emf")),
            speech_taxonomy: dir.join("speech_taxonomy.txt"),
            music_taxonomy: dir.join("music_taxonomy.txt"),
            lexicon: dir.join("lexicon.txt"),
            splits: dir.join("splits.tsv"),
        }
    }

    pub fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = self.speech_features.iter().map(PathBuf::as_path).collect();
        v.push(&self.music_features);
        if let Some(t) = &self.tag_features {
            v.push(t);
        }
        v.extend([
            self.speech_taxonomy.as_path(),
            self.music_taxonomy.as_path(),
            self.lexicon.as_path(),
            self.splits.as_path(),
        ]);
        v
    }
}

/// Speech, music and tag records with their taxonomies and split assignment.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub speech: Vec<FeatureRecord>,
    pub music: Vec<FeatureRecord>,
    pub tags: Vec<FeatureRecord>,
    pub speech_taxonomy: Taxonomy,
    pub music_taxonomy: Taxonomy,
    pub splits: SplitManifest,
}

impl DatasetBundle {
    pub fn load(paths: &BundlePaths) -> Result<Self> {
        let lexicon = Lexicon::load(&paths.lexicon)?;
        let speech_taxonomy = Taxonomy::load(&paths.speech_taxonomy, &lexicon)?;
        let music_taxonomy = Taxonomy::load(&paths.music_taxonomy, &lexicon)?;
        let speech_files = paths
            .speech_features
            .iter()
            .map(|p| FeatureFile::read(p))
            .collect::<Result<Vec<_>>>()?;
        let speech = fuse_files(&speech_files)?;
        let music = FeatureFile::read(&paths.music_features)?.records;
        let tags = match &paths.tag_features {
            Some(p) => FeatureFile::read(p)?.records,
            None => Vec::new(),
        };
        let splits = SplitManifest::load(&paths.splits)?;
        let bundle = Self {
            speech,
            music,
            tags,
            speech_taxonomy,
            music_taxonomy,
            splits,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Labels belong to their taxonomies, ids are unique across domains,
    /// widths are consistent and every manifest id exists.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for (records, taxonomy) in [(&self.speech, &self.speech_taxonomy), (&self.music, &self.music_taxonomy)] {
            let dim = records.first().map_or(0, |r| r.vector.len());
            for r in records.iter() {
                if !taxonomy.contains(&r.label) {
                    return Err(Error::Record {
                        id: r.id.clone(),
                        reason: format!("label `{}` not in taxonomy `{}`", r.label, taxonomy.name()),
                    });
                }
                if r.vector.len() != dim {
                    return Err(Error::Record {
                        id: r.id.clone(),
                        reason: format!("{} values, expected {dim}", r.vector.len()),
                    });
                }
                if !ids.insert(r.id.as_str()) {
                    return Err(Error::Record {
                        id: r.id.clone(),
                        reason: "id used by more than one item".into(),
                    });
                }
            }
        }
        let tag_dim = self.tags.first().map_or(0, |r| r.vector.len());
        if let Some(r) = self.tags.iter().find(|r| r.vector.len() != tag_dim) {
            return Err(Error::Record {
                id: r.id.clone(),
                reason: format!("tag vector of {} values, expected {tag_dim}", r.vector.len()),
            });
        }
        if let Some(missing) = self.splits.ids().find(|id| !ids.contains(id)) {
            return Err(Error::Record {
                id: missing.to_string(),
                reason: "listed in the split manifest but absent from the features".into(),
            });
        }
        Ok(())
    }

    pub fn emotion_space(&self) -> Result<EmotionSpace> {
        EmotionSpace::new(self.speech_taxonomy.clone(), self.music_taxonomy.clone())
    }

    pub fn speech_dim(&self) -> usize {
        self.speech.first().map_or(0, |r| r.vector.len())
    }

    pub fn music_dim(&self) -> usize {
        self.music.first().map_or(0, |r| r.vector.len())
    }

    pub fn tag_dim(&self) -> usize {
        self.tags.first().map_or(0, |r| r.vector.len())
    }

    pub fn speech_indices(&self, split: Split) -> Vec<usize> {
        indices_in(&self.speech, &self.splits, split)
    }

    pub fn music_indices(&self, split: Split) -> Vec<usize> {
        indices_in(&self.music, &self.splits, split)
    }

    /// Word vector for an emotion tag, looked up by label.
    pub fn tag_vector(&self, label: &str) -> Result<&[f64]> {
        self.tags
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.vector.as_slice())
            .ok_or_else(|| Error::MissingTagVector(label.to_string()))
    }

    pub fn speech_matrix(&self, indices: &[usize]) -> Matrix {
        rows_of(&self.speech, indices)
    }

    pub fn music_matrix(&self, indices: &[usize]) -> Matrix {
        rows_of(&self.music, indices)
    }

    /// Order-sensitive FNV-1a digest of every feature value, for checking that
    /// training leaves inputs untouched.
    pub fn feature_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for r in self.speech.iter().chain(&self.music).chain(&self.tags) {
            for b in r.id.bytes().chain(r.vector.iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

fn indices_in(records: &[FeatureRecord], splits: &SplitManifest, split: Split) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| splits.get(&r.id) == Some(split))
        .map(|(i, _)| i)
        .collect()
}

pub(crate) fn rows_of(records: &[FeatureRecord], indices: &[usize]) -> Matrix {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut data = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        data.extend_from_slice(&records[i].vector);
    }
    Matrix::from_vec(indices.len(), dim, data).expect("bundle widths validated")
}
