//! Valence-arousal coordinates for emotion labels and the cross-taxonomy
//! similarity used to bridge speech and music vocabularies.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const NEUTRAL_LABEL: &str = "neutral";
pub const NEUTRAL_FALLBACK: VAPoint = VAPoint {
    valence: 0.5,
    arousal: 0.5,
};

/// A point in the unit valence-arousal square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VAPoint {
    pub valence: f64,
    pub arousal: f64,
}

impl VAPoint {
    pub fn new(valence: f64, arousal: f64) -> Result<Self> {
        for (name, v) in [("valence", valence), ("arousal", arousal)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format("VA point", format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(Self { valence, arousal })
    }

    pub fn distance(&self, other: &VAPoint) -> f64 {
        let dv = self.valence - other.valence;
        let da = self.arousal - other.arousal;
        (dv * dv + da * da).sqrt()
    }
}

/// `1 − d / √2`: 1 for coincident points, 0 for opposite corners of the unit square.
pub fn va_similarity(a: &VAPoint, b: &VAPoint) -> f64 {
    (1.0 - a.distance(b) / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Parsed `word valence arousal [dominance]` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, VAPoint>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::format(
                    "lexicon",
                    format!("line {}: expected `word valence arousal [dominance]`", lineno + 1),
                ));
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::format("lexicon", format!("line {}: `{s}` is not a number", lineno + 1))
                })
            };
            let point = VAPoint::new(num(fields[1])?, num(fields[2])?)
                .map_err(|e| Error::format("lexicon", format!("line {}: {e}", lineno + 1)))?;
            if fields.len() == 4 {
                num(fields[3])?;
            }
            if entries.insert(fields[0].to_string(), point).is_some() {
                log::warn!(
                    "lexicon line {}: duplicate word `{}`, keeping the later entry",
                    lineno + 1,
                    fields[0]
                );
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, word: &str) -> Option<VAPoint> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, VAPoint)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Coordinates for each requested word. `neutral` falls back to the
    /// centre of the square when absent; any other missing word is an error.
    pub fn resolve(&self, words: &[String]) -> Result<BTreeMap<String, VAPoint>> {
        let mut out = BTreeMap::new();
        for word in words {
            let point = match self.get(word) {
                Some(p) => p,
                None if word == NEUTRAL_LABEL => {
                    log::warn!("`neutral` missing from lexicon; using (0.5, 0.5)");
                    NEUTRAL_FALLBACK
                }
                None => return Err(Error::MissingLexiconWord(word.clone())),
            };
            out.insert(word.clone(), point);
        }
        Ok(out)
    }
}

/// Reads a lexicon file and resolves the requested words.
pub fn load_lexicon(path: &Path, words: &[String]) -> Result<BTreeMap<String, VAPoint>> {
    Lexicon::load(path)?.resolve(words)
}

/// An ordered emotion vocabulary with a VA coordinate for every label.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    name: String,
    labels: Vec<String>,
    coords: Vec<VAPoint>,
}

impl Taxonomy {
    pub fn new(name: impl Into<String>, labels: Vec<String>, lexicon: &Lexicon) -> Result<Self> {
        let name = name.into();
        let resolved = lexicon.resolve(&labels)?;
        let coords: Vec<VAPoint> = labels.iter().map(|l| resolved[l]).collect();
        Self::with_coords(name, labels.into_iter().zip(coords).collect())
    }

    pub fn with_coords(name: impl Into<String>, entries: Vec<(String, VAPoint)>) -> Result<Self> {
        let name = name.into();
        let mut seen = std::collections::BTreeSet::new();
        for (label, _) in &entries {
            if !seen.insert(label.as_str()) {
                return Err(Error::format(
                    "taxonomy",
                    format!("label `{label}` listed twice in `{name}`"),
                ));
            }
        }
        let (labels, coords) = entries.into_iter().unzip();
        Ok(Self {
            name,
            labels,
            coords,
        })
    }

    /// Reads one label per line (blank lines and `#` comments skipped); the
    /// taxonomy is named after the file stem.
    pub fn load(path: &Path, lexicon: &Lexicon) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels = parse_label_list(&text);
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "taxonomy".into());
        Self::new(name, labels, lexicon)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    pub fn coord(&self, label: &str) -> Result<VAPoint> {
        self.index_of(label)
            .map(|i| self.coords[i])
            .ok_or_else(|| self.unknown(label))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, VAPoint)> {
        self.labels.iter().map(String::as_str).zip(self.coords.iter().copied())
    }

    fn unknown(&self, label: &str) -> Error {
        Error::UnknownLabel {
            label: label.to_string(),
            taxonomy: self.name.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in &self.labels {
            s.push_str(l);
            s.push('\n');
        }
        s
    }
}

pub fn parse_label_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Pairwise VA similarities between two taxonomies.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub row_taxonomy: String,
    pub col_taxonomy: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Matrix,
}

impl SimilarityMatrix {
    pub fn get(&self, row_label: &str, col_label: &str) -> Option<f64> {
        let i = self.row_labels.iter().position(|l| l == row_label)?;
        let j = self.col_labels.iter().position(|l| l == col_label)?;
        Some(self.values[(i, j)])
    }
}

pub fn similarity_matrix(rows: &Taxonomy, cols: &Taxonomy) -> SimilarityMatrix {
    let mut values = Matrix::zeros(rows.len(), cols.len());
    for (i, (_, a)) in rows.entries().enumerate() {
        for (j, (_, b)) in cols.entries().enumerate() {
            values[(i, j)] = va_similarity(&a, &b);
        }
    }
    SimilarityMatrix {
        row_taxonomy: rows.name().to_string(),
        col_taxonomy: cols.name().to_string(),
        row_labels: rows.labels().to_vec(),
        col_labels: cols.labels().to_vec(),
        values,
    }
}

/// The label of `target` closest in VA space to `label` of `source`.
/// Equal similarities resolve to the lexicographically smallest label.
pub fn most_similar_label<'t>(label: &str, source: &Taxonomy, target: &'t Taxonomy) -> Result<&'t str> {
    let point = source.coord(label)?;
    let mut best: Option<(&str, f64)> = None;
    for (candidate, coord) in target.entries() {
        let sim = va_similarity(&point, &coord);
        best = match best {
            None => Some((candidate, sim)),
            Some((b, bs)) if sim > bs || (sim == bs && candidate < b) => Some((candidate, sim)),
            keep => keep,
        };
    }
    best.map(|(l, _)| l).ok_or_else(|| {
        Error::Config(format!("taxonomy `{}` has no labels to map onto", target.name()))
    })
}

/// Speech and music taxonomies plus the derived speech→music label mapping.
#[derive(Debug, Clone)]
pub struct EmotionSpace {
    pub speech: Taxonomy,
    pub music: Taxonomy,
    mapping: BTreeMap<String, String>,
}

impl EmotionSpace {
    pub fn new(speech: Taxonomy, music: Taxonomy) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        for label in speech.labels() {
            let target = most_similar_label(label, &speech, &music)?;
            mapping.insert(label.clone(), target.to_string());
        }
        Ok(Self {
            speech,
            music,
            mapping,
        })
    }

    /// Music label that a speech label is paired with.
    pub fn mapped(&self, speech_label: &str) -> Result<&str> {
        self.mapping
            .get(speech_label)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownLabel {
                label: speech_label.to_string(),
                taxonomy: self.speech.name().to_string(),
            })
    }

    pub fn mapping(&self) -> &BTreeMap<String, String> {
        &self.mapping
    }

    /// VA similarity between a speech label and a music label.
    pub fn cross_similarity(&self, speech_label: &str, music_label: &str) -> Result<f64> {
        Ok(va_similarity(
            &self.speech.coord(speech_label)?,
            &self.music.coord(music_label)?,
        ))
    }

    pub fn similarity_matrix(&self) -> SimilarityMatrix {
        similarity_matrix(&self.speech, &self.music)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tax(name: &str, entries: &[(&str, f64, f64)]) -> Taxonomy {
        Taxonomy::with_coords(
            name,
            entries
                .iter()
                .map(|&(l, v, a)| (l.to_string(), VAPoint::new(v, a).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn similarity_known_values() {
        let o = VAPoint::new(0.0, 0.0).unwrap();
        assert_eq!(va_similarity(&o, &o), 1.0);
        assert_eq!(va_similarity(&o, &VAPoint::new(1.0, 1.0).unwrap()), 0.0);
        let s = va_similarity(&o, &VAPoint::new(1.0, 0.0).unwrap());
        assert!((s - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-15);
        assert!((s - 0.2929).abs() < 1e-4);
    }

    #[test]
    fn lexicon_parsing() {
        let lex = Lexicon::parse("# comment\nhappy 1.000 0.735 0.772\nsad 0.225 0.333\n").unwrap();
        assert_eq!(lex.get("happy"), Some(VAPoint::new(1.0, 0.735).unwrap()));
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn duplicate_word_last_wins() {
        let lex = Lexicon::parse("calm 0.1 0.1\ncalm 0.6 0.2\n").unwrap();
        assert_eq!(lex.get("calm"), Some(VAPoint::new(0.6, 0.2).unwrap()));
    }

    #[test]
    fn missing_word_is_named() {
        let lex = Lexicon::parse("happy 1.0 0.7\n").unwrap();
        let err = lex.resolve(&["happy".into(), "word".into()]).unwrap_err();
        assert!(matches!(&err, Error::MissingLexiconWord(w) if w == "word"));
        assert!(err.to_string().contains("word"));
    }

    #[test]
    fn neutral_falls_back_to_centre() {
        let lex = Lexicon::parse("happy 1.0 0.7\n").unwrap();
        let got = lex.resolve(&["neutral".into()]).unwrap();
        assert_eq!(got["neutral"], NEUTRAL_FALLBACK);
        let lex = Lexicon::parse("neutral 0.4 0.3\n").unwrap();
        let got = lex.resolve(&["neutral".into()]).unwrap();
        assert_eq!(got["neutral"], VAPoint::new(0.4, 0.3).unwrap());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        assert!(Lexicon::parse("odd 1.2 0.5\n").is_err());
        assert!(Lexicon::parse("odd x 0.5\n").is_err());
        assert!(Lexicon::parse("odd 0.5\n").is_err());
    }

    #[test]
    fn single_label_matrix() {
        let t = tax("t", &[("happy", 0.9, 0.7)]);
        let m = similarity_matrix(&t, &t);
        assert_eq!(m.values.data(), &[1.0]);
    }

    #[test]
    fn matrix_is_entrywise_similarity() {
        let a = tax("a", &[("x", 0.1, 0.2), ("y", 0.9, 0.4)]);
        let b = tax("b", &[("p", 0.5, 0.5), ("q", 0.0, 1.0), ("r", 0.9, 0.4)]);
        let m = similarity_matrix(&a, &b);
        assert_eq!(m.values.shape(), (2, 3));
        for (i, (_, pa)) in a.entries().enumerate() {
            for (j, (_, pb)) in b.entries().enumerate() {
                assert_eq!(m.values[(i, j)], va_similarity(&pa, &pb));
            }
        }
        assert_eq!(m.get("y", "r"), Some(1.0));
    }

    #[test]
    fn same_taxonomy_matrix_is_symmetric_with_unit_diagonal() {
        let t = tax(
            "t",
            &[("a", 0.1, 0.9), ("b", 0.3, 0.3), ("c", 0.75, 0.2), ("d", 1.0, 0.0)],
        );
        let m = similarity_matrix(&t, &t);
        for i in 0..4 {
            assert_eq!(m.values[(i, i)], 1.0);
            for j in 0..4 {
                assert_eq!(m.values[(i, j)], m.values[(j, i)]);
            }
        }
    }

    #[test]
    fn exact_coordinate_match_wins() {
        let speech = tax("s", &[("joy", 0.9, 0.6)]);
        let music = tax("m", &[("sad", 0.2, 0.3), ("happy", 0.9, 0.6), ("angry", 0.1, 0.9)]);
        assert_eq!(most_similar_label("joy", &speech, &music).unwrap(), "happy");
    }

    #[test]
    fn equidistant_candidates_resolve_lexicographically() {
        let speech = tax("s", &[("mid", 0.5, 0.5)]);
        let music = tax("m", &[("zeta", 0.7, 0.5), ("alpha", 0.3, 0.5)]);
        assert_eq!(most_similar_label("mid", &speech, &music).unwrap(), "alpha");
    }

    #[test]
    fn unknown_label_is_an_error() {
        let speech = tax("s", &[("mid", 0.5, 0.5)]);
        let music = tax("m", &[("a", 0.7, 0.5)]);
        assert!(most_similar_label("nope", &speech, &music).is_err());
    }

    #[test]
    fn six_label_mapping_matches_exhaustive_scan() {
        let speech = tax(
            "s",
            &[("anger", 0.15, 0.85), ("calm", 0.6, 0.2), ("joy", 0.95, 0.7), ("fear", 0.1, 0.75)],
        );
        let music = tax(
            "m",
            &[
                ("happy", 1.0, 0.735),
                ("funny", 0.92, 0.64),
                ("sad", 0.225, 0.333),
                ("tender", 0.63, 0.27),
                ("angry", 0.12, 0.83),
                ("scary", 0.06, 0.82),
            ],
        );
        for label in speech.labels() {
            let p = speech.coord(label).unwrap();
            // brute force: collect all, sort by (-sim, label)
            let mut all: Vec<(f64, &str)> = music
                .entries()
                .map(|(l, c)| {
                    let d = ((p.valence - c.valence).powi(2) + (p.arousal - c.arousal).powi(2)).sqrt();
                    (d, l)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
            assert_eq!(most_similar_label(label, &speech, &music).unwrap(), all[0].1);
        }
    }

    fn grid_point() -> impl Strategy<Value = VAPoint> {
        (0u32..=20, 0u32..=20).prop_map(|(v, a)| VAPoint::new(v as f64 / 20.0, a as f64 / 20.0).unwrap())
    }

    proptest! {
        #[test]
        fn similarity_symmetric_bounded_and_unit_iff_equal(a in grid_point(), b in grid_point()) {
            let s = va_similarity(&a, &b);
            prop_assert_eq!(s, va_similarity(&b, &a));
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s == 1.0, a == b);
        }

        #[test]
        fn collinear_points_decay_with_distance(
            v in 0.0f64..0.4, a in 0.0f64..0.4, dv in 0.01f64..0.3, da in 0.0f64..0.3,
        ) {
            let p0 = VAPoint::new(v, a).unwrap();
            let p1 = VAPoint::new(v + dv, a + da).unwrap();
            let p2 = VAPoint::new(v + 2.0 * dv, a + 2.0 * da).unwrap();
            prop_assert!(va_similarity(&p0, &p1) > va_similarity(&p0, &p2));
        }

        #[test]
        fn mapping_ignores_taxonomy_order(
            points in prop::collection::vec(grid_point(), 2..7),
            query in grid_point(),
            rot in 0usize..7,
        ) {
            let entries: Vec<(String, VAPoint)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("m{i}"), *p))
                .collect();
            let mut rotated = entries.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let speech = Taxonomy::with_coords("s", vec![("q".into(), query)]).unwrap();
            let m1 = Taxonomy::with_coords("m", entries).unwrap();
            let m2 = Taxonomy::with_coords("m", rotated).unwrap();
            prop_assert_eq!(
                most_similar_label("q", &speech, &m1).unwrap(),
                most_similar_label("q", &speech, &m2).unwrap()
            );
        }
    }
}
