//! Exact cosine retrieval and ranking metrics.
//!
//! Binary relevance: a candidate is relevant when its label is the query
//! label's most-similar music label. Graded relevance: VA similarity between
//! the query label and the candidate label. NDCG uses linear gains and an
//! ideal ordering over the whole corpus.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use crate::data_io::{DatasetBundle, Domain, FeatureFile, FeatureRecord, Modality, Split, NOISE_LABEL};
use crate::emotion_space::{EmotionSpace, NEUTRAL_LABEL};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Matrix, ProjectionNet};

/// One retrieved corpus item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Row in the corpus matrix.
    pub index: usize,
    pub score: f64,
}

/// Exact top-`k` by cosine similarity for every query row. Equal scores are
/// ordered by candidate id.
pub fn retrieve(queries: &Matrix, corpus: &Matrix, corpus_ids: &[String], k: usize) -> Result<Vec<Vec<Hit>>> {
    if corpus.rows() == 0 {
        return Err(Error::Config("retrieval corpus is empty".into()));
    }
    if corpus_ids.len() != corpus.rows() {
        return Err(Error::shape(
            "retrieve",
            format!("{} corpus ids", corpus.rows()),
            format!("{}", corpus_ids.len()),
        ));
    }
    if queries.cols() != corpus.cols() {
        return Err(Error::shape(
            "retrieve",
            format!("query dim {}", corpus.cols()),
            format!("{}", queries.cols()),
        ));
    }
    let k = k.min(corpus.rows());
    Ok(queries
        .iter_rows()
        .map(|q| {
            let mut hits: Vec<Hit> = corpus
                .iter_rows()
                .enumerate()
                .map(|(index, c)| Hit {
                    index,
                    score: cosine_similarity(q, c),
                })
                .collect();
            hits.sort_by(|a, b| rank_order(a, b, corpus_ids));
            hits.truncate(k);
            hits
        })
        .collect())
}

fn rank_order(a: &Hit, b: &Hit, ids: &[String]) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| ids[a.index].cmp(&ids[b.index]))
}

/// A ranked candidate with its relevance judgements.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
    pub relevant: bool,
    /// Graded relevance in [0, 1].
    pub gain: f64,
}

/// The ranking for one query, plus the gains of every corpus item the query
/// is judged against (for the ideal ordering).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub query_id: String,
    pub query_label: String,
    pub candidates: Vec<Candidate>,
    /// Graded relevance of the whole corpus, sorted descending.
    pub ideal_gains: Vec<f64>,
}

impl RankedResult {
    /// Builds a result from raw relevance data; `ideal_gains` may be in any order.
    pub fn new(
        query_id: impl Into<String>,
        query_label: impl Into<String>,
        candidates: Vec<Candidate>,
        mut ideal_gains: Vec<f64>,
    ) -> Self {
        ideal_gains.sort_by(|a, b| b.total_cmp(a));
        Self {
            query_id: query_id.into(),
            query_label: query_label.into(),
            candidates,
            ideal_gains,
        }
    }
}

/// Attaches relevance to retrieval hits. `corpus_labels[j]` is the label of
/// corpus row `j`; `query_labels[i]` that of query `i`.
pub fn judge(
    space: &EmotionSpace,
    query_ids: &[String],
    query_labels: &[String],
    hits: &[Vec<Hit>],
    corpus_ids: &[String],
    corpus_labels: &[String],
) -> Result<Vec<RankedResult>> {
    if query_ids.len() != hits.len() || query_labels.len() != hits.len() {
        return Err(Error::shape(
            "judge",
            format!("{} query ids and labels", hits.len()),
            format!("{} ids, {} labels", query_ids.len(), query_labels.len()),
        ));
    }
    let mut results = Vec::with_capacity(hits.len());
    for ((qid, qlabel), row) in query_ids.iter().zip(query_labels).zip(hits) {
        let target = space.mapped(qlabel)?;
        let gain_of = |label: &str| space.cross_similarity(qlabel, label);
        let candidates = row
            .iter()
            .map(|h| {
                let label = &corpus_labels[h.index];
                Ok(Candidate {
                    id: corpus_ids[h.index].clone(),
                    score: h.score,
                    relevant: label == target,
                    gain: gain_of(label)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ideal = corpus_labels.iter().map(|l| gain_of(l)).collect::<Result<Vec<_>>>()?;
        results.push(RankedResult::new(qid.clone(), qlabel.clone(), candidates, ideal));
    }
    Ok(results)
}

/// Mean reciprocal rank of the first relevant candidate; 0 for a query with
/// none. Empty input gives 0.
pub fn mrr(results: &[RankedResult]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            r.candidates
                .iter()
                .position(|c| c.relevant)
                .map_or(0.0, |p| 1.0 / (p + 1) as f64)
        })
        .sum();
    total / results.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionAtK {
    pub value: f64,
    /// Queries ranked over fewer than `k` candidates; their precision uses
    /// the available count as denominator.
    pub truncated_queries: usize,
}

pub fn precision_at_k(results: &[RankedResult], k: usize) -> PrecisionAtK {
    let mut truncated_queries = 0;
    if results.is_empty() || k == 0 {
        return PrecisionAtK {
            value: 0.0,
            truncated_queries,
        };
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            let n = r.candidates.len().min(k);
            if n < k {
                truncated_queries += 1;
            }
            if n == 0 {
                return 0.0;
            }
            r.candidates[..n].iter().filter(|c| c.relevant).count() as f64 / n as f64
        })
        .sum();
    PrecisionAtK {
        value: total / results.len() as f64,
        truncated_queries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdcgAtK {
    pub value: f64,
    /// Queries excluded because their ideal DCG is 0.
    pub excluded_queries: usize,
}

/// `Σ_{i=1..k} gain_i / log2(i + 1)`
pub fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(results: &[RankedResult], k: usize) -> NdcgAtK {
    let mut excluded_queries = 0;
    let mut total = 0.0;
    let mut counted = 0usize;
    for r in results {
        let ideal = dcg(&r.ideal_gains, k);
        if ideal <= 0.0 {
            excluded_queries += 1;
            continue;
        }
        let gains: Vec<f64> = r.candidates.iter().map(|c| c.gain).collect();
        total += dcg(&gains, k) / ideal;
        counted += 1;
    }
    NdcgAtK {
        value: if counted == 0 { 0.0 } else { total / counted as f64 },
        excluded_queries,
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean) * (x - mean);
        db += (y - mean) * (y - mean);
    }
    if da == 0.0 || db == 0.0 {
        return None;
    }
    Some(num / (da * db).sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mean over rows of the Spearman correlation between matching rows of two
/// equally shaped matrices, skipping rows where either side is constant.
pub fn mean_row_spearman(a: &Matrix, b: &Matrix) -> Result<Option<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mean_row_spearman", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let rhos: Vec<f64> = a.iter_rows().zip(b.iter_rows()).filter_map(|(x, y)| spearman(x, y)).collect();
    Ok((!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    /// Keep noise music items in the corpus for non-neutral queries.
    pub include_noise: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 5,
            include_noise: true,
        }
    }
}

/// Metric summary for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub split: Split,
    pub k: usize,
    pub queries: usize,
    pub corpus: usize,
    pub mrr: f64,
    pub precision: PrecisionAtK,
    pub ndcg: NdcgAtK,
    /// Mean per-row Spearman correlation between label and embedding
    /// similarity over queries × corpus.
    pub similarity_spearman: Option<f64>,
}

/// Projects one split through both nets and scores speech→music retrieval
/// against that split's music items.
pub fn evaluate_split(
    bundle: &DatasetBundle,
    space: &EmotionSpace,
    speech_net: &ProjectionNet,
    music_net: &ProjectionNet,
    split: Split,
    options: EvalOptions,
) -> Result<Metrics> {
    let queries = bundle.speech_indices(split);
    let corpus = bundle.music_indices(split);
    if queries.is_empty() {
        return Err(Error::Config(format!("no speech items in the {split} split")));
    }
    if corpus.is_empty() {
        return Err(Error::Config(format!("no music items in the {split} split")));
    }
    let speech_emb = speech_net.apply(&bundle.speech_matrix(&queries))?;
    let music_emb = music_net.apply(&bundle.music_matrix(&corpus))?;
    let q: Vec<&FeatureRecord> = queries.iter().map(|&i| &bundle.speech[i]).collect();
    let c: Vec<&FeatureRecord> = corpus.iter().map(|&j| &bundle.music[j]).collect();
    let results = rank_queries(space, &q, &speech_emb, &c, &music_emb, options.include_noise)?;

    let mut s_y = Matrix::zeros(q.len(), c.len());
    let mut s_z = Matrix::zeros(q.len(), c.len());
    for (i, qi) in q.iter().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            s_y[(i, j)] = space.cross_similarity(&qi.label, &cj.label)?;
            s_z[(i, j)] = 0.5 * (1.0 + cosine_similarity(speech_emb.row(i), music_emb.row(j)));
        }
    }
    Ok(Metrics {
        split,
        k: options.k,
        queries: q.len(),
        corpus: c.len(),
        mrr: mrr(&results),
        precision: precision_at_k(&results, options.k),
        ndcg: ndcg_at_k(&results, options.k),
        similarity_spearman: mean_row_spearman(&s_y, &s_z)?,
    })
}

/// Full-corpus rankings with relevance for every query. With
/// `include_noise == false`, noise items are dropped from the candidates and
/// ideal gains of every non-neutral query.
pub fn rank_queries(
    space: &EmotionSpace,
    queries: &[&FeatureRecord],
    query_emb: &Matrix,
    corpus: &[&FeatureRecord],
    corpus_emb: &Matrix,
    include_noise: bool,
) -> Result<Vec<RankedResult>> {
    let corpus_ids: Vec<String> = corpus.iter().map(|r| r.id.clone()).collect();
    let corpus_labels: Vec<String> = corpus.iter().map(|r| r.label.clone()).collect();
    let query_ids: Vec<String> = queries.iter().map(|r| r.id.clone()).collect();
    let query_labels: Vec<String> = queries.iter().map(|r| r.label.clone()).collect();
    let mut hits = retrieve(query_emb, corpus_emb, &corpus_ids, corpus.len())?;
    if include_noise {
        return judge(space, &query_ids, &query_labels, &hits, &corpus_ids, &corpus_labels);
    }
    let mut results = Vec::with_capacity(queries.len());
    for (i, row) in hits.iter_mut().enumerate() {
        let keep = |label: &str| query_labels[i] == NEUTRAL_LABEL || label != NOISE_LABEL;
        row.retain(|h| keep(&corpus_labels[h.index]));
        let mut r = judge(
            space,
            &query_ids[i..=i],
            &query_labels[i..=i],
            std::slice::from_ref(row),
            &corpus_ids,
            &corpus_labels,
        )?
        .remove(0);
        r.ideal_gains = corpus_labels
            .iter()
            .filter(|l| keep(l))
            .map(|l| space.cross_similarity(&query_labels[i], l))
            .collect::<Result<Vec<_>>>()?;
        r.ideal_gains.sort_by(|a, b| b.total_cmp(a));
        results.push(r);
    }
    Ok(results)
}

/// Writes joint-space embeddings of every speech and music item as two
/// feature files, `speech_embeddings.emf` and `music_embeddings.emf`, under
/// `dir`. Ids and labels are preserved.
pub fn export_embeddings(
    speech_net: &ProjectionNet,
    music_net: &ProjectionNet,
    bundle: &DatasetBundle,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let all = |n: usize| (0..n).collect::<Vec<_>>();
    let speech_emb = speech_net.apply(&bundle.speech_matrix(&all(bundle.speech.len())))?;
    let music_emb = music_net.apply(&bundle.music_matrix(&all(bundle.music.len())))?;
    let to_records = |records: &[FeatureRecord], emb: &Matrix, domain| {
        records
            .iter()
            .zip(emb.iter_rows())
            .map(|(r, v)| FeatureRecord {
                id: r.id.clone(),
                domain,
                modality: Modality::Fusion,
                vector: v.to_vec(),
                label: r.label.clone(),
            })
            .collect::<Vec<_>>()
    };
    let speech_path = dir.join("speech_embeddings.emf");
    let music_path = dir.join("music_embeddings.emf");
    FeatureFile::new(
        speech_net.output_dim(),
        bundle.speech_taxonomy.name(),
        Domain::Speech,
        Modality::Fusion,
        to_records(&bundle.speech, &speech_emb, Domain::Speech),
    )?
    .write_binary(&speech_path)?;
    FeatureFile::new(
        music_net.output_dim(),
        bundle.music_taxonomy.name(),
        Domain::Music,
        Modality::Fusion,
        to_records(&bundle.music, &music_emb, Domain::Music),
    )?
    .write_binary(&music_path)?;
    Ok((speech_path, music_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(relevant: bool, gain: f64) -> Candidate {
        Candidate {
            id: String::new(),
            score: 0.0,
            relevant,
            gain,
        }
    }

    fn result(rel: &[bool]) -> RankedResult {
        RankedResult::new("q", "l", rel.iter().map(|&r| cand(r, if r { 1.0 } else { 0.0 })).collect(), vec![1.0])
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i:02}")).collect()
    }

    #[test]
    fn single_item_corpus() {
        let corpus = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let q = Matrix::from_rows(&[[-3.0, 0.5]]).unwrap();
        let hits = retrieve(&q, &corpus, &ids(1), 5).unwrap();
        assert_eq!(hits[0].len(), 1);
        assert_eq!(hits[0][0].index, 0);
    }

    #[test]
    fn identical_query_ranks_first() {
        let corpus = Matrix::from_rows(&[[1.0, 0.0], [0.3, 0.9], [0.5, 0.5]]).unwrap();
        let q = Matrix::from_rows(&[[0.3, 0.9]]).unwrap();
        let hits = retrieve(&q, &corpus, &ids(3), 3).unwrap();
        assert_eq!(hits[0][0].index, 1);
        assert!((hits[0][0].score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let q = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(retrieve(&q, &Matrix::zeros(0, 1), &[], 1).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let corpus = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        let names = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        let q = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let hits = retrieve(&q, &corpus, &names, 3).unwrap();
        assert_eq!(hits[0].iter().map(|h| h.index).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn fifty_item_corpus_matches_full_sort() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let corpus = Matrix::from_rows(&rows).unwrap();
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hits = retrieve(&Matrix::from_rows(std::slice::from_ref(&q)).unwrap(), &corpus, &ids(50), 10).unwrap();
        let mut oracle: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let d: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt() * q.iter().map(|x| x * x).sum::<f64>().sqrt();
                (d / n, i)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let want: Vec<usize> = oracle.iter().take(10).map(|p| p.1).collect();
        assert_eq!(hits[0].iter().map(|h| h.index).collect::<Vec<_>>(), want);
        assert!(hits[0].windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn mrr_examples() {
        assert_eq!(mrr(&[result(&[true, false]), result(&[true])]), 1.0);
        assert_eq!(mrr(&[result(&[false, false, false, true, true])]), 0.25);
        assert_eq!(mrr(&[result(&[false, false])]), 0.0);
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&[result(&[true; 5])], 5).value, 1.0);
        assert_eq!(precision_at_k(&[result(&[false; 7])], 5).value, 0.0);
        let p = precision_at_k(&[result(&[true, false, true])], 5);
        assert!((p.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.truncated_queries, 1);
    }

    #[test]
    fn ndcg_of_ideal_ranking_is_one() {
        let gains = [0.9, 0.7, 0.7, 0.2, 0.1, 0.0];
        let r = RankedResult::new("q", "l", gains.iter().map(|&g| cand(false, g)).collect(), gains.to_vec());
        assert!((ndcg_at_k(&[r], 5).value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_under_uniform_relevance_is_one() {
        let r = RankedResult::new("q", "l", vec![cand(false, 0.4); 6], vec![0.4; 6]);
        assert!((ndcg_at_k(&[r], 5).value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_ideal_queries_are_excluded() {
        let dead = RankedResult::new("q", "l", vec![cand(false, 0.0); 3], vec![0.0; 3]);
        let live = RankedResult::new("p", "l", vec![cand(true, 1.0)], vec![1.0]);
        let n = ndcg_at_k(&[dead, live], 5);
        assert_eq!(n.excluded_queries, 1);
        assert_eq!(n.value, 1.0);
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn six_candidate_ndcg_matches_best_ordering_oracle() {
        let gains = [0.31, 0.92, 0.55, 0.92, 0.08, 0.67];
        let ranking = [2usize, 0, 1, 5, 4, 3];
        let disc = |order: &[usize]| -> f64 {
            order.iter().take(5).enumerate().map(|(i, &c)| gains[c] / ((i + 2) as f64).log2()).sum()
        };
        let best = permutations(&[0, 1, 2, 3, 4, 5]).iter().map(|p| disc(p)).fold(f64::MIN, f64::max);
        let want = disc(&ranking) / best;
        let r = RankedResult::new(
            "q",
            "l",
            ranking.iter().map(|&c| cand(false, gains[c])).collect(),
            gains.to_vec(),
        );
        assert!((ndcg_at_k(&[r], 5).value - want).abs() < 1e-12);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
        // ties: ranks [1.5, 1.5, 3] vs [1, 2, 3]
        let rho = spearman(&[0.0, 0.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((rho - 0.75f64.sqrt()).abs() < 1e-12);
    }

    fn ranked_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (1usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0.0f64..=1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn metrics_lie_in_unit_interval((rel, gains) in ranked_strategy()) {
            let r = RankedResult::new(
                "q", "l",
                rel.iter().zip(&gains).map(|(&r, &g)| cand(r, g)).collect(),
                gains.clone(),
            );
            let rs = [r];
            for v in [mrr(&rs), precision_at_k(&rs, 5).value, ndcg_at_k(&rs, 5).value] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn sorting_adjacent_pair_never_lowers_ndcg((_, gains) in ranked_strategy(), pick in any::<prop::sample::Index>()) {
            prop_assume!(gains.len() >= 2);
            let i = pick.index(gains.len() - 1);
            prop_assume!(gains[i] < gains[i + 1]);
            let mk = |g: &[f64]| RankedResult::new("q", "l", g.iter().map(|&x| cand(false, x)).collect(), gains.clone());
            let mut swapped = gains.clone();
            swapped.swap(i, i + 1);
            prop_assert!(ndcg_at_k(&[mk(&swapped)], 5).value >= ndcg_at_k(&[mk(&gains)], 5).value);
        }
    }
}
