use emomatch::data_io::{gen_synthetic, load_features, Modality, SyntheticSpec};
use emomatch::evaluation::{export_embeddings, mrr, precision_at_k, retrieve, Candidate, RankedResult};
use emomatch::numerics::Matrix;
use emomatch::trainer::{train, TrainConfig};
use proptest::prelude::*;

#[test]
fn exported_embeddings_equal_forward_outputs() {
    let spec = SyntheticSpec {
        per_class: 8,
        dim: 6,
        ..Default::default()
    };
    let bundle = gen_synthetic(&spec, 4).unwrap().bundle;
    let config = TrainConfig {
        max_epochs: 2,
        hidden: vec![12],
        output_dim: 5,
        ..Default::default()
    };
    let (nets, _) = train(&bundle, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (speech_path, music_path) = export_embeddings(&nets.speech, &nets.music, &bundle, dir.path()).unwrap();

    for (path, records, net) in [
        (&speech_path, &bundle.speech, &nets.speech),
        (&music_path, &bundle.music, &nets.music),
    ] {
        let exported = load_features(path, None).unwrap();
        assert_eq!(exported.len(), records.len());
        let inputs = Matrix::from_rows(&records.iter().map(|r| r.vector.as_slice()).collect::<Vec<_>>()).unwrap();
        let expected = net.apply(&inputs).unwrap();
        for ((e, r), row) in exported.iter().zip(records).zip(expected.iter_rows()) {
            assert_eq!(e.id, r.id);
            assert_eq!(e.label, r.label);
            assert_eq!(e.modality, Modality::Fusion);
            assert_eq!(e.vector.len(), config.output_dim);
            assert_eq!(e.vector, row);
        }
    }

    // export → load → export is lossless
    let again = tempfile::tempdir().unwrap();
    let (s2, m2) = export_embeddings(&nets.speech, &nets.music, &bundle, again.path()).unwrap();
    assert_eq!(std::fs::read(&speech_path).unwrap(), std::fs::read(s2).unwrap());
    assert_eq!(std::fs::read(&music_path).unwrap(), std::fs::read(m2).unwrap());
}

/// Corpus of unit vectors at the given angles; a query at angle 0 scores
/// them by `cos θ`, so warping the angles monotonically warps the scores
/// monotonically.
fn ranked(angles: &[f64], relevant: &[bool]) -> Vec<RankedResult> {
    let corpus = Matrix::from_rows(&angles.iter().map(|a| vec![a.cos(), a.sin()]).collect::<Vec<_>>()).unwrap();
    let ids: Vec<String> = (0..angles.len()).map(|i| format!("c{i:02}")).collect();
    let query = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let hits = retrieve(&query, &corpus, &ids, angles.len()).unwrap();
    let candidates = hits[0]
        .iter()
        .map(|h| Candidate {
            id: ids[h.index].clone(),
            score: h.score,
            relevant: relevant[h.index],
            gain: if relevant[h.index] { 1.0 } else { 0.0 },
        })
        .collect();
    vec![RankedResult::new("q", "x", candidates, vec![])]
}

proptest! {
    #[test]
    fn mrr_and_precision_depend_only_on_rank(
        items in prop::collection::vec((0.05f64..3.0, any::<bool>()), 1..20),
        power in 0.3f64..3.0,
    ) {
        // distinct angles so the warp cannot merge or split ties
        let mut angles: Vec<f64> = Vec::new();
        let mut relevant = Vec::new();
        for (a, r) in items {
            if angles.iter().all(|b: &f64| (a - b).abs() > 1e-6) {
                angles.push(a);
                relevant.push(r);
            }
        }
        // θ ↦ π (θ/π)^p is strictly increasing on (0, π)
        let warped: Vec<f64> = angles
            .iter()
            .map(|a| std::f64::consts::PI * (a / std::f64::consts::PI).powf(power))
            .collect();
        let before = ranked(&angles, &relevant);
        let after = ranked(&warped, &relevant);
        let order = |r: &[RankedResult]| r[0].candidates.iter().map(|c| c.id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(order(&before), order(&after));
        prop_assert_eq!(mrr(&before), mrr(&after));
        prop_assert_eq!(precision_at_k(&before, 5).value, precision_at_k(&after, 5).value);
    }
}
