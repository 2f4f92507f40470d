mod common;

use chrono::NaiveDate;
use common::kb::{planted_query, synthetic_kb, ZERO_OVERLAP_QUERIES};
use meff_core::knowledge::{
    segment, sentences, tokenize, Bm25Params, DocKind, Document, KnowledgeIndex, TrainingRetrieval,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn doc(id: &str, body: &str) -> Document {
    Document {
        id: id.into(),
        kind: DocKind::Other,
        title: id.into(),
        date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
        source: "fixture".into(),
        body: body.into(),
    }
}

fn fixture() -> KnowledgeIndex {
    KnowledgeIndex::build(
        vec![
            doc("d1", "apple banana apple"),
            doc("d2", "banana cherry"),
            doc("d3", "cherry date elder fig"),
        ],
        Bm25Params::default(),
        256,
    )
    .unwrap()
}

#[test]
fn bm25_matches_hand_computation() {
    // Worked by hand: N=3, avgdl=3, k1=1.5, b=0.75,
    // idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
    let expected: [(&str, [f64; 3]); 3] = [
        ("apple cherry", [1.401184647159609, 0.5529454461714537, 0.4086988080397701]),
        ("banana", [0.4700036292457356, 0.5529454461714537, 0.0]),
        ("fig apple zzz", [1.401184647159609, 0.0, 0.8528950026188925]),
    ];
    let idx = fixture();
    for (query, want) in expected {
        let scores = idx.scores(query);
        for (chunk, w) in want.iter().enumerate() {
            let got = scores.get(&chunk).copied().unwrap_or(0.0);
            assert!((got - w).abs() <= 1e-9, "{query} chunk {chunk}: {got} vs {w}");
        }
    }
    let top: Vec<_> = idx.retrieve("apple cherry", 3, 0.0).into_iter().map(|r| r.chunk.doc_id).collect();
    assert_eq!(top, ["d1", "d2", "d3"]);
}

#[test]
fn mixed_script_segmentation() {
    assert_eq!(sentences("Q1 up 5%. 利润率提升。"), ["Q1 up 5%. ", "利润率提升。"]);
    let chunks = segment("A。B。C。", 2);
    assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>(), ["A。B。", "C。"]);
}

#[test]
fn planted_facts_rank_in_top_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (docs, planted) = synthetic_kb(&mut rng, 200);
    let idx = KnowledgeIndex::build(docs, Bm25Params::default(), 64).unwrap();
    let hits = planted
        .iter()
        .take(100)
        .enumerate()
        .filter(|(k, p)| {
            idx.retrieve(&planted_query(p, *k), 3, 0.0)
                .iter()
                .any(|r| r.chunk.doc_id == p.doc_id && r.chunk.text.contains(&p.sentence))
        })
        .count();
    assert!(hits >= 95, "{hits}/100");
    for q in ZERO_OVERLAP_QUERIES {
        assert!(idx.retrieve(q, 3, 0.0).is_empty());
    }
}

fn body_strategy() -> impl Strategy<Value = String> {
    let piece = prop::sample::select(vec![
        "营业收入", "增长", "。", "！", "？", "；", "Q1", " up", " 5%", ".", " ", "\n", "利润率", "3.5", "”", "!",
        "abc", "def.",
    ]);
    prop::collection::vec(piece, 1..60).prop_map(|v| v.concat())
}

fn squeeze(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

proptest! {
    #[test]
    fn segmentation_is_lossless(body in body_strategy(), max in 1usize..40) {
        prop_assume!(!body.trim().is_empty());
        let chunks = segment(&body, max);
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect();
        prop_assert_eq!(squeeze(&joined), squeeze(&body));
        for c in &chunks {
            prop_assert_eq!(c.token_count, tokenize(&c.text).len());
            if c.token_count > max {
                prop_assert!(c.oversized);
                prop_assert_eq!(sentences(&c.text).len(), 1);
            }
        }
    }

    #[test]
    fn tokenization_is_deterministic(text in "\\PC{0,80}") {
        prop_assert_eq!(tokenize(&text), tokenize(&text));
    }

    #[test]
    fn zero_overlap_scores_zero_and_duplicates_tie(
        a in body_strategy(), b in body_strategy(), q in "[甲乙丙丁]{1,6}"
    ) {
        prop_assume!(!a.trim().is_empty() && !b.trim().is_empty());
        let idx = KnowledgeIndex::build(
            vec![doc("x", &a), doc("y", &a), doc("z", &b)],
            Bm25Params::default(),
            1000,
        ).unwrap();
        prop_assert!(idx.scores(&q).is_empty());
        prop_assert!(idx.retrieve(&q, 10, 0.0).is_empty());
        let r = idx.retrieve("营业收入 增长 q1 up", 10, 0.0);
        let x = r.iter().find(|r| r.chunk.doc_id == "x").map(|r| r.score);
        let y = r.iter().find(|r| r.chunk.doc_id == "y").map(|r| r.score);
        prop_assert_eq!(x, y);
    }

    #[test]
    fn training_retrieval_is_seeded(seed in any::<u64>(), noise in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (docs, planted) = synthetic_kb(&mut rng, 20);
        let idx = KnowledgeIndex::build(docs, Bm25Params::default(), 64).unwrap();
        let opts = TrainingRetrieval { noise_prob: noise, ..Default::default() };
        let query = planted_query(&planted[0], 0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.retrieve_for_training(&query, &opts, Some(&planted[5].doc_id), &mut rng).unwrap()
        };
        let first = run();
        prop_assert_eq!(&first, &run());
        prop_assert!(first.iter().filter(|r| r.injected).count() <= 1);
        prop_assert!(first.iter().any(|r| r.guaranteed && r.chunk.doc_id == planted[5].doc_id));
        let regular: Vec<_> = first.iter().filter(|r| !r.injected && !r.guaranteed).collect();
        prop_assert!(regular.len() <= 3);
        prop_assert!(regular.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn reload_gives_identical_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (docs, planted) = synthetic_kb(&mut rng, 60);
    let idx = KnowledgeIndex::build(docs, Bm25Params::default(), 64).unwrap();
    let dir = tempfile::tempdir().unwrap();
    idx.save(dir.path()).unwrap();
    let back = KnowledgeIndex::load(dir.path()).unwrap();
    for (k, p) in planted.iter().enumerate() {
        let q = planted_query(p, k);
        assert_eq!(
            serde_json::to_vec(&idx.retrieve(&q, 5, 0.0)).unwrap(),
            serde_json::to_vec(&back.retrieve(&q, 5, 0.0)).unwrap()
        );
    }
}
