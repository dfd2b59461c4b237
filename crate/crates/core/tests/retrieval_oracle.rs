mod common;

use grag_core::index::cosine_similarity;
use grag_core::ingest::text_to_graph;
use grag_core::{Embedding, Encoder, Execution, FragmentId, FragmentIndex, GnnConfig, GraphBuilderConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_index(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (FragmentIndex, Vec<(String, Vec<f64>)>) {
    let mut index = FragmentIndex::new(dim);
    let mut raw = Vec::new();
    for i in 0..n {
        // Quantized values make exact score ties common.
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2i32..=2) as f64).collect();
        let id = format!("frag-{:03}", rng.gen_range(0..10_000) * 1000 + i);
        index
            .insert(FragmentId::new(id.clone()).unwrap(), Embedding::new(v.clone()).unwrap(), "")
            .unwrap();
        raw.push((id, v));
    }
    (index, raw)
}

#[test]
fn top_k_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..30 {
        let (index, raw) = random_index(&mut rng, 200, 32);
        let q: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let expected = common::brute_force_top_k(&raw, &q, 10);
        for exec in [Execution::Sequential, Execution::Parallel] {
            let hits = index.query_top_k_with(&Embedding::new(q.clone()).unwrap(), 10, exec).unwrap();
            let got: Vec<(String, f64)> =
                hits.hits.iter().map(|h| (h.fragment_id.to_string(), h.score)).collect();
            assert_eq!(got, expected, "trial {trial}");
        }
    }
}

#[test]
fn duplicate_embeddings_tie_break_by_id() {
    let mut index = FragmentIndex::new(2);
    for id in ["m", "c", "x"] {
        index
            .insert(FragmentId::new(id).unwrap(), Embedding::new(vec![0.5, 0.5]).unwrap(), "")
            .unwrap();
    }
    let hits = index.query_top_k(&Embedding::new(vec![1.0, 0.0]).unwrap(), 1).unwrap();
    assert_eq!(hits.hits[0].fragment_id.as_str(), "c");
}

#[test]
fn encoded_fragment_retrieves_itself() {
    let enc = Encoder::seeded(GnnConfig::default(), 4).unwrap();
    let builder = GraphBuilderConfig::default();
    let texts = [
        "the river flows through the old city",
        "mountains rise above the northern valley",
        "a treaty ended the long war between empires",
    ];
    let mut index = FragmentIndex::new(enc.embedding_dim());
    for (i, t) in texts.iter().enumerate() {
        let g = text_to_graph(t, &builder).unwrap();
        index.add_fragment(&enc, FragmentId::new(format!("f{i}")).unwrap(), &g, *t).unwrap();
    }
    assert_eq!(index.len(), 3);
    for (i, t) in texts.iter().enumerate() {
        let z = enc.encode_graph(&text_to_graph(t, &builder).unwrap()).unwrap();
        assert!(z.norm() > 0.0);
        let hits = index.query_top_k(&z, 1).unwrap();
        assert_eq!(hits.hits[0].fragment_id.as_str(), format!("f{i}"));
        assert!((hits.hits[0].score - 1.0).abs() <= 1e-12);
    }
    let g = text_to_graph(texts[0], &builder).unwrap();
    let err = index
        .add_fragment(&enc, FragmentId::new("f0").unwrap(), &g, "again")
        .unwrap_err();
    assert_eq!(err.class(), "DuplicateFragment");
}

#[test]
fn batch_insert_matches_one_by_one() {
    let enc = Encoder::seeded(GnnConfig::default(), 8).unwrap();
    let builder = GraphBuilderConfig::default();
    let items: Vec<_> = (0..40)
        .map(|i| {
            let text = format!("token{i} shared words appear token{} here", i * 7 % 13);
            (FragmentId::new(format!("id{i:02}")).unwrap(), text_to_graph(&text, &builder).unwrap(), text)
        })
        .collect();
    let mut batched = FragmentIndex::new(64);
    batched.add_fragments(&enc, items.clone(), Execution::Parallel).unwrap();
    let mut single = FragmentIndex::new(64);
    for (id, g, text) in &items {
        single.add_fragment(&enc, id.clone(), g, text.clone()).unwrap();
    }
    assert_eq!(batched, single);

    let mut dup = items[..2].to_vec();
    dup.push(items[0].clone());
    let mut idx = FragmentIndex::new(64);
    assert_eq!(idx.add_fragments(&enc, dup, Execution::Sequential).unwrap_err().class(), "DuplicateFragment");
    assert!(idx.is_empty());
}

#[test]
fn save_load_preserves_rankings() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (index, _) = random_index(&mut rng, 120, 16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idx.bin");
    index.save_to_path(&path).unwrap();
    let loaded = FragmentIndex::load_from_path(&path).unwrap();
    for _ in 0..20 {
        let q = Embedding::new((0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(index.query_top_k(&q, 7).unwrap(), loaded.query_top_k(&q, 7).unwrap());
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(FragmentIndex::load_from_path(&path).unwrap_err().class(), "CorruptIndex");
}

fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..24).prop_flat_map(|d| {
        (
            proptest::collection::vec(-1e3f64..1e3, d),
            proptest::collection::vec(-1e3f64..1e3, d),
        )
    })
}

proptest! {
    #[test]
    fn cosine_range_symmetry_scale((a, b) in vec_pair(), alpha in 1e-3f64..1e3) {
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(ab.to_bits(), cosine_similarity(&b, &a).unwrap().to_bits());
        let scaled: Vec<f64> = a.iter().map(|x| x * alpha).collect();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - ab).abs() <= 1e-12);
    }

    #[test]
    fn top_k_prefixes_are_consistent(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (index, _) = random_index(&mut rng, n, 6);
        let q = Embedding::new((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let full = index.query_top_k(&q, n).unwrap();
        prop_assert!(full.hits.windows(2).all(|w| w[0].score > w[1].score
            || (w[0].score == w[1].score && w[0].fragment_id < w[1].fragment_id)));
        for k in 1..=n {
            let part = index.query_top_k(&q, k).unwrap();
            prop_assert_eq!(&part.hits[..], &full.hits[..k]);
        }
    }
}
