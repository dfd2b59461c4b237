use grag_core::eval::{
    kc_support, quality_f1, rc_chain, run_doc_count_ablation, AblationSetup, DEFAULT_K_LIST,
};
use grag_core::ingest::{text_to_graph, Fragment};
use grag_core::{
    CorpusRecord, Encoder, Execution, FragmentId, FragmentIndex, GnnConfig, GraphBuilderConfig,
    MetricRegistry, ToyDecoderParams, ToyGenerator,
};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    proptest::collection::vec("[a-d]{1,4}|the|of|[A-Z]{3}[.,]", 0..12).prop_map(|w| w.join(" "))
}

fn record_from(answer: String, frags: Vec<String>) -> CorpusRecord {
    CorpusRecord {
        query: "q".into(),
        fragments: frags
            .into_iter()
            .enumerate()
            .map(|(i, text)| Fragment { id: format!("f{i}"), text })
            .collect(),
        reference_answer: answer,
    }
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(gen in text(), reference in text(), frags in proptest::collection::vec(text(), 1..4)) {
        let f1 = quality_f1(&gen, &reference);
        let kc = kc_support(&gen, &frags);
        let rc = rc_chain(&gen, &record_from(reference.clone(), frags));
        for v in [f1, kc, rc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(f1, quality_f1(&reference, &gen));
    }
}

/// (query, [(fragment id, text)], answer)
type RawRecord = (&'static str, &'static [(&'static str, &'static str)], &'static str);

const CORPUS: &[RawRecord] = &[
    ("where is the eiffel tower", &[("c1", "The Eiffel Tower stands in Paris, France."), ("c2", "Paris is the capital of France.")], "paris"),
    ("who painted the mona lisa", &[("c3", "Leonardo da Vinci painted the Mona Lisa."), ("c4", "The Mona Lisa hangs in the Louvre museum.")], "leonardo da vinci"),
    ("what is the largest ocean", &[("c5", "The Pacific Ocean is the largest ocean on Earth."), ("c6", "Oceans cover most of the planet surface.")], "pacific ocean"),
    ("which planet is red", &[("c7", "Mars is called the red planet because of iron oxide."), ("c8", "Mars has two small moons.")], "mars"),
];

fn corpus() -> Vec<CorpusRecord> {
    CORPUS
        .iter()
        .map(|(q, frags, a)| CorpusRecord {
            query: q.to_string(),
            fragments: frags.iter().map(|(id, t)| Fragment { id: id.to_string(), text: t.to_string() }).collect(),
            reference_answer: a.to_string(),
        })
        .collect()
}

fn build(records: &[CorpusRecord], builder: &GraphBuilderConfig, enc: &Encoder) -> FragmentIndex {
    let mut index = FragmentIndex::new(enc.embedding_dim());
    for r in records {
        for f in &r.fragments {
            let g = text_to_graph(&f.text, builder).unwrap();
            index.add_fragment(enc, FragmentId::new(f.id.clone()).unwrap(), &g, f.text.clone()).unwrap();
        }
    }
    index
}

#[test]
fn ablation_is_deterministic_and_prefix_nested() {
    let records = corpus();
    let builder = GraphBuilderConfig::default();
    let enc = Encoder::seeded(GnnConfig::default(), 42).unwrap();
    let index = build(&records, &builder, &enc);
    let generator = ToyGenerator::new(ToyDecoderParams::from_index(&index, 0.0).unwrap());
    let registry = MetricRegistry::default();
    let run = |exec| {
        let setup = AblationSetup {
            index: &index,
            encoder: &enc,
            builder: &builder,
            generator: &generator,
            registry: &registry,
            max_tokens: 8,
            exec,
        };
        run_doc_count_ablation(&records, &setup, &DEFAULT_K_LIST).unwrap()
    };
    let a = run(Execution::Parallel);
    let b = run(Execution::Sequential);
    assert_eq!(a, b);
    assert!(a.failures.is_empty());
    assert_eq!(a.rows.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 3, 5, 10]);
    for per_record in &a.retrieved {
        assert_eq!(per_record[0].len(), 1);
        assert_eq!(per_record[1].len(), 3);
        assert_eq!(per_record[2].len(), 5);
        assert_eq!(per_record[3].len(), 8); // clamped to the index size
        for w in per_record.windows(2) {
            assert_eq!(&w[1][..w[0].len()], &w[0][..]);
        }
    }
    for row in &a.rows {
        assert_eq!(row.report.n_records, 4);
    }
}

#[test]
fn single_fragment_corpus_conditions_on_one_fragment() {
    let records = vec![record_from("alpha".into(), vec!["alpha beta gamma".into()])];
    let builder = GraphBuilderConfig::default();
    let enc = Encoder::seeded(GnnConfig::default(), 1).unwrap();
    let index = build(&records, &builder, &enc);
    let generator = ToyGenerator::new(ToyDecoderParams::from_index(&index, 0.0).unwrap());
    let registry = MetricRegistry::default();
    let setup = AblationSetup {
        index: &index,
        encoder: &enc,
        builder: &builder,
        generator: &generator,
        registry: &registry,
        max_tokens: 4,
        exec: Execution::default(),
    };
    let out = run_doc_count_ablation(&records, &setup, &[1]).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.retrieved, vec![vec![vec!["f0".to_string()]]]);
}

#[test]
fn failing_records_are_reported_not_fatal() {
    let mut records = corpus();
    records.push(CorpusRecord {
        query: "?!".into(),
        fragments: vec![],
        reference_answer: "x".into(),
    });
    let builder = GraphBuilderConfig::default();
    let enc = Encoder::seeded(GnnConfig::default(), 3).unwrap();
    let index = build(&records, &builder, &enc);
    let generator = ToyGenerator::new(ToyDecoderParams::from_index(&index, 0.0).unwrap());
    let registry = MetricRegistry::default();
    let setup = AblationSetup {
        index: &index,
        encoder: &enc,
        builder: &builder,
        generator: &generator,
        registry: &registry,
        max_tokens: 4,
        exec: Execution::default(),
    };
    let out = run_doc_count_ablation(&records, &setup, &[1, 3]).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].record, 4);
    assert_eq!(out.failures[0].class, "EmptyText");
    assert!(out.rows.iter().all(|r| r.report.n_records == 4));
}
