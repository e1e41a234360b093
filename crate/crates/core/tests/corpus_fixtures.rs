mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::oracle::random_documents;
use guidemod::corpus::{
    entity_type_counts, load_corpus, sample_splits, write_corpus, Corpus, Document, Label, Provenance, SplitSpec,
};
use guidemod::AnnotationSet;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn counts(pairs: &[(&str, usize)]) -> BTreeMap<Label, usize> {
    pairs.iter().map(|(l, n)| (Label::new(*l), *n)).collect()
}

#[test]
fn ncbi_evaluation_fixture_type_counts() {
    let (corpus, stats) = load_corpus(&fixture("ncbi-eval")).unwrap();
    assert_eq!(stats.documents, 100);
    let got = entity_type_counts(corpus.gold().values());
    assert_eq!(
        got,
        counts(&[("CompositeMention", 37), ("DiseaseClass", 127), ("Modifier", 218), ("SpecificDisease", 409)])
    );
    assert_eq!(got.values().sum::<usize>(), 791);
}

#[test]
fn bc5cdr_evaluation_fixture_type_counts() {
    let (corpus, _) = load_corpus(&fixture("bc5cdr-eval")).unwrap();
    let got = entity_type_counts(corpus.gold().values());
    assert_eq!(got, counts(&[("Chemical", 1195), ("Disease", 951)]));
    assert_eq!(got.values().sum::<usize>(), 2146);
}

#[test]
fn fixture_round_trips_through_writer() {
    let (corpus, _) = load_corpus(&fixture("ncbi-eval")).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(tmp.path(), &corpus).unwrap();
    let (again, _) = load_corpus(tmp.path()).unwrap();
    assert_eq!(again.gold(), corpus.gold());
}

fn pool(n: usize) -> Corpus {
    let mut corpus = Corpus::new();
    for i in 0..n {
        let doc = Document::new(Some("POOL"), &format!("{i}"), format!("text {i}"));
        let gold = AnnotationSet::empty(doc.doc_id.clone(), Provenance::Gold);
        corpus.insert(doc, gold).unwrap();
    }
    corpus
}

/// Textbook Fisher-Yates over the sorted ids.
fn reference_shuffle(mut ids: Vec<String>, seed: u64, stream: u64) -> Vec<String> {
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut i = ids.len();
    while i > 1 {
        i -= 1;
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
    ids
}

#[test]
fn evaluation_draw_matches_reference_shuffle() {
    let corpus = pool(500);
    for seed in [0, 1, 42, 2025] {
        let split = sample_splits(&corpus, None, SplitSpec { seed, dev_size: 10, eval_size: 100 }).unwrap();
        let ids: Vec<String> = corpus.doc_ids().map(str::to_owned).collect();
        let reference = reference_shuffle(ids, seed, 0);
        assert_eq!(split.dev_ids, reference[..10]);
        assert_eq!(split.eval_ids, reference[10..110]);
        let distinct: BTreeSet<_> = split.eval_ids.iter().chain(&split.dev_ids).collect();
        assert_eq!(distinct.len(), 110);
        assert_eq!(split.eval.len(), 100);
    }
}

#[test]
fn separate_pools_exclude_dev_ids() {
    let dev_pool = pool(50);
    let eval_pool = pool(200);
    let split = sample_splits(&dev_pool, Some(&eval_pool), SplitSpec { seed: 7, dev_size: 10, eval_size: 100 }).unwrap();
    for id in &split.dev_ids {
        assert!(!split.eval_ids.contains(id));
    }
    let remaining: Vec<String> = eval_pool.doc_ids().filter(|id| !split.dev_ids.iter().any(|d| d == id)).map(str::to_owned).collect();
    assert_eq!(split.eval_ids, reference_shuffle(remaining, 7, 1)[..100]);
}

proptest! {
    #[test]
    fn type_counts_equal_brute_tally(seed in any::<u64>()) {
        let docs = random_documents(30, seed);
        let mut tally: BTreeMap<Label, usize> = BTreeMap::new();
        for d in &docs {
            for e in d.gold.entities() {
                let slot = tally.entry(e.label.clone()).or_insert(0);
                *slot += 1;
            }
        }
        prop_assert_eq!(entity_type_counts(docs.iter().map(|d| &d.gold)), tally);
    }
}
