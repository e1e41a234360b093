//! Independent reference implementations used by the acceptance and
//! property suites. None of these call into the library's matching or
//! categorization code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use guidemod::corpus::{AnnotationSet, Document, Entity, Provenance};
use guidemod::discrepancy::{Category, DiscrepancyCase};
use guidemod::eval::MatchCounts;

pub type Triplet = (usize, usize, String);

fn triplet(e: &Entity) -> Triplet {
    (e.begin, e.end, e.label.to_string())
}

pub const LABELS: [&str; 3] = ["A", "B", "C"];

/// One random document with a gold and a predicted set.
pub struct RandomDoc {
    pub doc: Document,
    pub gold: AnnotationSet,
    pub pred: AnnotationSet,
}

fn random_entities(rng: &mut ChaCha8Rng, len: usize, max: usize, prefix: &str) -> Vec<Entity> {
    let n = rng.random_range(0..=max);
    (0..n)
        .map(|i| {
            let begin = rng.random_range(0..len - 1);
            let end = rng.random_range(begin + 1..=(begin + 8).min(len));
            let label = LABELS[rng.random_range(0..LABELS.len())];
            Entity::new(format!("{prefix}{i}"), begin, end, label)
        })
        .collect()
}

/// `n` documents of 40 chars, up to 10 entities per side. About a third of
/// the gold entities are copied into the predictions, so true positives,
/// near misses and clean misses all occur.
pub fn random_documents(n: usize, seed: u64) -> Vec<RandomDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|d| {
            let len = 40;
            let text: String = (0..len)
                .map(|_| if rng.random_bool(0.2) { ' ' } else { rng.random_range(b'a'..=b'z') as char })
                .collect();
            let doc = Document::new(Some("RND"), &format!("{d:04}"), text);
            let gold = random_entities(&mut rng, len, 10, "G");
            let mut pred = random_entities(&mut rng, len, 7, "P");
            for g in &gold {
                if pred.len() < 10 && rng.random_bool(0.35) {
                    pred.push(Entity::new(format!("C{}", pred.len()), g.begin, g.end, g.label.clone()));
                }
            }
            let provenance = Provenance::Predicted {
                iteration: 0,
                model_id: "random".into(),
            };
            let gold = AnnotationSet::new(doc.doc_id.clone(), gold, Provenance::Gold).0;
            let pred = AnnotationSet::new(doc.doc_id.clone(), pred, provenance).0;
            RandomDoc { doc, gold, pred }
        })
        .collect()
}

/// Pairwise-equality strict matching: a prediction is a true positive when
/// some gold entity has the same begin, end and label.
pub fn strict_match_oracle(pred: &[Entity], gold: &[Entity]) -> (MatchCounts, Vec<Triplet>) {
    let mut matched = Vec::new();
    for p in pred {
        if gold.iter().any(|g| g.begin == p.begin && g.end == p.end && g.label == p.label) {
            matched.push(triplet(p));
        }
    }
    let tp = matched.len();
    (MatchCounts::new(tp, pred.len() - tp, gold.len() - tp), matched)
}

/// Character-index-set intersection size.
pub fn overlap_oracle(a: (usize, usize), b: (usize, usize)) -> usize {
    (a.0..a.1).filter(|i| (b.0..b.1).contains(i)).count()
}

pub type CaseKey = (Category, Option<Triplet>, Option<Triplet>);

pub fn case_key(c: &DiscrepancyCase) -> CaseKey {
    (c.category, c.gold.as_ref().map(triplet), c.pred.as_ref().map(triplet))
}

fn ov(a: &Triplet, b: &Triplet) -> usize {
    overlap_oracle((a.0, a.1), (b.0, b.1))
}

/// Categorization by repeated exhaustive scans: every round looks at all
/// unconsumed gold/pred pairs and takes the best one under the priority
/// rules, until no admissible pair is left.
/// Overlap descending, then gold and pred positions and labels.
type PairRank = (std::cmp::Reverse<usize>, usize, usize, usize, String, usize, String);

pub fn categorize_oracle(pred: &[Entity], gold: &[Entity]) -> Vec<CaseKey> {
    let all_gold: Vec<Triplet> = gold.iter().map(triplet).collect();
    let all_pred: Vec<Triplet> = pred.iter().map(triplet).collect();
    let golds: Vec<Triplet> = all_gold.iter().filter(|g| !all_pred.contains(g)).cloned().collect();
    let preds: Vec<Triplet> = all_pred.iter().filter(|p| !all_gold.contains(p)).cloned().collect();
    let mut g_used = vec![false; golds.len()];
    let mut p_used = vec![false; preds.len()];
    let mut out = Vec::new();

    for same in [false, true] {
        loop {
            let mut best: Option<(PairRank, usize, usize)> = None;
            for (gi, g) in golds.iter().enumerate() {
                for (pi, p) in preds.iter().enumerate() {
                    if g_used[gi] || p_used[pi] || (g.2 == p.2) != same {
                        continue;
                    }
                    let o = ov(g, p);
                    if o == 0 {
                        continue;
                    }
                    let key = (std::cmp::Reverse(o), g.0, p.0, g.1, g.2.clone(), p.1, p.2.clone());
                    if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                        best = Some((key, gi, pi));
                    }
                }
            }
            let Some((_, gi, pi)) = best else { break };
            g_used[gi] = true;
            p_used[pi] = true;
            let cat = if same { Category::BoundaryMismatch } else { Category::LabelMismatch };
            out.push((cat, Some(golds[gi].clone()), Some(preds[pi].clone())));
        }
    }

    let best_of = |e: &Triplet, others: &[Triplet]| -> Option<Triplet> {
        let mut cands: Vec<&Triplet> = others.iter().filter(|o| ov(e, o) > 0).collect();
        cands.sort_by(|a, b| ov(e, b).cmp(&ov(e, a)).then_with(|| a.cmp(b)));
        cands.first().map(|t| (*t).clone())
    };
    let category = |g: &Triplet, p: &Triplet| {
        if g.2 == p.2 {
            Category::BoundaryMismatch
        } else {
            Category::LabelMismatch
        }
    };
    for (gi, g) in golds.iter().enumerate() {
        if !g_used[gi] {
            out.push(match best_of(g, &all_pred) {
                None => (Category::FalseNegative, Some(g.clone()), None),
                Some(p) => (category(g, &p), Some(g.clone()), Some(p)),
            });
        }
    }
    for (pi, p) in preds.iter().enumerate() {
        if !p_used[pi] {
            out.push(match best_of(p, &all_gold) {
                None => (Category::FalsePositive, None, Some(p.clone())),
                Some(g) => (category(&g, p), Some(g), Some(p.clone())),
            });
        }
    }
    out.sort();
    out
}

fn f1(c: MatchCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// Exact one-sided sign-flip p-value over all `2^n` swaps of the two runs.
pub fn sign_flip_oracle(docs: &[(MatchCounts, MatchCounts)]) -> f64 {
    let sum = |pick: &dyn Fn(usize) -> MatchCounts| -> MatchCounts { (0..docs.len()).map(pick).sum() };
    let observed = f1(sum(&|i| docs[i].1)) - f1(sum(&|i| docs[i].0));
    let n = docs.len();
    let mut hits = 0usize;
    for mask in 0u32..(1 << n) {
        let flip = |i: usize| mask >> i & 1 == 1;
        let g = sum(&|i| if flip(i) { docs[i].1 } else { docs[i].0 });
        let m = sum(&|i| if flip(i) { docs[i].0 } else { docs[i].1 });
        if f1(m) - f1(g) >= observed - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}
