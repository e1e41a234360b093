use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use guidemod::annotator::Annotator;
use guidemod::corpus::{write_corpus, AnnotationSet, Corpus, Document, Entity, Provenance};
use guidemod::gateway::{CompletionRequest, CompletionResponse, Family, FixtureStore, FnProvider, Gateway, Mode, ModelSpec};
use guidemod::moderator::Moderator;
use guidemod::orchestrator::{LoopConfig, Runner};
use guidemod::{EntitySchema, Exec, Guideline};

const SLOT: usize = 6;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_guidemod"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn schema() -> EntitySchema {
    EntitySchema::new([("Disease", "a disease mention")]).unwrap()
}

fn model() -> ModelSpec {
    ModelSpec::new(Family::Other, "scripted-model")
}

/// Ten documents of twenty tokens; gold marks the even tokens.
fn corpus() -> Corpus {
    let mut corpus = Corpus::new();
    for d in 0..10 {
        let text = (0..20).map(|i| format!("{d:02}t{i:02}")).collect::<Vec<_>>().join(" ");
        let doc = Document::new(Some("SYN"), &format!("{d:03}"), text);
        let gold = (0..10)
            .map(|j| Entity::new(format!("T{j}"), 2 * j * SLOT, 2 * j * SLOT + 5, "Disease"))
            .collect();
        let (gold, _) = AnnotationSet::new(doc.doc_id.clone(), gold, Provenance::Gold);
        corpus.insert(doc, gold).unwrap();
    }
    corpus
}

fn guideline_text(revision: usize) -> String {
    let mut text = format!("Guideline revision R{revision}.\n\n**1. Annotate diseases**\nMark every disease mention.\n");
    for r in 1..=revision {
        text.push_str(&format!("\n**{}. Added rule {r}**\nRule body {r}.\n", r + 1));
    }
    text
}

fn after(prompt: &str, marker: &str) -> usize {
    let at = prompt.find(marker).unwrap() + marker.len();
    prompt[at..].chars().take_while(char::is_ascii_digit).collect::<String>().parse().unwrap()
}

/// Annotation quality follows `schedule[revision]` true positives out of
/// 100; each refinement appends one section.
fn record(fixtures: &Path, archive: &Path, schedule: Vec<usize>) {
    let provider = Arc::new(FnProvider(move |req: &CompletionRequest| {
        let p = &req.user_text;
        let text = if p.starts_with("SYSTEM INSTRUCTION") {
            let d = after(p, "\n---\n");
            let tp = schedule[after(p, "Guideline revision R")];
            let items: Vec<String> = (0..10)
                .map(|j| {
                    let t = if d * 10 + j < tp { 2 * j } else { 2 * j + 1 };
                    format!(r#"{{"begin": {}, "end": {}, "label": "Disease", "span_text": "{d:02}t{t:02}"}}"#, t * SLOT, t * SLOT + 5)
                })
                .collect();
            format!("{{\"annotations\": [{}]}}", items.join(", "))
        } else if p.starts_with("You are reviewing") {
            "**Pattern Name:** Missed items\n**Confusion Trigger:** lists\n**Contrastive Evidence:** heads\n**Rule (Proposed):** tag items".into()
        } else if p.contains("OBSERVED ERROR PATTERN") {
            "IF an item appears in a list\nTHEN annotate it\nEXCEPT process terms".into()
        } else {
            guideline_text(after(p, "Guideline revision R") + 1)
        };
        Ok(CompletionResponse {
            input_tokens: p.len() as u64,
            output_tokens: text.len() as u64,
            latency_secs: 1.0,
            text,
        })
    }));
    let gateway = Gateway::new(Mode::Record, Some(FixtureStore::open(fixtures).unwrap()), Some(provider));
    let corpus = corpus();
    let annotator = Annotator::with_default_template(schema(), model()).unwrap();
    let moderator = Moderator::new(model(), schema());
    let runner = Runner {
        gateway: &gateway,
        annotator: &annotator,
        moderator: &moderator,
        corpus: &corpus,
        config: LoopConfig::default(),
        exec: Exec::default(),
    };
    runner.run(archive, &Guideline::new(0, guideline_text(0))).unwrap();
}

/// Corpus, guideline, price table and a replay config under `dir`.
fn workspace(dir: &Path, fixtures: &Path) -> PathBuf {
    write_corpus(&dir.join("corpus"), &corpus()).unwrap();
    std::fs::write(dir.join("guideline.md"), guideline_text(0)).unwrap();
    std::fs::write(dir.join("prices.csv"), "model_id,price_in,price_out,currency\nscripted-model,1.0,4.0,USD\n").unwrap();
    let config = format!(
        r#"archive = "run"
corpus = "corpus"
guideline = "guideline.md"

[[schema]]
name = "Disease"
definition = "a disease mention"

[model]
family = "other"
model_id = "scripted-model"

[gateway]
mode = "replay"
fixtures = "{}"
price_table = "prices.csv"
"#,
        fixtures.display()
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn loop_exit_codes_follow_the_run_outcome() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    record(&fx, &tmp.path().join("recorded"), vec![46, 73, 76, 74]);
    let config = workspace(tmp.path(), &fx);
    let cfg = config.to_str().unwrap();

    let out = run(&["loop", "--config", cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("0.4600 0.7300 0.7600 0.7400"), "{text}");
    assert!(text.contains("accepted rounds: 2"), "{text}");
    let recorded = std::fs::read(tmp.path().join("recorded/final-guideline.md")).unwrap();
    assert_eq!(std::fs::read(tmp.path().join("run/final-guideline.md")).unwrap(), recorded);

    let threshold = tmp.path().join("th");
    std::fs::create_dir(&threshold).unwrap();
    let fx_th = threshold.join("fx");
    record(&fx_th, &threshold.join("recorded"), vec![95]);
    let config = workspace(&threshold, &fx_th);
    assert_eq!(run(&["loop", "--config", config.to_str().unwrap()]).status.code(), Some(0));

    let missing = tmp.path().join("missing");
    std::fs::create_dir(&missing).unwrap();
    let config = workspace(&missing, &missing.join("empty-fx"));
    let out = run(&["loop", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage annotate"));
}

#[test]
fn report_and_stats_read_archives() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    record(&fx, &tmp.path().join("recorded"), vec![46, 73, 76, 74]);
    let config = workspace(tmp.path(), &fx);
    run(&["loop", "--config", config.to_str().unwrap()]);
    let archive = tmp.path().join("run");
    let spec = format!("SYN={}", archive.display());

    let out = run(&["report", "--run", &spec, "--matrices", "--costs"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().filter(|l| l.starts_with("SYN\t")).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0][..7], ["SYN", "scripted-model", "G", "0.4600", "0.4600", "0.4600", "46"]);
    assert_eq!(rows[1][..7], ["SYN", "scripted-model", "M", "0.7600", "0.7600", "0.7600", "76"]);
    assert_eq!(rows[1][8], "2");
    assert_eq!(text.matches("# SYN scripted-model iteration").count(), 4);
    // Cost row: i = 4 ledger iterations, priced from prices.csv.
    assert_eq!(rows[2][2], "4");
    assert!(rows[2][7].parse::<f64>().unwrap() > 0.0);

    let a = archive.display().to_string();
    let out = run(&["stats", "--g", &a, "--m", &a, "--dataset", "SYN", "--bootstrap", "500", "--permutations", "500"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[..5], ["SYN", "scripted-model", "0.4600", "0.7600", "+0.3000"]);
    let again = stdout(&run(&["stats", "--g", &a, "--m", &a, "--dataset", "SYN", "--bootstrap", "500", "--permutations", "500", "--sequential"]));
    assert_eq!(again, text);
}

#[test]
fn one_shot_commands_replay_the_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    let recorded = tmp.path().join("recorded");
    record(&fx, &recorded, vec![46, 73, 76, 74]);
    let config = workspace(tmp.path(), &fx);
    let cfg = config.to_str().unwrap();
    let corpus_dir = tmp.path().join("corpus");
    let gold = corpus_dir.to_str().unwrap();

    let pred = tmp.path().join("pred");
    let out = run(&["annotate", "--config", cfg, "--out", pred.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("10 documents, 100 entities"));

    let eval_json = tmp.path().join("eval.json");
    let out = run(&["evaluate", "--gold", gold, "--pred", pred.to_str().unwrap(), "--out", eval_json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("Disease\t0.4600\t0.4600\t0.4600\t46\t54\t54"));
    let reference = std::fs::read_to_string(recorded.join("iter-000/evaluation.json")).unwrap();
    let a: serde_json::Value = serde_json::from_str(&reference).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval_json).unwrap()).unwrap();
    assert_eq!(a, b);

    let out = run(&["analyze", "--gold", gold, "--pred", pred.to_str().unwrap(), "--labels", "Disease"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("dominant: Disease -> NONE (54 cases)"), "{}", stdout(&out));

    let round = tmp.path().join("round");
    let out = run(&["moderate", "--config", cfg, "--pred", pred.to_str().unwrap(), "--out", round.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(round.join("guideline.md")).unwrap(),
        std::fs::read_to_string(recorded.join("iter-001/guideline.md")).unwrap()
    );
}

#[test]
fn matrix_fixture_through_analyze() {
    let dir = core_fixtures().join("matrix-iter0");
    let out = run(&[
        "analyze",
        "--gold",
        dir.join("gold").to_str().unwrap(),
        "--pred",
        dir.join("pred").to_str().unwrap(),
        "--labels",
        "CompositeMention,DiseaseClass,Modifier,SpecificDisease",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("dominant: DiseaseClass -> NONE (7 cases)"), "{}", stdout(&out));
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "archive = 3").unwrap();
    let out = run(&["loop", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(run(&["report", "--run", "no-equals-sign"]).status.code(), Some(1));
}
