use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use speechunits::pipeline::{
    load_config, run_pipeline, sha256_hex, PipelineConfig, PipelineReport,
};
use speechunits::toy::{ToyCorpus, ToySpec};

fn corpus() -> ToyCorpus {
    ToyCorpus::generate(&ToySpec {
        natural: 12,
        synthetic: 6,
        ..ToySpec::default()
    })
}

fn run_in(root: &Path, threads: usize, config: Option<&str>) -> PipelineReport {
    let toy = corpus();
    let path = toy.write_to(root).unwrap();
    if let Some(text) = config {
        fs::write(&path, text).unwrap();
    }
    let (cfg, base) = load_config(&path).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(|| run_pipeline(&cfg, &base)).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, sha256_hex(&fs::read(&p).unwrap()));
            }
        }
    }
    out
}

#[test]
fn full_pipeline_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let r1 = run_in(a.path(), 1, None);
    let r4 = run_in(b.path(), 4, None);
    let again = run_in(c.path(), 4, None);
    assert_eq!(r1.to_lines(), r4.to_lines());
    assert_eq!(r4.to_lines(), again.to_lines());

    let names: Vec<&str> = r1.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(
        names,
        [
            "kmeans-fit",
            "dpdp",
            "dedup",
            "purity",
            "f0",
            "targets",
            "augment",
            "compose",
            "sample"
        ]
    );

    let t1 = tree(&a.path().join("out"));
    assert_eq!(t1, tree(&b.path().join("out")));
    for d in r1.digests() {
        assert_eq!(t1.get(&d.path), Some(&d.sha256), "{}", d.path);
    }
    for f in [
        "codebook.kmcb",
        "purity.json",
        "targets.jsonl",
        "merged.jsonl",
        "schedule.txt",
    ] {
        assert!(t1.contains_key(f), "{f} missing");
    }

    let purity: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("out/purity.json")).unwrap())
            .unwrap();
    assert!(purity["phone_purity"].as_f64().unwrap() > 0.8, "{purity}");
    let schedule = fs::read_to_string(a.path().join("out/schedule.txt")).unwrap();
    assert_eq!(schedule.lines().count(), 1000);
}

#[test]
fn report_lines_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_in(dir.path(), 2, None);
    for line in r.to_lines().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["stage"].is_string());
        assert!(v["outputs"].is_array());
    }
}

#[test]
fn missing_codebook_names_stage_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let toy = corpus();
    let text = toy
        .pipeline_config()
        .replace(
            r#"stages = ["kmeans-fit", "dpdp", "dedup", "purity", "f0", "targets", "augment", "compose", "sample"]"#,
            r#"stages = ["dpdp"]"#,
        )
        .replace("seed = 0\n\n[dpdp]", "seed = 0\ncodebook = \"nowhere/cb.kmcb\"\n\n[dpdp]");
    toy.write_to(dir.path()).unwrap();
    let cfg = PipelineConfig::parse(&text).unwrap();
    let err = run_pipeline(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, "dpdp");
    let msg = err.to_string();
    assert!(
        msg.contains("dpdp") && msg.contains("nowhere/cb.kmcb"),
        "{msg}"
    );
}

#[test]
fn empty_stage_list_does_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text = corpus().pipeline_config();
    let start = text.find("stages = [").unwrap();
    let end = start + text[start..].find(']').unwrap() + 1;
    let text = format!("{}stages = []{}", &text[..start], &text[end..]);
    let r = run_in(dir.path(), 1, Some(&text));
    assert!(r.stages.is_empty());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_errors() {
    let base = corpus().pipeline_config();
    let unknown = base.replace("[compose]", "[compose]\nbogus = 1");
    assert_eq!(PipelineConfig::parse(&unknown).unwrap_err().stage, "config");
    let reordered = base.replace(r#"["kmeans-fit", "dpdp""#, r#"["dpdp", "kmeans-fit""#);
    assert!(PipelineConfig::parse(&reordered)
        .and_then(|c| c.stages().map(|_| ()))
        .is_err());
    let typo = base.replace(r#""purity""#, r#""purty""#);
    assert!(PipelineConfig::parse(&typo)
        .and_then(|c| c.stages().map(|_| ()))
        .is_err());
}
