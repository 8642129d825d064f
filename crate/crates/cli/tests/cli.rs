use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dance_core::concepts::ConceptKind;
use dance_core::context::{run_context_labeling, write_context_labels, EmbeddingTable};
use dance_core::explain::top_k_explanation;
use dance_core::ingest::{generate_synthetic_dataset, load_manifest, SyntheticConfig, SyntheticDataset};
use dance_core::intervene::{edit_class_weight_at, intervention_report};
use dance_core::keyclip::KeyClipsFile;
use dance_core::motion::{run_motion_discovery, MotionParams};
use dance_core::pipeline::{evaluate_stage, keyclips_stage, train_from_label_paths, RunConfig};
use dance_core::train::DanceModel;

fn dance(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dance")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dance(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &Path) -> SyntheticDataset {
    generate_synthetic_dataset(
        &SyntheticConfig {
            videos: 80,
            seed: 21,
            ..SyntheticConfig::default()
        },
        &dir.join("data"),
    )
    .unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn stage_commands_equal_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let m = s(&ds.manifest_path);
    let cli = dir.path().join("cli");
    let lib = dir.path().join("lib");
    fs::create_dir_all(&lib).unwrap();
    let p = |base: &Path, name: &str| base.join(name).to_str().unwrap().to_string();

    ok(&["keyclips", "--manifest", m, "--out", &p(&cli, "clips.json")]);
    ok(&[
        "discover-motion",
        "--manifest",
        m,
        "--clips",
        &p(&cli, "clips.json"),
        "--target-concepts",
        "8",
        "--out-concepts",
        &p(&cli, "motion.json"),
        "--out-labels",
        &p(&cli, "c_m.dtf"),
    ]);
    for (kind, cands, out) in [("object", &ds.object_candidates, "c_o.dtf"), ("scene", &ds.scene_candidates, "c_s.dtf")] {
        ok(&[
            "label-context",
            "--manifest",
            m,
            "--kind",
            kind,
            "--candidates",
            s(cands),
            "--text-embeddings",
            s(&ds.text_embeddings),
            "--out",
            &p(&cli, out),
        ]);
    }
    ok(&[
        "train",
        "--manifest",
        m,
        "--motion-labels",
        &p(&cli, "c_m.dtf"),
        "--object-labels",
        &p(&cli, "c_o.dtf"),
        "--scene-labels",
        &p(&cli, "c_s.dtf"),
        "--lambda",
        "1e-3",
        "--seed",
        "9",
        "--out",
        &p(&cli, "model"),
    ]);
    let metrics = ok(&["evaluate", "--model", &p(&cli, "model"), "--manifest", m]);

    let manifest = load_manifest(&ds.manifest_path).unwrap();
    let cfg = RunConfig::default();
    let clips = keyclips_stage(&manifest, cfg.clip_length, &cfg.keyframes).unwrap();
    assert_eq!(KeyClipsFile::read(cli.join("clips.json")).unwrap(), clips);
    let params = MotionParams {
        target_concepts: 8,
        ..MotionParams::default()
    };
    run_motion_discovery(&manifest, "train", Some(&clips), &params)
        .unwrap()
        .write(&lib.join("motion.json"), &lib.join("c_m.dtf"))
        .unwrap();
    let table = EmbeddingTable::load(&ds.text_embeddings).unwrap();
    for (kind, cands, out) in [
        (ConceptKind::Object, &ds.object_candidates, "c_o.dtf"),
        (ConceptKind::Scene, &ds.scene_candidates, "c_s.dtf"),
    ] {
        let (set, labels) = run_context_labeling(&manifest, kind, cands, &table, &cfg.concept_filter, false).unwrap();
        write_context_labels(&manifest, &set, &labels, &lib.join(out)).unwrap();
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.lambda = 1e-3;
    train_cfg.seed = 9;
    let model = train_from_label_paths(
        &manifest,
        "train",
        &lib.join("c_m.dtf"),
        &lib.join("c_o.dtf"),
        &lib.join("c_s.dtf"),
        &train_cfg,
    )
    .unwrap();
    model.save(&lib.join("model")).unwrap();

    for name in ["motion.json", "c_m.dtf", "c_m.concepts.json", "c_o.dtf", "c_o.concepts.json", "c_s.dtf", "c_s.concepts.json"] {
        assert_eq!(fs::read(cli.join(name)).unwrap(), fs::read(lib.join(name)).unwrap(), "{name}");
    }
    assert_eq!(files(&cli.join("model")), files(&lib.join("model")));
    let expected = serde_json::to_string_pretty(&evaluate_stage(&model, &manifest, "test").unwrap()).unwrap();
    assert_eq!(metrics, expected + "\n");
}

#[test]
fn run_matches_in_process_pipeline_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["synth", "--out", s(&dir.path().join("data")), "--videos", "80", "--seed", "2"]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let config = PathBuf::from(summary["run_config"].as_str().unwrap());

    let first: serde_json::Value = serde_json::from_str(&ok(&["--config", s(&config), "run"])).unwrap();
    let second: serde_json::Value = serde_json::from_str(&ok(&["--config", s(&config), "run"])).unwrap();
    assert!(first["stages"].as_array().unwrap().iter().all(|s| s["skipped"] == false));
    assert!(second["stages"].as_array().unwrap().iter().all(|s| s["skipped"] == true));
    assert_eq!(first["metrics"], second["metrics"]);

    let mut cfg = RunConfig::load(&config).unwrap();
    cfg.work_dir = Some(dir.path().join("in-process"));
    let report = dance_core::pipeline::run_pipeline(&cfg).unwrap();
    assert_eq!(first["metrics"], serde_json::to_value(&report.metrics).unwrap());
    let model_dir = PathBuf::from(first["model_dir"].as_str().unwrap());
    assert_eq!(files(&model_dir), files(&report.model_dir));
}

#[test]
fn flags_override_config_and_seed_threads_through() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let config = dir.path().join("run.json");
    RunConfig {
        manifest: Some(ds.manifest_path.clone()),
        work_dir: Some(dir.path().join("work")),
        object_candidates: Some(ds.object_candidates.clone()),
        scene_candidates: Some(ds.scene_candidates.clone()),
        text_embeddings: Some(ds.text_embeddings.clone()),
        seed: Some(1),
        ..RunConfig::default()
    }
    .write(&config)
    .unwrap();
    ok(&["--config", s(&config), "run"]);
    let work = dir.path().join("work");
    ok(&[
        "--config",
        s(&config),
        "--seed",
        "33",
        "train",
        "--motion-labels",
        s(&work.join("c_m.dtf")),
        "--object-labels",
        s(&work.join("c_obj.dtf")),
        "--scene-labels",
        s(&work.join("c_scene.dtf")),
        "--alpha",
        "0.5",
        "--out",
        s(&dir.path().join("m2")),
    ]);
    let base = DanceModel::load(&work.join("model")).unwrap();
    let m2 = DanceModel::load(&dir.path().join("m2")).unwrap();
    assert_eq!(base.config().seed, 1);
    assert_eq!(m2.config().seed, 33);
    assert_eq!(m2.config().alpha, 0.5);
    assert_eq!(m2.config().lambda, base.config().lambda);
}

#[test]
fn missing_motion_labels_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let out = dance(&["train", "--manifest", s(&ds.manifest_path), "--out", s(&dir.path().join("m"))]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("--motion-labels"), "{err}");
    assert!(err.contains("train"), "{err}");
}

#[test]
fn stage_failure_exits_nonzero_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    fs::write(&ds.scene_candidates, "[]").unwrap();
    let out = dance(&[
        "run",
        "--manifest",
        s(&ds.manifest_path),
        "--work-dir",
        s(&dir.path().join("w")),
        "--object-candidates",
        s(&ds.object_candidates),
        "--scene-candidates",
        s(&ds.scene_candidates),
        "--text-embeddings",
        s(&ds.text_embeddings),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("stage label-context:scene failed"), "{err}");
}

#[test]
fn explain_edit_and_report_equal_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["synth", "--out", s(&dir.path().join("data")), "--videos", "60", "--shift-test-context"]);
    let summary: serde_json::Value = serde_json::from_str(&out).unwrap();
    let config = summary["run_config"].as_str().unwrap().to_string();
    let manifest_path = summary["manifest"].as_str().unwrap().to_string();
    let run: serde_json::Value = serde_json::from_str(&ok(&["--config", &config, "run"])).unwrap();
    let model_dir = run["model_dir"].as_str().unwrap().to_string();
    let model = DanceModel::load(Path::new(&model_dir)).unwrap();
    let manifest = load_manifest(&manifest_path).unwrap();

    let id = manifest.split_ids("test").unwrap()[2].clone();
    let shown = ok(&["explain", "--model", &model_dir, "--manifest", &manifest_path, "--video", &id, "-k", "3"]);
    let x = manifest.load_features(&[manifest.index_of(&id).unwrap()]).unwrap();
    let mut e = top_k_explanation(x.row(0), &model, 3).unwrap();
    e.video_id = Some(id);
    assert_eq!(shown, serde_json::to_string_pretty(&e).unwrap() + "\n");

    let edited_dir = dir.path().join("edited");
    let class_name = model.class_names()[1].clone();
    let record: serde_json::Value = serde_json::from_str(&ok(&[
        "edit",
        "--model",
        &model_dir,
        "--class",
        &class_name,
        "--concept",
        "0",
        "--value",
        "-1.5",
        "--out",
        s(&edited_dir),
    ]))
    .unwrap();
    assert_eq!(record["class"], 1);
    assert_eq!(record["new_value"], -1.5);
    let edited = DanceModel::load(&edited_dir).unwrap();
    let ts = edited.edit_log()[0].timestamp;
    assert_eq!(edited, edit_class_weight_at(&model, 1, 0, -1.5, ts).unwrap());

    let shown = ok(&["report", "--manifest", &manifest_path, "--before", &model_dir, "--after", s(&edited_dir)]);
    let expected = intervention_report(&model, &edited, &manifest, "test").unwrap();
    assert_eq!(shown, serde_json::to_string_pretty(&expected).unwrap() + "\n");
}

#[test]
fn short_flag_aliases_work() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(dir.path());
    let m = s(&ds.manifest_path);
    let w = dir.path().join("w");
    let p = |name: &str| w.join(name).to_str().unwrap().to_string();
    ok(&["keyclips", "--manifest", m, "--L", "16", "--max-clips", "3", "--out", &p("clips.json")]);
    let clips = KeyClipsFile::read(w.join("clips.json")).unwrap();
    assert!(clips.videos.iter().all(|v| v.windows.len() <= 3 && v.windows.iter().all(|c| c.end - c.start == 16)));
    ok(&[
        "discover-motion",
        "--manifest",
        m,
        "--clips",
        &p("clips.json"),
        "--target-M",
        "8",
        "--metric",
        "cosine",
        "--out",
        &p("motion_concepts.json"),
    ]);
    assert!(w.join("c_m.dtf").is_file());
    for (kind, cands, out) in [("object", &ds.object_candidates, "c_o.dtf"), ("scene", &ds.scene_candidates, "c_s.dtf")] {
        ok(&["label-context", "--kind", kind, "--candidates", s(cands), "--embeds", s(&ds.text_embeddings), "--manifest", m, "--out", &p(out)]);
    }
    ok(&[
        "train",
        "--manifest",
        m,
        "--motion-labels",
        &p("c_m.dtf"),
        "--object-labels",
        &p("c_o.dtf"),
        "--scene-labels",
        &p("c_s.dtf"),
        "--lambda",
        "1e-4",
        "--alpha",
        "0.99",
        "--out",
        &p("model"),
    ]);
    let shown = ok(&["explain", "--model", &p("model"), "--manifest", m, "--video", "v0001", "--top", "3", "--json"]);
    let e: serde_json::Value = serde_json::from_str(&shown).unwrap();
    assert_eq!(e["items"].as_array().unwrap().len(), 3);
}
