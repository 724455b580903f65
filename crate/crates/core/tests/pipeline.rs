use std::path::Path;

use codesign::finalize::PsoConfig;
use codesign::neural::NetConfig;
use codesign::pareto::GaConfig;
use codesign::pipeline::*;
use codesign::sim::EnvConfig;
use codesign::train::TrainConfig;

fn tiny() -> PipelineConfig {
    PipelineConfig {
        seed: 7,
        pareto: GaConfig {
            population_size: 24,
            generations: 8,
            runs: 2,
            ..Default::default()
        },
        env: EnvConfig::default().with_scale(5, 1),
        train: TrainConfig {
            episodes_per_batch: 8,
            minibatches: 2,
            epochs_per_batch: 2,
            total_episodes: 32,
            checkpoint_every: 2,
            net: NetConfig {
                hidden: 8,
                ..Default::default()
            },
            ..Default::default()
        },
        evaluation: EvaluationConfig {
            scales: vec![(5, 1), (8, 2)],
            episodes: 4,
        },
        finalize: PsoConfig {
            swarm_size: 12,
            iterations: 10,
            ..Default::default()
        },
        srta: SrtaConfig {
            task_multipliers: vec![1, 2],
            episodes: 3,
        },
        ..Default::default()
    }
}

fn resume() -> PipelineOptions {
    PipelineOptions {
        resume: true,
        ..Default::default()
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fresh_run_completes_and_rerun_reuses() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&tiny(), dir.path(), &PipelineOptions::default()).unwrap();
    assert_eq!(first.executed, Stage::ALL.to_vec());
    assert!(Stage::ALL.iter().all(|s| first.manifest.is_complete(*s)));
    let second = run_pipeline(&tiny(), dir.path(), &resume()).unwrap();
    assert!(second.executed.is_empty());
    assert_eq!(second.reused, Stage::ALL.to_vec());
    assert_eq!(first.manifest, second.manifest);
}

#[test]
fn train_edit_reuses_upstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(), dir.path(), &PipelineOptions::default()).unwrap();
    let mut cfg = tiny();
    cfg.train.actor_lr = 5e-4;
    let out = run_pipeline(&cfg, dir.path(), &resume()).unwrap();
    assert_eq!(out.reused, vec![Stage::Pareto, Stage::Boundary]);
    assert_eq!(
        out.executed,
        vec![Stage::Train, Stage::Finalize, Stage::Baselines, Stage::Evaluate]
    );
}

#[test]
fn tampered_artifact_invalidates_stage() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(), dir.path(), &PipelineOptions::default()).unwrap();
    let m = RunManifest::load(dir.path()).unwrap();
    assert!(m.verify(dir.path(), Stage::Finalize));
    std::fs::write(dir.path().join(paths::FINAL), "{}").unwrap();
    assert!(!m.verify(dir.path(), Stage::Finalize));
    let out = run_pipeline(&tiny(), dir.path(), &resume()).unwrap();
    assert_eq!(out.executed, vec![Stage::Finalize]);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(), a.path(), &PipelineOptions::default()).unwrap();
    run_pipeline(&tiny(), b.path(), &PipelineOptions::default()).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));
    let other = PipelineConfig { seed: 8, ..tiny() };
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&other, c.path(), &PipelineOptions::default()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(c.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn failing_stage_blocks_downstream() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&tiny(), dir.path(), &PipelineOptions::default()).unwrap();
    let mut cfg = tiny();
    // no design can satisfy the propeller constraint
    cfg.morphology.bounds.lower.propeller_diameter = 0.55;
    cfg.morphology.bounds.upper.arm_length = 0.2;
    cfg.pareto.feasibility_budget = Some(3);
    let err = run_pipeline(&cfg, dir.path(), &resume()).unwrap_err();
    assert!(matches!(err, codesign::error::Error::Stage { ref stage, .. } if stage == "pareto"));
    let m = RunManifest::load(dir.path()).unwrap();
    assert_eq!(m.record(Stage::Pareto).unwrap().status, StageStatus::Failed);
    assert!(m.record(Stage::Pareto).unwrap().diagnostics.is_some());
    assert_eq!(m.record(Stage::Evaluate).unwrap().status, StageStatus::Blocked);
}

#[test]
fn report_tables_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        report(dir.path()),
        Err(codesign::error::Error::MissingArtifact { .. })
    ));
    run_pipeline(&tiny(), dir.path(), &PipelineOptions::default()).unwrap();
    let files = report(dir.path()).unwrap();
    let archive = load_archive(dir.path()).unwrap();
    let mut r = csv::Reader::from_path(&files.pareto_scatter).unwrap();
    assert_eq!(r.records().count(), archive.len());
    let mut r = csv::Reader::from_path(&files.talent_series).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["episode", "range", "speed", "capacity", "std"]
    );
    for rec in r.records() {
        for field in rec.unwrap().iter() {
            let v: f64 = field.parse().unwrap();
            assert_eq!(v.to_string(), field);
        }
    }
    let mut r = csv::Reader::from_path(&files.completion).unwrap();
    let scales: Vec<(String, String)> = r
        .records()
        .map(|x| {
            let x = x.unwrap();
            (x[1].to_string(), x[2].to_string())
        })
        .collect();
    assert!(scales.contains(&("8".into(), "2".into())));
    assert_eq!(scales.len(), 3 * 2);
}

#[test]
fn srta_study_writes_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let r = srta_study(&tiny(), dir.path(), false).unwrap();
    assert_eq!(r.single_robot.len(), 2);
    assert_eq!(r.single_robot[1].n_tasks, 10);
    assert_eq!(r.multi_robot[1].n_robots, 2);
    assert!(r.archives_differ);
    assert!(dir.path().join(paths::SRTA_REPORT).exists());
    assert!(dir.path().join("srta").join(MANIFEST_FILE).exists());
}

#[test]
fn default_report_grid_includes_standard_scales() {
    let scales = EvaluationConfig::default().scales;
    assert_eq!(scales, vec![(50, 5), (100, 10), (150, 15)]);
    for s in [(50, 5), (100, 10), (150, 15)] {
        assert!(PipelineConfig::desk().evaluation.scales.contains(&s));
    }
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = PipelineConfig::load(&root.join("desk.toml")).unwrap();
    assert_eq!(desk.to_toml().unwrap(), PipelineConfig::desk().to_toml().unwrap());
    let smoke = PipelineConfig::load(&root.join("smoke.toml")).unwrap();
    smoke.validate().unwrap();
    assert_eq!(smoke.env.n_tasks, 5);
}
