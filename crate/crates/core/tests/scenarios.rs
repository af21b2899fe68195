use std::path::PathBuf;

use vsgsim::inner_loop::run_testbed;
use vsgsim::scenario::{expand_sweep, load_document, Document, LoadOptions};
use vsgsim::{integrate, Error};

fn corpus() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn corpus_is_complete() {
    let names: Vec<String> = corpus().iter().map(|p| p.file_stem().unwrap().to_string_lossy().into_owned()).collect();
    for n in [
        "kundur_two_area_baseline",
        "kundur_two_area_vsg",
        "inertia_sweep",
        "penetration_sweep",
        "inner_loop_testbed",
        "pno_demo",
    ] {
        assert!(names.iter().any(|x| x == n), "missing {n}");
    }
}

#[test]
fn every_shipped_scenario_runs_to_the_end() {
    for path in corpus() {
        let text = std::fs::read_to_string(&path).unwrap();
        match load_document(&path, LoadOptions::default()).unwrap() {
            Document::Testbed { config, .. } => {
                let tr = run_testbed(&config).unwrap();
                assert!(tr.t.len() > 1);
            }
            Document::Grid(s) => {
                let runs = if s.file.sweep.is_some() {
                    let (_, points) = expand_sweep(&text, LoadOptions::default()).unwrap();
                    points.into_iter().map(|p| p.scenario.unwrap()).collect()
                } else {
                    vec![s]
                };
                for s in runs {
                    let r = integrate(&s).unwrap();
                    assert!(r.metrics.completed, "{}: {:?}", path.display(), r.metrics.termination);
                    assert!(r.metrics.max_power_residual_pu < 1e-6, "{}", path.display());
                }
            }
        }
    }
}

#[test]
fn vsg_two_area_power_flow_converges() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let s = vsgsim::load_scenario(dir.join("kundur_two_area_vsg.toml")).unwrap();
    let sim = vsgsim::Simulation::new(&s).unwrap();
    assert!(sim.columns().iter().any(|c| c == "f_DER1_hz"));
}

#[test]
fn off_grid_event_is_rejected() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let text = std::fs::read_to_string(dir.join("kundur_two_area_baseline.toml")).unwrap();
    let bad = text.replace("t = 1.0\nbus = \"B7\"", "t = 1.0005\nbus = \"B7\"");
    match vsgsim::scenario::parse_scenario(&bad) {
        Err(Error::Validation { key, .. }) => assert_eq!(key, "events[0].t"),
        other => panic!("{other:?}"),
    }
}
