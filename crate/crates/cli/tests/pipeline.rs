mod common;

use std::fs;

use common::*;

#[test]
fn every_command_runs_and_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.toml");
    fs::write(&synth, SYNTH).unwrap();
    let corpus = dir.path().join("corpus");
    let pristine = dir.path().join("pristine");
    ok(&["synth-corpus", "--config", s(&synth), "--out", s(&corpus), "--pristine", s(&pristine)]);
    let work = dir.path().join("work");
    full_pipeline(&corpus, &pristine, &work);

    for f in ["train.json", "val.json", "test.json", "manifest.json", "run_manifest.json"] {
        assert!(work.join("splits").join(f).is_file(), "{f}");
    }
    for step in 0..=3 {
        assert!(work.join(format!("run/checkpoints/eraser_step{step:06}.ckpt")).is_file());
    }
    let metrics = fs::read_to_string(work.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "step,l_es,l_tf,l_ci,hybrid");
    assert_eq!(metrics.lines().count(), 4);
    assert!(work.join("fps/cam_a.fp").is_file() && work.join("fps/cam_b.fp").is_file());
    assert!(work.join("niqe.model.run.json").is_file());
    assert_eq!(fs::read_dir(work.join("viz")).unwrap().count(), 3);

    let ori: serde_json::Value = serde_json::from_str(&fs::read_to_string(work.join("reports/ori.json")).unwrap()).unwrap();
    let tasks: Vec<&str> = ori.as_array().unwrap().iter().map(|r| r["task"].as_str().unwrap()).collect();
    assert_eq!(tasks, ["classification", "clustering", "verification", "niqe", "l1"]);
    let siamte = fs::read_to_string(work.join("reports/siamte.csv")).unwrap();
    assert!(siamte.starts_with("method,task,camera,mean,std,repeats\n"));
    assert!(siamte.contains("siamte,trace,"));

    let table = fs::read_to_string(work.join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("method,"));
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["ori", "mf3", "siamte"]);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(work.join("run/run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 6);
    assert!(manifest["outputs"][0]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = siamte(&["synth-corpus", "--config", s(&missing), "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = 1\nimages_per_camera = 0\nwidth = 8\nheight = 8\nprofiles = []\n").unwrap();
    let out = siamte(&["synth-corpus", "--config", s(&bad), "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));

    let unknown = dir.path().join("unknown.toml");
    fs::write(&unknown, "[optim]\nstepz = 3\n").unwrap();
    let out = siamte(&["scan", "--root", s(dir.path()), "--config", s(&unknown), "--out", s(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = siamte(&["attack", "--method", "zz9", "--in", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = siamte(&["fit-niqe", "--images", s(&dir.path().join("none")), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(3));

    let flat = dir.path().join("flat");
    fs::create_dir(&flat).unwrap();
    let img = siamte::imaging::array_to_rgb(&ndarray::Array3::from_elem((3, 32, 32), 90.0));
    for i in 0..50 {
        img.save(flat.join(format!("f{i:02}.png"))).unwrap();
    }
    let out = siamte(&["fit-niqe", "--images", s(&flat), "--patch", "8", "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_round_trips_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "method,task,camera,mean,std,repeats\n\
               ori,classification,all,0.95,0.01,10\n\
               ori,classification,cam_a,0.9,0,10\n\
               mf5,classification,all,0.4,0.02,10\n\
               mf5,l1,all,12.5,1.5,1\n";
    let input = dir.path().join("r.csv");
    fs::write(&input, csv).unwrap();
    let table = dir.path().join("t.csv");
    let out = ok(&["report", "--in", s(&input), "--out", s(&table)]);
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), text);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,classification,classification_std,l1,l1_std");
    assert_eq!(lines.next().unwrap(), "ori,0.95,0.01,,");
    assert_eq!(lines.next().unwrap(), "mf5,0.4,0.02,12.5,1.5");
}
