use std::fs;
use std::path::Path;
use std::process::Command;

use biflow::{load_checkpoint, Checkpoint, Error, FieldModel, ModelKind};
use biflow_cli::commands::{self, SummaryRow};
use biflow_cli::config::ExperimentConfig;

fn tiny(kind: ModelKind) -> ExperimentConfig {
    ExperimentConfig::from_text(&format!(
        "dataset.kind = orbit\n\
         dataset.n_videos = 10\n\
         dataset.n_frames = 12\n\
         model.kind = {kind}\n\
         model.hidden_dims = 16,16\n\
         train.iterations = 60\n\
         train.checkpoint_every = 25\n\
         eval.n_rollouts = 3\n\
         eval.n_frames = 12\n\
         eval.window = 4\n\
         eval.stride = 4\n\
         sampling.epsilon_list = 0,0.2\n"
    ))
    .unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biflow"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_is_reproducible_and_split_eighty_twenty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::Flow);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    commands::gen_data(&cfg, &a).unwrap();
    commands::gen_data(&cfg, &b).unwrap();
    commands::gen_data(&cfg, &b).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let data = commands::load_data(&a).unwrap();
    assert_eq!(data.videos.len(), 10);
    assert_eq!((data.split.train.len(), data.split.test.len()), (8, 2));
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("n_train = 8") && manifest.contains("n_test = 2"));
    // files hold f32, so reloaded values are the generated ones rounded once
    for (g, l) in commands::generate_videos(&cfg)
        .unwrap()
        .iter()
        .zip(&data.videos)
    {
        assert!(g
            .data
            .iter()
            .zip(&l.data)
            .all(|(a, b)| (*a as f32) as f64 == *b));
    }
}

#[test]
fn zero_iterations_save_the_initial_model() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::BiFlow);
    cfg.train.iterations = 0;
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();
    let r = commands::train(&cfg, &data, &tmp.path().join("t"), false).unwrap();
    assert_eq!(r.steps, 0);
    let ck: Checkpoint<f64> = load_checkpoint(&r.checkpoint).unwrap();
    let init = FieldModel::<f64>::init(
        ModelKind::BiFlow,
        8,
        cfg.model.hidden_dims.clone(),
        cfg.model.activation,
        cfg.model.coord_embedding,
        cfg.model.seed,
    )
    .unwrap();
    assert_eq!(ck.model, init);
    assert_eq!(ck.meta.config_hash, cfg.training_hash());
}

#[test]
fn resumed_training_matches_one_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::BiFlow);
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();

    let whole = tmp.path().join("whole");
    commands::train(&cfg, &data, &whole, false).unwrap();

    let parts = tmp.path().join("parts");
    let mut short = cfg.clone();
    short.train.iterations = 25;
    commands::train(&short, &data, &parts, false).unwrap();
    commands::train(&cfg, &data, &parts, true).unwrap();

    assert_eq!(
        fs::read(whole.join("model.bfck")).unwrap(),
        fs::read(parts.join("model.bfck")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(whole.join("loss.csv")).unwrap(),
        fs::read_to_string(parts.join("loss.csv")).unwrap()
    );

    let mut other = cfg.clone();
    other.model.hidden_dims = vec![8];
    assert!(matches!(
        commands::train(&other, &data, &parts, true),
        Err(Error::Config(_))
    ));
}

#[test]
fn rollout_groups_and_backward_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    commands::gen_data(&tiny(ModelKind::Flow), &data).unwrap();
    let mut ckpts = Vec::new();
    for kind in ModelKind::ALL {
        let mut c = tiny(kind);
        c.train.iterations = 5;
        ckpts.push(
            commands::train(&c, &data, &tmp.path().join(kind.to_string()), false)
                .unwrap()
                .checkpoint,
        );
    }
    let cfg = tiny(ModelKind::Flow);
    let groups = commands::rollout_cmd(&cfg, &ckpts[1], &data, &tmp.path().join("r")).unwrap();
    let names: Vec<_> = groups
        .iter()
        .map(|g| g.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["biflow_eps0.00_forward", "biflow_eps0.20_forward"]);
    assert!(groups[0].join("rollout_002.bfv1").exists());
    let meta = fs::read_to_string(groups[1].join("rollout_000.meta")).unwrap();
    assert!(meta.contains("epsilon = 0.2") && meta.contains("diverged = none"));

    let mut back = cfg.clone();
    back.sampling.direction = biflow::Direction::Backward;
    let bg = commands::rollout_cmd(&back, &ckpts[1], &data, &tmp.path().join("r")).unwrap();
    assert!(bg[0].ends_with("biflow_eps0.00_backward"));
    let err = commands::rollout_cmd(&back, &ckpts[2], &data, &tmp.path().join("r")).unwrap_err();
    assert!(
        matches!(err, Error::Config(ref m) if m.contains("condiff")),
        "{err}"
    );

    let ev = commands::evaluate(&groups, &data, 4, 4).unwrap();
    assert_eq!(ev.rows.len(), 2);
    assert_eq!(ev.rows.iter().filter(|r| r.best).count(), 1);
    assert!(ev
        .rows
        .iter()
        .all(|r| r.n_rollouts == 3 && r.mean_distance.is_finite()));
}

#[test]
fn single_frame_rollouts_are_too_short_to_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::Flow);
    cfg.train.iterations = 2;
    cfg.eval.n_frames = 1;
    let data = tmp.path().join("data");
    commands::gen_data(&cfg, &data).unwrap();
    let ck = commands::train(&cfg, &data, &tmp.path().join("t"), false)
        .unwrap()
        .checkpoint;
    let groups = commands::rollout_cmd(&cfg, &ck, &data, &tmp.path().join("r")).unwrap();
    let v = biflow::video::read_frames::<f64>(&groups[0].join("rollout_000.bfv1")).unwrap();
    assert_eq!(v.num_frames, 1);
    let err = commands::evaluate(&groups, &data, 4, 4).unwrap_err();
    assert!(err.to_string().contains("rollout_000.bfv1"), "{err}");
}

#[test]
fn plot_reemits_summary_and_rejects_empty_input() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = vec![SummaryRow {
        dataset: "orbit".into(),
        method: "biflow".into(),
        epsilon: 0.1,
        direction: "forward".into(),
        solver: "heun_adaptive".into(),
        n_rollouts: 2,
        diverged: 0,
        mean_steps: 9.5,
        mean_distance: 0.25,
        drift_slope: 0.001,
        drift_intercept: 0.2,
        last_window_start: 16,
        best: true,
    }];
    let csv = commands::summary_csv(&rows);
    assert_eq!(SummaryRow::parse_csv(&csv).unwrap(), rows);
    let s = tmp.path().join("summary.csv");
    fs::write(&s, &csv).unwrap();
    let out = tmp.path().join("plot");
    commands::plot_cmd(std::slice::from_ref(&s), &out).unwrap();
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), csv);
    assert!(fs::read_to_string(out.join("scatter.svg"))
        .unwrap()
        .contains("<circle"));
    assert!(out.join("trend.svg").exists());

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, format!("{}\n", commands::SUMMARY_HEADER)).unwrap();
    assert!(commands::plot_cmd(&[empty], &out).is_err());
    assert!(commands::plot_cmd(&[], &out).is_err());
}

#[test]
fn trained_orbit_biflow_beats_the_data_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::BiFlow);
    cfg.dataset.n_videos = 40;
    cfg.model.hidden_dims = vec![64, 64];
    cfg.train.iterations = 1500;
    cfg.sampling.epsilon_list = vec![0.0];
    let data_dir = tmp.path().join("data");
    let data = commands::gen_data(&cfg, &data_dir).unwrap();
    let r = commands::train(&cfg, &data_dir, &tmp.path().join("t"), false).unwrap();
    let ck: Checkpoint<f64> = load_checkpoint(&r.checkpoint).unwrap();

    // one-step prediction against the next true frame, relative to the spread of frames
    let spec = cfg.solve_spec();
    let (mut err, mut spread, mut n) = (0.0, 0.0, 0.0);
    let mean = {
        let all: Vec<_> = data
            .videos
            .iter()
            .flat_map(|v| v.frames().map(|f| f.to_owned()))
            .collect();
        all.iter()
            .fold(ndarray::Array1::<f64>::zeros(8), |a, f| a + f)
            / all.len() as f64
    };
    for &i in &data.split.test {
        let v = &data.videos[i];
        for k in 0..v.num_frames - 1 {
            let (next, _) = biflow::sampling::stream_next(&ck.model, v.frame(k), &spec).unwrap();
            err += (&next - &v.frame(k + 1)).mapv(|x| x * x).sum();
            spread += (&v.frame(k + 1) - &mean).mapv(|x| x * x).sum();
            n += 1.0;
        }
    }
    assert!(
        err / n < 0.1 * spread / n,
        "prediction {} vs spread {}",
        err / n,
        spread / n
    );
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.cfg");
    fs::write(
        &cfg,
        "dataset.kind = orbit\ndataset.n_videos = 5\ndataset.n_frames = 4\n",
    )
    .unwrap();
    let out = tmp.path().join("d");
    let ok = bin()
        .args(["gen-data", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));

    let bad = bin()
        .args(["gen-data", "--set", "dataset.nope=1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("dataset.nope"));

    let missing = bin()
        .args(["train", "--data"])
        .arg(tmp.path().join("absent"))
        .arg("--out")
        .arg(tmp.path().join("t"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(4));

    let odd = bin()
        .args([
            "gen-data",
            "--set",
            "dataset.kind=orbit",
            "--set",
            "dataset.orbit.dim=3",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(odd.code(), Some(2));
}
