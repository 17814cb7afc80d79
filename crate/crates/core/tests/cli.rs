use std::fs;
use std::path::Path;
use std::process::Command;

use mvgrpo::config::{RunConfig, SCHEMA_VERSION};
use mvgrpo::experiments::{CHECKPOINT_FILE, METRICS_HEADER};
use mvgrpo::policy::{DecodeScales, Layout, PolicyParams};

fn mvgrpo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mvgrpo")).args(args).output().unwrap()
}

fn code(o: &std::process::Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, format!("schema_version = {SCHEMA_VERSION}\n{body}")).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "[rig]\nviews = 4\narc_degrees = 24.0\nfocal = 40.0\nsize = 48\n";

#[test]
fn config_problems_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[trainer]\nlearning_rat = 0.1\n");
    let o = mvgrpo(&["train", "--config", &cfg]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = write_config(dir.path(), "[trainer]\ngroup_size = 1\n");
    assert_eq!(code(&mvgrpo(&["train", "--config", &cfg])), 1);
    assert_eq!(code(&mvgrpo(&["render"])), 1);
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&mvgrpo(&["render", "--config", missing.to_str().unwrap()])), 1);
    // clap rejects unknown modes itself
    assert_ne!(code(&mvgrpo(&["train", "--config", &cfg, "--mode", "all"])), 0);
}

#[test]
fn eval_without_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    fs::create_dir(&out).unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = mvgrpo(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoint"));
}

fn pnm_header(bytes: &[u8]) -> (String, usize, usize, usize) {
    let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).to_string();
    let mut it = text.split_whitespace();
    let magic = it.next().unwrap().to_string();
    let w = it.next().unwrap().parse().unwrap();
    let h = it.next().unwrap().parse().unwrap();
    let max = it.next().unwrap().parse().unwrap();
    (magic, w, h, max)
}

#[test]
fn render_writes_deterministic_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = mvgrpo(&["render", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for m in 0..4 {
        for (name, magic, max, bpp) in [
            (format!("view_{m}.ppm"), "P6", 255, 3),
            (format!("depth_{m}.pgm"), "P5", 65535, 2),
            (format!("conf_depth_{m}.pgm"), "P5", 255, 1),
            (format!("conf_point_{m}.pgm"), "P5", 255, 1),
        ] {
            let x = fs::read(a.join(&name)).unwrap();
            assert_eq!(x, fs::read(b.join(&name)).unwrap(), "{name}");
            let hdr = pnm_header(&x);
            assert_eq!(hdr, (magic.to_string(), 48, 48, max), "{name}");
            assert!(x.len() > 48 * 48 * bpp && x.len() < 48 * 48 * bpp + 20, "{name}");
        }
    }
}

#[test]
fn eval_of_untrained_identity_policy() {
    let dir = tempfile::tempdir().unwrap();
    // unedited scene: the reference edit is the identity
    let cfg = write_config(dir.path(), "[shared_star]\ntarget = 1\n");
    let out = dir.path().join("run");
    fs::create_dir(&out).unwrap();
    let c = RunConfig::parse(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let layout = Layout::new(c.rig.views, 1, DecodeScales::default());
    let p = PolicyParams::initial(&layout, 0.3, 0.1);
    let mut f = fs::File::create(out.join(CHECKPOINT_FILE)).unwrap();
    p.write_checkpoint(c.rig.views, &mut f).unwrap();
    drop(f);

    let o = mvgrpo(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = first.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER);
    let ph: f64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((0.0..=0.01).contains(&ph), "{ph}");

    // idempotent
    assert_eq!(code(&mvgrpo(&["eval", "--config", &cfg, "--out", out.to_str().unwrap()])), 0);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap(), first);
}

#[test]
fn train_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}[trainer]\niterations = 3\ngroup_size = 6\nlearning_rate = 0.02\n"),
    );
    let runs: Vec<_> = ["1", "4"]
        .iter()
        .map(|t| {
            let out = dir.path().join(format!("t{t}"));
            let o = mvgrpo(&[
                "train", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t, "--seed", "5",
                "--mode", "no_anchor",
            ]);
            // three iterations meet no thresholds, but no_anchor records none
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["iterations.csv", "rewards.csv", CHECKPOINT_FILE, "summary.toml", "config.toml"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(runs[0].join("summary.toml")).unwrap();
    assert!(summary.contains("config_hash"));
    assert!(summary.contains("verifier_mode = \"no_anchor\""));
    assert!(summary.contains("seed = 5"));
    let iters = fs::read_to_string(runs[0].join("iterations.csv")).unwrap();
    assert_eq!(iters.lines().count(), 4);
    let rewards = fs::read_to_string(runs[0].join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 1 + 3 * 6);

    // the checkpoint can be evaluated from the run directory alone
    let o = mvgrpo(&["eval", "--out", runs[0].to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_mode_short_run_fails_its_thresholds_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}[trainer]\niterations = 1\ngroup_size = 4\n[shared_star]\ntarget = 1\ncolor_delta = [0.6, -0.5, 0.5]\nradius_scale = 2.0\n"),
    );
    let out = dir.path().join("run");
    let o = mvgrpo(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL composite"));
}

#[test]
fn decay_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}[decay]\nscenes = 3\n"));
    let outs: Vec<_> = ["1", "2"]
        .iter()
        .map(|t| {
            let out = dir.path().join(format!("d{t}"));
            let o = mvgrpo(&["decay", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", t]);
            assert!(matches!(code(&o), 0 | 3), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["decay.csv", "decay_scenes.csv", "conf_point_k2.pgm", "summary.toml"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(outs[0].join("decay.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[0], k as f64);
    }
    // k = 0 is the consistent set
    assert!(rows.iter().all(|r| r[3] <= rows[0][3]));
    let (_, w, h, _) = pnm_header(&fs::read(outs[0].join("conf_depth_k0.pgm")).unwrap());
    assert_eq!((w, h), (4 * 48, 48));
}
