//! The four experiment commands. Each writes its artifacts into an output
//! directory and returns the thresholds it checked.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RenderSource, RunConfig};
use crate::edit::{render_candidate, EditVector, PerViewDeviation, SharedEdit};
use crate::error::Error;
use crate::grpo::{greedy_edit, stream_seed, train, EvalMetrics, VerifierMode, ITERATION_HEADER};
use crate::image::write_pgm8;
use crate::policy::PolicyParams;
use crate::scene::{Scene, Texture};
use crate::verifiers::{mean_confidence, photoconsistency_confidence, RECORD_HEADER};

pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const DECAY_HEADER: &str = "k,mean_conf_depth,mean_conf_point,mean_conf";
pub const DECAY_SCENE_HEADER: &str = "scene_seed,k,conf_depth,conf_point";
pub const METRICS_HEADER: &str = "ph_loss,r_d,r_p,r_t,r_a,composite,anchor_distance,rotation_error_deg,max_jitter,texture_energy,high_frequency_energy";

/// One pass/fail check recorded in a run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Threshold {
    pub name: String,
    pub value: f64,
    pub op: &'static str,
    pub limit: f64,
    pub passed: bool,
}

impl Threshold {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Threshold {
            name: name.to_string(),
            value,
            op: "<=",
            limit,
            passed: value <= limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Threshold {
            name: name.to_string(),
            value,
            op: ">=",
            limit,
            passed: value >= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub thresholds: Vec<Threshold>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.thresholds.iter().all(|t| t.passed)
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv<T: ToString>(header: &str, rows: impl IntoIterator<Item = T>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

pub fn metrics_row(m: &EvalMetrics) -> String {
    let r = &m.reward;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        m.ph_loss,
        r.r_d,
        r.r_p,
        r.r_t,
        r.r_a,
        r.composite,
        m.anchor_distance,
        m.rotation_error_deg,
        m.max_jitter,
        m.texture_energy,
        m.high_frequency_energy
    )
}

// ---------------------------------------------------------------- decay

/// Spearman rank correlation (average ranks for ties). NaN when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 * 0.5 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// Same geometry with every noise texture re-seeded from `seed`.
pub fn reseed_textures(scene: &Scene, seed: u64) -> Scene {
    let mut out = scene.clone();
    for p in &mut out.primitives {
        if let Texture::ValueNoise { seed: s, .. } = &mut p.texture {
            *s = stream_seed(seed, *s, p.id as u64);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayResult {
    /// `(k, mean depth confidence, mean point confidence)` averaged over scenes.
    pub rows: Vec<(usize, f64, f64)>,
    /// Per scene seed, per k: `(depth, point)`.
    pub per_scene: Vec<(u64, Vec<(f64, f64)>)>,
    pub spearman: f64,
}

impl DecayResult {
    pub fn mean_conf(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, d, p)| 0.5 * (d + p)).collect()
    }
}

fn jitter(rng: &mut ChaCha8Rng, a: f64) -> [f64; 3] {
    [0; 3].map(|_| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 })
}

/// Confidence of one scene as `k = 0…M−1` views are swapped for
/// independently jittered renders, in a seed-fixed order.
fn decay_scene(cfg: &RunConfig, seed: u64) -> Result<(Vec<(f64, f64)>, Vec<Vec<(Vec<f64>, Vec<f64>)>>), Error> {
    let rig = cfg.rig.build()?;
    let m = rig.len();
    let scene = reseed_textures(&cfg.scene(), seed);
    let identity = SharedEdit::identity(cfg.shared_star.target);
    let clean = render_candidate(&scene, &rig, &EditVector::consistent(identity, m))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &cfg.decay;
    let mut jittered = EditVector::consistent(identity, m);
    for v in &mut jittered.per_view {
        *v = PerViewDeviation {
            translation_jitter: jitter(&mut rng, d.translation_jitter),
            color_jitter: jitter(&mut rng, d.color_jitter),
            camera_rot_jitter: jitter(&mut rng, d.camera_rotation_jitter),
            camera_trans_jitter: jitter(&mut rng, d.camera_translation_jitter),
        };
    }
    let replacements = render_candidate(&scene, &rig, &jittered)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);

    let mut curve = Vec::with_capacity(m);
    let mut maps = Vec::with_capacity(m);
    let mut views = clean;
    for k in 0..m {
        if k > 0 {
            let v = order[k - 1];
            views[v] = replacements[v].clone();
        }
        let (cd, cp) = photoconsistency_confidence(&views, &rig, &cfg.verifiers.confidence)?;
        curve.push((mean_confidence(&cd).0, mean_confidence(&cp).0));
        maps.push(
            cd.iter()
                .zip(&cp)
                .map(|(a, b)| (a.masked_values(), b.masked_values()))
                .collect(),
        );
    }
    Ok((curve, maps))
}

pub fn run_decay(cfg: &RunConfig) -> Result<DecayResult, Error> {
    let seeds: Vec<u64> = (0..cfg.decay.scenes as u64).map(|i| cfg.trainer.seed.wrapping_add(i)).collect();
    let per_scene = seeds
        .par_iter()
        .map(|&s| decay_scene(cfg, s).map(|(c, _)| (s, c)))
        .collect::<Result<Vec<_>, Error>>()?;
    let m = per_scene[0].1.len();
    let n = per_scene.len() as f64;
    let rows: Vec<(usize, f64, f64)> = (0..m)
        .map(|k| {
            let d = per_scene.iter().map(|(_, c)| c[k].0).sum::<f64>() / n;
            let p = per_scene.iter().map(|(_, c)| c[k].1).sum::<f64>() / n;
            (k, d, p)
        })
        .collect();
    let ks: Vec<f64> = (0..m).map(|k| k as f64).collect();
    let mut res = DecayResult {
        rows,
        per_scene,
        spearman: 0.0,
    };
    res.spearman = spearman(&ks, &res.mean_conf());
    Ok(res)
}

fn montage(maps: &[Vec<f64>], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; maps.len() * w * h];
    for (m, map) in maps.iter().enumerate() {
        for y in 0..h {
            let row = &map[y * w..(y + 1) * w];
            let start = y * w * maps.len() + m * w;
            out[start..start + w].copy_from_slice(row);
        }
    }
    out
}

/// Writes `decay.csv`, `decay_scenes.csv`, per-k confidence montages of the
/// first scene and `summary.toml`.
pub fn cmd_decay(cfg: &RunConfig) -> Result<Outcome, Error> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    let res = run_decay(cfg)?;
    let mean = res.mean_conf();
    write_file(
        &out.join("decay.csv"),
        csv(
            DECAY_HEADER,
            res.rows.iter().zip(&mean).map(|((k, d, p), c)| format!("{k},{d},{p},{c}")),
        )
        .as_bytes(),
    )?;
    let scene_rows = res.per_scene.iter().flat_map(|(s, c)| {
        c.iter()
            .enumerate()
            .map(move |(k, (d, p))| format!("{s},{k},{d},{p}"))
    });
    write_file(&out.join("decay_scenes.csv"), csv(DECAY_SCENE_HEADER, scene_rows).as_bytes())?;

    let (_, maps) = decay_scene(cfg, res.per_scene[0].0)?;
    let size = cfg.rig.size;
    for (k, views) in maps.iter().enumerate() {
        for (name, pick) in [("depth", 0), ("point", 1)] {
            let per_view: Vec<Vec<f64>> = views
                .iter()
                .map(|(d, p)| if pick == 0 { d.clone() } else { p.clone() })
                .collect();
            let mut buf = Vec::new();
            write_pgm8(&mut buf, size * views.len(), size, &montage(&per_view, size, size))
                .expect("writing to memory");
            write_file(&out.join(format!("conf_{name}_k{k}.pgm")), &buf)?;
        }
    }

    let non_increasing = mean.windows(2).filter(|w| w[1] > w[0]).count();
    let k0_max = mean.iter().skip(1).all(|c| *c <= mean[0]);
    let thresholds = vec![
        Threshold::at_most("spearman_k_vs_confidence", res.spearman, -0.9),
        Threshold::at_most("increasing_steps", non_increasing as f64, 0.0),
        Threshold::at_least("k0_is_maximum", if k0_max { 1.0 } else { 0.0 }, 1.0),
    ];
    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        config_hash: String,
        seed: u64,
        scenes: usize,
        spearman: f64,
        thresholds: &'a [Threshold],
    }
    let s = Summary {
        command: "decay",
        config_hash: cfg.hash(),
        seed: cfg.trainer.seed,
        scenes: cfg.decay.scenes,
        spearman: res.spearman,
        thresholds: &thresholds,
    };
    write_summary(out, &s)?;
    Ok(Outcome {
        out_dir: out.clone(),
        thresholds,
    })
}

fn write_summary<T: Serialize>(out: &Path, s: &T) -> Result<(), Error> {
    let text = toml::to_string(s).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out.join(SUMMARY_FILE), text.as_bytes())
}

// ---------------------------------------------------------------- train / eval

/// Thresholds a finished run of `mode` must meet, from its first and last
/// greedy evaluations.
pub fn train_thresholds(mode: VerifierMode, initial: &EvalMetrics, last: &EvalMetrics) -> Vec<Threshold> {
    match mode {
        VerifierMode::Full => vec![
            Threshold::at_least("composite", last.reward.composite, 0.9),
            Threshold::at_most("max_jitter", last.max_jitter, 0.05),
            Threshold::at_most("anchor_distance", last.anchor_distance, 2.0 * initial.anchor_distance),
            Threshold::at_least("texture_energy", last.texture_energy, 0.8 * initial.texture_energy),
        ],
        VerifierMode::SfmOnly => vec![Threshold::at_most(
            "texture_energy",
            last.texture_energy,
            0.2 * initial.texture_energy,
        )],
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub outcome: Outcome,
    pub initial: EvalMetrics,
    pub last: EvalMetrics,
}

/// Trains under the configured mode and writes `config.toml`,
/// `iterations.csv`, `rewards.csv`, `policy.ckpt` and `summary.toml`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, Error> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), cfg.canonical().to_toml().as_bytes())?;
    let env = cfg.environment()?;
    let tc = &cfg.trainer;
    let run = train(&env, tc, tc.verifier_mode.as_str(), |_| {})?;

    write_file(&out.join("iterations.csv"), csv(ITERATION_HEADER, &run.logs).as_bytes())?;
    write_file(&out.join("rewards.csv"), csv(RECORD_HEADER, &run.records).as_bytes())?;
    let mut ckpt = Vec::new();
    run.policy
        .write_checkpoint(env.rig.len(), &mut ckpt)
        .expect("writing to memory");
    write_file(&out.join(CHECKPOINT_FILE), &ckpt)?;

    let initial = env.evaluate(&greedy_edit(&run.initial, &env.layout)?, &tc.weights)?;
    let last = env.evaluate(&greedy_edit(&run.policy, &env.layout)?, &tc.weights)?;
    let thresholds = train_thresholds(tc.verifier_mode, &initial, &last);

    #[derive(Serialize)]
    struct Summary<'a> {
        command: &'static str,
        config_hash: String,
        verifier_mode: VerifierMode,
        seed: u64,
        iterations: usize,
        final_kl: f64,
        pose_drift_deg: f64,
        initial: &'a EvalMetrics,
        last: &'a EvalMetrics,
        thresholds: &'a [Threshold],
    }
    write_summary(
        out,
        &Summary {
            command: "train",
            config_hash: cfg.hash(),
            verifier_mode: tc.verifier_mode,
            seed: tc.seed,
            iterations: tc.iterations,
            final_kl: run.policy.kl_divergence(&run.initial)?,
            pose_drift_deg: last.rotation_error_deg,
            initial: &initial,
            last: &last,
            thresholds: &thresholds,
        },
    )?;
    Ok(TrainOutcome {
        outcome: Outcome {
            out_dir: out.clone(),
            thresholds,
        },
        initial,
        last,
    })
}

pub fn read_checkpoint(dir: &Path) -> Result<(PolicyParams, usize), Error> {
    let path = dir.join(CHECKPOINT_FILE);
    let f = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingCheckpoint(path)),
        Err(e) => return Err(Error::io(&path, e)),
    };
    Ok(PolicyParams::read_checkpoint(BufReader::new(f))?)
}

fn checkpoint_edit(cfg: &RunConfig, dir: &Path) -> Result<EditVector, Error> {
    let env_layout = crate::policy::Layout::new(cfg.rig.views, cfg.shared_star.target, cfg.decode);
    let (policy, m) = read_checkpoint(dir)?;
    if m != cfg.rig.views || policy.dim() != env_layout.dim() {
        return Err(Error::Config(format!(
            "checkpoint is for {m} views / {} dims, config has {} views / {} dims",
            policy.dim(),
            cfg.rig.views,
            env_layout.dim()
        )));
    }
    Ok(greedy_edit(&policy, &env_layout)?)
}

/// Scores the mean action of the checkpoint in the output directory and
/// writes `metrics.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalMetrics, Error> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let edit = checkpoint_edit(cfg, out)?;
    let env = cfg.environment()?;
    let m = env.evaluate(&edit, &cfg.trainer.weights)?;
    write_file(&out.join("metrics.csv"), csv(METRICS_HEADER, [metrics_row(&m)]).as_bytes())?;
    Ok(m)
}

// ---------------------------------------------------------------- render

/// Dumps `view_m.ppm`, `depth_m.pgm` (16-bit) and 8-bit confidence maps
/// `conf_depth_m.pgm` / `conf_point_m.pgm` for every view.
pub fn cmd_render(cfg: &RunConfig) -> Result<Outcome, Error> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let rig = cfg.rig.build()?;
    let edit = match cfg.render.source {
        RenderSource::Reference => EditVector::consistent(cfg.shared_star, rig.len()),
        RenderSource::Identity => EditVector::consistent(SharedEdit::identity(cfg.shared_star.target), rig.len()),
        RenderSource::Checkpoint => checkpoint_edit(cfg, out)?,
    };
    create_dir(out)?;
    let views = render_candidate(&cfg.scene(), &rig, &edit)?;
    let (cd, cp) = photoconsistency_confidence(&views, &rig, &cfg.verifiers.confidence)?;
    let (w, h) = (views[0].width(), views[0].height());
    for (m, v) in views.iter().enumerate() {
        let mut buf = Vec::new();
        v.image.write_ppm(&mut buf).expect("writing to memory");
        write_file(&out.join(format!("view_{m}.ppm")), &buf)?;
        buf.clear();
        v.depth.write_pgm16(&mut buf).expect("writing to memory");
        write_file(&out.join(format!("depth_{m}.pgm")), &buf)?;
        for (name, map) in [("depth", &cd[m]), ("point", &cp[m])] {
            buf.clear();
            write_pgm8(&mut buf, w, h, &map.masked_values()).expect("writing to memory");
            write_file(&out.join(format!("conf_{name}_{m}.pgm")), &buf)?;
        }
    }
    Ok(Outcome {
        out_dir: out.clone(),
        thresholds: Vec::new(),
    })
}
