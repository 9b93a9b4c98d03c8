//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default. Pass criterion numbers to run a subset:
//! `cargo test -p monoe-cli --test acceptance -- 1 2 9`. The process fails
//! only when a deterministic criterion fails; the replication criteria
//! (6 and 7) are reported either way.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use monoe_cli::{cmd_train, run, ModeArg, TrainArgs, EXIT_INTEGRITY, EXIT_OK};
use monoe_core::io::{load_checkpoint, read_dataset, save_checkpoint, write_dataset};
use monoe_core::metrics::{auroc, psnr, ssim, SSIM_C1, SSIM_C2};
use monoe_core::nn::{ClassifierConfig, GeneratorConfig};
use monoe_core::phantom::{make_dataset, render_phantom, slice_geometry, Domain, PhantomSpec, Role, Tissue, HU_MAX};
use monoe_core::tensor::gradcheck::op_suite;
use monoe_core::trainer::{
    classifier_step, derive_seed, generator_l1_step, kfold_split, lr_schedule, mixed_batch_sampler, run_fold, stack,
    train_step_joint, Models, Pool, Pools, TAG_JOINT,
};
use monoe_core::{SampleRecord, Tensor, TrainConfig, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut n = 0;
    for seed in [11, 12] {
        for (name, err) in op_suite(seed, 1e-6).map_err(|e| e.to_string())? {
            n += 1;
            if err.is_nan() || err >= worst.1 {
                worst = (name, err);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        worst.1 < 1e-5 && secs < 120.0,
        format!("{n} cases, worst {} rel err {:.2e}, {secs:.1}s", worst.0, worst.1),
    )
}

// ---------------------------------------------------------------- 2

fn brute_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut np, mut nn) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 1 {
            np += 1;
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] == 0 {
                    twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
                }
            }
        } else {
            nn += 1;
        }
    }
    twice as f64 / 2.0 / (np as f64 * nn as f64)
}

fn naive_ssim(a: &[f64], b: &[f64], n: usize) -> f64 {
    let k = 11;
    let mut kern = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            kern[i * k + j] = (-(di * di + dj * dj) / 4.5).exp();
        }
    }
    let total: f64 = kern.iter().sum();
    let to01 = |v: &[f64]| v.iter().map(|x| (x + 1.0) / 2.0).collect::<Vec<_>>();
    let (a, b) = (to01(a), to01(b));
    let (mut acc, mut count) = (0.0, 0);
    for y in 0..=n - k {
        for x in 0..=n - k {
            let at = |i: usize, j: usize| (y + i) * n + x + j;
            let w = |i: usize, j: usize| kern[i * k + j] / total;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    ma += w(i, j) * a[at(i, j)];
                    mb += w(i, j) * b[at(i, j)];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let (da, db) = (a[at(i, j)] - ma, b[at(i, j)] - mb);
                    va += w(i, j) * da * da;
                    vb += w(i, j) * db * db;
                    cov += w(i, j) * da * db;
                }
            }
            acc += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    acc / count as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut auroc_mismatch = 0;
    for case in 0..200 {
        let n = rng.random_range(2..80);
        let levels = if case % 2 == 0 { 5 } else { 10_000 };
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) * 0.01).collect();
        if auroc(&scores, &labels).map_err(|e| e.to_string())? != brute_auroc(&scores, &labels) {
            auroc_mismatch += 1;
        }
    }
    let mut ssim_err = 0.0f64;
    for _ in 0..20 {
        let a: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| (0.6 * v + rng.random_range(-0.4..0.4)).clamp(-1.0, 1.0)).collect();
        let ta = Tensor::<f64>::from_f64(vec![16, 16], &a).map_err(|e| e.to_string())?;
        let tb = Tensor::<f64>::from_f64(vec![16, 16], &b).map_err(|e| e.to_string())?;
        let got = ssim(&ta, &tb).map_err(|e| e.to_string())?;
        ssim_err = ssim_err.max((got - naive_ssim(&a, &b, 16)).abs());
    }
    let zero = Tensor::<f64>::zeros(vec![1, 8, 8]);
    let off = Tensor::full(vec![1, 8, 8], 0.1);
    let p = psnr(&zero, &off).map_err(|e| e.to_string())?;
    check(
        auroc_mismatch == 0 && ssim_err < 1e-9 && (p - 26.0206).abs() < 1e-6,
        format!("auroc mismatches {auroc_mismatch}/200, ssim max err {ssim_err:.1e}, psnr {p:.6} dB"),
    )
}

// ---------------------------------------------------------------- 3, 4

fn small_joint() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        generator: GeneratorConfig { in_channels: 1, base_channels: 8, n_blocks: 2 },
        classifier: ClassifierConfig { in_channels: 1, base_channels: 8, n_stages: 4 },
        ..TrainConfig::desk(TrainMode::Joint)
    }
}

fn labels_of(batch: &[&SampleRecord]) -> Vec<f64> {
    batch.iter().map(|r| f64::from(r.label.unwrap())).collect()
}

fn endpoints() -> Outcome {
    let cfg = small_joint();
    let spec = PhantomSpec::default();
    let m = Models::init(&cfg, 0).map_err(|e| e.to_string())?;
    let err = |e: monoe_core::Error| e.to_string();

    let paired = make_dataset(&spec, 2, 2, Role::Paired, 31).map_err(err)?;
    let batch: Vec<&SampleRecord> = paired.iter().collect();
    let (mut g, mut c) = (m.generator.clone().unwrap(), m.classifier.clone());
    let (mut g_ref, c_ref) = (g.clone(), c.clone());
    let lb = train_step_joint(&mut g, &mut c, &batch, &cfg, 2e-4).map_err(err)?;
    let x = stack(batch.iter().map(|r| &r.poly)).map_err(err)?;
    let y = stack(batch.iter().map(|r| r.mono.as_ref().unwrap())).map_err(err)?;
    let l = generator_l1_step(&mut g_ref, &x, &y, &cfg.adam, 2e-4).map_err(err)?;
    let paired_ok = g.params.fingerprint() == g_ref.params.fingerprint()
        && c.params.fingerprint() == c_ref.params.fingerprint()
        && lb.combined.to_bits() == l.to_bits();

    let labeled = make_dataset(&spec, 2, 2, Role::Labeled, 32).map_err(err)?;
    let batch: Vec<&SampleRecord> = labeled.iter().collect();
    let (mut g, mut c) = (m.generator.clone().unwrap(), m.classifier.clone());
    let (g_ref, mut c_ref) = (g.clone(), c.clone());
    let lb = train_step_joint(&mut g, &mut c, &batch, &cfg, 2e-4).map_err(err)?;
    let x = stack(batch.iter().map(|r| &r.poly)).map_err(err)?;
    let l = classifier_step(&mut c_ref, Some(&g_ref), &x, &labels_of(&batch), &cfg.adam, 2e-4).map_err(err)?;
    let labeled_ok = g.params.fingerprint() == g_ref.params.fingerprint()
        && c.params.fingerprint() == c_ref.params.fingerprint()
        && c.params.fingerprint() != m.classifier.params.fingerprint()
        && lb.combined.to_bits() == l.to_bits();

    check(paired_ok && labeled_ok, format!("all-paired bitwise {paired_ok}, all-labeled bitwise {labeled_ok}"))
}

fn freeze_contract() -> Outcome {
    let cfg = small_joint();
    let spec = PhantomSpec::default();
    let err = |e: monoe_core::Error| e.to_string();
    let paired = make_dataset(&spec, 4, 3, Role::Paired, 41).map_err(err)?;
    let labeled = make_dataset(&spec, 4, 3, Role::Labeled, 42).map_err(err)?;
    let m = Models::init(&cfg, 0).map_err(err)?;
    let (mut g, mut c) = (m.generator.unwrap(), m.classifier);
    let lr = lr_schedule(&cfg, 0).map_err(err)?;
    let plans = mixed_batch_sampler(paired.len(), labeled.len(), &cfg, derive_seed(cfg.seed, TAG_JOINT, 0, 0)).map_err(err)?;
    let (mut violations, mut mixed, mut sub_steps) = (0, 0, 0);
    for plan in &plans {
        let batch: Vec<&SampleRecord> = plan
            .slots
            .iter()
            .map(|s| match s.pool {
                Pool::Paired => &paired[s.index],
                Pool::Labeled => &labeled[s.index],
            })
            .collect();
        let p: Vec<&SampleRecord> = batch.iter().copied().filter(|r| r.mono.is_some()).collect();
        let l: Vec<&SampleRecord> = batch.iter().copied().filter(|r| r.label.is_some()).collect();
        mixed += usize::from(!p.is_empty() && !l.is_empty());

        // replay the two sub-steps, watching the other network's bytes
        let (mut g_exp, mut c_exp) = (g.clone(), c.clone());
        if !p.is_empty() {
            let before = c_exp.params.fingerprint();
            let x = stack(p.iter().map(|r| &r.poly)).map_err(err)?;
            let y = stack(p.iter().map(|r| r.mono.as_ref().unwrap())).map_err(err)?;
            generator_l1_step(&mut g_exp, &x, &y, &cfg.adam, lr).map_err(err)?;
            violations += usize::from(c_exp.params.fingerprint() != before);
            sub_steps += 1;
        }
        if !l.is_empty() {
            let before = g_exp.params.fingerprint();
            let x = stack(l.iter().map(|r| &r.poly)).map_err(err)?;
            classifier_step(&mut c_exp, Some(&g_exp), &x, &labels_of(&l), &cfg.adam, lr).map_err(err)?;
            violations += usize::from(g_exp.params.fingerprint() != before);
            sub_steps += 1;
        }
        train_step_joint(&mut g, &mut c, &batch, &cfg, lr).map_err(err)?;
        violations += usize::from(g.params.fingerprint() != g_exp.params.fingerprint());
        violations += usize::from(c.params.fingerprint() != c_exp.params.fingerprint());
    }
    check(
        violations == 0 && mixed > 0,
        format!("{} batches ({mixed} mixed), {sub_steps} sub-steps, {violations} violations", plans.len()),
    )
}

// ---------------------------------------------------------------- 5, 9

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_data(dir: &Path, name: &str, role: &str, patients: usize, slices: usize, seed: u64, size: usize) -> Result<PathBuf, String> {
    let out = dir.join(name);
    let code = run([
        "monoe", "gen-data", "--seed", &seed.to_string(), "--n-patients", &patients.to_string(),
        "--slices-per-patient", &slices.to_string(), "--role", role, "--image-size", &size.to_string(), "--out", s(&out),
    ]);
    if code == EXIT_OK {
        Ok(out)
    } else {
        Err(format!("gen-data exited {code}"))
    }
}

fn train_args(paired: &Path, labeled: &Path, eval: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        mode: ModeArg::Joint,
        paired: Some(paired.to_path_buf()),
        labeled: labeled.to_path_buf(),
        eval: Some(eval.to_path_buf()),
        folds: 3,
        fold: None,
        seed: 5,
        out_dir: out.to_path_buf(),
        epochs_const: Some(1),
        epochs_decay: Some(1),
        batch_size: Some(4),
        lr: None,
        mix_fraction: None,
        gen_base_channels: Some(4),
        gen_blocks: Some(1),
        cls_base_channels: Some(4),
        cls_stages: Some(3),
        quiet: true,
    }
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if p.is_dir() {
            out.extend(tree(&p).into_iter().map(|(n, b)| (format!("{name}/{n}"), b)));
        } else {
            out.insert(name, fs::read(&p).unwrap());
        }
    }
    out
}

struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    paired: PathBuf,
    labeled: PathBuf,
    eval: PathBuf,
}

fn workspace() -> Result<Workspace, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path().to_path_buf();
    Ok(Workspace {
        paired: gen_data(&dir, "paired.dect", "paired", 3, 3, 1, 32)?,
        labeled: gen_data(&dir, "labeled.dect", "labeled", 9, 4, 2, 32)?,
        eval: gen_data(&dir, "eval.dect", "eval", 2, 4, 3, 32)?,
        dir,
        _tmp: tmp,
    })
}

fn determinism() -> Outcome {
    let w = workspace()?;
    let (a, b) = (w.dir.join("run_a"), w.dir.join("run_b"));
    for out in [&a, &b] {
        cmd_train(&train_args(&w.paired, &w.labeled, &w.eval, out)).map_err(|e| e.to_string())?;
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let csvs = ta.keys().filter(|k| k.ends_with(".csv")).count();
    let ckpts = ta.keys().filter(|k| k.ends_with("manifest.txt")).count();
    let differing: Vec<&String> = ta.keys().filter(|k| ta.get(*k) != tb.get(*k)).collect();
    check(
        ta.len() == tb.len() && differing.is_empty() && csvs == 3 && ckpts == 3,
        format!("{} files ({csvs} csv, {ckpts} checkpoints), {} differ", ta.len(), differing.len()),
    )
}

fn round_trips() -> Outcome {
    let w = workspace()?;
    let err = |e: monoe_core::Error| e.to_string();
    let mut datasets_ok = true;
    for p in [&w.paired, &w.labeled, &w.eval] {
        let again = w.dir.join("again.dect");
        write_dataset(&again, &read_dataset(p).map_err(err)?).map_err(err)?;
        datasets_ok &= fs::read(p).map_err(|e| e.to_string())? == fs::read(&again).map_err(|e| e.to_string())?;
    }

    let out = w.dir.join("run");
    cmd_train(&TrainArgs { fold: Some(0), ..train_args(&w.paired, &w.labeled, &w.eval, &out) }).map_err(|e| e.to_string())?;
    let ck = out.join("checkpoint_joint_fold0");
    let copy = w.dir.join("ck_copy");
    save_checkpoint(&copy, &load_checkpoint(&ck).map_err(err)?).map_err(err)?;
    let checkpoint_ok = tree(&ck) == tree(&copy);

    let blob = copy.join("params.bin");
    let mut bytes = fs::read(&blob).map_err(|e| e.to_string())?;
    bytes.truncate(bytes.len() - 8);
    fs::write(&blob, &bytes).map_err(|e| e.to_string())?;
    let code = run(["monoe", "eval", "--checkpoint", s(&copy), "--eval", s(&w.eval), "--out", s(&w.dir.join("e.csv"))]);
    check(
        datasets_ok && checkpoint_ok && code == EXIT_INTEGRITY,
        format!("datasets identical {datasets_ok}, checkpoint identical {checkpoint_ok}, corrupted blob exit {code}"),
    )
}

// ---------------------------------------------------------------- 6, 7

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EXPERIMENTAL: [usize; 2] = [6, 7];

fn replication_config(mode: TrainMode, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 4,
        generator: GeneratorConfig { in_channels: 1, base_channels: 8, n_blocks: 2 },
        classifier: ClassifierConfig { in_channels: 1, base_channels: 8, n_stages: 4 },
        ..TrainConfig::desk(mode)
    }
}

struct RunResult {
    test_auroc: f64,
    eval_psnr: f64,
    eval_ssim: f64,
    secs: f64,
}

fn replicate(seed: u64, modes: &[TrainMode]) -> Result<Vec<RunResult>, String> {
    let spec = PhantomSpec::default();
    let err = |e: monoe_core::Error| e.to_string();
    let paired = make_dataset(&spec, 40, 20, Role::Paired, seed * 3 + 1).map_err(err)?;
    let labeled = make_dataset(&spec, 60, 40, Role::Labeled, seed * 3 + 2).map_err(err)?;
    let eval = make_dataset(&spec, 20, 50, Role::Eval, seed * 3 + 3).map_err(err)?;
    let ids: Vec<u32> = labeled.iter().map(|r| r.patient_id).collect();
    let split = kfold_split(&ids, 5, seed).map_err(err)?.remove(0);
    let pools = Pools { paired: &paired, labeled: &labeled, eval: Some(&eval) };
    let mut out = Vec::new();
    for &mode in modes {
        let t = Instant::now();
        let r = run_fold(&replication_config(mode, seed), pools, &split, &mut |_| {}).map_err(err)?;
        let ev = r.eval.ok_or("no eval report")?;
        let res = RunResult {
            test_auroc: r.test.auroc_or_nan(),
            eval_psnr: ev.psnr_mean,
            eval_ssim: ev.ssim_mean,
            secs: t.elapsed().as_secs_f64(),
        };
        println!(
            "    seed {seed} {mode}: test auroc {:.4}, eval psnr {:.2} ssim {:.4}, {:.0}s",
            res.test_auroc, res.eval_psnr, res.eval_ssim, res.secs
        );
        out.push(res);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criteria 6 and 7 share their training runs.
fn replication(want6: bool, want7: bool) -> (Option<Outcome>, Option<Outcome>) {
    let mut modes = vec![TrainMode::ClassifierOnly, TrainMode::Joint];
    if want7 {
        modes.push(TrainMode::Sequential);
    }
    let mut runs = Vec::new();
    for seed in SEEDS {
        match replicate(seed, &modes) {
            Ok(r) => runs.push(r),
            Err(e) => return (want6.then(|| Err(e.clone())), want7.then_some(Err(e))),
        }
    }
    let c6 = want6.then(|| {
        let wins = runs.iter().filter(|r| r[1].test_auroc > r[0].test_auroc).count();
        let gain = mean(runs.iter().map(|r| r[1].test_auroc - r[0].test_auroc));
        let secs: f64 = runs.iter().map(|r| r[0].secs + r[1].secs).sum();
        let detail = format!(
            "joint wins {wins}/5, mean test auroc {:.4} vs {:.4} (gain {gain:+.4}), {:.1} min",
            mean(runs.iter().map(|r| r[1].test_auroc)),
            mean(runs.iter().map(|r| r[0].test_auroc)),
            secs / 60.0
        );
        check(wins >= 4 && gain >= 0.01, detail)
    });
    let c7 = want7.then(|| {
        let (jp, sp) = (mean(runs.iter().map(|r| r[1].eval_psnr)), mean(runs.iter().map(|r| r[2].eval_psnr)));
        let (js, ss) = (mean(runs.iter().map(|r| r[1].eval_ssim)), mean(runs.iter().map(|r| r[2].eval_ssim)));
        check(
            (jp - sp).abs() <= 2.0 && (js - ss).abs() <= 0.02,
            format!("eval psnr joint {jp:.2} vs sequential {sp:.2} dB, ssim {js:.4} vs {ss:.4}"),
        )
    });
    (c6, c7)
}

// ---------------------------------------------------------------- 8

fn pixels(spec: &PhantomSpec, tissue: Tissue, domain: Domain, min: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut seed = 1000u64;
    while out.len() < min {
        let geom = slice_geometry(spec, 5, seed);
        let rec = render_phantom(spec, 5, seed);
        let img = match domain {
            Domain::Poly => &rec.poly,
            Domain::Mono40 => rec.mono.as_ref().unwrap(),
        };
        out.extend(geom.tissue.iter().zip(img.data()).filter(|(t, _)| **t == tissue).map(|(_, v)| f64::from(*v) * HU_MAX));
        seed += 1;
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn phantom_contract() -> Outcome {
    let spec = PhantomSpec { lesion_prob: 1.0, ..PhantomSpec::default() };
    let cnr = |d| {
        let (mv, sv) = mean_std(&pixels(&spec, Tissue::Vessel, d, 10_000));
        let (me, se) = mean_std(&pixels(&spec, Tissue::Embolism, d, 10_000));
        (mv - me).abs() / (sv * sv + se * se).sqrt()
    };
    let (cnr_poly, cnr_mono) = (cnr(Domain::Poly), cnr(Domain::Mono40));
    let table_ok = spec.classes.lesion_cnr(Domain::Mono40) > spec.classes.lesion_cnr(Domain::Poly);

    let mut worst_noise = 0.0f64;
    for tissue in [Tissue::Lung, Tissue::SoftTissue, Tissue::Vessel, Tissue::Embolism] {
        for d in [Domain::Poly, Domain::Mono40] {
            let (_, sd) = mean_std(&pixels(&spec, tissue, d, 10_000));
            let want = spec.classes.get(tissue).noise(d);
            worst_noise = worst_noise.max((sd - want).abs() / want);
        }
    }

    let n = 2000;
    let data = make_dataset(&PhantomSpec::default(), 100, n / 100, Role::Labeled, 77).map_err(|e| e.to_string())?;
    let pos = data.iter().filter(|r| r.label == Some(1)).count() as f64 / n as f64;
    // 4-sigma binomial band at p = 0.5
    let band = 4.0 * (0.25 / n as f64).sqrt();
    check(
        cnr_mono > cnr_poly && table_ok && worst_noise <= 0.1 && (pos - 0.5).abs() <= band,
        format!(
            "cnr mono {cnr_mono:.2} > poly {cnr_poly:.2}, worst noise std deviation {:.1}%, prevalence {pos:.3} (band +-{band:.3})",
            100.0 * worst_noise
        ),
    )
}

// ---------------------------------------------------------------- 10

fn split_hygiene() -> Outcome {
    let labeled = make_dataset(&PhantomSpec::with_size(16), 60, 2, Role::Labeled, 9).map_err(|e| e.to_string())?;
    let ids: Vec<u32> = labeled.iter().map(|r| r.patient_id).collect();
    let all: BTreeSet<u32> = ids.iter().copied().collect();
    let mut overlaps = 0;
    let mut uncovered = 0;
    for seed in SEEDS {
        let folds = kfold_split(&ids, 5, seed).map_err(|e| e.to_string())?;
        let mut test_count: BTreeMap<u32, usize> = BTreeMap::new();
        for f in &folds {
            let tr: BTreeSet<_> = f.train_patient_ids.iter().collect();
            let va: BTreeSet<_> = f.val_patient_ids.iter().collect();
            let te: BTreeSet<_> = f.test_patient_ids.iter().collect();
            overlaps += tr.intersection(&va).count() + tr.intersection(&te).count() + va.intersection(&te).count();
            uncovered += all.len() - (tr.len() + va.len() + te.len());
            for id in &f.test_patient_ids {
                *test_count.entry(*id).or_default() += 1;
            }
        }
        uncovered += all.iter().filter(|id| test_count.get(id) != Some(&1)).count();
    }
    check(
        overlaps == 0 && uncovered == 0,
        format!("5 seeds x 5 folds over {} patients: {overlaps} overlaps, {uncovered} coverage errors", all.len()),
    )
}

// ----------------------------------------------------------------

fn report(n: usize, outcome: Outcome, t: Duration) -> bool {
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {n}: {tag} {detail} [{:.1}s]", t.as_secs_f64());
    ok
}

fn main() {
    let picked: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let quick: [(usize, fn() -> Outcome); 8] = [
        (1, gradients),
        (2, metric_oracles),
        (3, endpoints),
        (4, freeze_contract),
        (5, determinism),
        (8, phantom_contract),
        (9, round_trips),
        (10, split_hygiene),
    ];
    let mut results = BTreeMap::new();
    for (n, f) in quick {
        if want(n) {
            let t = Instant::now();
            let r = f();
            results.insert(n, report(n, r, t.elapsed()));
        }
    }
    if want(6) || want(7) {
        let t = Instant::now();
        let (c6, c7) = replication(want(6), want(7));
        for (n, c) in [(6, c6), (7, c7)] {
            if let Some(c) = c {
                results.insert(n, report(n, c, t.elapsed()));
            }
        }
    }
    let failed: Vec<usize> = results.iter().filter(|(_, ok)| !**ok).map(|(n, _)| *n).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    // 6 and 7 are statistical outcomes of training runs; they are reported
    // but do not fail the build
    if failed.iter().any(|n| !EXPERIMENTAL.contains(n)) {
        std::process::exit(1);
    }
}
