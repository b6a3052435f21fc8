//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stderr
//! (unbuffered, so it shows up even when libtest captures output) and then
//! asserts the verdict.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hetfuse::benchmarks::{gen_paper_suite, gen_synthetic_family, SyntheticFamilySpec};
use hetfuse::dataset::{split, SplitSpec};
use hetfuse::fusion::{run_comparison, train_baseline_gp, train_fusion, ModelKind, PipelineConfig};
use hetfuse::gp::{fit_gp, neg_log_likelihood, GpConfig, KernelParams};
use hetfuse::imc::{calibrate, imc_loss, map_all_sources, ImcConfig};
use hetfuse::lvgp::{dissimilarity, fit_lvgp, latent_distance, LatentMap, LvgpConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {id} {name}: {} ({detail})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{}", line.trim_end());
}

#[test]
fn criterion_1_likelihood_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 50 {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=3);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.5..1.5));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let lp: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.5)).collect();
        let params = KernelParams::from_log10(&lp);
        // The explicit-inverse oracle is itself only trustworthy on
        // reasonably conditioned matrices.
        if common::condition(&x, &params.phi, 1e-8) > 1e6 {
            continue;
        }
        let got = neg_log_likelihood(&params, &x, &y).unwrap();
        let want = common::dense_nll(&x, &y, &params.phi, 1e-8);
        worst = worst.max((got - want).abs());
        done += 1;
    }
    let elapsed = start.elapsed();
    verdict(
        "1",
        "likelihood oracle",
        worst <= 1e-8 && elapsed < Duration::from_secs(5),
        &format!("50 instances, max |diff| {worst:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut ok, mut checked, mut skipped) = (0, 0, 0);
    for k in 0..20u64 {
        let n = rng.random_range(6..=16);
        let d = rng.random_range(1..=3);
        let x: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| rng.random_range(0.0..1.0));
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..4.0)).collect();
        let y = DVector::from_fn(n, |i, _| (0..d).map(|j| (w[j] * x[(i, j)]).sin()).sum::<f64>());
        let gp_cfg = GpConfig { seed: k, ..Default::default() };
        let gp = fit_gp(&x, &y, &gp_cfg).unwrap();
        if gp.nugget() <= 1e-6 {
            checked += 1;
            ok += common::interpolates(&gp.predict(&x).unwrap().mean, &y, 1e-6) as usize;
        } else {
            skipped += 1;
        }

        let s: Vec<String> = (0..n).map(|i| ["A", "B"][i % 2].to_string()).collect();
        let y2 = DVector::from_fn(n, |i, _| y[i] + if i % 2 == 1 { 0.5 } else { 0.0 });
        let mut lv_cfg = LvgpConfig::default();
        lv_cfg.gp.seed = k;
        let lv = fit_lvgp(&x, &s, &y2, &lv_cfg).unwrap();
        if lv.nugget() <= 1e-6 {
            checked += 1;
            ok += common::interpolates(&lv.predict(&x, &s).unwrap().mean, &y2, 1e-6) as usize;
        } else {
            skipped += 1;
        }
    }
    verdict(
        "2",
        "interpolation",
        ok == checked && checked > 0,
        &format!("{ok}/{checked} models within 1e-6 relative, {skipped} skipped for nugget > 1e-6"),
    );
}

#[test]
fn criterion_3_imc_synthetic_recovery() {
    let start = Instant::now();
    let (mut recovered, mut monotone) = (0, 0);
    let mut losses = Vec::new();
    for seed in 0..10u64 {
        let fam = gen_synthetic_family(&SyntheticFamilySpec::new(2, 2, seed), 60, 70).unwrap();
        let (tr, te) = split(&fam.source, SplitSpec { train_fraction: 20.0 / 70.0, seed }).unwrap();
        let gp = fit_gp(&fam.reference.x, &fam.reference.y, &GpConfig { seed, ..Default::default() }).unwrap();
        let cal = calibrate(&tr, &gp, &ImcConfig { seed, ..Default::default() }).unwrap();
        let xs = cal.map.source_standardizer.transform(&te.x).unwrap();
        let held = imc_loss(&cal.map, &xs, &gp.output.standardize(&te.y), &gp).unwrap();
        recovered += (held <= 0.05) as usize;
        monotone += cal.trace.windows(2).all(|w| w[1].best_loss <= w[0].best_loss) as usize;
        losses.push(format!("{held:.1e}"));
    }
    let elapsed = start.elapsed();
    verdict(
        "3",
        "IMC synthetic recovery",
        recovered >= 8 && monotone == 10 && elapsed < Duration::from_secs(120),
        &format!(
            "held-out MSE <= 0.05 in {recovered}/10, monotone trace {monotone}/10, {elapsed:.2?}; held-out [{}]",
            losses.join(", ")
        ),
    );
}

struct BeamRun {
    lv_all: f64,
    gp_all: f64,
    lv_hcb: f64,
    gp_hcb: f64,
    ss_hcb: f64,
    latent: LatentMap,
}

struct BeamStudy {
    runs: Vec<BeamRun>,
    elapsed: Duration,
}

fn beam_study() -> &'static BeamStudy {
    static STUDY: OnceLock<BeamStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let start = Instant::now();
        let runs = (0..10u64)
            .map(|seed| {
                let suite = gen_paper_suite(seed).unwrap();
                let train: Vec<_> = suite.iter().map(|s| s.train.clone()).collect();
                let test: Vec<_> = suite.iter().map(|s| s.test.clone()).collect();
                let cmp = run_comparison(&train, &test, &PipelineConfig::default().with_seed(seed)).unwrap();
                let r = &cmp.evaluation.report;
                let lv = r.row(ModelKind::FusedLvgp).unwrap();
                let gp = r.row(ModelKind::FusedGp).unwrap();
                let ss = r.row(ModelKind::SingleSourceGp).unwrap();
                BeamRun {
                    lv_all: lv.test_nrmse_all.unwrap(),
                    gp_all: gp.test_nrmse_all.unwrap(),
                    lv_hcb: lv.test_nrmse_per_source["HCB"],
                    gp_hcb: gp.test_nrmse_per_source["HCB"],
                    ss_hcb: ss.test_nrmse_per_source["HCB"],
                    latent: cmp.lvgp().unwrap().latent.clone(),
                }
            })
            .collect();
        BeamStudy {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_4_beam_ordering() {
    let study = beam_study();
    let count = |f: &dyn Fn(&BeamRun) -> bool| study.runs.iter().filter(|r| f(r)).count();
    let a = count(&|r| r.lv_all < r.gp_all);
    let b = count(&|r| r.lv_hcb < r.ss_hcb);
    let c = count(&|r| r.lv_hcb < r.gp_hcb);
    let mean = |f: &dyn Fn(&BeamRun) -> f64| study.runs.iter().map(f).sum::<f64>() / study.runs.len() as f64;
    verdict(
        "4",
        "beam ordering",
        a >= 8 && b >= 8 && c >= 8 && study.elapsed < Duration::from_secs(900),
        &format!(
            "(a) {a}/10 (b) {b}/10 (c) {c}/10, need 8; mean NRMSE all LVGP {:.4} GP {:.4}, HCB LVGP {:.4} GP {:.4} GP-HCB {:.4}; {:.1?}",
            mean(&|r| r.lv_all),
            mean(&|r| r.gp_all),
            mean(&|r| r.lv_hcb),
            mean(&|r| r.gp_hcb),
            mean(&|r| r.ss_hcb),
            study.elapsed
        ),
    );
}

#[test]
fn criterion_5_latent_geometry() {
    let study = beam_study();
    let mut anchored = true;
    let mut geometry = 0;
    let mut self_zero = true;
    let mut dists = Vec::new();
    for r in &study.runs {
        let z = |l: &str| r.latent.coord(l).unwrap();
        anchored &= z("RB") == [0.0, 0.0];
        let (rh, rc, hc) = (
            latent_distance(z("RB"), z("HRB")),
            latent_distance(z("RB"), z("HCB")),
            latent_distance(z("HRB"), z("HCB")),
        );
        geometry += (rh < rc && rh < hc) as usize;
        self_zero &= dissimilarity(&r.latent, "RB").unwrap()["RB"] == 0.0
            && dissimilarity(&r.latent, "HCB").unwrap()["HCB"] == 0.0;
        dists.push(format!("{rh:.2}/{rc:.2}/{hc:.2}"));
    }
    let hand = LatentMap {
        levels: vec!["R".into(), "S".into()],
        coords: vec![[0.0, 0.0], [3.0, 3.0]],
        anchor_level: "R".into(),
    };
    let hand_ok = (dissimilarity(&hand, "R").unwrap()["S"] - 1.0).abs() <= 1e-12;
    verdict(
        "5",
        "latent geometry",
        anchored && self_zero && hand_ok && geometry >= 7,
        &format!(
            "anchor exact {anchored}, D(ref,ref)=0 {self_zero}, hand values {hand_ok}, RB-HRB closest in {geometry}/10 (need 7); RB-HRB/RB-HCB/HRB-HCB [{}]",
            dists.join(", ")
        ),
    );
}

#[test]
fn criterion_6_dissimilarity_examples() {
    let latent = |z: [f64; 2]| LatentMap {
        levels: vec!["ref".into(), "l".into()],
        coords: vec![[0.0, 0.0], z],
        anchor_level: "ref".into(),
    };
    let same = dissimilarity(&latent([0.0, 0.0]), "ref").unwrap()["l"];
    let corner = dissimilarity(&latent([3.0, 3.0]), "ref").unwrap()["l"];
    let edge = dissimilarity(&latent([0.0, 3.0]), "ref").unwrap()["l"];
    let pass = same == 0.0 && (corner - 1.0).abs() <= 1e-12 && (edge - 0.70711).abs() <= 5e-6
        && (edge - 1.0 / 2f64.sqrt()).abs() <= 1e-12;
    verdict(
        "6",
        "dissimilarity examples",
        pass,
        &format!("D(same)={same}, D(3,3)={corner}, D(0,3)={edge}"),
    );
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline(work: &Path) {
    let s = |p: PathBuf| p.to_str().unwrap().to_string();
    let data = s(work.join("data"));
    let run = s(work.join("run"));
    let manifest = s(work.join("data/manifest.json"));
    let mut steps: Vec<Vec<String>> = vec![
        vec!["generate".into(), "--suite".into(), "beam-paper".into(), "--out".into(), data],
        vec!["map".into(), "--manifest".into(), manifest.clone(), "--out".into(), run.clone()],
    ];
    for kind in ["fused_gp", "fused_lvgp", "single_source:HCB"] {
        steps.push(
            ["train", "--kind", kind, "--manifest", &manifest, "--out", &run]
                .map(String::from)
                .to_vec(),
        );
    }
    let mut eval: Vec<String> = ["eval", "--manifest", &manifest, "--out", &run].map(String::from).to_vec();
    for m in ["fused_gp", "fused_lvgp", "single_source_HCB"] {
        eval.push("--model".into());
        eval.push(s(work.join(format!("run/model_{m}.json"))));
    }
    steps.push(eval);
    for step in steps {
        let mut args = vec!["hetfuse".to_string(), "--seed".into(), "11".into()];
        args.extend(step.iter().cloned());
        assert_eq!(hetfuse::cli::main_with_args(args), 0, "{step:?}");
    }
}

#[test]
fn criterion_7_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    pipeline(&work);
    let first = snapshot(&work);
    std::fs::remove_dir_all(&work).unwrap();
    pipeline(&work);
    let second = snapshot(&work);
    let differing: Vec<_> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    verdict(
        "7",
        "determinism",
        differing.is_empty() && first.len() > 10,
        &format!("{} files compared, differing: {:?}", first.len(), differing),
    );
}

#[test]
fn criterion_8_collapse_reduction() {
    let suite = gen_paper_suite(4).unwrap();
    let train: Vec<_> = suite.iter().map(|s| s.train.clone()).collect();
    let imc = ImcConfig {
        population: 20,
        generations: 20,
        ..Default::default()
    };
    let mapping = map_all_sources(&train, None, &imc, &GpConfig::default()).unwrap();
    let cfg = LvgpConfig {
        collapse_latent: true,
        ..Default::default()
    };
    let lv = train_fusion(&mapping.fused, &cfg).unwrap();
    let gp = train_baseline_gp(&mapping.fused, &cfg.gp).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q = DMatrix::from_fn(200, 2, |_, _| rng.random_range(-2.5..2.5));
    let labels: Vec<String> = (0..200).map(|i| ["RB", "HRB", "HCB"][i % 3].to_string()).collect();
    let a = lv.predict(&q, &labels).unwrap();
    let b = gp.predict(&q).unwrap();
    let scale = gp.output.scale;
    let worst_mean = (&a.mean - &b.mean).amax() / scale;
    let worst_var = (&a.variance - &b.variance).amax() / (scale * scale);
    verdict(
        "8",
        "collapse reduction",
        worst_mean <= 1e-10 && worst_var <= 1e-10,
        &format!("200 queries, max |mean diff| {worst_mean:.1e}, max |var diff| {worst_var:.1e} (standardized units)"),
    );
}
