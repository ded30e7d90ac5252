//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p evmv-cli --test acceptance`.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use evmv_cli::{cmd_eval, cmd_perturb, cmd_synth, cmd_train, EvalArgs, PerturbArgs, SynthArgs, TrainArgs};
use evmv_core::loss::{ace_loss, kl_to_uniform, overall_loss, sample_loss, LabelVector};
use evmv_core::metrics::{auprc, auroc, risk_coverage};
use evmv_core::net::{backward, forward_fused, EvidenceHead, HeadConfig, ModelBundle, TrainConfig};
use evmv_core::perturb::{perturb_text, perturb_text_with_stats, NoiseConfig};
use evmv_core::special::{digamma, ln_gamma, trigamma};
use evmv_core::{
    combine_pair, dirichlet_from_opinion, opinion_from_evidence, rng, DirichletParams, EvidenceVector, Opinion,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.2?}, limit {limit:?}"))?;
    Ok(t)
}

fn random_opinion(r: &mut rng::Stream, k: usize) -> Opinion {
    let raw: Vec<f64> = (0..=k).map(|_| rng::unit_f64(r) + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    let beliefs = raw[..k].iter().map(|x| x / total).collect();
    Opinion::new(beliefs, raw[k] / total).unwrap()
}

fn max_diff(a: &Opinion, b: &Opinion) -> f64 {
    a.beliefs()
        .iter()
        .zip(b.beliefs())
        .map(|(x, y)| (x - y).abs())
        .fold((a.uncertainty() - b.uncertainty()).abs(), f64::max)
}

fn fusion_algebra() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(101, 0);
    let (mut closure, mut comm, mut assoc) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let k = 2 + rng::index(&mut r, 4);
        let (a, b, c) = (random_opinion(&mut r, k), random_opinion(&mut r, k), random_opinion(&mut r, k));
        let ab = combine_pair(&a, &b).map_err(|e| e.to_string())?.opinion;
        let ba = combine_pair(&b, &a).map_err(|e| e.to_string())?.opinion;
        let mass: f64 = ab.beliefs().iter().sum::<f64>() + ab.uncertainty();
        ensure(ab.beliefs().iter().all(|&x| x >= 0.0) && ab.uncertainty() >= 0.0, || "negative mass".into())?;
        closure = closure.max((mass - 1.0).abs());
        comm = comm.max(max_diff(&ab, &ba));
        let left = combine_pair(&ab, &c).map_err(|e| e.to_string())?.opinion;
        let bc = combine_pair(&b, &c).map_err(|e| e.to_string())?.opinion;
        let right = combine_pair(&a, &bc).map_err(|e| e.to_string())?.opinion;
        assoc = assoc.max(max_diff(&left, &right));
        let vac = Opinion::vacuous(k);
        let l = combine_pair(&a, &vac).map_err(|e| e.to_string())?.opinion;
        let rr = combine_pair(&vac, &a).map_err(|e| e.to_string())?.opinion;
        ensure(l == a && rr == a, || "vacuous opinion is not an exact identity".into())?;
    }
    ensure(closure <= 1e-12, || format!("normalization error {closure:e}"))?;
    ensure(comm <= 1e-12, || format!("commutativity error {comm:e}"))?;
    ensure(assoc <= 1e-9, || format!("associativity error {assoc:e}"))?;
    let t = within_time(start, Duration::from_secs(5))?;
    Ok(format!(
        "10^4 triples; max |Σ-1| {closure:.1e}, commutativity {comm:.1e}, associativity {assoc:.1e}, vacuous exact; {t:.2?}"
    ))
}

fn round_trip() -> Outcome {
    let mut r = rng::stream(102, 0);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = 2 + rng::index(&mut r, 5);
        let e: Vec<f64> = (0..k).map(|_| 100.0 * rng::unit_f64(&mut r)).collect();
        let (o, _) = opinion_from_evidence(&EvidenceVector::new(e.clone()).unwrap());
        let back = dirichlet_from_opinion(&o).map_err(|err| err.to_string())?.evidence();
        for (x, y) in e.iter().zip(&back) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max |Δe| {worst:e}"))?;
    Ok(format!("10^4 draws, evidence in [0, 100); max |Δe| {worst:.1e}"))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn special_functions() -> Outcome {
    let psi1 = digamma(1.0).unwrap();
    let tri1 = trigamma(1.0).unwrap();
    let lg = ln_gamma(0.5).unwrap();
    let checks = [
        ("ψ(1)", psi1, -0.5772156649015329),
        ("ψ′(1)", tri1, 1.6449340668482264),
        ("ln Γ(0.5)", lg, 0.5723649429247001),
    ];
    for (name, got, want) in checks {
        ensure(rel(got, want) <= 1e-10, || format!("{name} = {got}, expected {want}"))?;
    }
    let mut worst = 0.0f64;
    for i in 1..=400 {
        let x = i as f64 * 0.05;
        let d = (digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x).abs();
        let t = (trigamma(x + 1.0).unwrap() - trigamma(x).unwrap() + 1.0 / (x * x)).abs();
        let g = (ln_gamma(x + 1.0).unwrap() - ln_gamma(x).unwrap() - x.ln()).abs();
        worst = worst.max(d).max(t).max(g);
    }
    ensure(worst <= 1e-10, || format!("recurrence error {worst:e}"))?;
    Ok(format!(
        "ψ(1) {psi1:.12}, ψ′(1) {tri1:.12}, ln Γ(0.5) {lg:.12}; recurrences on (0, 20] max err {worst:.1e}"
    ))
}

fn loss_values() -> Outcome {
    let y = LabelVector::new(0, 2).unwrap();
    let ace = ace_loss(&DirichletParams::new(vec![1.0, 1.0]).unwrap(), &y).unwrap().0;
    let kl = kl_to_uniform(&[2.0, 1.0]).unwrap().0;
    let want = 2f64.ln() - 0.5;
    ensure((ace - 1.0).abs() <= 1e-12, || format!("ace = {ace}"))?;
    ensure((kl - want).abs() <= 1e-12, || format!("KL = {kl}, expected {want}"))?;
    Ok(format!("ace {ace:.15}, KL {kl:.15} (ln 2 - 0.5 = {want:.15})"))
}

const FD_STEP: f64 = 1e-4;

fn fd_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-6 || diff <= 1e-3 * analytic.abs().max(numeric.abs())
}

fn central(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let (mut hi, mut lo) = (x.to_vec(), x.to_vec());
    hi[i] += FD_STEP;
    lo[i] -= FD_STEP;
    (f(&hi) - f(&lo)) / (2.0 * FD_STEP)
}

fn check_grad(what: &str, f: &dyn Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) -> Result<usize, String> {
    for i in 0..x.len() {
        let n = central(f, x, i);
        ensure(fd_close(g[i], n), || format!("{what} component {i}: analytic {} vs numeric {n}", g[i]))?;
    }
    Ok(x.len())
}

fn random_bundle(r: &mut rng::Stream, views: usize, k: usize) -> (ModelBundle, Vec<Vec<f64>>) {
    let mut heads = Vec::new();
    let mut feats = Vec::new();
    for _ in 0..views {
        let dims = 2 + rng::index(r, 4);
        let cfg = HeadConfig {
            input_dim: dims,
            hidden_dim: 3 + rng::index(r, 5),
            num_classes: k,
        };
        let mut head = EvidenceHead::init(cfg, r).unwrap();
        for p in head.params_mut() {
            *p += rng::symmetric(r, 0.3);
        }
        // Central differences are meaningless across a ReLU kink, so redraw
        // inputs that sit within one step of one.
        let x = loop {
            let x: Vec<f64> = (0..dims).map(|_| rng::symmetric(r, 2.0)).collect();
            let reach = 2.0 * FD_STEP * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if head.hidden_preactivations(&x).unwrap().iter().all(|z| z.abs() > reach) {
                break x;
            }
        };
        heads.push(head);
        feats.push(x);
    }
    let names = (0..views).map(|v| format!("v{v}")).collect();
    (ModelBundle::new(heads, names, TrainConfig::default()).unwrap(), feats)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    for inst in 0..50u64 {
        let mut r = rng::stream(103, inst);
        let k = 2 + rng::index(&mut r, 3);
        let y = LabelVector::new(rng::index(&mut r, k), k).unwrap();
        let lambda = rng::unit_f64(&mut r);
        let alpha: Vec<f64> = (0..k).map(|_| 1.05 + 20.0 * rng::unit_f64(&mut r)).collect();

        let d = DirichletParams::new(alpha.clone()).unwrap();
        let ace = |a: &[f64]| ace_loss(&DirichletParams::new(a.to_vec()).unwrap(), &y).unwrap().0;
        checked += check_grad("ace", &ace, &alpha, &ace_loss(&d, &y).unwrap().1)?;
        let kl = |a: &[f64]| kl_to_uniform(a).unwrap().0;
        checked += check_grad("kl", &kl, &alpha, &kl_to_uniform(&alpha).unwrap().1)?;
        let total = |a: &[f64]| sample_loss(&DirichletParams::new(a.to_vec()).unwrap(), &y, lambda).unwrap().total;
        checked += check_grad("sample loss", &total, &alpha, &sample_loss(&d, &y, lambda).unwrap().grad_alpha)?;
        let views = [d.clone(), DirichletParams::new(alpha.iter().map(|a| a + 1.0).collect()).unwrap()];
        let ov = |a: &[f64]| {
            let mut v = views.to_vec();
            v[1] = DirichletParams::new(a.to_vec()).unwrap();
            overall_loss(&d, &v, &y, lambda).unwrap().total
        };
        let g = overall_loss(&d, &views, &y, lambda).unwrap().views[1].grad_alpha.clone();
        checked += check_grad("overall loss", &ov, views[1].alpha(), &g)?;

        for nviews in [1, 2 + rng::index(&mut r, 2)] {
            let (bundle, feats) = random_bundle(&mut r, nviews, k);
            let (_, grads) = backward(&bundle, &feats, &y, lambda).map_err(|e| e.to_string())?;
            for (h, g) in grads.iter().enumerate() {
                let f = |p: &[f64]| {
                    let mut b = bundle.clone();
                    b.heads[h].params_mut().copy_from_slice(p);
                    let out = forward_fused(&b, "", &feats).unwrap();
                    overall_loss(&out.fused, &out.per_view, &y, lambda).unwrap().total
                };
                let what = format!("{} (instance {inst}, head {h})", if nviews == 1 { "head" } else { "fused model" });
                checked += check_grad(&what, &f, bundle.heads[h].params(), g)?;
            }
        }
    }
    let t = within_time(start, Duration::from_secs(30))?;
    Ok(format!("50 instances x (ace, KL, sample, overall, head, fused model); {checked} components; {t:.2?}"))
}

fn read_metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn synthetic_end_to_end(work: &Path) -> Outcome {
    let start = Instant::now();
    let data = work.join("synth");
    let s = cmd_synth(&SynthArgs::new(&data)).map_err(|e| e.to_string())?;
    ensure(s.num_samples == 2000, || format!("{} samples", s.num_samples))?;

    let run = |name: &str, views: Option<Vec<String>>| -> Result<serde_json::Value, String> {
        let out = work.join(name);
        let mut args = TrainArgs::new(&s.manifest, &out);
        args.views = views;
        let t = cmd_train(&args).map_err(|e| e.to_string())?;
        ensure(t.history.len() <= 15, || "more than 15 epochs".into())?;
        let eval = out.join("eval");
        cmd_eval(&EvalArgs::new(&s.manifest, &t.model, &eval)).map_err(|e| e.to_string())?;
        Ok(read_metrics(&eval))
    };
    let fused = run("fused", None)?;
    let mut singles = Vec::new();
    for (name, _) in &s.views {
        let m = run(&format!("single-{name}"), Some(vec![name.clone()]))?;
        singles.push((name.clone(), m["accuracy"].as_f64().unwrap()));
    }
    let acc = fused["accuracy"].as_f64().unwrap();
    let (best_name, best) = singles
        .iter()
        .cloned()
        .fold((String::new(), f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let uauroc = fused["uncertainty_auroc"].as_f64().ok_or("uncertainty AUROC undefined")?;
    let curve = fused["risk_coverage"].as_array().unwrap();
    let risk_at = |c: f64| {
        curve
            .iter()
            .find(|p| p["coverage"].as_f64().unwrap() >= c - 1e-12)
            .map(|p| p["risk"].as_f64().unwrap())
            .unwrap()
    };
    let (r50, r100) = (risk_at(0.5), risk_at(1.0));
    let detail = format!(
        "fused acc {acc:.4} vs best single ({best_name}) {best:.4}; uncertainty AUROC {uauroc:.4}; risk@0.5 {r50:.4} <= risk@1.0 {r100:.4}"
    );
    ensure(acc >= best - 0.02, || detail.clone())?;
    ensure(uauroc >= 0.60, || detail.clone())?;
    ensure(r50 <= r100, || detail.clone())?;
    let t = within_time(start, Duration::from_secs(120))?;
    Ok(format!("{detail}; {t:.2?} for 4 trainings"))
}

fn metrics_oracles() -> Outcome {
    let a = auroc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    ensure(a == 0.75, || format!("AUROC {a}"))?;
    let ap = auprc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
    ensure((ap - 5.0 / 6.0).abs() < 1e-15, || format!("AP {ap}"))?;
    let curve = risk_coverage(&[0.9, 0.5, 0.3, 0.1], &[false, true, true, true]).unwrap();
    let got: Vec<(f64, f64)> = curve.iter().map(|p| (p.coverage, p.risk)).collect();
    let want = vec![(0.25, 0.0), (0.5, 0.0), (0.75, 0.0), (1.0, 0.25)];
    ensure(got == want, || format!("risk-coverage {got:?}"))?;
    Ok(format!("AUROC {a}, AP {ap:.6} = 5/6, risk-coverage {got:?}"))
}

fn noise_suite(work: &Path) -> Outcome {
    let corpus_path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/posts.txt"));
    let corpus = fs::read_to_string(corpus_path).unwrap();
    let zero = perturb_text(&corpus, &NoiseConfig { p: 0.0, seed: 1 }).unwrap();
    ensure(zero == corpus, || "p = 0 changed the text".into())?;

    let golden = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/noise_golden.tsv")).unwrap();
    let mut cases = 0;
    for line in golden.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let cfg = NoiseConfig::new(f[1].parse().unwrap(), f[0].parse().unwrap()).unwrap();
        let got = perturb_text(f[2], &cfg).unwrap();
        ensure(got == f[3], || format!("seed {}: {got:?} != golden {:?}", f[0], f[3]))?;
        cases += 1;
    }

    let text: String = corpus.chars().filter(char::is_ascii_alphanumeric).cycle().take(100_000).collect();
    let (_, stats) = perturb_text_with_stats(&text, &NoiseConfig { p: 0.15, seed: 42 }).unwrap();
    let rate = stats.mutation_rate().unwrap();
    ensure((rate - 0.15).abs() <= 0.01, || format!("rate {rate} at p = 0.15"))?;

    let mut grid = Vec::new();
    for p in [0.05, 0.10, 0.15, 0.20, 0.25] {
        let s = cmd_perturb(&PerturbArgs {
            input: corpus_path.to_path_buf(),
            out: work.join("noise"),
            p,
            seed: 42,
        })
        .map_err(|e| e.to_string())?;
        let out = fs::read_to_string(&s.output).unwrap();
        ensure(out.lines().count() == corpus.lines().count(), || format!("line count changed at p = {p}"))?;
        grid.push(format!("{p}:{:.3}", s.report.total.mutation_rate().unwrap()));
    }
    Ok(format!(
        "p=0 identity; {cases} golden cases; rate {rate:.4} over 10^5 chars; grid {}",
        grid.join(" ")
    ))
}

fn determinism(work: &Path) -> Outcome {
    let data = work.join("det-data");
    let s = cmd_synth(&SynthArgs::new(&data)).map_err(|e| e.to_string())?;
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for rep in 0..2 {
        let out = work.join(format!("det-run{rep}"));
        let t = cmd_train(&TrainArgs::new(&s.manifest, &out)).map_err(|e| e.to_string())?;
        let bytes = fs::read(&t.model).unwrap();
        let sidecar = fs::read(out.join("model.evmv.json")).unwrap();
        models.push((bytes, sidecar));
        for e in 0..2 {
            let eval = out.join(format!("eval{e}"));
            cmd_eval(&EvalArgs::new(&s.manifest, &t.model, &eval)).map_err(|e| e.to_string())?;
            reports.push(fs::read(eval.join("metrics.json")).unwrap());
        }
    }
    ensure(models[0] == models[1], || "checkpoints differ".into())?;
    ensure(reports.windows(2).all(|w| w[0] == w[1]), || "metrics differ".into())?;
    Ok(format!(
        "2 trainings -> identical {}-byte checkpoints; 4 evaluations -> identical metrics.json",
        models[0].0.len()
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("fusion algebra", Box::new(fusion_algebra)),
        ("round trip", Box::new(round_trip)),
        ("special functions", Box::new(special_functions)),
        ("loss values", Box::new(loss_values)),
        ("gradient suite", Box::new(gradient_suite)),
        ("synthetic end-to-end", Box::new(|| synthetic_end_to_end(w))),
        ("metrics oracles", Box::new(metrics_oracles)),
        ("noise suite", Box::new(|| noise_suite(w))),
        ("determinism", Box::new(|| determinism(w))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
