//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs every experiment at its preset scale, so expect
//! several minutes in release mode.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use robsbi::discrepancy::{hellinger_onestep, mmd_studentized, mmd_ustat, KernelSpec, OracleRatio};
use robsbi::experiments::{execute, run, Experiment, Record, RunConfig, RunOutput, Summary};
use robsbi::model_zoo::{simulate, ModelSpec};
use robsbi::rng::{child_seed, rng_from_seed};
use robsbi::sample::Provenance;
use robsbi::stats::{mean, normal_cdf, variance};
use robsbi::Sample;

struct Verdict {
    pass: bool,
    details: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.details
            .push(format!("{}{what}", if ok { "" } else { "✗ " }));
    }
}

fn preset(e: Experiment) -> RunConfig {
    RunConfig::preset(e).resolved()
}

fn metric(s: &Summary, target: &str, method: &str, metric: &str) -> f64 {
    s.get(target, method, metric).map_or(f64::NAN, |r| r.mean)
}

fn values<'a>(
    records: &'a [Record],
    target: &'a str,
    method: &'a str,
    metric: &'a str,
) -> impl Iterator<Item = f64> + 'a {
    records
        .iter()
        .filter(move |r| r.target == target && r.method == method && r.metric == metric)
        .map(|r| r.value)
}

fn timed(cfg: &RunConfig) -> Result<(RunOutput, f64), String> {
    let t = Instant::now();
    let out = execute(cfg).map_err(|e| e.to_string())?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn correct_model_coverage() -> Result<Verdict, String> {
    let (out, secs) = timed(&preset(Experiment::GaussianLocScale))?;
    let s = &out.summary;
    let mut v = Verdict::new();
    for (target, p) in [("location", "mu"), ("scale", "sigma")] {
        for kind in ["hellinger", "l2", "mmd"] {
            let c = metric(s, target, kind, "covered");
            v.check(c >= 0.93, format!("{target}/{kind} coverage {c:.2} ≥ 0.93"));
        }
        let c = metric(s, target, "likelihood", "covered");
        v.check(
            (0.90..=0.99).contains(&c),
            format!("{target}/likelihood coverage {c:.2} ∈ [0.90, 0.99]"),
        );
        let (h, l) = (
            metric(s, target, "hellinger", &format!("length_{p}")),
            metric(s, target, "l2", &format!("length_{p}")),
        );
        v.check(
            h <= l,
            format!("{target} length hellinger {h:.3} ≤ l2 {l:.3}"),
        );
    }
    v.details.push(format!("runtime {secs:.0}s"));
    Ok(v)
}

fn misspecified_coverage() -> Result<Verdict, String> {
    let (out, _) = timed(&preset(Experiment::MisspecifiedTilt))?;
    let s = &out.summary;
    let mut v = Verdict::new();
    for kind in ["hellinger", "l2", "mmd"] {
        let c = metric(s, "location", kind, "covered");
        v.check(
            c >= 0.90,
            format!("{kind} covers its projection {c:.2} ≥ 0.90"),
        );
    }
    let c = metric(s, "location", "likelihood", "covered_hellinger");
    v.check(
        c <= 0.35,
        format!("likelihood covers the Hellinger projection {c:.2} ≤ 0.35"),
    );
    Ok(v)
}

fn gof_characteristics() -> Result<Verdict, String> {
    let (out, secs) = timed(&preset(Experiment::Gof))?;
    let s = &out.summary;
    let mut v = Verdict::new();
    let r = |sc: &str, d: &str| metric(s, sc, d, "reject");
    v.check(
        r("null", "wasserstein") <= 0.07,
        format!(
            "wasserstein null rejection {:.2} ≤ 0.07",
            r("null", "wasserstein")
        ),
    );
    v.check(
        r("tilted", "wasserstein") >= 0.95,
        format!(
            "wasserstein tilted power {:.2} ≥ 0.95",
            r("tilted", "wasserstein")
        ),
    );
    v.check(
        r("t3", "wasserstein") >= 0.95,
        format!("wasserstein t3 power {:.2} ≥ 0.95", r("t3", "wasserstein")),
    );
    let ks = r("t3", "ks");
    v.check(
        (0.6..=0.95).contains(&ks),
        format!("ks t3 power {ks:.2} ∈ [0.60, 0.95]"),
    );
    v.check(secs <= 900.0, format!("runtime {secs:.0}s ≤ 900s"));
    Ok(v)
}

fn normal(theta: f64, sigma: f64) -> ModelSpec {
    ModelSpec::GaussianLoc { theta, sigma }
}

/// Kolmogorov–Smirnov test of a sample against N(0, 1); returns (D, p).
fn ks_standard_normal(x: &[f64]) -> (f64, f64) {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = normal_cdf(*v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp())
        .sum();
    (d, p.clamp(0.0, 1.0))
}

fn brute_mmd(x: &Sample, y: &Sample, k: &KernelSpec) -> f64 {
    let (m, n) = (x.len(), y.len());
    let mut xx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                xx += k.eval(x.point(i), x.point(j));
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                yy += k.eval(y.point(i), y.point(j));
            }
        }
    }
    let mut xy = 0.0;
    for i in 0..m {
        for j in 0..n {
            xy += k.eval(x.point(i), y.point(j));
        }
    }
    xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64
}

fn uniform_sample(
    len: usize,
    dim: usize,
    shift: f64,
    rng: &mut impl Rng,
) -> robsbi::Result<Sample> {
    let pts: Vec<f64> = (0..len * dim)
        .map(|_| shift + rng.random::<f64>() * 3.0)
        .collect();
    Sample::new(pts, dim, Provenance::Observed, 0)
}

fn estimator_calibration() -> Result<Verdict, String> {
    let e = |e: robsbi::SbiError| e.to_string();
    let mut v = Verdict::new();

    // (a) oracle-ratio Hellinger between N(0,1) and N(1,1)
    let n = 500;
    let g = normal(0.5, 2.0);
    let r = OracleRatio::new(normal(0.0, 1.0), g.clone()).map_err(e)?;
    let sr = OracleRatio::new(normal(1.0, 1.0), g).map_err(e)?;
    let mut vals = Vec::with_capacity(300);
    for rep in 0..300u64 {
        let obs = simulate(&normal(0.0, 1.0), n, child_seed(41, rep)).map_err(e)?;
        let sim = simulate(&normal(1.0, 1.0), n, child_seed(42, rep)).map_err(e)?;
        vals.push(hellinger_onestep(&r, &sr, &obs, &sim).map_err(e)?.value);
    }
    let truth = 2.0 - 2.0 * (-0.125f64).exp();
    let se = (variance(&vals) / vals.len() as f64).sqrt();
    let bias = mean(&vals) - truth;
    v.check(
        bias.abs() <= 3.0 * se,
        format!(
            "(a) hellinger mean {:.4} vs {truth:.4}, |bias| ≤ 3·SE={:.4}",
            mean(&vals),
            3.0 * se
        ),
    );
    let psi = (-0.125f64).exp();
    let var_psi = variance(&vals) / 4.0;
    let want = (1.0 - psi * psi) / 2.0 / n as f64;
    let ratio = var_psi / want;
    v.check(
        (0.5..=2.0).contains(&ratio),
        format!("(a) var(ψ̂)/((1−ψ²)/2n) = {ratio:.2} within factor 2"),
    );

    // (b) studentized MMD under H0
    let k = KernelSpec::gaussian(1.0);
    let mut z = Vec::with_capacity(500);
    for rep in 0..500u64 {
        let obs = simulate(&normal(0.0, 1.0), 200, child_seed(51, rep)).map_err(e)?;
        let sim = simulate(&normal(0.0, 1.0), 200, child_seed(52, rep)).map_err(e)?;
        z.push(
            mmd_studentized(&sim, &obs, &k, child_seed(53, rep))
                .map_err(e)?
                .value,
        );
    }
    let (d, p) = ks_standard_normal(&z);
    v.check(
        p > 0.001,
        format!("(b) studentized MMD KS vs N(0,1): D={d:.3}, p={p:.3} > 0.001"),
    );

    // (c) U-statistic against the double loop
    let mut rng = rng_from_seed(61);
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let dim = 1 + (inst % 2) as usize;
        let (m, nn) = (rng.random_range(2..=50), rng.random_range(2..=50));
        let x = uniform_sample(m, dim, 0.0, &mut rng).map_err(e)?;
        let y = uniform_sample(nn, dim, 0.5, &mut rng).map_err(e)?;
        let kk = KernelSpec::gaussian(0.5 + rng.random::<f64>());
        let got = mmd_ustat(&x, &y, &kk).map_err(e)?.value;
        worst = worst.max((got - brute_mmd(&x, &y, &kk)).abs());
    }
    v.check(
        worst <= 1e-12,
        format!("(c) mmd_ustat vs double loop max |diff| {worst:.1e} ≤ 1e-12"),
    );
    Ok(v)
}

fn tilt_expansion() -> Result<Verdict, String> {
    let (out, _) = timed(&preset(Experiment::TiltExpansion))?;
    let s = &out.summary;
    let mut v = Verdict::new();
    let est = metric(s, "location", "tilt", "estimate_theta");
    v.check(
        (est - 2.5).abs() <= 0.3,
        format!("θ̂ = {est:.3} within 0.3 of 2.5"),
    );
    let (stat, df) = (
        metric(s, "location", "tilt", "chi2_stat"),
        metric(s, "location", "tilt", "chi2_df"),
    );
    v.check(
        metric(s, "location", "tilt", "chi2_pass") == 1.0,
        format!("40-bin χ² = {stat:.1} on {df} df below the 0.999 quantile"),
    );
    let conv = metric(s, "location", "tilt", "converged_fraction");
    v.check(
        conv >= 0.99,
        format!("Newton converged at {:.1}% of grid θ", 100.0 * conv),
    );
    Ok(v)
}

fn gmm_identifiable() -> Result<Verdict, String> {
    let cfg = preset(Experiment::GmmIdentifiable);
    let (out, _) = timed(&cfg)?;
    let s = &out.summary;
    let mut v = Verdict::new();
    for t in cfg.targets.as_deref().unwrap_or_default() {
        for kind in ["hellinger", "l2"] {
            let c = metric(s, &t.name, kind, "covered");
            v.check(c == 1.0, format!("{}/{kind} coverage {c:.2} = 1", t.name));
        }
    }
    let (h, l) = (
        metric(s, "mu1", "hellinger", "length_mu1"),
        metric(s, "mu1", "l2", "length_mu1"),
    );
    v.check(h <= l, format!("μ₁ length hellinger {h:.3} ≤ l2 {l:.3}"));
    Ok(v)
}

fn model_approximation() -> Result<Verdict, String> {
    let cfg = preset(Experiment::ApproxBeta);
    let (out, _) = timed(&cfg)?;
    let mut v = Verdict::new();
    let picks = values(&out.records, "theta", "legendre", "k_selected")
        .filter(|k| *k == 8.0)
        .count();
    let reps = cfg.seeds.replications;
    v.check(
        picks * 10 >= 8 * reps,
        format!("k=8 selected in {picks}/{reps} runs"),
    );
    for th in cfg.check_thetas.as_deref().unwrap_or_default() {
        let worst = values(
            &out.records,
            "theta",
            "legendre",
            &format!("sup_error_theta{th}"),
        )
        .fold(0.0, f64::max);
        v.check(
            worst <= 0.15,
            format!("θ={th}: worst sup error {worst:.3} ≤ 0.15"),
        );
    }
    Ok(v)
}

fn active_learning() -> Result<Verdict, String> {
    let cfg = preset(Experiment::ActiveDemo);
    let (out, _) = timed(&cfg)?;
    let s = &out.summary;
    let name = &cfg.targets.as_deref().unwrap_or_default()[0].name;
    let mut v = Verdict::new();
    let mono = metric(s, name, "al", "nonincreasing_from_round3");
    v.check(
        mono >= 0.6,
        format!(
            "excess risk non-increasing from round 3 in {:.0}% of seeds",
            100.0 * mono
        ),
    );
    let beats = metric(s, name, "al", "beats_grid");
    v.check(
        beats >= 0.6,
        format!(
            "AL beats matched-budget grid in {:.0}% of seeds",
            100.0 * beats
        ),
    );
    Ok(v)
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .unwrap_or(&p)
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&p).unwrap_or_default()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Result<Verdict, String> {
    let mut v = Verdict::new();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for e in Experiment::ALL {
        let mut cfg = preset(e);
        cfg.seeds.master = 20_240_501;
        cfg.seeds.replications = 2;
        match e {
            Experiment::TiltExpansion => {
                cfg.m = Some(20_000);
                if let Some(t) = cfg.tilt.as_mut() {
                    t.m = 20_000;
                }
            }
            Experiment::Gandk | Experiment::GmmUnidentifiable | Experiment::MisspecifiedTilt => {
                cfg.seeds.replications = 1;
            }
            _ => {}
        }
        let mut runs = Vec::new();
        for attempt in 0..2 {
            cfg.output_dir = tmp.path().join(format!("{e:?}_{attempt}"));
            run(&cfg).map_err(|err| format!("{e:?}: {err}"))?;
            // the resolved config records the output directory itself
            runs.push(
                files_under(&cfg.output_dir)
                    .into_iter()
                    .filter(|(f, _)| f.ends_with(".csv"))
                    .collect::<Vec<_>>(),
            );
        }
        let csvs = runs[0].len();
        v.check(
            csvs > 0 && runs[0] == runs[1],
            format!("{e:?}: {csvs} CSV files byte-identical across runs"),
        );
    }
    Ok(v)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Verdict, String>); 9] = [
        ("1 correct-model coverage", correct_model_coverage),
        ("2 misspecified-model coverage", misspecified_coverage),
        (
            "3 goodness-of-fit operating characteristics",
            gof_characteristics,
        ),
        ("4 estimator calibration", estimator_calibration),
        ("5 exponential tilt", tilt_expansion),
        ("6 identifiable mixture", gmm_identifiable),
        ("7 model approximation", model_approximation),
        ("8 active learning", active_learning),
        ("9 determinism", determinism),
    ];
    let only: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_ref().is_some_and(|o| !name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, details) = match f() {
            Ok(v) => (v.pass, v.details),
            Err(e) => (false, vec![format!("error: {e}")]),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {name} ({:.0}s): {}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            details.join("; ")
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criterion(s) failed");
        ExitCode::FAILURE
    }
}
