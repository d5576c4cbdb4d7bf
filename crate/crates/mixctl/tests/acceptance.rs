//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a PASS/FAIL line in the normal test output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use mixctl::cli::{run, Cli};
use mixctl::data::builtin;
use mixctl::simulate::{simulate, SimSpec};
use modalmix::bma::{
    coverage_diagnostic, empirical_allocation_posterior, log_allocation_prior,
    renormalized_allocation_posterior, AllocationPosterior, Estimator,
};
use modalmix::engine::{
    fit_gaussian_component, fit_gaussian_shared_precision, fit_poisson_gamma, fit_poisson_lognormal,
    QuadratureConfig,
};
use modalmix::sampler::{enumerate_exact, full_support_trace, run_modal_gibbs, AllAllocations, SamplerConfig};
use modalmix::select::{select_k, ChibVariant, ModelComparisonReport};
use modalmix::special::ln_gamma;
use modalmix::{Family, Observations, PoissonPriorKind, PriorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

type Check = Result<(bool, String), String>;
/// (data, tv, |logI - exact|, |exact - closed form|, chib spread)
type Instance = (Vec<f64>, f64, f64, f64, f64);
type Criterion = (&'static str, fn() -> Check, Duration);

const POISSON_GAMMA: Family = Family::Poisson { prior: PoissonPriorKind::GammaConjugate };
const POISSON_LOGNORMAL: Family = Family::Poisson { prior: PoissonPriorKind::LogNormal };

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

// Closed-form Poisson-Gamma evidence and Dirichlet-multinomial prior, summed
// over every labelling by brute force.
fn poisson_gamma_log_marginal(values: &[f64], a: f64, b: f64) -> f64 {
    let n = values.len() as f64;
    let s: f64 = values.iter().sum();
    let log_fact: f64 = values.iter().map(|y| ln_gamma(y + 1.0)).sum();
    a * b.ln() - ln_gamma(a) + ln_gamma(a + s) - (a + s) * (b + n).ln() - log_fact
}

fn dirichlet_multinomial(counts: &[usize], alpha: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    let total: f64 = alpha.iter().sum();
    let mut out = ln_gamma(total) - ln_gamma(n as f64 + total);
    for (&c, &a) in counts.iter().zip(alpha) {
        out += ln_gamma(a + c as f64) - ln_gamma(a);
    }
    out
}

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn brute_force_raw(y: &[f64], k: usize, priors: &PriorSpec) -> Vec<f64> {
    let g = priors.poisson_gamma;
    AllAllocations::new(y.len(), k)
        .map(|z| {
            let mut groups = vec![Vec::new(); k];
            for (&l, &v) in z.labels().iter().zip(y) {
                groups[l as usize].push(v);
            }
            let ev: f64 = groups.iter().map(|s| poisson_gamma_log_marginal(s, g.shape, g.rate)).sum();
            ev + dirichlet_multinomial(z.counts(), &priors.alpha)
        })
        .collect()
}

fn random_poisson_gamma_data(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = Gamma::new(2.0, 1.0 / 0.3).unwrap();
    let lambdas = [rate.sample(&mut rng), rate.sample(&mut rng)];
    (0..8)
        .map(|_| {
            let l = lambdas[rng.random_range(0..2)];
            Poisson::new(f64::max(l, 1e-3)).unwrap().sample(&mut rng)
        })
        .collect()
}

fn enumerated_instances() -> Result<Vec<Instance>, String> {
    let q = QuadratureConfig::default();
    let priors = PriorSpec::new(2);
    let mut out = Vec::new();
    for i in 0..20 {
        let values = random_poisson_gamma_data(1000 + i);
        let y = Observations::new(values.clone(), &POISSON_GAMMA).map_err(err)?;
        let exact = enumerate_exact(&y, 2, &POISSON_GAMMA, &priors, &q, 12).map_err(err)?;
        let trace = full_support_trace(&y, 2, &POISSON_GAMMA, &priors, &q, 12).map_err(err)?;
        let post = renormalized_allocation_posterior(&trace, &priors.alpha).map_err(err)?;
        let log_i = modalmix::select::log_evidence_i(&trace, &priors.alpha).map_err(err)?;

        let mut tv = 0.0;
        let mut chib = Vec::new();
        for (z, &lp) in AllAllocations::new(8, 2).zip(&exact.raw_log_probs) {
            let key = z.key();
            tv += 0.5 * (post.prob(&key) - lp.exp()).abs();
            let entry = trace.table.get(&key).ok_or("allocation missing from the full trace")?;
            chib.push(entry.fit.log_cond_evidence + log_allocation_prior(z.counts(), &priors.alpha) - lp);
        }
        let oracle = lse(&brute_force_raw(&values, 2, &priors));
        let lo = chib.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = chib.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push((values, tv, (log_i - exact.log_evidence).abs(), (exact.log_evidence - oracle).abs(), hi - lo));
    }
    Ok(out)
}

fn criterion_1() -> Check {
    let rows = enumerated_instances()?;
    let tv = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let ev = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let oracle = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let pass = tv < 1e-10 && ev < 1e-10 && oracle < 1e-9;
    Ok((pass, format!("max TV {tv:.2e}, max |logI - exact| {ev:.2e}, max |exact - closed form| {oracle:.2e}")))
}

fn criterion_2() -> Check {
    let rows = enumerated_instances()?;
    let spread = rows.iter().map(|r| r.4).fold(0.0, f64::max);
    Ok((spread < 1e-10, format!("max spread of log p(y|z) + log p(z) - log p(z|y): {spread:.2e}")))
}

fn criterion_3() -> Check {
    let values = vec![1.0, 3.0, 0.0, 2.0, 9.0, 12.0, 7.0, 10.0];
    let y = Observations::new(values, &POISSON_GAMMA).map_err(err)?;
    let priors = PriorSpec::new(2);
    let q = QuadratureConfig::default();
    let cfg = SamplerConfig { iterations: 200_000, ..SamplerConfig::default() };
    let exact = enumerate_exact(&y, 2, &POISSON_GAMMA, &priors, &q, 12).map_err(err)?;
    let trace = run_modal_gibbs(&y, 2, &POISSON_GAMMA, &priors, &q, &cfg).map_err(err)?;
    let pg = empirical_allocation_posterior(&trace).map_err(err)?;
    let pi = renormalized_allocation_posterior(&trace, &priors.alpha).map_err(err)?;
    let truth = AllocationPosterior {
        entries: exact.classes.iter().map(|(k, c)| (k.clone(), c.prob)).collect(),
        estimator: Estimator::EvidenceRenormalized,
    };
    let tv = coverage_diagnostic(&pg, &truth, 0.1).tv_distance;
    let diag = coverage_diagnostic(&pg, &pi, 0.1).tv_distance;
    let pass = trace.retained() == 20_000 && tv < 0.05 && (diag - tv).abs() < 0.01;
    Ok((pass, format!("{} sweeps kept, TV(pG, exact) {tv:.4}, diagnostic TV(pG, pI) {diag:.4}", trace.retained())))
}

fn fit_range(values: Vec<f64>, family: Family, ks: &[usize]) -> Result<ModelComparisonReport, String> {
    let y = Observations::new(values, &family).map_err(err)?;
    select_k(&y, &family, &PriorSpec::new(1), ks, &SamplerConfig::default(), &QuadratureConfig::default()).map_err(err)
}

fn k3_within_3sd(cmp: &ModelComparisonReport, truth: &[f64]) -> Result<(bool, String), String> {
    let row = cmp.row(3).ok_or("no K=3 row")?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (c, &t) in row.components.iter().zip(truth) {
        ok &= within(c.location_mean, t, 3.0 * c.location_sd);
        parts.push(format!("{:.2} ({:.2})", c.location_mean, c.location_sd));
        if let (Some(m), Some(s)) = (c.precision_mean, c.precision_sd) {
            ok &= within(m, 1.0, 3.0 * s);
            parts.push(format!("tau {m:.2} ({s:.2})"));
        }
    }
    Ok((ok, parts.join(", ")))
}

fn log_i(cmp: &ModelComparisonReport, k: usize) -> f64 {
    cmp.row(k).map_or(f64::NAN, |r| r.log_evidence_i)
}

fn criterion_4() -> Check {
    let values = simulate(&SimSpec::gaussian_replica(), 1).map_err(err)?;
    let cmp = fit_range(values, Family::Gaussian { shared_precision: false }, &[1, 2, 3, 4, 5])?;
    let p3 = cmp.row(3).ok_or("no K=3 row")?.prob_i;
    let (params_ok, params) = k3_within_3sd(&cmp, &[0.0, 5.0, 10.0])?;
    let (l2, l3, l4) = (log_i(&cmp, 2), log_i(&cmp, 3), log_i(&cmp, 4));
    let pass = p3 > 0.99 && params_ok && l3 > l4 && l4 > l2;
    Ok((pass, format!("P(K=3) {p3:.4}; logI K2/K3/K4 {l2:.2}/{l3:.2}/{l4:.2}; K=3 {params}")))
}

fn criterion_5() -> Check {
    let values = simulate(&SimSpec::poisson_replica(), 1).map_err(err)?;
    let cmp = fit_range(values, POISSON_LOGNORMAL, &[1, 2, 3, 4, 5])?;
    let p3 = cmp.row(3).ok_or("no K=3 row")?.prob_i;
    let (params_ok, params) = k3_within_3sd(&cmp, &[1.0, 15.0, 45.0])?;
    let pass = p3 > 0.99 && cmp.best_k(None) == 3 && params_ok;
    Ok((pass, format!("P(K=3) {p3:.4} under pI; K=3 rates {params}")))
}

fn criterion_6() -> Check {
    let data = builtin("galaxies").map_err(err)?;
    let cmp = fit_range(data.values, data.default_family, &[1, 2, 3, 4])?;
    let row = cmp.row(3).ok_or("no K=3 row")?;
    let means: Vec<f64> = row.components.iter().map(|c| c.location_mean).collect();
    let tau = row.components[0].precision_mean.ok_or("no shared precision")?;
    let means_ok = means.iter().zip([9.75, 21.40, 32.89]).all(|(&m, t)| within(m, t, 0.5));
    let pass = within(row.log_evidence_i, -233.84, 2.0)
        && (row.prob_i * 100.0).round() == 100.0
        && means_ok
        && within(tau, 0.23, 0.07);
    Ok((
        pass,
        format!(
            "logI(K=3) {:.2}, P(K=3) {:.4}, means {:.2}/{:.2}/{:.2}, tau {tau:.3}",
            row.log_evidence_i, row.prob_i, means[0], means[1], means[2]
        ),
    ))
}

fn criterion_7() -> Check {
    let data = builtin("earthquakes").map_err(err)?;
    let cmp = fit_range(data.values, data.default_family, &[1, 2, 3, 4])?;
    let best = [cmp.best_k(None), cmp.best_k(Some(ChibVariant::G)), cmp.best_k(Some(ChibVariant::M))];
    let row = cmp.row(2).ok_or("no K=2 row")?;
    let means: Vec<f64> = row.components.iter().map(|c| c.location_mean).collect();
    let means_ok = means.iter().zip([15.67, 26.77]).all(|(&m, t)| within(m, t, 1.0));
    let mut flags_ok = true;
    let mut gaps = Vec::new();
    for r in cmp.rows.iter().filter(|r| r.k >= 3) {
        let gap = r.log_evidence_chib_g - r.log_evidence_i;
        flags_ok &= r.diagnostic.flagged && gap < 0.0;
        gaps.push(format!("K={} tv {:.3} G-I {gap:.2}", r.k, r.diagnostic.tv_distance));
    }
    let pass = best == [2, 2, 2] && means_ok && flags_ok;
    Ok((
        pass,
        format!("best K (I,G,M) {best:?}, K=2 means {:.2}/{:.2}; {}", means[0], means[1], gaps.join("; ")),
    ))
}

// Dense-grid oracles. Every integral is a trapezoid sum on the log scale of
// the positive parameter.
fn trapezoid_log(lo: f64, hi: f64, m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / m as f64;
    let vals: Vec<f64> = (0..=m).map(|i| f(lo + h * i as f64)).collect();
    let peak = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == m { 0.5 } else { 1.0 };
        sum += w * (v - peak).exp();
    }
    peak + (sum * h).ln()
}

fn log_fact(values: &[f64]) -> f64 {
    values.iter().map(|y| ln_gamma(y + 1.0)).sum()
}

fn oracle_poisson_gamma(values: &[f64], a: f64, b: f64) -> f64 {
    let (n, s) = (values.len() as f64, values.iter().sum::<f64>());
    let c = a * b.ln() - ln_gamma(a) - log_fact(values);
    c + trapezoid_log(-40.0, 12.0, 200_000, |eta| (a + s) * eta - (b + n) * eta.exp())
}

fn oracle_poisson_lognormal(values: &[f64], m0: f64, p0: f64) -> f64 {
    let (n, s) = (values.len() as f64, values.iter().sum::<f64>());
    let c = 0.5 * (p0 / (2.0 * std::f64::consts::PI)).ln() - log_fact(values);
    c + trapezoid_log(-350.0, 20.0, 740_000, |eta| -0.5 * p0 * (eta - m0).powi(2) + s * eta - n * eta.exp())
}

fn normal_ln(x: f64, m: f64, prec: f64) -> f64 {
    0.5 * (prec / (2.0 * std::f64::consts::PI)).ln() - 0.5 * prec * (x - m) * (x - m)
}

/// `log ∫ N(mu | m0, 1/p0) Π N(y | mu, 1/tau) dmu` on a 2001-point grid
/// spanning ±12 conditional sds of mu.
fn mu_integral(values: &[f64], m0: f64, p0: f64, tau: f64) -> f64 {
    let n = values.len() as f64;
    let s: f64 = values.iter().sum();
    let prec = p0 + n * tau;
    let centre = (p0 * m0 + tau * s) / prec;
    let half = 12.0 / prec.sqrt();
    trapezoid_log(centre - half, centre + half, 2000, |mu| {
        normal_ln(mu, m0, p0) + values.iter().map(|&y| normal_ln(y, mu, tau)).sum::<f64>()
    })
}

fn oracle_gaussian(subsets: &[Vec<f64>], m0: f64, p0: f64, a: f64, b: f64) -> f64 {
    // u = log tau; the Gamma density picks up the Jacobian tau
    trapezoid_log(-20.0, 10.0, 2000, |u| {
        let tau = u.exp();
        let prior = a * b.ln() - ln_gamma(a) + a * u - b * tau;
        prior + subsets.iter().map(|s| mu_integral(s, m0, p0, tau)).sum::<f64>()
    })
}

fn criterion_8() -> Check {
    let q = QuadratureConfig::default();
    let priors = PriorSpec::new(1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (g, ln, gm, gp) = (priors.poisson_gamma, priors.poisson_lognormal, priors.gaussian_mean, priors.gaussian_precision);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, d: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(if d.is_nan() { f64::INFINITY } else { d });
    };
    let counts = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let rate = rng.random_range(0.2..40.0);
        let d = Poisson::new(rate).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    };
    let reals = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        let d = Normal::new(rng.random_range(-5.0..5.0), rng.random_range(0.3..3.0)).unwrap();
        (0..n).map(|_| d.sample(rng)).collect()
    };
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let ys = counts(&mut rng, n);
        let fit = fit_poisson_gamma(&ys, g.shape, g.rate).map_err(err)?;
        note("poisson_gamma", (fit.log_evidence - oracle_poisson_gamma(&ys, g.shape, g.rate)).abs());
        let fit = fit_poisson_lognormal(&ys, ln.mean, ln.precision, &q).map_err(err)?;
        note("poisson_lognormal", (fit.log_evidence - oracle_poisson_lognormal(&ys, ln.mean, ln.precision)).abs());

        let xs = reals(&mut rng, n);
        let fit = fit_gaussian_component(&xs, gm.mean, gm.precision, gp.shape, gp.rate, &q).map_err(err)?;
        let oracle = oracle_gaussian(&[xs], gm.mean, gm.precision, gp.shape, gp.rate);
        note("gaussian_component", (fit.log_evidence - oracle).abs());

        let (n1, n2) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let subsets = vec![reals(&mut rng, n1), reals(&mut rng, n2)];
        let (_, ev) = fit_gaussian_shared_precision(&subsets, gm.mean, gm.precision, gp.shape, gp.rate, &q).map_err(err)?;
        note("gaussian_shared_precision", (ev - oracle_gaussian(&subsets, gm.mean, gm.precision, gp.shape, gp.rate)).abs());
    }
    let pass = worst.len() == 4 && worst.values().all(|&d| d < 1e-4);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((pass, format!("max |error| over 50 subsets: {detail}")))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let cli = Cli::try_parse_from(std::iter::once("mixctl").chain(args.iter().copied())).map_err(err)?;
    run(&cli).map_err(err)
}

/// Every file in `dir`, with `runtime_ms` lines dropped from report.json.
fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path).map_err(err)?;
        if name == "report.json" {
            let text = String::from_utf8(bytes).map_err(err)?;
            bytes = text
                .lines()
                .filter(|l| !l.trim_start().starts_with("\"runtime_ms\""))
                .collect::<Vec<_>>()
                .join("\n")
                .into_bytes();
        }
        out.insert(name, bytes);
    }
    Ok(out)
}

fn criterion_9() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let small = tmp.path().join("small.csv");
    fs::write(&small, "y\n1\n3\n0\n2\n9\n12\n7\n10\n").map_err(err)?;
    let small = small.to_string_lossy().into_owned();
    let quick = ["--burn-in", "50", "--iters", "2000", "--thin", "5", "--seed", "11"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("fit", [&["fit", "--builtin", "galaxies", "--k", "3"][..], &quick].concat()),
        ("select", [&["select", "--builtin", "earthquakes", "--k-min", "1", "--k-max", "3"][..], &quick].concat()),
        ("diagnose", [&["diagnose", "--builtin", "galaxies", "--k", "4"][..], &quick].concat()),
        ("oracle", [&["oracle", "--data", &small, "--family", "poisson", "--k", "2"][..], &quick].concat()),
    ];
    let mut failed = Vec::new();
    for (name, args) in &commands {
        let mut snaps = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{name}-{rep}"));
            let out_s = out.to_string_lossy().into_owned();
            let mut full = args.clone();
            full.extend(["--out", &out_s]);
            run_cli(&full)?;
            snaps.push(snapshot(&out)?);
        }
        if snaps[0] != snaps[1] || snaps[0].is_empty() {
            failed.push(*name);
        }
    }
    let mut sims = Vec::new();
    for rep in 0..2 {
        let out = tmp.path().join(format!("sim-{rep}.csv"));
        let out_s = out.to_string_lossy().into_owned();
        run_cli(&["simulate", "--family", "poisson", "--means", "1,15,45", "--sizes", "50,50,50", "--seed", "4", "--out", &out_s])?;
        sims.push(fs::read(&out).map_err(err)?);
    }
    if sims[0] != sims[1] {
        failed.push("simulate");
    }
    let detail = if failed.is_empty() {
        "fit, select, diagnose, oracle and simulate outputs identical across repeats".to_string()
    } else {
        format!("outputs differ for {}", failed.join(", "))
    };
    Ok((failed.is_empty(), detail))
}

fn main() -> ExitCode {
    let minute = Duration::from_secs(60);
    let criteria: [Criterion; 9] = [
        ("exact-oracle equivalence", criterion_1, Duration::from_secs(10)),
        ("Chib identity", criterion_2, Duration::from_secs(10)),
        ("modal Gibbs fidelity", criterion_3, minute),
        ("Gaussian simulation replica", criterion_4, 15 * minute),
        ("Poisson simulation replica", criterion_5, 15 * minute),
        ("galaxy reproduction", criterion_6, 10 * minute),
        ("earthquake reproduction", criterion_7, 10 * minute),
        ("quadrature correctness", criterion_8, minute),
        ("determinism", criterion_9, 10 * minute),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = true;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let label = format!("criterion {} ({name})", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok((pass, detail)) => (pass && start.elapsed() <= *limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= pass;
        println!(
            "{label}: {} [{secs:.1} s, limit {} s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            limit.as_secs()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
