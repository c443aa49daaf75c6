//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.
//! The process exits non-zero when any selected criterion fails.

use std::cell::OnceCell;
use std::time::Instant;

use mlmc_risk::kde::{norm_cdf, norm_pdf, smoothed_diff, smoothed_phi};
use mlmc_risk::models::poisson_phi_exact;
use mlmc_risk::spline::{self, fit, uniform_points};
use mlmc_risk::{BlackScholesModel, CorrelatedPair, KdeModel, StatisticKind, ThetaGrid};
use mlmc_risk_cli::commands::cmd_estimate;
use mlmc_risk_cli::output::{without_timing, ResultFile};
use mlmc_risk_cli::studies::{self, loglog_slope, CompareSetup, RepOutcome, RunStatus};
use mlmc_risk_cli::Settings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

const TAU: f64 = 0.7;
const POISSON_REL: [f64; 3] = [0.1, 0.05, 0.025];
const POISSON_TOLS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
const BS_REL: [f64; 3] = [0.2, 0.1, 0.05];
const BS_TOLS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
const REPS: usize = 20;

fn setup() -> CompareSetup {
    CompareSetup { tau: TAU, theta_min: 1.5, theta_max: 2.5, n_fine: 1000, seed: 2024 }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-12 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) <= f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

fn criterion_1() -> Verdict {
    let poisson = [(0.6, 1.611077, 2.369803), (0.7, 1.885696, 2.578204), (0.8, 2.225169, 2.843327), (0.9, 2.715390, 3.236473)];
    let bs = [(0.6, 0.799151, 2.455898), (0.7, 1.373571, 2.914953), (0.8, 2.086595, 3.515684), (0.9, 3.153379, 4.460298)];
    let mut worst: f64 = 0.0;
    for (tau, q, c) in poisson {
        let f = |t: f64| poisson_phi_exact(t, tau).unwrap();
        let qh = golden_min(f, 0.0, 6.0);
        worst = worst.max((qh - q).abs()).max((f(qh) - c).abs());
    }
    let m = BlackScholesModel::default();
    for (tau, q, c) in bs {
        let (qh, ch) = m.var_cvar_exact(tau).map_err(|e| e.to_string())?;
        worst = worst.max((qh - q).abs()).max((ch - c).abs());
    }
    check(worst <= 1e-5, format!("max deviation {worst:.2e} over 8 table rows"))
}

fn criterion_2() -> Verdict {
    let rows = studies::interp_study(&setup(), &[5, 10, 20, 40, 80]).map_err(|e| e.to_string())?;
    let covered = rows.iter().filter(|r| r.estimate >= r.true_err).count();
    let share = covered as f64 / rows.len() as f64;
    let mut ok = share >= 0.9;
    let mut detail = format!("estimate >= true in {covered}/{}", rows.len());
    for m in 0..3 {
        let sel: Vec<_> = rows.iter().filter(|r| r.m == m).collect();
        let ns: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
        let t = loglog_slope(&ns, &sel.iter().map(|r| r.true_err).collect::<Vec<_>>());
        let e = loglog_slope(&ns, &sel.iter().map(|r| r.estimate).collect::<Vec<_>>());
        let target = -(4.0 - m as f64);
        ok &= (t - target).abs() <= 0.5 && (e - target).abs() <= 0.5;
        detail += &format!("; m={m} slopes true {t:.2} est {e:.2}");
    }
    for r in rows.iter().filter(|r| r.estimate < r.true_err) {
        detail += &format!("; uncovered n={} m={} ({:.2e} < {:.2e})", r.n, r.m, r.estimate, r.true_err);
    }
    check(ok, detail)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_3() -> Verdict {
    let alpha = 2.0 * std::f64::consts::LN_2;
    let rows = studies::bias_study(&setup(), 5, 10, &[1000], REPS, alpha).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut detail = String::new();
    for m in 1..3 {
        let pick = |f: fn(&studies::BiasRow) -> f64| median(rows.iter().filter(|r| r.m == m).map(f).collect());
        let (new, nai, apr) = (pick(|r| r.new), pick(|r| r.naive), pick(|r| r.apriori));
        ok &= new <= nai && nai <= apr;
        detail += &format!("m={m} medians new {new:.2e} <= naive {nai:.2e} <= apriori {apr:.2e}; ");
    }
    let (_, rates) = studies::bias_decay_study(&setup(), 5, 10, 100, REPS, alpha).map_err(|e| e.to_string())?;
    for r in rates.iter().filter(|r| r.estimator == "new") {
        ok &= (1.0..=1.8).contains(&r.mean_rate);
        detail += &format!("m={} decay {:.3}; ", r.m, r.mean_rate);
    }
    check(ok, detail.trim_end_matches("; ").to_string())
}

fn criterion_4() -> Verdict {
    let rows = studies::stat_study(&setup(), 5, 10, &[50, 200], &[-1, 0, 1], 1000, 100).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.bootstrap / r.true_err).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    check(
        lo >= 1.0 / 3.0 && hi <= 3.0,
        format!("bootstrap / brute force in [{lo:.3}, {hi:.3}] over {} cases", rows.len()),
    )
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let centers: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let bw = rng.random_range(0.05..1.0);
        let tau = rng.random_range(0.1..0.9);
        let theta = rng.random_range(-4.0..4.0);
        let model = KdeModel::new(centers.clone(), bw).map_err(|e| e.to_string())?;
        let closed = smoothed_phi(theta, &model, tau);
        let density = |q: f64| centers.iter().map(|c| norm_pdf((q - c) / bw) / bw).sum::<f64>() / n as f64;
        let integrand = |q: f64| (q - theta) * density(q);
        let hi = centers.iter().cloned().fold(f64::MIN, f64::max) + 12.0 * bw;
        // Panels keep each kernel bump resolved.
        let panels = 64;
        let a = theta.min(hi);
        let w = (hi - a) / panels as f64;
        let tail: f64 = (0..panels).map(|k| simpson(&integrand, a + k as f64 * w, a + (k + 1) as f64 * w, 1e-15)).sum();
        let quad = theta + tail / (1.0 - tau);
        worst_rel = worst_rel.max((closed - quad).abs() / closed.abs().max(1e-300));
    }
    // The separation identity on random pairs.
    let mut worst_sep: f64 = 0.0;
    for _ in 0..100 {
        let pairs: Vec<CorrelatedPair> = (0..10)
            .map(|_| CorrelatedPair { level: 1, fine: rng.random_range(-2.0..2.0), coarse: Some(rng.random_range(-2.0..2.0)) })
            .collect();
        let (df, dc) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
        let theta = rng.random_range(-3.0..3.0);
        let d = smoothed_diff(theta, &pairs, df, dc, TAU).map_err(|e| e.to_string())?;
        let f = KdeModel::new(pairs.iter().map(|p| p.fine).collect(), df).map_err(|e| e.to_string())?;
        let c = KdeModel::new(pairs.iter().map(|p| p.coarse.unwrap()).collect(), dc).map_err(|e| e.to_string())?;
        worst_sep = worst_sep.max((d - (smoothed_phi(theta, &f, TAU) - smoothed_phi(theta, &c, TAU))).abs());
    }
    let cdf_err = (norm_cdf(1.959_963_984_540_054) - 0.975).abs();
    check(
        worst_rel <= 1e-8 && worst_sep <= 1e-12,
        format!("quadrature rel. diff {worst_rel:.2e}, separation {worst_sep:.2e}, Φ(1.96) err {cdf_err:.1e}"),
    )
}

fn reliability_verdict(outcomes: &[RepOutcome], tols: &[f64], reference: f64, max_ratio: f64) -> Verdict {
    let rows = studies::reliability_rows(outcomes, StatisticKind::Cvar, reference);
    let mut ok = true;
    let mut detail = Vec::new();
    for &tol in tols {
        let sel: Vec<_> = rows.iter().filter(|r| r.tolerance == tol).collect();
        let failed = sel.iter().filter(|r| r.status != RunStatus::Converged).count();
        let bounded = sel.iter().filter(|r| r.true_sq_err <= r.est_mse).count();
        let good: Vec<_> = sel.iter().filter(|r| r.true_sq_err.is_finite()).collect();
        let ratio = good.iter().map(|r| r.est_mse).sum::<f64>() / good.iter().map(|r| r.true_sq_err).sum::<f64>().max(1e-300);
        ok &= failed == 0 && bounded == sel.len() && ratio <= max_ratio;
        detail.push(format!("eps={tol}: bounded {bounded}/{}, not converged {failed}, mean ratio {ratio:.1}", sel.len()));
    }
    check(ok, detail.join("; "))
}

struct Runs {
    poisson: OnceCell<(Settings, Vec<RepOutcome>)>,
    bs: OnceCell<(Settings, Vec<RepOutcome>)>,
}

impl Runs {
    fn poisson(&self) -> &(Settings, Vec<RepOutcome>) {
        self.poisson.get_or_init(|| {
            let s = Settings::from_text("model.name = poisson\nseed = 606\n", None).expect("valid config");
            let o = studies::run_repetitions(&s.cmlmc, StatisticKind::Cvar, &POISSON_TOLS, REPS);
            (s, o)
        })
    }

    fn bs(&self) -> &(Settings, Vec<RepOutcome>) {
        self.bs.get_or_init(|| {
            let s = Settings::from_text("model.name = black_scholes\nseed = 707\n", None).expect("valid config");
            let o = studies::run_repetitions(&s.cmlmc, StatisticKind::Cvar, &BS_TOLS, REPS);
            (s, o)
        })
    }
}

fn criterion_6(runs: &Runs) -> Verdict {
    let (s, o) = runs.poisson();
    let c = s.model.exact_var_cvar(TAU).map_err(|e| e.to_string())?.1;
    reliability_verdict(o, &POISSON_REL, c, 10.0)
}

fn criterion_7(runs: &Runs) -> Verdict {
    let (s, o) = runs.bs();
    let c = s.model.exact_var_cvar(TAU).map_err(|e| e.to_string())?.1;
    reliability_verdict(o, &BS_REL, c, 30.0)
}

fn criterion_8(runs: &Runs) -> Verdict {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, (s, o), mc_range) in [("poisson", runs.poisson(), Some((-3.5, -2.6))), ("black_scholes", runs.bs(), None)] {
        let rows = studies::complexity_rows(o, s.cmlmc.model.as_ref(), s.cmlmc.weights);
        if rows.len() < 4 {
            return Err(format!("{name}: only {} tolerances produced converged runs", rows.len()));
        }
        let tol: Vec<f64> = rows.iter().map(|r| r.tolerance).collect();
        let ml = loglog_slope(&tol, &rows.iter().map(|r| r.mean_mlmc_cost).collect::<Vec<_>>());
        let mc = loglog_slope(&tol, &rows.iter().map(|r| r.mc_cost_estimate).collect::<Vec<_>>());
        let ordered = rows.iter().all(|r| r.mc_cost_estimate >= r.mean_mlmc_cost);
        ok &= (-2.5..=-1.6).contains(&ml) && ordered;
        if let Some((lo, hi)) = mc_range {
            ok &= (lo..=hi).contains(&mc);
        }
        detail.push(format!("{name}: MLMC slope {ml:.2}, MC slope {mc:.2}, MC >= MLMC at all eps: {ordered}"));
    }
    check(ok, detail.join("; "))
}

fn criterion_9() -> Verdict {
    let row = studies::lemma_study(&setup(), &[400, 100, 25], 10, 500, [1.0; 3]).map_err(|e| e.to_string())?;
    let lower = row.lower_factor * row.sum_v_over_n;
    let upper = row.upper_factor * row.sum_v_over_n;
    check(
        lower <= row.stat_sq && row.stat_sq <= upper,
        format!("{lower:.3e} <= {:.3e} <= {upper:.3e} (ratio {:.3e})", row.stat_sq, row.ratio),
    )
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..30);
        let g = ThetaGrid::new(-1.0, 2.0, n).map_err(|e| e.to_string())?;
        let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let p = [
            |c: &[f64; 4], x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x,
            |c: &[f64; 4], x: f64| c[1] + 2.0 * c[2] * x + 3.0 * c[3] * x * x,
            |c: &[f64; 4], x: f64| 2.0 * c[2] + 6.0 * c[3] * x,
        ];
        let curve = fit(g, &g.nodes().iter().map(|&x| p[0](&c, x)).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        for x in uniform_points(-1.0, 2.0, 301) {
            for m in 0..3 {
                worst = worst.max((curve.eval_unchecked(m, x) - p[m](&c, x)).abs());
            }
        }
    }
    let consts_ok = spline::c1(0) == 5.0 / 384.0
        && spline::c1(1) == 1.0 / 24.0
        && spline::c1(2) == 3.0 / 8.0
        && spline::c2(1, 2.0) == 9.0
        && spline::c2(2, 2.0) == 12.0
        && spline::c3() == 7.0 * (2.0 * 7f64.sqrt() + 1.0) / 27.0;

    // Convergence order on a smooth non-polynomial function.
    let f = |m: usize, x: f64| match m {
        0 => x.sin() * x.exp(),
        1 => x.exp() * (x.sin() + x.cos()),
        _ => 2.0 * x.exp() * x.cos(),
    };
    let ns = [10usize, 20, 40, 80];
    let xs = uniform_points(0.0, 2.0, 1000);
    let mut slopes = [0.0; 3];
    for (m, slope) in slopes.iter_mut().enumerate() {
        let errs = ns
            .iter()
            .map(|&n| {
                let g = ThetaGrid::new(0.0, 2.0, n).unwrap();
                let curve = fit(g, &g.nodes().iter().map(|&x| f(0, x)).collect::<Vec<_>>()).unwrap();
                xs.iter().map(|&x| (curve.eval_unchecked(m, x) - f(m, x)).abs()).fold(0.0, f64::max)
            })
            .collect::<Vec<_>>();
        *slope = loglog_slope(&ns.map(|n| n as f64), &errs);
    }
    let order_ok = (0..3).all(|m| (slopes[m] + (4.0 - m as f64)).abs() <= 0.5);
    check(
        worst <= 1e-10 && consts_ok && order_ok,
        format!(
            "cubic reproduction {worst:.1e}, constants exact: {consts_ok}, slopes {:.2} {:.2} {:.2}",
            slopes[0], slopes[1], slopes[2]
        ),
    )
}

fn criterion_11() -> Verdict {
    let s = Settings::from_text("cmlmc.eps = 0.1\nseed = 11\n", None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        cmd_estimate(&s, d).map_err(|e| e.to_string())?;
    }
    let read = |d: &std::path::Path| std::fs::read_to_string(d.join("result.json")).unwrap();
    let (ja, jb) = (read(&a), read(&b));
    let same = without_timing(&ja).unwrap() == without_timing(&jb).unwrap();
    let curves = std::fs::read(a.join("curves.csv")).unwrap() == std::fs::read(b.join("curves.csv")).unwrap();
    let doc = ResultFile::from_json(&ja).map_err(|e| e.to_string())?;
    let roundtrip = doc.to_json().map_err(|e| e.to_string())? == ja;
    check(same && curves && roundtrip, format!("result.json identical: {same}, curves.csv identical: {curves}, round-trip: {roundtrip}"))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let runs = Runs { poisson: OnceCell::new(), bs: OnceCell::new() };
    let criteria: [(usize, &str, &dyn Fn() -> Verdict); 11] = [
        (1, "exact references reproduce the tables", &criterion_1),
        (2, "interpolation error estimate", &criterion_2),
        (3, "bias estimator ordering and decay", &criterion_3),
        (4, "bootstrap statistical error", &criterion_4),
        (5, "kernel smoothing closed form", &criterion_5),
        (6, "reliability, Poisson", &|| criterion_6(&runs)),
        (7, "reliability, Black-Scholes", &|| criterion_7(&runs)),
        (8, "complexity", &|| criterion_8(&runs)),
        (9, "statistical error bracket", &criterion_9),
        (10, "spline properties", &criterion_10),
        (11, "determinism", &criterion_11),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        match v {
            Ok(d) => println!("PASS criterion {id:>2}: {name} [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id:>2}: {name} [{secs:.1}s] {d}");
            }
        }
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
