//! End-to-end acceptance report: one PASS/FAIL line per criterion.
//!
//! The process exits 0 after reporting so that the remaining test targets
//! still run; set `KSIB_ACCEPTANCE_STRICT=1` to exit nonzero when any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ksib::harness::{aggregate, run_scenario, CoverageTable, RunRecord, Scenario};
use ksib::index::{ipw_weight, IndexAccumulator};
use ksib::index_inference::{align_sign, infer_direction, WeightedRow};
use ksib::kernel_ridge::{GaussianKernel, KrrModel, ScalarKernel, SupportPoint};
use ksib::np_inference::build_covariance;
use ksib::numerics::{chi2_quantile, min_eigenvalue, normal_quantile, Rng};

const SEED: u64 = 2024;
const REPS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn threads() -> usize {
    std::env::var("KSIB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

struct Grid {
    table: CoverageTable,
    successes: BTreeMap<String, usize>,
}

fn simulate_grid() -> Grid {
    let mut table = CoverageTable::default();
    let mut successes = BTreeMap::new();
    for d in [2usize, 5] {
        for sigma in [0.05, 0.10, 0.20] {
            let sc = Scenario {
                reps: REPS,
                pointwise: d == 2 && sigma == 0.05,
                ..Scenario::new(d, sigma)
            };
            let recs: Vec<RunRecord> = run_scenario(&sc, SEED, threads(), false).expect("valid scenario");
            successes.insert(sc.id(), recs.iter().filter(|r| r.succeeded()).count());
            table.merge(aggregate(&sc.id(), d, sigma, &recs).expect("successful replications"));
        }
    }
    Grid { table, successes }
}

fn joint(g: &Grid, id: &str, t: usize) -> f64 {
    g.table.coverage_rate(id, "all", t, "ellipsoid_joint").map_or(f64::NAN, |c| c.rate)
}

fn enough_successes(g: &Grid, id: &str) -> bool {
    g.successes.get(id).copied().unwrap_or(0) >= 95
}

fn fmt(xs: &[(usize, f64)]) -> String {
    xs.iter().map(|(t, v)| format!("t{t}={v:.2}")).collect::<Vec<_>>().join(" ")
}

fn criterion_1(g: &Grid) -> Outcome {
    let id = "d2_sigma0.05";
    let rates: Vec<(usize, f64)> = [542, 657, 771, 885, 999].iter().map(|&t| (t, joint(g, id, t))).collect();
    let ok = rates.iter().all(|(_, r)| (0.80..=1.00).contains(r)) && enough_successes(g, id);
    outcome(ok, format!("joint coverage in [0.80, 1.00]: {} (successes {})", fmt(&rates), g.successes[id]))
}

fn criterion_2(g: &Grid) -> Outcome {
    let id = "d5_sigma0.2";
    let early: Vec<(usize, f64)> = [200, 314, 428].iter().map(|&t| (t, joint(g, id, t))).collect();
    let late = joint(g, id, 999);
    let ok = early.iter().all(|(_, r)| *r < 0.60) && (0.45..=0.90).contains(&late) && enough_successes(g, id);
    outcome(
        ok,
        format!("early < 0.60: {}; t999={late:.2} in [0.45, 0.90] (successes {})", fmt(&early), g.successes[id]),
    )
}

fn criterion_3(g: &Grid) -> Outcome {
    let id = "d2_sigma0.05";
    let times = [200, 314, 428, 542, 657, 771, 885, 999];
    let rate = |t: usize, m: &str| g.table.coverage_rate(id, "greedy", t, m).map_or(f64::NAN, |c| c.rate);
    let ks: Vec<(usize, f64)> = times.iter().map(|&t| (t, rate(t, "KSIEGE"))).collect();
    let band: Vec<(usize, f64)> = times.iter().map(|&t| (t, rate(t, "AS"))).collect();
    let ratio = g.table.mean_length(id, "greedy", 999, "ratio_AS_KSIEGE").map_or(f64::NAN, |c| c.mean_length);
    let ok = ks.iter().all(|(_, r)| (0.88..=1.00).contains(r))
        && band.iter().all(|(_, r)| *r >= 0.98)
        && (2.0..=6.0).contains(&ratio);
    outcome(
        ok,
        format!(
            "K-SIEGE in [0.88, 1.00]: {}; A&S >= 0.98: {}; length ratio t999={ratio:.3} in [2, 6]",
            fmt(&ks),
            fmt(&band)
        ),
    )
}

fn criterion_4(g: &Grid) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for id in g.successes.keys() {
        let early = g.table.regret_at(id, 200).map_or(f64::NAN, |c| c.mean_avg_regret);
        let late = g.table.regret_at(id, 999).map_or(f64::NAN, |c| c.mean_avg_regret);
        let r = late / early;
        ok &= r <= 0.7;
        parts.push(format!("{id}={r:.3}"));
    }
    outcome(ok, format!("R_999/999 over R_200/200 <= 0.7: {}", parts.join(" ")))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn criterion_5() -> Outcome {
    let (d, n) = (5, 5000);
    let mut rng = Rng::new(SEED).split(5);
    let beta = unit(rng.normal_vec(d));
    let mut acc = IndexAccumulator::new(0, d);
    for _ in 0..n {
        let x = rng.normal_vec(d);
        let z: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
        acc.observe(&x, z.tanh() + 0.05 * rng.normal(), 1.0, true, 1e-3).unwrap();
    }
    let est = acc.estimate_beta(2e-3).unwrap();
    let cos: f64 = est.direction.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().abs();
    outcome(cos >= 0.98, format!("|cos(b, beta)| = {cos:.5} >= 0.98"))
}

fn criterion_6() -> Outcome {
    let beta = [0.6, -0.8];
    let (p, t, reps) = (0.3, 50, 10_000);
    let mut rng = Rng::new(SEED).split(6);
    let (mut s1, mut s2) = ([0.0; 2], [0.0; 2]);
    for _ in 0..reps {
        let mut acc = IndexAccumulator::new(0, 2);
        for _ in 0..t {
            let x = rng.normal_vec(2);
            let y = x[0] * beta[0] + x[1] * beta[1] + 0.1 * rng.normal();
            acc.observe(&x, y, p, rng.uniform() < p, 1e-3).unwrap();
        }
        for k in 0..2 {
            let m = acc.sum_moment()[k] / t as f64;
            s1[k] += m;
            s2[k] += m * m;
        }
    }
    let n = reps as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for k in 0..2 {
        let mean = s1[k] / n;
        let se = ((s2[k] / n - mean * mean) / n).sqrt();
        let z = (mean - beta[k]).abs() / se;
        ok &= z <= 3.0;
        parts.push(format!("coord{k}: |bias|/se = {z:.2}"));
    }
    outcome(ok, format!("{} (<= 3)", parts.join(", ")))
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[derive(Debug, Clone, Copy)]
struct Linear;

impl ScalarKernel for Linear {
    fn eval(&self, u: f64, v: f64) -> f64 {
        u * v
    }
}

fn criterion_7() -> Outcome {
    let mut rng = Rng::new(SEED).split(7);
    let mut worst_a = 0.0_f64;
    for _ in 0..100 {
        let n = 1 + rng.below(20);
        let h = 0.3 + rng.uniform();
        let lambda = 10f64.powf(-3.0 + 2.0 * rng.uniform());
        let pts: Vec<SupportPoint> = (0..n).map(|_| SupportPoint { u: 2.0 * rng.normal(), y: rng.normal(), w: 1.0 }).collect();
        let k = |a: f64, b: f64| (-(a - b) * (a - b) / (2.0 * h * h)).exp();
        let mut gram: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| k(a.u, b.u)).collect()).collect();
        for (i, row) in gram.iter_mut().enumerate() {
            row[i] += n as f64 * lambda;
        }
        let c = gauss_solve(gram, pts.iter().map(|p| p.y).collect());
        let model = KrrModel::fit(&pts, lambda, GaussianKernel::new(h).unwrap()).unwrap();
        for probe in [-1.0, 0.0, 0.5, pts[0].u] {
            let reference: f64 = pts.iter().zip(&c).map(|(p, ci)| ci * k(p.u, probe)).sum();
            worst_a = worst_a.max((model.predict(probe) - reference).abs());
        }
    }
    let mut worst_b = 0.0_f64;
    for _ in 0..100 {
        let n = 1 + rng.below(6);
        let lambda = 10f64.powf(-2.0 + 2.0 * rng.uniform());
        let pts: Vec<SupportPoint> = (0..n)
            .map(|_| SupportPoint { u: rng.normal(), y: rng.normal(), w: 0.2 + 5.0 * rng.uniform() })
            .collect();
        let num: f64 = pts.iter().map(|p| p.w * p.u * p.y).sum();
        let den: f64 = pts.iter().map(|p| p.w * p.u * p.u).sum::<f64>() + n as f64 * lambda;
        let model = KrrModel::fit(&pts, lambda, Linear).unwrap();
        for probe in [-2.0, 0.3, 1.0] {
            worst_b = worst_b.max((model.predict(probe) - num / den * probe).abs());
        }
    }
    outcome(
        worst_a <= 1e-10 && worst_b <= 1e-8,
        format!("(a) unit weights vs classical max |diff| = {worst_a:.2e} <= 1e-10; (b) linear kernel vs primal = {worst_b:.2e} <= 1e-8"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = Rng::new(SEED).split(8);
    let (mut null_ok, mut psd_ok, mut d2_ok, mut alpha_ok) = (0, 0, 0, 0);
    let (mut worst_null, mut worst_eig, mut worst_d2) = (0.0_f64, 0.0_f64, 0.0_f64);
    let trials = 1000;
    for _ in 0..trials {
        let d = 2 + rng.below(5);
        let n = 15 + rng.below(60);
        let beta = rng.normal_vec(d);
        let mut acc = IndexAccumulator::new(0, d);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let w = rng.normal_vec(d);
            let z: f64 = w.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let y = z.tanh() + 0.3 * rng.normal();
            let p = 0.05 + 0.95 * rng.uniform();
            acc.observe(&w, y, p, true, 1e-3).unwrap();
            rows.push(WeightedRow { w, y, weight: ipw_weight(p, 1e-3) });
        }
        let est = acc.estimate_beta(2e-3).unwrap();
        let a = infer_direction(&rows, &est.beta_hat, &est.gram, n, 0.25, 0.05).unwrap();
        let b = infer_direction(&rows, &est.beta_hat, &est.gram, n, 0.5, 0.05).unwrap();
        let q = b.v_dir.quad_form(&b.direction).abs() / b.v_dir.trace().max(f64::MIN_POSITIVE);
        worst_null = worst_null.max(q);
        null_ok += usize::from(q <= 1e-12);
        let eig = min_eigenvalue(&b.v_beta_hat);
        worst_eig = worst_eig.min(eig);
        psd_ok += usize::from(eig >= -1e-10);
        let truth = align_sign(&unit(beta.clone()), &b.direction);
        alpha_ok += usize::from(a.contains(&truth) == b.contains(&truth));

        let m = 2 + rng.below(30);
        let pts: Vec<SupportPoint> = (0..m)
            .map(|_| SupportPoint { u: 2.0 * rng.normal(), y: rng.normal(), w: 1.0 + 9.0 * rng.uniform() })
            .collect();
        let lambda = 10f64.powf(-3.0 + 2.0 * rng.uniform());
        let kernel = GaussianKernel::new(0.2 + 2.0 * rng.uniform()).unwrap();
        let (model, gram) = KrrModel::fit_keep_gram(&pts, lambda, kernel, m).unwrap();
        let cov = build_covariance(&model, Some(&gram), 0.5, lambda, 0).unwrap();
        let v = cov.d2(4.0 * rng.uniform() - 2.0);
        worst_d2 = worst_d2.min(v);
        d2_ok += usize::from(v >= -1e-12);
    }
    let ok = null_ok == trials && psd_ok == trials && d2_ok == trials && alpha_ok == trials;
    outcome(
        ok,
        format!(
            "{trials} instances: null-space {null_ok} (worst {worst_null:.1e}), lambda_min {psd_ok} (worst {worst_eig:.1e}), D2 {d2_ok} (worst {worst_d2:.1e}), alpha-invariant {alpha_ok}"
        ),
    )
}

fn criterion_9() -> Outcome {
    let z = normal_quantile(0.975).unwrap();
    let c1 = chi2_quantile(0.95, 1).unwrap();
    let c4 = chi2_quantile(0.95, 4).unwrap();
    let ok = (z - 1.959964).abs() <= 1e-6 && (c1 - 3.841459).abs() <= 1e-4 && (c4 - 9.487729).abs() <= 1e-4;
    outcome(ok, format!("z_0.975={z:.7}, chi2_1={c1:.6}, chi2_4={c4:.6}"))
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn digests(dir: &Path) -> Vec<(String, u64)> {
    let mut v: Vec<(String, u64)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fnv(&fs::read(e.path()).unwrap()))
        })
        .collect();
    v.sort();
    v
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_ksib"))
            .args(["simulate", "--d", "2", "--sigma", "0.05", "--reps", "5", "--seed", "7", "--keep-logs", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let (da, db) = (digests(&a), digests(&b));
    let same = da == db;

    let directional = fs::read_to_string(a.join("directional_d2_sigma0.05.csv")).unwrap();
    let mut worst = 0.0_f64;
    let mut compared = 0;
    for rep in 0..5 {
        let log = a.join(format!("audit_d2_sigma0.05_rep{rep}.csv"));
        for arm in 0..2 {
            let o = Command::new(env!("CARGO_BIN_EXE_ksib"))
                .args(["infer", "--arm", &arm.to_string(), "--t", "999", "--log"])
                .arg(&log)
                .output()
                .unwrap();
            if !o.status.success() {
                return outcome(false, format!("infer failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
            for line in directional.lines().skip(1) {
                let f: Vec<&str> = line.split(',').collect();
                if f[0] == rep.to_string() && f[1] == arm.to_string() && f[2] == "999" {
                    let m = &report["marginals"][f[3].parse::<usize>().unwrap()];
                    for (k, key) in [(4, "center"), (5, "lo"), (6, "hi")] {
                        let online: f64 = f[k].parse().unwrap();
                        worst = worst.max((m[key].as_f64().unwrap() - online).abs());
                        compared += 1;
                    }
                }
            }
        }
    }
    outcome(
        same && compared == 5 * 2 * 2 * 3 && worst <= 1e-9,
        format!("{} files identical across reruns: {same}; offline marginals vs online ({compared} values) max |diff| = {worst:.1e}", da.len()),
    )
}

fn timed(k: usize, f: &dyn Fn() -> Outcome, results: &mut Vec<(usize, Outcome, f64)>) {
    let start = Instant::now();
    let o = f();
    results.push((k, o, start.elapsed().as_secs_f64()));
}

fn main() {
    let strict = std::env::var("KSIB_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut results: Vec<(usize, Outcome, f64)> = Vec::new();
    let start = Instant::now();
    let grid = simulate_grid();
    let grid_secs = start.elapsed().as_secs_f64();
    println!("simulation grid: 6 scenarios x {REPS} replications in {grid_secs:.1}s with {} thread(s)", threads());
    timed(1, &|| criterion_1(&grid), &mut results);
    timed(2, &|| criterion_2(&grid), &mut results);
    timed(3, &|| criterion_3(&grid), &mut results);
    timed(4, &|| criterion_4(&grid), &mut results);
    timed(5, &criterion_5, &mut results);
    timed(6, &criterion_6, &mut results);
    timed(7, &criterion_7, &mut results);
    timed(8, &criterion_8, &mut results);
    timed(9, &criterion_9, &mut results);
    timed(10, &criterion_10, &mut results);
    for (k, o, secs) in &results {
        println!("criterion {k:>2}: {} ({secs:.2}s) {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failing: Vec<String> = results.iter().filter(|(_, o, _)| !o.pass).map(|(k, _, _)| k.to_string()).collect();
    if failing.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: {}/10 criteria pass; failing: {}", 10 - failing.len(), failing.join(", "));
        if strict {
            std::process::exit(1);
        }
    }
}

