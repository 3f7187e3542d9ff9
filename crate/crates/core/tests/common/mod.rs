//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use bevmt::dataset::{DesignMatrix, HierarchicalWave};
use bevmt::ensemble::{fit_gbdt, split_train_test, GbdtParams, MaxFeatures};
use bevmt::interpret::{
    compute_pdp, consolidate_knots, detect_knots, ConsolidateSettings, GridSpec, KnotCandidate, KnotSet, PdpCurve,
};
use bevmt::mlm::{fit_lmm, stepwise_build, FitStats, LmmSpec, Method, StepwiseConfig, WaldRow};
use bevmt::pipeline::features::feature_matrix;
use bevmt::synth::{generate, GroundTruth, SynthConfig};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

pub const WAVES: [&str; 3] = ["1997", "2006", "2017"];

pub const FEATURES: [&str; 6] = ["Age", "Gender", "HH_Income", "Dist_transit", "Dist_CBD", "PopDEN"];
pub const NUMERIC: [&str; 5] = ["Age", "HH_Income", "Dist_transit", "Dist_CBD", "PopDEN"];

pub fn bundled_synth() -> SynthConfig {
    toml::from_str(include_str!("../../configs/synth_wave.toml")).expect("bundled synth config parses")
}

/// A copy of the bundled process with a different layout size and seed.
pub fn synth_with(persons: usize, households: usize, zones: usize, seed: u64) -> SynthConfig {
    let mut cfg = bundled_synth();
    cfg.layout = bevmt::synth::Layout::Totals {
        zones,
        households,
        persons,
    };
    cfg.seed = seed;
    cfg
}

pub fn gen(cfg: &SynthConfig) -> (HierarchicalWave, GroundTruth) {
    generate(cfg).expect("synthetic wave")
}

pub fn fixed_gbdt(seed: u64) -> GbdtParams {
    GbdtParams {
        n_estimators: 300,
        learning_rate: 0.05,
        max_depth: 4,
        max_features: MaxFeatures::All,
        subsample: 0.8,
        min_samples_leaf: 20,
        seed,
    }
}

pub fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Largest gap between adjacent grid points of any curve of `variable`.
pub fn grid_step(curves: &[PdpCurve], variable: &str) -> f64 {
    curves
        .iter()
        .filter(|c| c.feature == variable)
        .flat_map(|c| c.grid.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// True when `found` pairs one-to-one, in order, with `truth` within `tol`.
pub fn knots_match(found: &[f64], truth: &[f64], tol: f64) -> bool {
    found.len() == truth.len() && found.iter().zip(truth).all(|(a, b)| (a - b).abs() <= tol + 1e-9)
}

#[derive(Debug, Clone)]
pub struct WaveFit {
    pub wave: String,
    pub aic: [f64; 4],
    pub stats: Vec<FitStats>,
    pub model4: Vec<WaldRow>,
    pub model4_true_knots: Vec<WaldRow>,
    pub stats_true_knots: Vec<FitStats>,
    pub aic_true_knots: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub index: usize,
    pub knots: KnotSet,
    pub grid_step: BTreeMap<String, f64>,
    pub truth: GroundTruth,
    pub waves: Vec<WaveFit>,
}

fn aics(stats: &[FitStats]) -> [f64; 4] {
    [stats[0].aic, stats[1].aic, stats[2].aic, stats[3].aic]
}

/// One replicate of the full method on three freshly drawn waves: boosted
/// trees on a training split, partial dependence on the whole wave, knot
/// detection and consolidation, then the stepwise models, once with the
/// consolidated knots and once with the true knots.
pub fn run_replicate(index: usize, base: &SynthConfig) -> Replicate {
    let features = strings(&FEATURES);
    let mut waves = Vec::new();
    let mut curves = Vec::new();
    let mut candidates: BTreeMap<String, BTreeMap<String, Vec<KnotCandidate>>> = BTreeMap::new();
    let mut truth = None;
    for (w, label) in WAVES.iter().enumerate() {
        let seed = 10_000 + 3 * index as u64 + w as u64;
        let mut cfg = base.clone();
        cfg.label = label.to_string();
        cfg.seed = seed;
        let (wave, t) = gen(&cfg);
        truth = Some(t);
        let (x, names, y) = feature_matrix(&wave, &features).unwrap();
        let split = split_train_test(y.len(), 0.2, seed).unwrap();
        let xt = x.select_rows(&split.train);
        let yt: Vec<f64> = split.train.iter().map(|&i| y[i]).collect();
        let model = fit_gbdt(&xt, &yt, &fixed_gbdt(seed), &names).unwrap();
        for var in NUMERIC {
            let j = names.iter().position(|n| n == var).unwrap();
            let curve = compute_pdp(&model, &x, j, &GridSpec::default(), label).unwrap();
            let found = detect_knots(&curve, 2).unwrap();
            candidates.entry(var.to_string()).or_default().insert(label.to_string(), found);
            curves.push(curve);
        }
        waves.push(wave);
    }
    let truth = truth.unwrap();

    let mut knots = KnotSet::default();
    let mut step = BTreeMap::new();
    for (var, per_wave) in &candidates {
        let own: Vec<&PdpCurve> = curves.iter().filter(|c| &c.feature == var).collect();
        let lo = own.iter().map(|c| c.grid[0]).fold(f64::INFINITY, f64::min);
        let hi = own.iter().map(|c| *c.grid.last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let merged = consolidate_knots(per_wave, (lo, hi), &ConsolidateSettings::default());
        let values: Vec<f64> = merged.iter().map(|k| k.value).collect();
        if !values.is_empty() {
            knots.insert(var, values).unwrap();
        }
        step.insert(var.clone(), grid_step(&curves, var));
    }
    let mut true_knots = KnotSet::default();
    for (var, ks) in &truth.knots {
        true_knots.insert(var, ks.clone()).unwrap();
    }

    let cfg = StepwiseConfig::default();
    let fits = waves
        .iter()
        .map(|wave| {
            let found = stepwise_build(wave, &knots, &cfg).unwrap();
            let exact = stepwise_build(wave, &true_knots, &cfg).unwrap();
            let stats: Vec<FitStats> = found.models.iter().map(|m| m.stats).collect();
            let stats_true: Vec<FitStats> = exact.models.iter().map(|m| m.stats).collect();
            WaveFit {
                wave: wave.label.clone(),
                aic: aics(&stats),
                aic_true_knots: aics(&stats_true),
                model4: bevmt::mlm::wald(&found.models[3].fit),
                model4_true_knots: bevmt::mlm::wald(&exact.models[3].fit),
                stats,
                stats_true_knots: stats_true,
            }
        })
        .collect();
    Replicate {
        index,
        knots,
        grid_step: step,
        truth,
        waves: fits,
    }
}

pub fn run_replicates(n: usize) -> Vec<Replicate> {
    let base = bundled_synth();
    (0..n).into_par_iter().map(|i| run_replicate(i, &base)).collect()
}

/// Design columns of `variable` in a Wald table: the raw column or its
/// bracketed segment columns, in order.
pub fn columns_of<'a>(rows: &'a [WaldRow], variable: &str) -> Vec<&'a WaldRow> {
    let prefix = format!("{variable} [");
    rows.iter()
        .filter(|r| r.term == variable || r.term.starts_with(&prefix))
        .collect()
}

pub fn covers(row: &WaldRow, value: f64) -> bool {
    (row.beta - value).abs() <= Z95 * row.se
}

/// Coverage of each true slope by the 95% Wald intervals of one Model 4
/// fit. A variable that was dropped covers nothing. A piecewise truth is
/// covered only when the fitted knots pair with the true knots within
/// `step`; a linear truth needs every fitted segment to cover its slope.
pub fn slope_coverage(
    rows: &[WaldRow],
    truth: &GroundTruth,
    fitted_knots: &KnotSet,
    step: &BTreeMap<String, f64>,
) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for var in ["Age", "HH_Income"] {
        let slope = truth.beta[var];
        let cols = columns_of(rows, var);
        out.insert(var.to_string(), !cols.is_empty() && cols.iter().all(|r| covers(r, slope)));
    }
    let key = "Gender [Male]";
    out.insert(
        key.to_string(),
        rows.iter().find(|r| r.term == key).is_some_and(|r| covers(r, truth.beta[key])),
    );
    for (var, ks) in &truth.knots {
        let cols = columns_of(rows, var);
        let aligned = knots_match(fitted_knots.get(var), ks, step.get(var).copied().unwrap_or(0.0));
        // beta keys sort lexically, so walk the segments in order instead
        let labels = bevmt::dataset::segment_labels(ks);
        for (s, label) in labels.iter().enumerate() {
            let name = format!("{var} {label}");
            let value = truth.beta[&name];
            let ok = aligned && cols.len() == labels.len() && covers(cols[s], value);
            out.insert(name, ok);
        }
    }
    out
}

pub fn normal_draws(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

pub fn uniform_draws(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Ordinary least squares with an intercept through the normal equations;
/// returns the coefficients, intercept first.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len() + 1;
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for (r, &yi) in rows.iter().zip(y) {
        let z: Vec<f64> = std::iter::once(1.0).chain(r.iter().copied()).collect();
        for i in 0..p {
            xty[i] += z[i] * yi;
            for j in 0..p {
                xtx[i][j] += z[i] * z[j];
            }
        }
    }
    solve(xtx, xty)
}

pub fn ols_predict(beta: &[f64], row: &[f64]) -> f64 {
    beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
}

pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Largest relative error of the ML fit against the closed-form balanced
/// one-way solution (50 groups of 10, intercept only).
pub fn one_way_closed_form(seed: u64) -> f64 {
    let (a, n) = (50usize, 10usize);
    let mut r = rng(seed);
    let effects = normal_draws(a, 2.0, &mut r);
    let noise = normal_draws(a * n, 3.0, &mut r);
    let mut y = Vec::with_capacity(a * n);
    let mut groups = Vec::with_capacity(a * n);
    for g in 0..a {
        for k in 0..n {
            y.push(5.0 + effects[g] + noise[g * n + k]);
            groups.push(g);
        }
    }
    let grand = y.iter().sum::<f64>() / (a * n) as f64;
    let means: Vec<f64> = (0..a).map(|g| y[g * n..(g + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let ssw: f64 = (0..a * n).map(|i| (y[i] - means[i / n]).powi(2)).sum();
    let ssb: f64 = means.iter().map(|m| n as f64 * (m - grand).powi(2)).sum();
    let within = ssw / (a * (n - 1)) as f64;
    let between = ssb / a as f64 / n as f64 - within / n as f64;
    assert!(between > 0.0, "fixture must have an interior optimum");

    let design = DesignMatrix::from_arrays(vec!["Intercept".into()], vec![1.0; a * n], y, &groups, &groups).unwrap();
    let fit = fit_lmm(
        &design,
        &LmmSpec {
            method: Method::Ml,
            household_level: true,
            zone_level: false,
        },
    )
    .unwrap();
    let rel = |got: f64, want: f64| ((got - want) / want).abs();
    rel(fit.varcomps.sd_hh.powi(2), between)
        .max(rel(fit.varcomps.sd_resid.powi(2), within))
        .max(rel(fit.beta[0], grand))
}

/// Four zones of three two-person households with one covariate.
pub fn tiny_fixture(seed: u64) -> DesignMatrix {
    let mut r = rng(seed);
    let (zones, hh_per, per) = (4usize, 3usize, 2usize);
    let zone_eff = normal_draws(zones, 1.5, &mut r);
    let hh_eff = normal_draws(zones * hh_per, 1.0, &mut r);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut hh = Vec::new();
    let mut zn = Vec::new();
    for z in 0..zones {
        for h in 0..hh_per {
            for _ in 0..per {
                let xv: f64 = r.random_range(0.0..10.0);
                let e: f64 = normal_draws(1, 1.0, &mut r)[0];
                x.extend([1.0, xv]);
                y.push(2.0 + 0.5 * xv + zone_eff[z] + hh_eff[z * hh_per + h] + e);
                hh.push(z * hh_per + h);
                zn.push(z);
            }
        }
    }
    DesignMatrix::from_arrays(vec!["Intercept".into(), "x".into()], x, y, &hh, &zn).unwrap()
}
