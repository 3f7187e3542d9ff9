//! The pipeline stages. Each stage reads its inputs from the output
//! directory written by earlier stages and writes its own artifacts there,
//! so any stage can be rerun on its own.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DeriveConfig, RunConfig, WaveEntry};
use super::features::feature_matrix;
use super::svg::write_pdp_svg;
use crate::dataset::{
    build_design, clean, load_wave, load_wave_with_derived, write_wave, HierarchicalWave, Level, Schema, TermSpec,
    VarKind, VIF_THRESHOLD,
};
use crate::derive::{
    entropy_diversity, nearest_distance, person_daily_vmt, polygon_centroid, read_facilities, read_road_graph,
    read_trips, read_zone_polygons, Coordinate, DistanceMetric, ModeMap, RoadGraph, TripRecord,
};
use crate::ensemble::{
    grid_search_cv, impurity_importance, load_model, predict, save_model, split_train_test, test_metrics,
    write_cv_table, write_importance, EnsembleKind,
};
use crate::interpret::{
    compute_pdp, consolidate_knots, default_penalty, detect_knots_with_penalty, group_importance, read_pdp_csv,
    write_pdp_csv, KnotCandidate, KnotSet, PdpCurve,
};
use crate::mlm::{
    elasticity_table, stepwise_build, write_coefficients, write_drop_trace, write_elasticities, write_fit_stats,
    LmmFit, StepwiseResult,
};
use crate::synth::{generate, GroundTruth};
use crate::{Error, Result};

/// Locations of every artifact under the output directory.
#[derive(Debug, Clone)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        OutputDir { root: root.to_path_buf() }
    }

    pub fn data(&self, wave: &str) -> PathBuf {
        self.root.join("data").join(wave)
    }

    pub fn ml(&self, wave: &str) -> PathBuf {
        self.root.join("ml").join(wave)
    }

    pub fn mlm(&self, wave: &str) -> PathBuf {
        self.root.join("mlm").join(wave)
    }

    pub fn synth(&self, wave: &str) -> PathBuf {
        self.root.join("synth").join(wave)
    }

    pub fn pdp(&self) -> PathBuf {
        self.root.join("pdp")
    }

    pub fn knots(&self) -> PathBuf {
        self.root.join("knots")
    }

    pub fn tables(&self) -> PathBuf {
        self.root.join("tables")
    }

    pub fn model(&self, wave: &str, kind: EnsembleKind) -> PathBuf {
        self.ml(wave).join(format!("model_{}.json", kind.as_str()))
    }

    pub fn knot_set(&self) -> PathBuf {
        self.knots().join("knots.json")
    }

    pub fn final_model(&self, wave: &str) -> PathBuf {
        self.mlm(wave).join("final_model.json")
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `f` for every wave in parallel and returns the results in wave
/// order; the first failing wave's error (in wave order) wins.
fn per_wave<T: Send>(
    cfg: &RunConfig,
    stage: &str,
    f: impl Fn(usize, &WaveEntry) -> Result<T> + Sync,
) -> Result<Vec<(String, T)>> {
    let results: Vec<Result<T>> = cfg
        .waves
        .par_iter()
        .enumerate()
        .map(|(i, w)| f(i, w).map_err(|e| in_stage(e, stage, &w.label)))
        .collect();
    cfg.waves.iter().zip(results).map(|(w, r)| r.map(|v| (w.label.clone(), v))).collect()
}

fn in_stage(e: Error, stage: &str, wave: &str) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => other.in_stage(stage, wave),
    }
}

fn stage_err<'a>(stage: &'static str, wave: &'a str) -> impl Fn(Error) -> Error + 'a {
    move |e| in_stage(e, stage, wave)
}

// ---------------------------------------------------------------- prepare

/// Sizes of one prepared wave, for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreparedWave {
    pub label: String,
    pub source: &'static str,
    pub seed: u64,
    pub persons: usize,
    pub households: usize,
    pub zones: usize,
    pub dropped: usize,
}

/// Loads (or generates) a wave before cleaning: stage "load", then
/// "derive" for file waves with raw inputs.
pub fn load_raw(cfg: &RunConfig, entry: &WaveEntry) -> Result<(HierarchicalWave, Option<GroundTruth>)> {
    let label = entry.label.as_str();
    if let Some(src) = &entry.synth {
        let mut synth = src.resolve(&cfg.base_dir).map_err(stage_err("load", label))?;
        synth.label = label.to_string();
        if let Some(seed) = entry.synth_seed {
            synth.seed = seed;
        }
        let (wave, truth) = generate(&synth).map_err(stage_err("load", label))?;
        return Ok((wave, Some(truth)));
    }
    let files = entry
        .files()
        .ok_or_else(|| Error::Config(format!("wave `{label}` has no inputs")))?;
    let schema: Schema = files.schema.resolve(&cfg.base_dir).map_err(stage_err("load", label))?;
    let derived: BTreeSet<String> = entry
        .derive
        .as_ref()
        .map(|d| d.derived_names(&schema.response).into_iter().collect())
        .unwrap_or_default();
    let mut wave = load_wave_with_derived(
        label,
        &cfg.resolve(files.persons),
        &cfg.resolve(files.households),
        &cfg.resolve(files.zones),
        &schema,
        &derived,
    )
    .map_err(stage_err("load", label))?;
    if let Some(d) = &entry.derive {
        derive_variables(&mut wave, d, &cfg.base_dir).map_err(stage_err("derive", label))?;
    }
    Ok((wave, None))
}

fn expand_zone_values(wave: &HierarchicalWave, level: Level, per_zone: &[Option<f64>]) -> Vec<Option<f64>> {
    match level {
        Level::Zone => per_zone.to_vec(),
        Level::Household => wave.household_zone.iter().map(|&z| per_zone[z]).collect(),
        Level::Person => (0..wave.persons.len()).map(|p| per_zone[wave.zone_of_person(p)]).collect(),
    }
}

fn derived_target(wave: &HierarchicalWave, name: &str) -> Result<Level> {
    let spec = wave
        .schema
        .get(name)
        .ok_or_else(|| Error::Config(format!("derived variable `{name}` is not in the schema")))?;
    if spec.kind != VarKind::Numeric {
        return Err(Error::Config(format!("derived variable `{name}` must be numeric")));
    }
    Ok(spec.level)
}

/// Fills response and variables from raw trips, facilities and zone counts.
pub fn derive_variables(wave: &mut HierarchicalWave, d: &DeriveConfig, base: &Path) -> Result<()> {
    let graph: Option<RoadGraph> = match (&d.road_nodes, &d.road_edges) {
        (Some(n), Some(e)) => Some(read_road_graph(&base.join(n), &base.join(e))?),
        (None, None) => None,
        _ => return Err(Error::Config("road_nodes and road_edges go together".into())),
    };
    let metric = match &graph {
        Some(g) => DistanceMetric::Route(g),
        None => DistanceMetric::Haversine,
    };

    if let Some(path) = &d.trips {
        let modes = d.motorized_modes.as_ref().map_or_else(ModeMap::default, ModeMap::new);
        let mut trips = read_trips(&base.join(path), &modes)?;
        let mut by_person: HashMap<&str, Vec<TripRecord>> = HashMap::new();
        for t in &mut trips {
            if t.distance_miles.is_none() {
                t.resolve(&metric)?;
            }
        }
        for t in &trips {
            if wave.persons.row_of(&t.person_id).is_none() {
                return Err(Error::InvalidValue {
                    context: format!("trip `{}`", t.trip_id),
                    detail: format!("unknown person `{}`", t.person_id),
                });
            }
            by_person.entry(t.person_id.as_str()).or_default().push(t.clone());
        }
        let mut response = Vec::with_capacity(wave.persons.len());
        for id in &wave.persons.ids {
            let vmt = match by_person.get(id.as_str()) {
                Some(ts) => person_daily_vmt(ts)?,
                None => 0.0,
            };
            response.push(Some(vmt));
        }
        wave.response = response;
    }

    if !d.facilities.is_empty() {
        let poly_path = d
            .zone_polygons
            .as_ref()
            .ok_or_else(|| Error::Config("facility distances need zone_polygons".into()))?;
        let polygons = read_zone_polygons(&base.join(poly_path))?;
        let centroids: Vec<Coordinate> = wave
            .zones
            .ids
            .iter()
            .map(|z| {
                let ring = polygons.get(z).ok_or_else(|| Error::InvalidValue {
                    context: poly_path.display().to_string(),
                    detail: format!("no polygon for zone `{z}`"),
                })?;
                polygon_centroid(ring)
            })
            .collect::<Result<_>>()?;
        for (name, path) in &d.facilities {
            let level = derived_target(wave, name)?;
            let sites = read_facilities(&base.join(path))?;
            let per_zone: Vec<Option<f64>> = centroids
                .par_iter()
                .map(|c| nearest_distance(*c, &sites, &metric).map(Some))
                .collect::<Result<_>>()?;
            let values = expand_zone_values(wave, level, &per_zone);
            wave.set_numeric(level, name, values)?;
        }
    }

    if let Some(name) = &d.diversity {
        let level = derived_target(wave, name)?;
        let counts = wave
            .zone_counts
            .as_ref()
            .ok_or_else(|| Error::Config("diversity needs zone count columns in the zone file".into()))?;
        let per_zone: Vec<Option<f64>> = counts
            .iter()
            .map(|c| match entropy_diversity(c.households, c.basic, c.retail, c.service) {
                Ok(v) => Ok(Some(v)),
                Err(Error::UndefinedDiversity) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let values = expand_zone_values(wave, level, &per_zone);
        wave.set_numeric(level, name, values)?;
    }
    Ok(())
}

/// Linear design over every schema variable, for the VIF screen.
fn vif_rows(wave: &HierarchicalWave) -> Result<Vec<Vec<String>>> {
    let terms: Vec<TermSpec> = wave.schema.variables.iter().map(|v| TermSpec::linear(&v.name)).collect();
    let design = build_design(wave, &terms, &KnotSet::default())?;
    if design.n_cols() < 3 {
        return Ok(Vec::new());
    }
    Ok(design
        .vif()?
        .into_iter()
        .map(|r| vec![r.variable, r.vif.to_string(), (r.vif > VIF_THRESHOLD).to_string()])
        .collect())
}

/// load, derive, clean and VIF for every wave; writes `data/<wave>/`.
pub fn prepare(cfg: &RunConfig, out: &OutputDir) -> Result<Vec<PreparedWave>> {
    let done = per_wave(cfg, "load", |i, entry| {
        let label = entry.label.as_str();
        let (raw, truth) = load_raw(cfg, entry)?;
        let (wave, log) = clean(&raw, &cfg.clean).map_err(stage_err("clean", label))?;
        let dir = out.data(label);
        mkdir(&dir).map_err(stage_err("clean", label))?;
        write_wave(&wave, &dir).map_err(stage_err("clean", label))?;
        write_json(&wave.schema, &dir.join("schema.json")).map_err(stage_err("clean", label))?;
        log.write_csv(&dir.join("clean_log.csv")).map_err(stage_err("clean", label))?;
        if let Some(t) = &truth {
            write_json(t, &dir.join("truth.json")).map_err(stage_err("load", label))?;
        }
        let rows = vif_rows(&wave).map_err(stage_err("vif", label))?;
        write_rows(&dir.join("vif.csv"), &["column", "vif", "flagged"], rows).map_err(stage_err("vif", label))?;
        let (persons, households, zones) = wave.counts();
        Ok(PreparedWave {
            label: label.to_string(),
            source: if entry.synth.is_some() { "synth" } else { "files" },
            seed: cfg.wave_seed(i),
            persons,
            households,
            zones,
            dropped: raw.persons.len() - persons,
        })
    })?;
    Ok(done.into_iter().map(|(_, p)| p).collect())
}

/// The cleaned wave written by [`prepare`].
pub fn load_prepared(out: &OutputDir, label: &str) -> Result<HierarchicalWave> {
    let dir = out.data(label);
    let schema: Schema = read_json(&dir.join("schema.json"))?;
    load_wave(
        label,
        &dir.join("persons.csv"),
        &dir.join("households.csv"),
        &dir.join("zones.csv"),
        &schema,
    )
}

/// Writes the raw synthetic waves (with schema and ground truth) to
/// `synth/<wave>/`; file waves are skipped.
pub fn synth(cfg: &RunConfig, out: &OutputDir) -> Result<Vec<String>> {
    let done = per_wave(cfg, "synth", |_, entry| {
        if entry.synth.is_none() {
            return Ok(false);
        }
        let (wave, truth) = load_raw(cfg, entry)?;
        let dir = out.synth(&entry.label);
        mkdir(&dir)?;
        crate::synth::write_synth(&wave, truth.as_ref().expect("synthetic wave"), &dir)?;
        write_json(&wave.schema, &dir.join("schema.json"))?;
        Ok(true)
    })?;
    Ok(done.into_iter().filter(|(_, w)| *w).map(|(l, _)| l).collect())
}

// --------------------------------------------------------------------- ml

fn features_of(cfg: &RunConfig, wave: &HierarchicalWave) -> Vec<String> {
    cfg.ml
        .features
        .clone()
        .unwrap_or_else(|| wave.schema.variables.iter().map(|v| v.name.clone()).collect())
}

#[derive(Debug, Clone)]
struct MlSummary {
    kind: EnsembleKind,
    best: String,
    cv_mse: f64,
    rmse: f64,
    r2: f64,
    n_train: usize,
    n_test: usize,
    features: Vec<String>,
    shares: Vec<f64>,
    groups: BTreeMap<String, String>,
}

/// Split, grid search, refit and test evaluation per wave and algorithm.
/// Writes `ml/<wave>/` and the performance and importance tables.
pub fn ml(cfg: &RunConfig, out: &OutputDir) -> Result<()> {
    let done = per_wave(cfg, "ml", |i, entry| {
        let label = entry.label.as_str();
        let wave = load_prepared(out, label).map_err(stage_err("ml", label))?;
        let seed = cfg.wave_seed(i);
        let names = features_of(cfg, &wave);
        let (x, names, y) = feature_matrix(&wave, &names)?;
        let split = split_train_test(y.len(), cfg.ml.test_fraction, seed).map_err(stage_err("split", label))?;
        let dir = out.ml(label);
        mkdir(&dir)?;
        let mut set = vec!["train"; y.len()];
        for &t in &split.test {
            set[t] = "test";
        }
        write_rows(
            &dir.join("split.csv"),
            &["person_id", "set"],
            wave.persons.ids.iter().zip(&set).map(|(p, s)| vec![p.clone(), s.to_string()]),
        )?;
        let xtr = x.select_rows(&split.train);
        let ytr: Vec<f64> = split.train.iter().map(|&r| y[r]).collect();
        let xte = x.select_rows(&split.test);
        let yte: Vec<f64> = split.test.iter().map(|&r| y[r]).collect();
        let groups: BTreeMap<String, String> = names
            .iter()
            .map(|n| {
                let g = wave.schema.get(n).map(|s| s.group().as_str()).unwrap_or("other");
                (n.clone(), g.to_string())
            })
            .collect();

        let mut out_rows = Vec::new();
        for &kind in &cfg.ml.algorithms {
            let candidates = match kind {
                EnsembleKind::Gbdt => cfg.ml.gbdt_grid.lattice(seed),
                EnsembleKind::Rf => cfg.ml.rf_grid.lattice(seed),
            };
            let cv = grid_search_cv(&xtr, &ytr, &names, &candidates, cfg.ml.k, seed)
                .map_err(stage_err("grid-search", label))?;
            write_cv_table(&cv, &dir.join(format!("cv_{}.csv", kind.as_str())))?;
            let best = cv.best_params().clone();
            let model = best.fit(&xtr, &ytr, &names).map_err(stage_err("fit", label))?;
            save_model(&model, &out.model(label, kind))?;
            let pred = predict(&model, &xte)?;
            let m = test_metrics(&yte, &pred).map_err(stage_err("metrics", label))?;
            let shares = impurity_importance(&model).map_err(stage_err("importance", label))?;
            write_importance(&names, &shares, &dir.join(format!("importance_{}.csv", kind.as_str())))?;
            out_rows.push(MlSummary {
                kind,
                best: best.describe(),
                cv_mse: cv.rows[cv.best].mean_mse,
                rmse: m.rmse,
                r2: m.r2,
                n_train: split.train.len(),
                n_test: split.test.len(),
                features: names.clone(),
                shares,
                groups: groups.clone(),
            });
        }
        Ok(out_rows)
    })?;

    let tables = out.tables();
    mkdir(&tables)?;
    let mut perf = Vec::new();
    let mut imp = Vec::new();
    let mut grouped = Vec::new();
    for (label, rows) in &done {
        for s in rows {
            perf.push(vec![
                label.clone(),
                s.kind.as_str().to_string(),
                s.best.clone(),
                s.cv_mse.to_string(),
                s.rmse.to_string(),
                s.r2.to_string(),
                s.n_train.to_string(),
                s.n_test.to_string(),
            ]);
            for ((f, sh), g) in s.features.iter().zip(&s.shares).zip(s.features.iter().map(|f| &s.groups[f])) {
                imp.push(vec![label.clone(), s.kind.as_str().into(), f.clone(), g.clone(), sh.to_string()]);
            }
            let gi = group_importance(&s.features, &s.shares, &s.groups).map_err(stage_err("importance", label))?;
            for (g, sh) in &gi.0 {
                grouped.push(vec![label.clone(), s.kind.as_str().into(), g.clone(), sh.to_string()]);
            }
        }
    }
    write_rows(
        &tables.join("ml_performance.csv"),
        &["wave", "algorithm", "best_params", "cv_mse", "test_rmse", "test_r2", "n_train", "n_test"],
        perf,
    )?;
    write_rows(
        &tables.join("importance.csv"),
        &["wave", "algorithm", "feature", "group", "share"],
        imp,
    )?;
    write_rows(&tables.join("group_importance.csv"), &["wave", "algorithm", "group", "share"], grouped)
}

// -------------------------------------------------------------------- pdp

/// The variables searched for knots, in order.
fn knot_variables(cfg: &RunConfig, wave: &HierarchicalWave, features: &[String]) -> Result<Vec<String>> {
    match &cfg.interpret.variables {
        Some(vs) => {
            for v in vs {
                if !features.contains(v) {
                    return Err(Error::Config(format!("interpret variable `{v}` is not a model feature")));
                }
                if wave.schema.get(v).map(|s| s.kind) != Some(VarKind::Numeric) {
                    return Err(Error::Config(format!("interpret variable `{v}` is not numeric")));
                }
            }
            Ok(vs.clone())
        }
        None => Ok(features
            .iter()
            .filter(|f| wave.schema.get(f).map(|s| s.kind) == Some(VarKind::Numeric))
            .cloned()
            .collect()),
    }
}

fn axis_labels(schema: &Schema, feature: &str) -> (String, String) {
    let x = match schema.get(feature) {
        Some(s) if !s.units.is_empty() => format!("{feature} ({})", s.units),
        _ => feature.to_string(),
    };
    (x, format!("Average predicted {}", schema.response))
}

fn render_all(out: &OutputDir, curves: &[PdpCurve], schema: &Schema, knots: &KnotSet) -> Result<()> {
    let mut features: Vec<&str> = Vec::new();
    for c in curves {
        if !features.contains(&c.feature.as_str()) {
            features.push(&c.feature);
        }
    }
    for f in features {
        let group: Vec<PdpCurve> = curves.iter().filter(|c| c.feature == f).cloned().collect();
        let (xl, yl) = axis_labels(schema, f);
        write_pdp_svg(&group, knots.get(f), &xl, &yl, &out.pdp().join(format!("{f}.svg")))?;
    }
    Ok(())
}

/// Partial dependence of the chosen model for every knot variable; writes
/// `pdp/pdp.csv` and one SVG per variable (without knot markers).
pub fn pdp(cfg: &RunConfig, out: &OutputDir) -> Result<()> {
    let done = per_wave(cfg, "pdp", |_, entry| {
        let label = entry.label.as_str();
        let wave = load_prepared(out, label)?;
        let model = load_model(&out.model(label, cfg.ml.pdp_model))?;
        let (x, names, _) = feature_matrix(&wave, &model.feature_names)?;
        let vars = knot_variables(cfg, &wave, &names)?;
        let curves = vars
            .par_iter()
            .map(|v| {
                let j = names.iter().position(|n| n == v).expect("checked feature");
                compute_pdp(&model, &x, j, &cfg.interpret.grid, label)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((curves, wave.schema))
    })?;
    let dir = out.pdp();
    mkdir(&dir)?;
    let schema = done[0].1 .1.clone();
    let curves: Vec<PdpCurve> = done.into_iter().flat_map(|(_, (c, _))| c).collect();
    write_pdp_csv(&curves, &dir.join("pdp.csv"))?;
    render_all(out, &curves, &schema, &KnotSet::default())
}

// ------------------------------------------------------------------ knots

/// Knots per curve, cross-wave consolidation and manual overrides; writes
/// `knots/` and redraws the PDP plots with knot markers.
pub fn knots(cfg: &RunConfig, out: &OutputDir) -> Result<KnotSet> {
    let curves = read_pdp_csv(&out.pdp().join("pdp.csv")).map_err(stage_err("knots", "all"))?;
    let it = &cfg.interpret;
    let detected: Vec<Result<Vec<KnotCandidate>>> = curves
        .par_iter()
        .map(|c| {
            let penalty = it.penalty_multiplier * default_penalty(c);
            detect_knots_with_penalty(c, it.max_knots, penalty).map_err(|e| in_stage(e, "knots", &c.wave))
        })
        .collect();
    let mut candidates: BTreeMap<String, BTreeMap<String, Vec<KnotCandidate>>> = BTreeMap::new();
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut cand_rows = Vec::new();
    let mut features: Vec<String> = Vec::new();
    for (c, found) in curves.iter().zip(detected) {
        let found = found?;
        if !features.contains(&c.feature) {
            features.push(c.feature.clone());
        }
        for k in &found {
            cand_rows.push(vec![c.feature.clone(), c.wave.clone(), k.value.to_string(), k.score.to_string()]);
        }
        candidates
            .entry(c.feature.clone())
            .or_default()
            .entry(c.wave.clone())
            .or_default()
            .extend(found);
        let lo = c.grid.first().copied().unwrap_or(f64::NAN);
        let hi = c.grid.last().copied().unwrap_or(f64::NAN);
        let r = ranges.entry(c.feature.clone()).or_insert((lo, hi));
        *r = (r.0.min(lo), r.1.max(hi));
    }

    let settings = it.consolidate_settings();
    let mut set = KnotSet::default();
    let mut knot_rows = Vec::new();
    for f in &features {
        if let Some(manual) = it.manual_knots.get(f) {
            set.insert(f, manual.clone()).map_err(stage_err("knots", "all"))?;
            for k in manual {
                knot_rows.push(vec![f.clone(), k.to_string(), String::new(), String::new(), "manual".into()]);
            }
            continue;
        }
        let merged = consolidate_knots(&candidates[f], ranges[f], &settings);
        for k in &merged {
            knot_rows.push(vec![
                f.clone(),
                k.value.to_string(),
                k.score.to_string(),
                k.support.to_string(),
                "detected".into(),
            ]);
        }
        if !merged.is_empty() {
            set.insert(f, merged.iter().map(|k| k.value).collect())
                .map_err(stage_err("knots", "all"))?;
        }
    }
    for (f, manual) in &it.manual_knots {
        if !features.contains(f) {
            set.insert(f, manual.clone()).map_err(stage_err("knots", "all"))?;
            for k in manual {
                knot_rows.push(vec![f.clone(), k.to_string(), String::new(), String::new(), "manual".into()]);
            }
        }
    }

    let dir = out.knots();
    mkdir(&dir)?;
    write_rows(&dir.join("candidates.csv"), &["variable", "wave", "value", "score"], cand_rows)?;
    write_rows(
        &dir.join("knots.csv"),
        &["variable", "knot", "score", "support", "source"],
        knot_rows,
    )?;
    write_json(&set, &out.knot_set())?;
    let first = &cfg.waves[0].label;
    let schema: Schema = read_json(&out.data(first).join("schema.json")).map_err(stage_err("knots", first))?;
    render_all(out, &curves, &schema, &set)?;
    Ok(set)
}

// -------------------------------------------------------------------- mlm

/// The final (Model 4) specification of one wave, enough to rebuild its
/// design and recompute elasticities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModel {
    pub name: String,
    pub terms: Vec<TermSpec>,
    pub fit: LmmFit,
}

/// Stepwise mixed models per wave; writes `mlm/<wave>/final_model.json`
/// and the coefficient, fit-statistic and drop-trace tables.
pub fn mlm(cfg: &RunConfig, out: &OutputDir) -> Result<Vec<(String, StepwiseResult)>> {
    let knots: KnotSet = read_json(&out.knot_set()).map_err(stage_err("mlm", "all"))?;
    let step = cfg.mlm.stepwise();
    let done = per_wave(cfg, "mlm", |_, entry| {
        let label = entry.label.as_str();
        let wave = load_prepared(out, label)?;
        let result = stepwise_build(&wave, &knots, &step)?;
        let last = result.models.last().expect("four models");
        mkdir(&out.mlm(label))?;
        write_json(
            &FinalModel {
                name: last.name.clone(),
                terms: last.terms.clone(),
                fit: last.fit.clone(),
            },
            &out.final_model(label),
        )?;
        Ok(result)
    })?;
    let tables = out.tables();
    mkdir(&tables)?;
    let models: Vec<(String, &crate::mlm::StepModel)> = done
        .iter()
        .flat_map(|(l, r)| r.models.iter().map(move |m| (l.clone(), m)))
        .collect();
    write_coefficients(&models, &tables.join("coefficients.csv"))?;
    write_fit_stats(&models, &tables.join("fit_stats.csv"))?;
    let traces: Vec<(String, &[crate::mlm::DropEvent])> =
        done.iter().map(|(l, r)| (l.clone(), r.trace.as_slice())).collect();
    write_drop_trace(&traces, &tables.join("drop_trace.csv"))?;
    Ok(done)
}

// ------------------------------------------------------------- elasticity

/// Elasticities of the final model's built-environment terms per wave;
/// writes `tables/elasticities.csv`.
pub fn elasticity(cfg: &RunConfig, out: &OutputDir) -> Result<()> {
    let knots: KnotSet = read_json(&out.knot_set()).map_err(stage_err("elasticity", "all"))?;
    let done = per_wave(cfg, "elasticity", |_, entry| {
        let label = entry.label.as_str();
        let wave = load_prepared(out, label)?;
        let fm: FinalModel = read_json(&out.final_model(label))?;
        let design = build_design(&wave, &fm.terms, &knots)?;
        if design.columns != fm.fit.columns {
            return Err(Error::invalid(format!(
                "rebuilt design columns {:?} differ from the fitted {:?}",
                design.columns, fm.fit.columns
            )));
        }
        elasticity_table(&fm.fit, &design, &wave.schema)
    })?;
    let tables = out.tables();
    mkdir(&tables)?;
    write_elasticities(&done, &tables.join("elasticities.csv"))
}
