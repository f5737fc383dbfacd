//! Scaling studies and the tables derived from their ledgers.
//!
//! Every table is a pure function of the stored [`CellRecord`]s, so reports
//! regenerated from saved ledgers are byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::complexity::{fit_affine, fit_and_compare, Asymptote, Fit};
use crate::error::{Error, Result};
use crate::kernel::{generate_geometry, GeometryKind, GeometrySpec, IntensityRule};
use crate::spmd::{CostLedger, MemoryClass, Phase, Scheduler};
use crate::traversal::{evaluate_potential, RunConfig};
use crate::tree::AlignmentPolicy;

/// Strong-scaling efficiency of `n_q` processes taking `t_q` relative to a
/// base of `n_p` processes taking `t_p`.
pub fn efficiency(n_p: f64, t_p: f64, n_q: f64, t_q: f64) -> f64 {
    (n_p * t_p) / (n_q * t_q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub geometries: Vec<GeometrySpec>,
    pub ranks: Vec<usize>,
    pub digits: f64,
    pub buffer_bytes: u64,
    pub alignments: Vec<AlignmentPolicy>,
    pub output_dir: PathBuf,
    pub wavelength: f64,
    pub leaf_diameter: f64,
    pub seed: u64,
    pub scheduler: Scheduler,
    pub parallel_cells: bool,
}

impl Default for StudySpec {
    fn default() -> Self {
        let grid = |extent| GeometrySpec {
            kind: GeometryKind::PlanarGrid,
            extent,
            spacing: 0.25,
        };
        Self {
            geometries: vec![grid(8.0), grid(16.0)],
            ranks: vec![1, 2, 4, 8],
            digits: 3.0,
            buffer_bytes: u64::MAX,
            alignments: vec![AlignmentPolicy::Aligned, AlignmentPolicy::RankOrdered],
            output_dir: PathBuf::from("study"),
            wavelength: 1.0,
            leaf_diameter: 0.25,
            seed: 1,
            scheduler: Scheduler::Deterministic,
            parallel_cells: false,
        }
    }
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.geometries.is_empty() || self.ranks.is_empty() || self.alignments.is_empty() {
            return Err(Error::InvalidInput("study sweeps must be nonempty".into()));
        }
        if self.ranks.contains(&0) {
            return Err(Error::InvalidInput("rank counts must be at least 1".into()));
        }
        for g in &self.geometries {
            g.validate()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn config(&self, n_ranks: usize, alignment: AlignmentPolicy) -> RunConfig {
        RunConfig {
            wavelength: self.wavelength,
            digits: self.digits,
            leaf_diameter: self.leaf_diameter,
            n_ranks,
            buffer_bytes: self.buffer_bytes,
            alignment,
            seed: self.seed,
            scheduler: self.scheduler,
            audit: true,
            ..Default::default()
        }
    }
}

fn kind_name(kind: GeometryKind) -> &'static str {
    match kind {
        GeometryKind::PlanarGrid => "grid",
        GeometryKind::SphereSurface => "sphere",
        GeometryKind::CubicVolume => "volume",
    }
}

fn alignment_name(a: AlignmentPolicy) -> &'static str {
    match a {
        AlignmentPolicy::Aligned => "aligned",
        AlignmentPolicy::RankOrdered => "rank-ordered",
    }
}

pub fn geometry_label(g: &GeometrySpec) -> String {
    format!("{}-{}", kind_name(g.kind), g.extent)
}

/// One study cell's outcome as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub run_id: String,
    pub geometry: GeometrySpec,
    pub n_s: usize,
    pub n_p: usize,
    pub alignment: AlignmentPolicy,
    pub levels: u32,
    /// Bytes of the M2M aggregation messages (excludes resampling traffic).
    pub aggregation_bytes: u64,
    pub aggregation_messages: u64,
    pub ledger: Option<CostLedger>,
    pub error: Option<String>,
}

pub fn run_id(g: &GeometrySpec, n_p: usize, alignment: AlignmentPolicy) -> String {
    format!("{}-p{}-{}", geometry_label(g), n_p, alignment_name(alignment))
}

/// Runs one cell; failures are captured in the record.
pub fn run_cell(spec: &StudySpec, g: &GeometrySpec, n_p: usize, alignment: AlignmentPolicy) -> CellRecord {
    let mut record = CellRecord {
        run_id: run_id(g, n_p, alignment),
        geometry: *g,
        n_s: 0,
        n_p,
        alignment,
        levels: 0,
        aggregation_bytes: 0,
        aggregation_messages: 0,
        ledger: None,
        error: None,
    };
    let outcome = generate_geometry(g, spec.wavelength, IntensityRule::Random { seed: spec.seed })
        .and_then(|ps| evaluate_potential(&ps, &spec.config(n_p, alignment)));
    match outcome {
        Ok(out) => {
            record.n_s = out.potentials.len();
            record.levels = out.setup.num_levels();
            for m in out.log.iter().filter(|m| m.tag.phase == Phase::M2M && m.tag.kind == 2) {
                record.aggregation_bytes += m.bytes;
                record.aggregation_messages += 1;
            }
            record.ledger = Some(out.ledger);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every cell of the study, in order unless `parallel_cells` is set.
pub fn run_study(spec: &StudySpec) -> Result<Vec<CellRecord>> {
    spec.validate()?;
    let cells: Vec<(GeometrySpec, usize, AlignmentPolicy)> = spec
        .geometries
        .iter()
        .flat_map(|g| {
            spec.ranks
                .iter()
                .flat_map(move |&n| spec.alignments.iter().map(move |&a| (*g, n, a)))
        })
        .collect();
    if !spec.parallel_cells {
        return Ok(cells.iter().map(|(g, n, a)| run_cell(spec, g, *n, *a)).collect());
    }
    let mut out: Vec<Option<CellRecord>> = vec![None; cells.len()];
    std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|(g, n, a)| s.spawn(move || run_cell(spec, g, *n, *a)))
            .collect();
        for (slot, h) in out.iter_mut().zip(handles) {
            *slot = h.join().ok();
        }
    });
    Ok(out
        .into_iter()
        .zip(&cells)
        .map(|(r, (g, n, a))| {
            r.unwrap_or_else(|| CellRecord {
                error: Some("cell panicked".into()),
                ..run_cell_stub(g, *n, *a)
            })
        })
        .collect())
}

fn run_cell_stub(g: &GeometrySpec, n_p: usize, alignment: AlignmentPolicy) -> CellRecord {
    CellRecord {
        run_id: run_id(g, n_p, alignment),
        geometry: *g,
        n_s: 0,
        n_p,
        alignment,
        levels: 0,
        aggregation_bytes: 0,
        aggregation_messages: 0,
        ledger: None,
        error: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub geometry: String,
    pub alignment: String,
    pub n_p: usize,
    pub seconds: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub c2m: f64,
    pub m2m: f64,
    pub m2l: f64,
    pub l2l: f64,
    pub l2o: f64,
    pub near: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub phase: String,
    pub metric: String,
    pub alignment: String,
    pub variable: String,
    pub model: String,
    pub points: usize,
    pub scale: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub geometry: String,
    pub n_p: usize,
    pub aligned_bytes: u64,
    pub rank_ordered_bytes: u64,
    pub delta_bytes: i64,
    pub aligned_messages: u64,
    pub rank_ordered_messages: u64,
    pub delta_messages: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub run_id: String,
    pub n_p: usize,
    pub class: String,
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<crate::spmd::LedgerRow>,
    pub scaling: Vec<ScalingRow>,
    pub fits: Vec<FitRow>,
    pub alignment: Vec<AlignmentRow>,
    pub memory: Vec<MemoryRow>,
    pub failures: Vec<(String, String)>,
}

fn ok_cells(cells: &[CellRecord]) -> impl Iterator<Item = (&CellRecord, &CostLedger)> {
    cells.iter().filter_map(|c| c.ledger.as_ref().map(|l| (c, l)))
}

/// Aggregation plus L2L bytes and messages, the traffic the slice alignment governs.
fn aligned_traffic(c: &CellRecord, l: &CostLedger) -> (u64, u64) {
    let l2l = l.phase_total(Phase::L2L);
    (c.aggregation_bytes + l2l.bytes, c.aggregation_messages + l2l.messages)
}

fn metric(l: &CostLedger, phase: Phase, name: &str) -> f64 {
    let t = l.phase_total(phase);
    match name {
        "computation" => t.flops as f64,
        "messages" => t.messages as f64,
        _ => t.bytes as f64,
    }
}

fn phase_model(kind: GeometryKind, phase: Phase, name: &str) -> Asymptote {
    let surface = kind != GeometryKind::CubicVolume;
    match (phase, name, surface) {
        (Phase::M2M | Phase::L2L, "computation", true) => Asymptote::NLog2N,
        (Phase::M2M | Phase::L2L, "bytes", true) => Asymptote::NLogN,
        (Phase::M2L, "computation" | "messages" | "bytes", true) => Asymptote::NLogN,
        _ => Asymptote::N,
    }
}

/// Builds every table from stored cells.
pub fn build_report(cells: &[CellRecord]) -> Report {
    let mut sorted: Vec<CellRecord> = cells.to_vec();
    sorted.sort_by(|a, b| cell_order(a).partial_cmp(&cell_order(b)).unwrap());
    let cells = &sorted[..];
    let mut report = Report::default();
    for c in cells {
        if let Some(e) = &c.error {
            report.failures.push((c.run_id.clone(), e.clone()));
        }
    }
    for (c, l) in ok_cells(cells) {
        report.rows.extend(l.rows(&c.run_id));
        for (class, bytes) in l.memory_peak() {
            report.memory.push(MemoryRow {
                run_id: c.run_id.clone(),
                n_p: c.n_p,
                class: memory_class_name(class).into(),
                peak_bytes: bytes,
            });
        }
    }

    // strong scaling per (geometry, alignment), base = smallest N_p
    let mut groups: BTreeMap<(String, String), Vec<(&CellRecord, &CostLedger)>> = BTreeMap::new();
    for (c, l) in ok_cells(cells) {
        groups
            .entry((geometry_label(&c.geometry), alignment_name(c.alignment).to_string()))
            .or_default()
            .push((c, l));
    }
    for ((geometry, alignment), mut runs) in groups {
        runs.sort_by_key(|(c, _)| c.n_p);
        let (base_c, base_l) = runs[0];
        let base_t = base_l.total().seconds;
        for (c, l) in runs {
            let t = l.total().seconds;
            let s = |p| l.phase_total(p).seconds;
            report.scaling.push(ScalingRow {
                geometry: geometry.clone(),
                alignment: alignment.clone(),
                n_p: c.n_p,
                seconds: t,
                speedup: base_t / t,
                efficiency: efficiency(base_c.n_p as f64, base_t, c.n_p as f64, t),
                c2m: s(Phase::C2M),
                m2m: s(Phase::M2M),
                m2l: s(Phase::M2L),
                l2l: s(Phase::L2L),
                l2o: s(Phase::L2O),
                near: s(Phase::Near),
            });
        }
    }

    // size fits at fixed N_p and kind, and message fits against P at fixed geometry
    let mut by_size: BTreeMap<(u8, usize, &str), Vec<(&CellRecord, &CostLedger)>> = BTreeMap::new();
    let mut by_ranks: BTreeMap<(String, &str), Vec<(&CellRecord, &CostLedger)>> = BTreeMap::new();
    for (c, l) in ok_cells(cells) {
        by_size
            .entry((c.geometry.kind as u8, c.n_p, alignment_name(c.alignment)))
            .or_default()
            .push((c, l));
        by_ranks
            .entry((geometry_label(&c.geometry), alignment_name(c.alignment)))
            .or_default()
            .push((c, l));
    }
    for ((_, n_p, alignment), mut runs) in by_size {
        runs.sort_by_key(|(c, _)| c.n_s);
        runs.dedup_by_key(|(c, _)| c.n_s);
        if runs.len() < 3 {
            continue;
        }
        let kind = runs[0].0.geometry.kind;
        let x: Vec<f64> = runs.iter().map(|(c, _)| c.n_s as f64).collect();
        for phase in [Phase::M2M, Phase::M2L, Phase::L2L] {
            for name in ["computation", "messages", "bytes"] {
                if n_p == 1 && name != "computation" {
                    continue;
                }
                let y: Vec<f64> = runs.iter().map(|(_, l)| metric(l, phase, name)).collect();
                let model = phase_model(kind, phase, name);
                if let Ok(fit) = fit_and_compare(&x, &y, model) {
                    report.fits.push(fit_row(phase, name, alignment, &format!("N_s (N_p={n_p})"), model, x.len(), fit));
                }
            }
        }
    }
    for ((geometry, alignment), mut runs) in by_ranks {
        runs.sort_by_key(|(c, _)| c.n_p);
        if runs.len() < 3 {
            continue;
        }
        let x: Vec<f64> = runs.iter().map(|(c, _)| c.n_p as f64).collect();
        for phase in [Phase::M2M, Phase::L2L] {
            let y: Vec<f64> = runs.iter().map(|(_, l)| metric(l, phase, "messages")).collect();
            if let Ok(fit) = fit_affine(&x, &y, Asymptote::P2) {
                report.fits.push(fit_row(phase, "messages", alignment, &format!("P ({geometry})"), Asymptote::P2, x.len(), fit));
            }
        }
    }

    let mut pairs: BTreeMap<(String, usize), [Option<(u64, u64)>; 2]> = BTreeMap::new();
    for (c, l) in ok_cells(cells) {
        let slot = usize::from(c.alignment == AlignmentPolicy::RankOrdered);
        pairs.entry((geometry_label(&c.geometry), c.n_p)).or_default()[slot] = Some(aligned_traffic(c, l));
    }
    for ((geometry, n_p), [a, r]) in pairs {
        if let (Some((ab, am)), Some((rb, rm))) = (a, r) {
            report.alignment.push(AlignmentRow {
                geometry,
                n_p,
                aligned_bytes: ab,
                rank_ordered_bytes: rb,
                delta_bytes: ab as i64 - rb as i64,
                aligned_messages: am,
                rank_ordered_messages: rm,
                delta_messages: am as i64 - rm as i64,
            });
        }
    }
    report
}

fn cell_order(c: &CellRecord) -> (u8, f64, f64, usize, u8) {
    (c.geometry.kind as u8, c.geometry.extent, c.geometry.spacing, c.n_p, c.alignment as u8)
}

fn fit_row(phase: Phase, metric: &str, alignment: &str, variable: &str, model: Asymptote, points: usize, fit: Fit) -> FitRow {
    FitRow {
        phase: phase.to_string(),
        metric: metric.into(),
        alignment: alignment.into(),
        variable: variable.into(),
        model: model.label().into(),
        points,
        scale: fit.scale,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
    }
}

fn memory_class_name(c: MemoryClass) -> &'static str {
    match c {
        MemoryClass::TreeStorage => "tree_storage",
        MemoryClass::TranslationOperators => "translation_operators",
        MemoryClass::Buffers => "buffers",
        MemoryClass::Temporaries => "temporaries",
    }
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the cells' ledgers as `<run_id>.json` under `dir/ledgers`.
pub fn save_cells(dir: &Path, cells: &[CellRecord]) -> Result<()> {
    let d = dir.join("ledgers");
    fs::create_dir_all(&d)?;
    for c in cells {
        fs::write(d.join(format!("{}.json", c.run_id)), serde_json::to_string_pretty(c)?)?;
    }
    Ok(())
}

pub fn load_cells(dir: &Path) -> Result<Vec<CellRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("ledgers"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}

/// Writes all CSV tables plus gnuplot data for the size fits.
pub fn write_report(dir: &Path, cells: &[CellRecord], report: &Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut sorted: Vec<CellRecord> = cells.to_vec();
    sorted.sort_by(|a, b| cell_order(a).partial_cmp(&cell_order(b)).unwrap());
    let cells = &sorted[..];
    write_table(&dir.join("ledger.csv"), &report.rows)?;
    write_table(&dir.join("scaling.csv"), &report.scaling)?;
    write_table(&dir.join("fits.csv"), &report.fits)?;
    write_table(&dir.join("alignment.csv"), &report.alignment)?;
    write_table(&dir.join("memory.csv"), &report.memory)?;
    let mut failures = String::new();
    for (id, e) in &report.failures {
        failures.push_str(&format!("{id}\t{e}\n"));
    }
    fs::write(dir.join("failures.txt"), failures)?;

    // measured vs fitted model, one file per kind and phase, N_p = 1 computation
    for kind in [GeometryKind::PlanarGrid, GeometryKind::SphereSurface, GeometryKind::CubicVolume] {
        let mut runs: Vec<(&CellRecord, &CostLedger)> = ok_cells(cells)
            .filter(|(c, _)| c.geometry.kind == kind && c.n_p == 1 && c.alignment == AlignmentPolicy::Aligned)
            .collect();
        runs.sort_by_key(|(c, _)| c.n_s);
        if runs.len() < 3 {
            continue;
        }
        let x: Vec<f64> = runs.iter().map(|(c, _)| c.n_s as f64).collect();
        for phase in [Phase::M2M, Phase::M2L, Phase::L2L] {
            let model = phase_model(kind, phase, "computation");
            let y: Vec<f64> = runs.iter().map(|(_, l)| metric(l, phase, "computation")).collect();
            let Ok(fit) = fit_and_compare(&x, &y, model) else { continue };
            let mut text = format!("# N_s measured fitted  ({}, {phase}, {})\n", kind_name(kind), model.label());
            for (xi, yi) in x.iter().zip(&y) {
                text.push_str(&format!("{xi} {yi} {}\n", fit.scale * model.eval(*xi)));
            }
            fs::write(dir.join(format!("fit_{}_{phase}.dat", kind_name(kind))), text)?;
        }
    }
    Ok(())
}
