//! The `sweep`, `energy`, `features`, `map` and `report` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use phasemap_core::ctm::{all_rdm2, ctm_converge, energy_from_rdms, CtmSettings};
use phasemap_core::ipeps::{evolve, evolve_from, features_from_weights, SimulationResult};
use phasemap_core::mapper::{
    map_phase_diagram, write_boundaries_csv, write_map_csv, FeatureKind, FeatureRecord, MappingResult, ParameterGrid,
};
use phasemap_core::model::{Bond, ModelParams};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, SweepMode};
use crate::error::{PipelineError, Result};
use crate::store::{short_hash, write_atomic, EnergyEntry, FeatureStore, PostSelectedView, RecordEntry, Role, StatePayload, ViewEntry, STORE_VERSION};

/// Seed of one run, from a stable hash of the global seed, the couplings,
/// the bond dimension and the run's role; grid layout does not enter, so
/// extending a grid never reseeds existing cells.
pub fn derive_seed(global_seed: u64, params: ModelParams, bond_dim: usize, role: Role) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    for v in [params.j_perp, params.j_par, params.j_x] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((bond_dim as u64).to_le_bytes());
    h.update(serde_json::to_vec(&role).expect("role serializes"));
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

pub fn record_id(cfg: &PipelineConfig, params: ModelParams, role: Role) -> String {
    let seed = derive_seed(cfg.seed, params, cfg.su.bond_dim, role);
    let prefix = match role {
        Role::Random { replica } => format!("r{replica}"),
        Role::WarmForward => "wf".into(),
        Role::WarmBackward => "wb".into(),
    };
    format!("{prefix}-{}", short_hash(&format!("{seed}|{}", cfg.su_fingerprint())))
}

fn ctm_fingerprint(s: CtmSettings) -> String {
    format!("chi={},tol={:e},max_iter={}", s.chi, s.tol, s.max_iter)
}

fn cells(cfg: &PipelineConfig) -> Vec<(usize, usize)> {
    let (n1, n2) = cfg.shape();
    (0..n1).flat_map(|i| (0..n2).map(move |j| (i, j))).collect()
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start {} workers: {e}", cfg.workers)))
}

fn entry_from(id: String, role: Role, bond_dim: usize, run: &SimulationResult) -> RecordEntry {
    RecordEntry {
        id,
        params: run.params.into(),
        bond_dim,
        role,
        seed: run.seed,
        converged: run.converged,
        sweeps_used: run.sweeps_used,
        lambda_delta: run.final_lambda_delta.is_finite().then_some(run.final_lambda_delta),
        restarts: run.restarts,
        payload: None,
        error: None,
    }
}

fn failed_entry(id: String, role: Role, params: ModelParams, bond_dim: usize, seed: u64, error: String) -> RecordEntry {
    RecordEntry {
        id,
        params: params.into(),
        bond_dim,
        role,
        seed,
        converged: false,
        sweeps_used: 0,
        lambda_delta: None,
        restarts: 0,
        payload: None,
        error: Some(error),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepSummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub unconverged: usize,
}

impl SweepSummary {
    fn add(&mut self, other: &SweepSummary) {
        self.computed += other.computed;
        self.skipped += other.skipped;
        self.failed += other.failed;
        self.unconverged += other.unconverged;
    }
}

/// Optimizes every cell × replica not yet in the store. In post-selected
/// mode the candidates are then contracted, optionally extended by
/// warm-started neighbours, and collapsed into the post-selected view.
pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<SweepSummary> {
    let store = Mutex::new(FeatureStore::open_or_create(&cfg.store_dir())?);
    let mut tasks = Vec::new();
    let mut summary = SweepSummary::default();
    for (i, j) in cells(cfg) {
        let params = cfg.params_at(i, j);
        for replica in 0..cfg.sweep.replicas {
            let role = Role::Random { replica };
            let id = record_id(cfg, params, role);
            if store.lock().unwrap().contains(&id) {
                summary.skipped += 1;
            } else {
                tasks.push((id, params, role));
            }
        }
    }
    let results: Vec<SweepSummary> = pool(cfg)?.install(|| {
        tasks
            .par_iter()
            .map(|(id, params, role)| {
                let seed = derive_seed(cfg.seed, *params, cfg.su.bond_dim, *role);
                let run = evolve(*params, &cfg.su_config(seed));
                store_run(cfg, &store, id.clone(), *role, *params, seed, run)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for r in &results {
        summary.add(r);
    }
    if cfg.sweep.mode == SweepMode::PostSelected {
        let energy = contract_missing(cfg, &store)?;
        summary.failed += energy.failed;
        if cfg.sweep.warm_start {
            summary.add(&warm_passes(cfg, &store)?);
        }
        write_post_selected_view(cfg, &store.lock().unwrap())?;
    }
    log::info!("sweep: {summary:?}");
    Ok(summary)
}

fn store_run(
    cfg: &PipelineConfig,
    store: &Mutex<FeatureStore>,
    id: String,
    role: Role,
    params: ModelParams,
    seed: u64,
    run: std::result::Result<SimulationResult, phasemap_core::ipeps::SuError>,
) -> Result<SweepSummary> {
    let mut s = SweepSummary::default();
    match run {
        Ok(run) => {
            let payload = StatePayload::from_state(&run.state, cfg.sweep.save_states);
            log::info!("{id} {params:?}: converged={} sweeps={}", run.converged, run.sweeps_used);
            s.computed += 1;
            s.unconverged += usize::from(!run.converged);
            store.lock().unwrap().insert(entry_from(id, role, cfg.su.bond_dim, &run), Some(&payload))?;
        }
        Err(e) => {
            log::warn!("{id} {params:?} failed: {e}");
            s.failed += 1;
            store.lock().unwrap().insert(failed_entry(id, role, params, cfg.su.bond_dim, seed, e.to_string()), None)?;
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergySummary {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub ctm_unconverged: usize,
}


fn contract_state(payload: &StatePayload, entry: &RecordEntry, settings: CtmSettings) -> Result<(bool, usize, f64, Vec<(Bond, Vec<f64>)>)> {
    let state = payload.to_state()?;
    let env = ctm_converge(&state, settings)?;
    let rdms = all_rdm2(&state, &env)?;
    let e = energy_from_rdms(&rdms, entry.params.into());
    Ok((env.converged, env.iterations, e, rdms.iter().map(|r| (r.bond, r.to_feature())).collect()))
}

/// Contracts one record and stores its energy and all four ρ². The payload
/// is read under the store lock, the contraction runs outside it.
fn contract_one(store: &Mutex<FeatureStore>, entry: &RecordEntry, settings: CtmSettings) -> Result<EnergySummary> {
    let start = Instant::now();
    let mut out = EnergyEntry {
        id: entry.id.clone(),
        ctm: ctm_fingerprint(settings),
        energy: None,
        ctm_converged: false,
        ctm_iterations: 0,
        rho2_payload: None,
        error: None,
    };
    let payload = store.lock().unwrap().load_payload(entry);
    let mut s = EnergySummary::default();
    let rdms = match payload.and_then(|p| contract_state(&p, entry, settings)) {
        Ok((converged, iterations, e, rdms)) => {
            out.energy = Some(e);
            out.ctm_converged = converged;
            out.ctm_iterations = iterations;
            s.computed = 1;
            if !converged {
                log::warn!("{}: CTM not converged after {iterations} iterations", entry.id);
                s.ctm_unconverged = 1;
            }
            log::info!("{}: energy {e:.10} ({:.1}s)", entry.id, start.elapsed().as_secs_f64());
            Some(rdms)
        }
        Err(e) => {
            log::warn!("{}: no energy: {e}", entry.id);
            out.error = Some(e.to_string());
            s.failed = 1;
            None
        }
    };
    store.lock().unwrap().insert_energy(out, rdms.as_deref())?;
    Ok(s)
}

fn contract_missing(cfg: &PipelineConfig, store: &Mutex<FeatureStore>) -> Result<EnergySummary> {
    let settings = cfg.ctm_settings();
    let fp = ctm_fingerprint(settings);
    let (todo, total): (Vec<RecordEntry>, usize) = {
        let s = store.lock().unwrap();
        let todo = s.records().iter().filter(|r| s.energy(&r.id, &fp).is_none()).cloned().collect();
        (todo, s.records().len())
    };
    let parts = pool(cfg)?.install(|| {
        todo.par_iter().map(|entry| contract_one(store, entry, settings)).collect::<Result<Vec<_>>>()
    })?;
    let mut summary = EnergySummary { skipped: total - todo.len(), ..Default::default() };
    for p in parts {
        summary.computed += p.computed;
        summary.failed += p.failed;
        summary.ctm_unconverged += p.ctm_unconverged;
    }
    Ok(summary)
}

/// Contracts every stored state that has no energy yet and rebuilds the
/// post-selected view.
pub fn cmd_energy(cfg: &PipelineConfig) -> Result<EnergySummary> {
    let store = Mutex::new(FeatureStore::open(&cfg.store_dir())?);
    let summary = contract_missing(cfg, &store)?;
    write_post_selected_view(cfg, &store.lock().unwrap())?;
    log::info!("energy: {summary:?}");
    Ok(summary)
}

fn candidate_roles(cfg: &PipelineConfig) -> Vec<Role> {
    let mut roles: Vec<Role> = (0..cfg.sweep.replicas).map(|replica| Role::Random { replica }).collect();
    if cfg.sweep.mode == SweepMode::PostSelected && cfg.sweep.warm_start {
        roles.extend([Role::WarmForward, Role::WarmBackward]);
    }
    roles
}

/// Energies closer than this (relative) are the same state up to round-off.
const ENERGY_TIE: f64 = 1e-9;

/// Candidates of one cell with their energies, best first: converged
/// contractions before unconverged ones, then by energy, then by seed.
/// Candidates tied with the best energy prefer warm starts, so degenerate
/// states (e.g. a rotated ordered moment) continue the neighbouring cell.
fn ranked_candidates<'a>(cfg: &PipelineConfig, store: &'a FeatureStore, params: ModelParams) -> Vec<(&'a RecordEntry, Option<&'a EnergyEntry>)> {
    let fp = ctm_fingerprint(cfg.ctm_settings());
    let mut out: Vec<_> = candidate_roles(cfg)
        .into_iter()
        .filter_map(|role| store.get(&record_id(cfg, params, role)))
        .map(|r| (r, store.energy(&r.id, &fp)))
        .collect();
    let key = |(r, e): &(&RecordEntry, Option<&EnergyEntry>)| {
        let energy = e.and_then(|e| e.energy).unwrap_or(f64::INFINITY);
        (!e.is_some_and(|e| e.ctm_converged), energy, r.seed)
    };
    out.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
    });
    if let Some(top) = out.first().map(key).filter(|k| k.1.is_finite()) {
        let tied = |c: &(&RecordEntry, Option<&EnergyEntry>)| {
            let k = key(c);
            k.0 == top.0 && k.1 - top.1 <= ENERGY_TIE * top.1.abs().max(1.0)
        };
        let preference = |r: &RecordEntry| match r.role {
            Role::WarmForward => 0,
            Role::WarmBackward => 1,
            Role::Random { .. } => 2,
        };
        let n = out.iter().take_while(|c| tied(c)).count();
        out[..n].sort_by_key(|(r, _)| (preference(r), r.seed));
    }
    out
}

fn selected(cfg: &PipelineConfig, store: &FeatureStore, params: ModelParams) -> Option<RecordEntry> {
    ranked_candidates(cfg, store, params)
        .into_iter()
        .find(|(_, e)| e.is_some_and(|e| e.energy.is_some()))
        .map(|(r, _)| r.clone())
}

/// Continues the selected state of each cell into its neighbour along
/// axis 2, first in increasing then in decreasing order; rows run in
/// parallel. Each continuation is contracted immediately so the next step
/// of the chain can pick it up.
fn warm_passes(cfg: &PipelineConfig, store: &Mutex<FeatureStore>) -> Result<SweepSummary> {
    let (n1, n2) = cfg.shape();
    let settings = cfg.ctm_settings();
    let row = |i: usize| -> Result<SweepSummary> {
        let mut s = SweepSummary::default();
        let steps = (1..n2).map(|j| (j - 1, j, Role::WarmForward)).chain((0..n2.saturating_sub(1)).rev().map(|j| (j + 1, j, Role::WarmBackward)));
        for (from, to, role) in steps {
            let params = cfg.params_at(i, to);
            let id = record_id(cfg, params, role);
            if store.lock().unwrap().contains(&id) {
                s.skipped += 1;
                continue;
            }
            let source = {
                let st = store.lock().unwrap();
                selected(cfg, &st, cfg.params_at(i, from)).map(|r| st.load_payload(&r))
            };
            let Some(Ok(source)) = source else { continue };
            let seed = derive_seed(cfg.seed, params, cfg.su.bond_dim, role);
            let run = source.to_state().map_err(|e| e.to_string()).and_then(|state| {
                evolve_from(&state, params, &cfg.su_config(seed)).map_err(|e| e.to_string())
            });
            let run = run.map_err(|e| phasemap_core::ipeps::SuError::Config(e));
            s.add(&store_run(cfg, store, id.clone(), role, params, seed, run)?);
            let entry = store.lock().unwrap().get(&id).cloned().expect("just inserted");
            s.failed += contract_one(store, &entry, settings)?.failed;
        }
        Ok(s)
    };
    let parts = pool(cfg)?.install(|| (0..n1).into_par_iter().map(row).collect::<Result<Vec<_>>>())?;
    let mut summary = SweepSummary::default();
    for p in &parts {
        summary.add(p);
    }
    Ok(summary)
}

/// Collapses every cell's candidates to the best one.
fn write_post_selected_view(cfg: &PipelineConfig, store: &FeatureStore) -> Result<()> {
    let mut cells_out = Vec::new();
    for (i, j) in cells(cfg) {
        let params = cfg.params_at(i, j);
        let ranked = ranked_candidates(cfg, store, params);
        let Some(best) = selected(cfg, store, params) else { continue };
        let energy = store.energy(&best.id, &ctm_fingerprint(cfg.ctm_settings())).and_then(|e| e.energy);
        cells_out.push(ViewEntry {
            params: params.into(),
            bond_dim: cfg.su.bond_dim,
            record: best.id,
            energy,
            candidates: ranked.iter().map(|(r, e)| (r.id.clone(), e.and_then(|e| e.energy))).collect(),
        });
    }
    store.write_view(&PostSelectedView { format_version: STORE_VERSION, ctm: ctm_fingerprint(cfg.ctm_settings()), cells: cells_out })
}

fn feature_of(store: &FeatureStore, cfg: &PipelineConfig, entry: &RecordEntry, kind: FeatureKind) -> Result<Vec<f64>> {
    match kind {
        FeatureKind::Lambda => Ok(features_from_weights(&store.load_payload(entry)?.weights)),
        FeatureKind::Rho2 => {
            let fp = ctm_fingerprint(cfg.ctm_settings());
            let e = store
                .energy(&entry.id, &fp)
                .ok_or_else(|| PipelineError::Argument(format!("record {} has no density matrices; run `energy` first", entry.id)))?;
            let bond: Bond = cfg.mapper.rho2_bond.into();
            store
                .load_rho2(e)?
                .into_iter()
                .find(|(b, _)| *b == bond)
                .map(|(_, v)| v)
                .ok_or_else(|| PipelineError::Store(format!("record {} lacks ρ² on bond {}", entry.id, bond.name())))
        }
    }
}

/// Feature grid of the configured sweep: the post-selected record per cell,
/// or every random replica in random-init mode.
pub fn load_grid(cfg: &PipelineConfig, kind: FeatureKind) -> Result<ParameterGrid> {
    let store = FeatureStore::open(&cfg.store_dir())?;
    if store.records().is_empty() {
        return Err(PipelineError::Argument(format!("feature store {} is empty", store.root().display())));
    }
    let fp = ctm_fingerprint(cfg.ctm_settings());
    let view = match cfg.sweep.mode {
        SweepMode::PostSelected => Some(store.read_view()?.ok_or_else(|| {
            PipelineError::Argument("no post-selected view; run `sweep` or `energy` first".into())
        })?),
        SweepMode::RandomInit => None,
    };
    let mut grid_cells = Vec::new();
    for (i, j) in cells(cfg) {
        let params = cfg.params_at(i, j);
        let ids: Vec<String> = match &view {
            Some(v) => {
                let c = v
                    .cells
                    .iter()
                    .find(|c| ModelParams::from(c.params) == params && c.bond_dim == cfg.su.bond_dim)
                    .ok_or_else(|| PipelineError::Argument(format!("no post-selected state at cell ({i}, {j})")))?;
                vec![c.record.clone()]
            }
            None => (0..cfg.sweep.replicas).map(|replica| record_id(cfg, params, Role::Random { replica })).collect(),
        };
        let mut records = Vec::with_capacity(ids.len());
        for id in ids {
            let entry = store
                .get(&id)
                .ok_or_else(|| PipelineError::Argument(format!("store does not cover cell ({i}, {j}): missing {id}")))?;
            if entry.payload.is_none() {
                return Err(PipelineError::Argument(format!("record {id} at cell ({i}, {j}) failed: {}", entry.error.as_deref().unwrap_or("no state"))));
            }
            records.push(FeatureRecord {
                params,
                feature: feature_of(&store, cfg, entry, kind)?,
                kind,
                bond_dim: entry.bond_dim,
                seed: entry.seed,
                converged: entry.converged,
                energy: store.energy(&id, &fp).and_then(|e| e.energy),
            });
        }
        grid_cells.push(records);
    }
    let (a1, a2) = cfg.axes();
    Ok(ParameterGrid::new(a1, a2, grid_cells)?)
}

/// Writes `features-<kind>.csv` into the output directory.
pub fn cmd_features(cfg: &PipelineConfig, kind: FeatureKind) -> Result<PathBuf> {
    let grid = load_grid(cfg, kind)?;
    let mut text = format!("{},{},seed,converged,energy", grid.axis1.name, grid.axis2.name);
    for k in 0..grid.feature_len() {
        let _ = write!(text, ",f{k}");
    }
    text.push('\n');
    let (n1, n2) = grid.shape();
    for c in 0..n1 * n2 {
        let (a1, a2) = grid.values(c);
        let (i, j) = grid.coords(c);
        for r in grid.cell(i, j) {
            let energy = r.energy.map(|e| format!("{e:.16e}")).unwrap_or_default();
            let _ = write!(text, "{a1:.16e},{a2:.16e},{},{},{energy}", r.seed, r.converged);
            for v in &r.feature {
                let _ = write!(text, ",{v:.16e}");
            }
            text.push('\n');
        }
    }
    fs::create_dir_all(&cfg.output)?;
    let path = cfg.output.join(format!("features-{}.csv", kind.name()));
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Runs the mapping loop and writes one CSV per iteration, the boundary
/// CSV and a plain-text report.
pub fn cmd_map(cfg: &PipelineConfig, kind: FeatureKind) -> Result<MappingResult> {
    let grid = load_grid(cfg, kind)?;
    let result = map_phase_diagram(&grid, &cfg.mapper_config())?;
    let dir = cfg.output.join("maps").join(kind.name());
    fs::create_dir_all(&dir)?;
    for map in &result.maps {
        let mut buf = Vec::new();
        write_map_csv(&grid, map, &mut buf)?;
        write_atomic(&dir.join(format!("iteration-{}.csv", map.iteration)), &buf)?;
    }
    let mut buf = Vec::new();
    write_boundaries_csv(&grid, &result.boundaries, &mut buf)?;
    write_atomic(&dir.join("boundaries.csv"), &buf)?;
    write_atomic(&dir.join("report.txt"), map_report(&grid, &result).as_bytes())?;
    Ok(result)
}

pub fn map_report(grid: &ParameterGrid, result: &MappingResult) -> String {
    let mut s = String::new();
    let (n1, n2) = grid.shape();
    let _ = writeln!(s, "grid: {} × {} ({} × {}), {} replica(s), {} features", n1, n2, grid.axis1.name, grid.axis2.name, grid.replicas(), grid.kind());
    let _ = writeln!(s, "iterations: {} ({})", result.maps.len(), if result.exhausted { "all anomalies explained" } else { "iteration cap reached" });
    for m in &result.maps {
        let r = m.region;
        let span = |axis: &phasemap_core::mapper::Axis, a: usize, b: usize| format!("{}∈[{}, {}]", axis.name, axis.values[a], axis.values[b - 1]);
        let _ = writeln!(
            s,
            "  iteration {}: region {} {} ({} examples, {} unconverged), normalization {:.6e}, threshold {}, train {:.2}s, final loss {:.3e}",
            m.iteration,
            span(&grid.axis1, r.i0, r.i1),
            span(&grid.axis2, r.j0, r.j1),
            m.n_examples,
            m.unconverged_in_region,
            m.normalization,
            m.threshold,
            m.train_seconds,
            m.final_loss
        );
        let anomalous = (0..m.scores.len()).filter(|&c| m.is_anomalous(c)).count();
        let _ = writeln!(s, "    anomalous cells: {anomalous} of {}", m.scores.len());
    }
    let _ = writeln!(s, "boundary cells: {}", result.boundaries.len());
    for b in &result.boundaries {
        let _ = writeln!(s, "  iteration {}: ({}, {}) at {}={}, {}={}", b.iteration, b.i, b.j, grid.axis1.name, b.axis1, grid.axis2.name, b.axis2);
    }
    s
}

/// Human-readable summary of the store and of the latest mapping report.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<String> {
    let store = FeatureStore::open(&cfg.store_dir())?;
    let fp = ctm_fingerprint(cfg.ctm_settings());
    let records = store.records();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let unconverged = records.iter().filter(|r| r.error.is_none() && !r.converged).count();
    let energies: Vec<&EnergyEntry> = records.iter().filter_map(|r| store.energy(&r.id, &fp)).collect();
    let mut s = String::new();
    let _ = writeln!(s, "store: {}", store.root().display());
    let _ = writeln!(s, "records: {} ({} failed, {} not converged)", records.len(), failed, unconverged);
    let _ = writeln!(
        s,
        "energies ({fp}): {} ({} failed, {} CTM not converged)",
        energies.len(),
        energies.iter().filter(|e| e.error.is_some()).count(),
        energies.iter().filter(|e| e.error.is_none() && !e.ctm_converged).count()
    );
    if let Some(view) = store.read_view()? {
        let _ = writeln!(s, "post-selected cells: {}", view.cells.len());
        for c in &view.cells {
            let p = ModelParams::from(c.params);
            let e = c.energy.map(|e| format!("{e:.10}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "  j_perp={} j_par={} j_x={}: {} E={e} of {} candidate(s)", p.j_perp, p.j_par, p.j_x, c.record, c.candidates.len());
        }
    }
    let report = cfg.maps_dir().join("report.txt");
    if report.exists() {
        let _ = writeln!(s, "\nmapping ({}):", report.display());
        s.push_str(&fs::read_to_string(report)?);
    }
    Ok(s)
}
