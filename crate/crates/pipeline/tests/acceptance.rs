//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Sweep results are cached under the cargo target directory, so only the
//! first run pays for the simple-update and CTM work. Criterion 7 takes
//! hours on one core; it is evaluated when its store is complete and run
//! only with `--include-ignored` / `--ignored` (or `PHASEMAP_ACCEPTANCE_LONG=1`).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use phasemap_core::autoencoder::{Activation, MlpAutoencoder};
use phasemap_core::ctm::{all_rdm2, ctm_converge, energy, CtmSettings, Rdm2};
use phasemap_core::mapper::{branch_gap, map_phase_diagram, FeatureKind, MapperConfig, MappingResult};
use phasemap_core::model::{build_gates, Bond, ModelParams};
use phasemap_pipeline::store::{decode_rho2, FeatureStore};
use phasemap_pipeline::{cmd_energy, cmd_map, cmd_sweep, load_grid, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FRUSTRATED_CRITICAL: f64 = 2.3279;
const UNFRUSTRATED_CRITICAL: f64 = 2.5220;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Common part of every benchmark configuration: D=4 with χ=D², the short
/// time-step schedule.
fn config(name: &str, body: &str) -> PipelineConfig {
    let text = format!(
        "seed = 1\nworkers = {}\noutput = {:?}\n{body}",
        workers(),
        root().join(name).display().to_string()
    );
    PipelineConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"))
}

fn frustrated_body(start: f64, steps: usize) -> String {
    format!(
        r#"
[grid]
j_par = 1.0
j_x = 1.0
axis1 = {{ coupling = "j_x", start = 1.0 }}
axis2 = {{ coupling = "j_perp", start = {start}, stop = 2.8, steps = {steps} }}
[su]
bond_dim = 4
tau_schedule = [0.1, 0.05, 0.01]
[ctm]
chi = 16
[sweep]
replicas = 3
[mapper]
initial_region = [0, 1, 0, 3]
"#
    )
}

/// The fully frustrated cut J⊥ ∈ [1.8, 2.8], post-selected.
fn frustrated_cut() -> PipelineConfig {
    let cfg = config("frustrated", &frustrated_body(1.8, 20));
    cmd_sweep(&cfg).expect("frustrated sweep");
    cfg
}

/// The same cut extended down to J⊥ = 0.85 so that twenty training cells
/// fit below the transition; shares the store of [`frustrated_cut`].
fn extended_cut() -> PipelineConfig {
    frustrated_cut();
    let cfg = config("frustrated", &frustrated_body(0.85, 39));
    cmd_sweep(&cfg).expect("extended sweep");
    cfg
}

fn with_region(cfg: &PipelineConfig, region: [usize; 4]) -> PipelineConfig {
    let mut c = cfg.clone();
    c.mapper.initial_region = Some(region);
    c.validate().unwrap();
    c
}

/// First anomalous cell of the first map, walking up axis 2 from the
/// training region.
fn jump_cell(result: &MappingResult) -> Option<usize> {
    let first = &result.maps[0];
    result.boundaries.iter().filter(|b| b.iteration == 0 && b.j >= first.region.j1).map(|b| b.j).min()
}

fn axis2(cfg: &PipelineConfig) -> Vec<f64> {
    cfg.axes().1.values
}

// ---------------------------------------------------------------------------
// Independent spin-½ operators for oracles: four spins ordered
// (dimer i layer 1, dimer i layer 2, dimer j layer 1, dimer j layer 2).

type Mat = Vec<Vec<f64>>;

fn zeros(n: usize) -> Mat {
    vec![vec![0.0; n]; n]
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let mut c = zeros(n);
    for i in 0..n {
        for k in 0..n {
            if a[i][k] != 0.0 {
                for j in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    c
}

/// `Sᵃ·Sᵇ` on spins `a`, `b` of an `n`-spin register, built bitwise.
fn heisenberg_pair(n: usize, a: usize, b: usize) -> Mat {
    let dim = 1 << n;
    let mut h = zeros(dim);
    let bit = |s: usize, k: usize| (s >> (n - 1 - k)) & 1;
    for s in 0..dim {
        let (sa, sb) = (bit(s, a), bit(s, b));
        h[s][s] += if sa == sb { 0.25 } else { -0.25 };
        if sa != sb {
            let flipped = s ^ (1 << (n - 1 - a)) ^ (1 << (n - 1 - b));
            h[flipped][s] += 0.5;
        }
    }
    h
}

/// Bond Hamiltonian with a quarter of each dimer's intradimer term.
fn bond_hamiltonian(p: ModelParams) -> Mat {
    let mut h = zeros(16);
    let terms = [
        (0, 2, p.j_par),
        (1, 3, p.j_par),
        (0, 3, p.j_x),
        (1, 2, p.j_x),
        (0, 1, 0.25 * p.j_perp),
        (2, 3, 0.25 * p.j_perp),
    ];
    for (a, b, c) in terms {
        let t = heisenberg_pair(4, a, b);
        for i in 0..16 {
            for j in 0..16 {
                h[i][j] += c * t[i][j];
            }
        }
    }
    h
}

/// `exp(m)` by scaling and squaring with a 30-term Taylor series.
fn expm_taylor(m: &Mat) -> Mat {
    let n = m.len();
    let norm: f64 = m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let mut s = 0;
    while norm / f64::from(1u32 << s) > 0.25 {
        s += 1;
    }
    let scale = 1.0 / f64::from(1u32 << s);
    let a: Mat = m.iter().map(|r| r.iter().map(|x| x * scale).collect()).collect();
    let mut result = zeros(n);
    let mut term = zeros(n);
    for i in 0..n {
        result[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for k in 1..=30 {
        term = mat_mul(&term, &a);
        for row in term.iter_mut() {
            row.iter_mut().for_each(|x| *x /= k as f64);
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = mat_mul(&result, &result);
    }
    result
}

fn dimer_dot() -> Mat {
    heisenberg_pair(2, 0, 1)
}

/// `⟨S₁·S₂⟩` of dimer A from a two-dimer density matrix.
fn intradimer_correlation(rho: &[f64]) -> f64 {
    let op = dimer_dot();
    let mut s = 0.0;
    for a in 0..4 {
        for a2 in 0..4 {
            for b in 0..4 {
                s += rho[(a * 4 + b) * 16 + a2 * 4 + b] * op[a2][a];
            }
        }
    }
    s
}

fn trace_product(rho: &Rdm2, h: &Mat) -> f64 {
    let m = rho.matrix.data();
    (0..16).map(|i| (0..16).map(|j| m[i * 16 + j] * h[j][i]).sum::<f64>()).sum()
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let cfg = config(
        "dimer",
        r#"
[grid]
j_par = 0.0
j_x = 0.0
axis1 = { coupling = "j_x", start = 0.0 }
axis2 = { coupling = "j_perp", start = 1.0 }
[su]
bond_dim = 4
[ctm]
chi = 16
"#,
    );
    let _ = std::fs::remove_dir_all(&cfg.output);
    let start = Instant::now();
    let sweep = cmd_sweep(&cfg).expect("dimer sweep");
    let grid = load_grid(&cfg, FeatureKind::Lambda).expect("dimer grid");
    let elapsed = start.elapsed().as_secs_f64();
    let r = &grid.cell(0, 0)[0];
    let e = r.energy.unwrap_or(f64::NAN);
    let store = FeatureStore::open(&cfg.store_dir()).unwrap();
    let mut worst_lambda = 0.0f64;
    for rec in store.records() {
        let p = store.load_payload(rec).unwrap();
        for w in &p.weights {
            let want = [1.0, 0.0, 0.0, 0.0];
            worst_lambda = w.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(worst_lambda, f64::max);
        }
    }
    let ok = sweep.failed == 0 && r.converged && (e + 0.75).abs() <= 1e-6 && worst_lambda <= 1e-8 && elapsed < 60.0;
    verdict(
        ok,
        format!("E = {e:.12} (|ΔE| = {:.1e}), max |λ − (1,0,0,0)| = {worst_lambda:.1e}, converged = {}, {elapsed:.1}s", (e + 0.75).abs(), r.converged),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = ModelParams::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
        let tau = rng.gen_range(0.001..0.5);
        let gates = build_gates(p, tau).unwrap();
        let h = bond_hamiltonian(p);
        let oracle = expm_taylor(&h.iter().map(|r| r.iter().map(|x| -tau * x).collect()).collect());
        for bond in Bond::ALL {
            let g = gates.gate(bond).data();
            let diff: f64 = (0..256).map(|k| (g[k] - oracle[k / 16][k % 16]).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff);
        }
    }
    verdict(worst <= 1e-10, format!("max Frobenius distance {worst:.2e} over 20 draws × 4 bonds"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..5 {
        let input = rng.gen_range(4..12);
        let hidden = rng.gen_range(3..10);
        let latent = rng.gen_range(1..4);
        let act = if k % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let model = MlpAutoencoder::new(input, &[hidden], latent, act, 100 + k).unwrap();
        let batch: Vec<Vec<f64>> = (0..rng.gen_range(1..6)).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let analytic = model.gradient(&batch).unwrap().flatten();
        let theta = model.params();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            m.set_params(&t).unwrap();
            let up = m.loss(&batch).unwrap();
            t[i] = theta[i] - h;
            m.set_params(&t).unwrap();
            let down = m.loss(&batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
    }
    verdict(worst <= 1e-4, format!("max relative deviation {worst:.2e} over {count} parameters of 5 models"))
}

fn criterion_4() -> Outcome {
    let cfg = extended_cut();
    let store = FeatureStore::open(&cfg.store_dir()).unwrap();
    let view = store.read_view().unwrap().expect("post-selected view");
    let picks: Vec<_> = view.cells.iter().filter(|c| store.get(&c.record).is_some_and(|r| r.converged)).step_by(3).collect();
    let settings = CtmSettings { chi: 16, tol: 1e-10, max_iter: 500 };
    let (mut asym, mut trace, mut min_eig, mut e_diff) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    let mut used = 0;
    let mut dtaf = 0;
    for c in &picks {
        let rec = store.get(&c.record).unwrap();
        let state = store.load_payload(rec).unwrap().to_state().unwrap();
        let env = ctm_converge(&state, settings).unwrap();
        if !env.converged {
            continue;
        }
        let params: ModelParams = c.params.into();
        let rdms = all_rdm2(&state, &env).unwrap();
        let h = bond_hamiltonian(params);
        let assembled = 0.5 * rdms.iter().map(|r| trace_product(r, &h)).sum::<f64>();
        let ctm_energy = energy(&state, &env, params).unwrap();
        for r in &rdms {
            asym = asym.max(r.asymmetry());
            trace = trace.max((r.trace() - 1.0).abs());
            min_eig = min_eig.min(r.eigenvalues().into_iter().fold(f64::INFINITY, f64::min));
        }
        if intradimer_correlation(rdms[0].matrix.data()) > 0.0 {
            dtaf += 1;
        }
        e_diff = e_diff.max((assembled - ctm_energy).abs());
        used += 1;
    }
    let ok = used >= 10 && asym <= 1e-8 && trace <= 1e-8 && min_eig >= -1e-8 && e_diff <= 1e-8;
    verdict(
        ok,
        format!("{used} states ({dtaf} with parallel dimers): asymmetry {asym:.1e}, |tr−1| {trace:.1e}, min eig {min_eig:.1e}, |E_ρ − E_ctm| {e_diff:.1e}"),
    )
}

struct FrustratedMaps {
    lambda_jump: Option<usize>,
    train_seconds: Vec<f64>,
}

fn criterion_5(maps: &mut FrustratedMaps) -> Outcome {
    let cfg = frustrated_cut();
    let result = cmd_map(&cfg, FeatureKind::Lambda).expect("lambda map");
    maps.train_seconds.extend(result.maps.iter().map(|m| m.train_seconds));
    let values = axis2(&cfg);
    let Some(j) = jump_cell(&result) else {
        return verdict(false, "no score jump above the training region".into());
    };
    maps.lambda_jump = Some(j);
    let at = 0.5 * (values[j - 1] + values[j]);
    verdict(
        (at - FRUSTRATED_CRITICAL).abs() <= 0.15,
        format!("jump between J⊥ = {} and {} (midpoint {at:.3}, reference {FRUSTRATED_CRITICAL})", values[j - 1], values[j]),
    )
}

fn unfrustrated_cut() -> PipelineConfig {
    let cfg = config(
        "unfrustrated",
        r#"
[grid]
j_par = 1.0
j_x = 0.0
axis1 = { coupling = "j_x", start = 0.0 }
axis2 = { coupling = "j_perp", start = 2.0, stop = 3.2, steps = 24 }
[su]
bond_dim = 6
tau_schedule = [0.1, 0.05, 0.01]
[sweep]
mode = "random_init"
replicas = 1
save_states = false
[mapper]
initial_region = [0, 1, 0, 3]
"#,
    );
    cmd_sweep(&cfg).expect("unfrustrated sweep");
    cfg
}

fn criterion_6(train: &mut Vec<f64>) -> Outcome {
    let cfg = unfrustrated_cut();
    let result = cmd_map(&cfg, FeatureKind::Lambda).expect("unfrustrated map");
    train.extend(result.maps.iter().map(|m| m.train_seconds));
    let values = axis2(&cfg);
    // where the simple-update state itself restores spin symmetry: the
    // triplet multiplet λ₂ ≈ λ₃ ≈ λ₄ on every bond (split by Néel order)
    let grid = load_grid(&cfg, FeatureKind::Lambda).unwrap();
    let d = grid.cell(0, 0)[0].bond_dim;
    let symmetric = (0..values.len()).find(|&j| {
        grid.cell(0, j).iter().all(|r| r.feature.chunks(d).all(|w| (w[1] - w[3]) < 0.01 * w[1]))
    });
    let symmetric = symmetric.map_or("never".to_string(), |j| format!("J⊥ = {}", values[j]));
    let Some(j) = jump_cell(&result) else {
        return verdict(false, format!("no anomalous cell above the training region; λ triplet degenerate from {symmetric}"));
    };
    verdict(
        (values[j] - UNFRUSTRATED_CRITICAL).abs() <= 0.4,
        format!(
            "first anomalous cell J⊥ = {} (reference {UNFRUSTRATED_CRITICAL}); λ triplet degenerate from {symmetric}",
            values[j]
        ),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Dtaf,
    Baf,
    Ds,
}

/// Post hoc phase label: parallel dimer spins → DTAF; antiparallel with a
/// product-like (single dominant λ) state → DS; otherwise BAF.
fn phase_of(correlation: f64, weights: &[Vec<f64>; 4]) -> Phase {
    let product = weights.iter().all(|w| w.iter().skip(1).all(|x| *x < 1e-3 * w[0]));
    if correlation > 0.0 {
        Phase::Dtaf
    } else if product {
        Phase::Ds
    } else {
        Phase::Baf
    }
}

fn three_phase_config() -> PipelineConfig {
    config(
        "three-phase",
        r#"
[grid]
j_par = 1.0
axis1 = { coupling = "j_x", start = 0.0, stop = 1.0, steps = 10 }
axis2 = { coupling = "j_perp", start = 1.6, stop = 3.2, steps = 16 }
[su]
bond_dim = 4
tau_schedule = [0.1, 0.05, 0.01]
[ctm]
chi = 16
[sweep]
replicas = 3
[mapper]
initial_region = [8, 11, 0, 3]
"#,
    )
}

fn criterion_7(run_long: bool, train: &mut Vec<f64>) -> Outcome {
    let cfg = three_phase_config();
    let complete = load_grid(&cfg, FeatureKind::Lambda).is_ok();
    if !complete && !run_long {
        return Outcome { status: Status::Skip, detail: "long-running; run with --include-ignored".into() };
    }
    if !complete {
        cmd_sweep(&cfg).expect("three-phase sweep");
    }
    let result = cmd_map(&cfg, FeatureKind::Lambda).expect("three-phase map");
    train.extend(result.maps.iter().map(|m| m.train_seconds));
    let store = FeatureStore::open(&cfg.store_dir()).unwrap();
    let view = store.read_view().unwrap().expect("view");
    let (n1, n2) = cfg.shape();
    let mut seen = Vec::new();
    for region in result.regions() {
        for (i, j) in region.cells() {
            let p = cfg.params_at(i, j);
            let cell = view.cells.iter().find(|c| ModelParams::from(c.params) == p).expect("cell");
            let rec = store.get(&cell.record).unwrap();
            let weights = store.load_payload(rec).unwrap().weights;
            let e = store.energy(&rec.id, &format!("chi={},tol={:e},max_iter={}", 16, cfg.ctm.tol, cfg.ctm.max_iter)).expect("energy");
            let rho = decode_rho2(&std::fs::read(cfg.store_dir().join("rho2").join(e.rho2_payload.as_ref().unwrap())).unwrap()).unwrap();
            let phase = phase_of(intradimer_correlation(&rho[0].1), &weights);
            if !seen.contains(&phase) {
                seen.push(phase);
            }
        }
    }
    let regions: Vec<String> = result.regions().iter().map(|r| format!("[{}..{})×[{}..{})", r.i0, r.i1, r.j0, r.j1)).collect();
    verdict(
        result.maps.len() == 3 && seen.len() == 3,
        format!("{} iterations on {n1}×{n2}, regions {}, phases covered {seen:?}", result.maps.len(), regions.join(" "), ),
    )
}

fn criterion_8(train: &mut Vec<f64>) -> Outcome {
    let cfg = extended_cut();
    let values = axis2(&cfg);
    let mut jumps = Vec::new();
    for n_ex in [1usize, 20] {
        let c = with_region(&cfg, [0, 1, 0, n_ex]);
        let grid = load_grid(&c, FeatureKind::Lambda).unwrap();
        let result = map_phase_diagram(&grid, &one_iteration(&c)).unwrap();
        train.extend(result.maps.iter().map(|m| m.train_seconds));
        jumps.push(jump_cell(&result));
    }
    let (Some(a), Some(b)) = (jumps[0], jumps[1]) else {
        return verdict(false, format!("missing jump: N_ex=1 → {:?}, N_ex=20 → {:?}", jumps[0], jumps[1]));
    };
    verdict(
        a.abs_diff(b) <= 1,
        format!("first anomalous cell: N_ex=1 → J⊥ = {}, N_ex=20 → J⊥ = {} (N_epochs·N_ex = {})", values[a], values[b], cfg.mapper.epoch_budget),
    )
}

fn one_iteration(cfg: &PipelineConfig) -> MapperConfig {
    let mut m = cfg.mapper_config();
    m.max_iterations = 1;
    m
}

fn criterion_9() -> Outcome {
    let cfg = config(
        "hysteresis",
        r#"
[grid]
j_par = 1.0
j_x = 0.3
axis1 = { coupling = "j_x", start = 0.3 }
axis2 = { coupling = "j_perp", start = 0.7, stop = 1.3, steps = 12 }
[su]
bond_dim = 4
tau_schedule = [0.1, 0.05, 0.01]
[ctm]
chi = 16
[sweep]
mode = "random_init"
replicas = 5
[mapper]
initial_region = [0, 1, 0, 3]
"#,
    );
    cmd_sweep(&cfg).expect("hysteresis sweep");
    // energies only serve the post hoc location of the transition
    cmd_energy(&cfg).expect("hysteresis energies");
    let grid = load_grid(&cfg, FeatureKind::Lambda).unwrap();
    let result = map_phase_diagram(&grid, &one_iteration(&cfg)).unwrap();
    let map = &result.maps[0];
    let store = FeatureStore::open(&cfg.store_dir()).unwrap();
    let values = axis2(&cfg);
    let fp = format!("chi=16,tol={:e},max_iter={}", cfg.ctm.tol, cfg.ctm.max_iter);
    // the phase of the lowest-energy replica of each cell
    let mut ground = Vec::new();
    let mut labels = Vec::new();
    for j in 0..values.len() {
        let mut best: Option<(f64, Phase)> = None;
        let mut cell_labels = Vec::new();
        for r in grid.cell(0, j) {
            let rec = store.records().iter().find(|x| x.seed == r.seed && ModelParams::from(x.params) == r.params).unwrap();
            let e = store.energy(&rec.id, &fp).expect("energy");
            let rho = store.load_rho2(e).unwrap();
            let phase = phase_of(intradimer_correlation(&rho[0].1), &store.load_payload(rec).unwrap().weights);
            cell_labels.push(phase);
            if let Some(en) = e.energy {
                if best.is_none_or(|(b, _)| en < b) {
                    best = Some((en, phase));
                }
            }
        }
        ground.push(best.map(|b| b.1));
        labels.push(cell_labels);
    }
    let Some(line) = (1..values.len()).find(|&j| ground[j - 1] == Some(Phase::Dtaf) && ground[j] == Some(Phase::Baf)) else {
        return verdict(false, format!("no DTAF→BAF switch of the lowest-energy state: {ground:?}"));
    };
    let adjacent = line.saturating_sub(2)..(line + 2).min(values.len());
    let mut best_gap = (0.0, 0);
    for j in adjacent.clone() {
        let gap = branch_gap(&map.replica_scores[grid.index(0, j)]);
        if gap > best_gap.0 {
            best_gap = (gap, j);
        }
    }
    let (gap, j) = best_gap;
    verdict(
        gap >= 5.0,
        format!(
            "transition between J⊥ = {} and {}; largest replica-score gap {gap:.1}× at J⊥ = {} (replica phases {:?})",
            values[line - 1],
            values[line],
            values[j],
            labels[j]
        ),
    )
}

fn criterion_11(maps: &FrustratedMaps, train: &mut Vec<f64>) -> Outcome {
    let cfg = frustrated_cut();
    let result = cmd_map(&cfg, FeatureKind::Rho2).expect("rho2 map");
    train.extend(result.maps.iter().map(|m| m.train_seconds));
    let values = axis2(&cfg);
    match (maps.lambda_jump, jump_cell(&result)) {
        (Some(a), Some(b)) => verdict(a.abs_diff(b) <= 1, format!("jump cell J⊥ = {} (λ) vs {} (ρ²)", values[a], values[b])),
        (a, b) => verdict(false, format!("missing jump: λ → {a:?}, ρ² → {b:?}")),
    }
}

fn evaluate(f: impl FnOnce() -> Outcome) -> (Outcome, f64) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    (outcome, start.elapsed().as_secs_f64())
}

/// Prints the criterion's line; false on failure.
fn report(n: usize, (outcome, seconds): (Outcome, f64)) -> bool {
    let tag = match outcome.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("criterion {n:>2}: {tag} — {} [{seconds:.1}s]", outcome.detail);
    !matches!(outcome.status, Status::Fail)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let run_long = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("PHASEMAP_ACCEPTANCE_LONG").is_ok_and(|v| v == "1");
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("off")).try_init();

    let mut ok = true;
    let mut train = Vec::new();
    let mut maps = FrustratedMaps { lambda_jump: None, train_seconds: Vec::new() };
    ok &= report(1, evaluate(criterion_1));
    ok &= report(2, evaluate(criterion_2));
    ok &= report(3, evaluate(criterion_3));
    ok &= report(4, evaluate(criterion_4));
    ok &= report(5, evaluate(|| criterion_5(&mut maps)));
    ok &= report(6, evaluate(|| criterion_6(&mut train)));
    ok &= report(7, evaluate(|| criterion_7(run_long, &mut train)));
    ok &= report(8, evaluate(|| criterion_8(&mut train)));
    ok &= report(9, evaluate(criterion_9));
    // the ρ² trainings of criterion 11 count towards criterion 10
    let eleven = evaluate(|| criterion_11(&maps, &mut train));
    train.extend(maps.train_seconds.iter().copied());
    ok &= report(
        10,
        evaluate(|| {
            let worst = train.iter().copied().fold(0.0, f64::max);
            verdict(!train.is_empty() && worst < 10.0, format!("{} trainings, slowest {worst:.2}s", train.len()))
        }),
    );
    ok &= report(11, eleven);
    if !ok {
        std::process::exit(1);
    }
}
