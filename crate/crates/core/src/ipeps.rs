//! Two-tensor checkerboard iPEPS optimized by simple-update imaginary time
//! evolution.
//!
//! Site tensors carry indices `(physical, up, left, down, right)`. Tensor A
//! sits on one sublattice and B on the other, so every bond connects A to B.
//! The four bonds of the unit cell each carry a weight vector λ (the diagonal
//! bond matrix of the simple update); those weights are the feature vector
//! handed to the autoencoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{build_gates, Bond, GateSet, ModelParams, DIMER_DIM};
use crate::tensor::{contract, permute, qr_thin, svd_leading, Tensor, TensorError};

/// Weights below this fraction of the largest weight on a bond are treated
/// as exact zeros when divided back out.
pub const PINV_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SuError {
    #[error("simple-update step on bond {bond:?} failed at {params:?}: {source}")]
    Step {
        bond: Bond,
        params: Option<ModelParams>,
        #[source]
        source: TensorError,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IPepsState {
    pub tensor_a: Tensor,
    pub tensor_b: Tensor,
    /// Bond weights in [`Bond::ALL`] order.
    pub bond_weights: [Vec<f64>; 4],
    pub d: usize,
    pub bond_dim: usize,
}

/// Legs of A and B joined by `bond`.
pub fn bond_legs(bond: Bond) -> (usize, usize) {
    match bond {
        Bond::ARight => (4, 2),
        Bond::ADown => (3, 1),
        Bond::ALeft => (2, 4),
        Bond::AUp => (1, 3),
    }
}

/// Bond attached to a given leg (1..=4) of tensor A.
pub fn bond_of_a_leg(leg: usize) -> Bond {
    match leg {
        1 => Bond::AUp,
        2 => Bond::ALeft,
        3 => Bond::ADown,
        4 => Bond::ARight,
        _ => panic!("leg {leg} is not an auxiliary leg"),
    }
}

/// Bond attached to a given leg (1..=4) of tensor B.
pub fn bond_of_b_leg(leg: usize) -> Bond {
    match leg {
        1 => Bond::ADown,
        2 => Bond::ARight,
        3 => Bond::AUp,
        4 => Bond::ALeft,
        _ => panic!("leg {leg} is not an auxiliary leg"),
    }
}

fn normalize_weights(w: &mut [f64]) {
    let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        w.iter_mut().for_each(|x| *x /= n);
    }
}

fn guarded_inverse(w: &[f64]) -> Vec<f64> {
    let max = w.iter().fold(0.0f64, |m, x| m.max(*x));
    w.iter()
        .map(|&x| if x > PINV_GUARD * max && x > 0.0 { 1.0 / x } else { 0.0 })
        .collect()
}

fn normalize_max(t: Tensor) -> Tensor {
    let m = t.max_abs();
    if m > 0.0 {
        t.scaled(1.0 / m)
    } else {
        t
    }
}

fn inverse_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &x) in p.iter().enumerate() {
        inv[x] = i;
    }
    inv
}

impl IPepsState {
    pub fn weights(&self, bond: Bond) -> &[f64] {
        &self.bond_weights[bond.index()]
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        for (k, w) in self.bond_weights.iter().enumerate() {
            if w.len() != self.bond_dim {
                return Err(format!("bond {k} has {} weights, expected {}", w.len(), self.bond_dim));
            }
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(format!("bond {k} has negative or non-finite weights"));
            }
            if w.windows(2).any(|p| p[0] < p[1]) {
                return Err(format!("bond {k} weights are not descending"));
            }
            let n: f64 = w.iter().map(|x| x * x).sum();
            if (n - 1.0).abs() > 1e-10 {
                return Err(format!("bond {k} weights have norm² {n}"));
            }
        }
        let shape = [self.d, self.bond_dim, self.bond_dim, self.bond_dim, self.bond_dim];
        if self.tensor_a.shape() != shape || self.tensor_b.shape() != shape {
            return Err("site tensor extents disagree with bond weights".into());
        }
        Ok(())
    }

    /// Zero-pads every auxiliary index (and every weight vector) to `bond_dim`,
    /// or truncates to the leading entries when shrinking.
    pub fn resized(&self, bond_dim: usize) -> IPepsState {
        let shape = [self.d, bond_dim, bond_dim, bond_dim, bond_dim];
        let mut weights = self.bond_weights.clone();
        for w in weights.iter_mut() {
            w.resize(bond_dim, 0.0);
            normalize_weights(w);
        }
        IPepsState {
            tensor_a: self.tensor_a.resized(&shape),
            tensor_b: self.tensor_b.resized(&shape),
            bond_weights: weights,
            d: self.d,
            bond_dim,
        }
    }

    /// Keeps only the dominant weight on every bond, giving a product state
    /// embedded at the same bond dimension.
    pub fn project_to_product(&self) -> IPepsState {
        self.resized(1).resized(self.bond_dim)
    }

    /// Site tensors with `sqrt(λ)` absorbed on every leg, as used by
    /// contraction-based measurements. Virtual directions whose weight is
    /// below [`NEGLIGIBLE_WEIGHT`] of the bond's largest are dropped: their
    /// tensor entries were divided out by near-zero weights and would
    /// otherwise dominate the contracted network.
    pub fn absorbed_site_tensors(&self) -> (Tensor, Tensor) {
        let sq: Vec<Vec<f64>> = self
            .bond_weights
            .iter()
            .map(|w| {
                let cut = NEGLIGIBLE_WEIGHT * w.iter().cloned().fold(0.0, f64::max);
                w.iter().map(|&x| if x < cut { 0.0 } else { x.sqrt() }).collect()
            })
            .collect();
        let mut a = self.tensor_a.clone();
        let mut b = self.tensor_b.clone();
        for leg in 1..=4 {
            a = a.scale_axis(leg, &sq[bond_of_a_leg(leg).index()]);
            b = b.scale_axis(leg, &sq[bond_of_b_leg(leg).index()]);
        }
        (a, b)
    }

    /// Normalized one-site density matrices of A and B in the bond-weight
    /// environment. They keep changing when the physical content of a state
    /// evolves under fixed bond weights (e.g. a product state relaxing
    /// on-site), which the weights alone cannot detect.
    pub fn local_densities(&self) -> [Tensor; 2] {
        let site = |t: &Tensor, bond_of: fn(usize) -> Bond| {
            let mut t = t.clone();
            for leg in 1..=4 {
                t = t.scale_axis(leg, &self.bond_weights[bond_of(leg).index()]);
            }
            let m = t.to_matrix(1);
            let rho = &m * m.transpose();
            let tr = rho.trace();
            Tensor::from_matrix(&if tr > 0.0 { rho / tr } else { rho })
        };
        [site(&self.tensor_a, bond_of_a_leg), site(&self.tensor_b, bond_of_b_leg)]
    }

    pub fn scaled_sites(&self, fa: f64, fb: f64) -> IPepsState {
        let mut s = self.clone();
        s.tensor_a = s.tensor_a.scaled(fa);
        s.tensor_b = s.tensor_b.scaled(fb);
        s
    }
}

/// Relative bond weight below which a virtual direction is treated as absent
/// in contractions.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-6;

/// Random initial state: entries uniform in `[-1, 1]`, flat bond weights.
pub fn random_state(d: usize, bond_dim: usize, seed: u64) -> IPepsState {
    assert!(d >= 1 && bond_dim >= 1, "dimensions must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [d, bond_dim, bond_dim, bond_dim, bond_dim];
    let tensor_a = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..=1.0));
    let tensor_b = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..=1.0));
    let flat = vec![1.0 / (bond_dim as f64).sqrt(); bond_dim];
    IPepsState {
        tensor_a,
        tensor_b,
        bond_weights: [flat.clone(), flat.clone(), flat.clone(), flat],
        d,
        bond_dim,
    }
}

fn bond_update(state: &IPepsState, gate: &Tensor, bond: Bond) -> Result<IPepsState, TensorError> {
    let d = state.d;
    let dim = state.bond_dim;
    if gate.shape() != [d, d, d, d] {
        return Err(TensorError::Dimension(format!(
            "gate shape {:?} does not match physical dimension {d}",
            gate.shape()
        )));
    }
    let (la, lb) = bond_legs(bond);
    let env_a: Vec<usize> = (1..=4).filter(|&l| l != la).collect();
    let env_b: Vec<usize> = (1..=4).filter(|&l| l != lb).collect();

    let mut a = state.tensor_a.clone();
    for &l in &env_a {
        a = a.scale_axis(l, state.weights(bond_of_a_leg(l)));
    }
    let mut b = state.tensor_b.clone();
    for &l in &env_b {
        b = b.scale_axis(l, state.weights(bond_of_b_leg(l)));
    }

    // A -> Q_a R_a with R_a carrying (physical, bond)
    let perm_a = [env_a[0], env_a[1], env_a[2], 0, la];
    let pa = permute(&a, &perm_a)?;
    let rows_a = dim * dim * dim;
    let (q_a, r_a, ka) = qr_thin(pa.data(), rows_a, d * dim);

    // B -> L_b Q_b with L_b carrying (bond, physical)
    let perm_b = [env_b[0], env_b[1], env_b[2], lb, 0];
    let pb = permute(&b, &perm_b)?;
    let (q_b, r_b, kb) = qr_thin(pb.data(), rows_a, dim * d);

    let r_a = Tensor::new(vec![ka, d, dim], r_a)?.scale_axis(2, state.weights(bond));
    let r_b = Tensor::new(vec![kb, dim, d], r_b)?;
    let theta = contract(&r_a, &r_b, &[(2, 1)])?; // (ka, s, kb, s')
    let evolved = contract(&theta, gate, &[(1, 2), (3, 3)])?; // (ka, kb, t, t')
    let evolved = permute(&evolved, &[0, 2, 3, 1])?; // (ka, t, t', kb)

    let (u, s, v) = svd_leading(evolved.data(), ka * d, d * kb, dim)?;
    let k = s.len();
    let mut lam = s;
    lam.resize(dim, 0.0);
    normalize_weights(&mut lam);

    // new A: Q_a · U, padded to the full bond dimension
    let u = Tensor::new(vec![ka, d, k], u)?.resized(&[ka, d, dim]);
    let q_a = Tensor::new(vec![rows_a, ka], q_a)?;
    let a_new = contract(&q_a, &u, &[(1, 0)])?.reshape(&[dim, dim, dim, d, dim])?;
    let mut a_new = permute(&a_new, &inverse_permutation(&perm_a))?;
    for &l in &env_a {
        a_new = a_new.scale_axis(l, &guarded_inverse(state.weights(bond_of_a_leg(l))));
    }

    // new B: Vᵀ · Q_bᵀ
    let v = Tensor::new(vec![d, kb, k], v)?.resized(&[d, kb, dim]); // (t', kb, k)
    let q_b = Tensor::new(vec![rows_a, kb], q_b)?;
    let b_new = contract(&q_b, &v, &[(1, 1)])?.reshape(&[dim, dim, dim, d, dim])?; // (env.., t', k)
    let b_new = permute(&b_new, &[0, 1, 2, 4, 3])?; // (env.., k, t')
    let mut b_new = permute(&b_new, &inverse_permutation(&perm_b))?;
    for &l in &env_b {
        b_new = b_new.scale_axis(l, &guarded_inverse(state.weights(bond_of_b_leg(l))));
    }
    debug_assert!(k <= dim);

    let mut next = state.clone();
    next.tensor_a = normalize_max(a_new);
    next.tensor_b = normalize_max(b_new);
    next.bond_weights[bond.index()] = lam;
    Ok(next)
}

fn jittered(state: &IPepsState) -> IPepsState {
    let mut s = state.clone();
    let scale = 1e-13 * s.tensor_a.max_abs().max(s.tensor_b.max_abs());
    for (i, x) in s.tensor_a.data_mut().iter_mut().enumerate() {
        *x += scale * ((i as f64 * 0.618_033_988_7).fract() - 0.5);
    }
    for (i, x) in s.tensor_b.data_mut().iter_mut().enumerate() {
        *x += scale * ((i as f64 * 0.414_213_562_3).fract() - 0.5);
    }
    s
}

/// One simple-update step on `bond`: absorb the surrounding weights, apply
/// the two-site gate, re-split by truncated SVD to the state's bond dimension
/// and divide the surrounding weights back out. A failed SVD is retried once
/// on a slightly perturbed input.
pub fn su_step(state: &IPepsState, gate: &Tensor, bond: Bond) -> Result<IPepsState, SuError> {
    match bond_update(state, gate, bond) {
        Ok(s) => Ok(s),
        Err(TensorError::Decomposition(_)) => bond_update(&jittered(state), gate, bond)
            .map_err(|source| SuError::Step { bond, params: None, source }),
        Err(source) => Err(SuError::Step { bond, params: None, source }),
    }
}

/// Applies the gates of all four bonds in canonical order and returns the
/// largest change of any bond weight.
pub fn sweep(state: &mut IPepsState, gates: &GateSet) -> Result<f64, SuError> {
    let before = state.bond_weights.clone();
    for bond in Bond::ALL {
        *state = su_step(state, gates.gate(bond), bond)?;
    }
    Ok(lambda_delta(&before, &state.bond_weights))
}

pub fn lambda_delta(a: &[Vec<f64>; 4], b: &[Vec<f64>; 4]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuConfig {
    pub target_d: usize,
    /// Bond dimension of the short annealing stage.
    pub anneal_d: usize,
    pub anneal_sweeps: usize,
    /// Strictly descending. The first entry is also the annealing step.
    pub tau_schedule: Vec<f64>,
    pub sweeps_per_tau: usize,
    /// Threshold on the largest bond-weight change between sweeps.
    pub convergence_tol: f64,
    pub max_restarts: usize,
    pub seed: u64,
}

impl SuConfig {
    pub fn new(target_d: usize, seed: u64) -> Self {
        Self {
            target_d,
            anneal_d: 2 * target_d,
            anneal_sweeps: 10,
            tau_schedule: vec![0.1, 0.05, 0.01, 0.005, 0.001],
            sweeps_per_tau: 2000,
            convergence_tol: 1e-9,
            max_restarts: 3,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SuError> {
        if self.target_d == 0 || self.anneal_d == 0 {
            return Err(SuError::Config("bond dimensions must be positive".into()));
        }
        if self.tau_schedule.is_empty() {
            return Err(SuError::Config("empty imaginary time schedule".into()));
        }
        if self.tau_schedule.iter().any(|t| !(*t > 0.0)) {
            return Err(SuError::Config("time steps must be positive".into()));
        }
        if self.tau_schedule.windows(2).any(|w| w[0] <= w[1]) {
            return Err(SuError::Config("time steps must be strictly descending".into()));
        }
        if self.sweeps_per_tau == 0 || !(self.convergence_tol > 0.0) {
            return Err(SuError::Config("sweep cap and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Energy of one post-selection candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub seed: u64,
    pub converged: bool,
    pub energy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub state: IPepsState,
    pub converged: bool,
    /// Sweeps spent in the final attempt, all stages included.
    pub sweeps_used: usize,
    pub final_lambda_delta: f64,
    pub params: ModelParams,
    /// Seed of the attempt that produced `state`.
    pub seed: u64,
    pub restarts: usize,
    /// Bond-weight change per sweep in the last stage of the last attempt.
    pub delta_history: Vec<f64>,
    pub energy: Option<f64>,
    /// Filled by post-selection.
    pub candidates: Vec<Candidate>,
}

/// Seed of restart attempt `attempt` derived from the base seed.
pub fn restart_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct StageOutcome {
    converged: bool,
    sweeps: usize,
    delta: f64,
    history: Vec<f64>,
}

fn run_stages(
    state: &mut IPepsState,
    params: ModelParams,
    config: &SuConfig,
) -> Result<StageOutcome, SuError> {
    let mut total = 0;
    let mut last = StageOutcome { converged: false, sweeps: 0, delta: f64::INFINITY, history: vec![] };
    for &tau in &config.tau_schedule {
        let gates = build_gates(params, tau)
            .map_err(|e| SuError::Config(e.to_string()))?;
        let mut history = Vec::new();
        let mut converged = false;
        let mut delta = f64::INFINITY;
        let mut local = state.local_densities();
        for _ in 0..config.sweeps_per_tau {
            delta = sweep(state, &gates).map_err(|e| with_params(e, params))?;
            history.push(delta);
            total += 1;
            let next = state.local_densities();
            let local_delta = next[0].max_abs_diff(&local[0]).max(next[1].max_abs_diff(&local[1]));
            local = next;
            if delta < config.convergence_tol && local_delta < config.convergence_tol {
                converged = true;
                break;
            }
        }
        log::trace!("stage tau={tau}: {} sweeps, delta {delta:.3e}", history.len());
        last = StageOutcome { converged, sweeps: total, delta, history };
    }
    Ok(last)
}

fn with_params(e: SuError, params: ModelParams) -> SuError {
    match e {
        SuError::Step { bond, source, .. } => SuError::Step { bond, params: Some(params), source },
        other => other,
    }
}

/// Full optimization protocol: a short evolution at large bond dimension and
/// the largest time step, projection to a product state, then evolution at
/// the target bond dimension through the time-step schedule. Attempts whose
/// final stage does not converge are discarded and restarted from a derived
/// seed, up to `max_restarts` times; the last attempt is returned either way.
pub fn evolve(params: ModelParams, config: &SuConfig) -> Result<SimulationResult, SuError> {
    config.validate()?;
    let mut result = None;
    for attempt in 0..=config.max_restarts {
        let seed = restart_seed(config.seed, attempt);
        let mut state = random_state(DIMER_DIM, config.anneal_d, seed);
        if config.anneal_sweeps > 0 {
            let gates = build_gates(params, config.tau_schedule[0])
                .map_err(|e| SuError::Config(e.to_string()))?;
            for _ in 0..config.anneal_sweeps {
                sweep(&mut state, &gates).map_err(|e| with_params(e, params))?;
            }
        }
        let mut state = state.resized(1).resized(config.target_d);
        let outcome = run_stages(&mut state, params, config)?;
        log::debug!(
            "evolve {params:?} seed {seed}: converged={} sweeps={} delta={:.3e}",
            outcome.converged,
            outcome.sweeps,
            outcome.delta
        );
        let converged = outcome.converged;
        result = Some(SimulationResult {
            state,
            converged,
            sweeps_used: outcome.sweeps,
            final_lambda_delta: outcome.delta,
            params,
            seed,
            restarts: attempt,
            delta_history: outcome.history,
            energy: None,
            candidates: vec![],
        });
        if converged {
            break;
        }
    }
    Ok(result.expect("at least one attempt"))
}

/// Continues the time-step schedule from a given state (warm start), without
/// annealing or restarts.
pub fn evolve_from(
    initial: &IPepsState,
    params: ModelParams,
    config: &SuConfig,
) -> Result<SimulationResult, SuError> {
    config.validate()?;
    let mut state = initial.resized(config.target_d);
    let outcome = run_stages(&mut state, params, config)?;
    Ok(SimulationResult {
        state,
        converged: outcome.converged,
        sweeps_used: outcome.sweeps,
        final_lambda_delta: outcome.delta,
        params,
        seed: config.seed,
        restarts: 0,
        delta_history: outcome.history,
        energy: None,
        candidates: vec![],
    })
}

/// Concatenated bond weights in canonical bond order, each block sorted
/// descending and normalized to unit norm. Length `4·D`.
pub fn extract_features(state: &IPepsState) -> Vec<f64> {
    features_from_weights(&state.bond_weights)
}

/// [`extract_features`] from the bond weights alone.
pub fn features_from_weights(weights: &[Vec<f64>; 4]) -> Vec<f64> {
    let mut out = Vec::with_capacity(weights.iter().map(Vec::len).sum());
    for w in weights {
        let mut w = w.clone();
        w.sort_by(|a, b| b.total_cmp(a));
        normalize_weights(&mut w);
        out.extend(w);
    }
    out
}
