//! Iterative anomaly-detection mapping over a parameter grid: train on a
//! region, score every cell, move the region to the most anomalous area not
//! yet explained, repeat.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use thiserror::Error;

use crate::autoencoder::{self, Activation, AeError, MlpAutoencoder, TrainConfig, EPOCH_BUDGET};
use crate::model::ModelParams;

#[derive(Debug, Error)]
pub enum MapperError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Autoencoder(#[from] AeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Bond weights, length `4·D`.
    Lambda,
    /// Flattened two-site reduced density matrix, length 256.
    Rho2,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Lambda => "lambda",
            FeatureKind::Rho2 => "rho2",
        }
    }

    pub fn expected_len(self, bond_dim: usize) -> usize {
        match self {
            FeatureKind::Lambda => 4 * bond_dim,
            FeatureKind::Rho2 => 256,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = MapperError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(FeatureKind::Lambda),
            "rho2" => Ok(FeatureKind::Rho2),
            _ => Err(MapperError::Argument(format!("unknown feature kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub params: ModelParams,
    pub feature: Vec<f64>,
    pub kind: FeatureKind,
    pub bond_dim: usize,
    pub seed: u64,
    pub converged: bool,
    pub energy: Option<f64>,
}

impl FeatureRecord {
    pub fn validate(&self) -> Result<(), MapperError> {
        let want = self.kind.expected_len(self.bond_dim);
        if self.feature.len() != want {
            return Err(MapperError::Grid(format!(
                "{} feature of length {} at D={} (expected {want})",
                self.kind,
                self.feature.len(),
                self.bond_dim
            )));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err(MapperError::Grid("non-finite feature entry".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }

    /// `steps + 1` evenly spaced values from `start` to `stop`.
    pub fn linspace(name: impl Into<String>, start: f64, stop: f64, steps: usize) -> Self {
        let values = if steps == 0 {
            vec![start]
        } else {
            (0..=steps).map(|k| start + (stop - start) * k as f64 / steps as f64).collect()
        };
        Self::new(name, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Half-open block of grid indices `[i0, i1) × [j0, j1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Region {
    pub fn new(i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        Self { i0, i1, j0, j1 }
    }

    /// `size × size` block centered on `(ci, cj)`, shifted to fit the grid.
    pub fn block_around(ci: usize, cj: usize, size: usize, shape: (usize, usize)) -> Self {
        let span = |c: usize, n: usize| {
            let s = size.min(n).max(1);
            let lo = c.saturating_sub((s - 1) / 2).min(n - s);
            (lo, lo + s)
        };
        let (i0, i1) = span(ci, shape.0);
        let (j0, j1) = span(cj, shape.1);
        Self { i0, i1, j0, j1 }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..self.i1).contains(&i) && (self.j0..self.j1).contains(&j)
    }

    pub fn len(&self) -> usize {
        (self.i1 - self.i0) * (self.j1 - self.j0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.i0..self.i1).flat_map(move |i| (self.j0..self.j1).map(move |j| (i, j)))
    }

    /// Among the `size × size` blocks that contain `(ci, cj)` and fit the
    /// grid, the one with the most cells that `score` rates (`Some`), then the
    /// highest mean of those scores; ties go to the block closest to
    /// centered.
    pub fn best_block_containing(
        ci: usize,
        cj: usize,
        size: usize,
        shape: (usize, usize),
        score: impl Fn(usize, usize) -> Option<f64>,
    ) -> Self {
        let centered = Self::block_around(ci, cj, size, shape);
        let starts = |c: usize, n: usize, lo: usize| {
            let s = size.min(n).max(1);
            let mut v: Vec<usize> = (c.saturating_sub(s - 1)..=c.min(n - s)).collect();
            v.sort_by_key(|&x| x.abs_diff(lo));
            (v, s)
        };
        let (is, si) = starts(ci, shape.0, centered.i0);
        let (js, sj) = starts(cj, shape.1, centered.j0);
        let mut candidates: Vec<Self> =
            is.iter().flat_map(|&i0| js.iter().map(move |&j0| Self::new(i0, i0 + si, j0, j0 + sj))).collect();
        candidates.sort_by_key(|r| r.i0.abs_diff(centered.i0) + r.j0.abs_diff(centered.j0));
        let mut best = centered;
        let mut best_key = (0, f64::NEG_INFINITY);
        for r in candidates {
            let rated: Vec<f64> = r.cells().filter_map(|(i, j)| score(i, j)).collect();
            let mean = rated.iter().sum::<f64>() / rated.len().max(1) as f64;
            if rated.len() > best_key.0 || (rated.len() == best_key.0 && mean > best_key.1) {
                best = r;
                best_key = (rated.len(), mean);
            }
        }
        best
    }

    fn fits(&self, shape: (usize, usize)) -> bool {
        self.i0 < self.i1 && self.j0 < self.j1 && self.i1 <= shape.0 && self.j1 <= shape.1
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}..{}) x [{}..{})", self.i0, self.i1, self.j0, self.j1)
    }
}

/// Two-axis grid; every cell holds the same number of replica records
/// (one when post-selected). Cells are stored row-major over (axis1, axis2).
#[derive(Clone, Debug)]
pub struct ParameterGrid {
    pub axis1: Axis,
    pub axis2: Axis,
    cells: Vec<Vec<FeatureRecord>>,
}

impl ParameterGrid {
    pub fn new(axis1: Axis, axis2: Axis, cells: Vec<Vec<FeatureRecord>>) -> Result<Self, MapperError> {
        if axis1.is_empty() || axis2.is_empty() {
            return Err(MapperError::Grid("empty axis".into()));
        }
        if cells.len() != axis1.len() * axis2.len() {
            return Err(MapperError::Grid(format!(
                "{} cells for a {}x{} grid",
                cells.len(),
                axis1.len(),
                axis2.len()
            )));
        }
        let replicas = cells[0].len();
        if replicas == 0 || cells.iter().any(|c| c.len() != replicas) {
            return Err(MapperError::Grid("every cell needs the same nonzero number of records".into()));
        }
        let first = &cells[0][0];
        for r in cells.iter().flatten() {
            r.validate()?;
            if r.kind != first.kind || r.feature.len() != first.feature.len() {
                return Err(MapperError::Argument("mixed feature kinds or lengths".into()));
            }
        }
        Ok(Self { axis1, axis2, cells })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axis1.len(), self.axis2.len())
    }

    pub fn replicas(&self) -> usize {
        self.cells[0].len()
    }

    pub fn kind(&self) -> FeatureKind {
        self.cells[0][0].kind
    }

    pub fn feature_len(&self) -> usize {
        self.cells[0][0].feature.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.axis2.len() + j
    }

    pub fn cell(&self, i: usize, j: usize) -> &[FeatureRecord] {
        &self.cells[self.index(i, j)]
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.axis2.len(), index % self.axis2.len())
    }

    pub fn values(&self, index: usize) -> (f64, f64) {
        let (i, j) = self.coords(index);
        (self.axis1.values[i], self.axis2.values[j])
    }
}

/// Network shape and optimizer settings; the epoch count follows the
/// training-set size through `epoch_budget`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epoch_budget: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            latent: 4,
            activation: Activation::Softplus,
            learning_rate: 1e-3,
            epoch_budget: EPOCH_BUDGET,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, n_examples: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_examples(n_examples, seed);
        cfg.learning_rate = self.learning_rate;
        cfg.epochs = (self.epoch_budget / n_examples.max(1)).max(1);
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    /// Defaults to a `region_size` block at index (0, 0).
    pub initial_region: Option<Region>,
    pub region_size: usize,
    /// A cell is anomalous when its score exceeds this multiple of the map's
    /// normalization.
    pub anomaly_threshold: f64,
    /// Lower bound on the normalization, relative to the mean squared norm of
    /// the training features. Keeps a training set reconstructed to round-off
    /// (score → 0) from turning numerical noise into anomalies.
    pub score_floor: f64,
    pub max_iterations: usize,
    pub train: TrainSettings,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            initial_region: None,
            region_size: 3,
            anomaly_threshold: 3.0,
            score_floor: 1e-8,
            max_iterations: 10,
            train: TrainSettings::default(),
        }
    }
}

impl MapperConfig {
    pub fn validate(&self, shape: (usize, usize)) -> Result<(), MapperError> {
        if !(self.anomaly_threshold > 1.0) {
            return Err(MapperError::Argument("anomaly threshold must exceed 1".into()));
        }
        if self.region_size == 0 || self.max_iterations == 0 || !(self.score_floor >= 0.0) {
            return Err(MapperError::Argument("region size and iteration cap must be positive".into()));
        }
        if let Some(r) = self.initial_region {
            if !r.fits(shape) {
                return Err(MapperError::Argument(format!("initial region {r} outside the grid")));
            }
        }
        Ok(())
    }

    fn first_region(&self, shape: (usize, usize)) -> Region {
        self.initial_region.unwrap_or_else(|| {
            let s = self.region_size;
            Region::new(0, s.min(shape.0), 0, s.min(shape.1))
        })
    }
}

#[derive(Clone, Debug)]
pub struct AnomalyMap {
    pub iteration: usize,
    pub region: Region,
    /// Replica-averaged score per cell, row-major.
    pub scores: Vec<f64>,
    /// Per-cell, per-replica scores.
    pub replica_scores: Vec<Vec<f64>>,
    pub normalization: f64,
    pub threshold: f64,
    pub n_examples: usize,
    pub train_seconds: f64,
    /// Training-region records whose optimization did not converge.
    pub unconverged_in_region: usize,
    pub final_loss: f64,
}

impl AnomalyMap {
    pub fn normalized(&self, index: usize) -> f64 {
        self.scores[index] / self.normalization
    }

    pub fn is_anomalous(&self, index: usize) -> bool {
        self.normalized(index) > self.threshold
    }

    pub fn argmax(&self) -> usize {
        argmax_by(0..self.scores.len(), |c| self.scores[c]).expect("nonempty map")
    }
}

fn argmax_by(cells: impl Iterator<Item = usize>, key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for c in cells {
        let v = key(c);
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trains a fresh autoencoder on every replica of the region's cells and
/// scores the whole grid.
pub fn run_iteration(
    grid: &ParameterGrid,
    region: Region,
    config: &MapperConfig,
    iteration: usize,
) -> Result<AnomalyMap, MapperError> {
    if region.is_empty() || !region.fits(grid.shape()) {
        return Err(MapperError::Argument(format!("training region {region} empty or outside the grid")));
    }
    let mut data = Vec::new();
    let mut unconverged = 0;
    for (i, j) in region.cells() {
        for r in grid.cell(i, j) {
            unconverged += usize::from(!r.converged);
            data.push(r.feature.clone());
        }
    }
    if unconverged > 0 {
        log::warn!("iteration {iteration}: {unconverged} unconverged records in training region {region}");
    }
    let settings = &config.train;
    let seed = settings.seed.wrapping_add(iteration as u64);
    let model = MlpAutoencoder::new(grid.feature_len(), &settings.hidden, settings.latent, settings.activation, seed)?;
    let train_config = settings.train_config(data.len(), seed);
    let start = Instant::now();
    let trained = autoencoder::train(&model, &data, &train_config)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let model = trained.model;

    let mut replica_scores = Vec::with_capacity(grid.cells.len());
    for cell in &grid.cells {
        replica_scores.push(cell.iter().map(|r| model.score(&r.feature)).collect::<Result<Vec<_>, _>>()?);
    }
    let scores: Vec<f64> = replica_scores.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();

    let mut train_scores: Vec<f64> = region.cells().flat_map(|(i, j)| replica_scores[grid.index(i, j)].clone()).collect();
    let floor = config.score_floor * data.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / data.len() as f64;
    let normalization = median(&mut train_scores).max(floor).max(f64::MIN_POSITIVE);
    Ok(AnomalyMap {
        iteration,
        region,
        scores,
        replica_scores,
        normalization,
        threshold: config.anomaly_threshold,
        n_examples: data.len(),
        train_seconds,
        unconverged_in_region: unconverged,
        final_loss: trained.loss_history.last().copied().unwrap_or(f64::NAN),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Boundary {
    pub iteration: usize,
    pub i: usize,
    pub j: usize,
    pub axis1: f64,
    pub axis2: f64,
}

#[derive(Clone, Debug)]
pub struct MappingResult {
    pub maps: Vec<AnomalyMap>,
    pub boundaries: Vec<Boundary>,
    /// True when the run stopped because no unexplained anomaly remained
    /// (rather than at the iteration cap).
    pub exhausted: bool,
}

impl MappingResult {
    pub fn regions(&self) -> Vec<Region> {
        self.maps.iter().map(|m| m.region).collect()
    }
}

/// Runs the iterative protocol. A cell counts as explained once any map so
/// far scores it below threshold; the run ends when every cell outside the
/// previous training regions is explained. Otherwise the next region is a
/// block containing the highest-scoring unexplained cell of the latest map,
/// placed to cover as many unexplained cells as possible, then where their
/// mean score is largest.
pub fn map_phase_diagram(grid: &ParameterGrid, config: &MapperConfig) -> Result<MappingResult, MapperError> {
    let shape = grid.shape();
    config.validate(shape)?;
    let n = shape.0 * shape.1;
    let mut maps: Vec<AnomalyMap> = Vec::new();
    let mut explained = vec![false; n];
    let mut region = config.first_region(shape);
    let mut exhausted = false;
    let mut boundaries = Vec::new();
    for iteration in 0..config.max_iterations {
        let map = run_iteration(grid, region, config, iteration)?;
        boundaries.extend(detect_boundaries(grid, &map));
        for (c, e) in explained.iter_mut().enumerate() {
            *e |= !map.is_anomalous(c);
        }
        let visited = |c: usize| {
            let (i, j) = grid.coords(c);
            maps.iter().map(|m| m.region).chain(Some(region)).any(|r| r.contains(i, j))
        };
        let open: Vec<bool> = (0..n).map(|c| !explained[c] && !visited(c)).collect();
        let next = argmax_by((0..n).filter(|&c| open[c]), |c| map.scores[c]);
        log::info!(
            "iteration {iteration}: region {region}, normalization {:.3e}, train {:.2}s",
            map.normalization,
            map.train_seconds
        );
        maps.push(map);
        match next {
            None => {
                exhausted = true;
                break;
            }
            Some(c) => {
                let (i, j) = grid.coords(c);
                let latest = maps.last().expect("map just pushed");
                region = Region::best_block_containing(i, j, config.region_size, shape, |a, b| {
                    let c = grid.index(a, b);
                    open[c].then(|| latest.scores[c])
                });
            }
        }
    }
    Ok(MappingResult { maps, boundaries, exhausted })
}

/// Walks outward from the training region along every grid line (both axes)
/// and reports the first cell whose score crosses the threshold. Lines whose
/// starting cell is already anomalous are skipped.
pub fn detect_boundaries(grid: &ParameterGrid, map: &AnomalyMap) -> Vec<Boundary> {
    let (n1, n2) = grid.shape();
    let r = map.region;
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut walk = |cells: &mut dyn Iterator<Item = (usize, usize)>| {
        let mut prev_ok = None;
        for (i, j) in cells {
            let anomalous = map.is_anomalous(grid.index(i, j));
            match (prev_ok, anomalous) {
                (None, true) => return,
                (_, true) => {
                    if !found.contains(&(i, j)) {
                        found.push((i, j));
                    }
                    return;
                }
                _ => prev_ok = Some(()),
            }
        }
    };
    for i in 0..n1 {
        walk(&mut (r.j0..n2).map(|j| (i, j)));
        walk(&mut (0..r.j1).rev().map(|j| (i, j)));
    }
    for j in 0..n2 {
        walk(&mut (r.i0..n1).map(|i| (i, j)));
        walk(&mut (0..r.i1).rev().map(|i| (i, j)));
    }
    found
        .into_iter()
        .map(|(i, j)| Boundary {
            iteration: map.iteration,
            i,
            j,
            axis1: grid.axis1.values[i],
            axis2: grid.axis2.values[j],
        })
        .collect()
}

/// Per-replica scores of every cell, unaveraged, for reading off hysteresis
/// branches.
pub fn hysteresis_branches(map: &AnomalyMap) -> &[Vec<f64>] {
    &map.replica_scores
}

/// Largest ratio between consecutive sorted replica scores: the separation
/// of the two clusters when the scores split in two.
pub fn branch_gap(scores: &[f64]) -> f64 {
    let mut s: Vec<f64> = scores.iter().map(|v| v.max(f64::MIN_POSITIVE)).collect();
    s.sort_by(f64::total_cmp);
    s.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max)
}

/// One row per cell and replica:
/// `axis1,axis2,seed,score,normalized_score,in_training_region`.
pub fn write_map_csv(grid: &ParameterGrid, map: &AnomalyMap, mut out: impl Write) -> Result<(), MapperError> {
    writeln!(out, "{},{},seed,score,normalized_score,in_training_region", grid.axis1.name, grid.axis2.name)?;
    for c in 0..map.scores.len() {
        let (i, j) = grid.coords(c);
        let (a1, a2) = grid.values(c);
        let inside = map.region.contains(i, j);
        for (r, s) in grid.cells[c].iter().zip(&map.replica_scores[c]) {
            writeln!(out, "{a1:.16e},{a2:.16e},{},{s:.16e},{:.16e},{inside}", r.seed, s / map.normalization)?;
        }
    }
    Ok(())
}

pub fn write_boundaries_csv(grid: &ParameterGrid, boundaries: &[Boundary], mut out: impl Write) -> Result<(), MapperError> {
    writeln!(out, "iteration,{},{}", grid.axis1.name, grid.axis2.name)?;
    for b in boundaries {
        writeln!(out, "{},{:.16e},{:.16e}", b.iteration, b.axis1, b.axis2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(feature: Vec<f64>, seed: u64) -> FeatureRecord {
        let bond_dim = feature.len() / 4;
        FeatureRecord {
            params: ModelParams::new(1.0, 1.0, 0.0),
            feature,
            kind: FeatureKind::Lambda,
            bond_dim,
            seed,
            converged: true,
            energy: None,
        }
    }

    fn unit(k: usize) -> Vec<f64> {
        let mut v = vec![0.0; 8];
        v[k] = 1.0;
        v
    }

    fn cut(features: Vec<Vec<f64>>) -> ParameterGrid {
        let n = features.len();
        ParameterGrid::new(
            Axis::new("jx", vec![0.3]),
            Axis::linspace("jperp", 0.0, (n - 1) as f64, n - 1),
            features.into_iter().enumerate().map(|(k, f)| vec![record(f, k as u64)]).collect(),
        )
        .unwrap()
    }

    fn quick() -> MapperConfig {
        MapperConfig {
            train: TrainSettings { epoch_budget: 6000, ..TrainSettings::default() },
            ..MapperConfig::default()
        }
    }

    #[test]
    fn region_blocks_are_clipped() {
        assert_eq!(Region::block_around(0, 0, 3, (5, 5)), Region::new(0, 3, 0, 3));
        assert_eq!(Region::block_around(4, 2, 3, (5, 5)), Region::new(2, 5, 1, 4));
        assert_eq!(Region::block_around(0, 7, 3, (1, 8)), Region::new(0, 1, 5, 8));
        assert_eq!(Region::block_around(0, 3, 4, (1, 8)).len(), 4);
        let ramp = |_: usize, j: usize| Some(if j >= 5 { 2.0 } else { 1.0 });
        assert_eq!(Region::best_block_containing(0, 5, 3, (1, 10), ramp), Region::new(0, 1, 5, 8));
        let flat = |_: usize, _: usize| Some(1.0);
        assert_eq!(Region::best_block_containing(2, 5, 3, (5, 10), flat), Region::block_around(2, 5, 3, (5, 10)));
        // unrated cells pull the block away even when they score higher
        let partial = |_: usize, j: usize| if j < 5 { None } else { Some(1.0) };
        assert_eq!(Region::best_block_containing(0, 5, 3, (1, 10), partial), Region::new(0, 1, 5, 8));
    }

    #[test]
    fn grid_rejects_inconsistent_cells() {
        let a = Axis::new("a", vec![0.0]);
        let b = Axis::new("b", vec![0.0, 1.0]);
        assert!(ParameterGrid::new(a.clone(), b.clone(), vec![vec![record(unit(0), 0)]]).is_err());
        let mut rho = record(vec![0.0; 256], 1);
        rho.kind = FeatureKind::Rho2;
        assert!(matches!(
            ParameterGrid::new(a.clone(), b.clone(), vec![vec![record(unit(0), 0)], vec![rho]]),
            Err(MapperError::Argument(_))
        ));
        let mut bad = record(unit(0), 0);
        bad.feature.pop();
        assert!(ParameterGrid::new(a, b, vec![vec![bad], vec![record(unit(0), 0)]]).is_err());
    }

    #[test]
    fn identical_vectors_give_flat_map() {
        let grid = cut(vec![vec![0.9, 0.3, 0.2, 0.1, 0.8, 0.5, 0.3, 0.1]; 10]);
        let map = run_iteration(&grid, Region::new(0, 1, 0, 3), &quick(), 0).unwrap();
        let mut s = map.scores.clone();
        let med = median(&mut s);
        assert!(map.scores.iter().cloned().fold(0.0, f64::max) / med < 1.5);
        assert!(detect_boundaries(&grid, &map).is_empty());
        let result = map_phase_diagram(&grid, &quick()).unwrap();
        assert_eq!(result.maps.len(), 1);
        assert!(result.exhausted);
    }

    #[test]
    fn two_clusters_separate() {
        let grid = cut((0..12).map(|k| if k < 6 { unit(0) } else { unit(1) }).collect());
        let map = run_iteration(&grid, Region::new(0, 1, 0, 3), &quick(), 0).unwrap();
        let left = map.scores[..6].iter().cloned().fold(0.0, f64::max);
        let right = map.scores[6..].iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(right > 10.0 * left, "{left} {right}");
        let b = detect_boundaries(&grid, &map);
        assert_eq!(b.len(), 1);
        assert_eq!((b[0].i, b[0].j), (0, 6));
    }

    #[test]
    fn three_clusters_need_three_iterations() {
        let grid = cut((0..15).map(|k| unit(k / 5)).collect());
        let result = map_phase_diagram(&grid, &quick()).unwrap();
        assert_eq!(result.maps.len(), 3);
        assert!(result.exhausted);
        let mut clusters: Vec<usize> = result.regions().iter().map(|r| r.j0 / 5).collect();
        for r in result.regions() {
            assert_eq!(r.j0 / 5, (r.j1 - 1) / 5, "region {r} straddles clusters");
        }
        clusters.sort();
        assert_eq!(clusters, vec![0, 1, 2]);
    }

    #[test]
    fn two_dimensional_clusters() {
        let (n1, n2) = (4, 6);
        let mut cells = Vec::new();
        for i in 0..n1 {
            for j in 0..n2 {
                let k = if j < 3 { 0 } else if i < 2 { 1 } else { 2 };
                cells.push(vec![record(unit(k), (i * n2 + j) as u64)]);
            }
        }
        let grid = ParameterGrid::new(Axis::linspace("a", 0.0, 1.0, n1 - 1), Axis::linspace("b", 0.0, 1.0, n2 - 1), cells).unwrap();
        let cfg = MapperConfig { region_size: 2, ..quick() };
        let result = map_phase_diagram(&grid, &cfg).unwrap();
        assert_eq!(result.maps.len(), 3);
        let b0: Vec<_> = result.boundaries.iter().filter(|b| b.iteration == 0).map(|b| b.j).collect();
        assert!(b0.iter().all(|&j| j == 3), "{b0:?}");
    }

    #[test]
    fn mapping_is_reproducible() {
        let grid = cut((0..10).map(|k| unit(k / 5)).collect());
        let a = map_phase_diagram(&grid, &quick()).unwrap();
        let b = map_phase_diagram(&grid, &quick()).unwrap();
        assert_eq!(a.regions(), b.regions());
        assert_eq!(a.boundaries, b.boundaries);
        for (x, y) in a.maps.iter().zip(&b.maps) {
            assert_eq!(x.scores, y.scores);
        }
    }

    #[test]
    fn iteration_cap_is_respected() {
        let grid = cut((0..15).map(|k| unit(k / 5)).collect());
        let cfg = MapperConfig { max_iterations: 2, ..quick() };
        let result = map_phase_diagram(&grid, &cfg).unwrap();
        assert_eq!(result.maps.len(), 2);
        assert!(!result.exhausted);
    }

    fn step_map(jump: usize, n: usize) -> (ParameterGrid, AnomalyMap) {
        let grid = cut((0..n).map(|_| unit(0)).collect());
        let scores: Vec<f64> = (0..n).map(|k| if k < jump { 1.0 } else { 50.0 }).collect();
        let map = AnomalyMap {
            iteration: 0,
            region: Region::new(0, 1, 0, 2),
            replica_scores: scores.iter().map(|s| vec![*s]).collect(),
            scores,
            normalization: 1.0,
            threshold: 3.0,
            n_examples: 2,
            train_seconds: 0.0,
            unconverged_in_region: 0,
            final_loss: 0.0,
        };
        (grid, map)
    }

    #[test]
    fn step_map_boundary() {
        let (grid, map) = step_map(10, 20);
        let b = detect_boundaries(&grid, &map);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].j, 10);
        assert_eq!(b[0].axis2, 10.0);
        let (grid, flat) = step_map(20, 20);
        assert!(detect_boundaries(&grid, &flat).is_empty());
    }

    #[test]
    fn replica_scores_and_branch_gap() {
        assert_eq!(branch_gap(&[1.0, 1.1, 1.2]), 1.1 / 1.0);
        assert!(branch_gap(&[1.0, 1.2, 9.0, 10.0]) > 5.0);
        let mut cells = Vec::new();
        for k in 0..6 {
            cells.push(vec![record(unit(0), 2 * k), record(if k == 4 { unit(1) } else { unit(0) }, 2 * k + 1)]);
        }
        let grid = ParameterGrid::new(Axis::new("a", vec![0.0]), Axis::linspace("b", 0.0, 5.0, 5), cells).unwrap();
        let map = run_iteration(&grid, Region::new(0, 1, 0, 2), &quick(), 0).unwrap();
        let branches = hysteresis_branches(&map);
        assert_eq!(map.n_examples, 4);
        assert!(branch_gap(&branches[4]) > 5.0);
        assert!(branch_gap(&branches[1]) < 2.0);
        assert!((map.scores[4] - 0.5 * (branches[4][0] + branches[4][1])).abs() < 1e-15);
    }

    #[test]
    fn single_replica_scores_equal_average() {
        let grid = cut((0..6).map(|k| unit(k / 3)).collect());
        let map = run_iteration(&grid, Region::new(0, 1, 0, 2), &quick(), 0).unwrap();
        for (s, r) in map.scores.iter().zip(&map.replica_scores) {
            assert_eq!(*s, r[0]);
        }
    }

    #[test]
    fn csv_rows_and_precision() {
        let grid = cut((0..4).map(|k| unit(k / 2)).collect());
        let map = run_iteration(&grid, Region::new(0, 1, 0, 2), &quick(), 0).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&grid, &map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "jx,jperp,seed,score,normalized_score,in_training_region");
        assert_eq!(lines.len(), 5);
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[5], "true");
        let score: f64 = fields[3].parse().unwrap();
        assert_eq!(score, map.replica_scores[0][0]);
        assert_eq!(lines[4].split(',').last(), Some("false"));
    }

    #[test]
    fn rejects_bad_config() {
        let grid = cut((0..4).map(|k| unit(k / 2)).collect());
        let bad = MapperConfig { anomaly_threshold: 1.0, ..quick() };
        assert!(map_phase_diagram(&grid, &bad).is_err());
        let outside = MapperConfig { initial_region: Some(Region::new(0, 2, 0, 1)), ..quick() };
        assert!(map_phase_diagram(&grid, &outside).is_err());
        assert!(run_iteration(&grid, Region::new(0, 0, 0, 1), &quick(), 0).is_err());
    }
}
