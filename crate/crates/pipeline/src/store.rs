//! Feature store: a JSON index plus one binary payload per record.
//! Records are never rewritten; energies and ρ² live in a separate
//! augmentation file and post-selection in a derived view.

use std::fs;
use std::path::{Path, PathBuf};

use phasemap_core::ipeps::IPepsState;
use phasemap_core::model::{Bond, ModelParams};
use phasemap_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const STORE_VERSION: u32 = 1;
const STATE_MAGIC: &[u8; 4] = b"PMST";
const RHO2_MAGIC: &[u8; 4] = b"PMRD";
const MAX_PHYS: usize = 16;
const MAX_BOND: usize = 64;
const RHO2_LEN: usize = 256;

const INDEX_FILE: &str = "index.json";
const ENERGY_FILE: &str = "energies.json";
const VIEW_FILE: &str = "post_selected.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    pub j_perp: f64,
    pub j_par: f64,
    pub j_x: f64,
}

impl From<ModelParams> for Couplings {
    fn from(p: ModelParams) -> Self {
        Self { j_perp: p.j_perp, j_par: p.j_par, j_x: p.j_x }
    }
}

impl From<Couplings> for ModelParams {
    fn from(c: Couplings) -> Self {
        ModelParams::new(c.j_perp, c.j_par, c.j_x)
    }
}

/// How a record's optimization was started.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Role {
    Random { replica: usize },
    /// Continued from the selected state of the previous cell on axis 2.
    WarmForward,
    /// Continued from the selected state of the next cell on axis 2.
    WarmBackward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub id: String,
    pub params: Couplings,
    pub bond_dim: usize,
    pub role: Role,
    pub seed: u64,
    pub converged: bool,
    pub sweeps_used: usize,
    /// Absent when the last change was not finite.
    pub lambda_delta: Option<f64>,
    pub restarts: usize,
    /// Payload file name inside `records/`; absent for failed records.
    pub payload: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Index {
    pub format_version: u32,
    pub records: Vec<RecordEntry>,
}

impl Index {
    pub fn from_json(text: &str) -> Result<Self> {
        let index: Index = serde_json::from_str(text)?;
        if index.format_version != STORE_VERSION {
            return Err(PipelineError::Store(format!("unsupported index version {}", index.format_version)));
        }
        let mut ids: Vec<&str> = index.records.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(PipelineError::Store("duplicate record ids".into()));
        }
        for r in &index.records {
            check_id(&r.id)?;
            if let Some(p) = &r.payload {
                check_file_name(p)?;
            }
        }
        Ok(index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyEntry {
    pub id: String,
    /// CTM settings the entry was computed with.
    pub ctm: String,
    pub energy: Option<f64>,
    pub ctm_converged: bool,
    pub ctm_iterations: usize,
    pub rho2_payload: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentations {
    pub format_version: u32,
    pub energies: Vec<EnergyEntry>,
}

impl Augmentations {
    pub fn from_json(text: &str) -> Result<Self> {
        let a: Augmentations = serde_json::from_str(text)?;
        if a.format_version != STORE_VERSION {
            return Err(PipelineError::Store(format!("unsupported augmentation version {}", a.format_version)));
        }
        for e in &a.energies {
            check_id(&e.id)?;
            if let Some(p) = &e.rho2_payload {
                check_file_name(p)?;
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub params: Couplings,
    pub bond_dim: usize,
    pub record: String,
    pub energy: Option<f64>,
    /// Energies of every candidate considered, by record id.
    pub candidates: Vec<(String, Option<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostSelectedView {
    pub format_version: u32,
    pub ctm: String,
    pub cells: Vec<ViewEntry>,
}

impl PostSelectedView {
    pub fn from_json(text: &str) -> Result<Self> {
        let view: PostSelectedView = serde_json::from_str(text)?;
        if view.format_version != STORE_VERSION {
            return Err(PipelineError::Store(format!("unsupported view version {}", view.format_version)));
        }
        for c in &view.cells {
            check_id(&c.record)?;
        }
        Ok(view)
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.len() > 64 || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
        return Err(PipelineError::Store(format!("invalid record id {id:?}")));
    }
    Ok(())
}

fn check_file_name(name: &str) -> Result<()> {
    let stem = name.strip_suffix(".bin").ok_or_else(|| PipelineError::Store(format!("invalid payload name {name:?}")))?;
    check_id(stem)
}

/// Site tensors and bond weights of one optimized state.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePayload {
    pub d: usize,
    pub bond_dim: usize,
    pub weights: [Vec<f64>; 4],
    pub tensors: Option<(Tensor, Tensor)>,
}

impl StatePayload {
    pub fn from_state(state: &IPepsState, with_tensors: bool) -> Self {
        Self {
            d: state.d,
            bond_dim: state.bond_dim,
            weights: state.bond_weights.clone(),
            tensors: with_tensors.then(|| (state.tensor_a.clone(), state.tensor_b.clone())),
        }
    }

    pub fn to_state(&self) -> Result<IPepsState> {
        let (a, b) = self
            .tensors
            .clone()
            .ok_or_else(|| PipelineError::Payload("record has no serialized state".into()))?;
        let state = IPepsState { tensor_a: a, tensor_b: b, bond_weights: self.weights.clone(), d: self.d, bond_dim: self.bond_dim };
        state.check_invariants().map_err(PipelineError::Payload)?;
        Ok(state)
    }

    /// `magic, version u32, d u32, D u32, flags u8, 4·D weights, [A, B]`,
    /// all little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.bond_dim as u32).to_le_bytes());
        out.push(u8::from(self.tensors.is_some()));
        for v in self.weights.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some((a, b)) = &self.tensors {
            for v in a.data().iter().chain(b.data()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != STATE_MAGIC {
            return Err(PipelineError::Payload("bad state magic".into()));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(PipelineError::Payload(format!("unsupported payload version {version}")));
        }
        let d = r.u32()? as usize;
        let bond_dim = r.u32()? as usize;
        if !(1..=MAX_PHYS).contains(&d) || !(1..=MAX_BOND).contains(&bond_dim) {
            return Err(PipelineError::Payload(format!("dimensions d={d}, D={bond_dim} out of range")));
        }
        let flags = r.take(1)?[0];
        if flags > 1 {
            return Err(PipelineError::Payload(format!("unknown flags {flags}")));
        }
        let mut weights: [Vec<f64>; 4] = Default::default();
        for w in weights.iter_mut() {
            *w = r.f64s(bond_dim)?;
        }
        let tensors = if flags == 1 {
            let n = d * bond_dim.pow(4);
            let shape = vec![d, bond_dim, bond_dim, bond_dim, bond_dim];
            let a = Tensor::new(shape.clone(), r.f64s(n)?).map_err(|e| PipelineError::Payload(e.to_string()))?;
            let b = Tensor::new(shape, r.f64s(n)?).map_err(|e| PipelineError::Payload(e.to_string()))?;
            Some((a, b))
        } else {
            None
        };
        r.finish()?;
        Ok(Self { d, bond_dim, weights, tensors })
    }
}

/// Two-site reduced density matrices of one record, flattened row-major.
pub fn encode_rho2(rdms: &[(Bond, Vec<f64>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(RHO2_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(rdms.len() as u32).to_le_bytes());
    for (bond, m) in rdms {
        out.push(bond.index() as u8);
        for v in m {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_rho2(bytes: &[u8]) -> Result<Vec<(Bond, Vec<f64>)>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != RHO2_MAGIC {
        return Err(PipelineError::Payload("bad rho2 magic".into()));
    }
    let version = r.u32()?;
    if version != STORE_VERSION {
        return Err(PipelineError::Payload(format!("unsupported payload version {version}")));
    }
    let count = r.u32()? as usize;
    if count > 4 {
        return Err(PipelineError::Payload(format!("{count} density matrices")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.take(1)?[0];
        let bond = Bond::from_index(tag as usize).ok_or_else(|| PipelineError::Payload(format!("bad bond tag {tag}")))?;
        out.push((bond, r.f64s(RHO2_LEN)?));
    }
    r.finish()?;
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(PipelineError::Payload("unexpected end of payload".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| PipelineError::Payload("length overflow".into()))?;
        let raw = self.take(len)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PipelineError::Payload("non-finite value".into()));
        }
        Ok(v)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(PipelineError::Payload(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Writes to a temporary sibling and renames over the target, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct FeatureStore {
    root: PathBuf,
    index: Index,
    augmentations: Augmentations,
}

impl FeatureStore {
    pub fn open_or_create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("rho2"))?;
        if !root.join(INDEX_FILE).exists() {
            let empty = Index { format_version: STORE_VERSION, records: vec![] };
            write_atomic(&root.join(INDEX_FILE), serde_json::to_string_pretty(&empty)?.as_bytes())?;
        }
        Self::open(root)
    }

    pub fn open(root: &Path) -> Result<Self> {
        let index_path = root.join(INDEX_FILE);
        if !index_path.exists() {
            return Err(PipelineError::Argument(format!("no feature store at {}", root.display())));
        }
        let index = Index::from_json(&fs::read_to_string(index_path)?)?;
        let aug_path = root.join(ENERGY_FILE);
        let augmentations = if aug_path.exists() {
            Augmentations::from_json(&fs::read_to_string(aug_path)?)?
        } else {
            Augmentations { format_version: STORE_VERSION, energies: vec![] }
        };
        Ok(Self { root: root.to_path_buf(), index, augmentations })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[RecordEntry] {
        &self.index.records
    }

    pub fn get(&self, id: &str) -> Option<&RecordEntry> {
        self.index.records.iter().find(|r| r.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    /// Adds a record (and its payload). Existing records are immutable.
    pub fn insert(&mut self, mut entry: RecordEntry, payload: Option<&StatePayload>) -> Result<()> {
        check_id(&entry.id)?;
        if self.contains(&entry.id) {
            return Err(PipelineError::Store(format!("record {} already exists", entry.id)));
        }
        entry.payload = None;
        if let Some(p) = payload {
            let name = format!("{}.bin", entry.id);
            write_atomic(&self.root.join("records").join(&name), &p.encode())?;
            entry.payload = Some(name);
        }
        self.index.records.push(entry);
        self.index.records.sort_by(|a, b| a.id.cmp(&b.id));
        write_atomic(&self.root.join(INDEX_FILE), serde_json::to_string_pretty(&self.index)?.as_bytes())
    }

    pub fn load_payload(&self, entry: &RecordEntry) -> Result<StatePayload> {
        let name = entry
            .payload
            .as_ref()
            .ok_or_else(|| PipelineError::Payload(format!("record {} has no payload", entry.id)))?;
        StatePayload::decode(&fs::read(self.root.join("records").join(name))?)
    }

    pub fn energy(&self, id: &str, ctm: &str) -> Option<&EnergyEntry> {
        self.augmentations.energies.iter().find(|e| e.id == id && e.ctm == ctm)
    }

    pub fn insert_energy(&mut self, mut entry: EnergyEntry, rho2: Option<&[(Bond, Vec<f64>)]>) -> Result<()> {
        check_id(&entry.id)?;
        if self.energy(&entry.id, &entry.ctm).is_some() {
            return Err(PipelineError::Store(format!("energy for {} already exists", entry.id)));
        }
        entry.rho2_payload = None;
        if let Some(r) = rho2 {
            let tag = short_hash(&entry.ctm);
            let name = format!("{}-{tag}.bin", entry.id);
            write_atomic(&self.root.join("rho2").join(&name), &encode_rho2(r))?;
            entry.rho2_payload = Some(name);
        }
        self.augmentations.energies.push(entry);
        self.augmentations.energies.sort_by(|a, b| (&a.id, &a.ctm).cmp(&(&b.id, &b.ctm)));
        write_atomic(&self.root.join(ENERGY_FILE), serde_json::to_string_pretty(&self.augmentations)?.as_bytes())
    }

    pub fn load_rho2(&self, entry: &EnergyEntry) -> Result<Vec<(Bond, Vec<f64>)>> {
        let name = entry
            .rho2_payload
            .as_ref()
            .ok_or_else(|| PipelineError::Payload(format!("record {} has no density matrices", entry.id)))?;
        decode_rho2(&fs::read(self.root.join("rho2").join(name))?)
    }

    pub fn write_view(&self, view: &PostSelectedView) -> Result<()> {
        write_atomic(&self.root.join(VIEW_FILE), serde_json::to_string_pretty(view)?.as_bytes())
    }

    pub fn read_view(&self) -> Result<Option<PostSelectedView>> {
        let path = self.root.join(VIEW_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(PostSelectedView::from_json(&fs::read_to_string(path)?)?))
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
