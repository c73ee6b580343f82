//! The frustrated spin-½ bilayer Heisenberg model written on the lattice of
//! interlayer dimers.
//!
//! Each dimer is one site with local dimension 4, basis ordered
//! `|↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩` (layer-1 spin first). All operators are real:
//! `S·S = SᶻSᶻ + ½(S⁺S⁻ + S⁻S⁺)`.

use crate::tensor::{expm_hermitian, Tensor, TensorResult};

/// Local dimension of one dimer.
pub const DIMER_DIM: usize = 4;

/// Default share of the intradimer `J⊥` term carried by each bond: every
/// dimer has four bonds on the square lattice.
pub const ONSITE_SHARE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    /// Interlayer coupling inside a dimer.
    pub j_perp: f64,
    /// Intralayer nearest-neighbour coupling.
    pub j_par: f64,
    /// Interlayer cross coupling between neighbouring dimers.
    pub j_x: f64,
}

impl ModelParams {
    pub fn new(j_perp: f64, j_par: f64, j_x: f64) -> Self {
        Self { j_perp, j_par, j_x }
    }

    pub fn is_finite(&self) -> bool {
        self.j_perp.is_finite() && self.j_par.is_finite() && self.j_x.is_finite()
    }
}

/// The four bonds of the checkerboard unit cell, in the canonical order used
/// for bond weights and feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bond {
    ARight = 0,
    ADown = 1,
    ALeft = 2,
    AUp = 3,
}

impl Bond {
    pub const ALL: [Bond; 4] = [Bond::ARight, Bond::ADown, Bond::ALeft, Bond::AUp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Bond> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Bond::ARight => "a-right",
            Bond::ADown => "a-down",
            Bond::ALeft => "a-left",
            Bond::AUp => "a-up",
        }
    }
}

impl std::str::FromStr for Bond {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bond::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown bond {s:?}"))
    }
}

fn kron(a: &Tensor, b: &Tensor) -> Tensor {
    let (ra, ca) = (a.shape()[0], a.shape()[1]);
    let (rb, cb) = (b.shape()[0], b.shape()[1]);
    Tensor::from_fn(&[ra * rb, ca * cb], |i| {
        a.get(&[i[0] / rb, i[1] / cb]) * b.get(&[i[0] % rb, i[1] % cb])
    })
}

fn add(a: &Tensor, b: &Tensor, fb: f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + fb * y).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Spin operators acting inside one dimer.
#[derive(Clone, Debug)]
pub struct DimerOperators {
    /// `Sᶻ` on layer 1 and layer 2.
    pub sz: [Tensor; 2],
    pub sp: [Tensor; 2],
    pub sm: [Tensor; 2],
    /// `S₁·S₂` within the dimer.
    pub s1_dot_s2: Tensor,
    pub identity: Tensor,
}

pub fn dimer_spin_operators() -> DimerOperators {
    let id2 = Tensor::identity(2);
    let sz = Tensor::new(vec![2, 2], vec![0.5, 0.0, 0.0, -0.5]).unwrap();
    let sp = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let sm = Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let on = |op: &Tensor, layer: usize| {
        if layer == 0 {
            kron(op, &id2)
        } else {
            kron(&id2, op)
        }
    };
    let sz = [on(&sz, 0), on(&sz, 1)];
    let sp = [on(&sp, 0), on(&sp, 1)];
    let sm = [on(&sm, 0), on(&sm, 1)];
    let s1_dot_s2 = spin_dot(&sz[0], &sp[0], &sm[0], &sz[1], &sp[1], &sm[1], matmul4);
    DimerOperators { sz, sp, sm, s1_dot_s2, identity: Tensor::identity(DIMER_DIM) }
}

fn matmul4(a: &Tensor, b: &Tensor) -> Tensor {
    crate::tensor::matrix_product(a, b).unwrap()
}

/// `SᶻSᶻ + ½(S⁺S⁻ + S⁻S⁺)` with the product supplied by `prod`.
fn spin_dot(
    za: &Tensor,
    pa: &Tensor,
    ma: &Tensor,
    zb: &Tensor,
    pb: &Tensor,
    mb: &Tensor,
    prod: fn(&Tensor, &Tensor) -> Tensor,
) -> Tensor {
    let zz = prod(za, zb);
    let pm = prod(pa, mb);
    let mp = prod(ma, pb);
    add(&add(&zz, &pm, 0.5), &mp, 0.5)
}

impl DimerOperators {
    /// `S_{i,a} · S_{j,b}` on two dimers (16×16, dimer `i` is the slow index).
    pub fn two_dimer_dot(&self, layer_i: usize, layer_j: usize) -> Tensor {
        spin_dot(
            &self.sz[layer_i],
            &self.sp[layer_i],
            &self.sm[layer_i],
            &self.sz[layer_j],
            &self.sp[layer_j],
            &self.sm[layer_j],
            kron,
        )
    }

    /// Total `Sᶻ` of one dimer.
    pub fn sz_total(&self) -> Tensor {
        add(&self.sz[0], &self.sz[1], 1.0)
    }
}

#[derive(Clone, Debug)]
pub struct BondHamiltonian {
    /// Two-dimer operator with index order `(out_i, out_j, in_i, in_j)`.
    pub matrix: Tensor,
    pub onsite_share: f64,
    pub bond: Bond,
}

impl BondHamiltonian {
    /// Bond operator with an explicit share of the intradimer term.
    pub fn with_share(params: ModelParams, bond: Bond, onsite_share: f64) -> Self {
        let ops = dimer_spin_operators();
        let mut h = add(&ops.two_dimer_dot(0, 0), &ops.two_dimer_dot(1, 1), 1.0).scaled(params.j_par);
        let cross = add(&ops.two_dimer_dot(0, 1), &ops.two_dimer_dot(1, 0), 1.0);
        h = add(&h, &cross, params.j_x);
        if onsite_share != 0.0 {
            let onsite = add(
                &kron(&ops.s1_dot_s2, &ops.identity),
                &kron(&ops.identity, &ops.s1_dot_s2),
                1.0,
            );
            h = add(&h, &onsite, onsite_share * params.j_perp);
        }
        let matrix = h.reshape(&[DIMER_DIM; 4]).unwrap();
        Self { matrix, onsite_share, bond }
    }

    /// View as a 16×16 matrix.
    pub fn as_matrix(&self) -> Tensor {
        self.matrix.clone().reshape(&[DIMER_DIM * DIMER_DIM; 2]).unwrap()
    }
}

/// Bond operator whose four copies around a dimer reproduce the full
/// Hamiltonian.
pub fn build_bond_hamiltonian(params: ModelParams, bond: Bond) -> BondHamiltonian {
    BondHamiltonian::with_share(params, bond, ONSITE_SHARE)
}

#[derive(Clone, Debug)]
pub struct GateSet {
    pub tau: f64,
    /// `exp(-τ h)` per bond, indexed by [`Bond::index`], shaped like the
    /// bond Hamiltonian.
    pub gates: [Tensor; 4],
}

impl GateSet {
    pub fn gate(&self, bond: Bond) -> &Tensor {
        &self.gates[bond.index()]
    }
}

/// First-order Trotter gates `exp(-τ h_bond)` for every bond of the unit
/// cell.
pub fn build_gates(params: ModelParams, tau: f64) -> TensorResult<GateSet> {
    if !(tau > 0.0) {
        return Err(crate::tensor::TensorError::Argument(format!(
            "imaginary time step must be positive, got {tau}"
        )));
    }
    let gate = |b: Bond| expm_hermitian(&build_bond_hamiltonian(params, b).matrix, -tau);
    Ok(GateSet {
        tau,
        gates: [gate(Bond::ARight)?, gate(Bond::ADown)?, gate(Bond::ALeft)?, gate(Bond::AUp)?],
    })
}
