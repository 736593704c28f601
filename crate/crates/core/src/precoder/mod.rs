//! Linear and perturbation precoders.
//!
//! Every perturbed scheme reduces to the same problem: minimize
//! `‖u + F·p‖²` with `u = W·s` and `F` a scaled, column-combined copy of the
//! ZF matrix. They differ only in how `F` is assembled and in which
//! alphabet the coordinates of `p` come from:
//!
//! | scheme  | columns of `F`                     | alphabet |
//! |---------|------------------------------------|----------|
//! | VP      | `α·W`                              | complex  |
//! | DKVP    | `α·W` restricted to a `K`-subset   | complex  |
//! | COP     | `τ·W·A`                            | complex  |
//! | WL-COP  | `τ·W·A·B`, unused levels dropped   | real     |
//!
//! Whatever the scheme, the result is mapped back to an integer offset per
//! symbol and the transmit block is formed as `W·(s + τ·offset)`.

pub mod search;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex;
use thiserror::Error;

use crate::constellation::{Constellation, ConstellationError, FoldMode, MappingPair};
use crate::numerics::{gram, hermitian_solve, norm_sq, CMatrix, NumericsError, C64};
use search::{candidate_count, Enumerator, QuadForm, TIE_RTOL};

pub type CInt = Complex<i32>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecodeError {
    #[error("search dimension {dim} exceeds the {kind} coordinate cap of {cap}")]
    DimensionCap { dim: usize, cap: usize, kind: &'static str },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error("invalid perturbation alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("{0}")]
    InvalidArgument(String),
}

/// Largest enumerable search dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchCaps {
    pub complex: usize,
    pub real: usize,
}

impl Default for SearchCaps {
    fn default() -> Self {
        SearchCaps { complex: 10, real: 20 }
    }
}

/// Finite sets the perturbation coordinates are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbAlphabet {
    complex_set: Vec<CInt>,
    real_set: Vec<i32>,
}

impl Default for PerturbAlphabet {
    /// `{a + bj : a, b ∈ {−1, 0, 1}}` and `{−1, 0, 1}`.
    fn default() -> Self {
        let mut complex_set = Vec::with_capacity(9);
        for a in -1..=1 {
            for b in -1..=1 {
                complex_set.push(CInt::new(a, b));
            }
        }
        PerturbAlphabet {
            complex_set,
            real_set: vec![-1, 0, 1],
        }
    }
}

impl PerturbAlphabet {
    /// Checks that each set contains 0, is closed under negation, and has no
    /// duplicates. Order is kept; it defines the enumeration order.
    pub fn new(complex_set: Vec<CInt>, real_set: Vec<i32>) -> Result<Self, PrecodeError> {
        fn check<T: PartialEq + Copy + std::ops::Neg<Output = T>>(set: &[T], zero: T, name: &str) -> Result<(), PrecodeError> {
            if !set.contains(&zero) {
                return Err(PrecodeError::InvalidAlphabet(format!("{name} set lacks 0")));
            }
            for (i, &v) in set.iter().enumerate() {
                if !set.contains(&-v) {
                    return Err(PrecodeError::InvalidAlphabet(format!("{name} set is not symmetric")));
                }
                if set[..i].contains(&v) {
                    return Err(PrecodeError::InvalidAlphabet(format!("{name} set has duplicates")));
                }
            }
            Ok(())
        }
        check(&complex_set, CInt::new(0, 0), "complex")?;
        check(&real_set, 0, "real")?;
        Ok(PerturbAlphabet { complex_set, real_set })
    }

    /// Square grid `{a + bj : a, b ∈ {−r..r}}` with matching real set.
    pub fn square(radius: i32) -> Self {
        let mut complex_set = Vec::new();
        for a in -radius..=radius {
            for b in -radius..=radius {
                complex_set.push(CInt::new(a, b));
            }
        }
        PerturbAlphabet {
            complex_set,
            real_set: (-radius..=radius).collect(),
        }
    }

    pub fn complex_set(&self) -> &[CInt] {
        &self.complex_set
    }

    pub fn real_set(&self) -> &[i32] {
        &self.real_set
    }

    pub fn complex_values(&self) -> Vec<C64> {
        self.complex_set.iter().map(|z| C64::new(z.re as f64, z.im as f64)).collect()
    }

    pub fn real_values(&self) -> Vec<C64> {
        self.real_set.iter().map(|&v| C64::new(v as f64, 0.0)).collect()
    }

    /// Largest per-axis magnitude in either set.
    pub fn radius(&self) -> i32 {
        let c = self.complex_set.iter().map(|z| z.re.abs().max(z.im.abs())).max().unwrap_or(0);
        let r = self.real_set.iter().map(|v| v.abs()).max().unwrap_or(0);
        c.max(r)
    }
}

/// The chosen perturbation in the coordinates of its own search space.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Linear precoding, no search.
    None,
    /// One complex integer per coordinate (VP, DKVP, COP).
    Complex(Vec<CInt>),
    /// One real integer per folded level (WL-COP); pruned levels hold 0.
    Real(Vec<i32>),
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        match self {
            Perturbation::None => true,
            Perturbation::Complex(v) => v.iter().all(|z| *z == CInt::new(0, 0)),
            Perturbation::Real(v) => v.iter().all(|&x| x == 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecodeResult {
    /// Unnormalized transmit block `W·(s + τ·offset)`.
    pub x_raw: Vec<C64>,
    pub perturbation: Perturbation,
    /// Integer lattice offset added to each symbol before `W`.
    pub lattice_offset: Vec<CInt>,
    /// `‖x_raw‖²`.
    pub objective: f64,
    /// Candidates scored by the search.
    pub candidates: u64,
}

/// Canonical search instance: minimize `‖u + F·p‖²`.
#[derive(Debug, Clone)]
pub struct SearchProblem {
    u: Vec<C64>,
    directions: CMatrix,
    real: bool,
}

impl SearchProblem {
    pub fn new(u: Vec<C64>, directions: CMatrix, real: bool) -> Result<Self, PrecodeError> {
        if u.len() != directions.rows() {
            return Err(PrecodeError::InvalidArgument(format!(
                "fixed part has length {} but directions have {} rows",
                u.len(),
                directions.rows()
            )));
        }
        Ok(SearchProblem { u, directions, real })
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn u(&self) -> &[C64] {
        &self.u
    }

    pub fn directions(&self) -> &CMatrix {
        &self.directions
    }

    fn check_cap(&self, caps: &SearchCaps) -> Result<(), PrecodeError> {
        let (cap, kind) = if self.real { (caps.real, "real") } else { (caps.complex, "complex") };
        if self.dim() > cap {
            return Err(PrecodeError::DimensionCap { dim: self.dim(), cap, kind });
        }
        Ok(())
    }
}

/// Result of [`search_min`].
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Alphabet index per coordinate.
    pub digits: Vec<usize>,
    /// The minimizer itself.
    pub point: Vec<C64>,
    /// `‖u + F·p*‖²`, evaluated from the expanded quadratic form.
    pub objective: f64,
    pub candidates: u64,
}

/// Exact exhaustive minimizer of `‖u + F·p‖²` over the alphabet grid.
pub fn search_min(problem: &SearchProblem, alphabet: &PerturbAlphabet, caps: &SearchCaps) -> Result<SearchOutcome, PrecodeError> {
    problem.check_cap(caps)?;
    let values = if problem.real { alphabet.real_values() } else { alphabet.complex_values() };
    let form = QuadForm::from_directions(&problem.u, &problem.directions);
    let digits = Enumerator::new().minimize(&form, &values).digits;
    let point: Vec<C64> = digits.iter().map(|&k| values[k]).collect();
    // exact re-evaluation in the expanded form; independent of the row count
    let objective = form.eval(&point).max(0.0);
    Ok(SearchOutcome {
        digits,
        point,
        objective,
        candidates: candidate_count(values.len(), problem.dim()),
    })
}

/// `W = Hᴴ(HHᴴ)⁻¹`, computed as `(G⁻¹H)ᴴ` with `G = HHᴴ`.
pub fn zf_matrix(h: &CMatrix) -> Result<CMatrix, PrecodeError> {
    if h.rows() > h.cols() {
        return Err(PrecodeError::InvalidArgument(format!(
            "zero forcing needs N <= M, got {}x{}",
            h.rows(),
            h.cols()
        )));
    }
    let g = gram(&h.adjoint());
    Ok(hermitian_solve(&g, h)?.adjoint())
}

fn check_block(w: &CMatrix, n: usize) -> Result<(), PrecodeError> {
    if w.cols() != n {
        return Err(PrecodeError::InvalidArgument(format!(
            "precoding matrix has {} columns for a block of {} symbols",
            w.cols(),
            n
        )));
    }
    Ok(())
}

/// `x = W·(s + scale·offset)`.
fn transmit_block(w: &CMatrix, s: &[C64], scale: f64, offset: &[CInt]) -> Vec<C64> {
    let t: Vec<C64> = s
        .iter()
        .zip(offset)
        .map(|(sn, b)| sn + C64::new(b.re as f64, b.im as f64) * scale)
        .collect();
    w.mul_vec(&t).expect("dimensions checked by caller")
}

fn finish(w: &CMatrix, s: &[C64], scale: f64, offset: Vec<CInt>, perturbation: Perturbation, candidates: u64) -> PrecodeResult {
    let x_raw = transmit_block(w, s, scale, &offset);
    PrecodeResult {
        objective: norm_sq(&x_raw),
        x_raw,
        perturbation,
        lattice_offset: offset,
        candidates,
    }
}

fn to_cint(z: C64) -> CInt {
    CInt::new(z.re as i32, z.im as i32)
}

/// Zero forcing: `x = W·s`.
pub fn precode_zf(w: &CMatrix, s: &[C64]) -> Result<PrecodeResult, PrecodeError> {
    check_block(w, s.len())?;
    let offset = vec![CInt::new(0, 0); s.len()];
    Ok(finish(w, s, 0.0, offset, Perturbation::None, 0))
}

/// Full vector perturbation over `alphabet^N`.
pub fn precode_vp(w: &CMatrix, s: &[C64], alpha: f64, alphabet: &PerturbAlphabet, caps: &SearchCaps) -> Result<PrecodeResult, PrecodeError> {
    check_block(w, s.len())?;
    let problem = SearchProblem::new(w.mul_vec(s)?, w.scaled(alpha), false)?;
    let out = search_min(&problem, alphabet, caps)?;
    let b: Vec<CInt> = out.point.iter().map(|&z| to_cint(z)).collect();
    Ok(finish(w, s, alpha, b.clone(), Perturbation::Complex(b), out.candidates))
}

/// Lexicographic `K`-subsets of `0..n`.
struct Combinations {
    idx: Vec<usize>,
    n: usize,
    first: bool,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            idx: (0..k).collect(),
            n,
            first: true,
        }
    }

    fn advance(&mut self) -> Option<&[usize]> {
        if self.first {
            self.first = false;
            return Some(&self.idx);
        }
        let k = self.idx.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(&self.idx);
            }
        }
        None
    }
}

pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

/// Degree-`K` vector perturbation: exhaustive search restricted to `K`
/// symbols, over every `K`-subset. Ties across subsets keep the
/// lexicographically smallest subset.
pub fn precode_dkvp(
    w: &CMatrix,
    s: &[C64],
    alpha: f64,
    alphabet: &PerturbAlphabet,
    k: usize,
    caps: &SearchCaps,
) -> Result<PrecodeResult, PrecodeError> {
    let n = s.len();
    check_block(w, n)?;
    if k == 0 || k > n {
        return Err(PrecodeError::InvalidArgument(format!("degree K={k} outside 1..={n}")));
    }
    if k > caps.complex {
        return Err(PrecodeError::DimensionCap {
            dim: k,
            cap: caps.complex,
            kind: "complex",
        });
    }
    let values = alphabet.complex_values();
    let full = QuadForm::from_directions(&w.mul_vec(s)?, &w.scaled(alpha));
    let amax = values.iter().fold(0.0f64, |m, a| m.max(a.norm()));
    let tol = TIE_RTOL * full.scale(amax);

    let mut sub = QuadForm::empty(0.0);
    let mut en = Enumerator::new();
    let mut best = f64::INFINITY;
    let mut best_subset = Vec::new();
    let mut best_digits = Vec::new();
    let mut combos = Combinations::new(n, k);
    while let Some(subset) = combos.advance() {
        full.restrict_into(subset, &mut sub);
        let (v, _) = en.run(&sub, &values);
        if v < best - tol {
            best = v;
            best_subset.clear();
            best_subset.extend_from_slice(subset);
            best_digits.clear();
            best_digits.extend_from_slice(en.best_digits());
        }
    }
    let mut b = vec![CInt::new(0, 0); n];
    for (&i, &dg) in best_subset.iter().zip(&best_digits) {
        b[i] = alphabet.complex_set()[dg];
    }
    let candidates = binomial(n, k).saturating_mul(candidate_count(values.len(), k));
    Ok(finish(w, s, alpha, b.clone(), Perturbation::Complex(b), candidates))
}

/// `W·A`: one column per distinct point, the sum of the columns of `W`
/// carrying that point.
fn combine_columns(w: &CMatrix, symbol_col: &[usize], ncols: usize) -> CMatrix {
    let mut out = CMatrix::zeros(w.rows(), ncols);
    for m in 0..w.rows() {
        let src = w.row(m);
        let dst = out.row_mut(m);
        for (n, &c) in symbol_col.iter().enumerate() {
            dst[c] += src[n];
        }
    }
    out
}

/// Constellation-oriented perturbation: one complex perturbation per
/// distinct constellation point of the block.
pub fn precode_cop(
    w: &CMatrix,
    indices: &[usize],
    cons: &Constellation,
    tau: f64,
    alphabet: &PerturbAlphabet,
    caps: &SearchCaps,
) -> Result<PrecodeResult, PrecodeError> {
    check_block(w, indices.len())?;
    let map = MappingPair::build(indices, cons, FoldMode::None)?;
    let s = cons.symbols(indices);
    let wa = combine_columns(w, map.symbol_cols(), map.col_index().len());
    let problem = SearchProblem::new(w.mul_vec(&s)?, wa.scaled(tau), false)?;
    let out = search_min(&problem, alphabet, caps)?;
    let rho: Vec<CInt> = out.point.iter().map(|&z| to_cint(z)).collect();
    let offset = map.symbol_cols().iter().map(|&c| rho[c]).collect();
    Ok(finish(w, &s, tau, offset, Perturbation::Complex(rho), out.candidates))
}

/// `W·A·B` restricted to the folded levels the block actually uses.
/// Returns the matrix and the surviving level indices.
pub fn wl_cop_matrix(w: &CMatrix, map: &MappingPair) -> (CMatrix, Vec<usize>) {
    let used = map.used_columns();
    let surviving: Vec<usize> = (0..used.len()).filter(|&j| used[j]).collect();
    let mut pos = vec![usize::MAX; used.len()];
    for (p, &j) in surviving.iter().enumerate() {
        pos[j] = p;
    }
    let rows = map.fold_rows();
    let mut out = CMatrix::zeros(w.rows(), surviving.len());
    for m in 0..w.rows() {
        let src = w.row(m);
        let dst = out.row_mut(m);
        for (n, &c) in map.symbol_cols().iter().enumerate() {
            let r = rows[c];
            let z = src[n];
            dst[pos[r.re_col]] += z * r.re_coef as f64;
            // j·b⁽²⁾·z
            dst[pos[r.im_col]] += C64::new(-z.im, z.re) * r.im_coef as f64;
        }
    }
    (out, surviving)
}

/// Widely-linear COP: a real perturbation per folded level, searched over
/// `real_set^J` with `J` set by the fold mode.
pub fn precode_wl_cop(
    w: &CMatrix,
    indices: &[usize],
    cons: &Constellation,
    tau: f64,
    alphabet: &PerturbAlphabet,
    mode: FoldMode,
    caps: &SearchCaps,
) -> Result<PrecodeResult, PrecodeError> {
    check_block(w, indices.len())?;
    let map = MappingPair::build(indices, cons, mode)?;
    let s = cons.symbols(indices);
    let (w_cop, surviving) = wl_cop_matrix(w, &map);
    let problem = SearchProblem::new(w.mul_vec(&s)?, w_cop.scaled(tau), true)?;
    let out = search_min(&problem, alphabet, caps)?;
    let mut rho = vec![0i32; map.fold_dim()];
    for (&j, p) in surviving.iter().zip(&out.point) {
        rho[j] = p.re as i32;
    }
    let rows = map.fold_rows();
    let offset = map
        .symbol_cols()
        .iter()
        .map(|&c| {
            let r = rows[c];
            CInt::new(r.re_coef * rho[r.re_col], r.im_coef * rho[r.im_col])
        })
        .collect();
    Ok(finish(w, &s, tau, offset, Perturbation::Real(rho), out.candidates))
}

/// Which precoder a simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrecoderKind {
    Zf,
    Vp,
    Dkvp { k: usize },
    Cop,
    WlCop { mode: FoldMode },
}

impl PrecoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrecoderKind::Zf => "zf",
            PrecoderKind::Vp => "vp",
            PrecoderKind::Dkvp { .. } => "dkvp",
            PrecoderKind::Cop => "cop",
            PrecoderKind::WlCop { .. } => "wlcop",
        }
    }

    pub fn is_perturbed(&self) -> bool {
        !matches!(self, PrecoderKind::Zf)
    }

    pub fn fold_mode(&self) -> Option<FoldMode> {
        match self {
            PrecoderKind::WlCop { mode } => Some(*mode),
            _ => None,
        }
    }

    pub fn degree(&self) -> Option<usize> {
        match self {
            PrecoderKind::Dkvp { k } => Some(*k),
            _ => None,
        }
    }

    /// Parses a name plus the fold mode and degree that go with it.
    pub fn from_parts(name: &str, mode: FoldMode, k: usize) -> Result<Self, String> {
        match name.to_ascii_lowercase().as_str() {
            "zf" => Ok(PrecoderKind::Zf),
            "vp" => Ok(PrecoderKind::Vp),
            "dkvp" => Ok(PrecoderKind::Dkvp { k }),
            "cop" => Ok(PrecoderKind::Cop),
            "wlcop" | "wl-cop" => Ok(PrecoderKind::WlCop { mode }),
            other => Err(format!("unknown precoder '{other}' (expected zf, vp, dkvp, cop or wlcop)")),
        }
    }

    pub fn precode(
        &self,
        w: &CMatrix,
        indices: &[usize],
        cons: &Constellation,
        tau: f64,
        alphabet: &PerturbAlphabet,
        caps: &SearchCaps,
    ) -> Result<PrecodeResult, PrecodeError> {
        match *self {
            PrecoderKind::Zf => precode_zf(w, &cons.symbols(indices)),
            PrecoderKind::Vp => precode_vp(w, &cons.symbols(indices), tau, alphabet, caps),
            PrecoderKind::Dkvp { k } => precode_dkvp(w, &cons.symbols(indices), tau, alphabet, k, caps),
            PrecoderKind::Cop => precode_cop(w, indices, cons, tau, alphabet, caps),
            PrecoderKind::WlCop { mode } => precode_wl_cop(w, indices, cons, tau, alphabet, mode, caps),
        }
    }
}

impl fmt::Display for PrecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecoderKind::Dkvp { k } => write!(f, "dkvp{k}"),
            PrecoderKind::WlCop { mode } => write!(f, "wlcop-{mode}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for PrecoderKind {
    type Err = String;

    /// Accepts `zf`, `vp`, `cop`, `dkvp<K>` and `wlcop-<mode>`; a bare
    /// `dkvp` means `K = 2` and a bare `wlcop` means no folding.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("dkvp") {
            let k = if rest.is_empty() {
                2
            } else {
                rest.parse::<usize>().map_err(|_| format!("bad degree in '{s}'"))?
            };
            return Ok(PrecoderKind::Dkvp { k });
        }
        if let Some(rest) = lower.strip_prefix("wlcop").or_else(|| lower.strip_prefix("wl-cop")) {
            let mode = match rest.strip_prefix('-') {
                None if rest.is_empty() => FoldMode::None,
                Some(m) => m.parse()?,
                None => return Err(format!("unknown precoder '{s}'")),
            };
            return Ok(PrecoderKind::WlCop { mode });
        }
        PrecoderKind::from_parts(&lower, FoldMode::None, 2)
    }
}

/// Folded dimension `J` of a WL-COP precoder, before pruning.
pub fn nominal_fold_dim(kind: &PrecoderKind, cons: &Constellation) -> Option<usize> {
    kind.fold_mode().map(|m| m.dim(cons.side()))
}
