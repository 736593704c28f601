//! Square-QAM alphabets, the symbol-to-constellation mapping `A`, and the
//! widely-linear folding matrix `B` with its folded level vector.
//!
//! Every point sits on the odd-integer grid scaled by a single factor `g`, so
//! the products `A·B·c̆` reproduce the transmitted symbols bit for bit.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{qfunc, CMatrix, C64};

pub const SUPPORTED_ORDERS: [usize; 5] = [4, 16, 64, 256, 1024];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstellationError {
    #[error("unsupported modulation order {0} (expected one of 4, 16, 64, 256, 1024)")]
    UnsupportedModulation(usize),
    #[error("fold mode {mode} needs an even number of levels per axis, got {side}")]
    FoldUnsupported { mode: FoldMode, side: usize },
    #[error("symbol index {index} out of range for {order}-QAM")]
    IndexOutOfRange { index: usize, order: usize },
}

/// Unit-energy square QAM.
///
/// Point `l = d_re·√L + d_im` has per-axis digits `d` that map to the odd
/// integer `k = √L − 1 − 2d`, so index 0 is the top-right corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    side: usize,
    scale: f64,
    points: Vec<C64>,
    axis_levels: Vec<f64>,
}

impl Constellation {
    pub fn make_qam(order: usize) -> Result<Self, ConstellationError> {
        if !SUPPORTED_ORDERS.contains(&order) {
            return Err(ConstellationError::UnsupportedModulation(order));
        }
        let side = (order as f64).sqrt().round() as usize;
        let scale = 1.0 / (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let odd = |d: usize| side as i32 - 1 - 2 * d as i32;
        let points = (0..order)
            .map(|l| C64::new(odd(l / side) as f64 * scale, odd(l % side) as f64 * scale))
            .collect();
        let axis_levels = (0..side).rev().map(|d| odd(d) as f64 * scale).collect();
        Ok(Constellation {
            order,
            side,
            scale,
            points,
            axis_levels,
        })
    }

    /// Number of points `L`.
    #[inline]
    pub fn order(&self) -> usize {
        self.order
    }

    /// Levels per axis, `√L`.
    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Grid scale `g`; every coordinate is an odd multiple of it.
    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn points(&self) -> &[C64] {
        &self.points
    }

    #[inline]
    pub fn point(&self, l: usize) -> C64 {
        self.points[l]
    }

    /// Per-axis levels in ascending order.
    pub fn axis_levels(&self) -> &[f64] {
        &self.axis_levels
    }

    /// Odd-integer coordinates `(k_re, k_im)` with `c_l = g·(k_re + j·k_im)`.
    #[inline]
    pub fn odd_coords(&self, l: usize) -> (i32, i32) {
        let odd = |d: usize| self.side as i32 - 1 - 2 * d as i32;
        (odd(l / self.side), odd(l % self.side))
    }

    /// Largest per-axis amplitude, `(√L − 1)·g`.
    pub fn max_axis_amplitude(&self) -> f64 {
        (self.side - 1) as f64 * self.scale
    }

    pub fn symbols(&self, indices: &[usize]) -> Vec<C64> {
        indices.iter().map(|&l| self.points[l]).collect()
    }

    /// Hard decision: index of the point closest to `y`, smallest index on
    /// ties. The metric is separable, so each axis is sliced on its own.
    pub fn nearest_point(&self, y: C64) -> usize {
        self.slice_axis(y.re) * self.side + self.slice_axis(y.im)
    }

    fn slice_axis(&self, v: f64) -> usize {
        let top = (self.side - 1) as f64;
        // digit d sits at (top − 2d)·g
        let t = (top - v / self.scale) * 0.5;
        if !(t > 0.0) {
            return 0;
        }
        if t >= top {
            return self.side - 1;
        }
        // t is the distance from digit 0 in half-spacings; ties at .5 go down
        let d = t.floor();
        if t - d <= 0.5 {
            d as usize
        } else {
            d as usize + 1
        }
    }
}

/// Theoretical symbol-error probability of square `L`-QAM over AWGN.
pub fn awgn_ser_reference(order: usize, esn0_db: f64) -> f64 {
    let l = order as f64;
    let gamma = 10f64.powf(esn0_db / 10.0);
    let p = 2.0 * (1.0 - 1.0 / l.sqrt()) * qfunc((3.0 * gamma / (l - 1.0)).sqrt());
    1.0 - (1.0 - p) * (1.0 - p)
}

/// How constellation levels are folded onto the real search vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FoldMode {
    /// `J = √L`, every axis level is its own coordinate.
    None,
    /// `J = √L/2`, levels of opposite sign share a coordinate.
    Sign,
    /// `J = 1`, every level is an odd multiple of `g`.
    Full,
}

impl FoldMode {
    pub const ALL: [FoldMode; 3] = [FoldMode::None, FoldMode::Sign, FoldMode::Full];

    /// Folded dimension `J` for `side = √L` levels per axis.
    pub fn dim(self, side: usize) -> usize {
        match self {
            FoldMode::None => side,
            FoldMode::Sign => side / 2,
            FoldMode::Full => 1,
        }
    }

    pub fn check(self, side: usize) -> Result<(), ConstellationError> {
        if self == FoldMode::Sign && side % 2 != 0 {
            return Err(ConstellationError::FoldUnsupported { mode: self, side });
        }
        Ok(())
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FoldMode::None => "none",
            FoldMode::Sign => "sign",
            FoldMode::Full => "full",
        }
    }

    /// Column and signed odd coefficient representing odd level `k`.
    fn place(self, k: i32, side: usize) -> (usize, i32) {
        match self {
            FoldMode::None => (((k + side as i32 - 1) / 2) as usize, 1),
            FoldMode::Sign => (((k.abs() - 1) / 2) as usize, k.signum()),
            FoldMode::Full => (0, k),
        }
    }
}

impl fmt::Display for FoldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FoldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FoldMode::None),
            "sign" => Ok(FoldMode::Sign),
            "full" => Ok(FoldMode::Full),
            other => Err(format!("unknown fold mode '{other}' (expected none, sign or full)")),
        }
    }
}

/// One row of `B`: `b⁽¹⁾` at `re_col` and `j·b⁽²⁾` at `im_col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldRow {
    pub re_col: usize,
    pub re_coef: i32,
    pub im_col: usize,
    pub im_coef: i32,
}

/// Sparse `A` (pruned to the points present in the block) and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingPair {
    mode: FoldMode,
    symbol_col: Vec<usize>,
    retained: Vec<usize>,
    fold_rows: Vec<FoldRow>,
    folded_levels: Vec<f64>,
}

impl MappingPair {
    pub fn build(indices: &[usize], cons: &Constellation, mode: FoldMode) -> Result<Self, ConstellationError> {
        mode.check(cons.side())?;
        let mut col_of = vec![usize::MAX; cons.order()];
        let mut retained = Vec::new();
        let mut symbol_col = Vec::with_capacity(indices.len());
        for &l in indices {
            if l >= cons.order() {
                return Err(ConstellationError::IndexOutOfRange {
                    index: l,
                    order: cons.order(),
                });
            }
            if col_of[l] == usize::MAX {
                col_of[l] = retained.len();
                retained.push(l);
            }
            symbol_col.push(col_of[l]);
        }
        let side = cons.side();
        let fold_rows = retained
            .iter()
            .map(|&l| {
                let (kr, ki) = cons.odd_coords(l);
                let (re_col, re_coef) = mode.place(kr, side);
                let (im_col, im_coef) = mode.place(ki, side);
                FoldRow {
                    re_col,
                    re_coef,
                    im_col,
                    im_coef,
                }
            })
            .collect();
        let g = cons.scale();
        let folded_levels = match mode {
            FoldMode::None => cons.axis_levels().to_vec(),
            FoldMode::Sign => (0..side / 2).map(|j| (2 * j + 1) as f64 * g).collect(),
            FoldMode::Full => vec![g],
        };
        Ok(MappingPair {
            mode,
            symbol_col,
            retained,
            fold_rows,
            folded_levels,
        })
    }

    pub fn mode(&self) -> FoldMode {
        self.mode
    }

    /// Column of `A` holding the single 1 of each row (one per symbol).
    pub fn symbol_cols(&self) -> &[usize] {
        &self.symbol_col
    }

    /// Constellation index behind each retained column of `A`.
    pub fn col_index(&self) -> &[usize] {
        &self.retained
    }

    /// Rows of `B`, aligned with [`MappingPair::col_index`].
    pub fn fold_rows(&self) -> &[FoldRow] {
        &self.fold_rows
    }

    /// The folded level vector `c̆` (length `J`).
    pub fn folded_levels(&self) -> &[f64] {
        &self.folded_levels
    }

    /// Folded dimension `J` before any pruning.
    pub fn fold_dim(&self) -> usize {
        self.folded_levels.len()
    }

    /// Retained constellation points `c` (pruned), via `B·c̆`.
    pub fn retained_points(&self) -> Vec<C64> {
        self.fold_rows.iter().map(|r| self.expand_row(r)).collect()
    }

    /// `A·B·c̆` evaluated through the sparse structure.
    pub fn reconstruct(&self) -> Vec<C64> {
        self.symbol_col.iter().map(|&col| self.expand_row(&self.fold_rows[col])).collect()
    }

    fn expand_row(&self, r: &FoldRow) -> C64 {
        C64::new(
            r.re_coef as f64 * self.folded_levels[r.re_col],
            r.im_coef as f64 * self.folded_levels[r.im_col],
        )
    }

    /// Which folded coordinates are referenced by at least one retained row.
    pub fn used_columns(&self) -> Vec<bool> {
        let mut used = vec![false; self.fold_dim()];
        for r in &self.fold_rows {
            used[r.re_col] = true;
            used[r.im_col] = true;
        }
        used
    }

    /// Dense `A` (N × L').
    pub fn a_matrix(&self) -> CMatrix {
        let mut a = CMatrix::zeros(self.symbol_col.len(), self.retained.len());
        for (n, &col) in self.symbol_col.iter().enumerate() {
            a[(n, col)] = C64::new(1.0, 0.0);
        }
        a
    }

    /// Dense `B` (L' × J).
    pub fn b_matrix(&self) -> CMatrix {
        let mut b = CMatrix::zeros(self.retained.len(), self.fold_dim());
        for (i, r) in self.fold_rows.iter().enumerate() {
            b[(i, r.re_col)] += C64::new(r.re_coef as f64, 0.0);
            b[(i, r.im_col)] += C64::new(0.0, r.im_coef as f64);
        }
        b
    }
}
