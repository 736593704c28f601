//! Exhaustive minimization of `‖u + F·p‖²` over a finite per-coordinate
//! alphabet.
//!
//! The objective is expanded once into `‖u‖² + 2·Re(gᴴp) + pᴴGp` with
//! `g = Fᴴu` and `G = FᴴF`. After that nothing depends on the number of rows
//! of `F`. The first `d − 1` coordinates are walked in reflected mixed-radix
//! Gray order, so each step changes one coordinate and costs `O(d)`; the last
//! coordinate is scored in closed form for every alphabet value, `O(1)` per
//! candidate.
//!
//! Ties are resolved toward the candidate with the smallest lexicographic
//! rank (coordinate 0 most significant, digits in alphabet order), so the
//! result matches a plain nested-loop enumeration that keeps the first
//! minimum it sees.

use crate::numerics::{cdot, gram, norm_sq, CMatrix, C64};

/// Relative width of the band in which two objective values count as tied.
pub const TIE_RTOL: f64 = 1e-12;

/// Quadratic objective `offset + 2·Re(linearᴴ p) + pᴴ·gram·p`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    dim: usize,
    offset: f64,
    linear: Vec<C64>,
    gram: Vec<C64>,
}

impl QuadForm {
    /// Expands `‖u + F·p‖²`.
    pub fn from_directions(u: &[C64], f: &CMatrix) -> Self {
        let dim = f.cols();
        let mut linear = vec![C64::new(0.0, 0.0); dim];
        for (m, &um) in u.iter().enumerate() {
            // g_i += conj(F[m,i]) u_m
            for (gi, fi) in linear.iter_mut().zip(f.row(m)) {
                *gi += fi.conj() * um;
            }
        }
        QuadForm {
            dim,
            offset: norm_sq(u),
            linear,
            gram: gram(f).as_slice().to_vec(),
        }
    }

    pub fn empty(offset: f64) -> Self {
        QuadForm {
            dim: 0,
            offset,
            linear: Vec::new(),
            gram: Vec::new(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn offset(&self) -> f64 {
        self.offset
    }

    #[inline]
    fn g(&self, i: usize, j: usize) -> C64 {
        self.gram[i * self.dim + j]
    }

    /// Copies the sub-form on the listed coordinates into `out`, reusing its
    /// buffers.
    pub fn restrict_into(&self, coords: &[usize], out: &mut QuadForm) {
        let k = coords.len();
        out.dim = k;
        out.offset = self.offset;
        out.linear.clear();
        out.linear.extend(coords.iter().map(|&i| self.linear[i]));
        out.gram.clear();
        for &i in coords {
            for &j in coords {
                out.gram.push(self.g(i, j));
            }
        }
    }

    /// Direct evaluation at `p`.
    pub fn eval(&self, p: &[C64]) -> f64 {
        let mut v = self.offset + 2.0 * cdot(&self.linear, p).re;
        for i in 0..self.dim {
            let row = &self.gram[i * self.dim..(i + 1) * self.dim];
            let gp = row.iter().zip(p).fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b);
            v += (p[i].conj() * gp).re;
        }
        v
    }

    /// Magnitude against which tie tolerances are measured.
    pub fn scale(&self, amax: f64) -> f64 {
        let trace: f64 = (0..self.dim).map(|i| self.g(i, i).re).sum();
        let lin: f64 = self.linear.iter().map(|z| z.norm()).sum();
        self.offset + amax * amax * trace + 2.0 * amax * lin
    }
}

/// Winner of one enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Alphabet index chosen for each coordinate.
    pub digits: Vec<usize>,
    /// Objective as tracked by the incremental recursion.
    pub value: f64,
    /// Lexicographic rank of `digits`.
    pub rank: u128,
}

/// Reusable buffers for [`Enumerator::minimize`].
#[derive(Debug, Default)]
pub struct Enumerator {
    digits: Vec<usize>,
    dirs: Vec<bool>,
    weights: Vec<u128>,
    h: Vec<C64>,
    leaf_energy: Vec<f64>,
    best_digits: Vec<usize>,
}

impl Enumerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exhaustive minimum of `form` over `alphabet^dim`.
    pub fn minimize(&mut self, form: &QuadForm, alphabet: &[C64]) -> Minimum {
        let (value, rank) = self.run(form, alphabet);
        Minimum {
            digits: self.best_digits.clone(),
            value,
            rank,
        }
    }

    /// Like [`Enumerator::minimize`] but leaves the winning digits in
    /// [`Enumerator::best_digits`] instead of allocating.
    pub fn run(&mut self, form: &QuadForm, alphabet: &[C64]) -> (f64, u128) {
        let d = form.dim;
        let q = alphabet.len();
        assert!(q > 0, "empty perturbation alphabet");
        self.best_digits.clear();
        if d == 0 {
            return (form.offset, 0);
        }
        let amax = alphabet.iter().fold(0.0f64, |m, a| m.max(a.norm()));
        let tol = TIE_RTOL * form.scale(amax);
        let last = d - 1;

        self.digits.clear();
        self.digits.resize(d, 0);
        self.dirs.clear();
        self.dirs.resize(last, true);
        self.weights.clear();
        let mut w = 1u128;
        for _ in 0..d {
            self.weights.push(w);
            w = w.saturating_mul(q as u128);
        }
        self.weights.reverse();

        // prefix state: every outer coordinate at alphabet[0], last at zero
        let a0 = alphabet[0];
        self.h.clear();
        for i in 0..d {
            let row = &form.gram[i * d..i * d + last];
            let s = row.iter().fold(C64::new(0.0, 0.0), |acc, gij| acc + gij * a0);
            self.h.push(s);
        }
        let mut cost = form.offset;
        for i in 0..last {
            cost += 2.0 * (a0.conj() * form.linear[i]).re + (a0.conj() * self.h[i]).re;
        }
        let g_ll = form.g(last, last).re;
        self.leaf_energy.clear();
        self.leaf_energy.extend(alphabet.iter().map(|a| g_ll * a.norm_sqr()));
        let g_last = form.linear[last];

        let mut rank_prefix = 0u128;
        let mut best = f64::INFINITY;
        let mut best_rank = u128::MAX;
        loop {
            let z = g_last + self.h[last];
            let (zr, zi) = (2.0 * z.re, 2.0 * z.im);
            for (v, (a, e)) in alphabet.iter().zip(&self.leaf_energy).enumerate() {
                let val = cost + e + a.re * zr + a.im * zi;
                let rank = rank_prefix + v as u128;
                if val < best - tol || (val <= best + tol && rank < best_rank) {
                    best = val;
                    best_rank = rank;
                    self.best_digits.clear();
                    self.best_digits.extend_from_slice(&self.digits[..last]);
                    self.best_digits.push(v);
                }
            }

            // next prefix in reflected Gray order
            let mut j = last;
            let step = loop {
                if j == 0 {
                    break None;
                }
                j -= 1;
                let dgt = self.digits[j];
                if self.dirs[j] {
                    if dgt + 1 < q {
                        break Some((j, dgt, dgt + 1));
                    }
                } else if dgt > 0 {
                    break Some((j, dgt, dgt - 1));
                }
                self.dirs[j] = !self.dirs[j];
            };
            let Some((j, old, new)) = step else { break };
            self.digits[j] = new;
            let dp = alphabet[new] - alphabet[old];
            cost += 2.0 * (dp.conj() * (form.linear[j] + self.h[j])).re + dp.norm_sqr() * form.g(j, j).re;
            // h += G[:, j]·dp, with G[i, j] = conj(G[j, i])
            let row = &form.gram[j * d..(j + 1) * d];
            for (hi, gji) in self.h.iter_mut().zip(row) {
                *hi += gji.conj() * dp;
            }
            if new > old {
                rank_prefix += self.weights[j];
            } else {
                rank_prefix -= self.weights[j];
            }
        }
        (best, best_rank)
    }

    pub fn best_digits(&self) -> &[usize] {
        &self.best_digits
    }
}

/// Number of candidates in `q^d`, saturating.
pub fn candidate_count(q: usize, d: usize) -> u64 {
    (q as u64).saturating_pow(d as u32)
}
