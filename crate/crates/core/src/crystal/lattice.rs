use rayon::prelude::*;

use super::CrystalError;
use crate::scalar::Scalar;

type V3<T> = [T; 3];

fn dot<T: Scalar>(a: &V3<T>, b: &V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Scalar>(a: &V3<T>, b: &V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Cosine and sine of an angle in degrees, exact at 90.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    if deg == 90.0 {
        (0.0, 1.0)
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

fn reduce<T: Scalar>(x: T) -> T {
    let r = x - x.floor();
    // x - floor(x) can round up to exactly 1 for tiny negative x.
    if r >= T::one() {
        T::zero()
    } else {
        r
    }
}

/// A crystal as a lattice (rows of `basis` are the cell vectors a, b, c in Å)
/// plus a motif of fractional coordinates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPointSet<T> {
    basis: [V3<T>; 3],
    motif: Vec<V3<T>>,
    species: Vec<String>,
}

impl<T: Scalar> PeriodicPointSet<T> {
    pub fn new(basis: [V3<T>; 3], motif: Vec<V3<T>>, species: Vec<String>) -> Result<Self, CrystalError> {
        if motif.is_empty() {
            return Err(CrystalError::EmptyMotif);
        }
        if species.len() != motif.len() {
            return Err(CrystalError::Invalid(format!(
                "{} species labels for {} motif points",
                species.len(),
                motif.len()
            )));
        }
        if basis.iter().flatten().chain(motif.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(CrystalError::Invalid("non-finite coordinate".into()));
        }
        let det = dot(&basis[0], &cross(&basis[1], &basis[2]));
        if det.abs().as_f64() <= 1e-6 {
            return Err(CrystalError::Degenerate(det.as_f64()));
        }
        let motif = motif.into_iter().map(|p| p.map(reduce)).collect();
        Ok(Self { basis, motif, species })
    }

    /// Builds the basis from cell lengths (Å) and angles α, β, γ (degrees):
    /// a along x, b in the xy-plane.
    pub fn from_cell(
        lengths: [f64; 3],
        angles: [f64; 3],
        motif: Vec<[f64; 3]>,
        species: Vec<String>,
    ) -> Result<Self, CrystalError> {
        let [a, b, c] = lengths;
        if lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(CrystalError::Invalid(format!("cell lengths must be positive, got {lengths:?}")));
        }
        if angles.iter().any(|&g| !(g > 0.0 && g < 180.0)) {
            return Err(CrystalError::Invalid(format!("cell angles must lie in (0, 180), got {angles:?}")));
        }
        let (ca, _) = cos_sin_deg(angles[0]);
        let (cb, _) = cos_sin_deg(angles[1]);
        let (cg, sg) = cos_sin_deg(angles[2]);
        let cx = c * cb;
        let cy = c * (ca - cb * cg) / sg;
        let cz2 = c * c - cx * cx - cy * cy;
        if cz2 <= 0.0 {
            return Err(CrystalError::Degenerate(0.0));
        }
        let basis = [[a, 0.0, 0.0], [b * cg, b * sg, 0.0], [cx, cy, cz2.sqrt()]].map(|r| r.map(T::of));
        let motif = motif.into_iter().map(|p| p.map(T::of)).collect();
        Self::new(basis, motif, species)
    }

    pub fn basis(&self) -> &[V3<T>; 3] {
        &self.basis
    }

    pub fn motif(&self) -> &[V3<T>] {
        &self.motif
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn volume(&self) -> T {
        dot(&self.basis[0], &cross(&self.basis[1], &self.basis[2])).abs()
    }

    /// Fractional to Cartesian (row vector times basis).
    pub fn to_cartesian(&self, f: &V3<T>) -> V3<T> {
        let b = &self.basis;
        [0, 1, 2].map(|k| f[0] * b[0][k] + f[1] * b[1][k] + f[2] * b[2][k])
    }

    /// Distances between adjacent lattice planes parallel to (bc), (ca), (ab).
    pub fn plane_spacings(&self) -> V3<T> {
        let v = self.volume();
        let b = &self.basis;
        [
            v / dot(&cross(&b[1], &b[2]), &cross(&b[1], &b[2])).sqrt(),
            v / dot(&cross(&b[2], &b[0]), &cross(&b[2], &b[0])).sqrt(),
            v / dot(&cross(&b[0], &b[1]), &cross(&b[0], &b[1])).sqrt(),
        ]
    }

    /// The same crystal described by an `n[0] x n[1] x n[2]` supercell.
    pub fn supercell(&self, n: [usize; 3]) -> Result<Self, CrystalError> {
        if n.contains(&0) {
            return Err(CrystalError::Invalid("supercell multiples must be >= 1".into()));
        }
        let basis = [0, 1, 2].map(|i| self.basis[i].map(|x| x * T::of(n[i] as f64)));
        let mut motif = Vec::new();
        let mut species = Vec::new();
        for i in 0..n[0] {
            for j in 0..n[1] {
                for k in 0..n[2] {
                    let off = [i, j, k];
                    for (p, s) in self.motif.iter().zip(&self.species) {
                        motif.push([0, 1, 2].map(|d| (p[d] + T::of(off[d] as f64)) / T::of(n[d] as f64)));
                        species.push(s.clone());
                    }
                }
            }
        }
        Self::new(basis, motif, species)
    }

    /// Every motif point shifted by `shift` (fractional), reduced mod 1.
    pub fn translated(&self, shift: V3<T>) -> Self {
        Self {
            basis: self.basis,
            motif: self.motif.iter().map(|p| [0, 1, 2].map(|d| reduce(p[d] + shift[d]))).collect(),
            species: self.species.clone(),
        }
    }

    /// Fractional offset from motif point `i` to `j`, wrapped into `[-1/2, 1/2]`.
    fn offset(&self, i: usize, j: usize) -> V3<T> {
        [0, 1, 2].map(|d| {
            let x = self.motif[j][d] - self.motif[i][d];
            x - x.round()
        })
    }

    fn check_coincident(&self) -> Result<(), CrystalError> {
        let tol = T::of(1e-8);
        for i in 0..self.motif.len() {
            for j in i + 1..self.motif.len() {
                let d = self.to_cartesian(&self.offset(i, j));
                if dot(&d, &d).sqrt() < tol {
                    return Err(CrystalError::Coincident { first: i, second: j });
                }
            }
        }
        Ok(())
    }

    /// Sorted distances from each motif point to its `k` nearest neighbours in
    /// the infinite crystal (its own periodic images included, itself not).
    ///
    /// Lattice images are visited in cubic shells `max|n| = s`. Offsets are
    /// wrapped into `[-1/2, 1/2]`, so any image outside shells `0..=s` lies at
    /// least `(s + 1/2) * h_min` away, `h_min` being the smallest plane
    /// spacing; the search for a point ends once its k-th distance is within
    /// that bound, plus `extra_shells` further shells.
    pub fn kth_nearest_distances(&self, k: usize, extra_shells: usize) -> Result<Vec<Vec<T>>, CrystalError> {
        if k == 0 {
            return Err(CrystalError::Invalid("k must be >= 1".into()));
        }
        self.check_coincident()?;
        let spacings = self.plane_spacings();
        let h_min = spacings[0].min(spacings[1]).min(spacings[2]);
        let half = T::of(0.5);
        let n = self.motif.len();
        let offsets: Vec<Vec<V3<T>>> = (0..n).map(|i| (0..n).map(|j| self.offset(i, j)).collect()).collect();
        Ok((0..n)
            .into_par_iter()
            .map(|i| {
                let mut best: Vec<T> = Vec::new();
                let mut done_at: Option<i64> = None;
                let mut s: i64 = 0;
                loop {
                    for cell in shell(s) {
                        let cf = cell.map(|c| T::of(c as f64));
                        for (j, off) in offsets[i].iter().enumerate() {
                            if s == 0 && j == i {
                                continue;
                            }
                            let u = [off[0] + cf[0], off[1] + cf[1], off[2] + cf[2]];
                            let x = self.to_cartesian(&u);
                            best.push(dot(&x, &x).sqrt());
                        }
                    }
                    best.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
                    best.truncate(k);
                    if done_at.is_none() && best.len() == k && best[k - 1] <= (T::of(s as f64) + half) * h_min {
                        done_at = Some(s);
                    }
                    if done_at.is_some_and(|d| s >= d + extra_shells as i64) {
                        return best;
                    }
                    s += 1;
                }
            })
            .collect())
    }
}

/// Integer cells with `max(|n_i|) == s`.
fn shell(s: i64) -> Vec<[i64; 3]> {
    if s == 0 {
        return vec![[0, 0, 0]];
    }
    let mut out = Vec::with_capacity((24 * s * s + 2) as usize);
    for a in -s..=s {
        for b in -s..=s {
            for c in -s..=s {
                if a.abs() == s || b.abs() == s || c.abs() == s {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}
