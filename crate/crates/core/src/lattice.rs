//! Rank-1 lattice rules: generating vectors, randomly shifted point sets and
//! a Kronecker sequence for deterministic scans.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::special::gcd;
use crate::numerics::Matrix;

const BUNDLED_NAME: &str = "lattice-33002-1024-1048576";
const BUNDLED: &str = include_str!("../data/lattice-33002-1024-1048576.txt");

/// Largest double strictly below 1.
pub const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Integer generating vector `z` of a rank-1 lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratingVector {
    components: Vec<u64>,
    /// File path, `"cbc"`, or the name of a bundled vector.
    pub source: String,
    /// Whether the vector is extensible over `N = 2^m`.
    pub base2_embedded: bool,
}

impl GeneratingVector {
    pub fn new(components: Vec<u64>, source: impl Into<String>, base2_embedded: bool) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("generating vector is empty"));
        }
        if let Some(j) = components.iter().position(|&z| z == 0) {
            return Err(Error::config(format!("generating vector component {} is zero", j + 1)));
        }
        Ok(Self {
            components,
            source: source.into(),
            base2_embedded,
        })
    }

    /// The first 64 components of an embedded base-2 lattice sequence valid
    /// for `N` up to 2^20.
    pub fn bundled() -> Self {
        let components = parse_text(BUNDLED, Path::new(BUNDLED_NAME)).expect("bundled generating vector parses");
        Self {
            components,
            source: BUNDLED_NAME.into(),
            base2_embedded: true,
        }
    }

    /// Reads whitespace-separated positive integers.
    ///
    /// ```
    /// # use rqmc_is::lattice::GeneratingVector;
    /// let dir = tempfile::tempdir().unwrap();
    /// let path = dir.path().join("z.txt");
    /// std::fs::write(&path, "1\n3\n5\n").unwrap();
    /// let z = GeneratingVector::load(&path).unwrap();
    /// assert_eq!(z.components(), &[1, 3, 5]);
    /// ```
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let components = parse_text(&text, path)?;
        Ok(Self {
            components,
            source: path.display().to_string(),
            base2_embedded: true,
        })
    }

    /// One component per line, the format [`GeneratingVector::load`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(8 * self.components.len());
        for z in &self.components {
            let _ = writeln!(s, "{z}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn components(&self) -> &[u64] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Checks that the first `s` components are usable with modulus `n`.
    pub fn check_modulus(&self, n: u64, s: usize) -> Result<()> {
        if s > self.len() {
            return Err(Error::config(format!(
                "dimension {s} exceeds the generating vector length {} ({})",
                self.len(),
                self.source
            )));
        }
        if n == 0 {
            return Err(Error::config("lattice size N must be at least 1"));
        }
        if n == 1 {
            return Ok(());
        }
        if self.base2_embedded && !n.is_power_of_two() {
            return Err(Error::config(format!(
                "N = {n} is not a power of two, required by the embedded vector {}",
                self.source
            )));
        }
        for (j, &z) in self.components[..s].iter().enumerate() {
            if z % n == 0 {
                return Err(Error::config(format!(
                    "component {} of {} vanishes modulo N = {n}",
                    j + 1,
                    self.source
                )));
            }
            if gcd(z, n) != 1 {
                log::debug!("component {} of {} shares a factor with N = {n}", j + 1, self.source);
            }
        }
        Ok(())
    }
}

fn parse_text(text: &str, path: &Path) -> Result<Vec<u64>> {
    let err = |line: usize, message: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for token in line.split_whitespace() {
            let v: i128 = token
                .parse()
                .map_err(|_| err(i + 1, format!("`{token}` is not an integer")))?;
            if v <= 0 {
                return Err(err(i + 1, format!("component {v} is not positive")));
            }
            let v = u64::try_from(v).map_err(|_| err(i + 1, format!("component {v} is too large")))?;
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(err(text.lines().count().max(1), "no components found".into()));
    }
    Ok(out)
}

/// An `N`-point rank-1 lattice in `s` dimensions with a random shift.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedLattice {
    /// Components reduced modulo `N`.
    z: Vec<u64>,
    n: u64,
    shift: Vec<f64>,
    pub seed: u64,
}

impl ShiftedLattice {
    pub fn new(gen: &GeneratingVector, n: u64, s: usize, shift: Vec<f64>, seed: u64) -> Result<Self> {
        gen.check_modulus(n, s)?;
        if shift.len() != s {
            return Err(Error::Dimension {
                context: "lattice shift",
                expected: s,
                got: shift.len(),
            });
        }
        if shift.iter().any(|d| !(0.0..1.0).contains(d)) {
            return Err(Error::config("shift coordinates must lie in [0, 1)"));
        }
        Ok(Self {
            z: gen.components()[..s].iter().map(|z| z % n).collect(),
            n,
            shift,
            seed,
        })
    }

    /// Lattice shifted by [`random_shift`]`(s, seed)`.
    pub fn with_seed(gen: &GeneratingVector, n: u64, s: usize, seed: u64) -> Result<Self> {
        Self::new(gen, n, s, random_shift(s, seed), seed)
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    /// Writes point `k`, `frac(k z / N + Δ)`, into `out`.
    #[inline]
    pub fn point_into(&self, k: u64, out: &mut [f64]) {
        let nf = self.n as f64;
        for ((o, &z), &d) in out.iter_mut().zip(&self.z).zip(&self.shift) {
            let base = ((k % self.n) * z % self.n) as f64 / nf;
            let mut x = base + d;
            if x >= 1.0 {
                x -= 1.0;
            }
            *o = if x >= 1.0 { ONE_MINUS_ULP } else { x };
        }
    }

    pub fn point(&self, k: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(k, &mut p);
        p
    }
}

/// All points as an `N × s` matrix.
///
/// ```
/// # use rqmc_is::lattice::{GeneratingVector, ShiftedLattice, lattice_points};
/// let z = GeneratingVector::new(vec![1, 3], "example", false).unwrap();
/// let lat = ShiftedLattice::new(&z, 4, 2, vec![0.0, 0.0], 0).unwrap();
/// let p = lattice_points(&lat);
/// assert_eq!(p.row(1), &[0.25, 0.75]);
/// ```
pub fn lattice_points(lat: &ShiftedLattice) -> Matrix {
    let s = lat.dim();
    let mut m = Matrix::zeros(lat.len() as usize, s);
    let mut p = vec![0.0; s];
    for k in 0..lat.len() {
        lat.point_into(k, &mut p);
        for (j, v) in p.iter().enumerate() {
            m[(k as usize, j)] = *v;
        }
    }
    m
}

/// Uniform shift in `[0,1)^s`, a deterministic function of `(s, seed)`.
pub fn random_shift(s: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..s).map(|_| rng.random::<f64>()).collect()
}

/// The additive recurrence `frac((k+1) α)` with `α_j = φ_d^{-j}` where `φ_d`
/// is the real root of `x^{d+1} = x + 1`.
#[derive(Clone, Debug)]
pub struct Kronecker {
    alpha: Vec<f64>,
}

impl Kronecker {
    pub fn new(d: usize) -> Self {
        let mut g = 2.0f64;
        for _ in 0..64 {
            g = (1.0 + g).powf(1.0 / (d as f64 + 1.0));
        }
        let alpha = (1..=d).map(|j| g.powi(-(j as i32)).fract()).collect();
        Self { alpha }
    }

    pub fn point(&self, k: u64) -> Vec<f64> {
        let kf = (k + 1) as f64;
        self.alpha.iter().map(|a| (0.5 + a * kf).fract()).collect()
    }
}
