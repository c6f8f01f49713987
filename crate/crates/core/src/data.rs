//! Benchmark targets, deterministic dataset generation and the PRNG contract.
//!
//! The generator is SplitMix64: the state advances by the golden-gamma
//! constant `0x9E3779B97F4A7C15` and each output is the state passed through
//! the standard finalizer. Doubles take the top 53 bits, giving values in
//! `[0, 1)`. Published vectors for seed 1 are frozen in the tests below.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
    spare_normal: Option<f64>,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform double in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw by the Box–Muller transform (pairs are cached).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One PRNG step on a bare state.
pub fn prng_next(state: u64) -> (u64, f64) {
    let next = state.wrapping_add(GOLDEN_GAMMA);
    let x = mix(next);
    (next, (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64))
}

/// `f(x) = (x + 1) (φ4 ∘ φ3 ∘ φ2 ∘ φ1)(x)`; continuous, not differentiable.
pub fn target_nondiff(x: f64) -> f64 {
    let p1 = ((PI * (x - 0.3)).cos() - 0.7).abs();
    let p2 = ((2.0 * PI * (p1 - 0.5)).cos() - 0.5).abs();
    let p3 = -(p2 - 1.3).abs() + 1.3;
    let p4 = -(p3 - 0.9).abs() + 0.9;
    (x + 1.0) * p4
}

pub const OSCILLATORY_DIM: usize = 20;

/// Coefficients of `ψ_k(x) = (a_k x² + b_k x + c_k) sin(100 x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatoryCoeffs {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

const CANONICAL_COEFFS: &str = include_str!("../data/oscillatory_coeffs.txt");

impl OscillatoryCoeffs {
    /// Draws `a = 5 N`, `b = -5 N`, `c = 10 N` from the crate PRNG.
    pub fn generate(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |scale: f64| -> Vec<f64> {
            (0..OSCILLATORY_DIM)
                .map(|_| scale * rng.next_normal())
                .collect()
        };
        let a = draw(5.0);
        let b = draw(-5.0);
        let c = draw(10.0);
        Self { a, b, c }
    }

    /// The frozen coefficient set shipped with the crate.
    pub fn canonical() -> Self {
        Self::parse(CANONICAL_COEFFS).expect("bundled coefficient file is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Parses lines of `k a_k b_k c_k`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, f64, f64, f64)> = vec![];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::invalid(format!(
                    "line {}: expected `k a b c`, got {} fields",
                    lineno + 1,
                    fields.len()
                )));
            }
            let bad = |what: &str| Error::invalid(format!("line {}: bad {what}", lineno + 1));
            let k: usize = fields[0].parse().map_err(|_| bad("index"))?;
            let a: f64 = fields[1].parse().map_err(|_| bad("a"))?;
            let b: f64 = fields[2].parse().map_err(|_| bad("b"))?;
            let c: f64 = fields[3].parse().map_err(|_| bad("c"))?;
            rows.push((k, a, b, c));
        }
        if rows.len() != OSCILLATORY_DIM {
            return Err(Error::DimensionMismatch {
                context: "oscillatory coefficient rows",
                expected: OSCILLATORY_DIM,
                found: rows.len(),
            });
        }
        rows.sort_by_key(|r| r.0);
        for (i, r) in rows.iter().enumerate() {
            if r.0 != i + 1 {
                return Err(Error::invalid(format!(
                    "coefficient rows must be numbered 1..=20, missing {}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            a: rows.iter().map(|r| r.1).collect(),
            b: rows.iter().map(|r| r.2).collect(),
            c: rows.iter().map(|r| r.3).collect(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in 0..OSCILLATORY_DIM {
            writeln!(
                s,
                "{} {:.16e} {:.16e} {:.16e}",
                k + 1,
                self.a[k],
                self.b[k],
                self.c[k]
            )
            .unwrap();
        }
        s
    }
}

pub fn target_oscillatory(coeffs: &OscillatoryCoeffs, x: f64) -> Vec<f64> {
    let s = (100.0 * x).sin();
    (0..OSCILLATORY_DIM)
        .map(|k| (coeffs.a[k] * x * x + coeffs.b[k] * x + coeffs.c[k]) * s)
        .collect()
}

/// A target given as samples, evaluated by linear interpolation and held
/// constant outside the sampled range.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    xs: Vec<f64>,
    ys: Vec<Vec<f64>>,
}

impl Tabulated {
    pub fn new(xs: Vec<f64>, ys: Vec<Vec<f64>>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::invalid(
                "tabulated target needs matching, non-empty x and y",
            ));
        }
        let t = ys[0].len();
        if t == 0 || ys.iter().any(|y| y.len() != t) {
            return Err(Error::invalid("tabulated rows must share a positive width"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "tabulated x values must be strictly increasing",
            ));
        }
        Ok(Self { xs, ys })
    }

    /// Reads a headerless CSV with columns `x, y_1, ..., y_t`.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let (mut xs, mut ys) = (vec![], vec![]);
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            let vals: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if vals.len() < 2 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: "expected at least two columns".into(),
                });
            }
            xs.push(vals[0]);
            ys.push(vals[1..].to_vec());
        }
        Self::new(xs, ys)
    }

    pub fn output_dim(&self) -> usize {
        self.ys[0].len()
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0].clone();
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1].clone();
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let frac = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i]
            .iter()
            .zip(&self.ys[i + 1])
            .map(|(lo, hi)| lo + frac * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetFn {
    NonDiff,
    Oscillatory(OscillatoryCoeffs),
    Custom(Tabulated),
}

impl TargetFn {
    pub fn output_dim(&self) -> usize {
        match self {
            TargetFn::NonDiff => 1,
            TargetFn::Oscillatory(_) => OSCILLATORY_DIM,
            TargetFn::Custom(t) => t.output_dim(),
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        match self {
            TargetFn::NonDiff => vec![target_nondiff(x)],
            TargetFn::Oscillatory(c) => target_oscillatory(c, x),
            TargetFn::Custom(t) => t.eval(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetKind {
    TrainGrid { a: f64, b: f64, delta: f64 },
    TestUniform { a: f64, b: f64, seed: u64 },
    Given,
}

/// Sample pairs: `inputs` is `m × s`, `targets` is `m × t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub kind: DatasetKind,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: inputs.nrows(),
                found: targets.nrows(),
            });
        }
        if inputs.nrows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        Ok(Self {
            inputs,
            targets,
            kind: DatasetKind::Given,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    fn tabulate(target: &TargetFn, xs: &[f64]) -> DMatrix<f64> {
        let t = target.output_dim();
        let mut y = DMatrix::zeros(xs.len(), t);
        for (i, &x) in xs.iter().enumerate() {
            for (j, v) in target.eval(x).into_iter().enumerate() {
                y[(i, j)] = v;
            }
        }
        y
    }
}

/// `m` equally spaced points over `[a - δ, b + δ]`, endpoints included.
pub fn grid_points(a: f64, b: f64, delta: f64, m: usize) -> Vec<f64> {
    let lo = a - delta;
    let hi = b + delta;
    let span = hi - lo;
    let n = (m - 1) as f64;
    (0..m)
        .map(|i| {
            if i + 1 == m {
                hi
            } else {
                lo + span * (i as f64 / n)
            }
        })
        .collect()
}

pub fn make_train(target: &TargetFn, a: f64, b: f64, delta: f64, m: usize) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::invalid("training grid needs at least two points"));
    }
    if !(b > a) || !(delta >= 0.0) {
        return Err(Error::invalid(
            "training interval must satisfy a < b and delta >= 0",
        ));
    }
    let xs = grid_points(a, b, delta, m);
    Ok(Dataset {
        targets: Dataset::tabulate(target, &xs),
        inputs: DMatrix::from_column_slice(m, 1, &xs),
        kind: DatasetKind::TrainGrid { a, b, delta },
    })
}

pub fn make_test(target: &TargetFn, a: f64, b: f64, m: usize, seed: u64) -> Result<Dataset> {
    if m < 1 {
        return Err(Error::invalid("test set needs at least one point"));
    }
    if !(b > a) {
        return Err(Error::invalid("test interval must satisfy a < b"));
    }
    let mut rng = SplitMix64::new(seed);
    let xs: Vec<f64> = (0..m).map(|_| rng.uniform(a, b)).collect();
    Ok(Dataset {
        targets: Dataset::tabulate(target, &xs),
        inputs: DMatrix::from_column_slice(m, 1, &xs),
        kind: DatasetKind::TestUniform { a, b, seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference SplitMix64 outputs for seed 1, computed independently from the
    // published algorithm description.
    const SEED1_U64: [u64; 3] = [
        0x910A_2DEC_8902_5CC1,
        0xBEEB_8DA1_658E_EC67,
        0xF893_A2EE_FB32_555E,
    ];

    #[test]
    fn splitmix_reference_vectors() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        let mut rng = SplitMix64::new(1);
        for want in SEED1_U64 {
            assert_eq!(rng.next_u64(), want);
        }
    }

    #[test]
    fn prng_next_matches_generator() {
        let mut state = 1u64;
        for want in SEED1_U64 {
            let (s, u) = prng_next(state);
            state = s;
            assert_eq!(u, (want >> 11) as f64 / (1u64 << 53) as f64);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_first_outputs() {
        let mut firsts: Vec<u64> = (0..100u64).map(|s| SplitMix64::new(s).next_u64()).collect();
        firsts.sort_unstable();
        firsts.dedup();
        assert_eq!(firsts.len(), 100);
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut rng = SplitMix64::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn nondiff_hand_values() {
        assert_eq!(target_nondiff(-1.0), 0.0);
        // φ1(0.3) = |cos 0 - 0.7| = 0.3
        let p2 = ((2.0 * PI * (0.3 - 0.5)).cos() - 0.5).abs();
        let p3 = -(p2 - 1.3f64).abs() + 1.3;
        let p4 = -(p3 - 0.9f64).abs() + 0.9;
        assert!((target_nondiff(0.3) - 1.3 * p4).abs() < 1e-15);
        // p2 = |cos(-0.4π) - 0.5| = 0.5 - 0.30901699... = 0.19098300...
        assert!((p2 - 0.190_983_005_625_052_6).abs() < 1e-12);
        assert!((target_nondiff(0.3) - 1.3 * 0.190_983_005_625_052_6).abs() < 1e-12);
    }

    #[test]
    fn nondiff_is_continuous() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..100 {
            let x = rng.uniform(-1.0, 1.0);
            assert!((target_nondiff(x + 1e-9) - target_nondiff(x)).abs() <= 1e-6);
        }
    }

    #[test]
    fn oscillatory_zeros_and_loop() {
        let c = OscillatoryCoeffs::generate(3);
        assert!(target_oscillatory(&c, 0.0).iter().all(|&v| v == 0.0));
        for j in 1..4 {
            let x = PI / 100.0 * j as f64;
            assert!(target_oscillatory(&c, x).iter().all(|v| v.abs() < 1e-12));
        }
        let x = 0.1;
        let got = target_oscillatory(&c, x);
        for k in 0..20 {
            let want = (c.a[k] * x * x + c.b[k] * x + c.c[k]) * (100.0 * x).sin();
            assert_eq!(got[k], want);
        }
    }

    #[test]
    fn coefficient_file_round_trip() {
        let c = OscillatoryCoeffs::generate(1);
        let text = c.to_text();
        assert_eq!(OscillatoryCoeffs::parse(&text).unwrap(), c);
        assert_eq!(OscillatoryCoeffs::parse(&text).unwrap().to_text(), text);
        assert!(OscillatoryCoeffs::parse("1 2 3 4\n").is_err());
    }

    #[test]
    fn canonical_coefficients_come_from_seed_one() {
        assert_eq!(
            OscillatoryCoeffs::canonical(),
            OscillatoryCoeffs::generate(1)
        );
    }

    #[test]
    fn train_grid_endpoints_and_spacing() {
        let d = make_train(&TargetFn::NonDiff, -1.0, 1.0, 0.1, 3).unwrap();
        assert_eq!(d.inputs.as_slice(), &[-1.1, 0.0, 1.1]);
        let d = make_train(&TargetFn::NonDiff, -1.0, 1.0, 0.1, 5001).unwrap();
        let xs = d.inputs.as_slice();
        let h = 2.2 / 5000.0;
        for w in xs.windows(2) {
            assert!(((w[1] - w[0]) - h).abs() <= 1e-12 * 2.2);
        }
        for (x, y) in xs.iter().zip(d.targets.as_slice()) {
            assert_eq!(*y, target_nondiff(*x));
        }
        assert!(make_train(&TargetFn::NonDiff, -1.0, 1.0, 0.1, 1).is_err());
    }

    #[test]
    fn test_set_in_range_and_deterministic() {
        let d = make_test(&TargetFn::NonDiff, -1.0, 1.0, 1000, 1).unwrap();
        assert!(d.inputs.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        assert_eq!(
            d,
            make_test(&TargetFn::NonDiff, -1.0, 1.0, 1000, 1).unwrap()
        );
        assert_ne!(
            d,
            make_test(&TargetFn::NonDiff, -1.0, 1.0, 1000, 2).unwrap()
        );
    }

    #[test]
    fn test_set_passes_ks_check() {
        let d = make_test(&TargetFn::NonDiff, -1.0, 1.0, 1000, 1).unwrap();
        let mut u: Vec<f64> = d.inputs.iter().map(|x| (x + 1.0) / 2.0).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i + 1) as f64 / n - v).max(v - i as f64 / n))
            .fold(0.0, f64::max);
        assert!(ks <= 0.05, "KS statistic {ks}");
    }

    #[test]
    fn tabulated_interpolates() {
        let t = Tabulated::new(
            vec![0.0, 1.0, 3.0],
            vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 5.0]],
        )
        .unwrap();
        assert_eq!(t.eval(0.5), vec![1.0, 1.0]);
        assert_eq!(t.eval(2.0), vec![1.0, 3.0]);
        assert_eq!(t.eval(-4.0), vec![0.0, 1.0]);
        assert_eq!(t.eval(9.0), vec![0.0, 5.0]);
        assert!(Tabulated::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]]).is_err());
    }
}
