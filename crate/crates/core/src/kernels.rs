//! Controlled coagulation and fragmentation rate families.
//!
//! A pair of coalitions of sizes `i` and `j` merges at rate `h C_ij(x, b)`;
//! a coalition of size `i` splits into `j` and `i - j` at rate `F_ij(x, b)`.
//! Every kernel also declares the sup constants of its rates and of their
//! first and second derivatives in `x`; the bounds ledger consumes these
//! declarations as given.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::composition::StateView;
use crate::error::{Error, Result};
use crate::expr::ScalarExpr;

/// A point of the control space `E = [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ControlPoint(f64);

impl ControlPoint {
    pub const MERGE_ONLY: ControlPoint = ControlPoint(1.0);
    pub const SPLIT_ONLY: ControlPoint = ControlPoint(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(ControlPoint(value))
        } else {
            Err(Error::ControlOutOfRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Metric of the unit interval.
    pub fn distance(self, other: ControlPoint) -> f64 {
        (self.0 - other.0).abs()
    }
}

impl TryFrom<f64> for ControlPoint {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        ControlPoint::new(v)
    }
}

impl From<ControlPoint> for f64 {
    fn from(b: ControlPoint) -> f64 {
        b.0
    }
}

impl fmt::Display for ControlPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `n` equally spaced control points covering `[0, 1]` (`n >= 2`), or the
/// single point `0` when `n == 1`.
pub fn uniform_grid(n: usize) -> Vec<ControlPoint> {
    match n {
        0 => Vec::new(),
        1 => vec![ControlPoint::SPLIT_ONLY],
        _ => (0..n)
            .map(|k| ControlPoint((k as f64 / (n - 1) as f64).min(1.0)))
            .collect(),
    }
}

/// Parses `lo:hi:step` into a grid of control points, `hi` included.
pub fn parse_grid(spec: &str) -> Result<Vec<ControlPoint>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::config(format!("control grid `{spec}`: {e}")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(Error::config(format!("control grid `{spec}` must be lo:hi:step")));
    };
    if !(step > 0.0) || hi < lo {
        return Err(Error::config(format!("control grid `{spec}` is empty")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| ControlPoint::new((lo + k as f64 * step).min(hi)))
        .collect()
}

/// A finite control set given by labels, their positions in `[0, 1]`, and a
/// metric table between labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiniteControlSet {
    labels: Vec<String>,
    points: Vec<ControlPoint>,
    metric: Vec<Vec<f64>>,
}

impl FiniteControlSet {
    pub fn new(labels: Vec<String>, points: Vec<ControlPoint>, metric: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 || points.len() != n || metric.len() != n || metric.iter().any(|row| row.len() != n) {
            return Err(Error::config(
                "finite control set needs matching labels, points and an n x n metric",
            ));
        }
        for a in 0..n {
            if metric[a][a] != 0.0 {
                return Err(Error::config("metric must vanish on the diagonal"));
            }
            for b in 0..n {
                let d = metric[a][b];
                if !(d.is_finite() && d >= 0.0) || d != metric[b][a] {
                    return Err(Error::config("metric must be finite, nonnegative and symmetric"));
                }
            }
        }
        Ok(FiniteControlSet { labels, points, metric })
    }

    fn index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn point(&self, label: &str) -> Result<ControlPoint> {
        Ok(self.points[self.index(label)?])
    }

    pub fn distance(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.metric[self.index(a)?][self.index(b)?])
    }

    pub fn points(&self) -> &[ControlPoint] {
        &self.points
    }
}

/// Declared sup constants of a kernel and of its `x`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelBounds {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "C1", default)]
    pub c1: f64,
    #[serde(rename = "F1", default)]
    pub f1: f64,
    #[serde(rename = "C2", default)]
    pub c2: f64,
    #[serde(rename = "F2", default)]
    pub f2: f64,
}

impl KernelBounds {
    /// Sup bounds `C`, `F` with all derivative bounds zero.
    pub fn new(c: f64, f: f64) -> Self {
        KernelBounds {
            c,
            f,
            c1: 0.0,
            f1: 0.0,
            c2: 0.0,
            f2: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let all = [self.c, self.f, self.c1, self.f1, self.c2, self.f2];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidKernel(format!(
                "bounds must be finite and nonnegative: {self:?}"
            )))
        }
    }
}

/// Controlled merge and split rates.
pub trait RateKernel: Send + Sync + fmt::Debug {
    /// `C_ij(x, b)`.
    fn coagulation(&self, i: usize, j: usize, x: &StateView<'_>, b: ControlPoint) -> f64;

    /// `F_ij(x, b)`; only called with `1 <= j < i`.
    fn split_rate(&self, i: usize, j: usize, x: &StateView<'_>, b: ControlPoint) -> f64;

    fn bounds(&self) -> KernelBounds;

    /// `sum_{j<i} F_ij(x, b)`.
    fn split_total(&self, i: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        (1..i).map(|j| self.split_rate(i, j, x, b)).sum()
    }

    /// True when the rates do not depend on `x`.
    fn state_independent(&self) -> bool {
        false
    }

    /// `F_ij(x, b)` with the index range enforced.
    fn fragmentation(&self, i: usize, j: usize, x: &StateView<'_>, b: ControlPoint) -> Result<f64> {
        if j == 0 || j >= i {
            return Err(Error::SplitIndex { i, j });
        }
        Ok(self.split_rate(i, j, x, b))
    }
}

pub type SharedKernel = Arc<dyn RateKernel>;

/// `C_ij = b`, `F_ij = (1 - b)/(i - 1)`: pure merging at `b = 1`, pure
/// splitting at `b = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantKernel;

pub fn constant_example_kernel() -> ConstantKernel {
    ConstantKernel
}

impl RateKernel for ConstantKernel {
    fn coagulation(&self, _i: usize, _j: usize, _x: &StateView<'_>, b: ControlPoint) -> f64 {
        b.value()
    }

    fn split_rate(&self, i: usize, _j: usize, _x: &StateView<'_>, b: ControlPoint) -> f64 {
        (1.0 - b.value()) / (i - 1) as f64
    }

    fn bounds(&self) -> KernelBounds {
        KernelBounds {
            c: 1.0,
            f: 1.0,
            c1: 0.0,
            f1: 0.0,
            c2: 0.0,
            f2: 0.0,
        }
    }

    fn state_independent(&self) -> bool {
        true
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `C_ij = b f_C(m(x))`, `F_ij = (1 - b)/(i - 1) f_B(m(x))`.
#[derive(Clone)]
pub struct NormDependentKernel {
    f_c: ScalarFn,
    f_b: ScalarFn,
    bounds: KernelBounds,
}

impl fmt::Debug for NormDependentKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormDependentKernel")
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

/// Number of sample points used to spot-check scalar factors on `[0, R]`.
const SPOT_CHECKS: usize = 1025;

impl NormDependentKernel {
    /// Rejects factors that are negative or non-finite anywhere on a grid
    /// over `[0, radius]`.
    pub fn new(f_c: ScalarFn, f_b: ScalarFn, bounds: KernelBounds, radius: f64) -> Result<Self> {
        bounds.validate()?;
        for k in 0..SPOT_CHECKS {
            let m = radius * k as f64 / (SPOT_CHECKS - 1) as f64;
            for (name, f) in [("f_C", &f_c), ("f_B", &f_b)] {
                let v = f(m);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::InvalidKernel(format!(
                        "{name}({m}) = {v} is not a nonnegative rate"
                    )));
                }
            }
        }
        Ok(NormDependentKernel { f_c, f_b, bounds })
    }
}

pub fn norm_dependent_kernel(
    f_c: impl Fn(f64) -> f64 + Send + Sync + 'static,
    f_b: impl Fn(f64) -> f64 + Send + Sync + 'static,
    bounds: KernelBounds,
    radius: f64,
) -> Result<NormDependentKernel> {
    NormDependentKernel::new(Arc::new(f_c), Arc::new(f_b), bounds, radius)
}

impl RateKernel for NormDependentKernel {
    fn coagulation(&self, _i: usize, _j: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        b.value() * (self.f_c)(x.m())
    }

    fn split_rate(&self, i: usize, _j: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        (1.0 - b.value()) / (i - 1) as f64 * (self.f_b)(x.m())
    }

    fn split_total(&self, i: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        if i < 2 {
            0.0
        } else {
            (1.0 - b.value()) * (self.f_b)(x.m())
        }
    }

    fn bounds(&self) -> KernelBounds {
        self.bounds
    }
}

/// Rates given as expressions in `m`, `b`, `i`, `j`.
#[derive(Debug, Clone)]
pub struct ExprKernel {
    coag: ScalarExpr,
    split: ScalarExpr,
    bounds: KernelBounds,
}

const KERNEL_VARS: &[&str] = &["m", "b", "i", "j"];

impl ExprKernel {
    /// Parses both rate expressions and spot-checks nonnegativity and the
    /// symmetries `C_ij = C_ji`, `F_ij = F_{i,i-j}` on sizes up to 12.
    pub fn new(coag: &str, split: &str, bounds: KernelBounds, radius: f64) -> Result<Self> {
        bounds.validate()?;
        let kernel = ExprKernel {
            coag: ScalarExpr::parse(coag, KERNEL_VARS)?,
            split: ScalarExpr::parse(split, KERNEL_VARS)?,
            bounds,
        };
        for step in 0..=8 {
            let m = radius * step as f64 / 8.0;
            for b in uniform_grid(5) {
                let bv = b.value();
                for i in 1..=12usize {
                    for j in 1..=12usize {
                        let c = kernel.coag.eval(&[m, bv, i as f64, j as f64]);
                        let c_t = kernel.coag.eval(&[m, bv, j as f64, i as f64]);
                        if !(c.is_finite() && c >= 0.0) {
                            return Err(Error::InvalidKernel(format!("C_{i},{j} = {c} at m={m}, b={bv}")));
                        }
                        if (c - c_t).abs() > 1e-12 * c.abs().max(1.0) {
                            return Err(Error::InvalidKernel(format!("C is not symmetric at ({i},{j})")));
                        }
                        if j < i {
                            let f = kernel.split.eval(&[m, bv, i as f64, j as f64]);
                            let f_t = kernel.split.eval(&[m, bv, i as f64, (i - j) as f64]);
                            if !(f.is_finite() && f >= 0.0) {
                                return Err(Error::InvalidKernel(format!("F_{i},{j} = {f} at m={m}, b={bv}")));
                            }
                            if (f - f_t).abs() > 1e-12 * f.abs().max(1.0) {
                                return Err(Error::InvalidKernel(format!("F is not symmetric at ({i},{j})")));
                            }
                        }
                    }
                }
            }
        }
        Ok(kernel)
    }
}

impl RateKernel for ExprKernel {
    fn coagulation(&self, i: usize, j: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        self.coag.eval(&[x.m(), b.value(), i as f64, j as f64])
    }

    fn split_rate(&self, i: usize, j: usize, x: &StateView<'_>, b: ControlPoint) -> f64 {
        self.split.eval(&[x.m(), b.value(), i as f64, j as f64])
    }

    fn bounds(&self) -> KernelBounds {
        self.bounds
    }
}

/// JSON kernel description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Constant,
    NormDependent {
        #[serde(rename = "f_C")]
        f_c: String,
        #[serde(rename = "f_B")]
        f_b: String,
        bounds: KernelBounds,
    },
    Expr {
        #[serde(rename = "f_C")]
        f_c: String,
        #[serde(rename = "f_B")]
        f_b: String,
        bounds: KernelBounds,
    },
}

impl KernelSpec {
    /// Builds the kernel; `radius` is the state-space radius used for
    /// spot-checks.
    pub fn build(&self, radius: f64) -> Result<SharedKernel> {
        Ok(match self {
            KernelSpec::Constant => Arc::new(ConstantKernel),
            KernelSpec::NormDependent { f_c, f_b, bounds } => {
                let fc = ScalarExpr::parse(f_c, &["m"])?;
                let fb = ScalarExpr::parse(f_b, &["m"])?;
                Arc::new(NormDependentKernel::new(
                    Arc::new(move |m| fc.eval(&[m])),
                    Arc::new(move |m| fb.eval(&[m])),
                    *bounds,
                    radius,
                )?)
            }
            KernelSpec::Expr { f_c, f_b, bounds } => Arc::new(ExprKernel::new(f_c, f_b, *bounds, radius)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_view(x: &[f64]) -> StateView<'_> {
        StateView::dense(x)
    }

    #[test]
    fn constant_kernel_examples() {
        let x = [0.3, 0.1];
        let v = any_view(&x);
        let k = constant_example_kernel();
        let b = ControlPoint::new(0.7).unwrap();
        assert_eq!(k.coagulation(3, 5, &v, b), 0.7);
        let b = ControlPoint::new(0.25).unwrap();
        assert_eq!(k.fragmentation(4, 1, &v, b).unwrap(), 0.25);
        assert_eq!(k.split_total(1, &v, b), 0.0);
        assert!(matches!(
            k.fragmentation(1, 1, &v, b),
            Err(Error::SplitIndex { i: 1, j: 1 })
        ));
        assert!(matches!(k.fragmentation(3, 3, &v, b), Err(Error::SplitIndex { .. })));
        assert!(matches!(k.fragmentation(3, 0, &v, b), Err(Error::SplitIndex { .. })));
        let bd = k.bounds();
        assert_eq!((bd.c, bd.f, bd.c1, bd.f1, bd.c2, bd.f2), (1.0, 1.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn norm_dependent_examples() {
        let bounds = KernelBounds {
            c: 1.0,
            f: 2.0,
            c1: 1.0,
            f1: 2.0,
            c2: 0.0,
            f2: 0.0,
        };
        let k = norm_dependent_kernel(|m| m, |m| 2.0 * m, bounds, 1.0).unwrap();
        let x = [0.5];
        assert_eq!(k.coagulation(2, 2, &any_view(&x), ControlPoint::MERGE_ONLY), 0.5);
        let x = [0.5, 0.5];
        let f = k.fragmentation(3, 2, &any_view(&x), ControlPoint::SPLIT_ONLY).unwrap();
        assert!((f - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_factors_reduce_to_constant_kernel() {
        let k = norm_dependent_kernel(|_| 1.0, |_| 1.0, ConstantKernel.bounds(), 2.0).unwrap();
        let x = [0.2, 0.3, 0.1];
        let v = any_view(&x);
        for b in uniform_grid(11) {
            for i in 1..8 {
                for j in 1..8 {
                    assert_eq!(k.coagulation(i, j, &v, b), ConstantKernel.coagulation(i, j, &v, b));
                    if j < i {
                        assert_eq!(k.split_rate(i, j, &v, b), ConstantKernel.split_rate(i, j, &v, b));
                    }
                }
                let generic: f64 = (1..i).map(|j| k.split_rate(i, j, &v, b)).sum();
                assert!((k.split_total(i, &v, b) - generic).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_factor_is_invalid() {
        let r = norm_dependent_kernel(|m| m - 0.5, |_| 1.0, ConstantKernel.bounds(), 1.0);
        assert!(matches!(r, Err(Error::InvalidKernel(_))));
    }

    #[test]
    fn control_point_range() {
        assert!(ControlPoint::new(1.5).is_err());
        assert!(ControlPoint::new(-0.1).is_err());
        assert!(serde_json::from_str::<ControlPoint>("2.0").is_err());
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[10].value(), 1.0);
        assert!(parse_grid("0:1").is_err());
    }

    #[test]
    fn finite_control_set_labels() {
        let set = FiniteControlSet::new(
            vec!["lax".into(), "strict".into()],
            vec![ControlPoint::SPLIT_ONLY, ControlPoint::MERGE_ONLY],
            vec![vec![0.0, 2.0], vec![2.0, 0.0]],
        )
        .unwrap();
        assert_eq!(set.point("strict").unwrap(), ControlPoint::MERGE_ONLY);
        assert_eq!(set.distance("lax", "strict").unwrap(), 2.0);
        assert!(matches!(set.point("medium"), Err(Error::UnknownLabel(_))));
        let asym = FiniteControlSet::new(
            vec!["a".into(), "b".into()],
            vec![ControlPoint::SPLIT_ONLY, ControlPoint::MERGE_ONLY],
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
        );
        assert!(asym.is_err());
    }

    #[test]
    fn kernel_spec_json() {
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"constant"}"#).unwrap();
        let k = spec.build(1.0).unwrap();
        assert!(k.state_independent());

        let spec: KernelSpec = serde_json::from_str(
            r#"{"type":"norm_dependent","f_C":"m","f_B":"2*m",
                "bounds":{"C":1,"F":2,"C1":1,"F1":2,"C2":0,"F2":0}}"#,
        )
        .unwrap();
        let k = spec.build(1.0).unwrap();
        let x = [1.0];
        let f = k
            .fragmentation(3, 2, &StateView::dense(&x), ControlPoint::SPLIT_ONLY)
            .unwrap();
        assert!((f - 1.0).abs() < 1e-15);

        let spec: KernelSpec =
            serde_json::from_str(r#"{"type":"expr","f_C":"b","f_B":"(1-b)/(i-1)","bounds":{"C":1,"F":1}}"#).unwrap();
        let k = spec.build(1.0).unwrap();
        let b = ControlPoint::new(0.25).unwrap();
        assert_eq!(k.fragmentation(4, 1, &StateView::dense(&x), b).unwrap(), 0.25);

        let asym: KernelSpec =
            serde_json::from_str(r#"{"type":"expr","f_C":"b*i","f_B":"1","bounds":{"C":1,"F":1}}"#).unwrap();
        assert!(matches!(asym.build(1.0), Err(Error::InvalidKernel(_))));
        let neg: KernelSpec =
            serde_json::from_str(r#"{"type":"norm_dependent","f_C":"m-1","f_B":"1","bounds":{"C":1,"F":1}}"#).unwrap();
        assert!(matches!(neg.build(1.0), Err(Error::InvalidKernel(_))));
    }

    proptest! {
        #[test]
        fn builtin_kernels_are_symmetric_and_bounded(
            i in 1usize..60, j in 1usize..60, b in 0.0f64..=1.0,
            x in proptest::collection::vec(0.0f64..0.05, 1..20),
        ) {
            let b = ControlPoint::new(b).unwrap();
            let v = StateView::dense(&x);
            let radius = crate::composition::mass_norm(&x).max(1e-9);
            let nd = norm_dependent_kernel(
                |m| 1.0 / (1.0 + m), |m| 1.0 + m,
                KernelBounds { c: 1.0, f: 1.0 + radius, c1: 1.0, f1: 1.0, c2: 2.0, f2: 0.0 },
                radius,
            ).unwrap();
            let kernels: [&dyn RateKernel; 2] = [&ConstantKernel, &nd];
            for k in kernels {
                prop_assert_eq!(k.coagulation(i, j, &v, b), k.coagulation(j, i, &v, b));
                prop_assert!(k.coagulation(i, j, &v, b) <= k.bounds().c + 1e-12);
                if j < i {
                    let f = k.split_rate(i, j, &v, b);
                    prop_assert!((f - k.split_rate(i, i - j, &v, b)).abs() <= 1e-15);
                }
                prop_assert!(k.split_total(i, &v, b) <= k.bounds().f + 1e-12);
            }
        }
    }
}
