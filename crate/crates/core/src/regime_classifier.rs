//! Stability verdicts for the ball from the signs of the per-degree second variations.
//!
//! All product verdicts are read off the affine mode-sign function
//! `Z(k) = c₂ + c₃ k` through its scaled form `offset + slope·k`, which has the
//! same sign. Degrees `2..=k_max` are evaluated explicitly; beyond `k_max` the
//! sign is that of the slope.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::closed_forms::{EvaluationMode, ProblemParams};
use crate::error::{Error, Result};
use crate::variation_engine::{product_coefficients, ModeSignFunction};

pub const DEFAULT_K_MAX: usize = 64;

/// `|Z(k)|` below this (scaled form) counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-13;

/// `p* = 1 + (d-1)/d`.
pub fn capacity_threshold(d: usize) -> f64 {
    1.0 + (d as f64 - 1.0) / d as f64
}

/// Sign function of the capacity terms: `(p-1)(d-2+k) - (d-1)`.
pub fn capacity_sign_function(params: &ProblemParams) -> ModeSignFunction {
    let (d, p) = (params.d as f64, params.p);
    ModeSignFunction { log_scale: 0.0, offset: (p - 1.0) * (d - 2.0) - (d - 1.0), slope: p - 1.0 }
}

/// Degrees `k >= 2` with `(p-1)(d-2+k) < d-1`, the modes that decrease the capacity.
///
/// Brackets within `DEGENERACY_TOL·(d-1)` of zero are neutral and not reported.
pub fn capacity_unstable_modes(params: &ProblemParams) -> BTreeSet<usize> {
    let z = capacity_sign_function(params);
    let tol = DEGENERACY_TOL * (params.d as f64 - 1.0);
    (2..).take_while(|&k| z.scaled(k) < -tol).collect()
}

/// `p` realizing `p = 1 + ε(d-1)/d`.
pub fn example_exponent(d: usize, eps: f64) -> f64 {
    1.0 + eps * (d as f64 - 1.0) / d as f64
}

/// Upper bound `(d - ε(d-2))/ε` of the unstable degrees at `p = 1 + ε(d-1)/d`.
pub fn example_unstable_bound(d: usize, eps: f64) -> f64 {
    (d as f64 - eps * (d as f64 - 2.0)) / eps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LocalMax,
    LocalMin,
    Indefinite,
    Degenerate,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Self::LocalMax => "local_max",
            Self::LocalMin => "local_min",
            Self::Indefinite => "indefinite",
            Self::Degenerate => "degenerate",
        }
    }
}

/// Positivity interval in `q` at one `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QInterval {
    pub p: f64,
    pub q_minus: f64,
    pub q_plus: f64,
    /// The interval reaches the end of the scanned `q` range, so `q_plus` is a scan bound.
    pub open_above: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductThresholds {
    pub d: usize,
    pub mode: EvaluationMode,
    /// Smallest `p` with a positive product mode for some `q` in range.
    pub p_star: f64,
    /// `q` maximizing the positivity margin at `p_star`.
    pub q_at_p_star: f64,
    pub intervals: Vec<QInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeClassification {
    pub params: ProblemParams,
    pub mode: EvaluationMode,
    pub verdict: Verdict,
    pub negative_modes: BTreeSet<usize>,
    pub positive_modes: BTreeSet<usize>,
    pub degenerate_modes: BTreeSet<usize>,
    /// Sign of `Z(k)` for every `k > k_max`.
    pub tail_sign: i8,
    pub k_max: usize,
    pub z: ModeSignFunction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ProductThresholds>,
}

impl RegimeClassification {
    /// Scaled `Z(2)`, the lowest admissible degree.
    pub fn z2(&self) -> f64 {
        self.z.scaled(2)
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Verdict for an arbitrary affine sign function over the degrees `k >= 2`.
pub fn classify_sign_function(
    params: &ProblemParams,
    mode: EvaluationMode,
    z: ModeSignFunction,
    k_max: usize,
) -> Result<RegimeClassification> {
    if k_max < 2 {
        return Err(Error::Input(format!("k_max = {k_max} must be >= 2")));
    }
    let mut negative_modes = BTreeSet::new();
    let mut positive_modes = BTreeSet::new();
    let mut degenerate_modes = BTreeSet::new();
    for k in 2..=k_max {
        let v = z.scaled(k);
        if v.abs() < DEGENERACY_TOL {
            degenerate_modes.insert(k);
        } else if v > 0.0 {
            positive_modes.insert(k);
        } else {
            negative_modes.insert(k);
        }
    }
    let tail_sign = if z.slope != 0.0 { sign_of(z.slope) } else { sign_of(z.offset) };
    let tail_pos = tail_sign > 0 || !positive_modes.is_empty();
    let tail_neg = tail_sign < 0 || !negative_modes.is_empty();
    let verdict = match (tail_pos, tail_neg) {
        (true, true) => Verdict::Indefinite,
        _ if !degenerate_modes.is_empty() => Verdict::Degenerate,
        (false, true) => Verdict::LocalMax,
        (true, false) => Verdict::LocalMin,
        (false, false) => Verdict::Degenerate,
    };
    Ok(RegimeClassification {
        params: *params,
        mode,
        verdict,
        negative_modes,
        positive_modes,
        degenerate_modes,
        tail_sign,
        k_max,
        z,
        thresholds: None,
    })
}

/// Classifies the ball for `𝒢 = 𝒞_p 𝒯_q` from `Z(k) = c₂ + c₃ k`.
pub fn classify_product(params: &ProblemParams, mode: EvaluationMode, k_max: usize) -> Result<RegimeClassification> {
    classify_sign_function(params, mode, product_coefficients(params, mode).z, k_max)
}

/// Scan and bisection settings for [`find_product_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdGrids {
    pub p_step: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub q_step: f64,
    /// Distance kept from the open ends `p = 1`, `p = d`.
    pub margin: f64,
    pub k_max: usize,
    pub tol: f64,
}

impl Default for ThresholdGrids {
    fn default() -> Self {
        Self {
            p_step: 1e-2,
            q_min: 1.0 + 1e-3,
            q_max: 10.0,
            q_step: 1e-2,
            margin: 1e-3,
            k_max: DEFAULT_K_MAX,
            tol: 1e-10,
        }
    }
}

impl ThresholdGrids {
    fn validate(&self) -> Result<()> {
        let ok = self.p_step > 0.0
            && self.q_step > 0.0
            && self.q_min > 1.0
            && self.q_max > self.q_min
            && self.margin > 0.0
            && self.tol > 0.0
            && self.k_max >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!("invalid threshold grids {self:?}")))
        }
    }

    fn q_nodes(&self) -> Vec<f64> {
        let n = ((self.q_max - self.q_min) / self.q_step).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| self.q_min + i as f64 * self.q_step).collect();
        if *v.last().unwrap() < self.q_max {
            v.push(self.q_max);
        }
        v
    }

    fn p_nodes(&self, d: usize) -> Vec<f64> {
        let (lo, hi) = (1.0 + self.margin, d as f64 - self.margin);
        let n = ((hi - lo) / self.p_step).floor() as usize;
        let mut v: Vec<f64> = (0..=n).map(|i| lo + i as f64 * self.p_step).collect();
        if *v.last().unwrap() < hi {
            v.push(hi);
        }
        v
    }
}

/// `max_{2<=k<=k_max}` of the scaled `Z`, attained at an endpoint since `Z` is affine.
fn positivity_margin(d: usize, p: f64, q: f64, mode: EvaluationMode, k_max: usize) -> f64 {
    let params = ProblemParams { d, p, q, radius: 1.0 };
    let z = product_coefficients(&params, mode).z;
    z.scaled(2).max(z.scaled(k_max))
}

fn bisect<F: Fn(f64) -> bool>(pred: F, mut inside: f64, mut outside: f64, tol: f64) -> f64 {
    while (inside - outside).abs() > tol {
        let mid = 0.5 * (inside + outside);
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// Largest positivity margin over `q` at fixed `p`: grid scan, then golden-section refinement.
fn best_q(d: usize, p: f64, mode: EvaluationMode, grids: &ThresholdGrids, q_nodes: &[f64]) -> (f64, f64) {
    let f = |q: f64| positivity_margin(d, p, q, mode, grids.k_max);
    let (i, _) = q_nodes.iter().enumerate().map(|(i, &q)| (i, f(q))).fold((0, f64::NEG_INFINITY), |acc, x| {
        if x.1 > acc.1 {
            x
        } else {
            acc
        }
    });
    let mut a = q_nodes[i.saturating_sub(1)];
    let mut b = q_nodes[(i + 1).min(q_nodes.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > grids.tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        }
    }
    let candidates = [(q_nodes[i], f(q_nodes[i])), (x1, f1), (x2, f2)];
    candidates.into_iter().fold((q_nodes[i], f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
}

fn q_interval(d: usize, p: f64, mode: EvaluationMode, grids: &ThresholdGrids, q_nodes: &[f64]) -> Option<QInterval> {
    let (q_best, m) = best_q(d, p, mode, grids, q_nodes);
    if m <= 0.0 {
        return None;
    }
    let pos = |q: f64| positivity_margin(d, p, q, mode, grids.k_max) > 0.0;
    let below = q_nodes.iter().rev().copied().find(|&q| q < q_best && !pos(q));
    let above = q_nodes.iter().copied().find(|&q| q > q_best && !pos(q));
    let q_minus = match below {
        Some(out) => bisect(pos, q_best, out, grids.tol),
        None => grids.q_min,
    };
    let (q_plus, open_above) = match above {
        Some(out) => (bisect(pos, q_best, out, grids.tol), false),
        None => (grids.q_max, true),
    };
    Some(QInterval { p, q_minus, q_plus, open_above })
}

/// Locates `p*` and, for each grid `p` above it, the `q`-interval where some
/// product mode is positive. Returns `None` when no positive mode exists on the grids.
pub fn find_product_thresholds(
    d: usize,
    mode: EvaluationMode,
    grids: &ThresholdGrids,
) -> Result<Option<ProductThresholds>> {
    if d < 3 {
        return Err(Error::Params(format!("dimension d = {d} must be >= 3")));
    }
    grids.validate()?;
    let q_nodes = grids.q_nodes();
    let p_nodes = grids.p_nodes(d);
    let best: Vec<f64> = p_nodes.par_iter().map(|&p| best_q(d, p, mode, grids, &q_nodes).1).collect();
    let first = match best.iter().position(|&m| m > 0.0) {
        Some(i) => i,
        None => return Ok(None),
    };
    let has_positive = |p: f64| best_q(d, p, mode, grids, &q_nodes).1 > 0.0;
    let p_star =
        if first == 0 { p_nodes[0] } else { bisect(has_positive, p_nodes[first], p_nodes[first - 1], grids.tol) };
    let q_at_p_star = best_q(d, p_star, mode, grids, &q_nodes).0;
    let intervals: Vec<QInterval> =
        p_nodes[first..].par_iter().filter_map(|&p| q_interval(d, p, mode, grids, &q_nodes)).collect();
    Ok(Some(ProductThresholds { d, mode, p_star, q_at_p_star, intervals }))
}

/// Result of a monotonicity scan of `Z` along a `p` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneCheck {
    pub monotone: bool,
    /// Adjacent pair `(p_i, p_{i+1})` with the smallest increment of `Z`.
    pub worst_pair: (f64, f64),
    pub worst_increment: f64,
}

/// Checks that the published `Z(k)` is nondecreasing in `p` along `p_grid` for fixed `(d, q, k)`.
///
/// The positive factor `d^{-(q-2)/(q-1)}` does not depend on `p`, so the scan uses the scaled form.
pub fn verify_z_monotone_in_p(d: usize, q: f64, k: usize, p_grid: &[f64]) -> Result<MonotoneCheck> {
    if p_grid.len() < 2 {
        return Err(Error::Input("p grid needs at least two points".into()));
    }
    if p_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("p grid must be strictly increasing".into()));
    }
    let values: Vec<f64> = p_grid
        .iter()
        .map(|&p| {
            ProblemParams::new(d, p, q, 1.0).map(|pr| product_coefficients(&pr, EvaluationMode::Paper).z.scaled(k))
        })
        .collect::<Result<_>>()?;
    let (i, inc) =
        values
            .windows(2)
            .map(|w| w[1] - w[0])
            .enumerate()
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let slack = 4.0 * f64::EPSILON * values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(MonotoneCheck { monotone: inc >= -slack, worst_pair: (p_grid[i], p_grid[i + 1]), worst_increment: inc })
}
