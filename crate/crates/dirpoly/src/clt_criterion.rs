//! Second-moment normality diagnostics for discrete chaos families: mass
//! accounting by order and by time box, influence brackets, the Lindeberg
//! comparison bound and the hypercontractive moment bound.
//!
//! The criterion itself is asymptotic, so nothing here asserts a Gaussian
//! verdict; reports carry the finite-N numbers and are meant to be swept
//! over N. Families are described analytically (exact renewal DPs over the
//! free lattice), never by sampling.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::chaos_exact::{
    log_block_edges, second_moment_xdom, second_moment_xdom_interval, second_moment_z_interval,
    second_moment_z_profile, mass_by_order_xdom, mass_by_order_z,
};
use crate::testfn::PsiBarTable;
use crate::walk_kernels::{overlap_sum, rw_kernel_2d};
use crate::{Error, Result};

/// Default certified-tail threshold picking the order cutoff K.
pub const ORDER_TAIL_EPS: f64 = 1e-10;

const ACCOUNT_SLACK: f64 = 1e-9;

/// Second-moment data of one chaos family. Orders are 1-based; `box_mass`
/// takes a half-open time interval (lo, hi]. All accessors are exact
/// analytic/DP values except `influence_bracket`, which certifies
/// lower <= sup_t Inf_t <= upper.
pub trait ChaosFamily {
    fn label(&self) -> String;
    fn horizon(&self) -> u32;
    fn total_mass(&self) -> f64;
    /// Mass per order 1..=len; orders beyond the stored length are covered
    /// by `tail_bound(len)`.
    fn mass_by_order(&self) -> &[f64];
    /// Certified bound on the mass strictly beyond order k.
    fn tail_bound(&self, k: u32) -> f64;
    fn box_mass(&self, lo: u32, hi: u32) -> f64;
    fn influence_bracket(&self) -> (f64, f64);
}

fn geometric_tail(r: f64, k: u32) -> f64 {
    if r <= 0.0 {
        0.0
    } else if r < 1.0 {
        r.powi(k as i32 + 1) / (1.0 - r)
    } else {
        f64::INFINITY
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    Ok(())
}

/// Orders to tabulate so the default cutoff is always on the table:
/// smallest k whose certified tail drops below the threshold, capped by n.
fn default_orders(tail: impl Fn(u32) -> f64, n: u32) -> u32 {
    let cap = n.min(64).max(1);
    for k in 1..=n.max(1) {
        if tail(k) < ORDER_TAIL_EPS {
            return k;
        }
        if k >= cap && !tail(k).is_finite() {
            return cap;
        }
    }
    n.max(1)
}

/// Squared center-mode kernel values q_g(center)^2 for g = 0..=n; index 0
/// unused.
fn center_mode_sq(n: u32) -> Vec<f64> {
    (0..=n)
        .map(|g| {
            if g == 0 {
                0.0
            } else {
                let k = rw_kernel_2d(g, ((g & 1) as i32, 0));
                k * k
            }
        })
        .collect()
}

/// Renewal masses of chains ending at a given slice, positions summed:
/// d(0) = 1, d(t) = sigma2 sum_m u_m d(t-m).
fn renewal_d(n: u32, sigma2: f64) -> Vec<f64> {
    let mut d = vec![0.0f64; n as usize + 1];
    d[0] = 1.0;
    if n == 0 {
        return d;
    }
    let tab = overlap_sum(n);
    for t in 1..=n as usize {
        let mut s = 0.0;
        for m in 1..=t {
            s += tab.u(m as u32) * d[t - m];
        }
        d[t] = sigma2 * s;
    }
    d
}

/// Influence bracket for the full chain family. A chain through a variable
/// splits into a prefix ending there and a free continuation; the prefix is
/// bounded above by replacing each kernel square with its center mode, and
/// below by keeping only the single-kernel prefix.
fn z_influence_bracket(n: u32, sigma2: f64, v: &[f64]) -> (f64, f64) {
    let q = center_mode_sq(n);
    let d = renewal_d(n, sigma2);
    let mut lower = 0.0f64;
    let mut upper = 0.0f64;
    for t in 1..=n as usize {
        let vres = v[n as usize - t];
        lower = lower.max(sigma2 * q[t] * vres);
        let mut b = q[t];
        for m in 1..t {
            b += d[m] * q[t - m];
        }
        upper = upper.max(sigma2 * b * vres);
    }
    (lower, upper)
}

/// Explicit finite multilinear form over abstract times 1..=n_vars; the
/// oracle family with every accessor exact.
#[derive(Debug, Clone)]
pub struct ToyChaos {
    n_vars: u32,
    terms: Vec<(Vec<u32>, f64)>,
    masses: Vec<f64>,
    total: f64,
    influence: f64,
}

impl ToyChaos {
    pub fn new(n_vars: u32, terms: Vec<(Vec<u32>, f64)>) -> Result<Self> {
        if n_vars < 1 {
            return Err(Error::Parameter("toy family needs >= 1 variable".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (subset, coeff) in &terms {
            if subset.is_empty() {
                return Err(Error::Parameter("empty subset in toy family".into()));
            }
            if !subset.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Parameter(format!(
                    "subset {subset:?} not strictly increasing"
                )));
            }
            if subset[0] < 1 || *subset.last().unwrap() > n_vars {
                return Err(Error::Parameter(format!(
                    "subset {subset:?} outside 1..={n_vars}"
                )));
            }
            if !seen.insert(subset.clone()) {
                return Err(Error::Parameter(format!("duplicate subset {subset:?}")));
            }
            if !coeff.is_finite() {
                return Err(Error::Parameter("non-finite coefficient".into()));
            }
        }
        let max_order = terms.iter().map(|(s, _)| s.len()).max().unwrap_or(1);
        let mut masses = vec![0.0f64; max_order.max(1)];
        let mut total = 0.0;
        let mut infl: BTreeMap<u32, f64> = BTreeMap::new();
        for (subset, coeff) in &terms {
            let c2 = coeff * coeff;
            masses[subset.len() - 1] += c2;
            total += c2;
            for &t in subset {
                *infl.entry(t).or_insert(0.0) += c2;
            }
        }
        let influence = infl.values().fold(0.0f64, |a, &b| a.max(b));
        Ok(ToyChaos {
            n_vars,
            terms,
            masses,
            total,
            influence,
        })
    }
}

impl ChaosFamily for ToyChaos {
    fn label(&self) -> String {
        format!("toy-{}vars", self.n_vars)
    }

    fn horizon(&self) -> u32 {
        self.n_vars
    }

    fn total_mass(&self) -> f64 {
        self.total
    }

    fn mass_by_order(&self) -> &[f64] {
        &self.masses
    }

    fn tail_bound(&self, k: u32) -> f64 {
        self.masses.iter().skip(k as usize).sum()
    }

    fn box_mass(&self, lo: u32, hi: u32) -> f64 {
        self.terms
            .iter()
            .filter(|(s, _)| s.iter().all(|&t| t > lo && t <= hi))
            .map(|(_, c)| c * c)
            .sum()
    }

    fn influence_bracket(&self) -> (f64, f64) {
        (self.influence, self.influence)
    }
}

/// The full chain sum Z - 1 at horizon n with per-site variance sigma2.
#[derive(Debug, Clone)]
pub struct ZChaosFamily {
    n: u32,
    sigma2: f64,
    r: f64,
    total: f64,
    masses: Vec<f64>,
    influence: (f64, f64),
}

impl ZChaosFamily {
    pub fn new(n: u32, sigma2: f64, k_store: Option<u32>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Parameter("family horizon must be >= 1".into()));
        }
        check_sigma2(sigma2)?;
        let r = sigma2 * overlap_sum(n).r(n);
        let k = k_store
            .unwrap_or_else(|| default_orders(|k| geometric_tail(r, k), n))
            .clamp(1, n);
        let masses = mass_by_order_z(n, sigma2, k)?;
        let v = second_moment_z_profile(n, sigma2)?;
        let total = v[n as usize] - 1.0;
        let influence = z_influence_bracket(n, sigma2, &v);
        Ok(ZChaosFamily {
            n,
            sigma2,
            r,
            total,
            masses,
            influence,
        })
    }
}

impl ChaosFamily for ZChaosFamily {
    fn label(&self) -> String {
        format!("z-chaos-n{}", self.n)
    }

    fn horizon(&self) -> u32 {
        self.n
    }

    fn total_mass(&self) -> f64 {
        self.total
    }

    fn mass_by_order(&self) -> &[f64] {
        &self.masses
    }

    fn tail_bound(&self, k: u32) -> f64 {
        if k >= self.n {
            0.0
        } else {
            geometric_tail(self.r, k)
        }
    }

    fn box_mass(&self, lo: u32, hi: u32) -> f64 {
        second_moment_z_interval(lo, hi, self.sigma2).expect("validated interval")
    }

    fn influence_bracket(&self) -> (f64, f64) {
        self.influence
    }
}

/// The gap-dominated chain sum at horizon n.
#[derive(Debug, Clone)]
pub struct XdomFamily {
    n: u32,
    sigma2: f64,
    r: f64,
    total: f64,
    masses: Vec<f64>,
    influence: (f64, f64),
}

impl XdomFamily {
    pub fn new(n: u32, sigma2: f64, k_store: Option<u32>) -> Result<Self> {
        if n < 1 {
            return Err(Error::Parameter("family horizon must be >= 1".into()));
        }
        check_sigma2(sigma2)?;
        let r = sigma2 * overlap_sum(n).r(n);
        let k = k_store
            .unwrap_or_else(|| default_orders(|k| geometric_tail(r, k), n))
            .clamp(1, n);
        let masses = mass_by_order_xdom(n, sigma2, k)?;
        let total = second_moment_xdom(n, sigma2)?;
        let v = second_moment_z_profile(n, sigma2)?;
        // dominated chains are a subfamily, so the full-family upper bound
        // applies; the lower leg is the exact influence of the variable one
        // step from the origin (all its chains are gap-1 continuations)
        let (_, upper) = z_influence_bracket(n, sigma2, &v);
        let mut suffix = 1.0f64;
        let mut pw = 1.0f64;
        for _ in 1..n {
            pw *= sigma2 * 0.25;
            suffix += pw;
        }
        let lower = sigma2 / 16.0 * suffix;
        Ok(XdomFamily {
            n,
            sigma2,
            r,
            total,
            masses,
            influence: (lower, upper),
        })
    }
}

impl ChaosFamily for XdomFamily {
    fn label(&self) -> String {
        format!("dominated-chaos-n{}", self.n)
    }

    fn horizon(&self) -> u32 {
        self.n
    }

    fn total_mass(&self) -> f64 {
        self.total
    }

    fn mass_by_order(&self) -> &[f64] {
        &self.masses
    }

    fn tail_bound(&self, k: u32) -> f64 {
        if k >= self.n {
            0.0
        } else {
            geometric_tail(self.r, k)
        }
    }

    fn box_mass(&self, lo: u32, hi: u32) -> f64 {
        second_moment_xdom_interval(lo, hi, self.sigma2).expect("validated interval")
    }

    fn influence_bracket(&self) -> (f64, f64) {
        self.influence
    }
}

/// The pairing mu * (noise, psi) + lambda * (noise * field fluctuation, psi)
/// against one cube-averaged test function: order 1 carries the noise
/// pairing, higher orders hang chains off each pairing site.
#[derive(Debug, Clone)]
pub struct SingularFamily {
    n: u32,
    mu: f64,
    lambda: f64,
    phi: f64,
    t_sq: Vec<f64>,
    t_sq_sum: f64,
    v: Vec<f64>,
    r: f64,
    total: f64,
    masses: Vec<f64>,
    influence: (f64, f64),
}

impl SingularFamily {
    pub fn new(
        psi: &PsiBarTable,
        mu: f64,
        lambda: f64,
        sigma2: f64,
        k_store: Option<u32>,
    ) -> Result<Self> {
        let n = psi.horizon;
        if n < 1 {
            return Err(Error::Parameter("family horizon must be >= 1".into()));
        }
        check_sigma2(sigma2)?;
        if !mu.is_finite() || !lambda.is_finite() {
            return Err(Error::Parameter("pairing weights must be finite".into()));
        }
        let nf = n as f64;
        let phi = psi.s_sq_sum / (nf * nf);
        let t_sq: Vec<f64> = (0..=n)
            .map(|t| {
                if t == 0 {
                    0.0
                } else {
                    let tb = psi.t_bar(t);
                    tb * tb
                }
            })
            .collect();
        let t_sq_sum: f64 = t_sq.iter().sum();
        let mut smax_sq = 0.0f64;
        for p in [0u8, 1] {
            for &(_, sb) in psi.nonzero(p) {
                smax_sq = smax_sq.max(sb * sb);
            }
        }
        let r = sigma2 * overlap_sum(n).r(n);
        let l2 = lambda * lambda;
        let tail = |k: u32| l2 * phi * t_sq_sum * geometric_tail(r, k - 1) * 1.0;
        let k = k_store
            .unwrap_or_else(|| default_orders(tail, n))
            .clamp(1, n);
        let v = second_moment_z_profile(n, sigma2)?;
        // chain-order prefix masses m_j(h) for horizons h <= n, j <= k-1
        let tab = overlap_sum(n);
        let mut masses = vec![0.0f64; k as usize];
        masses[0] = mu * mu * phi * t_sq_sum;
        if k >= 2 && lambda != 0.0 {
            let mut prev = vec![0.0f64; n as usize + 1];
            prev[0] = 1.0;
            let mut cur = vec![0.0f64; n as usize + 1];
            for j in 1..k {
                for t in 0..=n as usize {
                    let mut s = 0.0;
                    for m in 1..=t {
                        s += tab.u(m as u32) * prev[t - m];
                    }
                    cur[t] = sigma2 * s;
                }
                // prefix sums: chain mass of order j within horizon h
                let mut pref = 0.0;
                let mut mj = vec![0.0f64; n as usize + 1];
                for h in 0..=n as usize {
                    pref += cur[h];
                    mj[h] = pref;
                }
                let mut acc = 0.0;
                for t in 1..=n as usize {
                    acc += t_sq[t] * mj[n as usize - t];
                }
                masses[j as usize] = l2 * phi * acc;
                std::mem::swap(&mut prev, &mut cur);
            }
        }
        let mut total = 0.0;
        for t in 1..=n as usize {
            total += t_sq[t] * (mu * mu + l2 * (v[n as usize - t] - 1.0));
        }
        total *= phi;
        // influence: exact pairing-site term below, kernel-center chain-point
        // bound above
        let q = center_mode_sq(n);
        let d = renewal_d(n, sigma2);
        let mut bg = vec![0.0f64; n as usize + 1];
        for g in 1..=n as usize {
            let mut b = q[g];
            for i in 1..g {
                b += d[i] * q[g - i];
            }
            bg[g] = b;
        }
        let mut lower = 0.0f64;
        let mut upper = 0.0f64;
        for t in 1..=n as usize {
            let vres = v[n as usize - t];
            let site = t_sq[t] * smax_sq * (mu * mu + l2 * (vres - 1.0)) / (nf * nf);
            lower = lower.max(site);
            let mut chain = 0.0;
            for m in 1..t {
                chain += t_sq[m] * bg[t - m];
            }
            upper = upper.max(site + l2 * vres * sigma2 * chain * psi.s_sq_sum / (nf * nf));
        }
        Ok(SingularFamily {
            n,
            mu,
            lambda,
            phi,
            t_sq,
            t_sq_sum,
            v,
            r,
            total,
            masses,
            influence: (lower, upper),
        })
    }
}

impl ChaosFamily for SingularFamily {
    fn label(&self) -> String {
        format!("singular-pairing-n{}", self.n)
    }

    fn horizon(&self) -> u32 {
        self.n
    }

    fn total_mass(&self) -> f64 {
        self.total
    }

    fn mass_by_order(&self) -> &[f64] {
        &self.masses
    }

    fn tail_bound(&self, k: u32) -> f64 {
        if k >= self.n {
            return 0.0;
        }
        self.lambda * self.lambda * self.phi * self.t_sq_sum * geometric_tail(self.r, k - 1)
    }

    fn box_mass(&self, lo: u32, hi: u32) -> f64 {
        // pairing site and its whole chain must sit inside the box; chains
        // hang forward from the site, so their mass is the plain profile
        let mut acc = 0.0;
        let l2 = self.lambda * self.lambda;
        for t in (lo + 1)..=hi.min(self.n) {
            acc += self.t_sq[t as usize]
                * (self.mu * self.mu + l2 * (self.v[(hi - t) as usize] - 1.0));
        }
        acc * self.phi
    }

    fn influence_bracket(&self) -> (f64, f64) {
        self.influence
    }
}

/// Disjoint half-open time boxes (lo, hi], listed in increasing order.
/// Repeated edges give empty boxes of zero mass.
#[derive(Debug, Clone, Serialize)]
pub struct BoxPartition {
    pub boxes: Vec<(u32, u32)>,
}

impl BoxPartition {
    pub fn from_edges(edges: &[u32]) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Parameter("need at least two box edges".into()));
        }
        let part = BoxPartition {
            boxes: edges.windows(2).map(|w| (w[0], w[1])).collect(),
        };
        part.validate()?;
        Ok(part)
    }

    pub fn linear(n: u32, m: u32) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::Parameter(
                "linear boxes need horizon >= 1 and box count >= 1".into(),
            ));
        }
        let edges: Vec<u32> = (0..=m)
            .map(|j| (j as u64 * n as u64 / m as u64) as u32)
            .collect();
        Self::from_edges(&edges)
    }

    pub fn log(n: u32, m: u32) -> Result<Self> {
        Self::from_edges(&log_block_edges(n, m)?)
    }

    pub fn validate(&self) -> Result<()> {
        for &(lo, hi) in &self.boxes {
            if lo > hi {
                return Err(Error::Parameter(format!("box edges out of order: ({lo}, {hi}]")));
            }
        }
        for w in self.boxes.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::OverlappingBoxes(format!(
                    "({}, {}] and ({}, {}]",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }
}

/// Finite-N diagnostics of the second-moment criterion for one family and
/// one box partition. No Gaussianity verdict; compare across an N-sweep.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub label: String,
    pub n: u32,
    pub total_mass: f64,
    /// Order cutoff used for the head/tail split.
    pub k_order: u32,
    pub mass_by_order: Vec<f64>,
    pub head_mass: f64,
    /// Certified bound on the mass beyond k_order.
    pub tail_bound: f64,
    pub boxes: Vec<(u32, u32)>,
    pub box_masses: Vec<f64>,
    pub box_sum: f64,
    pub max_box_mass: f64,
    /// Mass not covered by any box (crossing chains).
    pub delta_uncovered: f64,
    pub influence_lower: f64,
    pub influence_upper: f64,
}

pub fn criterion_report(
    family: &dyn ChaosFamily,
    boxes: &BoxPartition,
    k_order: Option<u32>,
) -> Result<CriterionReport> {
    boxes.validate()?;
    let n = family.horizon();
    if let Some(&(_, hi)) = boxes.boxes.last() {
        if hi > n {
            return Err(Error::Parameter(format!(
                "box edge {hi} beyond family horizon {n}"
            )));
        }
    }
    let masses = family.mass_by_order();
    let k = match k_order {
        Some(k) => {
            if k < 1 || k as usize > masses.len() {
                return Err(Error::Parameter(format!(
                    "order cutoff {k} outside tabulated 1..={}",
                    masses.len()
                )));
            }
            k
        }
        None => (1..=masses.len() as u32)
            .find(|&k| family.tail_bound(k) < ORDER_TAIL_EPS)
            .unwrap_or(masses.len() as u32),
    };
    let head_mass: f64 = masses[..k as usize].iter().sum();
    let tail_bound = family.tail_bound(k);
    let total = family.total_mass();
    let scale = total.abs().max(1.0);
    if head_mass > total + ACCOUNT_SLACK * scale {
        return Err(Error::Mismatch(format!(
            "head mass {head_mass} exceeds total {total}"
        )));
    }
    if tail_bound.is_finite() && head_mass + tail_bound < total - ACCOUNT_SLACK * scale {
        return Err(Error::Mismatch(format!(
            "orders <= {k} plus certified tail {tail_bound} miss total {total} (head {head_mass})"
        )));
    }
    let box_masses: Vec<f64> = boxes
        .boxes
        .iter()
        .map(|&(lo, hi)| family.box_mass(lo, hi))
        .collect();
    for (bm, &(lo, hi)) in box_masses.iter().zip(&boxes.boxes) {
        if *bm > total + ACCOUNT_SLACK * scale {
            return Err(Error::Mismatch(format!(
                "box ({lo}, {hi}] mass {bm} exceeds total {total}"
            )));
        }
    }
    let box_sum: f64 = box_masses.iter().sum();
    let delta_uncovered = total - box_sum;
    if delta_uncovered < -ACCOUNT_SLACK * scale {
        return Err(Error::Mismatch(format!(
            "box masses {box_sum} exceed total {total}"
        )));
    }
    let (influence_lower, influence_upper) = family.influence_bracket();
    let max_box_mass = box_masses.iter().fold(0.0f64, |a, &b| a.max(b));
    Ok(CriterionReport {
        label: family.label(),
        n,
        total_mass: total,
        k_order: k,
        mass_by_order: masses[..k as usize].to_vec(),
        head_mass,
        tail_bound,
        boxes: boxes.boxes.clone(),
        box_masses,
        box_sum,
        max_box_mass,
        delta_uncovered,
        influence_lower,
        influence_upper,
    })
}

/// Certified upper bound on sup_t Inf_t.
pub fn influence_max(family: &dyn ChaosFamily) -> f64 {
    family.influence_bracket().1
}

/// Mass not covered by the boxes.
pub fn delta_uncovered(family: &dyn ChaosFamily, boxes: &BoxPartition) -> Result<f64> {
    boxes.validate()?;
    let covered: f64 = boxes
        .boxes
        .iter()
        .map(|&(lo, hi)| family.box_mass(lo, hi))
        .sum();
    Ok(family.total_mass() - covered)
}

/// Lindeberg comparison bound
/// C_f (2 sqrt(C_gt) + 16 K^2 C_le m2 + 70^(K+1) C_le L^(3K) sqrt(max_inf)).
pub fn lindeberg_bound(
    c_f: f64,
    k: u32,
    l: f64,
    m2: f64,
    c_le: f64,
    c_gt: f64,
    max_inf: f64,
) -> Result<f64> {
    for (name, v) in [
        ("C_f", c_f),
        ("L", l),
        ("m2", m2),
        ("C_le", c_le),
        ("C_gt", c_gt),
        ("max_inf", max_inf),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Parameter(format!(
                "{name} must be finite and >= 0, got {v}"
            )));
        }
    }
    if m2 > 0.25 {
        return Err(Error::Parameter(format!(
            "high-order mass m2 = {m2} exceeds 1/4"
        )));
    }
    let kf = k as f64;
    let s = 2.0 * c_gt.sqrt()
        + 16.0 * kf * kf * c_le * m2
        + 70.0f64.powi(k as i32 + 1) * c_le * l.powi(3 * k as i32) * max_inf.sqrt();
    Ok(c_f * s)
}

/// Hypercontractive p-th moment bound (sum_k C_p^k m_k)^(p/2); C_p = p - 1
/// for Gaussian variables.
pub fn hypercontractive_bound(mass_by_order: &[f64], p: f64, c_p: f64) -> Result<f64> {
    if !(p > 2.0) || !p.is_finite() {
        return Err(Error::Parameter(format!("need p > 2, got {p}")));
    }
    if !(c_p >= 1.0) || !c_p.is_finite() {
        return Err(Error::Parameter(format!("need C_p >= 1, got {c_p}")));
    }
    let mut s = 0.0f64;
    let mut w = 1.0f64;
    for (i, &m) in mass_by_order.iter().enumerate() {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Parameter(format!(
                "order mass {m} at order {} must be finite and >= 0",
                i + 1
            )));
        }
        w *= c_p;
        s += w * m;
    }
    if !s.is_finite() {
        return Err(Error::Divergent(format!(
            "weighted order-mass sum diverged at C_p = {c_p}"
        )));
    }
    Ok(s.powf(p / 2.0))
}
