//! Chain-sum evaluators for the disorder field: the full multilinear
//! expansion of the partition function, its gap-dominated restriction, block
//! and product decompositions over log-spaced time blocks, and the exact
//! second-moment recursions each of them is checked against.
//!
//! Every realization-level evaluator confines the walk to the plane's box,
//! matching the truncated backward sweeps of `polymer_sim`, so the exact
//! identities (enumeration vs sweep, record blocks vs full chain sum,
//! one-block product vs dominated sum) hold at any box radius.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::rc::Rc;

use crate::disorder::{make_schedule, DisorderLaw, DisorderPlane};
use crate::grid::RotGrid;
use crate::polymer_sim::{stencil_geometry, stencil_step, StencilGeometry};
use crate::testfn::PsiBarTable;
use crate::walk_kernels::overlap_sum;
use crate::{Error, Result};

/// Horizon cap for the brute-force chain enumerations.
pub const CHAIN_ENUM_MAX_N: u32 = 8;
/// Horizon cap for the record-block identity evaluator.
pub const RECORD_ENUM_MAX_N: u32 = 6;
/// Time-span cap per leg of the pinned two-endpoint evaluator.
pub const PINNED_SPAN_MAX: u32 = 24;

const FIELD_BYTES_BUDGET: u64 = 4 << 30;

const DIRS: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Gap bound applied to every chain step after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapPolicy {
    /// Later gaps never exceed the time of the first chain point.
    FirstTime,
    /// Later gaps never exceed a fixed bound.
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Literal sum over every chain; the oracle route, hard-capped in N.
    Enumeration,
    /// Slice-recursive dynamic program; exact at any desk-scale N.
    Dp,
}

/// Knobs of the chain-sum evaluators. Horizon and box geometry always come
/// from the plane itself so the two can never disagree.
#[derive(Debug, Clone, Copy)]
pub struct ChainDpConfig {
    pub mode: EvalMode,
    /// Highest chain order kept; `None` keeps all of them.
    pub k_max: Option<u32>,
    /// Applies to the dominated sums only.
    pub cap: CapPolicy,
}

impl ChainDpConfig {
    pub fn exact() -> Self {
        ChainDpConfig {
            mode: EvalMode::Dp,
            k_max: None,
            cap: CapPolicy::FirstTime,
        }
    }

    pub fn enumeration() -> Self {
        ChainDpConfig {
            mode: EvalMode::Enumeration,
            k_max: None,
            cap: CapPolicy::FirstTime,
        }
    }

    fn validate(&self, n: u32) -> Result<()> {
        if self.k_max == Some(0) {
            return Err(Error::Parameter("order cutoff must be >= 1".into()));
        }
        if let CapPolicy::Fixed(c) = self.cap {
            if c == 0 {
                return Err(Error::Parameter("fixed gap cap must be >= 1".into()));
            }
        }
        if self.mode == EvalMode::Enumeration && n > CHAIN_ENUM_MAX_N {
            return Err(Error::Budget(format!(
                "chain enumeration is capped at horizon {CHAIN_ENUM_MAX_N}, got {n}"
            )));
        }
        Ok(())
    }
}

/// One eta sublattice per slice, the one chains from the origin can reach.
struct EtaSlices {
    grid: RotGrid,
    slices: Vec<Vec<f64>>,
}

impl EtaSlices {
    fn build(plane: &DisorderPlane, up_to: u32) -> Result<Self> {
        let grid = plane.domain.grid;
        let mut slices = Vec::with_capacity(up_to as usize);
        for n in 1..=up_to {
            let p = (n & 1) as u8;
            let mut buf = vec![0.0; grid.sites(p)];
            plane.fill_sublattice_eta(n, p, &mut buf)?;
            slices.push(buf);
        }
        Ok(EtaSlices { grid, slices })
    }

    #[inline]
    fn slice(&self, n: u32) -> &[f64] {
        &self.slices[(n - 1) as usize]
    }

    #[inline]
    fn at(&self, n: u32, z: (i32, i32)) -> f64 {
        let (p, iu, iv) = self.grid.locate(z).expect("chain site inside box");
        debug_assert_eq!(p as u32, n & 1);
        self.slices[(n - 1) as usize][iu * self.grid.width(p) + iv]
    }
}

/// Box-confined m-step kernels from a fixed start, memoized as sorted
/// (site, mass) lists. BTreeMap folding keeps the summation order, and hence
/// every enumeration output, reproducible bit for bit.
struct KernelMemo {
    radius: i32,
    memo: BTreeMap<(u32, (i32, i32)), Rc<Vec<((i32, i32), f64)>>>,
}

impl KernelMemo {
    fn new(grid: &RotGrid) -> Self {
        KernelMemo {
            radius: grid.radius,
            memo: BTreeMap::new(),
        }
    }

    #[inline]
    fn in_box(&self, z: (i32, i32)) -> bool {
        (z.0 + z.1).abs() <= self.radius && (z.0 - z.1).abs() <= self.radius
    }

    fn killed(&mut self, m: u32, x: (i32, i32)) -> Rc<Vec<((i32, i32), f64)>> {
        assert!(m >= 1);
        if let Some(k) = self.memo.get(&(m, x)) {
            return k.clone();
        }
        let mut prev: Option<Rc<Vec<((i32, i32), f64)>>> = None;
        for mm in 1..=m {
            if let Some(k) = self.memo.get(&(mm, x)) {
                prev = Some(k.clone());
                continue;
            }
            let base = [(x, 1.0f64)];
            let sources: &[((i32, i32), f64)] = match &prev {
                Some(k) => k,
                None => &base,
            };
            let mut acc: BTreeMap<(i32, i32), f64> = BTreeMap::new();
            for &(y, w) in sources {
                for d in DIRS {
                    let ny = (y.0 + d.0, y.1 + d.1);
                    if self.in_box(ny) {
                        *acc.entry(ny).or_insert(0.0) += 0.25 * w;
                    }
                }
            }
            let k: Rc<Vec<((i32, i32), f64)>> = Rc::new(acc.into_iter().collect());
            self.memo.insert((mm, x), k.clone());
            prev = Some(k);
        }
        prev.unwrap()
    }

    fn mass_at(&mut self, m: u32, x: (i32, i32), y: (i32, i32)) -> f64 {
        if m == 0 {
            return if x == y { 1.0 } else { 0.0 };
        }
        let k = self.killed(m, x);
        match k.binary_search_by(|probe| probe.0.cmp(&y)) {
            Ok(i) => k[i].1,
            Err(_) => 0.0,
        }
    }
}

/// Zero-padded four-neighbor averaging between sublattices: walkers leaving
/// the box are dropped, never reflected.
struct Stepper {
    grid: RotGrid,
    geo: StencilGeometry,
    pad: [Vec<f64>; 2],
    scratch: Vec<f64>,
}

impl Stepper {
    fn new(grid: RotGrid) -> Self {
        Stepper {
            geo: stencil_geometry(&grid),
            grid,
            pad: [Vec::new(), Vec::new()],
            scratch: Vec::new(),
        }
    }

    /// One step from sublattice q onto 1-q.
    fn step(&mut self, q: u8, src: &[f64], out: &mut Vec<f64>) {
        let wq = self.grid.width(q);
        debug_assert_eq!(src.len(), self.grid.sites(q));
        let stride = wq + 2;
        let pad = &mut self.pad[q as usize];
        pad.resize(stride * (wq + 2), 0.0);
        pad[..stride].fill(0.0);
        pad[(wq + 1) * stride..].fill(0.0);
        for iu in 0..wq {
            let r = (iu + 1) * stride;
            pad[r] = 0.0;
            pad[r + wq + 1] = 0.0;
            pad[r + 1..r + 1 + wq].copy_from_slice(&src[iu * wq..(iu + 1) * wq]);
        }
        let p = 1 - q;
        out.resize(self.grid.sites(p), 0.0);
        stencil_step(&self.grid, &self.geo, p, pad, out);
    }

    fn advance1(&mut self, field: &mut Vec<f64>, parity: &mut u8) {
        let mut tmp = std::mem::take(&mut self.scratch);
        self.step(*parity, field, &mut tmp);
        std::mem::swap(field, &mut tmp);
        self.scratch = tmp;
        *parity ^= 1;
    }

    fn advance(&mut self, field: &mut Vec<f64>, parity: &mut u8, steps: u32) {
        for _ in 0..steps {
            self.advance1(field, parity);
        }
    }
}

/// Box-confined occupation law of the walk started at the origin, advanced
/// one slice at a time.
struct RhoForward {
    time: u32,
    parity: u8,
    field: Vec<f64>,
}

impl RhoForward {
    fn new(grid: &RotGrid) -> Self {
        let (p, iu, iv) = grid.locate((0, 0)).expect("origin inside box");
        let mut field = vec![0.0; grid.sites(p)];
        field[iu * grid.width(p) + iv] = 1.0;
        RhoForward {
            time: 0,
            parity: p,
            field,
        }
    }

    fn advance_to(&mut self, step: &mut Stepper, t: u32) {
        while self.time < t {
            step.advance1(&mut self.field, &mut self.parity);
            self.time += 1;
        }
    }
}

fn field_budget(grid: &RotGrid, slices: u64) -> Result<()> {
    let sites = grid.sites(0).max(grid.sites(1)) as u64;
    let need = slices * sites * 8;
    if need > FIELD_BYTES_BUDGET {
        return Err(Error::MemoryBudget {
            need,
            budget: FIELD_BYTES_BUDGET,
        });
    }
    Ok(())
}

/// Fluctuation fields t[n] = Z(n,.) - 1 of the box-truncated backward
/// recursion, for every slice n in 0..=hi. t[n] lives on sublattice n&1.
fn fluct_fields(step: &mut Stepper, eta: &EtaSlices, sigma: f64, hi: u32) -> Vec<Vec<f64>> {
    let grid = step.grid;
    let mut out = vec![Vec::new(); hi as usize + 1];
    out[hi as usize] = vec![0.0; grid.sites((hi & 1) as u8)];
    let mut combo = Vec::new();
    for s in (0..hi).rev() {
        let nn = s + 1;
        let e = eta.slice(nn);
        let src = &out[nn as usize];
        combo.resize(src.len(), 0.0);
        for i in 0..src.len() {
            combo[i] = sigma * e[i] * (1.0 + src[i]) + src[i];
        }
        let mut f = Vec::new();
        step.step((nn & 1) as u8, &combo, &mut f);
        out[s as usize] = f;
    }
    out
}

struct DCol {
    steps: u32,
    parity: u8,
    field: Vec<f64>,
}

/// c-step smoothing of the free-region weighted slice j, advanced one step
/// per cap. Caps query a given column with consecutive c, so after creation
/// each query costs a single stencil step.
fn dcol<'a>(
    dcols: &'a mut BTreeMap<u32, DCol>,
    step: &mut Stepper,
    eta: &EtaSlices,
    t_hat: &[Vec<f64>],
    sigma: f64,
    c: u32,
    j: u32,
) -> &'a [f64] {
    let col = dcols.entry(j).or_insert_with(|| {
        let ej = eta.slice(j);
        let tj = &t_hat[j as usize];
        let mut f = vec![0.0; tj.len()];
        for i in 0..tj.len() {
            f[i] = sigma * ej[i] * (1.0 + tj[i]);
        }
        DCol {
            steps: 0,
            parity: (j & 1) as u8,
            field: f,
        }
    });
    debug_assert!(col.steps <= c);
    while col.steps < c {
        step.advance1(&mut col.field, &mut col.parity);
        col.steps += 1;
    }
    &col.field
}

/// Dominated chain sum with first time in (lo, hi], every later time <= hi
/// and every later gap <= the first time. Shared by the full evaluator
/// (lo = 0, hi = N) and the log-block evaluators.
///
/// Per cap c the capped tail field T_c is slid backward from the free region
/// (where it coincides with the plain fluctuation field) with the one-slice
/// update T_c(pos) = step(B(pos+1) + T_c(pos+1) - smooth_c(B(pos+1+c))),
/// where B(j) = sigma eta(j) (1 + T_c(j)). Corrections whose source slice
/// lies in the free region come from amortized columns; the cap-dependent
/// ones are smoothed on the fly from the ring of recent B slices.
fn dominated_interval(
    step: &mut Stepper,
    eta: &EtaSlices,
    sigma: f64,
    rho: &mut RhoForward,
    lo: u32,
    hi: u32,
) -> f64 {
    if lo >= hi {
        return 0.0;
    }
    let grid = step.grid;
    let t_hat = fluct_fields(step, eta, sigma, hi);
    let mut ring: Vec<Vec<f64>> = Vec::new();
    let mut dcols: BTreeMap<u32, DCol> = BTreeMap::new();
    let mut corr: Vec<f64> = Vec::new();
    let mut combo: Vec<f64> = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    let mut total = 0.0;
    for c in lo + 1..=hi {
        rho.advance_to(step, c);
        let tail: &[f64] = if 2 * c >= hi {
            // cap can never bind over a span this short
            &t_hat[c as usize]
        } else {
            let cs = (c + 1) as usize;
            if ring.len() < cs {
                ring.resize_with(cs, Vec::new);
            }
            for j in hi - c..=hi {
                let ej = eta.slice(j);
                let tj = &t_hat[j as usize];
                let slot = &mut ring[(j % (c + 1)) as usize];
                slot.resize(tj.len(), 0.0);
                for i in 0..tj.len() {
                    slot[i] = sigma * ej[i] * (1.0 + tj[i]);
                }
            }
            cur.clear();
            cur.extend_from_slice(&t_hat[(hi - c) as usize]);
            for pos in (c..hi - c).rev() {
                let j = pos + 1 + c;
                let corr_slice: &[f64] = if j >= hi - c {
                    dcol(&mut dcols, step, eta, &t_hat, sigma, c, j)
                } else {
                    corr.clear();
                    corr.extend_from_slice(&ring[(j % (c + 1)) as usize]);
                    let mut par = (j & 1) as u8;
                    step.advance(&mut corr, &mut par, c);
                    debug_assert_eq!(par, ((pos + 1) & 1) as u8);
                    &corr
                };
                let b1 = &ring[((pos + 1) % (c + 1)) as usize];
                combo.resize(b1.len(), 0.0);
                for i in 0..b1.len() {
                    combo[i] = b1[i] + cur[i] - corr_slice[i];
                }
                step.step(((pos + 1) & 1) as u8, &combo, &mut cur);
                let e_p = eta.slice(pos);
                let slot = &mut ring[(pos % (c + 1)) as usize];
                slot.resize(cur.len(), 0.0);
                for i in 0..cur.len() {
                    slot[i] = sigma * e_p[i] * (1.0 + cur[i]);
                }
            }
            debug_assert_eq!(cur.len(), grid.sites((c & 1) as u8));
            &cur
        };
        let e_c = eta.slice(c);
        let r = &rho.field;
        let mut term = 0.0;
        for i in 0..r.len() {
            term += r[i] * e_c[i] * (1.0 + tail[i]);
        }
        total += sigma * term;
    }
    total
}

/// Literal recursion over chains: next point at time t+m, position y, each
/// contributing sigma eta q-hat, with m capped by `cap` and times by `hi`.
struct EnumCtx<'a> {
    eta: &'a EtaSlices,
    kernels: KernelMemo,
    sigma: f64,
}

impl EnumCtx<'_> {
    fn chain_tail(&mut self, t: u32, x: (i32, i32), left: u32, cap: u32, hi: u32) -> f64 {
        if left == 0 || t >= hi {
            return 0.0;
        }
        let mut acc = 0.0;
        for m in 1..=cap.min(hi - t) {
            let kern = self.kernels.killed(m, x);
            for &(y, w) in kern.iter() {
                let e = self.eta.at(t + m, y);
                acc += w * self.sigma * e * (1.0 + self.chain_tail(t + m, y, left - 1, cap, hi));
            }
        }
        acc
    }
}

fn enum_z(plane: &DisorderPlane, k_max: Option<u32>) -> Result<f64> {
    let n = plane.domain.n;
    let eta = EtaSlices::build(plane, n)?;
    let mut ctx = EnumCtx {
        eta: &eta,
        kernels: KernelMemo::new(&plane.domain.grid),
        sigma: plane.schedule.sigma_n,
    };
    let k = k_max.map(|k| k.min(n)).unwrap_or(n);
    Ok(1.0 + ctx.chain_tail(0, (0, 0), k, n, n))
}

fn enum_xdom(plane: &DisorderPlane, k_max: Option<u32>, cap: CapPolicy) -> Result<f64> {
    let n = plane.domain.n;
    let eta = EtaSlices::build(plane, n)?;
    let mut ctx = EnumCtx {
        eta: &eta,
        kernels: KernelMemo::new(&plane.domain.grid),
        sigma: plane.schedule.sigma_n,
    };
    let k = k_max.map(|k| k.min(n)).unwrap_or(n);
    let mut acc = 0.0;
    for m1 in 1..=n {
        let gap_cap = match cap {
            CapPolicy::FirstTime => m1,
            CapPolicy::Fixed(c) => c,
        };
        let kern = ctx.kernels.killed(m1, (0, 0));
        for &(y, w) in kern.iter() {
            let e = ctx.eta.at(m1, y);
            acc += w * ctx.sigma * e * (1.0 + ctx.chain_tail(m1, y, k - 1, gap_cap, n));
        }
    }
    Ok(acc)
}

fn dp_z(plane: &DisorderPlane, k_max: Option<u32>) -> Result<f64> {
    let n = plane.domain.n;
    let grid = plane.domain.grid;
    let sigma = plane.schedule.sigma_n;
    let k = k_max.map(|k| k.min(n)).unwrap_or(n) as usize;
    field_budget(&grid, 2 * k as u64 + 6)?;
    let eta = EtaSlices::build(plane, n)?;
    let mut step = Stepper::new(grid);
    // cur[j-1] holds the sum over chains of exactly j points after the
    // current slice; both layers index slices by parity
    let np = (n & 1) as u8;
    let mut cur: Vec<Vec<f64>> = (0..k).map(|_| vec![0.0; grid.sites(np)]).collect();
    let mut next: Vec<Vec<f64>> = (0..k).map(|_| Vec::new()).collect();
    let mut combo = Vec::new();
    for s in (0..n).rev() {
        let e = eta.slice(s + 1);
        let sp = ((s + 1) & 1) as u8;
        for j in 1..=k {
            let own = &cur[j - 1];
            combo.resize(own.len(), 0.0);
            if j == 1 {
                for i in 0..own.len() {
                    combo[i] = sigma * e[i] + own[i];
                }
            } else {
                let lower = &cur[j - 2];
                for i in 0..own.len() {
                    combo[i] = sigma * e[i] * lower[i] + own[i];
                }
            }
            step.step(sp, &combo, &mut next[j - 1]);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let (p, iu, iv) = grid.locate((0, 0)).expect("origin inside box");
    let idx = iu * grid.width(p) + iv;
    Ok(1.0 + cur.iter().map(|f| f[idx]).sum::<f64>())
}

/// Full chain sum 1 + sum over 0 < n_1 < ... < n_k <= N of
/// sigma^k prod q-hat prod eta. The DP route reproduces the backward sweep
/// of `evolve_partition`; the enumeration route is the brute-force oracle.
pub fn chaos_eval_z(plane: &DisorderPlane, cfg: ChainDpConfig) -> Result<f64> {
    cfg.validate(plane.domain.n)?;
    match cfg.mode {
        EvalMode::Enumeration => enum_z(plane, cfg.k_max),
        EvalMode::Dp => dp_z(plane, cfg.k_max),
    }
}

/// Backward pass computing every capped tail field for one fixed gap cap;
/// quadratic in the span but obviously correct, so it doubles as the
/// cross-check for the sliding-window path.
fn fixed_cap_fields(
    step: &mut Stepper,
    eta: &EtaSlices,
    sigma: f64,
    lo: u32,
    hi: u32,
    cap: u32,
) -> Vec<Vec<f64>> {
    let grid = step.grid;
    let mut b: Vec<Vec<f64>> = vec![Vec::new(); hi as usize + 1];
    let mut tails: Vec<Vec<f64>> = vec![Vec::new(); hi as usize + 1];
    let mut combo = Vec::new();
    for t in (lo + 1..=hi).rev() {
        let mtop = cap.min(hi - t);
        let mut g = vec![0.0; grid.sites(((t + mtop) & 1) as u8)];
        for m in (1..=mtop).rev() {
            let bj = &b[(t + m) as usize];
            combo.resize(bj.len(), 0.0);
            for i in 0..bj.len() {
                combo[i] = bj[i] + g[i];
            }
            step.step(((t + m) & 1) as u8, &combo, &mut g);
        }
        let e = eta.slice(t);
        let mut bt = vec![0.0; g.len()];
        for i in 0..g.len() {
            bt[i] = sigma * e[i] * (1.0 + g[i]);
        }
        b[t as usize] = bt;
        tails[t as usize] = g;
    }
    tails
}

fn fixed_cap_eval(plane: &DisorderPlane, cap: u32, lo: u32, hi: u32) -> Result<f64> {
    let grid = plane.domain.grid;
    field_budget(&grid, 2 * (hi as u64 + 1) + 8)?;
    let eta = EtaSlices::build(plane, hi)?;
    let mut step = Stepper::new(grid);
    let sigma = plane.schedule.sigma_n;
    let tails = fixed_cap_fields(&mut step, &eta, sigma, lo, hi, cap);
    let mut rho = RhoForward::new(&grid);
    let mut total = 0.0;
    for c in lo + 1..=hi {
        rho.advance_to(&mut step, c);
        let e = eta.slice(c);
        let tail = &tails[c as usize];
        let mut term = 0.0;
        for i in 0..rho.field.len() {
            term += rho.field[i] * e[i] * (1.0 + tail[i]);
        }
        total += sigma * term;
    }
    Ok(total)
}

/// Dominated chain sum: first point anywhere in (0, N], later gaps bounded
/// by the cap policy. Returns the sum itself (no leading 1).
pub fn xdom_eval(plane: &DisorderPlane, cfg: ChainDpConfig) -> Result<f64> {
    cfg.validate(plane.domain.n)?;
    let n = plane.domain.n;
    match cfg.mode {
        EvalMode::Enumeration => enum_xdom(plane, cfg.k_max, cfg.cap),
        EvalMode::Dp => {
            if cfg.k_max.is_some() {
                return Err(Error::Parameter(
                    "order truncation of the dominated sum is enumeration-only".into(),
                ));
            }
            match cfg.cap {
                CapPolicy::Fixed(c) => fixed_cap_eval(plane, c, 0, n),
                CapPolicy::FirstTime => {
                    let grid = plane.domain.grid;
                    field_budget(&grid, dominated_slices(n))?;
                    let eta = EtaSlices::build(plane, n)?;
                    let mut step = Stepper::new(grid);
                    let mut rho = RhoForward::new(&grid);
                    Ok(dominated_interval(
                        &mut step,
                        &eta,
                        plane.schedule.sigma_n,
                        &mut rho,
                        0,
                        n,
                    ))
                }
            }
        }
    }
}

fn dominated_slices(hi: u32) -> u64 {
    2 * (hi as u64 + 1) + hi as u64 / 2 + hi as u64 / 3 + 16
}

/// First-time-cap evaluator rebuilt per cap by the quadratic backward pass.
/// Independent of the sliding-window path; kept for cross-checks.
pub fn xdom_eval_reference(plane: &DisorderPlane) -> Result<f64> {
    let n = plane.domain.n;
    let grid = plane.domain.grid;
    field_budget(&grid, 2 * (n as u64 + 1) + 8)?;
    let eta = EtaSlices::build(plane, n)?;
    let mut step = Stepper::new(grid);
    let sigma = plane.schedule.sigma_n;
    let mut rho = RhoForward::new(&grid);
    let mut total = 0.0;
    for c in 1..=n {
        rho.advance_to(&mut step, c);
        let tails = fixed_cap_fields(&mut step, &eta, sigma, c.saturating_sub(1), n, c);
        let e = eta.slice(c);
        let tail = &tails[c as usize];
        let mut term = 0.0;
        for i in 0..rho.field.len() {
            term += rho.field[i] * e[i] * (1.0 + tail[i]);
        }
        total += sigma * term;
    }
    Ok(total)
}

/// Block edges floor(N^(j/M)), j = 0..=M, with the leading edge pinned to 0
/// so the opening block covers the earliest times. Edges may repeat; a
/// repeated edge is an empty block.
pub fn log_block_edges(n: u32, m: u32) -> Result<Vec<u32>> {
    if n < 1 || m < 1 {
        return Err(Error::Parameter(
            "block edges need horizon >= 1 and block count >= 1".into(),
        ));
    }
    let mut edges = Vec::with_capacity(m as usize + 1);
    edges.push(0u32);
    let ln = (n as f64).ln();
    let mut prev = 0u32;
    for j in 1..=m {
        let e = if j == m {
            n
        } else {
            ((ln * j as f64 / m as f64).exp() + 1e-9).floor() as u32
        };
        let e = e.max(prev).min(n);
        edges.push(e);
        prev = e;
    }
    Ok(edges)
}

/// One dominated block: chains confined to (lo, hi] with gaps capped by the
/// first time. Empty blocks report 0 with the flag set.
#[derive(Debug, Clone)]
pub struct BlockEval {
    pub j: u32,
    pub lo: u32,
    pub hi: u32,
    pub value: f64,
    pub empty: bool,
}

/// Product decomposition over log blocks.
#[derive(Debug, Clone)]
pub struct ZdiffEval {
    pub m: u32,
    pub blocks: Vec<BlockEval>,
    pub product: f64,
}

pub fn xdom_block_eval(plane: &DisorderPlane, m: u32, j: u32) -> Result<BlockEval> {
    if j < 1 || j > m {
        return Err(Error::Parameter(format!(
            "block index {j} outside 1..={m}"
        )));
    }
    let edges = log_block_edges(plane.domain.n, m)?;
    let (lo, hi) = (edges[(j - 1) as usize], edges[j as usize]);
    if lo == hi {
        return Ok(BlockEval {
            j,
            lo,
            hi,
            value: 0.0,
            empty: true,
        });
    }
    let grid = plane.domain.grid;
    field_budget(&grid, dominated_slices(hi))?;
    let eta = EtaSlices::build(plane, hi)?;
    let mut step = Stepper::new(grid);
    let mut rho = RhoForward::new(&grid);
    let value = dominated_interval(&mut step, &eta, plane.schedule.sigma_n, &mut rho, lo, hi);
    Ok(BlockEval {
        j,
        lo,
        hi,
        value,
        empty: false,
    })
}

/// prod_j (1 + X(j)) over the M log blocks, sharing one eta cache and one
/// forward occupation sweep across blocks.
pub fn zdiff_eval(plane: &DisorderPlane, m: u32) -> Result<ZdiffEval> {
    let n = plane.domain.n;
    let edges = log_block_edges(n, m)?;
    let grid = plane.domain.grid;
    field_budget(&grid, dominated_slices(n))?;
    let eta = EtaSlices::build(plane, n)?;
    let mut step = Stepper::new(grid);
    let mut rho = RhoForward::new(&grid);
    let sigma = plane.schedule.sigma_n;
    let mut blocks = Vec::with_capacity(m as usize);
    let mut product = 1.0;
    for j in 1..=m {
        let (lo, hi) = (edges[(j - 1) as usize], edges[j as usize]);
        let empty = lo == hi;
        let value = if empty {
            0.0
        } else {
            dominated_interval(&mut step, &eta, sigma, &mut rho, lo, hi)
        };
        product *= 1.0 + value;
        blocks.push(BlockEval {
            j,
            lo,
            hi,
            value,
            empty,
        });
    }
    Ok(ZdiffEval { m, blocks, product })
}

/// Dominated chain sum pinned at both ends: start height (a, x) with no
/// chain point, first point (b, z), last point (b', z'), interior gaps <= b.
/// Parity-impossible pinnings return exactly 0.
pub fn xdom_constrained_eval(
    plane: &DisorderPlane,
    a: u32,
    b: u32,
    b_prime: u32,
    x: (i32, i32),
    z: (i32, i32),
    z_prime: (i32, i32),
) -> Result<f64> {
    let n = plane.domain.n;
    if !(a <= b && b <= b_prime && b_prime <= n) {
        return Err(Error::Parameter(format!(
            "pinned times must satisfy a <= b <= b' <= N, got ({a}, {b}, {b_prime}) at N = {n}"
        )));
    }
    if b < 1 {
        return Err(Error::Parameter("first pinned time must be >= 1".into()));
    }
    if b - a > PINNED_SPAN_MAX || b_prime - b > PINNED_SPAN_MAX {
        return Err(Error::Budget(format!(
            "pinned evaluator spans are capped at {PINNED_SPAN_MAX} slices per leg"
        )));
    }
    let grid = plane.domain.grid;
    for site in [x, z, z_prime] {
        if grid.locate(site).is_none() {
            return Err(Error::OutOfDomain(format!("site {site:?} outside the box")));
        }
    }
    let l1 = |u: (i32, i32), v: (i32, i32)| ((u.0 - v.0).abs() + (u.1 - v.1).abs()) as u32;
    // kernels vanish off the reachable diamond; report those zeros without
    // touching the disorder
    let d1 = l1(z, x);
    if d1 > b - a || (d1 + (b - a)) % 2 != 0 {
        return Ok(0.0);
    }
    let d2 = l1(z_prime, z);
    if d2 > b_prime - b || (d2 + (b_prime - b)) % 2 != 0 {
        return Ok(0.0);
    }
    let sigma = plane.schedule.sigma_n;
    let mut kernels = KernelMemo::new(&grid);
    let q0 = kernels.mass_at(b - a, x, z);
    if q0 == 0.0 {
        return Ok(0.0);
    }
    let eb = plane.eta_at(b, z)?;
    if b == b_prime {
        return Ok(if z == z_prime { sigma * q0 * eb } else { 0.0 });
    }
    // w[t - b][y] = weighted completions from last point (t, y) to (b', z')
    let span = (b_prime - b) as usize;
    let mut w: Vec<BTreeMap<(i32, i32), f64>> = vec![BTreeMap::new(); span + 1];
    w[span].insert(z_prime, 1.0);
    for t in (b..b_prime).rev() {
        let s1 = (t - b) as i32;
        let s2 = (b_prime - t) as i32;
        let mut cur: BTreeMap<(i32, i32), f64> = BTreeMap::new();
        for dy1 in -s1..=s1 {
            let rem = s1 - dy1.abs();
            for dy2 in -rem..=rem {
                if (dy1 + dy2 - s1).rem_euclid(2) != 0 {
                    continue;
                }
                let y = (z.0 + dy1, z.1 + dy2);
                if !kernels.in_box(y) {
                    continue;
                }
                let dz = l1(z_prime, y);
                if dz as i32 > s2 || (dz as i32 + s2) % 2 != 0 {
                    continue;
                }
                let mut val = 0.0;
                for g in 1..=b.min(b_prime - t) {
                    let kern = kernels.killed(g, y);
                    let later = &w[(t + g - b) as usize];
                    for &(yn, q) in kern.iter() {
                        if let Some(&wn) = later.get(&yn) {
                            val += q * sigma * plane.eta_at(t + g, yn)? * wn;
                        }
                    }
                }
                if val != 0.0 {
                    cur.insert(y, val);
                }
            }
        }
        w[(t - b) as usize] = cur;
    }
    let tail = w[0].get(&z).copied().unwrap_or(0.0);
    Ok(sigma * q0 * eb * tail)
}

/// Spreads block-entry weights to the block's chain points: start law `w` at
/// height a, first point at b, last point at b', interior gaps <= b. Returns
/// the weighted law of the last point.
fn forward_block(
    eta: &EtaSlices,
    kernels: &mut KernelMemo,
    sigma: f64,
    a: u32,
    b: u32,
    bp: u32,
    w: &BTreeMap<(i32, i32), f64>,
) -> BTreeMap<(i32, i32), f64> {
    let mut f: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    for (&x, &wx) in w {
        for &(z, q) in kernels.killed(b - a, x).iter() {
            *f.entry(z).or_insert(0.0) += wx * q;
        }
    }
    for (z, v) in f.iter_mut() {
        *v *= sigma * eta.at(b, *z);
    }
    if b == bp {
        return f;
    }
    let mut levels: Vec<BTreeMap<(i32, i32), f64>> = Vec::with_capacity((bp - b + 1) as usize);
    levels.push(f);
    for t in b + 1..=bp {
        let mut cur: BTreeMap<(i32, i32), f64> = BTreeMap::new();
        for g in 1..=b.min(t - b) {
            let src = &levels[(t - g - b) as usize];
            for (&y0, &w0) in src {
                for &(y, q) in kernels.killed(g, y0).iter() {
                    *cur.entry(y).or_insert(0.0) += w0 * q;
                }
            }
        }
        for (y, v) in cur.iter_mut() {
            *v *= sigma * eta.at(t, *y);
        }
        levels.push(cur);
    }
    levels.pop().unwrap()
}

fn rec_blocks(
    eta: &EtaSlices,
    kernels: &mut KernelMemo,
    sigma: f64,
    n: u32,
    prev_b: u32,
    prev_bp: u32,
    w: &BTreeMap<(i32, i32), f64>,
) -> f64 {
    let mut total: f64 = w.values().sum();
    for b in prev_b + prev_bp + 1..=n {
        for bp in b..=n {
            let w2 = forward_block(eta, kernels, sigma, prev_bp, b, bp, w);
            if !w2.is_empty() {
                total += rec_blocks(eta, kernels, sigma, n, b, bp, &w2);
            }
        }
    }
    total
}

/// Rebuilds the full chain sum from gap-record blocks: block i runs from
/// first time b_i to last time b'_i with interior gaps <= b_i, and each new
/// block starts beyond the previous reach, b_i - b'_(i-1) > b_(i-1). The
/// result is an exact per-realization identity with `chaos_eval_z`.
pub fn record_decomposition_eval(plane: &DisorderPlane) -> Result<f64> {
    let n = plane.domain.n;
    if n > RECORD_ENUM_MAX_N {
        return Err(Error::Budget(format!(
            "record-block enumeration is capped at horizon {RECORD_ENUM_MAX_N}, got {n}"
        )));
    }
    let eta = EtaSlices::build(plane, n)?;
    let mut kernels = KernelMemo::new(&plane.domain.grid);
    let mut w0 = BTreeMap::new();
    w0.insert((0, 0), 1.0);
    Ok(rec_blocks(
        &eta,
        &mut kernels,
        plane.schedule.sigma_n,
        n,
        0,
        0,
        &w0,
    ))
}

/// Exact second moment of the chain sum together with its geometric bound.
#[derive(Debug, Clone)]
pub struct SecondMomentZ {
    pub value: f64,
    /// sigma^2 R_N, the geometric ratio of the order masses.
    pub sigma2_overlap: f64,
    pub supercritical: bool,
    /// 1 / (1 - sigma^2 R_N), None once the ratio reaches 1.
    pub geometric_bound: Option<f64>,
}

/// V(h) = E[Z^2] over horizons h = 0..=n at fixed per-site variance sigma2:
/// the renewal recursion D(0) = 1, D(t) = sigma2 sum_m u_m D(t-m).
pub fn second_moment_z_profile(n: u32, sigma2: f64) -> Result<Vec<f64>> {
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if n == 0 {
        return Ok(vec![1.0]);
    }
    let tab = overlap_sum(n);
    let mut d = vec![0.0f64; n as usize + 1];
    d[0] = 1.0;
    let mut v = Vec::with_capacity(n as usize + 1);
    let mut acc = 1.0;
    v.push(1.0);
    for t in 1..=n as usize {
        let mut s = 0.0;
        for m in 1..=t {
            s += tab.u(m as u32) * d[t - m];
        }
        d[t] = sigma2 * s;
        acc += d[t];
        v.push(acc);
    }
    Ok(v)
}

pub fn second_moment_z(n: u32, sigma2: f64) -> Result<SecondMomentZ> {
    let profile = second_moment_z_profile(n, sigma2)?;
    let value = *profile.last().unwrap();
    let sigma2_overlap = if n == 0 {
        0.0
    } else {
        sigma2 * overlap_sum(n).r(n)
    };
    let supercritical = sigma2_overlap >= 1.0;
    Ok(SecondMomentZ {
        value,
        sigma2_overlap,
        supercritical,
        geometric_bound: if supercritical {
            None
        } else {
            Some(1.0 / (1.0 - sigma2_overlap))
        },
    })
}

/// Chain mass at each order k = 1..=k_max; the full second moment minus 1 is
/// their sum over all orders.
pub fn mass_by_order_z(n: u32, sigma2: f64, k_max: u32) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(Error::Parameter("order count must be >= 1".into()));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if n == 0 {
        return Ok(vec![0.0; k_max as usize]);
    }
    let tab = overlap_sum(n);
    let mut prev = vec![0.0f64; n as usize + 1];
    prev[0] = 1.0;
    let mut cur = vec![0.0f64; n as usize + 1];
    let mut masses = Vec::with_capacity(k_max as usize);
    for _k in 1..=k_max {
        for t in 0..=n as usize {
            let mut s = 0.0;
            for m in 1..=t {
                s += tab.u(m as u32) * prev[t - m];
            }
            cur[t] = sigma2 * s;
        }
        masses.push(cur.iter().sum());
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(masses)
}

/// Second moment of chains confined to (0, n] with full-interval second
/// moments as the chains' time set, restricted to box (lo, hi].
pub fn second_moment_z_interval(lo: u32, hi: u32, sigma2: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::Parameter(format!(
            "interval edges out of order: ({lo}, {hi}]"
        )));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if lo == hi {
        return Ok(0.0);
    }
    let tab = overlap_sum(hi);
    // renewal inside the interval: entry kernel u_c, then free gaps up to hi
    let mut d = vec![0.0f64; (hi - lo) as usize];
    let mut total = 0.0;
    for t in lo + 1..=hi {
        let i = (t - lo - 1) as usize;
        let mut s = tab.u(t);
        for m in 1..t - lo {
            s += tab.u(m) * d[(t - m - lo - 1) as usize];
        }
        d[i] = sigma2 * s;
        total += d[i];
    }
    Ok(total)
}

/// Second moment of the dominated sum over (lo, hi]: capped renewal
/// G(t, c) = 1 + sigma2 sum_{m <= min(c, hi-t)} u_m G(t+m, c), summed over
/// entry times with cap c equal to the entry time.
pub fn second_moment_xdom_interval(lo: u32, hi: u32, sigma2: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::Parameter(format!(
            "interval edges out of order: ({lo}, {hi}]"
        )));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if lo == hi {
        return Ok(0.0);
    }
    let tab = overlap_sum(hi);
    let mut g = vec![0.0f64; hi as usize + 1];
    let mut total = 0.0;
    for c in lo + 1..=hi {
        for t in (c..=hi).rev() {
            let mut s = 0.0;
            for m in 1..=c.min(hi - t) {
                s += tab.u(m) * g[(t + m) as usize];
            }
            g[t as usize] = 1.0 + sigma2 * s;
        }
        total += sigma2 * tab.u(c) * g[c as usize];
    }
    Ok(total)
}

pub fn second_moment_xdom(n: u32, sigma2: f64) -> Result<f64> {
    second_moment_xdom_interval(0, n, sigma2)
}

pub fn second_moment_xdom_block(n: u32, m: u32, j: u32, sigma2: f64) -> Result<f64> {
    if j < 1 || j > m {
        return Err(Error::Parameter(format!(
            "block index {j} outside 1..={m}"
        )));
    }
    let edges = log_block_edges(n, m)?;
    second_moment_xdom_interval(edges[(j - 1) as usize], edges[j as usize], sigma2)
}

/// Dominated-chain mass at each order k = 1..=k_max.
pub fn mass_by_order_xdom(n: u32, sigma2: f64, k_max: u32) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(Error::Parameter("order count must be >= 1".into()));
    }
    if !sigma2.is_finite() || sigma2 < 0.0 {
        return Err(Error::Parameter(format!(
            "per-site variance must be finite and >= 0, got {sigma2}"
        )));
    }
    let mut masses = vec![0.0f64; k_max as usize];
    if n == 0 {
        return Ok(masses);
    }
    let tab = overlap_sum(n);
    let mut prev = vec![0.0f64; n as usize + 1];
    let mut cur = vec![0.0f64; n as usize + 1];
    for c in 1..=n {
        let entry = sigma2 * tab.u(c);
        masses[0] += entry;
        for slot in prev.iter_mut() {
            *slot = 1.0;
        }
        for k in 2..=k_max {
            for t in (c..=n).rev() {
                let mut s = 0.0;
                for m in 1..=c.min(n - t) {
                    s += tab.u(m) * prev[(t + m) as usize];
                }
                cur[t as usize] = sigma2 * s;
            }
            masses[(k - 1) as usize] += entry * cur[c as usize];
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    Ok(masses)
}

/// Closed-form block mass limit: integral of b^2 / (1 - b^2 s) over
/// s in [(j-1)/M, j/M], i.e. log of a ratio of the two endpoints. The blocks
/// telescope to log 1/(1 - b^2).
pub fn i_mj(beta_hat: f64, m: u32, j: u32) -> Result<f64> {
    if !(beta_hat > 0.0 && beta_hat < 1.0) {
        return Err(Error::Parameter(format!(
            "effective coupling must lie in (0,1), got {beta_hat}"
        )));
    }
    if m < 1 || j < 1 || j > m {
        return Err(Error::Parameter(format!(
            "block index {j} outside 1..={m}"
        )));
    }
    let b2 = beta_hat * beta_hat;
    let mf = m as f64;
    Ok(((1.0 - b2 * (j as f64 - 1.0) / mf) / (1.0 - b2 * j as f64 / mf)).ln())
}

/// Exact variance of mu * (noise pairing) + lambda * (cross pairing) against
/// one cube-averaged test function: per start slice the later-slice field
/// contributes its centered second moment, independent of the start's noise.
pub fn singular_second_moment(
    psi: &PsiBarTable,
    mu: f64,
    lambda: f64,
    sigma2: f64,
) -> Result<f64> {
    let n = psi.horizon;
    let v = second_moment_z_profile(n, sigma2)?;
    let nf = n as f64;
    let mut acc = 0.0;
    for t in 1..=n {
        let tb = psi.t_bar(t);
        acc += tb * tb * (mu * mu + lambda * lambda * (v[(n - t) as usize] - 1.0));
    }
    Ok(acc * psi.s_sq_sum / (nf * nf))
}

/// Exact variance of the field pairing (1/(beta N^2)) sum psi (Z - 1): the
/// covariance of two fluctuation values renews at their first common chain
/// point, so the double sum collapses to kernel-smoothed copies of psi.
pub fn pair_v_exact_variance(psi: &PsiBarTable, sigma2: f64, beta_n: f64) -> Result<f64> {
    if !(beta_n > 0.0) {
        return Err(Error::Parameter(format!(
            "pairing normalization needs beta_n > 0, got {beta_n}"
        )));
    }
    let n = psi.horizon;
    let grid = psi.grid;
    let v = second_moment_z_profile(n, sigma2)?;
    let mut step = Stepper::new(grid);
    let mut phi = [vec![0.0; grid.sites(0)], vec![0.0; grid.sites(1)]];
    let mut combo = [Vec::new(), Vec::new()];
    let mut acc = 0.0;
    for m in 2..=n {
        let tb = psi.t_bar(m - 1);
        for p in [0usize, 1] {
            combo[p].clear();
            combo[p].extend_from_slice(&phi[p]);
            for &(idx, sb) in psi.nonzero(p as u8) {
                combo[p][idx] += tb * sb;
            }
        }
        for p in [0usize, 1] {
            let q = 1 - p;
            let src = std::mem::take(&mut combo[q]);
            step.step(q as u8, &src, &mut phi[p]);
            combo[q] = src;
        }
        let w = v[(n - m) as usize];
        let norm: f64 = phi[0].iter().map(|x| x * x).sum::<f64>()
            + phi[1].iter().map(|x| x * x).sum::<f64>();
        acc += w * norm;
    }
    let nf = n as f64;
    Ok(sigma2 * acc / (beta_n * beta_n * nf.powi(4)))
}

/// One exact second moment along a sweep, with an optional limit to trend
/// toward.
#[derive(Debug, Clone)]
pub struct MomentPoint {
    pub n: u32,
    pub value: f64,
    pub target: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MomentCurve {
    pub tag: String,
    /// Promised by the producer for fixed-variance profiles; horizon-indexed
    /// schedules drift at small N and do not promise it.
    pub require_monotone: bool,
    pub points: Vec<MomentPoint>,
}

impl MomentCurve {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].n <= w[0].n {
                return Err(Error::Mismatch(format!(
                    "curve {} abscissae not increasing at {}",
                    self.tag, w[1].n
                )));
            }
            if self.require_monotone && w[1].value < w[0].value {
                return Err(Error::Mismatch(format!(
                    "curve {} not monotone at {}: {} -> {}",
                    self.tag, w[1].n, w[0].value, w[1].value
                )));
            }
        }
        for p in &self.points {
            if !p.value.is_finite() || p.value < 0.0 {
                return Err(Error::Mismatch(format!(
                    "curve {} has invalid value {} at {}",
                    self.tag, p.value, p.n
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "n,value,target,tag")?;
        for p in &self.points {
            match p.target {
                Some(t) => writeln!(out, "{},{:.17e},{:.17e},{}", p.n, p.value, t, self.tag)?,
                None => writeln!(out, "{},{:.17e},,{}", p.n, p.value, self.tag)?,
            }
        }
        Ok(())
    }
}

/// E[Z^2] along a horizon sweep with the coupling rescaled per horizon; the
/// limit is 1/(1 - beta_hat^2).
pub fn moment_curve_z(beta_hat: f64, law: &DisorderLaw, ns: &[u32]) -> Result<MomentCurve> {
    let target = 1.0 / (1.0 - beta_hat * beta_hat);
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let sched = make_schedule(beta_hat, n, law.clone())?;
        let v = second_moment_z(n, sched.sigma_n2)?.value;
        points.push(MomentPoint {
            n,
            value: v,
            target: Some(target),
        });
    }
    Ok(MomentCurve {
        tag: "z-second-moment".into(),
        require_monotone: false,
        points,
    })
}

/// Dominated-sum second moments along a horizon sweep; the limit is
/// log 1/(1 - beta_hat^2).
pub fn moment_curve_xdom(beta_hat: f64, law: &DisorderLaw, ns: &[u32]) -> Result<MomentCurve> {
    let target = -(1.0 - beta_hat * beta_hat).ln();
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let sched = make_schedule(beta_hat, n, law.clone())?;
        let v = second_moment_xdom(n, sched.sigma_n2)?;
        points.push(MomentPoint {
            n,
            value: v,
            target: Some(target),
        });
    }
    Ok(MomentCurve {
        tag: "dominated-second-moment".into(),
        require_monotone: false,
        points,
    })
}

/// Per-block dominated masses at one horizon, abscissa = block index, each
/// against its closed-form limit.
pub fn moment_curve_blocks(
    beta_hat: f64,
    law: &DisorderLaw,
    n: u32,
    m: u32,
) -> Result<MomentCurve> {
    let sched = make_schedule(beta_hat, n, law.clone())?;
    let mut points = Vec::with_capacity(m as usize);
    for j in 1..=m {
        let v = second_moment_xdom_block(n, m, j, sched.sigma_n2)?;
        points.push(MomentPoint {
            n: j,
            value: v,
            target: Some(i_mj(beta_hat, m, j)?),
        });
    }
    Ok(MomentCurve {
        tag: format!("block-second-moment-m{m}-n{n}"),
        require_monotone: false,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{make_schedule, CouplingSchedule, DisorderLaw, DisorderPlane};
    use crate::grid::{policy_radius, PlaneDomain, RotGrid};
    use crate::polymer_sim::{evolve_observables, evolve_origin};
    use crate::testfn::TestFunction;
    use crate::walk_kernels::rw_kernel_2d;
    use approx::assert_relative_eq;

    const SEED: u64 = 0x00D1_CE5E_ED00_1234;

    fn plane_for(n: u32, beta_hat: f64, sample: u64) -> DisorderPlane {
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let dom = PlaneDomain::new(n, grid).unwrap();
        let sched = make_schedule(beta_hat, n, DisorderLaw::Gaussian).unwrap();
        DisorderPlane::new(SEED, sample, dom, sched).unwrap()
    }

    fn zero_noise_plane(n: u32) -> DisorderPlane {
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let dom = PlaneDomain::new(n, grid).unwrap();
        let sched = CouplingSchedule {
            beta_hat: 0.0,
            horizon: n,
            law: DisorderLaw::Gaussian,
            beta_n: 0.0,
            lambda_n: 0.0,
            sigma_n2: 0.0,
            sigma_n: 0.0,
        };
        DisorderPlane::new(SEED, 0, dom, sched).unwrap()
    }

    fn var_with_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let se = ((m4 - v * v * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt();
        (v, se)
    }

    #[test]
    fn second_moment_small_horizons_match_hand_values() {
        for sigma2 in [0.64, 1.0] {
            let v1 = second_moment_z(1, sigma2).unwrap();
            assert_relative_eq!(v1.value, 1.0 + sigma2 / 4.0, max_relative = 1e-15);
            let v2 = second_moment_z(2, sigma2).unwrap();
            let hand = 1.0 + 25.0 * sigma2 / 64.0 + sigma2 * sigma2 / 16.0;
            assert_relative_eq!(v2.value, hand, max_relative = 1e-15);
        }
        assert_eq!(second_moment_z(0, 0.5).unwrap().value, 1.0);
        // profile is a running sum of nonnegative renewal masses
        let prof = second_moment_z_profile(48, 0.8).unwrap();
        assert_eq!(prof.len(), 49);
        assert!(prof.windows(2).all(|w| w[1] >= w[0]));
        // profile entries depend only on shorter horizons
        let short = second_moment_z_profile(5, 0.8).unwrap();
        for (a, b) in short.iter().zip(&prof) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn geometric_bound_caps_the_dp_value() {
        let sched = make_schedule(0.5, 64, DisorderLaw::Gaussian).unwrap();
        let sm = second_moment_z(64, sched.sigma_n2).unwrap();
        assert!(!sm.supercritical);
        let bound = sm.geometric_bound.unwrap();
        assert!(sm.value <= bound, "{} > {}", sm.value, bound);
        // ratio >= 1 is flagged, value still finite and exact
        let hot = second_moment_z(4, 4.0).unwrap();
        assert!(hot.supercritical);
        assert!(hot.geometric_bound.is_none());
        assert!(hot.value.is_finite());
    }

    #[test]
    fn order_masses_sum_to_the_full_moment() {
        let sigma2 = 0.7;
        let m2 = mass_by_order_z(2, sigma2, 2).unwrap();
        assert_relative_eq!(m2[0], 25.0 * sigma2 / 64.0, max_relative = 1e-15);
        assert_relative_eq!(m2[1], sigma2 * sigma2 / 16.0, max_relative = 1e-15);
        let n = 24;
        let masses = mass_by_order_z(n, sigma2, n).unwrap();
        let total: f64 = masses.iter().sum();
        let v = second_moment_z(n, sigma2).unwrap().value;
        assert_relative_eq!(total, v - 1.0, max_relative = 1e-12);
    }

    #[test]
    fn order_tail_is_geometrically_dominated() {
        let sched = make_schedule(0.5, 64, DisorderLaw::Gaussian).unwrap();
        let sm = second_moment_z(64, sched.sigma_n2).unwrap();
        let k = 6u32;
        let masses = mass_by_order_z(64, sched.sigma_n2, k).unwrap();
        let head: f64 = masses.iter().sum();
        let tail = sm.value - 1.0 - head;
        let ratio = sm.sigma2_overlap;
        let bound = ratio.powi(k as i32 + 1) / (1.0 - ratio);
        assert!(tail >= -1e-15, "negative tail {tail}");
        assert!(tail <= bound, "tail {tail} above geometric bound {bound}");
    }

    #[test]
    fn dominated_moments_small_horizons() {
        let sigma2 = 0.9;
        assert_relative_eq!(
            second_moment_xdom(1, sigma2).unwrap(),
            sigma2 / 4.0,
            max_relative = 1e-15
        );
        // every two-point chain in (0,2] is gap-dominated
        let full2 = second_moment_z(2, sigma2).unwrap().value - 1.0;
        assert_relative_eq!(
            second_moment_xdom(2, sigma2).unwrap(),
            full2,
            max_relative = 1e-15
        );
        // at n = 3 the chain {1,3} is excluded: hand formula from the u table
        let tab = overlap_sum(3);
        let (u1, u2, u3) = (tab.u(1), tab.u(2), tab.u(3));
        let hand = sigma2 * (u1 + u2 + u3)
            + sigma2 * sigma2 * (u1 * u1 + u2 * u1)
            + sigma2.powi(3) * u1.powi(3);
        let x3 = second_moment_xdom(3, sigma2).unwrap();
        assert_relative_eq!(x3, hand, max_relative = 1e-14);
        let full3 = second_moment_z(3, sigma2).unwrap().value - 1.0;
        assert!(x3 < full3);
        assert_relative_eq!(
            full3 - x3,
            sigma2 * sigma2 * u1 * u2,
            max_relative = 1e-13
        );
    }

    #[test]
    fn interval_and_block_moments_are_consistent() {
        let sigma2 = 0.82;
        let full = second_moment_xdom(48, sigma2).unwrap();
        assert_relative_eq!(
            second_moment_xdom_interval(0, 48, sigma2).unwrap(),
            full,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            second_moment_xdom_block(48, 1, 1, sigma2).unwrap(),
            full,
            max_relative = 1e-15
        );
        // blocks partition the chains into disjoint families
        let m = 4;
        let mut sum = 0.0;
        for j in 1..=m {
            sum += second_moment_xdom_block(48, m, j, sigma2).unwrap();
        }
        assert!(sum <= full + 1e-15);
        // empty block in a tiny horizon
        assert_eq!(second_moment_xdom_block(2, 8, 4, sigma2).unwrap(), 0.0);
        // z-family interval: full interval equals the profile mass
        let vz = second_moment_z(48, sigma2).unwrap().value;
        assert_relative_eq!(
            second_moment_z_interval(0, 48, sigma2).unwrap(),
            vz - 1.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn dominated_order_masses_sum_to_the_dominated_moment() {
        let sigma2 = 0.77;
        let masses = mass_by_order_xdom(32, sigma2, 32).unwrap();
        let total: f64 = masses.iter().sum();
        assert_relative_eq!(
            total,
            second_moment_xdom(32, sigma2).unwrap(),
            max_relative = 1e-12
        );
        // at n = 2 the dominated and full chains coincide order by order
        let mx = mass_by_order_xdom(2, sigma2, 2).unwrap();
        let mz = mass_by_order_z(2, sigma2, 2).unwrap();
        for (a, b) in mx.iter().zip(&mz) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
    }

    #[test]
    fn block_mass_closed_forms() {
        assert_relative_eq!(
            i_mj(0.5, 1, 1).unwrap(),
            0.287_682_072_451_780_85,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            i_mj(0.5, 2, 1).unwrap(),
            0.133_531_392_624_522_63,
            max_relative = 1e-14
        );
        for beta_hat in [0.3, 0.5, 0.99] {
            let target = -(1.0f64 - beta_hat * beta_hat).ln();
            for m in [1u32, 3, 8, 17] {
                let sum: f64 = (1..=m).map(|j| i_mj(beta_hat, m, j).unwrap()).sum();
                assert_relative_eq!(sum, target, max_relative = 1e-12);
            }
        }
        assert!(i_mj(0.5, 4, 0).is_err());
        assert!(i_mj(0.5, 4, 5).is_err());
        assert!(i_mj(1.0, 4, 2).is_err());
    }

    #[test]
    fn enumeration_matches_the_backward_sweep() {
        for beta_hat in [0.3, 0.5] {
            for n in 1..=6u32 {
                for sample in 0..3u64 {
                    let plane = plane_for(n, beta_hat, sample);
                    let swept = evolve_origin(&plane).unwrap();
                    let summed = chaos_eval_z(&plane, ChainDpConfig::enumeration()).unwrap();
                    assert_relative_eq!(summed, swept, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn first_order_truncation_matches_a_literal_kernel_sum() {
        let n = 4;
        let plane = plane_for(n, 0.5, 7);
        let sigma = plane.schedule.sigma_n;
        // box radius 12 >= horizon, so confined kernels equal the free ones
        let mut direct = 0.0;
        for t in 1..=n {
            let s = t as i32;
            for z1 in -s..=s {
                for z2 in -(s - z1.abs())..=(s - z1.abs()) {
                    let q = rw_kernel_2d(t, (z1, z2));
                    if q > 0.0 {
                        direct += sigma * q * plane.eta_at(t, (z1, z2)).unwrap();
                    }
                }
            }
        }
        let cfg = ChainDpConfig {
            k_max: Some(1),
            ..ChainDpConfig::enumeration()
        };
        assert_relative_eq!(
            chaos_eval_z(&plane, cfg).unwrap(),
            1.0 + direct,
            max_relative = 1e-12
        );
        let dp = ChainDpConfig {
            k_max: Some(1),
            ..ChainDpConfig::exact()
        };
        assert_relative_eq!(
            chaos_eval_z(&plane, dp).unwrap(),
            1.0 + direct,
            max_relative = 1e-12
        );
    }

    #[test]
    fn dp_matches_enumeration_and_sweep() {
        let plane = plane_for(6, 0.5, 11);
        let full_dp = chaos_eval_z(&plane, ChainDpConfig::exact()).unwrap();
        let full_enum = chaos_eval_z(&plane, ChainDpConfig::enumeration()).unwrap();
        assert_relative_eq!(full_dp, full_enum, max_relative = 1e-11);
        for k in [1u32, 2, 3] {
            let dp = chaos_eval_z(
                &plane,
                ChainDpConfig {
                    k_max: Some(k),
                    ..ChainDpConfig::exact()
                },
            )
            .unwrap();
            let en = chaos_eval_z(
                &plane,
                ChainDpConfig {
                    k_max: Some(k),
                    ..ChainDpConfig::enumeration()
                },
            )
            .unwrap();
            assert_relative_eq!(dp, en, max_relative = 1e-11);
        }
        let wide = plane_for(32, 0.5, 3);
        assert_relative_eq!(
            chaos_eval_z(&wide, ChainDpConfig::exact()).unwrap(),
            evolve_origin(&wide).unwrap(),
            max_relative = 1e-11
        );
    }

    #[test]
    fn zero_noise_collapses_everything() {
        let plane = zero_noise_plane(5);
        assert_eq!(chaos_eval_z(&plane, ChainDpConfig::exact()).unwrap(), 1.0);
        assert_eq!(
            chaos_eval_z(&plane, ChainDpConfig::enumeration()).unwrap(),
            1.0
        );
        assert_eq!(xdom_eval(&plane, ChainDpConfig::exact()).unwrap(), 0.0);
        assert_eq!(record_decomposition_eval(&plane).unwrap(), 1.0);
        let zd = zdiff_eval(&plane, 3).unwrap();
        assert_eq!(zd.product, 1.0);
        assert!(zd.blocks.iter().all(|b| b.value == 0.0));
    }

    #[test]
    fn dominated_dp_matches_enumeration() {
        for n in [4u32, 6] {
            for sample in 0..2u64 {
                let plane = plane_for(n, 0.5, sample);
                let en = xdom_eval(&plane, ChainDpConfig::enumeration()).unwrap();
                let dp = xdom_eval(&plane, ChainDpConfig::exact()).unwrap();
                assert_relative_eq!(dp, en, max_relative = 1e-10);
            }
        }
        // n = 8 exercises the cap-dependent correction route of the slide
        let plane = plane_for(8, 0.5, 5);
        assert_relative_eq!(
            xdom_eval(&plane, ChainDpConfig::exact()).unwrap(),
            xdom_eval(&plane, ChainDpConfig::enumeration()).unwrap(),
            max_relative = 1e-10
        );
        // fixed cap: both routes again
        let fixed = ChainDpConfig {
            cap: CapPolicy::Fixed(2),
            ..ChainDpConfig::exact()
        };
        let fixed_enum = ChainDpConfig {
            cap: CapPolicy::Fixed(2),
            ..ChainDpConfig::enumeration()
        };
        let plane = plane_for(6, 0.5, 9);
        assert_relative_eq!(
            xdom_eval(&plane, fixed).unwrap(),
            xdom_eval(&plane, fixed_enum).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn sliding_window_matches_the_quadratic_reference() {
        for (n, sample) in [(17u32, 0u64), (48, 1)] {
            let plane = plane_for(n, 0.5, sample);
            let fast = xdom_eval(&plane, ChainDpConfig::exact()).unwrap();
            let slow = xdom_eval_reference(&plane).unwrap();
            assert_relative_eq!(fast, slow, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_chain_horizon_is_a_plain_noise_average() {
        let plane = plane_for(1, 0.5, 2);
        let sigma = plane.schedule.sigma_n;
        let mut hand = 0.0;
        for z in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            hand += 0.25 * sigma * plane.eta_at(1, z).unwrap();
        }
        assert_relative_eq!(
            xdom_eval(&plane, ChainDpConfig::exact()).unwrap(),
            hand,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            record_decomposition_eval(&plane).unwrap(),
            1.0 + hand,
            max_relative = 1e-13
        );
    }

    #[test]
    fn one_block_product_reduces_to_the_dominated_sum() {
        let plane = plane_for(24, 0.5, 4);
        let zd = zdiff_eval(&plane, 1).unwrap();
        let x = xdom_eval(&plane, ChainDpConfig::exact()).unwrap();
        assert_relative_eq!(zd.product, 1.0 + x, max_relative = 1e-14);
        assert_eq!(zd.blocks.len(), 1);
        assert_eq!((zd.blocks[0].lo, zd.blocks[0].hi), (0, 24));
    }

    #[test]
    fn tiny_horizon_blocks_flag_empties_and_multiply_up() {
        let plane = plane_for(2, 0.5, 6);
        let zd = zdiff_eval(&plane, 8).unwrap();
        let empties = zd.blocks.iter().filter(|b| b.empty).count();
        assert_eq!(empties, 6);
        assert!(zd.blocks.iter().all(|b| !b.empty || b.value == 0.0));
        let manual: f64 = zd.blocks.iter().map(|b| 1.0 + b.value).product();
        assert_eq!(zd.product, manual);
        // single calls agree with the shared-cache sweep
        for b in &zd.blocks {
            let single = xdom_block_eval(&plane, 8, b.j).unwrap();
            assert_eq!(single.empty, b.empty);
            assert_relative_eq!(single.value, b.value, max_relative = 1e-13);
        }
    }

    #[test]
    fn block_edges_shapes() {
        assert_eq!(
            log_block_edges(1024, 10).unwrap(),
            vec![0, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]
        );
        assert_eq!(log_block_edges(24, 1).unwrap(), vec![0, 24]);
        assert_eq!(
            log_block_edges(2, 8).unwrap(),
            vec![0, 1, 1, 1, 1, 1, 1, 1, 2]
        );
        for (n, m) in [(100u32, 7u32), (513, 9), (3, 3)] {
            let e = log_block_edges(n, m).unwrap();
            assert_eq!(e[0], 0);
            assert_eq!(*e.last().unwrap(), n);
            assert!(e.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn dominated_variance_agrees_with_the_dp_moment() {
        let n = 16u32;
        let samples = 4000u64;
        let sched = make_schedule(0.5, n, DisorderLaw::Gaussian).unwrap();
        let target = second_moment_xdom(n, sched.sigma_n2).unwrap();
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let mut xs = Vec::with_capacity(samples as usize);
        for s in 0..samples {
            let dom = PlaneDomain::new(n, grid).unwrap();
            let plane = DisorderPlane::new(SEED, s, dom, sched.clone()).unwrap();
            xs.push(xdom_eval(&plane, ChainDpConfig::exact()).unwrap());
        }
        let mean = xs.iter().sum::<f64>() / samples as f64;
        let (v, se) = var_with_se(&xs);
        assert!(
            mean.abs() < 4.0 * (v / samples as f64).sqrt(),
            "dominated sum mean {mean} not near 0"
        );
        assert!(
            (v - target).abs() < 4.0 * se,
            "variance {v} vs dp {target} (se {se})"
        );
    }

    #[test]
    fn block_values_are_uncorrelated_and_match_their_masses() {
        let n = 16u32;
        let m = 2u32;
        let samples = 3000u64;
        let sched = make_schedule(0.5, n, DisorderLaw::Gaussian).unwrap();
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        for s in 0..samples {
            let dom = PlaneDomain::new(n, grid).unwrap();
            let plane = DisorderPlane::new(SEED, s, dom, sched.clone()).unwrap();
            let zd = zdiff_eval(&plane, m).unwrap();
            b1.push(zd.blocks[0].value);
            b2.push(zd.blocks[1].value);
        }
        for (j, xs) in [(1u32, &b1), (2, &b2)] {
            let target = second_moment_xdom_block(n, m, j, sched.sigma_n2).unwrap();
            let (v, se) = var_with_se(xs);
            assert!(
                (v - target).abs() < 4.0 * se,
                "block {j} variance {v} vs dp {target} (se {se})"
            );
        }
        let prods: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a * b).collect();
        let pm = prods.iter().sum::<f64>() / prods.len() as f64;
        let pv = prods
            .iter()
            .map(|x| (x - pm).powi(2))
            .sum::<f64>()
            / (prods.len() as f64 - 1.0);
        let pse = (pv / prods.len() as f64).sqrt();
        assert!(pm.abs() < 4.0 * pse, "cross-block mean {pm} (se {pse})");
    }

    fn pinned_literal(
        plane: &DisorderPlane,
        a: u32,
        b: u32,
        bp: u32,
        x: (i32, i32),
        z: (i32, i32),
        zp: (i32, i32),
    ) -> f64 {
        // free-kernel route, valid because the box dwarfs the reach
        fn rec(
            plane: &DisorderPlane,
            sigma: f64,
            t: u32,
            y: (i32, i32),
            bp: u32,
            zp: (i32, i32),
            cap: u32,
        ) -> f64 {
            if t == bp {
                return if y == zp { 1.0 } else { 0.0 };
            }
            let mut acc = 0.0;
            for g in 1..=cap.min(bp - t) {
                let s = g as i32;
                for d1 in -s..=s {
                    for d2 in -(s - d1.abs())..=(s - d1.abs()) {
                        let q = rw_kernel_2d(g, (d1, d2));
                        if q == 0.0 {
                            continue;
                        }
                        let ny = (y.0 + d1, y.1 + d2);
                        acc += q
                            * sigma
                            * plane.eta_at(t + g, ny).unwrap()
                            * rec(plane, sigma, t + g, ny, bp, zp, cap);
                    }
                }
            }
            acc
        }
        let sigma = plane.schedule.sigma_n;
        let q0 = if b == a {
            if z == x {
                1.0
            } else {
                0.0
            }
        } else {
            rw_kernel_2d(b - a, (z.0 - x.0, z.1 - x.1))
        };
        if q0 == 0.0 {
            return 0.0;
        }
        q0 * sigma * plane.eta_at(b, z).unwrap() * rec(plane, sigma, b, z, bp, zp, b)
    }

    #[test]
    fn pinned_evaluator_matches_a_literal_recursion() {
        let plane = plane_for(6, 0.5, 13);
        let cases = [
            (0u32, 1u32, 1u32, (0, 0), (1, 0), (1, 0)),
            (0, 1, 3, (0, 0), (0, 1), (1, 2)),
            (0, 2, 5, (0, 0), (1, 1), (0, 2)),
            (1, 3, 6, (1, 0), (2, 1), (1, 2)),
            (2, 4, 6, (0, 0), (1, -1), (2, 0)),
            (0, 3, 3, (0, 0), (2, 1), (2, 1)),
        ];
        for (a, b, bp, x, z, zp) in cases {
            let dp = xdom_constrained_eval(&plane, a, b, bp, x, z, zp).unwrap();
            let lit = pinned_literal(&plane, a, b, bp, x, z, zp);
            if lit == 0.0 {
                assert_eq!(dp, 0.0, "case ({a},{b},{bp})");
            } else {
                assert_relative_eq!(dp, lit, max_relative = 1e-11);
            }
        }
    }

    #[test]
    fn pinned_evaluator_edge_semantics() {
        let plane = plane_for(6, 0.5, 1);
        let sigma = plane.schedule.sigma_n;
        // coincident endpoints keep only the single-point chain
        let v = xdom_constrained_eval(&plane, 0, 2, 2, (0, 0), (1, 1), (1, 1)).unwrap();
        let hand = sigma * rw_kernel_2d(2, (1, 1)) * plane.eta_at(2, (1, 1)).unwrap();
        assert_relative_eq!(v, hand, max_relative = 1e-13);
        assert_eq!(
            xdom_constrained_eval(&plane, 0, 2, 2, (0, 0), (1, 1), (0, 2)).unwrap(),
            0.0
        );
        // parity-impossible pinnings are exact zeros
        assert_eq!(
            xdom_constrained_eval(&plane, 0, 1, 1, (0, 0), (1, 1), (1, 1)).unwrap(),
            0.0
        );
        assert_eq!(
            xdom_constrained_eval(&plane, 0, 1, 4, (0, 0), (1, 0), (1, 0)).unwrap(),
            0.0
        );
        // unreachable spatial pinning
        assert_eq!(
            xdom_constrained_eval(&plane, 0, 1, 1, (0, 0), (3, 0), (3, 0)).unwrap(),
            0.0
        );
        assert!(xdom_constrained_eval(&plane, 2, 1, 3, (0, 0), (1, 0), (1, 0)).is_err());
        assert!(xdom_constrained_eval(&plane, 0, 0, 0, (0, 0), (0, 0), (0, 0)).is_err());
    }

    #[test]
    fn record_blocks_rebuild_the_full_chain_sum() {
        for n in 1..=5u32 {
            for sample in 0..4u64 {
                let plane = plane_for(n, 0.5, sample);
                let rebuilt = record_decomposition_eval(&plane).unwrap();
                let direct = chaos_eval_z(&plane, ChainDpConfig::enumeration()).unwrap();
                assert_relative_eq!(rebuilt, direct, max_relative = 1e-10);
            }
        }
        assert!(matches!(
            record_decomposition_eval(&plane_for(7, 0.5, 0)),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn singular_moment_reduces_to_its_pieces() {
        let psi = TestFunction::default_bump();
        let grid = RotGrid::new(policy_radius(36, 6.0)).unwrap();
        let tab = PsiBarTable::build(&psi, 36, grid);
        let sigma2 = 0.8;
        // lambda = 0: pure noise pairing
        let pure = singular_second_moment(&tab, 2.0, 0.0, sigma2).unwrap();
        assert_relative_eq!(pure, 4.0 * tab.pair_variance(), max_relative = 1e-14);
        // sigma2 = 0: the field has no fluctuation part
        let flat = singular_second_moment(&tab, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(flat, 0.0);
        // hand-built two-slice value
        let grid2 = RotGrid::new(policy_radius(2, 6.0)).unwrap();
        let tab2 = PsiBarTable::build(&psi, 2, grid2);
        let prof = second_moment_z_profile(2, sigma2).unwrap();
        let hand = (tab2.t_bar(1).powi(2) * (1.0 + prof[1] - 1.0)
            + tab2.t_bar(2).powi(2))
            * tab2.s_sq_sum
            / 4.0;
        let got = singular_second_moment(&tab2, 1.0, 1.0, sigma2).unwrap();
        assert_relative_eq!(got, hand, max_relative = 1e-14);
        // both pairings scale with the amplitude squared
        let tall = TestFunction::new(0.5, 0.4, 0.5, 3.0).unwrap();
        let grid3 = RotGrid::new(policy_radius(36, 6.0)).unwrap();
        let tab3 = PsiBarTable::build(&tall, 36, grid3);
        let scaled = singular_second_moment(&tab3, 2.0, 1.0, sigma2).unwrap();
        let unit = singular_second_moment(&tab, 2.0, 1.0, sigma2).unwrap();
        assert_relative_eq!(scaled, 9.0 * unit, max_relative = 1e-12);
    }

    #[test]
    fn field_pairing_variance_matches_a_free_kernel_route() {
        let psi = TestFunction::default_bump();
        let n = 6u32;
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let tab = PsiBarTable::build(&psi, n, grid);
        let sigma2 = 0.85;
        let beta_n = 0.7;
        let v = second_moment_z_profile(n, sigma2).unwrap();
        // literal route: smooth psi-bar with free kernels, square, weight
        let mut acc = 0.0;
        let r = grid.radius;
        for t in 2..=n {
            let mut norm = 0.0;
            for x1 in -r..=r {
                for x2 in -r..=r {
                    if (x1 + x2).abs() > r || (x1 - x2).abs() > r {
                        continue;
                    }
                    let mut phi = 0.0;
                    for s in 1..t {
                        let tb = tab.t_bar(s);
                        if tb == 0.0 {
                            continue;
                        }
                        let reach = (t - s) as i32;
                        for d1 in -reach..=reach {
                            for d2 in -(reach - d1.abs())..=(reach - d1.abs()) {
                                let q = rw_kernel_2d(t - s, (d1, d2));
                                if q == 0.0 {
                                    continue;
                                }
                                let zsite = (x1 - d1, x2 - d2);
                                if grid.locate(zsite).is_none() {
                                    continue;
                                }
                                let (p, iu, iv) = grid.locate(zsite).unwrap();
                                let sb = tab.s_bar_at(p, iu * grid.width(p) + iv);
                                phi += tb * sb * q;
                            }
                        }
                    }
                    norm += phi * phi;
                }
            }
            acc += v[(n - t) as usize] * norm;
        }
        let literal = sigma2 * acc / (beta_n * beta_n * (n as f64).powi(4));
        let dp = pair_v_exact_variance(&tab, sigma2, beta_n).unwrap();
        assert_relative_eq!(dp, literal, max_relative = 1e-12);
    }

    #[test]
    fn field_pairing_variance_agrees_with_monte_carlo() {
        let n = 32u32;
        let samples = 2000u64;
        let psi = TestFunction::default_bump();
        let grid = RotGrid::new(policy_radius(n, 6.0)).unwrap();
        let tab = PsiBarTable::build(&psi, n, grid);
        let sched = make_schedule(0.5, n, DisorderLaw::Gaussian).unwrap();
        let target = pair_v_exact_variance(&tab, sched.sigma_n2, sched.beta_n).unwrap();
        let mut xs = Vec::with_capacity(samples as usize);
        for s in 0..samples {
            let dom = PlaneDomain::new(n, grid).unwrap();
            let plane = DisorderPlane::new(SEED, s, dom, sched.clone()).unwrap();
            let obs = evolve_observables(&plane, &[&tab]).unwrap();
            xs.push(crate::polymer_sim::pair_v(&obs.per_psi[0], sched.beta_n));
        }
        let (v, se) = var_with_se(&xs);
        assert!(
            (v - target).abs() < 4.0 * se,
            "pairing variance {v} vs dp {target} (se {se})"
        );
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let plane = plane_for(9, 0.5, 0);
        assert!(matches!(
            chaos_eval_z(&plane, ChainDpConfig::enumeration()),
            Err(Error::Budget(_))
        ));
        let zero_k = ChainDpConfig {
            k_max: Some(0),
            ..ChainDpConfig::exact()
        };
        assert!(chaos_eval_z(&plane_for(4, 0.5, 0), zero_k).is_err());
        let trunc_dom = ChainDpConfig {
            k_max: Some(2),
            ..ChainDpConfig::exact()
        };
        assert!(xdom_eval(&plane_for(4, 0.5, 0), trunc_dom).is_err());
        let flat_cap = ChainDpConfig {
            cap: CapPolicy::Fixed(0),
            ..ChainDpConfig::exact()
        };
        assert!(xdom_eval(&plane_for(4, 0.5, 0), flat_cap).is_err());
    }

    #[test]
    fn killed_kernels_match_free_ones_in_a_wide_box() {
        let grid = RotGrid::new(30).unwrap();
        let mut memo = KernelMemo::new(&grid);
        for (m, x) in [(1u32, (0, 0)), (3, (1, 1)), (5, (2, -1))] {
            let k = memo.killed(m, x);
            let mut mass = 0.0;
            for &(y, w) in k.iter() {
                assert_relative_eq!(
                    w,
                    rw_kernel_2d(m, (y.0 - x.0, y.1 - x.1)),
                    max_relative = 1e-15
                );
                mass += w;
            }
            assert_relative_eq!(mass, 1.0, max_relative = 1e-14);
        }
        // a tight box loses mass
        let tight = RotGrid::new(2).unwrap();
        let mut memo = KernelMemo::new(&tight);
        let k = memo.killed(3, (0, 0));
        let mass: f64 = k.iter().map(|&(_, w)| w).sum();
        assert!(mass < 1.0);
    }

    #[test]
    fn moment_curves_validate_and_serialize() {
        let law = DisorderLaw::Gaussian;
        let curve = moment_curve_z(0.5, &law, &[1, 2, 4, 8]).unwrap();
        curve.validate().unwrap();
        // horizon-rescaled coupling makes the sweep dip at the smallest
        // horizons; the profile at fixed variance is the monotone object
        assert!(curve.points[0].value > curve.points[1].value);
        let prof = second_moment_z_profile(8, 0.5).unwrap();
        let prof_curve = MomentCurve {
            tag: "profile".into(),
            require_monotone: true,
            points: prof
                .iter()
                .enumerate()
                .map(|(h, &v)| MomentPoint {
                    n: h as u32,
                    value: v,
                    target: None,
                })
                .collect(),
        };
        prof_curve.validate().unwrap();
        let mut broken = prof_curve.clone();
        broken.points[3].value = broken.points[2].value - 1.0;
        assert!(broken.validate().is_err());
        let blocks = moment_curve_blocks(0.5, &law, 512, 8).unwrap();
        blocks.validate().unwrap();
        assert_eq!(blocks.points.len(), 8);
        let mut buf = Vec::new();
        blocks.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,value,target,tag\n"));
        assert_eq!(text.lines().count(), 9);
        assert!(text.contains("block-second-moment-m8-n512"));
    }
}
