//! Disorder environments: i.i.d. unit variates on space-time lattice sites,
//! the coupling schedule derived from a fixed effective coupling, and the
//! tilted-and-centered variables eta that drive the partition function.
//!
//! Reproducibility contract: a site variate is a pure function of
//! (master_seed, sample_index, site_index). The generator is ChaCha8 keyed by
//! a SplitMix64 expansion of the master seed, with sample_index as the stream
//! and the site index as the word position. Random access and sequential
//! slice fills therefore agree bit for bit.

use crate::grid::PlaneDomain;
use crate::walk_kernels::overlap_sum;
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Marginal law of a single disorder variate. Discrete tables must be
/// centered with unit variance; `validate` enforces this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DisorderLaw {
    Gaussian,
    Rademacher,
    DiscreteTable { values: Vec<f64>, probs: Vec<f64> },
}

impl DisorderLaw {
    pub fn validate(&self) -> Result<()> {
        if let DisorderLaw::DiscreteTable { values, probs } = self {
            if values.len() != probs.len() || values.len() < 2 {
                return Err(Error::Parameter(
                    "discrete law needs matching value/prob lists of length >= 2".into(),
                ));
            }
            if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
                return Err(Error::Parameter("discrete law probabilities must be positive".into()));
            }
            let mass: f64 = probs.iter().sum();
            let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
            let var: f64 = values.iter().zip(probs).map(|(v, p)| v * v * p).sum();
            if (mass - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!("discrete law mass {mass} != 1")));
            }
            if mean.abs() > 1e-12 {
                return Err(Error::Parameter(format!("discrete law mean {mean} != 0")));
            }
            if (var - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter(format!("discrete law variance {var} != 1")));
            }
        }
        Ok(())
    }

    /// Cumulant generating function log E[exp(t omega)], finite for all laws
    /// handled here.
    pub fn cgf(&self, t: f64) -> f64 {
        match self {
            DisorderLaw::Gaussian => 0.5 * t * t,
            DisorderLaw::Rademacher => {
                // log cosh t, overflow-safe for large |t|
                let a = t.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            DisorderLaw::DiscreteTable { values, probs } => {
                let m = values.iter().map(|v| v * t).fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v * t - m).exp())
                    .sum();
                m + s.ln()
            }
        }
    }
}

/// Per-horizon coupling constants. beta_n solves beta_hat^2 = beta_n^2 R_n,
/// lambda_n = cgf(beta_n), and sigma_n^2 = exp(cgf(2 beta_n) - 2 cgf(beta_n)) - 1
/// is the variance of eta.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingSchedule {
    pub beta_hat: f64,
    pub horizon: u32,
    pub law: DisorderLaw,
    pub beta_n: f64,
    pub lambda_n: f64,
    pub sigma_n2: f64,
    pub sigma_n: f64,
}

pub fn make_schedule(beta_hat: f64, horizon: u32, law: DisorderLaw) -> Result<CouplingSchedule> {
    if !(beta_hat > 0.0 && beta_hat < 1.0) {
        return Err(Error::Parameter(format!(
            "effective coupling must lie in (0,1), got {beta_hat}"
        )));
    }
    if horizon < 1 {
        return Err(Error::Parameter("horizon must be >= 1".into()));
    }
    law.validate()?;
    let r_n = overlap_sum(horizon).r(horizon);
    let beta_n = (beta_hat * beta_hat / r_n).sqrt();
    let lambda_n = law.cgf(beta_n);
    let sigma_n2 = (law.cgf(2.0 * beta_n) - 2.0 * lambda_n).exp() - 1.0;
    Ok(CouplingSchedule {
        beta_hat,
        horizon,
        law,
        beta_n,
        lambda_n,
        sigma_n2,
        sigma_n: sigma_n2.sqrt(),
    })
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_key(master_seed: u64) -> [u8; 32] {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Uniform in (0,1) from 53 high bits, offset so 0 and 1 are unreachable.
#[inline]
fn uniform_open(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / 9007199254740992.0) + (1.0 / 18014398509481984.0)
}

/// One realized disorder plane: horizon, spatial box, coupling constants,
/// and the keyed generator state.
pub struct DisorderPlane {
    pub domain: PlaneDomain,
    pub schedule: CouplingSchedule,
    master_seed: u64,
    key: [u8; 32],
    stream: u64,
    /// Discrete-law CDF, precomputed once.
    cdf: Option<Vec<f64>>,
}

impl DisorderPlane {
    pub fn new(
        master_seed: u64,
        sample_index: u64,
        domain: PlaneDomain,
        schedule: CouplingSchedule,
    ) -> Result<Self> {
        schedule.law.validate()?;
        let cdf = match &schedule.law {
            DisorderLaw::DiscreteTable { probs, .. } => {
                let mut acc = 0.0;
                Some(
                    probs
                        .iter()
                        .map(|p| {
                            acc += p;
                            acc
                        })
                        .collect(),
                )
            }
            _ => None,
        };
        Ok(DisorderPlane {
            domain,
            schedule,
            master_seed,
            key: expand_key(master_seed),
            stream: sample_index,
            cdf,
        })
    }

    pub fn seed_tag(&self) -> u64 {
        self.master_seed
    }

    pub fn sample_index(&self) -> u64 {
        self.stream
    }

    #[inline]
    fn draw_word(&self, site_index: u64) -> u64 {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.stream);
        rng.set_word_pos(2 * site_index as u128);
        rng.next_u64()
    }

    #[inline]
    fn omega_from_word(&self, h: u64) -> f64 {
        match &self.schedule.law {
            DisorderLaw::Gaussian => standard_normal_quantile(uniform_open(h)),
            DisorderLaw::Rademacher => {
                if h >> 63 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            DisorderLaw::DiscreteTable { values, .. } => {
                let u = uniform_open(h);
                let cdf = self.cdf.as_ref().unwrap();
                let i = cdf.partition_point(|&c| c < u).min(values.len() - 1);
                values[i]
            }
        }
    }

    #[inline]
    fn eta_from_omega(&self, omega: f64) -> f64 {
        let s = &self.schedule;
        if s.sigma_n == 0.0 {
            return 0.0;
        }
        (s.beta_n * omega - s.lambda_n).exp_m1() / s.sigma_n
    }

    fn site_index(&self, n: u32, z: (i32, i32)) -> Result<u64> {
        if n < 1 || n > self.domain.n {
            return Err(Error::OutOfDomain(format!("time {n} outside 1..={}", self.domain.n)));
        }
        let (p, iu, iv) = self
            .domain
            .grid
            .locate(z)
            .ok_or_else(|| Error::OutOfDomain(format!("site {z:?} outside box")))?;
        Ok(self.domain.site_index(n, p, iu, iv))
    }

    /// Raw variate at one site; pure in (seed, sample, site).
    pub fn omega_at(&self, n: u32, z: (i32, i32)) -> Result<f64> {
        Ok(self.omega_from_word(self.draw_word(self.site_index(n, z)?)))
    }

    /// Tilted-centered variate at one site.
    pub fn eta_at(&self, n: u32, z: (i32, i32)) -> Result<f64> {
        Ok(self.eta_from_omega(self.omega_from_word(self.draw_word(self.site_index(n, z)?))))
    }

    /// Fill one whole time slice (both parity sublattices, site-index order)
    /// with eta values. out.len() must equal grid.slice_sites().
    pub fn fill_slice_eta(&self, n: u32, out: &mut [f64]) -> Result<()> {
        self.fill_slice_with(n, out, |s, w| s.eta_from_omega(s.omega_from_word(w)))
    }

    /// Same walk order, raw variates.
    pub fn fill_slice_omega(&self, n: u32, out: &mut [f64]) -> Result<()> {
        self.fill_slice_with(n, out, |s, w| s.omega_from_word(w))
    }

    /// Fill only one parity sublattice of a slice (its sites are contiguous
    /// in the index layout). Bit-identical to the corresponding block of
    /// `fill_slice_eta`.
    pub fn fill_sublattice_eta(&self, n: u32, p: u8, out: &mut [f64]) -> Result<()> {
        let sites = self.domain.grid.sites(p);
        if out.len() != sites {
            return Err(Error::Parameter(format!(
                "sublattice buffer holds {} sites, expected {sites}",
                out.len()
            )));
        }
        if n < 1 || n > self.domain.n {
            return Err(Error::OutOfDomain(format!("time {n} outside 1..={}", self.domain.n)));
        }
        let first = self.domain.site_index(n, p, 0, 0);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.stream);
        rng.set_word_pos(2 * first as u128);
        for slot in out.iter_mut() {
            *slot = self.eta_from_omega(self.omega_from_word(rng.next_u64()));
        }
        Ok(())
    }

    fn fill_slice_with(
        &self,
        n: u32,
        out: &mut [f64],
        f: impl Fn(&Self, u64) -> f64,
    ) -> Result<()> {
        let sites = self.domain.grid.slice_sites();
        if out.len() != sites {
            return Err(Error::Parameter(format!(
                "slice buffer holds {} sites, expected {sites}",
                out.len()
            )));
        }
        if n < 1 || n > self.domain.n {
            return Err(Error::OutOfDomain(format!("time {n} outside 1..={}", self.domain.n)));
        }
        let first = self.domain.site_index(n, 0, 0, 0);
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.stream);
        rng.set_word_pos(2 * first as u128);
        for slot in out.iter_mut() {
            *slot = f(self, rng.next_u64());
        }
        Ok(())
    }
}

/// Standard normal quantile (Wichura's PPND16 rational approximations),
/// relative accuracy near 1e-16 across (0,1).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545_5e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_3e-2)
            * r
            + 2.965_605_718_285_048_9e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal CDF via erfc.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
