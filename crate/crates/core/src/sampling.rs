//! Randomness for the estimator: reproducible counter-style RNG streams,
//! truncation-depth laws, and ordered-simplex node samplers.
//!
//! Truncation depths decide how many Neumann-series applications a replicate
//! evaluates. Three laws cover the three kernel families:
//!
//! * Poisson with mean `rate` — `P(N = n) = e^{-rate} rate^n / n!`,
//! * geometric with ratio `r` — `P(N = n) = (1 - r) r^n`,
//! * discrete Mittag-Leffler with parameters `(beta, mu)` —
//!   `P(N = n) = (mu^n / Gamma(1 + beta n)) / E_beta(mu)`.
//!
//! At `beta = 1` the Mittag-Leffler law coincides with Poisson(`mu`).
//!
//! Inner nodes live on the open ordered simplex
//! `1 > s_1 > s_2 > ... > s_n > 0`. [`sample_simplex_uniform`] draws the
//! uniform law (sorted independent uniforms); [`sample_polygonal_beta`]
//! draws the gap-singular density proportional to
//! `(1 - s_1)^{-alpha} (s_1 - s_2)^{-alpha} ... (s_{n-1} - s_n)^{-alpha}`,
//! whose normalizer over the simplex is
//! [`polygonal_beta_mass`](crate::specfun::polygonal_beta_mass)`(1 - alpha, n)`.
//! The construction is the Dirichlet gap representation: `n` independent
//! `Gamma(1 - alpha, 1)` variates plus one `Gamma(1, 1)` variate, normalized
//! to gap lengths. At `alpha = 0` it reduces exactly to the uniform law.
//!
//! All samplers invert a single leading uniform where a depth is drawn, so
//! depth draws are monotone in the underlying uniform; the field estimator
//! exploits this for common-random-number coupling across grid points.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::specfun::{ln_gamma, SeriesTolerance};

/// Cap on truncation-law support tables and scans. Desk-scale laws stay far
/// below this; hitting it means the law parameters are out of scope.
const MAX_SUPPORT: usize = 100_000;

/// Retry cap for tie rejection in simplex draws (ties have probability zero;
/// repeated hits indicate a degenerate parameterization).
const MAX_REDRAWS: usize = 1_000;

// ---------------------------------------------------------------------------
// RNG streams
// ---------------------------------------------------------------------------

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are statistically
/// independent and can be consumed on any worker without coordination; the
/// estimator gives outer replicate `i` the stream id `i`. Backed by ChaCha8,
/// whose output is identical on every platform.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Open the stream `(seed, stream_id)` at its beginning.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        for (chunk, byte) in key.chunks_exact_mut(8).zip(std::iter::repeat(seed.to_le_bytes())) {
            chunk.copy_from_slice(&byte);
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Seed shared by every stream of this run.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream index within the run.
    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Next uniform variate in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

// ---------------------------------------------------------------------------
// Truncation laws
// ---------------------------------------------------------------------------

/// Distribution of the random Neumann truncation depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationLaw {
    /// Poisson with mean `rate >= 0`; `rate = 0` degenerates to depth 0.
    Poisson { rate: f64 },
    /// Geometric on `{0, 1, ...}` with ratio in `[0, 1)`.
    Geometric { ratio: f64 },
    /// Discrete Mittag-Leffler with `beta` in `(0, 1]` and `mu >= 0`.
    MittagLeffler { beta: f64, mu: f64 },
}

impl TruncationLaw {
    /// Short family name for diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            TruncationLaw::Poisson { .. } => "poisson",
            TruncationLaw::Geometric { .. } => "geometric",
            TruncationLaw::MittagLeffler { .. } => "mittag-leffler",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TruncationLaw::Poisson { rate } => {
                if !(rate >= 0.0) || !rate.is_finite() {
                    return Err(Error::domain(
                        "truncation_law",
                        format!("Poisson rate must be nonnegative and finite, got {rate}"),
                    ));
                }
            }
            TruncationLaw::Geometric { ratio } => {
                if !(0.0..1.0).contains(&ratio) {
                    return Err(Error::domain(
                        "truncation_law",
                        format!("geometric ratio must lie in [0, 1), got {ratio}"),
                    ));
                }
            }
            TruncationLaw::MittagLeffler { beta, mu } => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::domain(
                        "truncation_law",
                        format!("Mittag-Leffler beta must lie in (0, 1], got {beta}"),
                    ));
                }
                if !(mu >= 0.0) || !mu.is_finite() {
                    return Err(Error::domain(
                        "truncation_law",
                        format!("Mittag-Leffler mu must be nonnegative and finite, got {mu}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Probability mass at depth `n`, evaluated in log space so deep tail
    /// values underflow gracefully instead of overflowing intermediates.
    pub fn pmf(&self, n: u32) -> Result<f64> {
        self.validate()?;
        let nf = n as f64;
        match *self {
            TruncationLaw::Poisson { rate } => {
                if rate == 0.0 {
                    return Ok(if n == 0 { 1.0 } else { 0.0 });
                }
                Ok((-rate + nf * rate.ln() - ln_gamma(nf + 1.0)?).exp())
            }
            TruncationLaw::Geometric { ratio } => {
                if ratio == 0.0 {
                    return Ok(if n == 0 { 1.0 } else { 0.0 });
                }
                Ok(((1.0 - ratio).ln() + nf * ratio.ln()).exp())
            }
            TruncationLaw::MittagLeffler { beta, mu } => {
                if mu == 0.0 {
                    return Ok(if n == 0 { 1.0 } else { 0.0 });
                }
                let norm = crate::specfun::mittag_leffler(beta, mu, &SeriesTolerance::default())?;
                Ok((nf * mu.ln() - ln_gamma(1.0 + beta * nf)?).exp() / norm)
            }
        }
    }

    /// Smallest `n_max` such that the tail mass beyond `n_max` is below
    /// `tail_tol`.
    pub fn tail_cutoff(&self, tail_tol: f64) -> Result<u32> {
        self.validate()?;
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(Error::domain(
                "tail_cutoff",
                format!("tail tolerance must lie in (0, 1), got {tail_tol}"),
            ));
        }
        match *self {
            TruncationLaw::Poisson { rate } => {
                if rate == 0.0 {
                    return Ok(0);
                }
                let mut p = (-rate).exp();
                let mut tail = 1.0 - p;
                let mut n = 0u32;
                while tail >= tail_tol {
                    n += 1;
                    if n as usize > MAX_SUPPORT {
                        return Err(Error::TableOverflow {
                            law: "poisson",
                            tail_tol,
                            cap: MAX_SUPPORT,
                        });
                    }
                    p *= rate / n as f64;
                    tail -= p;
                }
                Ok(n)
            }
            TruncationLaw::Geometric { ratio } => {
                if ratio == 0.0 {
                    return Ok(0);
                }
                // Tail beyond n is exactly ratio^(n+1).
                let mut tail = ratio;
                let mut n = 0u32;
                while tail >= tail_tol {
                    n += 1;
                    if n as usize > MAX_SUPPORT {
                        return Err(Error::TableOverflow {
                            law: "geometric",
                            tail_tol,
                            cap: MAX_SUPPORT,
                        });
                    }
                    tail *= ratio;
                }
                Ok(n)
            }
            TruncationLaw::MittagLeffler { .. } => {
                let pmf = self.pmf_table()?;
                let mut tail = 1.0;
                for (n, p) in pmf.iter().enumerate() {
                    tail -= p;
                    if tail < tail_tol {
                        return Ok(n as u32);
                    }
                }
                Err(Error::TableOverflow {
                    law: "mittag-leffler",
                    tail_tol,
                    cap: pmf.len(),
                })
            }
        }
    }

    /// Normalized pmf table for the Mittag-Leffler law, extended until the
    /// residual mass is negligible (relative weight below 1e-18). The table
    /// is normalized by its own total, so it sums to 1 up to rounding.
    fn pmf_table(&self) -> Result<Vec<f64>> {
        let TruncationLaw::MittagLeffler { beta, mu } = *self else {
            unreachable!("pmf_table is only used for the Mittag-Leffler law");
        };
        if mu == 0.0 {
            return Ok(vec![1.0]);
        }
        let ln_mu = mu.ln();
        let mut weights: Vec<f64> = Vec::with_capacity(64);
        let mut total = 0.0f64;
        let mut prev = f64::INFINITY;
        for n in 0..MAX_SUPPORT {
            let w = (n as f64 * ln_mu - ln_gamma(1.0 + beta * n as f64)?).exp();
            total += w;
            weights.push(w);
            if w <= prev && w < 1e-18 * total {
                for w in &mut weights {
                    *w /= total;
                }
                return Ok(weights);
            }
            prev = w;
        }
        Err(Error::TableOverflow {
            law: "mittag-leffler",
            tail_tol: 1e-18,
            cap: MAX_SUPPORT,
        })
    }
}

/// A truncation law prepared for repeated sampling.
///
/// Preparation precomputes whatever the law needs (the Mittag-Leffler law
/// builds its cumulative table once); each draw then consumes exactly one
/// uniform and inverts it through the CDF. [`TruncationSampler::invert`] is
/// monotone nondecreasing in the uniform for every law.
#[derive(Debug, Clone)]
pub struct TruncationSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Degenerate,
    Poisson { rate: f64 },
    Geometric { ln_ratio: f64 },
    MittagLeffler { cdf: Vec<f64> },
}

impl TruncationSampler {
    /// Prepare `law` for sampling.
    pub fn new(law: &TruncationLaw) -> Result<Self> {
        law.validate()?;
        let kind = match *law {
            TruncationLaw::Poisson { rate } if rate == 0.0 => SamplerKind::Degenerate,
            TruncationLaw::Geometric { ratio } if ratio == 0.0 => SamplerKind::Degenerate,
            TruncationLaw::MittagLeffler { mu, .. } if mu == 0.0 => SamplerKind::Degenerate,
            TruncationLaw::Poisson { rate } => SamplerKind::Poisson { rate },
            TruncationLaw::Geometric { ratio } => SamplerKind::Geometric {
                ln_ratio: ratio.ln(),
            },
            TruncationLaw::MittagLeffler { .. } => {
                let pmf = law.pmf_table()?;
                let mut cdf = Vec::with_capacity(pmf.len());
                let mut acc = 0.0;
                for p in pmf {
                    acc += p;
                    cdf.push(acc);
                }
                SamplerKind::MittagLeffler { cdf }
            }
        };
        Ok(TruncationSampler { kind })
    }

    /// Map a uniform variate in `[0, 1)` to a depth via CDF inversion.
    pub fn invert(&self, u: f64) -> u32 {
        debug_assert!((0.0..1.0).contains(&u));
        match &self.kind {
            SamplerKind::Degenerate => 0,
            SamplerKind::Poisson { rate } => {
                let mut p = (-rate).exp();
                let mut cum = p;
                let mut n = 0u32;
                while u >= cum && p > 0.0 && (n as usize) < MAX_SUPPORT {
                    n += 1;
                    p *= rate / n as f64;
                    cum += p;
                }
                n
            }
            SamplerKind::Geometric { ln_ratio } => {
                // P(N >= k) = ratio^k, so N = floor(ln(1 - u) / ln ratio).
                let n = ((1.0 - u).ln() / ln_ratio).floor();
                if n >= MAX_SUPPORT as f64 {
                    MAX_SUPPORT as u32
                } else {
                    n as u32
                }
            }
            SamplerKind::MittagLeffler { cdf } => {
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u32
            }
        }
    }

    /// Draw one depth, consuming a single uniform from `rng`.
    pub fn sample(&self, rng: &mut RngStream) -> u32 {
        self.invert(rng.uniform())
    }
}

/// Draw one truncation depth from `law`.
///
/// Convenience wrapper over [`TruncationSampler`]; prefer preparing the
/// sampler once when drawing in a loop (the Mittag-Leffler table build is
/// not free).
pub fn sample_truncation(law: &TruncationLaw, rng: &mut RngStream) -> Result<u32> {
    Ok(TruncationSampler::new(law)?.sample(rng))
}

// ---------------------------------------------------------------------------
// Simplex points
// ---------------------------------------------------------------------------

/// A point of the open ordered simplex: coordinates strictly between 0 and 1
/// in strictly decreasing order. Dimension 0 is the empty point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validate and wrap `coords`.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if !is_valid_simplex(&coords) {
            return Err(Error::domain(
                "simplex_point",
                "coordinates must be strictly decreasing within (0, 1)".to_string(),
            ));
        }
        Ok(SimplexPoint { coords })
    }

    /// The empty (dimension-0) point.
    pub fn empty() -> Self {
        SimplexPoint { coords: Vec::new() }
    }

    /// Number of coordinates.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Coordinates in decreasing order.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

fn is_valid_simplex(coords: &[f64]) -> bool {
    let mut upper = 1.0f64;
    for &c in coords {
        if !(c > 0.0 && c < upper) {
            return false;
        }
        upper = c;
    }
    true
}

/// Uniform law on the ordered simplex of dimension `n`: `n` independent
/// uniforms sorted into decreasing order. Ties and boundary hits (events of
/// probability zero) are resolved by redrawing the whole vector.
pub fn sample_simplex_uniform(n: usize, rng: &mut RngStream) -> Result<SimplexPoint> {
    if n == 0 {
        return Ok(SimplexPoint::empty());
    }
    let mut coords = vec![0.0f64; n];
    for _ in 0..MAX_REDRAWS {
        for c in coords.iter_mut() {
            *c = rng.uniform();
        }
        coords.sort_unstable_by(|a, b| b.partial_cmp(a).expect("uniforms are never NaN"));
        if is_valid_simplex(&coords) {
            debug_assert!(coords.windows(2).all(|w| w[0] > w[1]));
            return Ok(SimplexPoint { coords });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_REDRAWS,
    })
}

/// Gap-singular law on the ordered simplex of dimension `n`, with density
/// proportional to the product of the successive gaps
/// `(1 - s_1), (s_1 - s_2), ..., (s_{n-1} - s_n)` each raised to `-alpha`,
/// for `alpha` in `[0, 1)`.
///
/// Construction: the gap vector of the point (including the unconstrained
/// last coordinate `s_n` itself) is Dirichlet-distributed with `n`
/// parameters `1 - alpha` and a final parameter 1, realized by normalizing
/// `n` independent `Gamma(1 - alpha, 1)` variates and one `Gamma(1, 1)`
/// variate. At `alpha = 0` this is the uniform simplex law.
pub fn sample_polygonal_beta(alpha: f64, n: usize, rng: &mut RngStream) -> Result<SimplexPoint> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::domain(
            "sample_polygonal_beta",
            format!("alpha must lie in [0, 1), got {alpha}"),
        ));
    }
    if n == 0 {
        return Ok(SimplexPoint::empty());
    }
    let beta = 1.0 - alpha;
    let gap_gamma = Gamma::new(beta, 1.0)
        .map_err(|e| Error::domain("sample_polygonal_beta", format!("gamma setup failed: {e}")))?;
    let tail_gamma = Gamma::new(1.0, 1.0)
        .map_err(|e| Error::domain("sample_polygonal_beta", format!("gamma setup failed: {e}")))?;

    let mut coords = vec![0.0f64; n];
    for _ in 0..MAX_REDRAWS {
        let mut gaps = Vec::with_capacity(n + 1);
        let mut total = 0.0f64;
        for _ in 0..n {
            let g: f64 = gap_gamma.sample(rng);
            total += g;
            gaps.push(g);
        }
        let last: f64 = tail_gamma.sample(rng);
        total += last;
        if !(total > 0.0) {
            continue;
        }
        let mut prev = 1.0f64;
        for (c, g) in coords.iter_mut().zip(&gaps) {
            prev -= g / total;
            *c = prev;
        }
        if is_valid_simplex(&coords) {
            debug_assert!(coords.windows(2).all(|w| w[0] > w[1]));
            return Ok(SimplexPoint {
                coords: coords.clone(),
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_REDRAWS,
    })
}
