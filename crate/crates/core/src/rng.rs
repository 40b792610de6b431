//! Seeded random streams and heavy-tailed samplers.
//!
//! All randomness in the crate flows through [`RngStream`]: a (master seed,
//! stream id) pair that deterministically names one ChaCha8 stream. Substreams
//! are derived by hashing a label into the stream id, so parallel consumers
//! can draw independently without coordinating draw counts.
//!
//! Symmetric p-stable variates for p in [1, 2] use the Chambers-Mallows-Stuck
//! transform in the beta = 0 parameterization with characteristic function
//! exp(-|t|^p). Under that convention p = 1 is the standard Cauchy and p = 2
//! is a Gaussian with variance 2 (not 1).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PI: f64 = std::f64::consts::PI;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A named, reproducible random stream.
///
/// Streams with equal (master_seed, stream_id) yield identical draw
/// sequences. Distinct stream ids select distinct ChaCha8 counter streams
/// under the same key, which is exactly the cipher's multi-stream use case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        RngStream {
            master_seed,
            stream_id: 0,
        }
    }

    pub fn with_stream(master_seed: u64, stream_id: u64) -> Self {
        RngStream {
            master_seed,
            stream_id,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive a child stream by hashing `label` into this stream's id.
    /// Children with distinct labels get distinct ids (up to the negligible
    /// 64-bit hash collision probability), and the derivation is pure.
    pub fn substream(&self, label: u64) -> Self {
        let mut state = self
            .stream_id
            .wrapping_mul(0xA24B_AED4_963E_E407)
            .wrapping_add(label.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(0x6A09_E667_F3BC_C909);
        let id = splitmix64(&mut state);
        RngStream {
            master_seed: self.master_seed,
            stream_id: id,
        }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.master_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Validated parameter for the symmetric p-stable family, p in [1, 2].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    p: f64,
}

impl StableParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) || !p.is_finite() {
            return Err(Error::invalid("p", format!("{p} outside [1, 2]")));
        }
        Ok(StableParams { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Standard Cauchy via inverse CDF: tan(pi (u - 1/2)).
pub fn sample_cauchy(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    (PI * (u - 0.5)).tan()
}

/// Uniform +1/-1.
pub fn sample_sign(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Standard normal (variance 1), for Gaussian tail checks.
pub fn sample_gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Symmetric p-stable draw by the Chambers-Mallows-Stuck transform:
///
///   X = sin(p theta) / cos(theta)^{1/p} * (cos((1-p) theta) / W)^{(1-p)/p}
///
/// with theta uniform on (-pi/2, pi/2) and W standard exponential. At p = 1
/// the second factor's exponent vanishes and X = tan(theta), the Cauchy
/// inverse CDF; at p = 2 the formula collapses to 2 sin(theta) sqrt(W),
/// which is N(0, 2).
pub fn sample_pstable(params: StableParams, rng: &mut impl Rng) -> f64 {
    let p = params.p;
    if p == 1.0 {
        return sample_cauchy(rng);
    }
    let u: f64 = rng.random();
    let theta = PI * (u - 0.5);
    let w = -(1.0 - rng.random::<f64>()).ln(); // in [0, inf); 0 only if u hit 0 exactly
    let a = (p * theta).sin() / theta.cos().powf(1.0 / p);
    let b = (((1.0 - p) * theta).cos() / w).powf((1.0 - p) / p);
    a * b
}

/// Empirical CDF of `samples` evaluated at each grid point, with the
/// boundary convention F(t) = #{x_i <= t} / n.
pub fn empirical_cdf(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput {
            what: "empirical_cdf",
            reason: "no samples".into(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    Ok(grid
        .iter()
        .map(|&t| sorted.partition_point(|&x| x <= t) as f64 / n)
        .collect())
}

/// CDF of |X| for X symmetric p-stable, evaluated by quadrature over the
/// CMS representation: conditioning on theta > 0 (where X > 0),
///
///   F(t) = (2/pi) * Int_0^{pi/2} 1 - exp(-(t / g(theta))^{p/(p-1)}) dtheta,
///   g(theta) = sin(p theta) cos(theta)^{-1/p} cos((p-1) theta)^{(1-p)/p},
///
/// valid for p in (1, 2]. For p = 1 the Cauchy closed form
/// (2/pi) arctan(t) is used instead.
pub fn pstable_abs_cdf(params: StableParams, t: f64) -> f64 {
    let p = params.p;
    if t <= 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return 2.0 / PI * t.atan();
    }
    let q = p / (p - 1.0);
    let integrand = |theta: f64| -> f64 {
        if theta <= 0.0 {
            // g -> 0 so the inner probability -> 1
            return 1.0;
        }
        let g = (p * theta).sin()
            * theta.cos().powf(-1.0 / p)
            * ((p - 1.0) * theta).cos().powf((1.0 - p) / p);
        1.0 - (-(t / g).powf(q)).exp()
    };
    // Composite Simpson; the integrand is smooth on (0, pi/2) with finite
    // limits 1 and 0 at the endpoints.
    let n = 4096;
    let h = (PI / 2.0) / n as f64;
    let mut acc = integrand(0.0) + integrand(PI / 2.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(i as f64 * h);
    }
    (2.0 / PI) * (acc * h / 3.0)
}

/// Median of |X| for X symmetric p-stable. Used to calibrate the sketched
/// row norm estimator. p = 1 gives exactly 1 (Cauchy); general p is solved
/// by bisection on the quadrature CDF.
pub fn median_abs_pstable(params: StableParams) -> f64 {
    if params.p == 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (1e-3_f64, 1e3_f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if pstable_abs_cdf(params, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical, ks_statistic_cdf, ks_statistic_two_sample};

    fn draw<F: FnMut(&mut ChaCha8Rng) -> f64>(stream: RngStream, n: usize, mut f: F) -> Vec<f64> {
        let mut rng = stream.rng();
        (0..n).map(|_| f(&mut rng)).collect()
    }

    #[test]
    fn identical_streams_replay() {
        let a = draw(RngStream::with_stream(7, 3), 100, sample_cauchy);
        let b = draw(RngStream::with_stream(7, 3), 100, sample_cauchy);
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ() {
        let root = RngStream::new(7);
        let a = draw(root.substream(0), 100, sample_cauchy);
        let b = draw(root.substream(1), 100, sample_cauchy);
        assert_ne!(a, b);
        // distinct master seeds also differ
        let c = draw(RngStream::new(8).substream(0), 100, sample_cauchy);
        assert_ne!(a, c);
    }

    #[test]
    fn substream_labels_are_stable_and_distinct() {
        let root = RngStream::new(42);
        let ids: Vec<u64> = (0..1000).map(|k| root.substream(k).stream_id()).collect();
        let mut dedup = ids.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), ids.len());
        assert_eq!(root.substream(5), root.substream(5));
    }

    #[test]
    fn stable_params_rejects_out_of_range() {
        assert!(StableParams::new(0.5).is_err());
        assert!(StableParams::new(2.5).is_err());
        assert!(StableParams::new(f64::NAN).is_err());
        assert!(StableParams::new(1.0).is_ok());
        assert!(StableParams::new(2.0).is_ok());
    }

    #[test]
    fn cauchy_matches_closed_form_cdf() {
        let xs = draw(RngStream::new(11).substream(1), 100_000, sample_cauchy);
        let d = ks_statistic_cdf(&xs, |t| 0.5 + t.atan() / PI);
        assert!(d < ks_critical(0.01, xs.len(), None), "KS d = {d}");
    }

    #[test]
    fn pstable_at_p1_is_cauchy() {
        let params = StableParams::new(1.0).unwrap();
        let xs = draw(RngStream::new(3).substream(1), 100_000, |r| {
            sample_pstable(params, r)
        });
        let ys = draw(RngStream::new(3).substream(2), 100_000, sample_cauchy);
        let d = ks_statistic_two_sample(&xs, &ys);
        assert!(d < ks_critical(0.01, xs.len(), Some(ys.len())), "KS d = {d}");
    }

    #[test]
    fn pstable_at_p2_is_gaussian_variance_two() {
        let params = StableParams::new(2.0).unwrap();
        let xs = draw(RngStream::new(5).substream(1), 100_000, |r| {
            sample_pstable(params, r)
        });
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 2.0).abs() < 0.05, "variance = {var}");
        let ys = draw(RngStream::new(5).substream(2), 100_000, |r| {
            std::f64::consts::SQRT_2 * sample_gaussian(r)
        });
        let d = ks_statistic_two_sample(&xs, &ys);
        assert!(d < ks_critical(0.01, xs.len(), Some(ys.len())), "KS d = {d}");
    }

    #[test]
    fn stability_closure_under_linear_combination() {
        // a X1 + b X2 has the law of (a^p + b^p)^{1/p} X for a, b >= 0
        let p = 1.5;
        let params = StableParams::new(p).unwrap();
        let (a, b) = (3.0_f64, 4.0_f64);
        let scale = (a.powf(p) + b.powf(p)).powf(1.0 / p);
        let root = RngStream::new(17);
        let combo = {
            let mut r1 = root.substream(1).rng();
            let mut r2 = root.substream(2).rng();
            (0..100_000)
                .map(|_| a * sample_pstable(params, &mut r1) + b * sample_pstable(params, &mut r2))
                .collect::<Vec<_>>()
        };
        let scaled = draw(root.substream(3), 100_000, |r| {
            scale * sample_pstable(params, r)
        });
        let d = ks_statistic_two_sample(&combo, &scaled);
        assert!(
            d < ks_critical(0.01, combo.len(), Some(scaled.len())),
            "KS d = {d}"
        );
    }

    #[test]
    fn tail_constant_matches_stable_asymptotics() {
        // Pr[X > x] -> c_p x^{-p} with c_p = sin(pi p / 2) Gamma(p) / pi.
        // Frozen constant for p = 1.5: sin(3 pi / 4) = sqrt(2)/2,
        // Gamma(1.5) = sqrt(pi)/2 = 0.8862269254527580, giving c = 0.1994711.
        let c15 = 0.199_471_140_200_716_35;
        let params = StableParams::new(1.5).unwrap();
        let n = 1_000_000;
        let xs = draw(RngStream::new(23).substream(1), n, |r| {
            sample_pstable(params, r)
        });
        let x0 = 10.0;
        let tail = xs.iter().filter(|&&x| x > x0).count() as f64 / n as f64;
        let predicted = c15 * x0.powf(-1.5);
        assert!(
            (tail - predicted).abs() / predicted < 0.10,
            "tail = {tail}, predicted = {predicted}"
        );
        // p = 1 cross-check: c_1 = 1/pi; the exact Cauchy tail at x = 10 is
        // atan(1/10)/pi, which differs from (1/pi)/10 by (0.1 - atan 0.1)/pi
        let c1 = 1.0 / PI;
        assert!((c1 * 0.1 - (0.1_f64).atan() / PI).abs() < 5e-4);
    }

    #[test]
    fn abs_cdf_quadrature_matches_closed_forms() {
        // p = 2: |X| with X ~ N(0,2) has median sqrt(2) * 0.6744897501960817
        let p2 = StableParams::new(2.0).unwrap();
        let m2 = median_abs_pstable(p2);
        assert!((m2 - 0.953_872_748_6).abs() < 1e-6, "m2 = {m2}");
        // p = 1: exact Cauchy median
        let p1 = StableParams::new(1.0).unwrap();
        assert_eq!(median_abs_pstable(p1), 1.0);
        // CDF is a proper CDF at a middle p
        let p15 = StableParams::new(1.5).unwrap();
        assert!(pstable_abs_cdf(p15, 0.0) == 0.0);
        assert!(pstable_abs_cdf(p15, 1e6) > 0.999_9);
        let med = median_abs_pstable(p15);
        assert!((pstable_abs_cdf(p15, med) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn quadrature_median_matches_empirical_median() {
        for &p in &[1.25, 1.5, 1.75] {
            let params = StableParams::new(p).unwrap();
            let mut xs = draw(RngStream::new(31).substream(p.to_bits()), 1_000_000, |r| {
                sample_pstable(params, r).abs()
            });
            xs.sort_by(|a, b| a.total_cmp(b));
            let emp = 0.5 * (xs[499_999] + xs[500_000]);
            let quad = median_abs_pstable(params);
            assert!(
                (emp - quad).abs() < 5e-3,
                "p = {p}: empirical {emp} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn sign_sampler_is_balanced() {
        let xs = draw(RngStream::new(9).substream(1), 100_000, sample_sign);
        assert!(xs.iter().all(|&x| x == 1.0 || x == -1.0));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn empirical_cdf_small_case() {
        let cdf = empirical_cdf(&[1.0, 2.0, 3.0], &[0.5, 1.0, 2.5, 3.0]).unwrap();
        assert_eq!(cdf, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert!(empirical_cdf(&[], &[0.0]).is_err());
    }
}
