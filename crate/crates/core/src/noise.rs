//! Deterministic noise sources for particle simulation.
//!
//! All randomness flows through [`RngStream`], a counter-based generator: a
//! draw is a pure function of `(seed, stream_id, counter)`, so giving every
//! particle (or coupled pair) its own stream makes simulation output bitwise
//! independent of thread count and evaluation order. The mixing function is
//! the splitmix64 finalizer over an affine counter sequence.
//!
//! Subordinator increments use the Kanter representation of one-sided
//! β-stable variables with β = α/2 and the plain Laplace-exponent
//! normalization `E exp(-λ S_t) = exp(-t λ^{α/2})` (see
//! [`crate::SUBORDINATOR_CONVENTION`]). Self-similarity then reads
//! `S_h =law= h^{2/α} S_1`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const STREAM_SALT: u64 = 0x1656_67b1_9e37_79f9;

#[inline]
fn splitmix_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based random stream addressed by `(seed, stream_id)`.
///
/// Identical `(seed, stream_id)` always reproduce the identical sequence,
/// regardless of how draws from *other* streams are interleaved. The counter
/// advances by one per 64-bit draw, so a stream's state is fully described by
/// three integers (useful for exact run continuation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    #[serde(skip, default)]
    key: u64,
}

impl RngStream {
    /// New stream at counter zero.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut s = RngStream { seed, stream_id, counter: 0, key: 0 };
        s.rekey();
        s
    }

    /// Resume a stream at an explicit counter position.
    pub fn with_counter(seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut s = Self::new(seed, stream_id);
        s.counter = counter;
        s
    }

    fn rekey(&mut self) {
        self.key = splitmix_mix(self.seed ^ splitmix_mix(self.stream_id ^ STREAM_SALT));
    }

    /// Restore the derived key after deserialization.
    pub fn reseed_after_deserialize(&mut self) {
        self.rekey();
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next raw 64-bit word.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        splitmix_mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform draw in the open interval (0, 1): safe under `ln`.
    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / 9_007_199_254_740_992.0; // 2^-53
        ((self.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    /// Standard exponential draw.
    #[inline]
    pub fn exponential(&mut self) -> f64 {
        -self.uniform_open01().ln()
    }

    /// One standard normal draw (Box–Muller; consumes two uniforms).
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let (z, _) = self.normal_pair();
        z
    }

    /// A pair of independent standard normals from one Box–Muller transform.
    #[inline]
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open01();
        let u2 = self.uniform_open01();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// Fill `out` with independent standard normals.
    ///
    /// Uniform consumption is `2 * ceil(out.len() / 2)` draws, independent of
    /// content, so stream positions stay predictable.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let Some(last) = chunks.into_remainder().first_mut() {
            let (a, _) = self.normal_pair();
            *last = a;
        }
    }
}

/// Parameters of the rotationally invariant α-stable driving noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    /// Stability index of the jump noise, in (0, 2); the subordinator index is α/2.
    pub stable_alpha: f64,
    /// Normalization convention for the subordinator Laplace exponent.
    pub normalization: Normalization,
}

/// Subordinator normalization conventions. Only the plain Laplace-exponent
/// convention is defined; the enum exists so reports can state it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `E exp(-λ S_t) = exp(-t λ^{α/2})`.
    LaplaceExponentPlain,
}

impl StableParams {
    /// Validated constructor; requires `stable_alpha` in the open interval (0, 2).
    pub fn new(stable_alpha: f64) -> Result<Self> {
        if !(stable_alpha.is_finite() && 0.0 < stable_alpha && stable_alpha < 2.0) {
            return Err(CoreError::Parameter(format!(
                "stable_alpha must lie in (0, 2), got {stable_alpha}"
            )));
        }
        Ok(StableParams { stable_alpha, normalization: Normalization::LaplaceExponentPlain })
    }

    /// Subordinator index β = α/2 ∈ (0, 1).
    pub fn beta(&self) -> f64 {
        0.5 * self.stable_alpha
    }
}

/// `n × d` Gaussian increments with variance `h` per entry, returned row-major
/// (draw `i` occupies `out[i*d .. (i+1)*d]`).
pub fn gaussian_increments(stream: &mut RngStream, n: usize, d: usize, h: f64) -> Result<Vec<f64>> {
    if n == 0 || d == 0 {
        return Err(CoreError::Shape(format!("need n >= 1 and d >= 1, got n = {n}, d = {d}")));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(CoreError::Parameter(format!("step variance h must be positive, got {h}")));
    }
    let mut out = vec![0.0; n * d];
    stream.fill_standard_normal(&mut out);
    let s = h.sqrt();
    for v in &mut out {
        *v *= s;
    }
    Ok(out)
}

/// One increment of the α/2-stable subordinator over a time step `h`.
///
/// Sampling uses the Kanter representation: with `β = α/2`, `U ~ Unif(0, π)`,
/// `W ~ Exp(1)`,
///
/// ```text
///   S_1 = [sin(βU) / sin(U)^{1/β}] · [sin((1-β)U) / W]^{(1-β)/β},
/// ```
///
/// and the increment over `h` is `h^{1/β} S_1` by self-similarity. Always
/// strictly positive. Consumes exactly two uniforms.
pub fn positive_stable_increment(
    stream: &mut RngStream,
    params: &StableParams,
    h: f64,
) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(CoreError::Parameter(format!("time step h must be positive, got {h}")));
    }
    let beta = params.beta();
    let u = std::f64::consts::PI * stream.uniform_open01();
    let w = stream.exponential();
    let s1 = (beta * u).sin() / u.sin().powf(1.0 / beta)
        * (((1.0 - beta) * u).sin() / w).powf((1.0 - beta) / beta);
    Ok(h.powf(1.0 / beta) * s1)
}

/// Gaussian vector with conditional covariance `delta_s · I_d`, the increment
/// of a subordinated Brownian motion given the subordinator increment.
pub fn subordinated_gaussian(stream: &mut RngStream, delta_s: f64, d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(CoreError::Shape("need d >= 1".into()));
    }
    if !(delta_s.is_finite() && delta_s >= 0.0) {
        return Err(CoreError::Parameter(format!(
            "subordinator increment must be nonnegative, got {delta_s}"
        )));
    }
    let mut out = vec![0.0; d];
    stream.fill_standard_normal(&mut out);
    let s = delta_s.sqrt();
    for v in &mut out {
        *v *= s;
    }
    Ok(out)
}

/// Householder reflection `v - 2⟨u, v⟩u` across the hyperplane orthogonal to
/// the unit vector `u`. Errors if `u` is not unit-norm to within 1e-12.
pub fn reflect(increment: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if increment.len() != u.len() {
        return Err(CoreError::Dimension(format!(
            "increment has dim {}, axis has dim {}",
            increment.len(),
            u.len()
        )));
    }
    let norm2: f64 = u.iter().map(|x| x * x).sum();
    if (norm2.sqrt() - 1.0).abs() > 1e-12 {
        return Err(CoreError::Normalization(format!(
            "reflection axis must be unit-norm, |u| = {}",
            norm2.sqrt()
        )));
    }
    let dot: f64 = increment.iter().zip(u).map(|(a, b)| a * b).sum();
    Ok(increment.iter().zip(u).map(|(v, ui)| v - 2.0 * dot * ui).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn identical_seed_and_stream_reproduce_sequences() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_are_independent_of_interleaving() {
        // Draw from two streams alternately and compare against drawing from
        // each in isolation: per-stream sequences must be identical.
        let mut s0 = RngStream::new(9, 0);
        let mut s1 = RngStream::new(9, 1);
        let mut interleaved0 = Vec::new();
        let mut interleaved1 = Vec::new();
        for _ in 0..500 {
            interleaved0.push(s0.next_u64());
            interleaved1.push(s1.next_u64());
            interleaved1.push(s1.next_u64());
        }
        let mut t0 = RngStream::new(9, 0);
        let mut t1 = RngStream::new(9, 1);
        let solo0: Vec<u64> = (0..500).map(|_| t0.next_u64()).collect();
        let solo1: Vec<u64> = (0..1000).map(|_| t1.next_u64()).collect();
        assert_eq!(interleaved0, solo0);
        assert_eq!(interleaved1, solo1);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn counter_resume_matches_continuous_draws() {
        let mut a = RngStream::new(5, 3);
        for _ in 0..37 {
            a.next_u64();
        }
        let mut b = RngStream::with_counter(5, 3, a.counter());
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniforms_lie_in_open_unit_interval() {
        let mut s = RngStream::new(1, 1);
        for _ in 0..100_000 {
            let u = s.uniform_open01();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn gaussian_increments_have_mean_zero_and_variance_h() {
        let mut s = RngStream::new(20_240_101, 0);
        let n = 1_000_000;
        let h = 1e-8;
        let z = gaussian_increments(&mut s, n, 1, h).unwrap();
        let (m, v) = mean_and_var(&z);
        let nf = n as f64;
        // mean: 3 standard errors of sqrt(h/n); variance: 3 of h*sqrt(2/n).
        assert!(m.abs() <= 3.0 * (h / nf).sqrt(), "mean {m} too large");
        assert!((v - h).abs() <= 3.0 * h * (2.0 / nf).sqrt(), "variance {v} vs {h}");
    }

    #[test]
    fn gaussian_increments_validate_inputs() {
        let mut s = RngStream::new(0, 0);
        assert!(matches!(gaussian_increments(&mut s, 0, 1, 0.1), Err(CoreError::Shape(_))));
        assert!(matches!(gaussian_increments(&mut s, 1, 0, 0.1), Err(CoreError::Shape(_))));
        assert!(matches!(gaussian_increments(&mut s, 1, 1, 0.0), Err(CoreError::Parameter(_))));
        assert!(matches!(gaussian_increments(&mut s, 1, 1, -1.0), Err(CoreError::Parameter(_))));
    }

    #[test]
    fn normal_tail_frequency_is_plausible() {
        let mut s = RngStream::new(77, 0);
        let n = 200_000;
        let mut z = vec![0.0; n];
        s.fill_standard_normal(&mut z);
        let tail = z.iter().filter(|x| x.abs() > 1.959_964).count() as f64 / n as f64;
        // P(|Z| > 1.96) = 0.05; binomial 3σ band at n = 2e5 is ±0.00146.
        assert!((tail - 0.05).abs() < 0.0015, "two-sided 5% tail came out {tail}");
    }

    #[test]
    fn stable_increments_are_strictly_positive() {
        let mut s = RngStream::new(3, 3);
        let p = StableParams::new(1.5).unwrap();
        for _ in 0..100_000 {
            let ds = positive_stable_increment(&mut s, &p, 1e-3).unwrap();
            assert!(ds > 0.0 && ds.is_finite());
        }
    }

    #[test]
    fn stable_laplace_transform_at_unit_rate() {
        // E exp(-S_1) = exp(-1^{α/2}) = e^{-1} under the plain convention.
        let mut s = RngStream::new(314_159, 0);
        let p = StableParams::new(1.5).unwrap();
        let n = 1_000_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| (-positive_stable_increment(&mut s, &p, 1.0).unwrap()).exp())
            .collect();
        let (m, v) = mean_and_var(&vals);
        let target = (-1.0f64).exp();
        let se = (v / n as f64).sqrt();
        assert!(
            (m - target).abs() <= 3.0 * se,
            "Laplace transform {m} vs {target} (3se = {})",
            3.0 * se
        );
    }

    /// Two-sample Kolmogorov–Smirnov p-value (asymptotic Kolmogorov law).
    fn ks2_pvalue(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < n && j < m {
            let x = a[i].min(b[j]);
            while i < n && a[i] <= x {
                i += 1;
            }
            while j < m && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
            p += term;
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn stable_self_similarity_in_law() {
        // S_h =law= h^{2/α} S_1. Compare the two samples by a KS test.
        let p = StableParams::new(1.5).unwrap();
        let h = 0.3f64;
        let scale = h.powf(2.0 / p.stable_alpha);
        let mut s1 = RngStream::new(2024, 1);
        let mut s2 = RngStream::new(2024, 2);
        let n = 50_000;
        let direct: Vec<f64> =
            (0..n).map(|_| positive_stable_increment(&mut s1, &p, h).unwrap()).collect();
        let scaled: Vec<f64> = (0..n)
            .map(|_| scale * positive_stable_increment(&mut s2, &p, 1.0).unwrap())
            .collect();
        let pv = ks2_pvalue(direct, scaled);
        assert!(pv > 0.01, "self-similarity KS p-value {pv}");
    }

    #[test]
    fn stable_disjoint_increments_uncorrelated() {
        // Consecutive increments from one stream, raw sample correlation.
        let p = StableParams::new(1.5).unwrap();
        let mut s = RngStream::new(55_555, 0);
        let n = 100_000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            a.push(positive_stable_increment(&mut s, &p, 1.0).unwrap());
            b.push(positive_stable_increment(&mut s, &p, 1.0).unwrap());
        }
        let (ma, va) = mean_and_var(&a);
        let (mb, vb) = mean_and_var(&b);
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let rho = cov / (va * vb).sqrt();
        assert!(rho.abs() < 3.0 / (n as f64).sqrt(), "correlation {rho}");
    }

    #[test]
    fn subordinated_gaussian_conditional_variance() {
        let mut s = RngStream::new(8, 8);
        let ds = 0.37;
        let n = 200_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            xs.push(subordinated_gaussian(&mut s, ds, 1).unwrap()[0]);
        }
        let (m, v) = mean_and_var(&xs);
        let nf = n as f64;
        assert!(m.abs() <= 3.0 * (ds / nf).sqrt());
        assert!((v - ds).abs() <= 3.0 * ds * (2.0 / nf).sqrt());
    }

    #[test]
    fn subordinated_gaussian_isotropy_chi_squared() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut s = RngStream::new(4242, 0);
        let n = 100_000;
        let bins = 36;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let v = subordinated_gaussian(&mut s, 1.0, 2).unwrap();
            let ang = v[1].atan2(v[0]); // (-π, π]
            let idx = (((ang + std::f64::consts::PI) / std::f64::consts::TAU) * bins as f64)
                .floor()
                .min(bins as f64 - 1.0) as usize;
            counts[idx] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let chi = ChiSquared::new((bins - 1) as f64).unwrap();
        let pv = 1.0 - chi.cdf(stat);
        assert!(pv > 0.01, "isotropy chi-squared p-value {pv} (stat {stat})");
    }

    #[test]
    fn composite_stable_characteristic_function() {
        // For X = ΔW_S over step h: E cos(ξX) = exp(-h (ξ²/2)^{α/2}).
        let p = StableParams::new(1.5).unwrap();
        let h = 0.5;
        let n = 1_000_000;
        let mut s = RngStream::new(999, 9);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let ds = positive_stable_increment(&mut s, &p, h).unwrap();
            draws.push(subordinated_gaussian(&mut s, ds, 1).unwrap()[0]);
        }
        for xi in [0.5f64, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|x| (xi * x).cos()).collect();
            let (m, v) = mean_and_var(&vals);
            let target = (-h * (xi * xi / 2.0).powf(p.stable_alpha / 2.0)).exp();
            let se = (v / n as f64).sqrt();
            assert!(
                (m - target).abs() <= 3.0 * se,
                "char fn at xi = {xi}: {m} vs {target} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn reflect_flips_component_along_axis() {
        let u = [1.0, 0.0];
        let v = [0.3, 0.4];
        let r = reflect(&v, &u).unwrap();
        assert!((r[0] + 0.3).abs() < 1e-15 && (r[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn reflect_rejects_non_unit_axis() {
        assert!(matches!(
            reflect(&[1.0, 0.0], &[0.5, 0.0]),
            Err(CoreError::Normalization(_))
        ));
        assert!(matches!(reflect(&[1.0], &[1.0, 0.0]), Err(CoreError::Dimension(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn reflect_is_an_isometric_involution(
            v in proptest::collection::vec(-100.0f64..100.0, 3),
            raw in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let norm: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(norm > 1e-3);
            let u: Vec<f64> = raw.iter().map(|x| x / norm).collect();
            let r = reflect(&v, &u).unwrap();
            let rr = reflect(&r, &u).unwrap();
            let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nr: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (a, b) in v.iter().zip(&rr) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
            prop_assert!((nv - nr).abs() < 1e-9 * (1.0 + nv));
        }
    }
}
