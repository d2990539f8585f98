use super::Tensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Counter-based random source.
///
/// Each draw hashes `key + counter * golden_gamma` through the SplitMix64
/// finalizer, so the stream is a pure function of `(key, counter)` and is
/// identical on every platform. Normals use Box–Muller with `libm`
/// transcendentals for the same reason.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomSource {
    key: u64,
    counter: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        RandomSource {
            key: seed,
            counter: 0,
        }
    }

    /// An independent substream keyed by `tag`; does not advance `self`.
    pub fn fork(&self, tag: u64) -> RandomSource {
        RandomSource {
            key: mix64(self.key ^ mix64(tag.wrapping_add(GOLDEN_GAMMA))),
            counter: 0,
        }
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Fills a buffer with i.i.d. standard normals, two per Box–Muller draw.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal();
        }
    }

    /// Tensor of i.i.d. standard normal entries.
    pub fn gaussian(&mut self, dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        let mut data = vec![0.0; n];
        self.fill_normal(&mut data);
        Tensor::from_parts_unchecked(dims.to_vec(), data)
    }

    /// Tensor of i.i.d. `N(0, sigma^2)` entries; all zeros when `sigma == 0`
    /// but still consumes draws so the stream position does not depend on it.
    pub fn gaussian_scaled(&mut self, dims: &[usize], sigma: f64) -> Tensor {
        let mut t = self.gaussian(dims);
        t.data.iter_mut().for_each(|v| *v *= sigma);
        t
    }
}
