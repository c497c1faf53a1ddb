use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Component tags for deriving independent random streams from one run seed.
///
/// A stream is seeded with `seed ^ tag` (plus a mixed client index for
/// per-client streams), so the same run seed always reproduces the same
/// stream for each component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    DatasetNoise,
    Partition,
    InitW,
    InitH,
    Participation,
    KmeansSeeding,
}

impl StreamTag {
    fn value(self) -> u64 {
        match self {
            StreamTag::DatasetNoise => 0x9a1c_55d1_0000_0001,
            StreamTag::Partition => 0x9a1c_55d1_0000_0002,
            StreamTag::InitW => 0x9a1c_55d1_0000_0003,
            StreamTag::InitH => 0x9a1c_55d1_0000_0004,
            StreamTag::Participation => 0x9a1c_55d1_0000_0005,
            StreamTag::KmeansSeeding => 0x9a1c_55d1_0000_0006,
        }
    }
}

/// Seeded deterministic generator: identical seed, identical stream.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha12Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    /// Stream for one component of a run.
    pub fn for_stream(seed: u64, tag: StreamTag) -> Self {
        Self::from_seed(seed ^ tag.value())
    }

    /// Per-client stream; the client index is mixed with an odd constant so
    /// nearby indices do not collide with other component tags.
    pub fn for_client_stream(seed: u64, tag: StreamTag, client: usize) -> Self {
        let mix = (client as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Self::from_seed(seed ^ tag.value() ^ mix)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.inner.gen_range(0..n)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}
