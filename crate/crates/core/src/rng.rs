//! Counter-based deterministic random streams.
//!
//! Every stochastic source in a run draws from its own [`Stream`], keyed by
//! the run seed and a stream name. The n-th draw of a stream is a pure
//! function of `(seed, name, n)`, so adding a new failure source never
//! shifts the samples of the existing ones.

/// Names of the streams used by the simulator.
pub mod names {
    pub const NODE_FAILURE: &str = "node-failure";
    pub const OOM: &str = "oom";
    pub const PORT: &str = "port";
    pub const STARTUP: &str = "startup";
    pub const BAD_NODE: &str = "bad-node";
    pub const VETTING: &str = "vetting";
    pub const NOISE: &str = "noise";
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, name: &str) -> Self {
        let key = mix64(mix64(seed ^ 0x9E37_79B9_7F4A_7C15) ^ fnv1a64(name.as_bytes()));
        Self { key, counter: 0 }
    }

    /// Child stream, e.g. one per storage tier under the noise stream.
    pub fn derive(&self, label: &str) -> Self {
        Self {
            key: mix64(self.key ^ mix64(fnv1a64(label.as_bytes()) ^ 0xD134_2543_DE82_EF95)),
            counter: 0,
        }
    }

    /// Number of draws taken so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        let x = self.key.wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.counter = self.counter.wrapping_add(1);
        mix64(mix64(x) ^ self.key.rotate_left(17))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in `(0, 1]`, safe to take the logarithm of.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Exponential sample with the given rate; infinite when the rate is zero.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let u = self.uniform_open0();
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        -u.ln() / rate
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        if n == 0 {
            return 0;
        }
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
