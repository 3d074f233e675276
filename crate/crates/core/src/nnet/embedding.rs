/// Default embedding width.
pub const TIME_EMBED_DIM: usize = 64;

/// Sinusoidal features of the timestep: `sin(t·f_i)` then `cos(t·f_i)` with
/// `f_i = 10000^(−i/half)`, a geometric ladder from 1 down to about 10⁻⁴.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding(pub Vec<f64>);

impl TimeEmbedding {
    pub fn new(t: usize, dim: usize) -> Self {
        let half = dim / 2;
        let mut out = vec![0.0; dim];
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            let (s, c) = (t as f64 * freq).sin_cos();
            out[i] = s;
            out[half + i] = c;
        }
        TimeEmbedding(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_deterministic_injective() {
        let all: Vec<_> = (1..=1000).map(|t| TimeEmbedding::new(t, TIME_EMBED_DIM)).collect();
        for e in &all {
            assert!(e.0.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(TimeEmbedding::new(17, 64), TimeEmbedding::new(17, 64));
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
