use rand::Rng;
use serde::{Deserialize, Serialize};

/// First-order Markov source over a small alphabet, used as a toy
/// next-token corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovGrammar {
    pub initial: Vec<f64>,
    /// `transition[a][b]` = P(next = b | current = a).
    pub transition: Vec<Vec<f64>>,
}

impl MarkovGrammar {
    /// The committed three-symbol grammar.
    pub fn three_symbol() -> Self {
        Self {
            initial: vec![0.5, 0.3, 0.2],
            transition: vec![vec![0.1, 0.6, 0.3], vec![0.5, 0.2, 0.3], vec![0.3, 0.3, 0.4]],
        }
    }

    pub fn symbols(&self) -> usize {
        self.initial.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.symbols();
        let row_ok = |r: &[f64]| r.len() == n && r.iter().all(|p| *p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if n == 0 || !row_ok(&self.initial) || self.transition.len() != n || !self.transition.iter().all(|r| row_ok(r)) {
            return Err("grammar rows must be probability vectors over the same alphabet".into());
        }
        Ok(())
    }

    fn draw(probs: &[f64], rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as u32;
            }
        }
        probs.len() as u32 - 1
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let probs = if i == 0 { &self.initial } else { &self.transition[out[i - 1] as usize] };
            out.push(Self::draw(probs, rng));
        }
        out
    }
}
