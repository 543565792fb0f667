use std::collections::HashMap;
use std::fmt::Write;

use crate::env::Outcome;
use crate::error::{Error, Result};

pub const DEFAULT_K_FACTOR: f64 = 16.0;
pub const DEFAULT_INITIAL_ELO: f64 = 1000.0;

/// Logistic Elo update. Returns the new ratings of `i` and `j`; their sum is unchanged.
pub fn elo_update(elo_i: f64, elo_j: f64, score_i: f64, k_factor: f64) -> (f64, f64) {
    let expected_i = 1.0 / (1.0 + 10f64.powf((elo_j - elo_i) / 400.0));
    let delta = k_factor * (score_i - expected_i);
    (elo_i + delta, elo_j - delta)
}

/// Win/loss/tie counts for every ordered model pair plus Elo ratings.
/// Row is the learning side, column the opponent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PayoffMatrix {
    keys: Vec<String>,
    index: HashMap<String, usize>,
    wins: Vec<Vec<u64>>,
    losses: Vec<Vec<u64>>,
    ties: Vec<Vec<u64>>,
    elo: Vec<f64>,
    pub k_factor: f64,
}

impl PayoffMatrix {
    pub fn new(k_factor: f64) -> Self {
        PayoffMatrix {
            k_factor,
            ..Default::default()
        }
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Adds a row/column. No-op if the key is already present.
    pub fn add_key(&mut self, key: &str, elo: f64) {
        if self.index.contains_key(key) {
            return;
        }
        let n = self.keys.len();
        self.index.insert(key.to_string(), n);
        self.keys.push(key.to_string());
        for m in [&mut self.wins, &mut self.losses, &mut self.ties] {
            for row in m.iter_mut() {
                row.push(0);
            }
            m.push(vec![0; n + 1]);
        }
        self.elo.push(elo);
    }

    fn idx(&self, key: &str) -> Result<usize> {
        self.index
            .get(key)
            .copied()
            .ok_or_else(|| Error::ModelNotFound(key.to_string()))
    }

    /// Records one game of `i` against `j` from `i`'s side and updates both ratings.
    /// The mirrored entry (`j` against `i`) is updated in the same call.
    pub fn record(&mut self, i_key: &str, j_key: &str, outcome_for_i: Outcome) -> Result<()> {
        let i = self.idx(i_key)?;
        let j = self.idx(j_key)?;
        match outcome_for_i {
            Outcome::Win => {
                self.wins[i][j] += 1;
                self.losses[j][i] += 1;
            }
            Outcome::Loss => {
                self.losses[i][j] += 1;
                self.wins[j][i] += 1;
            }
            Outcome::Tie => {
                self.ties[i][j] += 1;
                self.ties[j][i] += 1;
            }
        }
        if i != j {
            let (ei, ej) = elo_update(self.elo[i], self.elo[j], outcome_for_i.score(), self.k_factor);
            self.elo[i] = ei;
            self.elo[j] = ej;
        }
        Ok(())
    }

    pub fn counts(&self, i_key: &str, j_key: &str) -> Result<(u64, u64, u64)> {
        let i = self.idx(i_key)?;
        let j = self.idx(j_key)?;
        Ok((self.wins[i][j], self.losses[i][j], self.ties[i][j]))
    }

    /// `(wins + ties/2 + 1) / (games + 2)`: strictly inside (0, 1).
    pub fn win_rate(&self, i_key: &str, j_key: &str) -> Result<f64> {
        let (w, l, t) = self.counts(i_key, j_key)?;
        Ok((w as f64 + t as f64 / 2.0 + 1.0) / ((w + l + t) as f64 + 2.0))
    }

    pub fn elo(&self, key: &str) -> Result<f64> {
        Ok(self.elo[self.idx(key)?])
    }

    pub fn total_elo(&self) -> f64 {
        self.elo.iter().sum()
    }

    /// Aligned text rendering: Elo table, then win/loss/tie counts and smoothed win rates.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let width = self.keys.iter().map(|k| k.len()).max().unwrap_or(3).max(5);
        let _ = writeln!(s, "models: {}", self.len());
        let _ = writeln!(s, "{:<width$}  {:>12}", "model", "elo");
        for (k, e) in self.keys.iter().zip(&self.elo) {
            let _ = writeln!(s, "{:<width$}  {:>12.4}", k, e);
        }
        let _ = writeln!(s, "payoff (row = learner, column = opponent; w/l/t)");
        let _ = write!(s, "{:<width$}", "");
        for k in &self.keys {
            let _ = write!(s, "  {:>width$}", k);
        }
        let _ = writeln!(s);
        for i in 0..self.len() {
            let _ = write!(s, "{:<width$}", self.keys[i]);
            for j in 0..self.len() {
                let cell = format!("{}/{}/{}", self.wins[i][j], self.losses[i][j], self.ties[i][j]);
                let _ = write!(s, "  {:>width$}", cell);
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "smoothed win rate");
        let _ = write!(s, "{:<width$}", "");
        for k in &self.keys {
            let _ = write!(s, "  {:>width$}", k);
        }
        let _ = writeln!(s);
        for i in 0..self.len() {
            let _ = write!(s, "{:<width$}", self.keys[i]);
            for j in 0..self.len() {
                let p = self.win_rate(&self.keys[i], &self.keys[j]).unwrap_or(0.5);
                let _ = write!(s, "  {:>width$.4}", p);
            }
            let _ = writeln!(s);
        }
        s
    }
}
