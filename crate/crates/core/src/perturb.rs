//! Character-level typing noise.
//!
//! Each ASCII letter or digit is mutated with probability `p` by one of
//! delete, insert, substitute or swap-with-next. Replacement characters come
//! from the key's neighbours in [`KeyboardLayout::qwerty`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const QWERTY_TABLE: &str = include_str!("../data/qwerty-v1.tsv");
pub const LAYOUT_ID: &str = "qwerty-v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        let cfg = Self { p, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("noise probability {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyboardLayout {
    neighbors: BTreeMap<char, Vec<char>>,
}

impl KeyboardLayout {
    /// Parses `key<TAB>neighbours` lines; `#` starts a comment line.
    pub fn parse(table: &str) -> Result<Self> {
        let mut neighbors = BTreeMap::new();
        for (n, line) in table.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                path: LAYOUT_ID.into(),
                msg: format!("line {}: {msg}", n + 1),
            };
            let (key, rest) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let mut chars = key.chars();
            let k = match (chars.next(), chars.next()) {
                (Some(k), None) => k,
                _ => return Err(bad("key must be one character")),
            };
            let ns: Vec<char> = rest.trim().chars().collect();
            if ns.is_empty() {
                return Err(bad("key has no neighbours"));
            }
            if neighbors.insert(k, ns).is_some() {
                return Err(bad("duplicate key"));
            }
        }
        let layout = Self { neighbors };
        for (&a, ns) in &layout.neighbors {
            for &b in ns {
                if !layout.neighbors(b).is_some_and(|bn| bn.contains(&a)) {
                    return Err(Error::Parse {
                        path: LAYOUT_ID.into(),
                        msg: format!("adjacency not symmetric: {a} -> {b}"),
                    });
                }
            }
        }
        Ok(layout)
    }

    /// The bundled lowercase QWERTY grid with digit row.
    pub fn qwerty() -> &'static Self {
        static LAYOUT: OnceLock<KeyboardLayout> = OnceLock::new();
        LAYOUT.get_or_init(|| Self::parse(QWERTY_TABLE).expect("bundled layout is valid"))
    }

    pub fn neighbors(&self, key: char) -> Option<&[char]> {
        self.neighbors.get(&key.to_ascii_lowercase()).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = char> + '_ {
        self.neighbors.keys().copied()
    }
}

/// Counts from one perturbation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStats {
    /// Eligible characters in the input.
    pub eligible: usize,
    /// Eligible characters that received a mutation draw. A swap consumes
    /// the following character, so this can be below `eligible`.
    pub trials: usize,
    pub mutations: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub substitutions: usize,
    pub swaps: usize,
}

impl NoiseStats {
    /// Fraction of trials that mutated.
    pub fn mutation_rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.mutations as f64 / self.trials as f64)
    }

    fn add(&mut self, other: &Self) {
        self.eligible += other.eligible;
        self.trials += other.trials;
        self.mutations += other.mutations;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.substitutions += other.substitutions;
        self.swaps += other.swaps;
    }
}

fn eligible(c: char) -> bool {
    c.is_ascii_alphanumeric()
}

fn with_case(orig: char, c: char) -> char {
    if orig.is_ascii_uppercase() {
        c.to_ascii_uppercase()
    } else {
        c
    }
}

fn pick_neighbor<R: RngCore>(r: &mut R, c: char) -> char {
    let ns = KeyboardLayout::qwerty()
        .neighbors(c)
        .expect("every ASCII alphanumeric is on the layout");
    with_case(c, ns[rng::index(r, ns.len())])
}

fn perturb_with<R: RngCore>(text: &str, p: f64, r: &mut R) -> (String, NoiseStats) {
    let chars: Vec<char> = text.chars().collect();
    let mut stats = NoiseStats {
        eligible: chars.iter().filter(|&&c| eligible(c)).count(),
        ..Default::default()
    };
    let mut out = String::with_capacity(text.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        i += 1;
        if !eligible(c) {
            out.push(c);
            continue;
        }
        stats.trials += 1;
        if rng::unit_f64(r) >= p {
            out.push(c);
            continue;
        }
        stats.mutations += 1;
        match rng::index(r, 4) {
            0 => stats.deletions += 1,
            1 => {
                stats.insertions += 1;
                out.push(c);
                out.push(pick_neighbor(r, c));
            }
            2 => {
                stats.substitutions += 1;
                out.push(pick_neighbor(r, c));
            }
            _ => {
                stats.swaps += 1;
                match chars.get(i) {
                    Some(&next) if eligible(next) => {
                        out.push(next);
                        out.push(c);
                        i += 1;
                    }
                    _ => out.push(c),
                }
            }
        }
    }
    (out, stats)
}

pub fn perturb_text(text: &str, cfg: &NoiseConfig) -> Result<String> {
    perturb_text_with_stats(text, cfg).map(|(s, _)| s)
}

/// Same as [`perturb_text`], using stream 0 of `cfg.seed`.
pub fn perturb_text_with_stats(text: &str, cfg: &NoiseConfig) -> Result<(String, NoiseStats)> {
    cfg.validate()?;
    Ok(perturb_with(text, cfg.p, &mut rng::stream(cfg.seed, 0)))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub lines: usize,
    pub total: NoiseStats,
    /// Mutation rate of each line with at least one trial.
    pub line_rates: Vec<f64>,
}

/// Perturbs each line of `text` on its own stream (line `i` uses stream `i`).
pub fn perturb_lines(text: &str, cfg: &NoiseConfig) -> Result<(String, CorpusReport)> {
    cfg.validate()?;
    let mut report = CorpusReport::default();
    if text.is_empty() {
        return Ok((String::new(), report));
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut out = String::with_capacity(text.len() + text.len() / 8);
    for (i, line) in body.split('\n').enumerate() {
        let (noisy, stats) = perturb_with(line, cfg.p, &mut rng::stream(cfg.seed, i as u64));
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&noisy);
        report.lines += 1;
        report.total.add(&stats);
        report.line_rates.extend(stats.mutation_rate());
    }
    if body.len() < text.len() {
        out.push('\n');
    }
    Ok((out, report))
}

pub fn perturb_corpus(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    cfg: &NoiseConfig,
) -> Result<CorpusReport> {
    let (input, output) = (input.as_ref(), output.as_ref());
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let (noisy, report) = perturb_lines(&text, cfg)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(output, noisy).map_err(|e| Error::io(output, e))?;
    Ok(report)
}
