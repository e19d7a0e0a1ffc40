use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dtw::{dtw_distance, FrameMetric};
use super::{EvalError, Result};

/// One labelled stretch of a representation, `[T × dim]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AbxItem {
    pub frames: Vec<f32>,
    pub dim: usize,
    pub category: String,
    pub talker: String,
}

impl AbxItem {
    pub fn new(frames: Vec<f32>, dim: usize, category: impl Into<String>, talker: impl Into<String>) -> Result<Self> {
        let (category, talker) = (category.into(), talker.into());
        if dim == 0 || frames.is_empty() || frames.len() % dim != 0 {
            return Err(EvalError::Invalid(format!(
                "item needs at least one {dim}-dim frame, got {} values",
                frames.len()
            )));
        }
        if category.is_empty() || talker.is_empty() {
            return Err(EvalError::Invalid("item labels must be non-empty".into()));
        }
        Ok(Self {
            frames,
            dim,
            category,
            talker,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.dim
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbxMode {
    /// A, B and X from one talker.
    WithinTalker,
    /// A and B from one talker, X from another.
    #[default]
    AcrossTalker,
}

impl AbxMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "within" | "within_talker" => Some(Self::WithinTalker),
            "across" | "across_talker" => Some(Self::AcrossTalker),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbxConfig {
    pub mode: AbxMode,
    pub metric: FrameMetric,
    /// Cells with more admissible triples are sampled down to this many.
    pub max_triples_per_cell: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for AbxConfig {
    fn default() -> Self {
        Self {
            mode: AbxMode::AcrossTalker,
            metric: FrameMetric::Cosine,
            max_triples_per_cell: 10_000,
            seed: 0,
            jobs: 1,
        }
    }
}

/// Error over one (A category, B category, talker context) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub category_a: String,
    pub category_b: String,
    /// Talker of A and B.
    pub talker: String,
    /// Talker of X; equals `talker` within talkers.
    pub talker_x: String,
    pub n_triples: usize,
    pub sampled: bool,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbxReport {
    pub error_rate: f64,
    pub n_triples: usize,
    /// Mean over category pairs with this A category.
    pub per_category: BTreeMap<String, f64>,
    /// Number of category pairs behind each `per_category` entry.
    pub category_weights: BTreeMap<String, usize>,
    pub cells: Vec<CellScore>,
    /// Cells that could not form a triple, with the reason.
    pub skipped: Vec<String>,
    pub zero_norm_pairs: usize,
}

struct Cell {
    a: Vec<usize>,
    b: Vec<usize>,
    x: Vec<usize>,
    score: CellScore,
}

/// Symmetric pairwise DTW distances, computed on `jobs` threads by rows.
fn distance_matrix(items: &[AbxItem], metric: FrameMetric, jobs: usize) -> Result<(Vec<f64>, usize)> {
    let n = items.len();
    let rows: Vec<usize> = (0..n).collect();
    let chunk = n.div_ceil(jobs.max(1)).max(1);
    let parts: Vec<Result<Vec<(usize, Vec<f64>, usize)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&i| {
                            let mut zero = 0;
                            let mut row = Vec::with_capacity(n - i);
                            for j in i..n {
                                let d = dtw_distance(&items[i].frames, &items[j].frames, items[i].dim, metric)?;
                                zero += d.zero_norm_pairs;
                                row.push(d.distance);
                            }
                            Ok((i, row, zero))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("distance worker")).collect()
    });
    let mut m = vec![0.0; n * n];
    let mut zero = 0;
    for part in parts {
        for (i, row, z) in part? {
            zero += z;
            for (off, d) in row.into_iter().enumerate() {
                m[i * n + i + off] = d;
                m[(i + off) * n + i] = d;
            }
        }
    }
    Ok((m, zero))
}

fn cell_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Machine ABX error: X is judged closer to A (same category) or B
/// (different category) by DTW distance; ties count half.
pub fn abx_score(items: &[AbxItem], cfg: &AbxConfig) -> Result<AbxReport> {
    let Some(first) = items.first() else {
        return Err(EvalError::Invalid("no ABX items".into()));
    };
    if items.iter().any(|i| i.dim != first.dim) {
        return Err(EvalError::Invalid("ABX items have different dimensions".into()));
    }
    if cfg.max_triples_per_cell == 0 {
        return Err(EvalError::Invalid("max_triples_per_cell must be at least 1".into()));
    }
    let mut by_label: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_label.entry((&it.category, &it.talker)).or_default().push(i);
    }
    let categories: Vec<&str> = {
        let mut c: Vec<&str> = items.iter().map(|i| i.category.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let talkers: Vec<&str> = {
        let mut t: Vec<&str> = items.iter().map(|i| i.talker.as_str()).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    if categories.len() < 2 {
        return Err(EvalError::Invalid("ABX needs at least two categories".into()));
    }

    let group = |c: &str, t: &str| by_label.get(&(c, t)).cloned().unwrap_or_default();
    let mut cells = Vec::new();
    let mut skipped = Vec::new();
    for &ca in &categories {
        for &cb in &categories {
            if ca == cb {
                continue;
            }
            for &t in &talkers {
                let (a, b) = (group(ca, t), group(cb, t));
                if a.is_empty() || b.is_empty() {
                    continue;
                }
                let x_talkers: Vec<&str> = match cfg.mode {
                    AbxMode::WithinTalker => vec![t],
                    AbxMode::AcrossTalker => talkers.iter().copied().filter(|&tx| tx != t).collect(),
                };
                for tx in x_talkers {
                    let x = group(ca, tx);
                    if x.is_empty() {
                        continue;
                    }
                    if cfg.mode == AbxMode::WithinTalker && a.len() < 2 {
                        skipped.push(format!("{ca} vs {cb}, talker {t}: a single {ca} item cannot serve as both A and X"));
                        continue;
                    }
                    cells.push(Cell {
                        a: a.clone(),
                        b: b.clone(),
                        x,
                        score: CellScore {
                            category_a: ca.into(),
                            category_b: cb.into(),
                            talker: t.into(),
                            talker_x: tx.into(),
                            n_triples: 0,
                            sampled: false,
                            error: 0.0,
                        },
                    });
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(EvalError::Invalid(format!(
            "no admissible triples in {:?} mode",
            cfg.mode
        )));
    }

    let (dist, zero_norm_pairs) = distance_matrix(items, cfg.metric, cfg.jobs)?;
    let n = items.len();
    let judge = |a: usize, b: usize, x: usize| {
        let (dax, dbx) = (dist[a * n + x], dist[b * n + x]);
        if dax > dbx {
            1.0
        } else if dax == dbx {
            0.5
        } else {
            0.0
        }
    };
    for (ci, cell) in cells.iter_mut().enumerate() {
        let same = cfg.mode == AbxMode::WithinTalker;
        // within talkers X ranges over the A pool minus A itself
        let n_x = if same { cell.x.len() - 1 } else { cell.x.len() };
        let total = cell.a.len() * cell.b.len() * n_x;
        let (mut err, mut count) = (0.0, 0usize);
        if total <= cfg.max_triples_per_cell {
            for (ai, &a) in cell.a.iter().enumerate() {
                for &b in &cell.b {
                    for (xi, &x) in cell.x.iter().enumerate() {
                        if same && xi == ai {
                            continue;
                        }
                        err += judge(a, b, x);
                        count += 1;
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, ci));
            for _ in 0..cfg.max_triples_per_cell {
                let ai = rng.gen_range(0..cell.a.len());
                let b = cell.b[rng.gen_range(0..cell.b.len())];
                let mut xi = rng.gen_range(0..n_x);
                if same && xi >= ai {
                    xi += 1;
                }
                err += judge(cell.a[ai], b, cell.x[xi]);
                count += 1;
            }
            cell.score.sampled = true;
        }
        cell.score.n_triples = count;
        cell.score.error = err / count as f64;
    }

    // cells → category pairs (mean over talker contexts) → per A category → overall
    let mut pairs: BTreeMap<(&str, &str), (f64, usize)> = BTreeMap::new();
    for c in &cells {
        let e = pairs.entry((&c.score.category_a, &c.score.category_b)).or_default();
        e.0 += c.score.error;
        e.1 += 1;
    }
    let mut per_cat: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((ca, _), (sum, k)) in &pairs {
        let e = per_cat.entry(ca.to_string()).or_default();
        e.0 += sum / *k as f64;
        e.1 += 1;
    }
    let n_pairs: usize = per_cat.values().map(|v| v.1).sum();
    let error_rate = per_cat.values().map(|v| v.0).sum::<f64>() / n_pairs as f64;
    Ok(AbxReport {
        error_rate,
        n_triples: cells.iter().map(|c| c.score.n_triples).sum(),
        per_category: per_cat.iter().map(|(k, v)| (k.clone(), v.0 / v.1 as f64)).collect(),
        category_weights: per_cat.iter().map(|(k, v)| (k.clone(), v.1)).collect(),
        cells: cells.into_iter().map(|c| c.score).collect(),
        skipped,
        zero_norm_pairs,
    })
}
