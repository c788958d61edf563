//! Metric records, aggregates and atomic file output.

use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use kgforge::eval::RankingMetrics;
use serde::{Deserialize, Serialize};

/// Writes `path` through a temporary file in the same directory that is
/// renamed into place only after `fill` succeeds, so a failed run never
/// leaves a partial file behind.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    let mut w = BufWriter::new(tmp);
    fill(&mut w).with_context(|| format!("writing {}", path.display()))?;
    let tmp = w.into_inner().map_err(|e| e.into_error()).with_context(|| format!("flushing {}", path.display()))?;
    tmp.as_file().sync_all().ok();
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mrr: f64,
    pub mr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_5: f64,
    pub hits_at_10: f64,
}

impl From<&RankingMetrics> for Scores {
    fn from(m: &RankingMetrics) -> Self {
        Scores {
            mrr: m.mrr,
            mr: m.mr,
            hits_at_1: m.hits[0],
            hits_at_3: m.hits[1],
            hits_at_5: m.hits[2],
            hits_at_10: m.hits[3],
        }
    }
}

impl Scores {
    fn fields(&self) -> [f64; 6] {
        [self.mrr, self.mr, self.hits_at_1, self.hits_at_3, self.hits_at_5, self.hits_at_10]
    }

    fn from_fields(f: [f64; 6]) -> Self {
        Scores {
            mrr: f[0],
            mr: f[1],
            hits_at_1: f[2],
            hits_at_3: f[3],
            hits_at_5: f[4],
            hits_at_10: f[5],
        }
    }
}

/// One line of `metrics.jsonl`: either a single run or the mean and sample
/// standard deviation over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// `run` or `aggregate`.
    pub kind: String,
    /// `baseline` or `nnmfaug`.
    pub variant: String,
    pub model: String,
    pub eval_mode: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    pub n_runs: usize,
    pub num_aug: usize,
    pub exponent_k: u32,
    #[serde(flatten)]
    pub scores: Scores,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<Scores>,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

/// Mean and sample standard deviation (zero for a single run) of the runs.
pub fn aggregate(runs: &[MetricsRecord]) -> Option<MetricsRecord> {
    let first = runs.first()?;
    let n = runs.len() as f64;
    let mut mean = [0.0; 6];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.scores.fields()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 6];
    if runs.len() > 1 {
        for r in runs {
            for ((s, v), m) in var.iter_mut().zip(r.scores.fields()).zip(mean) {
                *s += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }
    Some(MetricsRecord {
        kind: "aggregate".into(),
        seed: None,
        n_runs: runs.len(),
        scores: Scores::from_fields(mean),
        std: Some(Scores::from_fields(var.map(f64::sqrt))),
        num_aug: runs.iter().map(|r| r.num_aug).sum::<usize>() / runs.len(),
        ..first.clone()
    })
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    write_atomic(path, |w| {
        for r in records {
            writeln!(w, "{}", r.to_json_line())?;
        }
        Ok(())
    })
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing a record in {}", path.display())))
        .collect()
}

/// Human-readable table, one row per record.
pub fn render_table(records: &[MetricsRecord]) -> String {
    let mut s = format!(
        "{:<10} {:<8} {:<9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
        "variant", "model", "seed", "|S|", "H@1", "H@3", "H@5", "H@10", "MRR", "MR"
    );
    for r in records {
        let seed = match (r.seed, r.kind.as_str()) {
            (Some(s), _) => s.to_string(),
            (None, "aggregate") => format!("mean/{}", r.n_runs),
            (None, _) => "-".into(),
        };
        let sc = &r.scores;
        s.push_str(&format!(
            "{:<10} {:<8} {:<9} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.4} {:>10.1}\n",
            r.variant, r.model, seed, r.num_aug, sc.hits_at_1, sc.hits_at_3, sc.hits_at_5, sc.hits_at_10, sc.mrr, sc.mr
        ));
        if let Some(sd) = &r.std {
            s.push_str(&format!(
                "{:<10} {:<8} {:<9} {:>8} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.4} {:>10.1}\n",
                "", "", "±std", "", sd.hits_at_1, sd.hits_at_3, sd.hits_at_5, sd.hits_at_10, sd.mrr, sd.mr
            ));
        }
    }
    s
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    pub mrr: f64,
    pub mr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h5: f64,
    pub h10: f64,
}

impl SweepRow {
    pub fn new(axis: &str, value: &str, seed: u64, s: &Scores) -> Self {
        SweepRow {
            axis: axis.into(),
            value: value.into(),
            seed,
            mrr: s.mrr,
            mr: s.mr,
            h1: s.hits_at_1,
            h3: s.hits_at_3,
            h5: s.hits_at_5,
            h10: s.hits_at_10,
        }
    }
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()
    })
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    rd.deserialize()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
}
