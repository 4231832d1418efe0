//! Sweep plans over `(v_max, L, scheme)` and their parallel execution.

use std::fmt;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use adhoc_csi::sim::{self, aggregate, Aggregate, RunMetrics};
use adhoc_csi::{CsiScheme, ScenarioConfig};
use anyhow::{bail, Context, Result};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureTag {
    Fig2,
    Fig3,
    Fig5,
    Fig6,
    Custom,
}

impl fmt::Display for FigureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureTag::Fig2 => "FIG2",
            FigureTag::Fig3 => "FIG3",
            FigureTag::Fig5 => "FIG5",
            FigureTag::Fig6 => "FIG6",
            FigureTag::Custom => "CUSTOM",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub tag: FigureTag,
    pub v_max: Vec<f64>,
    pub l: Vec<usize>,
    pub schemes: Vec<CsiScheme>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Scenario every cell starts from.
    pub base: ScenarioConfig,
}

/// One `(v_max, L, scheme)` combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub v_max: f64,
    pub l: usize,
    pub scheme: CsiScheme,
}

#[derive(Debug)]
pub struct SweepOutcome {
    /// Completed runs in plan order.
    pub runs: Vec<RunMetrics>,
    pub aggregates: Vec<Aggregate>,
    /// `(cell, seed, reason)` of runs that did not complete.
    pub failures: Vec<(Cell, u64, String)>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.v_max.is_empty() || self.l.is_empty() || self.schemes.is_empty() || self.seeds.is_empty() {
            bail!("every sweep axis and the seed list must be non-empty");
        }
        for cell in self.cells() {
            self.config_for(cell, self.seeds[0])
                .validate()
                .with_context(|| format!("cell vmax={} L={} scheme={}", cell.v_max, cell.l, cell.scheme))?;
        }
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        let probe = self.out_dir.join(".write-probe");
        fs::write(&probe, b"").with_context(|| format!("{} is not writable", self.out_dir.display()))?;
        fs::remove_file(&probe)?;
        Ok(())
    }

    /// Cells in output order: v_max outermost, then L, then scheme.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &v_max in &self.v_max {
            for &l in &self.l {
                for &scheme in &self.schemes {
                    out.push(Cell { v_max, l, scheme });
                }
            }
        }
        out
    }

    pub fn config_for(&self, cell: Cell, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            v_max: cell.v_max,
            l: cell.l,
            csi_scheme: cell.scheme,
            seed,
            ..self.base.clone()
        }
    }

    /// Canonical description hashed into output headers.
    pub fn canonical_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "tag = {}\nv_max = {}\nL = {}\nschemes = {}\n{}",
            self.tag,
            join(self.v_max.iter().map(|v| format!("{v:?}")).collect()),
            join(self.l.iter().map(usize::to_string).collect()),
            join(self.schemes.iter().map(CsiScheme::to_string).collect()),
            self.base.to_text()
        )
    }

    /// Run every `(cell, seed)` job on a pool of `jobs` threads.
    pub fn execute(&self, jobs: usize) -> Result<SweepOutcome> {
        let work: Vec<(Cell, u64)> = self
            .cells()
            .into_iter()
            .flat_map(|c| self.seeds.iter().map(move |&s| (c, s)))
            .collect();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
        let results: Vec<Result<RunMetrics, String>> = pool.install(|| {
            work.par_iter()
                .map(|&(cell, seed)| run_guarded(&self.config_for(cell, seed)))
                .collect()
        });
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        let mut aggregates = Vec::new();
        for (chunk, cell) in results.chunks(self.seeds.len()).zip(self.cells()) {
            let mut done = Vec::new();
            for (r, &seed) in chunk.iter().zip(&self.seeds) {
                match r {
                    Ok(m) => done.push(m.clone()),
                    Err(e) => failures.push((cell, seed, e.clone())),
                }
            }
            if let Some(a) = aggregate(&done) {
                aggregates.push(a);
            }
            runs.extend(done);
        }
        Ok(SweepOutcome {
            runs,
            aggregates,
            failures,
        })
    }
}

fn run_guarded(cfg: &ScenarioConfig) -> Result<RunMetrics, String> {
    match panic::catch_unwind(AssertUnwindSafe(|| sim::run(cfg))) {
        Ok(Ok(out)) => Ok(out.metrics),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "run panicked".to_string())),
    }
}

/// Write `runs.csv` and `aggregate.csv` under the plan's directory.
pub fn write_outputs(plan: &ExperimentPlan, outcome: &SweepOutcome, header: &str) -> Result<(PathBuf, PathBuf)> {
    let runs_path = plan.out_dir.join("runs.csv");
    let agg_path = plan.out_dir.join("aggregate.csv");
    let mut runs = format!("{header}{}\n", RunMetrics::CSV_HEADER);
    for r in &outcome.runs {
        runs.push_str(&r.csv_row());
        runs.push('\n');
    }
    let mut agg = format!("{header}{}\n", Aggregate::CSV_HEADER);
    for a in &outcome.aggregates {
        agg.push_str(&a.csv_row());
        agg.push('\n');
    }
    write(&runs_path, &runs)?;
    write(&agg_path, &agg)?;
    Ok((runs_path, agg_path))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> ExperimentPlan {
        ExperimentPlan {
            tag: FigureTag::Fig6,
            v_max: vec![1.0, 5.0, 10.0, 15.0, 20.0],
            l: vec![3, 4],
            schemes: CsiScheme::ALL.to_vec(),
            seeds: vec![1, 2],
            out_dir: PathBuf::from("unused"),
            base: ScenarioConfig::desk(),
        }
    }

    #[test]
    fn default_sweep_grid_has_thirty_cells() {
        let p = plan();
        let cells = p.cells();
        assert_eq!(cells.len(), 30);
        assert_eq!(cells[0], Cell { v_max: 1.0, l: 3, scheme: CsiScheme::RtsCsi });
        assert_eq!(cells[29].scheme, CsiScheme::Ideal);
    }

    #[test]
    fn cells_override_the_base() {
        let p = plan();
        let c = p.config_for(Cell { v_max: 15.0, l: 3, scheme: CsiScheme::Ideal }, 9);
        assert_eq!((c.v_max, c.l, c.csi_scheme, c.seed), (15.0, 3, CsiScheme::Ideal, 9));
        assert_eq!(c.node_count, p.base.node_count);
    }

    #[test]
    fn canonical_text_tracks_the_axes() {
        let a = plan();
        let mut b = plan();
        b.l = vec![4];
        assert_ne!(a.canonical_text(), b.canonical_text());
    }
}
