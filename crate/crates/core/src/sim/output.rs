use std::path::Path;

use super::{EpisodeLog, Metrics, SimError};

fn csv_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Config(format!("writing {}: {e}", path.display()))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), SimError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| csv_err(path, e))
}

/// One row per unit per step: `episode,step,demand,price,unit,bid,dispatch,reward`.
/// `step` counts from 1 within the episode; `unit` is the 1-based label.
pub fn write_run_csv(path: impl AsRef<Path>, logs: &[EpisodeLog]) -> Result<(), SimError> {
    let rows = logs.iter().flat_map(|log| {
        log.steps.iter().enumerate().flat_map(move |(s, step)| {
            (0..step.bids.len()).map(move |u| {
                vec![
                    log.episode.to_string(),
                    (s + 1).to_string(),
                    step.demand.to_string(),
                    step.price.to_string(),
                    (u + 1).to_string(),
                    step.bids[u].to_string(),
                    step.dispatch[u].to_string(),
                    step.rewards[u].to_string(),
                ]
            })
        })
    });
    write_rows(
        path.as_ref(),
        &[
            "episode", "step", "demand", "price", "unit", "bid", "dispatch", "reward",
        ],
        rows,
    )
}

/// `episode,unit,avg_profit,avg_bid`, with profit averaged per step.
pub fn write_summary_csv(path: impl AsRef<Path>, metrics: &Metrics) -> Result<(), SimError> {
    let rows = metrics.episodes.iter().flat_map(|e| {
        (0..e.unit_avg_profit.len()).map(move |u| {
            vec![
                e.episode.to_string(),
                (u + 1).to_string(),
                e.unit_avg_profit[u].to_string(),
                e.unit_avg_bid[u].to_string(),
            ]
        })
    });
    write_rows(
        path.as_ref(),
        &["episode", "unit", "avg_profit", "avg_bid"],
        rows,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub avg_profit: f64,
}

/// `method,avg_profit`: overall average profit of each method on one system.
pub fn write_comparison_csv(
    path: impl AsRef<Path>,
    rows: &[ComparisonRow],
) -> Result<(), SimError> {
    write_rows(
        path.as_ref(),
        &["method", "avg_profit"],
        rows.iter()
            .map(|r| vec![r.method.clone(), r.avg_profit.to_string()]),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultRow {
    pub n_disconnected: usize,
    pub method: String,
    pub avg_profit: f64,
}

/// `n_disconnected,method,avg_profit`.
pub fn write_fault_csv(path: impl AsRef<Path>, rows: &[FaultRow]) -> Result<(), SimError> {
    write_rows(
        path.as_ref(),
        &["n_disconnected", "method", "avg_profit"],
        rows.iter().map(|r| {
            vec![
                r.n_disconnected.to_string(),
                r.method.clone(),
                r.avg_profit.to_string(),
            ]
        }),
    )
}
