//! Per-episode metrics, CSV persistence, and aggregation.

use crate::env::Cause;
use crate::error::{FearError, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const EPISODE_CSV_HEADER: &str = "seed,episode,length,ext_sum,int_sum,cause";

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub seed: u64,
    pub episode: usize,
    pub length: usize,
    pub ext_sum: f32,
    pub int_sum: f32,
    pub cause: Cause,
}

impl EpisodeRow {
    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.seed, self.episode, self.length, self.ext_sum, self.int_sum, self.cause
        )
    }

    fn parse(line: &str) -> Result<EpisodeRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(FearError::Format(format!("episode row has {} fields", fields.len())));
        }
        let cause = match fields[5] {
            "none" => Cause::None,
            "goal" => Cause::Goal,
            "street" => Cause::Street,
            "timeout" => Cause::Timeout,
            other => return Err(FearError::Format(format!("unknown cause {other:?}"))),
        };
        Ok(EpisodeRow {
            seed: fields[0].parse().map_err(|_| FearError::Format("bad seed".into()))?,
            episode: fields[1].parse().map_err(|_| FearError::Format("bad episode".into()))?,
            length: fields[2].parse().map_err(|_| FearError::Format("bad length".into()))?,
            ext_sum: fields[3].parse().map_err(|_| FearError::Format("bad ext_sum".into()))?,
            int_sum: fields[4].parse().map_err(|_| FearError::Format("bad int_sum".into()))?,
            cause,
        })
    }
}

pub fn write_episode_csv(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{EPISODE_CSV_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.to_csv())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != EPISODE_CSV_HEADER {
                return Err(FearError::Format(format!("{}: bad header", path.display())));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push(EpisodeRow::parse(&line)?);
    }
    Ok(rows)
}

/// Run-level summary statistics, all computed in f64.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub episodes: usize,
    pub mean_length: f64,
    pub std_length: f64,
    pub mean_ext: f64,
    pub std_ext: f64,
    pub mean_int: f64,
    pub std_int: f64,
    pub max_ext: f64,
    pub goal_episodes: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[EpisodeRow]) -> Aggregates {
    let (mean_length, std_length) = mean_std(rows.iter().map(|r| r.length as f64));
    let (mean_ext, std_ext) = mean_std(rows.iter().map(|r| r.ext_sum as f64));
    let (mean_int, std_int) = mean_std(rows.iter().map(|r| r.int_sum as f64));
    let max_ext = rows.iter().map(|r| r.ext_sum as f64).fold(0.0f64, f64::max);
    let goal_episodes = rows.iter().filter(|r| r.cause == Cause::Goal).count();
    Aggregates {
        episodes: rows.len(),
        mean_length,
        std_length,
        mean_ext,
        std_ext,
        mean_int,
        std_int,
        max_ext,
        goal_episodes,
    }
}

/// Simple trailing moving average for plot smoothing.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<EpisodeRow> {
        vec![
            EpisodeRow { seed: 0, episode: 0, length: 10, ext_sum: 0.5, int_sum: -1.0, cause: Cause::Goal },
            EpisodeRow { seed: 0, episode: 1, length: 150, ext_sum: 0.0, int_sum: -2.5, cause: Cause::Timeout },
            EpisodeRow { seed: 1, episode: 0, length: 20, ext_sum: 0.0, int_sum: 0.0, cause: Cause::Street },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.csv");
        write_episode_csv(&path, &rows()).unwrap();
        let back = read_episode_csv(&path).unwrap();
        assert_eq!(back, rows());
    }

    #[test]
    fn aggregates_match_hand_computation() {
        let a = aggregate(&rows());
        assert_eq!(a.episodes, 3);
        assert!((a.mean_length - 60.0).abs() < 1e-12);
        assert!((a.mean_ext - 0.5 / 3.0).abs() < 1e-12);
        assert_eq!(a.goal_episodes, 1);
        assert!((a.max_ext - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_row_has_zero_std() {
        let a = aggregate(&rows()[..1]);
        assert_eq!(a.std_length, 0.0);
        assert_eq!(a.std_ext, 0.0);
        assert_eq!(a.std_int, 0.0);
    }

    #[test]
    fn moving_average_smooths() {
        let v = vec![0.0, 2.0, 4.0, 6.0];
        let ma = moving_average(&v, 2);
        assert_eq!(ma, vec![0.0, 1.0, 3.0, 5.0]);
    }
}
