//! Dataset CSV serialization.
//!
//! Schema (for state dimension d):
//!
//! ```text
//! traj_id,t,state_0..state_{d-1},action,reward,terminal,next_state_0..next_state_{d-1}
//! ```
//!
//! `t` is the step index within the trajectory and `terminal` is 0 or 1.
//! Floats are written with 17 significant digits so a write/read cycle is
//! bit-stable.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::{MdpConfig, OfflineDataset, Trajectory, Transition};
use crate::report::format_float;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is invalid: {0}")]
    Data(#[from] crate::data::DataError),
}

/// The exact header for the given state dimension.
pub fn dataset_header(state_dim: usize) -> String {
    let mut cols = vec!["traj_id".to_string(), "t".to_string()];
    cols.extend((0..state_dim).map(|i| format!("state_{i}")));
    cols.push("action".into());
    cols.push("reward".into());
    cols.push("terminal".into());
    cols.extend((0..state_dim).map(|i| format!("next_state_{i}")));
    cols.join(",")
}

pub fn write_dataset_csv(data: &OfflineDataset, path: &Path) -> Result<(), IoError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", dataset_header(data.config.state_dim))?;
    for traj in &data.trajectories {
        for (t, tr) in traj.transitions.iter().enumerate() {
            let mut fields = vec![traj.id.to_string(), t.to_string()];
            fields.extend(tr.state.iter().map(|v| format_float(*v)));
            fields.push(tr.action.to_string());
            fields.push(format_float(tr.reward));
            fields.push(if tr.terminal { "1".into() } else { "0".into() });
            fields.extend(tr.next_state.iter().map(|v| format_float(*v)));
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path, config: MdpConfig) -> Result<OfflineDataset, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let expected = dataset_header(config.state_dim);
    if header != expected {
        return Err(IoError::Parse {
            line: 1,
            message: format!("header mismatch: expected '{expected}'"),
        });
    }

    let d = config.state_dim;
    let mut by_traj: BTreeMap<u64, Vec<(usize, Transition)>> = BTreeMap::new();
    for (line_idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let want = 2 + d + 3 + d;
        if fields.len() != want {
            return Err(IoError::Parse {
                line: line_idx + 1,
                message: format!("expected {want} fields, got {}", fields.len()),
            });
        }
        let parse_err = |message: String| IoError::Parse { line: line_idx + 1, message };
        let traj_id: u64 =
            fields[0].parse().map_err(|_| parse_err("bad traj_id".into()))?;
        let t: usize = fields[1].parse().map_err(|_| parse_err("bad t".into()))?;
        let state: Result<Vec<f64>, _> = fields[2..2 + d].iter().map(|f| f.parse()).collect();
        let state = state.map_err(|_| parse_err("bad state".into()))?;
        let action: usize =
            fields[2 + d].parse().map_err(|_| parse_err("bad action".into()))?;
        let reward: f64 =
            fields[3 + d].parse().map_err(|_| parse_err("bad reward".into()))?;
        let terminal = match fields[4 + d] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(format!("bad terminal flag '{other}'"))),
        };
        let next_state: Result<Vec<f64>, _> =
            fields[5 + d..5 + 2 * d].iter().map(|f| f.parse()).collect();
        let next_state = next_state.map_err(|_| parse_err("bad next_state".into()))?;
        by_traj.entry(traj_id).or_default().push((
            t,
            Transition { state, action, reward, next_state, terminal },
        ));
    }

    let mut trajectories = Vec::with_capacity(by_traj.len());
    for (id, mut steps) in by_traj {
        steps.sort_by_key(|(t, _)| *t);
        for (want, (t, _)) in steps.iter().enumerate() {
            if *t != want {
                return Err(IoError::Parse {
                    line: 0,
                    message: format!("trajectory {id} has non-contiguous step indices"),
                });
            }
        }
        trajectories.push(Trajectory { id, transitions: steps.into_iter().map(|(_, tr)| tr).collect() });
    }
    Ok(OfflineDataset::new(trajectories, config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MdpConfig, Trajectory, Transition};

    fn sample_dataset() -> OfflineDataset {
        let config = MdpConfig {
            num_actions: 2,
            state_dim: 2,
            gamma_train: 0.9,
            gamma_eval: 1.0,
            eval_horizon: 10,
        };
        let tr = |s: [f64; 2], a: usize, r: f64, s2: [f64; 2]| Transition {
            state: s.to_vec(),
            action: a,
            reward: r,
            next_state: s2.to_vec(),
            terminal: false,
        };
        OfflineDataset::new(
            vec![
                Trajectory {
                    id: 0,
                    transitions: vec![
                        tr([0.1, -0.2], 0, 1.5, [0.3, 0.4]),
                        tr([0.3, 0.4], 1, -0.25, [1.0 / 3.0, 2.0f64.sqrt()]),
                    ],
                },
                Trajectory { id: 3, transitions: vec![tr([9.0, 8.0], 1, 0.125, [7.0, 6.0]) ] },
            ],
            config,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let data = sample_dataset();
        let dir = std::env::temp_dir().join("oms-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round_trip.csv");
        write_dataset_csv(&data, &path).unwrap();
        let back = read_dataset_csv(&path, data.config).unwrap();
        assert_eq!(data.trajectories, back.trajectories);

        // Writing the recovered dataset reproduces identical bytes.
        let path2 = dir.join("round_trip2.csv");
        write_dataset_csv(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn header_matches_schema() {
        assert_eq!(
            dataset_header(2),
            "traj_id,t,state_0,state_1,action,reward,terminal,next_state_0,next_state_1"
        );
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = std::env::temp_dir().join("oms-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad_header.csv");
        std::fs::write(&path, "nope\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&path, sample_dataset().config),
            Err(IoError::Parse { .. })
        ));
    }
}
